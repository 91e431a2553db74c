"""
Noun-phrase chunking, grounding and the phrase-level image set.

Handles:
- Rule-based chunking (DET? ADJ* NOUN+ over the closed POS lexicon)
- Precomputed phrase spans and region groundings for external data
- Building, saving and loading the <noun phrase, region feature> store
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol, Sequence

from .corpus import SentenceImagePair
from .errors import ConfigError, CorpusParseError, DomainError, GroundingError
from .lexicon import ADJ, DET, NOUN, get_pos_lexicon
from .storage import atomic_write_text

logger = logging.getLogger(__name__)

GROUNDING_POLICIES = ("skip", "fail")


@dataclass(frozen=True)
class PhraseSpan:
    """Contiguous token span [start, start + length)."""
    start: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise DomainError(f"phrase span length must be >= 1, got {self.length}")

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass(frozen=True)
class PhraseRegionPair:
    """One entry of the phrase-level image set."""
    phrase_tokens: tuple[str, ...]
    region_feature: tuple[float, ...]
    head_token: str
    source_id: str

    def __post_init__(self):
        if not self.phrase_tokens:
            raise DomainError(f"{self.source_id}: empty phrase")


def chunk_noun_phrases(tokens: Sequence[str], pos_lexicon: Optional[dict[str, str]] = None) -> list[PhraseSpan]:
    """
    Find noun phrases matching DET? ADJ* NOUN+.

    Left to right, greedy, non-overlapping. Tokens missing from the POS
    lexicon (including the mask token) never match.

    Examples:
        [a, black, car] -> [PhraseSpan(0, 3)]
        [a, person, stands, near, a, black, car] -> [PhraseSpan(0, 2), PhraseSpan(4, 3)]
    """
    pos = pos_lexicon if pos_lexicon is not None else get_pos_lexicon()
    tags = [pos.get(t) for t in tokens]
    n = len(tags)

    spans = []
    i = 0
    while i < n:
        j = i
        if tags[j] == DET:
            j += 1
        while j < n and tags[j] == ADJ:
            j += 1
        k = j
        while k < n and tags[k] == NOUN:
            k += 1

        if k > j:
            spans.append(PhraseSpan(i, k - i))
            i = k
        else:
            i += 1
    return spans


def head_of(phrase_tokens: Sequence[str], pos_lexicon: Optional[dict[str, str]] = None) -> str:
    """
    Final noun of a phrase.

    Raises:
        DomainError: If the phrase has no noun
    """
    pos = pos_lexicon if pos_lexicon is not None else get_pos_lexicon()
    for token in reversed(phrase_tokens):
        if pos.get(token) == NOUN:
            return token
    raise DomainError(f"no noun in phrase {list(phrase_tokens)}")


class PhraseChunker(Protocol):
    """Source of noun-phrase spans for a sentence."""

    def chunk(self, pair: SentenceImagePair) -> list[PhraseSpan]:
        ...

    def head(self, phrase_tokens: Sequence[str]) -> str:
        ...


class LexiconChunker:
    """Rule-based chunker over the closed POS lexicon."""

    def __init__(self, pos_lexicon: Optional[dict[str, str]] = None):
        self.pos_lexicon = pos_lexicon if pos_lexicon is not None else get_pos_lexicon()

    def chunk(self, pair: SentenceImagePair) -> list[PhraseSpan]:
        return chunk_noun_phrases(pair.source_tokens, self.pos_lexicon)

    def head(self, phrase_tokens: Sequence[str]) -> str:
        return head_of(phrase_tokens, self.pos_lexicon)


class RegionSpanChunker:
    """
    Uses the region spans already annotated on each pair as the phrases.

    For external data whose phrases were chunked upstream. The head is the
    final noun when the lexicon knows one, else the final token.
    """

    def __init__(self, pos_lexicon: Optional[dict[str, str]] = None):
        self.pos_lexicon = pos_lexicon if pos_lexicon is not None else get_pos_lexicon()

    def chunk(self, pair: SentenceImagePair) -> list[PhraseSpan]:
        spans = sorted({(r.span_start, r.span_len) for r in pair.regions})
        result = []
        last_end = 0
        for start, length in spans:
            if start < last_end:
                logger.debug(f"{pair.id}: dropping overlapping span ({start}, {length})")
                continue
            result.append(PhraseSpan(start, length))
            last_end = start + length
        return result

    def head(self, phrase_tokens: Sequence[str]) -> str:
        try:
            return head_of(phrase_tokens, self.pos_lexicon)
        except DomainError:
            return phrase_tokens[-1]


class GroundingProvider(Protocol):
    """Resolves a phrase span to the feature of its image region."""

    def ground(self, pair: SentenceImagePair, span: PhraseSpan) -> Optional[tuple[float, ...]]:
        ...


class SpanMatchGrounding:
    """A phrase grounds to the region whose span equals the phrase span exactly."""

    def ground(self, pair: SentenceImagePair, span: PhraseSpan) -> Optional[tuple[float, ...]]:
        for region in pair.regions:
            if region.span_start == span.start and region.span_len == span.length:
                return region.feature
        return None


class PrecomputedGrounding:
    """
    Groundings produced by an external toolkit.

    Usage:
        grounding = PrecomputedGrounding.from_jsonl("groundings.jsonl")
    """

    def __init__(self, table: dict[tuple[str, int, int], tuple[float, ...]]):
        self.table = table

    @classmethod
    def from_jsonl(cls, path: Path) -> "PrecomputedGrounding":
        """Load lines of {"source_id", "start", "len", "feat"}."""
        table = {}
        with open(path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    key = (str(record["source_id"]), int(record["start"]), int(record["len"]))
                    table[key] = tuple(float(x) for x in record["feat"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise CorpusParseError(f"malformed grounding in {path}: {e}", line_number) from e
        logger.info(f"Loaded {len(table)} precomputed groundings from {path}")
        return cls(table)

    def ground(self, pair: SentenceImagePair, span: PhraseSpan) -> Optional[tuple[float, ...]]:
        return self.table.get((pair.id, span.start, span.length))


@dataclass
class PhraseSetConfig:
    """Configuration for building the phrase-level image set."""
    policy: str = "skip"  # skip | fail on phrases with no groundable region


@dataclass
class PhraseSetResult:
    """Result of a phrase-set build."""
    pairs: list[PhraseRegionPair] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


def extract_phrases(pair: SentenceImagePair, chunker: PhraseChunker) -> list[tuple[PhraseSpan, tuple[str, ...]]]:
    """Chunked spans of a sentence with their tokens."""
    return [(span, tuple(pair.source_tokens[span.start:span.end])) for span in chunker.chunk(pair)]


class PhraseSetBuilder:
    """
    Builds the phrase-level image set from a sentence-image corpus.

    Usage:
        builder = PhraseSetBuilder()
        result = builder.build(corpus)
        print(result.stats)
    """

    def __init__(
        self,
        chunker: Optional[PhraseChunker] = None,
        grounding: Optional[GroundingProvider] = None,
        config: Optional[PhraseSetConfig] = None,
    ):
        self.chunker = chunker or LexiconChunker()
        self.grounding = grounding or SpanMatchGrounding()
        self.config = config or PhraseSetConfig()
        if self.config.policy not in GROUNDING_POLICIES:
            raise ConfigError(f"grounding policy must be one of {GROUNDING_POLICIES}, got {self.config.policy!r}")

    def build(self, corpus: Sequence[SentenceImagePair]) -> PhraseSetResult:
        """
        Chunk every sentence and ground every phrase, in corpus order.

        Raises:
            GroundingError: Under the "fail" policy, on the first ungroundable phrase,
                or when feature dimensions disagree
        """
        result = PhraseSetResult()
        phrases_found = 0
        skipped = 0
        feature_dim: Optional[int] = None

        for pair in corpus:
            for span, tokens in extract_phrases(pair, self.chunker):
                phrases_found += 1
                feature = self.grounding.ground(pair, span)
                if feature is None:
                    if self.config.policy == "fail":
                        raise GroundingError(
                            f"{pair.id}: phrase {' '.join(tokens)!r} at ({span.start}, {span.length}) has no region"
                        )
                    skipped += 1
                    logger.debug(f"{pair.id}: skipping ungrounded phrase {' '.join(tokens)!r}")
                    continue

                if feature_dim is None:
                    feature_dim = len(feature)
                elif len(feature) != feature_dim:
                    raise GroundingError(f"{pair.id}: feature dimension {len(feature)} != {feature_dim}")

                result.pairs.append(PhraseRegionPair(
                    phrase_tokens=tokens,
                    region_feature=tuple(feature),
                    head_token=self.chunker.head(tokens),
                    source_id=pair.id,
                ))

        result.stats = {
            "sentences": len(corpus),
            "phrases_found": phrases_found,
            "grounded": len(result.pairs),
            "skipped": skipped,
        }
        logger.info(
            f"Phrase set: {result.stats['grounded']} pairs from {result.stats['sentences']} sentences "
            f"({phrases_found} phrases found, {skipped} skipped)"
        )
        return result


def build_phrase_image_set(
    corpus: Sequence[SentenceImagePair],
    chunker: Optional[PhraseChunker] = None,
    grounding: Optional[GroundingProvider] = None,
    policy: str = "skip",
) -> list[PhraseRegionPair]:
    """Convenience wrapper around PhraseSetBuilder returning only the pairs."""
    builder = PhraseSetBuilder(chunker, grounding, PhraseSetConfig(policy=policy))
    return builder.build(corpus).pairs


def save_phrase_set(pairs: Sequence[PhraseRegionPair], path: Path) -> None:
    """Write {"phrase", "head", "feat", "source_id"} per line."""
    lines = [
        json.dumps({
            "phrase": list(p.phrase_tokens),
            "head": p.head_token,
            "feat": list(p.region_feature),
            "source_id": p.source_id,
        }, ensure_ascii=False)
        for p in pairs
    ]
    atomic_write_text(Path(path), "\n".join(lines))
    logger.info(f"Saved {len(lines)} phrase/region pairs to {path}")


def load_phrase_set(path: Path) -> list[PhraseRegionPair]:
    """
    Read a phrase-set JSONL file.

    Raises:
        CorpusParseError: On a malformed line, with its line number
    """
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                pairs.append(PhraseRegionPair(
                    phrase_tokens=tuple(str(t) for t in record["phrase"]),
                    region_feature=tuple(float(x) for x in record["feat"]),
                    head_token=str(record["head"]),
                    source_id=str(record["source_id"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorpusParseError(f"malformed phrase pair in {path}: {e}", line_number) from e
    logger.info(f"Loaded {len(pairs)} phrase/region pairs from {path}")
    return pairs
