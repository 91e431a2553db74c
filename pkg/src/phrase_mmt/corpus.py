"""
Sentence-image corpus records and the synthetic grounded world.

Handles:
- Immutable corpus records (sentence pair + region annotations)
- Synthetic corpus generation (templated sentences, signal + noise features)
- Source degradation (masking visually grounded tokens)
- Deterministic train/valid/test splits
- JSONL persistence
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np

from .errors import ConfigError, CorpusParseError, DomainError
from .lexicon import DETERMINERS, HEAD_NOUNS, MODIFIERS, PREPOSITIONS, SENTENCE_END, VERBS, translate_tokens
from .storage import atomic_write_text
from .tokenizer import MASK_TOKEN

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RegionAnnotation:
    """
    One grounded image region.

    Attributes:
        span_start: First source token covered by the phrase describing the region
        span_len: Number of covered tokens (>= 1)
        feature: Region feature vector
        label: Generator metadata "<modifier> <head>" (None for external data)
    """
    span_start: int
    span_len: int
    feature: tuple[float, ...]
    label: Optional[str] = None

    def __post_init__(self):
        if self.span_len < 1:
            raise DomainError(f"region span_len must be >= 1, got {self.span_len}")
        if self.span_start < 0:
            raise DomainError(f"region span_start must be >= 0, got {self.span_start}")

    @property
    def span_end(self) -> int:
        return self.span_start + self.span_len

    def feature_array(self) -> np.ndarray:
        return np.asarray(self.feature, dtype=np.float64)


@dataclass(frozen=True)
class SentenceImagePair:
    """A source sentence, its translation, and the regions of the paired image."""
    id: str
    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    regions: tuple[RegionAnnotation, ...] = ()

    def __post_init__(self):
        if not self.source_tokens:
            raise DomainError(f"{self.id}: empty source")
        if not self.target_tokens:
            raise DomainError(f"{self.id}: empty target")
        for region in self.regions:
            if region.span_end > len(self.source_tokens):
                raise DomainError(
                    f"{self.id}: region span ({region.span_start}, {region.span_len}) "
                    f"exceeds source length {len(self.source_tokens)}"
                )


@dataclass(frozen=True)
class SynthConfig:
    """Configuration of the synthetic grounded world."""
    head_classes: int = 8
    modifier_classes: int = 6
    signal_dim: int = 16
    noise_dim: int = 48
    noise_sigma: float = 0.5
    sentences: int = 3000
    seed: int = 7

    @property
    def feature_dim(self) -> int:
        return self.signal_dim + self.noise_dim

    def validate(self) -> None:
        """Raise ConfigError if the configuration cannot generate a corpus."""
        if not 2 <= self.head_classes <= len(HEAD_NOUNS):
            raise ConfigError(f"head_classes must be in [2, {len(HEAD_NOUNS)}], got {self.head_classes}")
        if not 1 <= self.modifier_classes <= len(MODIFIERS):
            raise ConfigError(f"modifier_classes must be in [1, {len(MODIFIERS)}], got {self.modifier_classes}")
        if self.signal_dim < self.head_classes + self.modifier_classes:
            raise ConfigError(
                f"signal_dim {self.signal_dim} < head_classes + modifier_classes "
                f"({self.head_classes + self.modifier_classes})"
            )
        if self.noise_dim < 0:
            raise ConfigError(f"noise_dim must be >= 0, got {self.noise_dim}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.sentences < 0:
            raise ConfigError(f"sentences must be >= 0, got {self.sentences}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


@dataclass
class CorpusSplit:
    """Train/valid/test partition of a corpus."""
    train: list[SentenceImagePair] = field(default_factory=list)
    valid: list[SentenceImagePair] = field(default_factory=list)
    test: list[SentenceImagePair] = field(default_factory=list)


def entity_signal(head_index: int, modifier_index: int, cfg: SynthConfig) -> np.ndarray:
    """Unit-norm signal block shared by every entity with this (head, modifier)."""
    signal = np.zeros(cfg.signal_dim, dtype=np.float64)
    signal[head_index] = 1.0
    signal[cfg.head_classes + modifier_index] = 1.0
    return signal / math.sqrt(2.0)


def gen_synthetic(cfg: SynthConfig) -> list[SentenceImagePair]:
    """
    Generate a synthetic grounded corpus.

    Sentence template: "det mod head verb prep det mod head ."
    Each entity "det mod head" is one region whose feature is
    [signal(head, mod)] + [noise ~ N(0, noise_sigma^2)].
    Targets come from the bilingual lexicon with head/modifier swapped.

    Args:
        cfg: Generator configuration

    Returns:
        List of sentence-image pairs (pure function of cfg)
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    heads = HEAD_NOUNS[:cfg.head_classes]
    modifiers = MODIFIERS[:cfg.modifier_classes]

    corpus = []
    for i in range(cfg.sentences):
        source: list[str] = []
        regions = []
        for slot in range(2):
            det = DETERMINERS[int(rng.integers(len(DETERMINERS)))]
            mod_index = int(rng.integers(len(modifiers)))
            head_index = int(rng.integers(len(heads)))
            noise = rng.normal(0.0, cfg.noise_sigma, cfg.noise_dim)
            feature = np.concatenate([entity_signal(head_index, mod_index, cfg), noise])

            regions.append(RegionAnnotation(
                span_start=len(source),
                span_len=3,
                feature=tuple(float(x) for x in feature),
                label=f"{modifiers[mod_index]} {heads[head_index]}",
            ))
            source.extend([det, modifiers[mod_index], heads[head_index]])
            if slot == 0:
                source.append(VERBS[int(rng.integers(len(VERBS)))])
                source.append(PREPOSITIONS[int(rng.integers(len(PREPOSITIONS)))])
        source.append(SENTENCE_END)

        corpus.append(SentenceImagePair(
            id=f"synth-{cfg.seed}-{i:06d}",
            source_tokens=tuple(source),
            target_tokens=tuple(translate_tokens(source)),
            regions=tuple(regions),
        ))

    logger.info(
        f"Generated {len(corpus)} synthetic pairs "
        f"(heads={cfg.head_classes}, modifiers={cfg.modifier_classes}, D_v={cfg.feature_dim}, seed={cfg.seed})"
    )
    return corpus


def mask_visual_tokens(pair: SentenceImagePair) -> SentenceImagePair:
    """Replace every source token inside a region span with the mask token."""
    if not pair.regions:
        return pair
    covered = _covered_positions(pair)
    masked = tuple(MASK_TOKEN if i in covered else t for i, t in enumerate(pair.source_tokens))
    return replace(pair, source_tokens=masked)


def _covered_positions(pair: SentenceImagePair) -> set[int]:
    covered: set[int] = set()
    for region in pair.regions:
        covered.update(range(region.span_start, region.span_end))
    return covered


def masked_fraction(corpus: Sequence[SentenceImagePair]) -> float:
    """Share of source tokens that mask_visual_tokens would replace."""
    total = sum(len(pair.source_tokens) for pair in corpus)
    if total == 0:
        return 0.0
    covered = sum(len(_covered_positions(pair)) for pair in corpus)
    return covered / total


def split_corpus(
    corpus: Sequence[SentenceImagePair],
    valid_fraction: float = 0.1,
    test_fraction: float = 0.1,
    seed: int = 0,
) -> CorpusSplit:
    """
    Deterministic random split; records keep corpus order within each part.

    Raises:
        ConfigError: If the fractions are negative or sum to 1 or more
    """
    if valid_fraction < 0 or test_fraction < 0 or valid_fraction + test_fraction >= 1.0:
        raise ConfigError(f"invalid split fractions valid={valid_fraction}, test={test_fraction}")

    n = len(corpus)
    order = np.random.default_rng(seed).permutation(n)
    n_test = int(round(n * test_fraction))
    n_valid = int(round(n * valid_fraction))
    test_idx = sorted(order[:n_test].tolist())
    valid_idx = sorted(order[n_test:n_test + n_valid].tolist())
    train_idx = sorted(order[n_test + n_valid:].tolist())

    split = CorpusSplit(
        train=[corpus[i] for i in train_idx],
        valid=[corpus[i] for i in valid_idx],
        test=[corpus[i] for i in test_idx],
    )
    logger.info(f"Split {n} pairs into train={len(split.train)} valid={len(split.valid)} test={len(split.test)}")
    return split


def pair_to_record(pair: SentenceImagePair) -> dict[str, Any]:
    regions = []
    for region in pair.regions:
        record = {"start": region.span_start, "len": region.span_len, "feat": list(region.feature)}
        if region.label is not None:
            record["label"] = region.label
        regions.append(record)
    return {"id": pair.id, "src": list(pair.source_tokens), "tgt": list(pair.target_tokens), "regions": regions}


def record_to_pair(record: dict[str, Any]) -> SentenceImagePair:
    """Build a pair from a decoded JSON record (KeyError/TypeError/DomainError on bad input)."""
    regions = tuple(
        RegionAnnotation(
            span_start=int(r["start"]),
            span_len=int(r["len"]),
            feature=tuple(float(x) for x in r["feat"]),
            label=r.get("label"),
        )
        for r in record.get("regions", [])
    )
    return SentenceImagePair(
        id=str(record["id"]),
        source_tokens=tuple(str(t) for t in record["src"]),
        target_tokens=tuple(str(t) for t in record["tgt"]),
        regions=regions,
    )


def save_corpus(corpus: Sequence[SentenceImagePair], path: Path) -> None:
    """Write one JSON object per line."""
    lines = [json.dumps(pair_to_record(pair), ensure_ascii=False) for pair in corpus]
    atomic_write_text(Path(path), "\n".join(lines))
    logger.info(f"Saved {len(lines)} pairs to {path}")


def load_corpus(path: Path) -> list[SentenceImagePair]:
    """
    Read a corpus JSONL file. Blank lines are skipped.

    Raises:
        CorpusParseError: On a malformed record, with its 1-based line number
    """
    corpus = []
    feature_dim: Optional[int] = None
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise TypeError("record is not a JSON object")
                pair = record_to_pair(record)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise CorpusParseError(f"malformed record in {path}: {e}", line_number) from e

            for region in pair.regions:
                if feature_dim is None:
                    feature_dim = len(region.feature)
                elif len(region.feature) != feature_dim:
                    raise CorpusParseError(
                        f"feature dimension {len(region.feature)} != {feature_dim} in {path}", line_number
                    )
            corpus.append(pair)

    logger.info(f"Loaded {len(corpus)} pairs from {path}")
    return corpus
