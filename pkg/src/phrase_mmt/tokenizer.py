"""
Word-level tokenizer and shared source/target vocabulary.

Tokenization rule:
- Lowercase the text
- Words are runs of letters/digits/underscore
- Every other non-space character is its own token ("car." -> "car", ".")

Reserved ids are fixed:
    0 <pad>   1 <s>   2 </s>   3 <unk>   4 <mask>
"""

import hashlib
import json
import logging
import re
from collections import Counter
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from .errors import DomainError
from .storage import atomic_write_text

logger = logging.getLogger(__name__)

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
MASK_ID = 4

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<s>"
EOS_TOKEN = "</s>"
UNK_TOKEN = "<unk>"
MASK_TOKEN = "<mask>"

RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, MASK_TOKEN)

# Words, or single punctuation characters
TOKEN_PATTERN = re.compile(r"\w+|[^\w\s]")

# Punctuation glued to the preceding word on output
CLOSING_PUNCTUATION = frozenset(".,!?;:)")


def tokenize(text: str) -> list[str]:
    """
    Split text into lowercase word and punctuation tokens.

    Examples:
        "A black car." -> ["a", "black", "car", "."]
        "" -> []
    """
    if not text:
        return []
    return TOKEN_PATTERN.findall(text.lower())


def detokenize(tokens: Sequence[str]) -> str:
    """Join tokens with spaces, attaching closing punctuation to the previous word."""
    out: list[str] = []
    for token in tokens:
        if out and token in CLOSING_PUNCTUATION:
            out[-1] += token
        else:
            out.append(token)
    return " ".join(out)


def count_tokens(corpus: Iterable[Sequence[str]]) -> Counter:
    """Token frequencies over a corpus of token sequences, reserved tokens excluded."""
    counts: Counter = Counter()
    for tokens in corpus:
        counts.update(t for t in tokens if t not in RESERVED_TOKENS)
    return counts


class Vocab:
    """
    Bijective token <-> id table with fixed reserved ids.

    Usage:
        vocab = build_vocab(sources + targets, min_freq=1)
        ids = vocab.encode(["a", "black", "car"], add_eos=True)
        tokens = vocab.decode(ids)
    """

    def __init__(self, tokens: Iterable[str]):
        """
        Args:
            tokens: Non-reserved tokens in id order (ids start after the reserved block)
        """
        self.itos: list[str] = list(RESERVED_TOKENS)
        for token in tokens:
            if token in RESERVED_TOKENS:
                raise DomainError(f"token {token!r} is reserved")
            self.itos.append(token)
        self.stoi: dict[str, int] = {token: i for i, token in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DomainError("vocabulary tokens must be unique")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    @property
    def tokens(self) -> list[str]:
        """Non-reserved tokens in id order."""
        return self.itos[len(RESERVED_TOKENS):]

    def token_to_id(self, token: str) -> int:
        return self.stoi.get(token, UNK_ID)

    def id_to_token(self, index: int) -> str:
        return self.itos[index]

    def encode(self, tokens: Sequence[str], add_bos: bool = False, add_eos: bool = False) -> list[int]:
        ids = [self.token_to_id(t) for t in tokens]
        if add_bos:
            ids.insert(0, BOS_ID)
        if add_eos:
            ids.append(EOS_ID)
        return ids

    def decode(self, ids: Iterable[int], strip_special: bool = True) -> list[str]:
        """
        Map ids back to tokens.

        With strip_special, decoding stops at EOS and PAD/BOS are dropped.
        """
        out = []
        for index in ids:
            index = int(index)
            if strip_special:
                if index == EOS_ID:
                    break
                if index in (PAD_ID, BOS_ID):
                    continue
            out.append(self.itos[index])
        return out

    def fingerprint(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()[:16]

    def to_dict(self) -> dict[str, Any]:
        return {"reserved": list(RESERVED_TOKENS), "tokens": self.tokens}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Vocab":
        if list(data.get("reserved", RESERVED_TOKENS)) != list(RESERVED_TOKENS):
            raise DomainError("vocabulary was saved with a different reserved block")
        return cls(data["tokens"])

    def save(self, path: Path) -> None:
        atomic_write_text(Path(path), json.dumps(self.to_dict(), indent=2))
        logger.info(f"Saved vocabulary ({len(self)} entries) to {path}")

    @classmethod
    def load(cls, path: Path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def build_vocab(corpus: Iterable[Sequence[str]], min_freq: int = 1, counts: Optional[Counter] = None) -> Vocab:
    """
    Build a vocabulary shared across source and target.

    Tokens with frequency >= min_freq get ids, ordered by descending
    frequency then alphabetically. Everything else encodes to UNK.

    Args:
        corpus: Token sequences (pass sources and targets together)
        min_freq: Minimum frequency to keep a token
        counts: Precomputed frequencies (skips counting corpus)

    Raises:
        DomainError: If the corpus is empty
    """
    if counts is None:
        sequences = list(corpus)
        if not sequences:
            raise DomainError("cannot build a vocabulary from an empty corpus")
        counts = count_tokens(sequences)

    kept = sorted(
        (token for token, freq in counts.items() if freq >= min_freq),
        key=lambda token: (-counts[token], token),
    )
    vocab = Vocab(kept)
    logger.info(f"Built vocabulary: {len(kept)} of {len(counts)} token types kept (min_freq={min_freq})")
    return vocab
