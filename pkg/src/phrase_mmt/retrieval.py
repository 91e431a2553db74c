"""
Phrase retrieval over the phrase-level image set.

Handles:
- Phrase encoders (seeded static table, or token vectors loaded from file)
- Cosine relevance scores and exact top-K search
- Universal visual representations (relevance-weighted, 1/K-scaled sums)
- Average relevance score diagnostics
- Building, saving and loading the retrieval index
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import CorpusParseError, DomainError, IndexBuildError, RetrievalError
from .grounding import PhraseRegionPair
from .latent_model import LatentModel, infer_reps
from .neural_core import state_fingerprint
from .storage import atomic_write_bytes
from .tokenizer import UNK_TOKEN, Vocab

logger = logging.getLogger(__name__)

INDEX_FORMAT_VERSION = 1
REP_KINDS = ("guided", "raw")
DEFAULT_ENCODER_DIM = 64
FLOAT_DTYPE = np.dtype("<f8")


class TokenTableEncoder:
    """
    Phrase embedding = mean of per-token vectors.

    Tokens missing from the table use the UNK row.
    """

    def __init__(self, tokens: Sequence[str], table: np.ndarray, encoder_id: str):
        if UNK_TOKEN not in tokens:
            raise DomainError(f"encoder table needs an {UNK_TOKEN} row")
        if table.shape[0] != len(tokens):
            raise DomainError(f"encoder table has {table.shape[0]} rows for {len(tokens)} tokens")
        self.rows = {token: i for i, token in enumerate(tokens)}
        self.table = np.asarray(table, dtype=np.float64)
        self.encoder_id = encoder_id

    @property
    def dim(self) -> int:
        return int(self.table.shape[1])

    def encode(self, phrase_tokens: Sequence[str]) -> np.ndarray:
        if not phrase_tokens:
            raise DomainError("cannot encode an empty phrase")
        unk = self.rows[UNK_TOKEN]
        rows = [self.rows.get(token, unk) for token in phrase_tokens]
        return self.table[rows].mean(axis=0)

    def encode_many(self, phrases: Sequence[Sequence[str]]) -> np.ndarray:
        if not phrases:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack([self.encode(p) for p in phrases])


class StaticPhraseEncoder(TokenTableEncoder):
    """Frozen seeded embedding table over a vocabulary."""

    def __init__(self, vocab: Vocab, dim: int = DEFAULT_ENCODER_DIM, seed: int = 0):
        table = np.random.default_rng(seed).normal(0.0, 1.0, size=(len(vocab), dim))
        super().__init__(vocab.itos, table, f"static-d{dim}-s{seed}-{vocab.fingerprint()}")


class PrecomputedPhraseEncoder(TokenTableEncoder):
    """
    Token vectors produced by an external contextual encoder.

    Usage:
        encoder = PrecomputedPhraseEncoder.from_jsonl("token_vectors.jsonl")
    """

    @classmethod
    def from_jsonl(cls, path: Path) -> "PrecomputedPhraseEncoder":
        """Load lines of {"token", "vec"}; an <unk> line is required."""
        tokens = []
        vectors = []
        with open(path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                    tokens.append(str(record["token"]))
                    vectors.append([float(x) for x in record["vec"]])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                    raise CorpusParseError(f"malformed token vector in {path}: {e}", line_number) from e
        table = np.array(vectors, dtype=np.float64)
        digest = hashlib.sha256(table.tobytes() + "\n".join(tokens).encode("utf-8")).hexdigest()[:16]
        logger.info(f"Loaded {len(tokens)} token vectors from {path}")
        return cls(tokens, table, f"file-{digest}")


def relevance_scores(query: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """
    Cosine similarity of one query against each row, clipped to [-1, 1].

    Raises:
        DomainError: If the query or any row has zero norm
    """
    query = np.asarray(query, dtype=np.float64)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    query_norm = np.sqrt(np.sum(query * query))
    row_norms = np.sqrt(np.sum(embeddings * embeddings, axis=-1))
    if query_norm == 0.0 or np.any(row_norms == 0.0):
        raise DomainError("relevance is undefined for zero-norm embeddings")
    scores = np.sum(embeddings * query, axis=-1) / (row_norms * query_norm)
    return np.clip(scores, -1.0, 1.0)


def relevance(query: np.ndarray, entry: np.ndarray) -> float:
    """Cosine similarity of two phrase embeddings."""
    return float(relevance_scores(query, np.asarray(entry, dtype=np.float64)[None, :])[0])


@dataclass
class RetrievalIndex:
    """
    Immutable store of phrase/region pairs with cached embeddings and reps.

    Attributes:
        pairs: Entries, in phrase-set order
        embeddings: [N, D_e] phrase embeddings
        reps: [N, H] phrase-guided representations s
        encoder_id: Identity of the phrase encoder
        checkpoint_id: Fingerprint of the latent model that produced reps
        rep_mode: "posterior" or "prior" inference of s
    """
    pairs: list[PhraseRegionPair]
    embeddings: np.ndarray
    reps: np.ndarray
    encoder_id: str
    checkpoint_id: str
    rep_mode: str = "posterior"
    _features: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def features(self) -> np.ndarray:
        """Raw region features [N, D_v]."""
        if self._features is None:
            if not self.pairs:
                self._features = np.zeros((0, 0), dtype=np.float64)
            else:
                self._features = np.array([p.region_feature for p in self.pairs], dtype=np.float64)
        return self._features

    def payload(self, rep_kind: str) -> np.ndarray:
        """Vectors aggregated into u: s ("guided") or raw features ("raw")."""
        if rep_kind == "guided":
            return self.reps
        if rep_kind == "raw":
            return self.features
        raise RetrievalError(f"rep_kind must be one of {REP_KINDS}, got {rep_kind!r}")

    def rep_dim(self, rep_kind: str = "guided") -> int:
        return int(self.payload(rep_kind).shape[1])


@dataclass
class RetrievalResult:
    """Retrieved entries, best first (ties broken by entry index)."""
    indices: np.ndarray
    scores: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


def topk(
    query: np.ndarray,
    k: int,
    index: RetrievalIndex,
    exclude_source_id: Optional[str] = None,
) -> RetrievalResult:
    """
    Exact K best entries by relevance (exhaustive scan).

    Args:
        query: Query phrase embedding
        k: Number of entries, >= 1
        index: Retrieval index
        exclude_source_id: Skip entries built from this sentence

    Returns:
        min(K, eligible entries) results, scores descending, index ascending on ties

    Raises:
        RetrievalError: On an empty index, K < 1, or nothing eligible
    """
    if len(index) == 0:
        raise RetrievalError("cannot query an empty index")
    if k < 1:
        raise RetrievalError(f"K must be >= 1, got {k}")

    scores = relevance_scores(query, index.embeddings)
    candidates = np.arange(len(index))
    if exclude_source_id is not None:
        keep = np.array([p.source_id != exclude_source_id for p in index.pairs], dtype=bool)
        candidates = candidates[keep]
        if len(candidates) == 0:
            raise RetrievalError(f"every entry comes from {exclude_source_id}")

    if k > len(candidates):
        logger.warning(f"K={k} exceeds the {len(candidates)} eligible entries; returning all")
        k = len(candidates)

    candidate_scores = scores[candidates]
    order = np.lexsort((candidates, -candidate_scores))[:k]
    return RetrievalResult(indices=candidates[order], scores=candidate_scores[order])


def aggregate(result: RetrievalResult, payload: np.ndarray, k: int) -> np.ndarray:
    """
    u = (1/K) * sum_k RS_k * payload_k over the retrieved entries.

    K is the requested K. When fewer entries were eligible the sum still
    scales by 1/K.
    """
    if k < 1:
        raise RetrievalError(f"K must be >= 1, got {k}")
    u = np.zeros(payload.shape[1], dtype=np.float64)
    for entry, score in zip(result.indices, result.scores):
        u += score * payload[entry]
    return u / k


def universal_rep(
    query: np.ndarray,
    k: int,
    index: RetrievalIndex,
    rep_kind: str = "guided",
    exclude_source_id: Optional[str] = None,
) -> np.ndarray:
    """Universal visual representation of a query phrase embedding."""
    return aggregate(topk(query, k, index, exclude_source_id), index.payload(rep_kind), k)


def ars_curve(
    phrases: Sequence[Sequence[str]],
    index: RetrievalIndex,
    encoder: TokenTableEncoder,
    k_max: int,
) -> list[float]:
    """
    ARS(k) for k = 1..k_max: mean relevance of the k-th retrieved entry.

    Raises:
        DomainError: If phrases is empty
        RetrievalError: If k_max exceeds the index size
    """
    if not phrases:
        raise DomainError("ARS needs at least one query phrase")
    if k_max > len(index):
        raise RetrievalError(f"k={k_max} exceeds index size {len(index)}")
    totals = np.zeros(k_max, dtype=np.float64)
    for phrase in phrases:
        totals += topk(encoder.encode(phrase), k_max, index).scores
    return (totals / len(phrases)).tolist()


def ars(phrases: Sequence[Sequence[str]], index: RetrievalIndex, encoder: TokenTableEncoder, k: int) -> float:
    """Average relevance score of the k-th retrieved entry over a phrase set."""
    return ars_curve(phrases, index, encoder, k)[k - 1]


def checkpoint_fingerprint(model: LatentModel) -> str:
    return state_fingerprint(model.state_dict())


def build_index(
    pairs: Sequence[PhraseRegionPair],
    encoder: TokenTableEncoder,
    model: LatentModel,
    vocab: Vocab,
    rep_mode: str = "posterior",
    expected_encoder_id: Optional[str] = None,
    expected_checkpoint_id: Optional[str] = None,
) -> RetrievalIndex:
    """
    Precompute phrase embeddings and s for every pair.

    Raises:
        IndexBuildError: If the encoder or checkpoint differs from the expected
            ids, or region features do not fit the latent model
    """
    checkpoint_id = checkpoint_fingerprint(model)
    if expected_encoder_id is not None and expected_encoder_id != encoder.encoder_id:
        raise IndexBuildError(f"encoder {encoder.encoder_id} != expected {expected_encoder_id}")
    if expected_checkpoint_id is not None and expected_checkpoint_id != checkpoint_id:
        raise IndexBuildError(f"checkpoint {checkpoint_id} != expected {expected_checkpoint_id}")

    for pair in pairs:
        if len(pair.region_feature) != model.cfg.feature_dim:
            raise IndexBuildError(
                f"{pair.source_id}: feature dim {len(pair.region_feature)} != model feature_dim {model.cfg.feature_dim}"
            )

    pairs = list(pairs)
    embeddings = encoder.encode_many([p.phrase_tokens for p in pairs])
    reps = infer_reps(model, pairs, vocab, rep_mode)
    index = RetrievalIndex(pairs, embeddings, reps, encoder.encoder_id, checkpoint_id, rep_mode)
    logger.info(f"Built index: {len(pairs)} entries, encoder {encoder.encoder_id}, checkpoint {checkpoint_id}")
    return index


def save_index(index: RetrievalIndex, path: Path) -> Path:
    """
    Write the index file.

    Layout: one JSON header line, the little-endian float64 embedding and
    rep arrays, then one JSON metadata line per entry.
    """
    embeddings = np.ascontiguousarray(index.embeddings, dtype=FLOAT_DTYPE)
    reps = np.ascontiguousarray(index.reps, dtype=FLOAT_DTYPE)
    header = {
        "format_version": INDEX_FORMAT_VERSION,
        "count": len(index),
        "embedding_dim": int(embeddings.shape[1]) if embeddings.ndim == 2 else 0,
        "rep_dim": int(reps.shape[1]) if reps.ndim == 2 else 0,
        "encoder_id": index.encoder_id,
        "checkpoint_id": index.checkpoint_id,
        "rep_mode": index.rep_mode,
        "embeddings_bytes": embeddings.nbytes,
        "reps_bytes": reps.nbytes,
    }
    metadata = "".join(
        json.dumps({
            "phrase": list(p.phrase_tokens),
            "head": p.head_token,
            "feat": list(p.region_feature),
            "source_id": p.source_id,
        }, sort_keys=True) + "\n"
        for p in index.pairs
    )
    content = (
        json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
        + embeddings.tobytes() + reps.tobytes()
        + metadata.encode("utf-8")
    )
    path = Path(path)
    atomic_write_bytes(path, content)
    logger.info(f"Saved index ({len(index)} entries) to {path}")
    return path


def load_index(path: Path) -> RetrievalIndex:
    """Read an index file written by save_index."""
    with open(path, "rb") as f:
        content = f.read()

    newline = content.index(b"\n")
    header = json.loads(content[:newline].decode("utf-8"))
    if header.get("format_version") != INDEX_FORMAT_VERSION:
        raise IndexBuildError(f"unsupported index format {header.get('format_version')!r} in {path}")

    offset = newline + 1
    count = header["count"]
    emb_end = offset + header["embeddings_bytes"]
    reps_end = emb_end + header["reps_bytes"]
    embeddings = np.frombuffer(content[offset:emb_end], dtype=FLOAT_DTYPE).reshape(count, header["embedding_dim"])
    reps = np.frombuffer(content[emb_end:reps_end], dtype=FLOAT_DTYPE).reshape(count, header["rep_dim"])

    pairs = []
    for line in content[reps_end:].decode("utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        pairs.append(PhraseRegionPair(
            phrase_tokens=tuple(record["phrase"]),
            region_feature=tuple(float(x) for x in record["feat"]),
            head_token=record["head"],
            source_id=record["source_id"],
        ))
    if len(pairs) != count:
        raise IndexBuildError(f"{path}: header says {count} entries, found {len(pairs)}")

    logger.info(f"Loaded index ({count} entries) from {path}")
    return RetrievalIndex(
        pairs=pairs,
        embeddings=embeddings.astype(np.float64),
        reps=reps.astype(np.float64),
        encoder_id=header["encoder_id"],
        checkpoint_id=header["checkpoint_id"],
        rep_mode=header["rep_mode"],
    )


class PhraseRetriever:
    """
    Phrase -> universal visual representation, with a cache.

    This is the retrieval function the translator consumes. It never
    touches the latent model or the index contents.

    Usage:
        retriever = PhraseRetriever(index, encoder, k=5)
        u = retriever(["a", "black", "car"])
    """

    def __init__(
        self,
        index: RetrievalIndex,
        encoder: TokenTableEncoder,
        k: int = 5,
        rep_kind: str = "guided",
        exclude_same_source: bool = False,
    ):
        if rep_kind not in REP_KINDS:
            raise RetrievalError(f"rep_kind must be one of {REP_KINDS}, got {rep_kind!r}")
        if index.encoder_id != encoder.encoder_id:
            raise IndexBuildError(f"index encoder {index.encoder_id} != retriever encoder {encoder.encoder_id}")
        self.index = index
        self.encoder = encoder
        self.k = k
        self.rep_kind = rep_kind
        self.exclude_same_source = exclude_same_source
        self._cache: dict[tuple, np.ndarray] = {}

    @property
    def rep_dim(self) -> int:
        return self.index.rep_dim(self.rep_kind)

    def __call__(self, phrase_tokens: Sequence[str], source_id: Optional[str] = None) -> np.ndarray:
        exclude = source_id if self.exclude_same_source else None
        key = (tuple(phrase_tokens), exclude)
        if key not in self._cache:
            query = self.encoder.encode(phrase_tokens)
            self._cache[key] = universal_rep(query, self.k, self.index, self.rep_kind, exclude)
        return self._cache[key]
