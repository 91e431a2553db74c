"""
Transformer translator with phrase-level multimodal aggregation.

Handles:
- Post-norm transformer encoder/decoder with shared, tied embeddings
- Phrase-level gated aggregation of universal visual representations
- Attention fusion into the encoder states with a sentence-level gate
- Label-smoothed training with inverse-sqrt warmup and checkpoint averaging
- Greedy and length-normalized beam search decoding
- Checkpoint save/load/averaging
"""

import copy
import logging
import math
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DomainError, ShapeError, TrainingError
from .grounding import PhraseSpan
from .neural_core import (
    AdamOptimizer,
    MultiHeadAttention,
    RngState,
    cross_entropy_label_smoothed,
    init_parameters,
    load_checkpoint,
    save_checkpoint,
)
from .tokenizer import BOS_ID, EOS_ID, MASK_ID, PAD_ID, UNK_ID, Vocab

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = "translation_model"

# Never generated
BANNED_OUTPUT_IDS = (PAD_ID, BOS_ID, UNK_ID, MASK_ID)


@dataclass
class TranslatorConfig:
    """Translator hyperparameters. Defaults are full-scale; see desk_scale()."""
    d_model: int = 512
    ffn_dim: int = 2048
    encoder_layers: int = 6
    decoder_layers: int = 6
    heads: int = 4
    dropout: float = 0.3
    label_smoothing: float = 0.1
    warmup_steps: int = 2000
    peak_lr: float = 5e-4
    epochs: int = 100
    batch_size: int = 128
    average_last: int = 5       # epoch checkpoints averaged at the end
    beam: int = 4
    clip_norm: Optional[float] = None  # None = no clipping
    max_positions: int = 512
    seed: int = 0

    @classmethod
    def desk_scale(cls, **overrides: Any) -> "TranslatorConfig":
        values = {
            "d_model": 64,
            "ffn_dim": 128,
            "encoder_layers": 2,
            "decoder_layers": 2,
            "peak_lr": 2e-3,
            "epochs": 60,
            "batch_size": 32,
            "max_positions": 128,
        }
        values.update(overrides)
        return cls(**values)

    def validate(self) -> None:
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} is not divisible by {self.heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.warmup_steps < 1 or self.batch_size < 1 or self.average_last < 1 or self.beam < 1:
            raise ConfigError("warmup_steps, batch_size, average_last and beam must be >= 1")


@dataclass
class FusionInput:
    """Phrase spans of a source sentence and one universal representation per span."""
    spans: list[PhraseSpan] = field(default_factory=list)
    reps: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        if len(self.spans) != len(self.reps):
            raise ShapeError(f"{len(self.spans)} spans but {len(self.reps)} representations")
        for previous, current in zip(self.spans, self.spans[1:]):
            if current.start < previous.end:
                raise DomainError("fusion spans must be sorted and non-overlapping")


@dataclass
class TranslationExample:
    """Encoded sentence pair ready for batching."""
    source_ids: list[int]
    target_ids: list[int]
    fusion: FusionInput
    source_id: str = ""


@dataclass
class TranslationBatch:
    """
    Padded batch.

    Attributes:
        source: [B, n] source ids
        source_pad: [B, n] True at padding
        decoder_inputs: [B, m] BOS + target
        decoder_targets: [B, m] target + EOS, PAD-padded
        reps: [B, t, rep_dim] universal representations (t may be 0)
        phrase_mask: [B, t] True for real phrases
        span_mask: [B, t, n] 1.0 where source token j lies in phrase i
    """
    source: torch.Tensor
    source_pad: torch.Tensor
    decoder_inputs: torch.Tensor
    decoder_targets: torch.Tensor
    reps: torch.Tensor
    phrase_mask: torch.Tensor
    span_mask: torch.Tensor


class Hypothesis(NamedTuple):
    tokens: list[int]   # generated ids, EOS excluded
    score: float        # mean log-probability per generated token (EOS included)
    truncated: bool     # no EOS within max_len


class FusionParts(NamedTuple):
    fused: torch.Tensor       # S
    attended: torch.Tensor    # S-bar
    gate: torch.Tensor        # lambda


def collate_translation(
    examples: Sequence[TranslationExample],
    rep_dim: int,
    dtype: torch.dtype = torch.float32,
) -> TranslationBatch:
    """Pad a list of examples into one batch."""
    if not examples:
        raise DomainError("cannot collate an empty batch")
    batch = len(examples)
    n_max = max(len(ex.source_ids) for ex in examples)
    m_max = max(len(ex.target_ids) for ex in examples) + 1
    t_max = max(len(ex.fusion.spans) for ex in examples)

    source = torch.full((batch, n_max), PAD_ID, dtype=torch.long)
    decoder_inputs = torch.full((batch, m_max), PAD_ID, dtype=torch.long)
    decoder_targets = torch.full((batch, m_max), PAD_ID, dtype=torch.long)
    reps = torch.zeros((batch, t_max, rep_dim), dtype=dtype)
    phrase_mask = torch.zeros((batch, t_max), dtype=torch.bool)
    span_mask = torch.zeros((batch, t_max, n_max), dtype=dtype)

    for row, ex in enumerate(examples):
        if not ex.source_ids:
            raise DomainError(f"{ex.source_id}: empty source")
        source[row, :len(ex.source_ids)] = torch.tensor(ex.source_ids, dtype=torch.long)
        m = len(ex.target_ids)
        decoder_inputs[row, :m + 1] = torch.tensor([BOS_ID] + ex.target_ids, dtype=torch.long)
        decoder_targets[row, :m + 1] = torch.tensor(ex.target_ids + [EOS_ID], dtype=torch.long)
        for i, span in enumerate(ex.fusion.spans):
            if span.end > len(ex.source_ids):
                raise ShapeError(f"{ex.source_id}: span ({span.start}, {span.length}) outside source")
            reps[row, i] = torch.as_tensor(np.asarray(ex.fusion.reps[i]), dtype=dtype)
            phrase_mask[row, i] = True
            span_mask[row, i, span.start:span.end] = 1.0

    return TranslationBatch(source, source == PAD_ID, decoder_inputs, decoder_targets, reps, phrase_mask, span_mask)


def sinusoidal_positions(max_positions: int, d_model: int) -> torch.Tensor:
    """[max_positions, d_model] sine/cosine position table."""
    position = torch.arange(max_positions, dtype=torch.float64).unsqueeze(1)
    rate = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    table = torch.zeros(max_positions, d_model, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * rate)
    table[:, 1::2] = torch.cos(position * rate)[:, :d_model // 2]
    return table.float()


class FeedForward(nn.Module):
    def __init__(self, d_model: int, ffn_dim: int, dropout: float):
        super().__init__()
        self.inner = nn.Linear(d_model, ffn_dim)
        self.outer = nn.Linear(ffn_dim, d_model)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.outer(self.dropout(F.gelu(self.inner(x))))


class EncoderLayer(nn.Module):
    """Post-norm self-attention + feed-forward block."""

    def __init__(self, cfg: TranslatorConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.feed_forward = FeedForward(cfg.d_model, cfg.ffn_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.self_attn(x, x, x, key_mask)))
        return self.norm2(x + self.dropout(self.feed_forward(x)))


class DecoderLayer(nn.Module):
    """Post-norm masked self-attention, cross-attention and feed-forward block."""

    def __init__(self, cfg: TranslatorConfig):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.heads, cfg.dropout)
        self.feed_forward = FeedForward(cfg.d_model, cfg.ffn_dim, cfg.dropout)
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(
        self,
        y: torch.Tensor,
        memory: torch.Tensor,
        self_mask: torch.Tensor,
        memory_mask: torch.Tensor,
    ) -> torch.Tensor:
        y = self.norm1(y + self.dropout(self.self_attn(y, y, y, self_mask)))
        y = self.norm2(y + self.dropout(self.cross_attn(y, memory, memory, memory_mask)))
        return self.norm3(y + self.dropout(self.feed_forward(y)))


class MultimodalAggregation(nn.Module):
    """
    Injects phrase representations into encoder states.

    Token gate:     o_ij = sigmoid(W1 u_i + W2 h_j)
    Phrase vector:  m_i = LayerNorm(u_i + sum_{j in span i} o_ij * h_j)
    Fusion:         S_bar = MultiHead(H, M, M)
    Sentence gate:  lambda = sigmoid(W3 H + W4 S_bar)
    Output:         S = H + lambda * S_bar
    """

    def __init__(self, d_model: int, heads: int, dropout: float):
        super().__init__()
        self.token_gate_rep = nn.Linear(d_model, d_model, bias=False)     # W1
        self.token_gate_state = nn.Linear(d_model, d_model, bias=False)   # W2
        self.phrase_norm = nn.LayerNorm(d_model)
        self.fusion_attn = MultiHeadAttention(d_model, heads, dropout)
        self.sentence_gate_state = nn.Linear(d_model, d_model, bias=False)  # W3
        self.sentence_gate_fused = nn.Linear(d_model, d_model, bias=False)  # W4
        # Test hook: when set, fuse() returns H unchanged (lambda = 0)
        self.lambda_off = False

    def phrase_aggregate(self, u: torch.Tensor, states: torch.Tensor, span_mask: torch.Tensor) -> torch.Tensor:
        """
        Args:
            u: [B, t, d] phrase representations
            states: [B, n, d] encoder states H
            span_mask: [B, t, n] 1.0 inside each phrase span

        Returns:
            M: [B, t, d]
        """
        gate = torch.sigmoid(
            self.token_gate_rep(u).unsqueeze(2) + self.token_gate_state(states).unsqueeze(1)
        )
        gated = (span_mask.unsqueeze(-1) * gate * states.unsqueeze(1)).sum(dim=2)
        return self.phrase_norm(u + gated)

    def aggregate_span(self, u_i: torch.Tensor, states: torch.Tensor, span: PhraseSpan) -> torch.Tensor:
        """m_i for one phrase: u_i [d], states [n, d]."""
        if span.start < 0 or span.end > states.shape[0]:
            raise ShapeError(f"span ({span.start}, {span.length}) outside {states.shape[0]} states")
        mask = torch.zeros(1, 1, states.shape[0], dtype=states.dtype)
        mask[0, 0, span.start:span.end] = 1.0
        return self.phrase_aggregate(u_i.view(1, 1, -1), states.unsqueeze(0), mask)[0, 0]

    def fuse_parts(self, states: torch.Tensor, phrases: torch.Tensor, phrase_mask: torch.Tensor) -> FusionParts:
        """
        Args:
            states: H, [B, n, d]
            phrases: M, [B, t, d] with t >= 1
            phrase_mask: [B, t] True for real phrases

        Rows without any phrase get S = H exactly.
        """
        has_phrase = phrase_mask.any(dim=-1)
        # Rows with no phrase attend to a dummy key; their output is discarded below
        open_keys = phrase_mask.clone()
        open_keys[:, 0] |= ~has_phrase
        key_mask = (~open_keys)[:, None, None, :]

        attended = self.fusion_attn(states, phrases, phrases, key_mask)
        gate = torch.sigmoid(self.sentence_gate_state(states) + self.sentence_gate_fused(attended))
        fused = torch.where(has_phrase[:, None, None], states + gate * attended, states)
        return FusionParts(fused, attended, gate)

    def fuse(self, states: torch.Tensor, phrases: torch.Tensor, phrase_mask: torch.Tensor) -> torch.Tensor:
        if self.lambda_off or phrases.shape[1] == 0:
            return states
        return self.fuse_parts(states, phrases, phrase_mask).fused


class TranslationModel(nn.Module):
    """
    Transformer encoder/decoder; with use_fusion, the multimodal aggregation
    module sits after the top encoder layer.

    use_fusion=False is the text-only baseline. Shared weights have the same
    parameter names in both variants.
    """

    def __init__(self, cfg: TranslatorConfig, vocab_size: int, rep_dim: int, use_fusion: bool = True):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.rep_dim = rep_dim
        self.use_fusion = use_fusion

        self.embedding = nn.Embedding(vocab_size, cfg.d_model, padding_idx=PAD_ID)
        self.encoder_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.encoder_layers))
        self.decoder_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.decoder_layers))
        self.dropout = nn.Dropout(cfg.dropout)
        self.register_buffer("positions", sinusoidal_positions(cfg.max_positions, cfg.d_model), persistent=False)

        if use_fusion:
            self.rep_proj = nn.Linear(rep_dim, cfg.d_model) if rep_dim != cfg.d_model else None
            self.aggregation = MultimodalAggregation(cfg.d_model, cfg.heads, cfg.dropout)
        else:
            self.rep_proj = None
            self.aggregation = None

        init_parameters(self, cfg.seed)

    def _embed(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.cfg.max_positions:
            raise ShapeError(f"sequence length {ids.shape[1]} exceeds max_positions {self.cfg.max_positions}")
        x = self.embedding(ids) * math.sqrt(self.cfg.d_model)
        return self.dropout(x + self.positions[:ids.shape[1]].to(x.dtype))

    def encode_source(self, source: torch.Tensor, source_pad: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Encoder states H, [B, n, d]."""
        if source.shape[-1] == 0:
            raise DomainError("cannot encode an empty source")
        if source_pad is None:
            source_pad = source == PAD_ID
        key_mask = source_pad[:, None, None, :]
        x = self._embed(source)
        for layer in self.encoder_layers:
            x = layer(x, key_mask)
        return x

    def project_reps(self, reps: torch.Tensor) -> torch.Tensor:
        return self.rep_proj(reps) if self.rep_proj is not None else reps

    def fuse_batch(self, states: torch.Tensor, batch: TranslationBatch) -> torch.Tensor:
        """S from H and the batch's phrase representations (H unchanged without fusion)."""
        if not self.use_fusion or batch.reps.shape[1] == 0 or self.aggregation.lambda_off:
            return states
        u = self.project_reps(batch.reps.to(states.dtype))
        phrases = self.aggregation.phrase_aggregate(u, states, batch.span_mask.to(states.dtype))
        return self.aggregation.fuse(states, phrases, batch.phrase_mask)

    def decode(self, memory: torch.Tensor, source_pad: torch.Tensor, decoder_inputs: torch.Tensor) -> torch.Tensor:
        """Logits [B, m, V] for teacher-forced decoder inputs."""
        length = decoder_inputs.shape[1]
        causal = torch.triu(torch.ones(length, length, dtype=torch.bool), diagonal=1)
        self_mask = causal[None, None, :, :] | (decoder_inputs == PAD_ID)[:, None, None, :]
        memory_mask = source_pad[:, None, None, :]

        y = self._embed(decoder_inputs)
        for layer in self.decoder_layers:
            y = layer(y, memory, self_mask, memory_mask)
        return F.linear(y, self.embedding.weight)

    def forward(self, batch: TranslationBatch) -> torch.Tensor:
        states = self.encode_source(batch.source, batch.source_pad)
        memory = self.fuse_batch(states, batch)
        return self.decode(memory, batch.source_pad, batch.decoder_inputs)


def inverse_sqrt_lr(step: int, warmup: int, peak: float) -> float:
    """Linear warmup to `peak` over `warmup` steps, then peak * sqrt(warmup / step)."""
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    return peak * min(step / warmup, math.sqrt(warmup / step))


def translation_loss(model: TranslationModel, batch: TranslationBatch, smoothing: float) -> torch.Tensor:
    logits = model(batch)
    return cross_entropy_label_smoothed(logits, batch.decoder_targets, smoothing, ignore_index=PAD_ID)


def train_step(
    model: TranslationModel,
    batch: TranslationBatch,
    optimizer: AdamOptimizer,
    step: int,
    cfg: TranslatorConfig,
) -> float:
    """
    One optimizer step. Representations in the batch are fixed inputs, so no
    gradient reaches the latent model or the index.

    Raises:
        TrainingError: On a non-finite loss
    """
    loss = translation_loss(model, batch, cfg.label_smoothing)
    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite translation loss {loss.item()}", step)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step(lr=inverse_sqrt_lr(step, cfg.warmup_steps, cfg.peak_lr))
    return loss.item()


@dataclass
class TranslatorTrainResult:
    """Result of a training run."""
    model: TranslationModel
    log: list[dict] = field(default_factory=list)  # per epoch: epoch, loss, lr
    stats: dict = field(default_factory=dict)


def average_state_dicts(states: Sequence[Mapping[str, torch.Tensor]]) -> dict[str, torch.Tensor]:
    """
    Arithmetic mean of every entry.

    Raises:
        ShapeError: On missing names or shape mismatches, naming the parameter
    """
    if not states:
        raise ShapeError("need at least one checkpoint to average")
    names = list(states[0])
    for other in states[1:]:
        if set(other) != set(names):
            missing = sorted(set(names) ^ set(other))
            raise ShapeError(f"checkpoints disagree on parameter {missing[0]}")

    averaged = {}
    for name in names:
        first = states[0][name]
        total = torch.zeros(first.shape, dtype=torch.float64)
        for state in states:
            if state[name].shape != first.shape:
                raise ShapeError(f"{name}: shape {tuple(state[name].shape)} != {tuple(first.shape)}")
            total += state[name].to(torch.float64)
        averaged[name] = (total / len(states)).to(first.dtype)
    return averaged


def train_translator(
    examples: Sequence[TranslationExample],
    vocab_size: int,
    rep_dim: int,
    cfg: TranslatorConfig,
    use_fusion: bool = True,
) -> TranslatorTrainResult:
    """
    Train over shuffled minibatches; the returned model holds the average of
    the last `average_last` epoch checkpoints.

    Deterministic given cfg.seed.
    """
    cfg.validate()
    if not examples:
        raise DomainError("cannot train on an empty corpus")

    torch.manual_seed(cfg.seed)
    model = TranslationModel(cfg, vocab_size, rep_dim, use_fusion)
    model.train()
    optimizer = AdamOptimizer(model.named_parameters(), lr=cfg.peak_lr, betas=(0.9, 0.98), clip_norm=cfg.clip_norm)
    rng = RngState(cfg.seed)
    snapshots: deque = deque(maxlen=cfg.average_last)

    kind = "fusion" if use_fusion else "text-only"
    logger.info(
        f"Training {kind} translator on {len(examples)} sentences: {cfg.epochs} epochs, batch {cfg.batch_size}, "
        f"d {cfg.d_model}, layers {cfg.encoder_layers}+{cfg.decoder_layers}"
    )

    result = TranslatorTrainResult(model=model)
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(examples)).tolist()
        loss_sum = 0.0
        batches = 0
        for begin in range(0, len(examples), cfg.batch_size):
            step += 1
            batch = collate_translation([examples[i] for i in order[begin:begin + cfg.batch_size]], rep_dim)
            loss = train_step(model, batch, optimizer, step, cfg)
            loss_sum += loss
            batches += 1
            logger.debug(f"step {step}: loss {loss:.4f}")

        snapshots.append(copy.deepcopy(model.state_dict()))
        lr = inverse_sqrt_lr(step, cfg.warmup_steps, cfg.peak_lr)
        result.log.append({"epoch": epoch, "loss": loss_sum / batches, "lr": lr})
        logger.info(f"Translator ({kind}) epoch {epoch}/{cfg.epochs}: loss {loss_sum / batches:.4f} lr {lr:.2e}")

    if snapshots:
        model.load_state_dict(average_state_dicts(list(snapshots)))
    model.eval()
    result.stats = {"sentences": len(examples), "steps": step, "averaged": len(snapshots), "use_fusion": use_fusion}
    return result


def _fused_memory(model: TranslationModel, example: TranslationExample) -> tuple[torch.Tensor, torch.Tensor]:
    dtype = next(model.parameters()).dtype
    batch = collate_translation([example], model.rep_dim, dtype)
    states = model.encode_source(batch.source, batch.source_pad)
    return model.fuse_batch(states, batch), batch.source_pad


def _next_log_probs(
    model: TranslationModel,
    memory: torch.Tensor,
    source_pad: torch.Tensor,
    prefixes: Sequence[Sequence[int]],
) -> torch.Tensor:
    """Log-probabilities of the next token for each prefix, banned ids at -inf."""
    inputs = torch.tensor([[BOS_ID] + list(p) for p in prefixes], dtype=torch.long)
    count = len(prefixes)
    logits = model.decode(memory.expand(count, -1, -1), source_pad.expand(count, -1), inputs)[:, -1]
    log_probs = F.log_softmax(logits.to(torch.float64), dim=-1)
    log_probs[:, list(BANNED_OUTPUT_IDS)] = float("-inf")
    return log_probs


def default_max_len(source_length: int) -> int:
    return 2 * source_length + 10


def greedy_decode(model: TranslationModel, example: TranslationExample, max_len: Optional[int] = None) -> Hypothesis:
    """Argmax decoding (lowest id wins ties)."""
    max_len = max_len if max_len is not None else default_max_len(len(example.source_ids))
    model.eval()
    with torch.no_grad():
        memory, source_pad = _fused_memory(model, example)
        tokens: list[int] = []
        total = 0.0
        for _ in range(max_len):
            log_probs = _next_log_probs(model, memory, source_pad, [tokens])[0]
            best = int(torch.argmax(log_probs))
            total += float(log_probs[best])
            if best == EOS_ID:
                return Hypothesis(tokens, total / (len(tokens) + 1), False)
            tokens.append(best)
    return Hypothesis(tokens, total / max(len(tokens), 1), True)


def beam_search(
    model: TranslationModel,
    example: TranslationExample,
    beam: int = 4,
    max_len: Optional[int] = None,
) -> Hypothesis:
    """
    Length-normalized beam search.

    Each step keeps the `beam` best expansions by cumulative log-probability
    (ties: lexicographically smaller token ids); expansions ending in EOS
    leave the beam as finished hypotheses. Search ends when no hypothesis is
    alive or max_len tokens were generated. The result is the finished
    hypothesis (greedy path included) with the best mean log-probability
    per token; if none finished, the best partial, flagged as truncated.

    Scores compare like for like: a finished result scores at least as high
    as a finished greedy path, and a truncated result at least as high as a
    truncated greedy path. A finished hypothesis is preferred over any
    truncated one, so when greedy runs out of length its (partial) score can
    exceed that of the finished hypothesis returned.
    """
    if beam < 1:
        raise ConfigError(f"beam must be >= 1, got {beam}")
    max_len = max_len if max_len is not None else default_max_len(len(example.source_ids))
    model.eval()

    with torch.no_grad():
        memory, source_pad = _fused_memory(model, example)
        alive: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        finished: list[tuple[tuple[int, ...], float]] = []

        for _ in range(max_len):
            if not alive:
                break
            log_probs = _next_log_probs(model, memory, source_pad, [tokens for tokens, _ in alive])
            candidates = []
            for row, (tokens, score) in enumerate(alive):
                for token in torch.nonzero(torch.isfinite(log_probs[row])).flatten().tolist():
                    candidates.append((tokens + (token,), score + float(log_probs[row, token])))
            candidates.sort(key=lambda c: (-c[1], c[0]))

            alive = []
            for tokens, score in candidates[:beam]:
                if tokens[-1] == EOS_ID:
                    finished.append((tokens, score))
                else:
                    alive.append((tokens, score))

    pool = [Hypothesis(list(tokens[:-1]), score / len(tokens), False) for tokens, score in finished]
    greedy = greedy_decode(model, example, max_len)
    if not greedy.truncated:
        pool.append(greedy)
    if pool:
        return min(pool, key=lambda h: (-h.score, h.tokens))

    partial = [Hypothesis(list(tokens), score / max(len(tokens), 1), True) for tokens, score in alive]
    partial.append(greedy)
    return min(partial, key=lambda h: (-h.score, h.tokens))


def save_translation_model(model: TranslationModel, vocab: Vocab, path: Path, extra: Optional[dict] = None) -> Path:
    metadata = {
        "kind": CHECKPOINT_KIND,
        "config": asdict(model.cfg),
        "vocab": vocab.to_dict(),
        "rep_dim": model.rep_dim,
        "use_fusion": model.use_fusion,
        "seed": model.cfg.seed,
    }
    if extra:
        metadata.update(extra)
    return save_checkpoint(path, model.state_dict(), metadata)


def load_translation_model(path: Path) -> tuple[TranslationModel, Vocab, dict]:
    """
    Returns:
        (model in eval mode, vocabulary, metadata)
    """
    arrays, metadata = load_checkpoint(path)
    if metadata.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path} is not a translation model checkpoint (kind={metadata.get('kind')!r})")
    vocab = Vocab.from_dict(metadata["vocab"])
    model = TranslationModel(
        TranslatorConfig(**metadata["config"]), len(vocab), metadata["rep_dim"], metadata["use_fusion"]
    )
    model.load_state_dict(arrays)
    model.eval()
    return model, vocab, metadata


def average_checkpoints(paths: Sequence[Path]) -> tuple[TranslationModel, Vocab, dict]:
    """
    Load checkpoints and average every parameter.

    Raises:
        ShapeError: On a shape mismatch, naming the parameter
    """
    if not paths:
        raise ShapeError("need at least one checkpoint to average")
    model, vocab, metadata = load_translation_model(paths[0])
    states = [model.state_dict()]
    for path in paths[1:]:
        arrays, _ = load_checkpoint(path)
        states.append(arrays)
    model.load_state_dict(average_state_dicts(states))
    logger.info(f"Averaged {len(paths)} checkpoints")
    return model, vocab, metadata
