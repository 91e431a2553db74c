"""
Differentiable primitives shared by the latent model and the translator.

Handles:
- Seeded random streams and parameter initialization
- Linear maps, recurrent encoding, multi-head attention
- Label-smoothed cross entropy
- Adam updates (functional step + optimizer wrapper)
- Finite-difference gradient checking
- Checkpoint archives (.npz with a JSON metadata entry)
"""

import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DomainError, OptimizerError, ShapeError
from .storage import atomic_write_bytes

logger = logging.getLogger(__name__)

CHECKPOINT_META_KEY = "__meta__"
CHECKPOINT_FORMAT_VERSION = 1
EMBEDDING_INIT_STD = 0.02

ArrayLike = Union[torch.Tensor, np.ndarray]


class RngState:
    """
    Seeded random stream.

    Identical seed plus identical call sequence gives identical draws.
    `position` counts the draws taken so far.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        self.seed = seed
        self.position = 0
        self.generator = torch.Generator().manual_seed(seed)

    def normal(self, shape: tuple[int, ...], dtype: torch.dtype = torch.float32) -> torch.Tensor:
        self.position += 1
        return torch.randn(shape, generator=self.generator, dtype=dtype)

    def uniform(self, shape: tuple[int, ...], dtype: torch.dtype = torch.float32) -> torch.Tensor:
        self.position += 1
        return torch.rand(shape, generator=self.generator, dtype=dtype)

    def permutation(self, n: int) -> torch.Tensor:
        self.position += 1
        return torch.randperm(n, generator=self.generator)

    def __repr__(self) -> str:
        return f"RngState(seed={self.seed}, position={self.position})"


def init_parameters(module: nn.Module, seed: int) -> None:
    """
    Seeded initialization of every submodule, in registration order.

    Linear and GRU weights: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Embeddings: normal(0, 0.02), padding row zeroed.
    LayerNorm: weight 1, bias 0.
    """
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for sub in module.modules():
            if isinstance(sub, nn.Linear):
                bound = 1.0 / math.sqrt(sub.in_features)
                sub.weight.uniform_(-bound, bound, generator=generator)
                if sub.bias is not None:
                    sub.bias.uniform_(-bound, bound, generator=generator)
            elif isinstance(sub, nn.GRUCell):
                bound = 1.0 / math.sqrt(sub.hidden_size)
                for param in sub.parameters():
                    param.uniform_(-bound, bound, generator=generator)
            elif isinstance(sub, nn.Embedding):
                sub.weight.normal_(0.0, EMBEDDING_INIT_STD, generator=generator)
                if sub.padding_idx is not None:
                    sub.weight[sub.padding_idx].zero_()
            elif isinstance(sub, nn.LayerNorm) and sub.elementwise_affine:
                sub.weight.fill_(1.0)
                sub.bias.zero_()


def linear(x: torch.Tensor, weight: torch.Tensor, bias: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    Affine map W·x + b over the last dimension of x.

    Raises:
        ShapeError: If x, W and b dimensions disagree
    """
    if x.shape[-1] != weight.shape[-1]:
        raise ShapeError(f"linear: input dim {x.shape[-1]} != weight in-dim {weight.shape[-1]}")
    if bias is not None and bias.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: bias dim {bias.shape[-1]} != weight out-dim {weight.shape[0]}")
    return F.linear(x, weight, bias)


def rnn_encode(
    embeddings: torch.Tensor,
    h0: torch.Tensor,
    cell: nn.GRUCell,
    lengths: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Run `cell` left to right and return the final hidden state.

    Args:
        embeddings: [L, E] or padded batch [B, L, E]
        h0: [H] or [B, H]
        cell: Recurrent cell
        lengths: True lengths of a padded batch; rows stop updating past their length

    Returns:
        Final hidden state, [H] or [B, H]

    Raises:
        DomainError: On an empty sequence
    """
    unbatched = embeddings.dim() == 2
    if unbatched:
        embeddings = embeddings.unsqueeze(0)
        h0 = h0.unsqueeze(0)
    if embeddings.shape[1] == 0:
        raise DomainError("rnn_encode needs a non-empty sequence")
    if lengths is not None and int(lengths.min()) < 1:
        raise DomainError("rnn_encode got a zero-length row")

    h = h0
    for t in range(embeddings.shape[1]):
        h_next = cell(embeddings[:, t], h)
        if lengths is None:
            h = h_next
        else:
            active = (lengths > t).unsqueeze(-1)
            h = torch.where(active, h_next, h)

    return h.squeeze(0) if unbatched else h


def rnn_states(inputs: torch.Tensor, h0: torch.Tensor, cell: nn.GRUCell) -> torch.Tensor:
    """All hidden states of a left-to-right unroll, [B, L, H] for inputs [B, L, E]."""
    states = []
    h = h0
    for t in range(inputs.shape[1]):
        h = cell(inputs[:, t], h)
        states.append(h)
    return torch.stack(states, dim=1)


def _split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    # [..., n, d] -> [..., heads, n, d/heads]
    return x.reshape(*x.shape[:-1], heads, x.shape[-1] // heads).transpose(-3, -2)


def _merge_heads(x: torch.Tensor) -> torch.Tensor:
    # [..., heads, n, dh] -> [..., n, heads*dh]
    x = x.transpose(-3, -2)
    return x.reshape(*x.shape[:-2], x.shape[-2] * x.shape[-1])


def multi_head_attention(
    query: torch.Tensor,
    key: torch.Tensor,
    value: torch.Tensor,
    heads: int,
    mask: Optional[torch.Tensor] = None,
    dropout: float = 0.0,
    training: bool = False,
) -> torch.Tensor:
    """
    Scaled dot-product attention per head, heads concatenated.

    Each head computes softmax(Q_h K_h^T / sqrt(d_h)) V_h. No projections are
    applied here; see MultiHeadAttention for the projected version.

    Args:
        query: [..., n, d]
        key: [..., t, d]
        value: [..., t, d]
        heads: Number of heads, must divide d
        mask: Boolean, broadcastable to [..., heads, n, t]; True blocks a key
        dropout: Attention-weight dropout rate
        training: Apply dropout only when True

    Returns:
        [..., n, d]

    Raises:
        ConfigError: If d is not divisible by heads
        DomainError: If there are no keys (callers bypass attention instead)
    """
    d = query.shape[-1]
    if heads < 1 or d % heads != 0:
        raise ConfigError(f"model dim {d} is not divisible by {heads} heads")
    if key.shape[-2] == 0:
        raise DomainError("attention over zero keys")
    if key.shape[-1] != d or value.shape[-1] != d or key.shape[-2] != value.shape[-2]:
        raise ShapeError(
            f"attention shapes disagree: q {tuple(query.shape)}, k {tuple(key.shape)}, v {tuple(value.shape)}"
        )

    q = _split_heads(query, heads)
    k = _split_heads(key, heads)
    v = _split_heads(value, heads)

    scores = torch.matmul(q, k.transpose(-1, -2)) / math.sqrt(d // heads)
    if mask is not None:
        scores = scores.masked_fill(mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    if training and dropout > 0.0:
        weights = F.dropout(weights, p=dropout, training=True)

    return _merge_heads(torch.matmul(weights, v))


class MultiHeadAttention(nn.Module):
    """Multi-head attention with query/key/value/output projections."""

    def __init__(self, d_model: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if heads < 1 or d_model % heads != 0:
            raise ConfigError(f"model dim {d_model} is not divisible by {heads} heads")
        self.heads = heads
        self.dropout = dropout
        self.q_proj = nn.Linear(d_model, d_model)
        self.k_proj = nn.Linear(d_model, d_model)
        self.v_proj = nn.Linear(d_model, d_model)
        self.out_proj = nn.Linear(d_model, d_model)

    def forward(
        self,
        query: torch.Tensor,
        key: torch.Tensor,
        value: torch.Tensor,
        mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        attended = multi_head_attention(
            self.q_proj(query),
            self.k_proj(key),
            self.v_proj(value),
            self.heads,
            mask=mask,
            dropout=self.dropout,
            training=self.training,
        )
        return self.out_proj(attended)


def cross_entropy_label_smoothed(
    logits: torch.Tensor,
    targets: torch.Tensor,
    smoothing: float = 0.0,
    ignore_index: Optional[int] = None,
) -> torch.Tensor:
    """
    Label-smoothed cross entropy, averaged over non-ignored tokens.

    Per token: (1 - smoothing) * NLL(target) + smoothing * mean_v(-log p_v).

    Args:
        logits: [..., V]
        targets: [...] token ids
        smoothing: Mass spread uniformly over the vocabulary, in [0, 1)
        ignore_index: Target id excluded from the loss (padding)

    Raises:
        ConfigError: If smoothing is outside [0, 1)
        IndexError: If a target id is outside the vocabulary
    """
    if not 0.0 <= smoothing < 1.0:
        raise ConfigError(f"label smoothing must be in [0, 1), got {smoothing}")

    vocab_size = logits.shape[-1]
    logits = logits.reshape(-1, vocab_size)
    targets = targets.reshape(-1)

    if ignore_index is None:
        keep = torch.ones_like(targets, dtype=torch.bool)
    else:
        keep = targets != ignore_index

    kept = targets[keep]
    if kept.numel() and (int(kept.min()) < 0 or int(kept.max()) >= vocab_size):
        raise IndexError(f"target id outside vocabulary of size {vocab_size}")

    log_probs = F.log_softmax(logits, dim=-1)
    safe_targets = targets.masked_fill(~keep, 0)
    nll = -log_probs.gather(-1, safe_targets.unsqueeze(-1)).squeeze(-1)
    if smoothing > 0.0:
        per_token = (1.0 - smoothing) * nll + smoothing * (-log_probs.mean(dim=-1))
    else:
        per_token = nll

    weights = keep.to(per_token.dtype)
    count = weights.sum()
    if count.item() == 0:
        return (per_token * weights).sum()
    return (per_token * weights).sum() / count


@dataclass
class AdamState:
    """First/second moment estimates keyed by parameter name."""
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, torch.Tensor],
    grads: Mapping[str, Optional[torch.Tensor]],
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    step: int = 1,
    state: Optional[AdamState] = None,
) -> AdamState:
    """
    One bias-corrected Adam update, applied to `params` in place.

    Parameters whose gradient is None are skipped.

    Returns:
        The updated moment state

    Raises:
        ConfigError: If step < 1
        ShapeError: If a gradient shape differs from its parameter
        OptimizerError: On a non-finite gradient, naming the parameter
    """
    if step < 1:
        raise ConfigError(f"adam step must be >= 1, got {step}")
    state = state if state is not None else AdamState()
    beta1, beta2 = betas
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step

    with torch.no_grad():
        for name, param in params.items():
            grad = grads.get(name)
            if grad is None:
                continue
            if grad.shape != param.shape:
                raise ShapeError(f"{name}: gradient shape {tuple(grad.shape)} != {tuple(param.shape)}")
            if not torch.isfinite(grad).all():
                raise OptimizerError("non-finite gradient", name)

            if name not in state.exp_avg:
                state.exp_avg[name] = torch.zeros_like(param)
                state.exp_avg_sq[name] = torch.zeros_like(param)
            exp_avg = state.exp_avg[name]
            exp_avg_sq = state.exp_avg_sq[name]

            exp_avg.mul_(beta1).add_(grad, alpha=1.0 - beta1)
            exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1.0 - beta2)

            denom = (exp_avg_sq / correction2).sqrt().add_(eps)
            param.sub_(lr * (exp_avg / correction1) / denom)

    state.step = step
    return state


class AdamOptimizer:
    """
    Adam over a module's named parameters.

    Usage:
        optimizer = AdamOptimizer(model.named_parameters(), lr=1e-3)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
    """

    def __init__(
        self,
        named_parameters: Iterable[tuple[str, torch.Tensor]],
        lr: float,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: Optional[float] = None,
    ):
        self.params = {name: p for name, p in named_parameters if p.requires_grad}
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = AdamState()

    def zero_grad(self) -> None:
        for param in self.params.values():
            param.grad = None

    def step(self, lr: Optional[float] = None) -> None:
        if self.clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(list(self.params.values()), self.clip_norm)
        grads = {name: p.grad for name, p in self.params.items()}
        self.state = adam_step(
            self.params,
            grads,
            lr=self.lr if lr is None else lr,
            betas=self.betas,
            eps=self.eps,
            step=self.state.step + 1,
            state=self.state,
        )


def grad_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Mapping[str, torch.Tensor],
    epsilon: float = 1e-5,
    samples_per_param: int = 6,
    seed: int = 0,
    abs_floor: float = 1e-4,
) -> float:
    """
    Compare autograd gradients with central finite differences.

    A seeded random subset of entries is perturbed in each parameter. The
    relative error of an entry is |a - n| / max(|a|, |n|, abs_floor), so
    gradients smaller than abs_floor are judged on an absolute scale.

    Args:
        loss_fn: Deterministic closure returning a scalar loss
        params: Named leaf tensors that require grad (perturbed in place)
        epsilon: Finite-difference step
        samples_per_param: Entries checked per parameter
        seed: Seed of the entry sampler
        abs_floor: Lower bound of the error denominator

    Returns:
        Maximum relative error over all checked entries
    """
    names = list(params)
    tensors = [params[name] for name in names]
    loss = loss_fn()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)

    generator = torch.Generator().manual_seed(seed)
    worst = 0.0
    worst_name = ""

    with torch.no_grad():
        for name, param, grad in zip(names, tensors, analytic):
            flat = param.view(-1)
            grad_flat = torch.zeros_like(flat) if grad is None else grad.reshape(-1)
            count = min(samples_per_param, flat.numel())
            picks = torch.randperm(flat.numel(), generator=generator)[:count]

            for idx in picks.tolist():
                original = flat[idx].item()
                flat[idx] = original + epsilon
                plus = loss_fn().item()
                flat[idx] = original - epsilon
                minus = loss_fn().item()
                flat[idx] = original

                numeric = (plus - minus) / (2.0 * epsilon)
                exact = grad_flat[idx].item()
                error = abs(exact - numeric) / max(abs(exact), abs(numeric), abs_floor)
                if error > worst:
                    worst = error
                    worst_name = name

    logger.debug(f"grad_check: max relative error {worst:.3e} ({worst_name or 'n/a'})")
    return worst


def _to_numpy(array: ArrayLike) -> np.ndarray:
    if isinstance(array, torch.Tensor):
        return array.detach().cpu().numpy()
    return np.asarray(array)


def state_fingerprint(arrays: Mapping[str, ArrayLike]) -> str:
    """Stable short hash over sorted names, dtypes, shapes and raw bytes."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        array = np.ascontiguousarray(_to_numpy(arrays[name]))
        digest.update(name.encode("utf-8"))
        digest.update(str(array.dtype).encode("utf-8"))
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(array.tobytes())
    return digest.hexdigest()[:16]


def save_checkpoint(path: Path, arrays: Mapping[str, ArrayLike], metadata: dict[str, Any]) -> Path:
    """
    Save named arrays plus JSON metadata as one .npz archive, atomically.

    The metadata entry also records every array's shape and dtype and the
    archive format version.

    Returns:
        Path written
    """
    payload = {name: _to_numpy(array) for name, array in arrays.items()}
    if CHECKPOINT_META_KEY in payload:
        raise ConfigError(f"array name {CHECKPOINT_META_KEY!r} is reserved")

    header = dict(metadata)
    header["format_version"] = CHECKPOINT_FORMAT_VERSION
    header["arrays"] = {
        name: {"shape": list(array.shape), "dtype": str(array.dtype)}
        for name, array in sorted(payload.items())
    }
    meta_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload[CHECKPOINT_META_KEY] = np.frombuffer(meta_bytes, dtype=np.uint8)

    buffer = io.BytesIO()
    np.savez(buffer, **payload)
    path = Path(path)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"Saved checkpoint with {len(arrays)} arrays to {path}")
    return path


def load_checkpoint(path: Path) -> tuple[dict[str, torch.Tensor], dict[str, Any]]:
    """
    Load a checkpoint archive.

    Returns:
        (named tensors, metadata dict)
    """
    with np.load(Path(path), allow_pickle=False) as archive:
        if CHECKPOINT_META_KEY not in archive.files:
            raise ConfigError(f"{path} is not a checkpoint archive (no metadata entry)")
        metadata = json.loads(archive[CHECKPOINT_META_KEY].tobytes().decode("utf-8"))
        arrays = {
            name: torch.from_numpy(archive[name].copy())
            for name in archive.files
            if name != CHECKPOINT_META_KEY
        }
    logger.debug(f"Loaded checkpoint {path} ({len(arrays)} arrays)")
    return arrays, metadata
