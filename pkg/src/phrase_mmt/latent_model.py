"""
Conditional VAE that turns (phrase, region feature) pairs into
phrase-guided visual representations.

Handles:
- Prior network over the region feature, posterior network over [RNN(phrase), feature]
- Reparameterized sampling and closed-form diagonal-Gaussian KL
- Decoder initial state s = Linear([z, v]) and teacher-forced reconstruction
- KL annealing, word dropout and the training loop
- Batched inference of s, reconstruction accuracy, mean KL
- Checkpoint save/load
"""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigError, DomainError, ShapeError, TrainingError
from .grounding import PhraseRegionPair
from .neural_core import (
    AdamOptimizer,
    RngState,
    cross_entropy_label_smoothed,
    init_parameters,
    load_checkpoint,
    rnn_encode,
    rnn_states,
    save_checkpoint,
)
from .tokenizer import BOS_ID, EOS_ID, PAD_ID, UNK_ID, Vocab

logger = logging.getLogger(__name__)

REP_MODES = ("posterior", "prior")
CHECKPOINT_KIND = "latent_model"


@dataclass
class LatentModelConfig:
    """Model dimensions. Defaults are full-scale; see desk_scale()."""
    feature_dim: int = 64       # D_v of the region features
    latent_dim: int = 64
    hidden_dim: int = 512       # phrase/decoder RNN size, also the size of s
    embed_dim: int = 256
    seed: int = 0

    @classmethod
    def desk_scale(cls, **overrides: Any) -> "LatentModelConfig":
        values = {"latent_dim": 16, "hidden_dim": 64, "embed_dim": 32, "feature_dim": 64}
        values.update(overrides)
        return cls(**values)

    def validate(self) -> None:
        for name in ("feature_dim", "latent_dim", "hidden_dim", "embed_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")


@dataclass
class CvaeTrainConfig:
    """Training schedule. Defaults are full-scale; see desk_scale()."""
    batch_size: int = 1024
    learning_rate: float = 5e-5
    epochs: int = 200
    anneal_steps: int = 20000
    word_dropout: float = 0.1
    clip_norm: Optional[float] = None  # None = no clipping
    seed: int = 0

    @classmethod
    def desk_scale(cls, **overrides: Any) -> "CvaeTrainConfig":
        values = {"batch_size": 64, "learning_rate": 2e-3, "epochs": 20, "anneal_steps": 1000}
        values.update(overrides)
        return cls(**values)

    def validate(self) -> None:
        if not 0.0 <= self.word_dropout < 1.0:
            raise ConfigError(f"word_dropout must be in [0, 1), got {self.word_dropout}")
        if self.anneal_steps < 1:
            raise ConfigError(f"anneal_steps must be >= 1, got {self.anneal_steps}")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and learning_rate > 0 are required")


@dataclass
class PhraseBatch:
    """
    Padded phrases with their region features.

    Attributes:
        phrase_ids: [B, L] token ids, PAD-padded
        lengths: [B] true phrase lengths
        features: [B, D_v]
        decoder_inputs: [B, L+1] BOS + phrase
        decoder_targets: [B, L+1] phrase + EOS, PAD-padded
    """
    phrase_ids: torch.Tensor
    lengths: torch.Tensor
    features: torch.Tensor
    decoder_inputs: torch.Tensor
    decoder_targets: torch.Tensor

    def __len__(self) -> int:
        return int(self.phrase_ids.shape[0])

    def select(self, index: torch.Tensor) -> "PhraseBatch":
        return PhraseBatch(
            phrase_ids=self.phrase_ids[index],
            lengths=self.lengths[index],
            features=self.features[index],
            decoder_inputs=self.decoder_inputs[index],
            decoder_targets=self.decoder_targets[index],
        )


class ElboTerms(NamedTuple):
    total: torch.Tensor
    recon: torch.Tensor
    kl: torch.Tensor
    anneal_weight: float


@dataclass
class CvaeTrainResult:
    """Result of a training run."""
    model: "LatentModel"
    log: list[dict] = field(default_factory=list)  # per epoch: epoch, recon, kl, anneal_weight
    stats: dict = field(default_factory=dict)


def collate_phrases(
    pairs: Sequence[PhraseRegionPair],
    vocab: Vocab,
    dtype: torch.dtype = torch.float32,
) -> PhraseBatch:
    """Pad phrases to a batch and stack their features."""
    if not pairs:
        raise DomainError("cannot collate an empty list of phrase pairs")
    encoded = [vocab.encode(p.phrase_tokens) for p in pairs]
    max_len = max(len(ids) for ids in encoded)
    batch = len(pairs)

    phrase_ids = torch.full((batch, max_len), PAD_ID, dtype=torch.long)
    decoder_inputs = torch.full((batch, max_len + 1), PAD_ID, dtype=torch.long)
    decoder_targets = torch.full((batch, max_len + 1), PAD_ID, dtype=torch.long)
    for row, ids in enumerate(encoded):
        n = len(ids)
        phrase_ids[row, :n] = torch.tensor(ids, dtype=torch.long)
        decoder_inputs[row, :n + 1] = torch.tensor([BOS_ID] + ids, dtype=torch.long)
        decoder_targets[row, :n + 1] = torch.tensor(ids + [EOS_ID], dtype=torch.long)

    features = torch.tensor(np.array([p.region_feature for p in pairs]), dtype=dtype)
    lengths = torch.tensor([len(ids) for ids in encoded], dtype=torch.long)
    return PhraseBatch(phrase_ids, lengths, features, decoder_inputs, decoder_targets)


class LatentModel(nn.Module):
    """
    Prior p(z|v), posterior q(z|p, v), decoder p(p|z, v).

    The decoder's initial hidden state s = init_proj([z, v]) is the
    phrase-guided representation exported for retrieval.
    """

    def __init__(self, cfg: LatentModelConfig, vocab_size: int):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.vocab_size = vocab_size
        d_v, z, h, e = cfg.feature_dim, cfg.latent_dim, cfg.hidden_dim, cfg.embed_dim

        self.embedding = nn.Embedding(vocab_size, e, padding_idx=PAD_ID)
        self.prior_mu = nn.Linear(d_v, z)
        self.prior_sigma = nn.Linear(d_v, z)
        self.phrase_rnn = nn.GRUCell(e, h)
        self.post_mu = nn.Linear(h + d_v, z)
        self.post_sigma = nn.Linear(h + d_v, z)
        self.init_proj = nn.Linear(z + d_v, h)
        self.decoder = nn.GRUCell(e, h)
        self.output = nn.Linear(h, vocab_size)

        init_parameters(self, cfg.seed)

    @property
    def rep_dim(self) -> int:
        return self.cfg.hidden_dim

    def _check_features(self, v: torch.Tensor) -> None:
        if v.shape[-1] != self.cfg.feature_dim:
            raise ShapeError(f"region feature dim {v.shape[-1]} != model feature_dim {self.cfg.feature_dim}")

    def prior(self, v: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """(mu_p, sigma_p) from the region feature; sigma through softplus."""
        self._check_features(v)
        return self.prior_mu(v), F.softplus(self.prior_sigma(v))

    def encode_phrase(self, phrase_ids: torch.Tensor, lengths: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Final hidden state of the phrase RNN, [B, H] (or [H] for a single phrase)."""
        if phrase_ids.shape[-1] == 0:
            raise DomainError("cannot encode an empty phrase")
        embedded = self.embedding(phrase_ids)
        h0 = embedded.new_zeros(*embedded.shape[:-2], self.cfg.hidden_dim)
        return rnn_encode(embedded, h0, self.phrase_rnn, lengths)

    def posterior(
        self,
        phrase_ids: torch.Tensor,
        v: torch.Tensor,
        lengths: Optional[torch.Tensor] = None,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """(mu_q, sigma_q) from [RNN(phrase), v]."""
        self._check_features(v)
        joint = torch.cat([self.encode_phrase(phrase_ids, lengths), v], dim=-1)
        return self.post_mu(joint), F.softplus(self.post_sigma(joint))

    def decode_init(self, z: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        """s = Linear([z, v])."""
        if z.shape[-1] != self.cfg.latent_dim:
            raise ShapeError(f"latent dim {z.shape[-1]} != {self.cfg.latent_dim}")
        self._check_features(v)
        return self.init_proj(torch.cat([z, v], dim=-1))

    def decoder_logits(self, s: torch.Tensor, decoder_inputs: torch.Tensor) -> torch.Tensor:
        """Teacher-forced decoder logits, [B, T, V], starting from hidden state s."""
        return self.output(rnn_states(self.embedding(decoder_inputs), s, self.decoder))


def reparameterize(
    mu: torch.Tensor,
    sigma: torch.Tensor,
    rng: Optional[RngState] = None,
    eps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """z = mu + sigma * eps, eps ~ N(0, I) drawn from rng unless given."""
    if eps is None:
        if rng is None:
            raise ConfigError("reparameterize needs an rng or an explicit eps")
        eps = rng.normal(tuple(mu.shape), dtype=mu.dtype)
    return mu + sigma * eps


def kl_diag_gaussians(
    mu_q: torch.Tensor,
    sigma_q: torch.Tensor,
    mu_p: torch.Tensor,
    sigma_p: torch.Tensor,
) -> torch.Tensor:
    """
    KL(q || p) for diagonal Gaussians, summed over the last dimension.

    log(sigma_p / sigma_q) + (sigma_q^2 + (mu_q - mu_p)^2) / (2 sigma_p^2) - 1/2
    """
    var_p = sigma_p * sigma_p
    per_dim = (
        torch.log(sigma_p) - torch.log(sigma_q)
        + (sigma_q * sigma_q + (mu_q - mu_p) ** 2) / (2.0 * var_p)
        - 0.5
    )
    return per_dim.sum(dim=-1)


def anneal_weight(step: int, anneal_steps: int) -> float:
    """Linear KL ramp min(1, step / anneal_steps), clamped to [0, 1]."""
    if anneal_steps < 1:
        raise ConfigError(f"anneal_steps must be >= 1, got {anneal_steps}")
    return min(1.0, max(0.0, step / anneal_steps))


def apply_word_dropout(
    decoder_inputs: torch.Tensor,
    rate: float,
    rng: Optional[RngState],
) -> torch.Tensor:
    """Replace each non-PAD decoder input by UNK with probability `rate`."""
    if rate <= 0.0:
        return decoder_inputs
    if rng is None:
        raise ConfigError("word dropout needs an rng")
    drop = rng.uniform(tuple(decoder_inputs.shape), dtype=torch.float64) < rate
    drop &= decoder_inputs != PAD_ID
    return decoder_inputs.masked_fill(drop, UNK_ID)


def reconstruction_loss(
    model: LatentModel,
    s: torch.Tensor,
    batch: PhraseBatch,
    word_dropout: float = 0.0,
    rng: Optional[RngState] = None,
) -> torch.Tensor:
    """Teacher-forced NLL of phrase + EOS given initial state s, mean per token."""
    inputs = apply_word_dropout(batch.decoder_inputs, word_dropout, rng)
    logits = model.decoder_logits(s, inputs)
    return cross_entropy_label_smoothed(logits, batch.decoder_targets, 0.0, ignore_index=PAD_ID)


def elbo_loss(
    model: LatentModel,
    batch: PhraseBatch,
    step: int,
    cfg: CvaeTrainConfig,
    rng: RngState,
) -> ElboTerms:
    """
    Annealed negative ELBO: recon + anneal_weight * KL.

    One sample of z per pair. KL is averaged over pairs, recon over tokens.
    """
    if step < 1:
        raise ConfigError(f"step must be >= 1, got {step}")
    mu_p, sigma_p = model.prior(batch.features)
    mu_q, sigma_q = model.posterior(batch.phrase_ids, batch.features, batch.lengths)
    z = reparameterize(mu_q, sigma_q, rng)
    s = model.decode_init(z, batch.features)

    recon = reconstruction_loss(model, s, batch, cfg.word_dropout, rng)
    kl = kl_diag_gaussians(mu_q, sigma_q, mu_p, sigma_p).mean()
    weight = anneal_weight(step, cfg.anneal_steps)
    return ElboTerms(recon + weight * kl, recon, kl, weight)


def train_cvae(
    pairs: Sequence[PhraseRegionPair],
    vocab: Vocab,
    model_cfg: LatentModelConfig,
    train_cfg: CvaeTrainConfig,
) -> CvaeTrainResult:
    """
    Train the CVAE with Adam over shuffled minibatches.

    Deterministic given the two configs' seeds.

    Raises:
        DomainError: If there are no pairs
        TrainingError: On a non-finite loss, with the step number
    """
    train_cfg.validate()
    if not pairs:
        raise DomainError("cannot train on an empty phrase set")

    model = LatentModel(model_cfg, len(vocab))
    model.train()
    data = collate_phrases(pairs, vocab)
    rng = RngState(train_cfg.seed)
    optimizer = AdamOptimizer(model.named_parameters(), lr=train_cfg.learning_rate, clip_norm=train_cfg.clip_norm)

    logger.info(
        f"Training CVAE on {len(pairs)} pairs: {train_cfg.epochs} epochs, batch {train_cfg.batch_size}, "
        f"lr {train_cfg.learning_rate}, anneal {train_cfg.anneal_steps}, word dropout {train_cfg.word_dropout}"
    )

    result = CvaeTrainResult(model=model)
    step = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(data))
        recon_sum = 0.0
        kl_sum = 0.0
        batches = 0
        weight = 0.0

        for begin in range(0, len(data), train_cfg.batch_size):
            step += 1
            batch = data.select(order[begin:begin + train_cfg.batch_size])
            terms = elbo_loss(model, batch, step, train_cfg, rng)
            if not torch.isfinite(terms.total):
                raise TrainingError(f"non-finite CVAE loss {terms.total.item()}", step)

            optimizer.zero_grad()
            terms.total.backward()
            optimizer.step()

            recon_sum += terms.recon.item()
            kl_sum += terms.kl.item()
            weight = terms.anneal_weight
            batches += 1
            logger.debug(f"step {step}: recon {terms.recon.item():.4f} kl {terms.kl.item():.4f} w {weight:.3f}")

        entry = {"epoch": epoch, "recon": recon_sum / batches, "kl": kl_sum / batches, "anneal_weight": weight}
        result.log.append(entry)
        logger.info(
            f"CVAE epoch {epoch}/{train_cfg.epochs}: recon {entry['recon']:.4f} "
            f"kl {entry['kl']:.4f} anneal {weight:.3f}"
        )

    model.eval()
    result.stats = {"pairs": len(pairs), "steps": step, "epochs": train_cfg.epochs}
    return result


def _latent_mean(model: LatentModel, batch: PhraseBatch, rep_mode: str) -> torch.Tensor:
    if rep_mode == "posterior":
        mu, _ = model.posterior(batch.phrase_ids, batch.features, batch.lengths)
    elif rep_mode == "prior":
        mu, _ = model.prior(batch.features)
    else:
        raise ConfigError(f"rep_mode must be one of {REP_MODES}, got {rep_mode!r}")
    return mu


def infer_reps(
    model: LatentModel,
    pairs: Sequence[PhraseRegionPair],
    vocab: Vocab,
    rep_mode: str = "posterior",
    batch_size: int = 512,
) -> np.ndarray:
    """
    Phrase-guided representations s for many pairs, [N, H] float64.

    z is the posterior mean (rep_mode="posterior") or the prior mean
    (rep_mode="prior"); nothing is sampled.
    """
    if not pairs:
        return np.zeros((0, model.rep_dim), dtype=np.float64)
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    chunks = []
    try:
        with torch.no_grad():
            for begin in range(0, len(pairs), batch_size):
                batch = collate_phrases(pairs[begin:begin + batch_size], vocab, dtype)
                mu = _latent_mean(model, batch, rep_mode)
                chunks.append(model.decode_init(mu, batch.features).double().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(chunks, axis=0)


def infer_rep(model: LatentModel, pair: PhraseRegionPair, vocab: Vocab, rep_mode: str = "posterior") -> np.ndarray:
    """s for a single pair (deterministic)."""
    return infer_reps(model, [pair], vocab, rep_mode)[0]


def reconstruction_accuracy(
    model: LatentModel,
    pairs: Sequence[PhraseRegionPair],
    vocab: Vocab,
    batch_size: int = 512,
) -> float:
    """Teacher-forced argmax accuracy over phrase tokens plus EOS, z = posterior mean."""
    correct = 0
    total = 0
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    try:
        with torch.no_grad():
            for begin in range(0, len(pairs), batch_size):
                batch = collate_phrases(pairs[begin:begin + batch_size], vocab, dtype)
                mu, _ = model.posterior(batch.phrase_ids, batch.features, batch.lengths)
                logits = model.decoder_logits(model.decode_init(mu, batch.features), batch.decoder_inputs)
                keep = batch.decoder_targets != PAD_ID
                correct += int(((logits.argmax(dim=-1) == batch.decoder_targets) & keep).sum())
                total += int(keep.sum())
    finally:
        model.train(was_training)
    return correct / total if total else 0.0


def mean_kl(model: LatentModel, pairs: Sequence[PhraseRegionPair], vocab: Vocab, batch_size: int = 512) -> float:
    """Average KL(q || p) per pair, in nats."""
    if not pairs:
        return 0.0
    total = 0.0
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    try:
        with torch.no_grad():
            for begin in range(0, len(pairs), batch_size):
                batch = collate_phrases(pairs[begin:begin + batch_size], vocab, dtype)
                mu_p, sigma_p = model.prior(batch.features)
                mu_q, sigma_q = model.posterior(batch.phrase_ids, batch.features, batch.lengths)
                total += float(kl_diag_gaussians(mu_q, sigma_q, mu_p, sigma_p).sum())
    finally:
        model.train(was_training)
    return total / len(pairs)


def save_latent_model(model: LatentModel, vocab: Vocab, path: Path, extra: Optional[dict] = None) -> Path:
    """Checkpoint archive with config and vocabulary in the metadata."""
    metadata = {
        "kind": CHECKPOINT_KIND,
        "config": asdict(model.cfg),
        "vocab": vocab.to_dict(),
        "seed": model.cfg.seed,
    }
    if extra:
        metadata.update(extra)
    return save_checkpoint(path, model.state_dict(), metadata)


def load_latent_model(path: Path) -> tuple[LatentModel, Vocab, dict]:
    """
    Returns:
        (model in eval mode, vocabulary, metadata)
    """
    arrays, metadata = load_checkpoint(path)
    if metadata.get("kind") != CHECKPOINT_KIND:
        raise ConfigError(f"{path} is not a latent model checkpoint (kind={metadata.get('kind')!r})")
    vocab = Vocab.from_dict(metadata["vocab"])
    model = LatentModel(LatentModelConfig(**metadata["config"]), len(vocab))
    model.load_state_dict(arrays)
    model.eval()
    return model, vocab, metadata
