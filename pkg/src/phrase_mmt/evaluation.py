"""
Corpus BLEU and significance testing.

Handles:
- Corpus BLEU-4 with 13a tokenization and exponential smoothing (sacrebleu)
- Per-sentence sufficient statistics for fast resampling
- Percentile bootstrap confidence intervals
- Paired bootstrap resampling between two systems
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sacrebleu.metrics import BLEU

from .errors import DomainError

logger = logging.getLogger(__name__)

BLEU_TOKENIZER = "13a"
BLEU_SMOOTHING = "exp"
NGRAM_ORDER = 4
DEFAULT_RESAMPLES = 1000
DEFAULT_BOOTSTRAP_SEED = 12345
CI_LEVEL = 0.95


@dataclass
class BleuReport:
    """
    Corpus BLEU with its components.

    Attributes:
        score: BLEU in [0, 100]
        precisions: Smoothed 1..4-gram precisions (percent)
        brevity_penalty: Brevity penalty
        counts: Matched n-grams, 1..4
        totals: Hypothesis n-grams, 1..4
        sys_len: Hypothesis length in tokens
        ref_len: Reference length in tokens
        ci_low / ci_high: 95% percentile bootstrap interval
        signature: sacrebleu signature plus resampling settings
        p_value: Paired bootstrap p-value when compared against another system
    """
    score: float
    precisions: list[float]
    brevity_penalty: float
    counts: list[int]
    totals: list[int]
    sys_len: int
    ref_len: int
    ci_low: float
    ci_high: float
    signature: str = ""
    p_value: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "score": self.score,
            "precisions": self.precisions,
            "brevity_penalty": self.brevity_penalty,
            "counts": self.counts,
            "totals": self.totals,
            "sys_len": self.sys_len,
            "ref_len": self.ref_len,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "signature": self.signature,
            "p_value": self.p_value,
        }


@dataclass
class BootstrapResult:
    """Outcome of a paired bootstrap comparison of system A against system B."""
    p_value: float
    bleu_a: float
    bleu_b: float
    resamples: int
    a_better: int = 0
    b_better: int = 0
    ties: int = 0
    samples_a: list[float] = field(default_factory=list, repr=False)
    samples_b: list[float] = field(default_factory=list, repr=False)


def make_metric() -> BLEU:
    return BLEU(tokenize=BLEU_TOKENIZER, smooth_method=BLEU_SMOOTHING)


def _check_lengths(hypotheses: Sequence[str], references: Sequence[str]) -> None:
    if len(hypotheses) != len(references):
        raise DomainError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not hypotheses:
        raise DomainError("BLEU needs at least one sentence")


def sentence_stats(hypotheses: Sequence[str], references: Sequence[str]) -> np.ndarray:
    """
    Per-sentence sufficient statistics, [N, 10]:
    matched 1..4-grams, total 1..4-grams, hypothesis length, reference length.
    """
    _check_lengths(hypotheses, references)
    metric = make_metric()
    rows = []
    for hypothesis, reference in zip(hypotheses, references):
        result = metric.corpus_score([hypothesis], [[reference]])
        rows.append(list(result.counts) + list(result.totals) + [result.sys_len, result.ref_len])
    return np.array(rows, dtype=np.int64)


def bleu_from_stats(stats: np.ndarray):
    """sacrebleu score object from summed sufficient statistics ([10] or [N, 10])."""
    totals = stats.sum(axis=0) if stats.ndim == 2 else stats
    totals = [int(x) for x in totals]
    return BLEU.compute_bleu(
        correct=totals[:NGRAM_ORDER],
        total=totals[NGRAM_ORDER:2 * NGRAM_ORDER],
        sys_len=totals[2 * NGRAM_ORDER],
        ref_len=totals[2 * NGRAM_ORDER + 1],
        smooth_method=BLEU_SMOOTHING,
    )


def bootstrap_indices(n: int, resamples: int = DEFAULT_RESAMPLES, seed: int = DEFAULT_BOOTSTRAP_SEED) -> np.ndarray:
    """Sentence indices of every resample, [resamples, n], drawn with replacement."""
    return np.random.default_rng(seed).integers(0, n, size=(resamples, n))


def _resampled_scores(stats: np.ndarray, indices: np.ndarray) -> np.ndarray:
    sums = stats[indices].sum(axis=1)
    return np.array([bleu_from_stats(row).score for row in sums], dtype=np.float64)


def bleu(
    hypotheses: Sequence[str],
    references: Sequence[str],
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = DEFAULT_BOOTSTRAP_SEED,
) -> BleuReport:
    """
    Corpus BLEU-4 (13a tokenization, exponential smoothing, standard brevity
    penalty) with a percentile bootstrap confidence interval.

    Raises:
        DomainError: On mismatched or empty inputs
    """
    _check_lengths(hypotheses, references)
    metric = make_metric()
    result = metric.corpus_score(list(hypotheses), [list(references)])
    score = float(result.score)

    ci_low = ci_high = score
    if resamples > 0:
        samples = _resampled_scores(sentence_stats(hypotheses, references), bootstrap_indices(len(hypotheses), resamples, seed))
        tail = (1.0 - CI_LEVEL) / 2.0 * 100.0
        ci_low = min(float(np.percentile(samples, tail)), score)
        ci_high = max(float(np.percentile(samples, 100.0 - tail)), score)

    report = BleuReport(
        score=score,
        precisions=[float(p) for p in result.precisions],
        brevity_penalty=float(result.bp),
        counts=[int(c) for c in result.counts],
        totals=[int(t) for t in result.totals],
        sys_len=int(result.sys_len),
        ref_len=int(result.ref_len),
        ci_low=ci_low,
        ci_high=ci_high,
        signature=f"{metric.get_signature()}|bs:{resamples}|seed:{seed}",
    )
    logger.info(f"BLEU {score:.2f} [{ci_low:.2f}, {ci_high:.2f}] over {len(hypotheses)} sentences")
    return report


def paired_bootstrap(
    sys_a: Sequence[str],
    sys_b: Sequence[str],
    references: Sequence[str],
    resamples: int = DEFAULT_RESAMPLES,
    seed: int = DEFAULT_BOOTSTRAP_SEED,
) -> BootstrapResult:
    """
    Paired bootstrap resampling.

    Both systems are scored on the same resampled sentence sets. The
    p-value is the share of resamples where B does not beat A, counting
    exact ties as one half: (#[B < A] + 0.5 * #[B == A]) / resamples.
    A small p-value means B is significantly better than A.

    Raises:
        DomainError: On mismatched or empty inputs
    """
    _check_lengths(sys_a, references)
    _check_lengths(sys_b, references)
    if resamples < 1:
        raise DomainError(f"resamples must be >= 1, got {resamples}")

    stats_a = sentence_stats(sys_a, references)
    stats_b = sentence_stats(sys_b, references)
    indices = bootstrap_indices(len(references), resamples, seed)
    scores_a = _resampled_scores(stats_a, indices)
    scores_b = _resampled_scores(stats_b, indices)

    a_better = int(np.sum(scores_b < scores_a))
    b_better = int(np.sum(scores_b > scores_a))
    ties = resamples - a_better - b_better
    p_value = (a_better + 0.5 * ties) / resamples

    result = BootstrapResult(
        p_value=p_value,
        bleu_a=float(bleu_from_stats(stats_a).score),
        bleu_b=float(bleu_from_stats(stats_b).score),
        resamples=resamples,
        a_better=a_better,
        b_better=b_better,
        ties=ties,
        samples_a=scores_a.tolist(),
        samples_b=scores_b.tolist(),
    )
    logger.info(
        f"Paired bootstrap: A {result.bleu_a:.2f} vs B {result.bleu_b:.2f}, "
        f"p = {p_value:.4f} ({b_better} B wins, {a_better} A wins, {ties} ties)"
    )
    return result
