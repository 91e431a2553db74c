"""
Unit tests for corpus BLEU, bootstrap intervals and paired significance.
"""

import math

import numpy as np
import pytest

from phrase_mmt.errors import DomainError
from phrase_mmt.evaluation import (
    bleu,
    bleu_from_stats,
    bootstrap_indices,
    make_metric,
    paired_bootstrap,
    sentence_stats,
)

HYPOTHESES = ["the cat sat on the mat", "a dog walks"]
REFERENCES = ["the cat sat on the mat", "a dog runs fast"]


def disjoint_corpus(sentences: int = 10, length: int = 9) -> tuple[list[str], list[str]]:
    hypotheses = [" ".join(f"h{i}x{j}" for j in range(length)) for i in range(sentences)]
    references = [" ".join(f"r{i}x{j}" for j in range(length)) for i in range(sentences)]
    return hypotheses, references


def mixed_corpus() -> tuple[list[str], list[str], list[str]]:
    """References, a weaker system and a perfect one."""
    references = [
        "a black dog runs near the red car .",
        "the small child plays with a white ball .",
        "a young woman waits beside the old tree .",
        "the big horse stands under a green tree .",
        "a red boat rests behind the blue car .",
        "the old man sits on a yellow bike .",
        "a white cat plays near the small child .",
        "the blue shirt rests on a big chair .",
    ]
    weaker = [
        "a black dog walks near the car .",
        "the child plays with the ball .",
        "a woman stands beside a tree .",
        "the horse stands under a tree .",
        "a boat rests behind the car .",
        "the man sits on a bike .",
        "a cat sleeps near the child .",
        "the shirt lies on a chair .",
    ]
    return references, weaker, list(references)


class TestBleu:
    """Tests for corpus BLEU."""

    def test_identical(self):
        """Should give 100 for hypotheses equal to the references."""
        report = bleu(REFERENCES, REFERENCES, resamples=50)
        assert report.score == pytest.approx(100.0)
        assert report.ci_low == pytest.approx(100.0)

    def test_no_overlap_near_zero(self):
        """Should give a smoothed score below 1 when nothing matches."""
        hypotheses, references = disjoint_corpus()
        report = bleu(hypotheses, references, resamples=0)
        assert 0.0 < report.score < 1.0
        assert report.counts == [0, 0, 0, 0]

    def test_hand_computed_fixture(self):
        """Should match the brevity-penalized geometric mean of the n-gram precisions."""
        report = bleu(HYPOTHESES, REFERENCES, resamples=0)
        assert report.counts == [8, 6, 4, 3]
        assert report.totals == [9, 7, 5, 3]
        assert (report.sys_len, report.ref_len) == (9, 10)
        expected = 100.0 * math.exp(-1.0 / 9.0) * (192.0 / 315.0) ** 0.25
        assert report.score == pytest.approx(expected, abs=1e-6)
        assert report.score == pytest.approx(79.07, abs=0.01)
        assert report.ci_low == report.ci_high == report.score

    def test_permutation_invariant(self):
        """Should not depend on sentence order."""
        references, weaker, _ = mixed_corpus()
        order = np.random.default_rng(0).permutation(len(references))
        shuffled = bleu([weaker[i] for i in order], [references[i] for i in order], resamples=0)
        assert shuffled.score == pytest.approx(bleu(weaker, references, resamples=0).score)

    def test_interval_matches_resampled_corpus_scores(self):
        """Should take percentiles of corpus BLEU over the seeded resamples."""
        references, weaker, _ = mixed_corpus()
        report = bleu(weaker, references, resamples=200, seed=7)

        metric = make_metric()
        oracle = []
        for row in bootstrap_indices(len(references), 200, 7):
            sample = metric.corpus_score([weaker[i] for i in row], [[references[i] for i in row]])
            oracle.append(sample.score)
        assert report.ci_low == pytest.approx(min(np.percentile(oracle, 2.5), report.score))
        assert report.ci_high == pytest.approx(max(np.percentile(oracle, 97.5), report.score))
        assert report.ci_low <= report.score <= report.ci_high

    def test_signature(self):
        """Should record tokenizer, smoothing and resampling settings."""
        signature = bleu(HYPOTHESES, REFERENCES, resamples=10, seed=3).signature
        assert "tok:13a" in signature
        assert "smooth:exp" in signature
        assert signature.endswith("|bs:10|seed:3")

    def test_invalid_inputs(self):
        """Should reject mismatched or empty inputs."""
        with pytest.raises(DomainError):
            bleu(["a"], ["a", "b"])
        with pytest.raises(DomainError):
            bleu([], [])


class TestSufficientStatistics:
    """Tests for per-sentence statistics."""

    def test_rows(self):
        """Should list matches, totals and lengths per sentence."""
        stats = sentence_stats(HYPOTHESES, REFERENCES)
        assert stats[0].tolist() == [6, 5, 4, 3, 6, 5, 4, 3, 6, 6]
        assert stats[1].tolist() == [2, 1, 0, 0, 3, 2, 1, 0, 3, 4]

    def test_summed_stats_reproduce_corpus_bleu(self):
        """Should give corpus BLEU from summed statistics."""
        stats = sentence_stats(HYPOTHESES, REFERENCES)
        assert bleu_from_stats(stats).score == pytest.approx(bleu(HYPOTHESES, REFERENCES, resamples=0).score)

    def test_bootstrap_indices_seeded(self):
        """Should draw the same resamples for the same seed."""
        a = bootstrap_indices(5, 20, 1)
        assert a.shape == (20, 5)
        assert np.array_equal(a, bootstrap_indices(5, 20, 1))
        assert a.min() >= 0 and a.max() < 5


class TestPairedBootstrap:
    """Tests for paired bootstrap resampling."""

    def test_identical_systems(self):
        """Should give p = 0.5 when every resample ties."""
        references, weaker, _ = mixed_corpus()
        result = paired_bootstrap(weaker, weaker, references, resamples=100)
        assert result.p_value == 0.5
        assert result.ties == 100

    def test_symmetric(self):
        """Should give complementary p-values when the systems swap."""
        references, weaker, _ = mixed_corpus()
        other = list(weaker)
        other[0], other[3] = references[0], references[3]
        other[5] = "the man rests on the bike ."
        forward = paired_bootstrap(weaker, other, references, resamples=200)
        backward = paired_bootstrap(other, weaker, references, resamples=200)
        assert forward.p_value + backward.p_value == pytest.approx(1.0)

    def test_dominant_system(self):
        """Should give a tiny p-value when B is perfect and A is not."""
        references, weaker, perfect = mixed_corpus()
        result = paired_bootstrap(weaker, perfect, references)
        assert result.p_value < 0.01
        assert result.bleu_b == pytest.approx(100.0)
        assert result.bleu_a < result.bleu_b
        assert len(result.samples_a) == result.resamples == 1000

    def test_invalid(self):
        """Should reject zero resamples and mismatched systems."""
        references, weaker, _ = mixed_corpus()
        with pytest.raises(DomainError):
            paired_bootstrap(weaker, weaker, references, resamples=0)
        with pytest.raises(DomainError):
            paired_bootstrap(weaker[:-1], weaker, references)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
