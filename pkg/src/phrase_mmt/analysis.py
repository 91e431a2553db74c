"""
Representation and translation analyses.

Handles:
- 2-D PCA projections and silhouette scores of raw vs phrase-guided representations
- Average relevance score curves for in-domain and out-of-domain phrases
- The K sweep over retrieved regions (raw features vs phrase-guided reps)
- The source-degradation experiment (text-only baseline vs full system)
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.metrics import silhouette_score

from .config import Settings, with_seed
from .corpus import CorpusSplit, SentenceImagePair, masked_fraction
from .errors import AnalysisError
from .evaluation import paired_bootstrap
from .grounding import PhraseChunker, extract_phrases
from .lexicon import out_of_domain_phrases
from .retrieval import RetrievalIndex, TokenTableEncoder, ars_curve
from .pipeline import (
    build_examples,
    build_retrieval_stack,
    build_vocabulary,
    load_experiment_corpus,
    make_chunker,
    references,
    score_translations,
    train_translation_system,
    translate_examples,
)

logger = logging.getLogger(__name__)

PROJECTION_HEADER = ["kind", "head", "entry", "x", "y"]
ARS_HEADER = ["k", "domain", "ars"]
SWEEP_HEADER = ["seed", "k", "rep_kind", "bleu", "ci_low", "ci_high"]
DEGRADATION_HEADER = ["seed", "setting", "model", "bleu", "ci_low", "ci_high", "p_value", "masked_fraction"]
SUMMARY_HEADER = ["setting", "model", "mean", "min", "max", "seeds"]


@dataclass
class PcaResult:
    """Top-2 principal components of mean-centered data."""
    projection: np.ndarray   # [N, 2]
    variances: np.ndarray    # [2], descending
    components: np.ndarray   # [2, D]


@dataclass
class ClusterReport:
    """Head-cluster analysis of raw region features vs phrase-guided reps."""
    silhouette_raw: float
    silhouette_guided: float
    heads: list[str] = field(default_factory=list)
    projection_rows: list[dict] = field(default_factory=list)
    stats: dict = field(default_factory=dict)


@dataclass
class ExperimentTable:
    """Rows of an experiment plus per-group summaries over seeds."""
    rows: list[dict] = field(default_factory=list)
    summary: list[dict] = field(default_factory=list)


def pca_2d(data: np.ndarray) -> PcaResult:
    """
    Project onto the two leading eigenvectors of the sample covariance.

    Each component's sign is fixed so its largest-magnitude entry is positive.

    Raises:
        AnalysisError: With fewer than 2 rows or 2 columns
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 2:
        raise AnalysisError(f"PCA needs at least a 2x2 matrix, got shape {data.shape}")

    centered = data - data.mean(axis=0)
    covariance = centered.T @ centered / (data.shape[0] - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1][:2]
    components = eigenvectors[:, order].T
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaResult(
        projection=centered @ components.T,
        variances=np.maximum(eigenvalues[order], 0.0),
        components=components,
    )


def select_clusters(
    heads: Sequence[str],
    top_clusters: int = 8,
    per_cluster: int = 1000,
    seed: int = 0,
) -> tuple[np.ndarray, list[str]]:
    """
    Entry indices of the largest head clusters, sampled down to per_cluster each.

    Clusters are ranked by size (ties by head). Returns (indices, head order).
    """
    members: dict[str, list[int]] = defaultdict(list)
    for i, head in enumerate(heads):
        members[head].append(i)
    ranked = sorted(members, key=lambda h: (-len(members[h]), h))[:top_clusters]

    rng = np.random.default_rng(seed)
    chosen = []
    for head in ranked:
        entries = np.array(members[head])
        if len(entries) > per_cluster:
            entries = np.sort(rng.choice(entries, per_cluster, replace=False))
        chosen.append(entries)
    indices = np.concatenate(chosen) if chosen else np.zeros(0, dtype=np.int64)
    return indices, ranked


def _silhouette(data: np.ndarray, labels: Sequence[str]) -> float:
    distinct = len(set(labels))
    if distinct < 2 or distinct >= len(labels):
        raise AnalysisError(f"silhouette needs 2..n-1 clusters, got {distinct} for {len(labels)} points")
    return float(silhouette_score(data, labels, metric="euclidean"))


def run_cluster_analysis(
    index: RetrievalIndex,
    top_clusters: int = 8,
    per_cluster: int = 1000,
    seed: int = 0,
) -> ClusterReport:
    """
    Cluster index entries by the head noun of their phrase and compare how
    well raw features and phrase-guided reps separate those clusters.

    The phrase-guided reps are the ones cached in the index by the CVAE
    checkpoint it was built with.

    Raises:
        AnalysisError: If fewer than 2 clusters exist
    """
    heads = [pair.head_token for pair in index.pairs]
    indices, ranked = select_clusters(heads, top_clusters, per_cluster, seed)
    if len(ranked) < 2:
        raise AnalysisError(f"need at least 2 head clusters, found {len(ranked)}")

    labels = [heads[i] for i in indices]
    report = ClusterReport(silhouette_raw=0.0, silhouette_guided=0.0, heads=ranked)
    for kind, attr in (("raw", "silhouette_raw"), ("guided", "silhouette_guided")):
        data = index.payload(kind)[indices]
        setattr(report, attr, _silhouette(data, labels))
        projection = pca_2d(data)
        report.stats[f"variance_{kind}"] = projection.variances.tolist()
        for entry, label, (x, y) in zip(indices.tolist(), labels, projection.projection):
            report.projection_rows.append({"kind": kind, "head": label, "entry": entry, "x": float(x), "y": float(y)})

    report.stats.update({"clusters": len(ranked), "points": len(indices)})
    logger.info(
        f"Clusters: {len(ranked)} heads, {len(indices)} points; "
        f"silhouette raw {report.silhouette_raw:.4f}, guided {report.silhouette_guided:.4f}"
    )
    return report


def in_domain_phrases(corpus: Sequence[SentenceImagePair], chunker: PhraseChunker) -> list[list[str]]:
    return [list(tokens) for pair in corpus for _, tokens in extract_phrases(pair, chunker)]


def run_ars_analysis(
    index: RetrievalIndex,
    encoder: TokenTableEncoder,
    in_domain: Sequence[Sequence[str]],
    out_of_domain: Sequence[Sequence[str]],
    k_max: int = 5,
) -> list[dict]:
    """ARS(k) for k = 1..k_max on both phrase sets, one row per (k, domain)."""
    rows = []
    for domain, phrases in (("in_domain", in_domain), ("out_of_domain", out_of_domain)):
        curve = ars_curve(phrases, index, encoder, k_max)
        for k, value in enumerate(curve, start=1):
            rows.append({"k": k, "domain": domain, "ars": value})
        logger.info(f"ARS {domain}: " + ", ".join(f"k={k} {v:.4f}" for k, v in enumerate(curve, start=1)))
    return rows


def default_ars_phrase_sets(
    corpus: Sequence[SentenceImagePair],
    chunker: PhraseChunker,
    ood_count: int = 500,
    seed: int = 0,
) -> tuple[list[list[str]], list[list[str]]]:
    """Noun phrases of a held-out corpus and news-style phrases of the same shape."""
    return in_domain_phrases(corpus, chunker), out_of_domain_phrases(ood_count, seed)


def summarize(rows: Sequence[dict], keys: Sequence[str], value: str = "bleu") -> list[dict]:
    """Mean and range of `value` over seeds, per group of `keys`."""
    groups: dict[tuple, list[float]] = defaultdict(list)
    for row in rows:
        groups[tuple(row[key] for key in keys)].append(float(row[value]))
    summary = []
    for group, values in groups.items():
        entry = dict(zip(keys, group))
        entry.update({"mean": float(np.mean(values)), "min": min(values), "max": max(values), "seeds": len(values)})
        summary.append(entry)
    return summary


def run_degradation_experiment(
    settings: Settings,
    split: Optional[CorpusSplit] = None,
    include_unmasked: bool = True,
) -> ExperimentTable:
    """
    Train and evaluate the text-only baseline and the full system per seed,
    on masked sources and (optionally) on the unmasked control.

    The masked rows carry the paired bootstrap p-value of full vs baseline.
    """
    exp = settings.experiment
    split = split or load_experiment_corpus(settings)
    vocab = build_vocabulary(split.train)
    chunker = make_chunker(exp)
    refs = references(split.test)
    rate = masked_fraction(split.train + split.test)
    logger.info(f"Source degradation masks {rate:.1%} of source tokens")

    table = ExperimentTable()
    for seed in exp.seeds:
        seeded = with_seed(settings, seed)
        stack = build_retrieval_stack(split.train, seeded, vocab)
        retriever = stack.retriever(exp.k, "guided", exp.exclude_same_source)

        for setting in (["unmasked", "masked"] if include_unmasked else ["masked"]):
            masked = setting == "masked"
            outputs = {}
            for model_name in ("baseline", "full"):
                system_retriever = retriever if model_name == "full" else None
                train_examples = build_examples(split.train, vocab, system_retriever, chunker, masked)
                test_examples = build_examples(split.test, vocab, system_retriever, chunker, masked)
                trained = train_translation_system(
                    train_examples, vocab, retriever.rep_dim, seeded.translator, use_fusion=model_name == "full"
                )
                outputs[model_name] = translate_examples(trained.model, test_examples, vocab, seeded.translator.beam)
                report = score_translations(outputs[model_name], refs, exp)
                table.rows.append({
                    "seed": seed,
                    "setting": setting,
                    "model": model_name,
                    "bleu": report.score,
                    "ci_low": report.ci_low,
                    "ci_high": report.ci_high,
                    "p_value": None,
                    "masked_fraction": rate if masked else 0.0,
                })

            comparison = paired_bootstrap(
                outputs["baseline"], outputs["full"], refs, exp.bootstrap_resamples, exp.bootstrap_seed
            )
            table.rows[-1]["p_value"] = comparison.p_value
            logger.info(
                f"Seed {seed} {setting}: baseline {table.rows[-2]['bleu']:.2f} -> full {table.rows[-1]['bleu']:.2f} "
                f"(p = {comparison.p_value:.4f})"
            )

    table.summary = summarize(table.rows, ["setting", "model"])
    return table


def run_k_sweep(
    settings: Settings,
    split: Optional[CorpusSplit] = None,
    k_values: Optional[Sequence[int]] = None,
) -> ExperimentTable:
    """
    BLEU on the masked test split for each K and each aggregated payload
    (raw region features or phrase-guided reps), per seed.

    With sweep_retrain the translator is retrained for every (K, kind);
    otherwise one translator per kind is trained at the configured K and
    only the test-time retrieval changes.
    """
    exp = settings.experiment
    k_values = list(k_values or exp.k_values)
    split = split or load_experiment_corpus(settings)
    vocab = build_vocabulary(split.train)
    chunker = make_chunker(exp)
    refs = references(split.test)

    table = ExperimentTable()
    for seed in exp.seeds:
        seeded = with_seed(settings, seed)
        stack = build_retrieval_stack(split.train, seeded, vocab)

        for rep_kind in ("raw", "guided"):
            fixed_model = None
            if not exp.sweep_retrain:
                retriever = stack.retriever(exp.k, rep_kind, exp.exclude_same_source)
                train_examples = build_examples(split.train, vocab, retriever, chunker, mask_source=True)
                fixed_model = train_translation_system(train_examples, vocab, retriever.rep_dim, seeded.translator).model

            for k in k_values:
                retriever = stack.retriever(k, rep_kind, exp.exclude_same_source)
                model = fixed_model
                if model is None:
                    train_examples = build_examples(split.train, vocab, retriever, chunker, mask_source=True)
                    model = train_translation_system(train_examples, vocab, retriever.rep_dim, seeded.translator).model
                test_examples = build_examples(split.test, vocab, retriever, chunker, mask_source=True)
                report = score_translations(translate_examples(model, test_examples, vocab, seeded.translator.beam), refs, exp)
                table.rows.append({
                    "seed": seed,
                    "k": k,
                    "rep_kind": rep_kind,
                    "bleu": report.score,
                    "ci_low": report.ci_low,
                    "ci_high": report.ci_high,
                })
                logger.info(f"Seed {seed} K={k} {rep_kind}: BLEU {report.score:.2f}")

    table.summary = summarize(table.rows, ["k", "rep_kind"])
    return table
