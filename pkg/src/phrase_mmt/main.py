"""
Main entry point for the phrase-level retrieval-augmented translation toolkit.

Orchestrates corpus generation, phrase-set building, CVAE training,
indexing, translator training, decoding, scoring and the analyses.
"""

import argparse
import dataclasses
import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Callable, Optional, Sequence

from .analysis import (
    ARS_HEADER,
    DEGRADATION_HEADER,
    PROJECTION_HEADER,
    SWEEP_HEADER,
    default_ars_phrase_sets,
    run_ars_analysis,
    run_cluster_analysis,
    run_degradation_experiment,
    run_k_sweep,
)
from .config import SCALES, Settings, add_config_arguments, apply_overrides, load_config, snapshot
from .corpus import gen_synthetic, load_corpus, masked_fraction, save_corpus, split_corpus
from .errors import PhraseMMTError, UsageError
from .evaluation import bleu, paired_bootstrap
from .grounding import (
    LexiconChunker,
    PhraseChunker,
    PhraseSetBuilder,
    PhraseSetConfig,
    PrecomputedGrounding,
    RegionSpanChunker,
    load_phrase_set,
    save_phrase_set,
)
from .latent_model import load_latent_model, mean_kl, reconstruction_accuracy, save_latent_model, train_cvae
from .pipeline import (
    build_examples,
    build_vocabulary,
    make_encoder,
    make_grounding,
    references,
    train_translation_system,
    translate_examples,
)
from .retrieval import PhraseRetriever, build_index, load_index, save_index, topk
from .storage import RunStorage, read_lines
from .tokenizer import tokenize
from .translator import load_translation_model, save_translation_model

# Configure logging
LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

CORPUS_FILE = "corpus.jsonl"
PHRASE_SET_FILE = "pset.jsonl"
CVAE_FILE = "cvae.npz"
INDEX_FILE = "index.bin"
TRANSLATOR_FILE = "nmt.npz"
REFERENCES_FILE = "references.txt"
QUERY_HEADER = ["rank", "score", "phrase", "head", "source_id"]

logger = logging.getLogger(__name__)


def setup_logging(
    log_level: str = "INFO",
    log_dir: Optional[str] = None,
) -> None:
    """
    Configure logging for the application.

    Args:
        log_level: Logging level (DEBUG, INFO, WARNING, ERROR)
        log_dir: Directory for log files (None for console only)
    """
    level = getattr(logging, log_level.upper(), logging.INFO)

    handlers: list[logging.Handler] = [logging.StreamHandler()]

    # Add file handler if log_dir specified
    if log_dir:
        log_path = Path(log_dir)
        log_path.mkdir(parents=True, exist_ok=True)
        log_file = log_path / f"{datetime.now().strftime('%Y-%m-%d')}.log"
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(
        level=level,
        format=LOG_FORMAT,
        datefmt=LOG_DATE_FORMAT,
        handlers=handlers,
    )


class UsageArgumentParser(argparse.ArgumentParser):
    """Raises UsageError instead of exiting, so main() controls the exit code."""

    def error(self, message: str) -> None:
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(add_help=False)

    # Run options
    parser.add_argument(
        "--config",
        type=str,
        default=None,
        help="INI file with [synth] [latent] [cvae] [translator] [experiment] sections",
    )
    parser.add_argument(
        "--scale",
        type=str,
        choices=list(SCALES),
        default="desk",
        help="Default model and training sizes",
    )
    parser.add_argument(
        "--output-dir",
        type=str,
        default=None,
        help="Run directory (default: <experiment.output_dir>/<command>)",
    )

    # Logging options
    parser.add_argument(
        "--log-level",
        type=str,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Logging level",
    )
    parser.add_argument(
        "--log-dir",
        type=str,
        default=None,
        help="Directory for log files (default: <output-dir>/logs)",
    )

    add_config_arguments(parser)
    return parser


def _add_chunker(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--chunker",
        type=str,
        choices=["lexicon", "regions"],
        default="lexicon",
        help="Phrase source: rule-based chunker or the annotated region spans",
    )


def _add_retrieval_inputs(parser: argparse.ArgumentParser, required: bool = True) -> None:
    parser.add_argument("--index", type=str, required=required, default=None, help="Retrieval index file")
    parser.add_argument("--cvae", type=str, required=required, default=None, help="CVAE checkpoint (vocabulary source)")
    parser.add_argument(
        "--encoder-file",
        type=str,
        default=None,
        help="Token vectors JSONL for the phrase encoder (default: seeded static table)",
    )


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subcommand per pipeline stage or analysis."""
    parser = UsageArgumentParser(
        prog="phrase-mmt",
        description="Phrase-level retrieval-augmented multimodal translation",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    common = _common_parser()
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=UsageArgumentParser)
    subparsers.required = True

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        return subparsers.add_parser(
            name, parents=[common], help=help_text, description=help_text,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )

    # Data options
    p = add("gen-synth", "Generate the synthetic grounded corpus and its splits")
    p.add_argument("--seed", type=int, default=None, help="Shortcut for --synth-seed")
    p.add_argument("--sentences", type=int, default=None, help="Shortcut for --synth-sentences")

    p = add("build-pset", "Build the phrase-level image set from a corpus")
    p.add_argument("--corpus", type=str, required=True, help="Corpus JSONL")
    p.add_argument("--groundings", type=str, default=None, help="Precomputed groundings JSONL")
    _add_chunker(p)

    # Model options
    p = add("train-cvae", "Train the phrase-guided CVAE")
    p.add_argument("--pset", type=str, required=True, help="Phrase set JSONL")
    p.add_argument("--corpus", type=str, required=True, help="Training corpus JSONL (vocabulary source)")

    p = add("build-index", "Precompute phrase embeddings and representations")
    p.add_argument("--pset", type=str, required=True, help="Phrase set JSONL")
    p.add_argument("--cvae", type=str, required=True, help="CVAE checkpoint")
    p.add_argument("--encoder-file", type=str, default=None, help="Token vectors JSONL for the phrase encoder")

    p = add("query", "Show the top-K entries for a phrase")
    _add_retrieval_inputs(p)
    p.add_argument("--phrase", type=str, required=True, help="Query phrase")
    p.add_argument("--k", type=int, default=None, help="Entries to show (default: experiment.k)")

    p = add("train-nmt", "Train the translator (full system or text-only baseline)")
    p.add_argument("--corpus", type=str, required=True, help="Training corpus JSONL")
    _add_retrieval_inputs(p, required=False)
    p.add_argument("--text-only", action="store_true", help="Train the plain Transformer baseline")
    p.add_argument("--rep-kind", type=str, choices=["guided", "raw"], default="guided", help="Aggregated payload")
    p.add_argument("--mask", type=str, choices=["on", "off"], default="off", help="Mask visually grounded source tokens")
    _add_chunker(p)

    p = add("translate", "Translate a corpus with beam search")
    p.add_argument("--model", type=str, required=True, help="Translator checkpoint")
    p.add_argument("--corpus", type=str, required=True, help="Corpus JSONL to translate")
    _add_retrieval_inputs(p, required=False)
    p.add_argument("--mask", type=str, choices=["on", "off"], default=None, help="Source masking (default: as trained)")
    p.add_argument("--beam", type=int, default=None, help="Beam size (default: translator.beam)")

    # Evaluation options
    p = add("evaluate", "Corpus BLEU with a bootstrap confidence interval")
    p.add_argument("--hyp", type=str, required=True, help="Hypotheses, one per line")
    p.add_argument("--ref", type=str, default=None, help="References, one per line")
    p.add_argument("--corpus", type=str, default=None, help="Corpus JSONL whose targets are the references")

    p = add("bootstrap", "Paired bootstrap resampling between two systems")
    p.add_argument("--sys-a", type=str, required=True, help="System A hypotheses (baseline)")
    p.add_argument("--sys-b", type=str, required=True, help="System B hypotheses")
    p.add_argument("--ref", type=str, required=True, help="References, one per line")

    # Analysis options
    p = add("analyze-ars", "Average relevance scores for in-domain and out-of-domain phrases")
    _add_retrieval_inputs(p)
    p.add_argument("--corpus", type=str, required=True, help="Held-out corpus JSONL (in-domain phrases)")
    p.add_argument("--seed", type=int, default=0, help="Seed of the out-of-domain phrase sample")
    _add_chunker(p)

    p = add("analyze-clusters", "Silhouette scores and PCA projections by head cluster")
    p.add_argument("--index", type=str, required=True, help="Retrieval index file")
    p.add_argument("--seed", type=int, default=0, help="Seed of the per-cluster sample")

    add("sweep-k", "BLEU for K retrieved regions, raw features vs phrase-guided reps")
    add("degrade", "Source-degradation experiment: text-only baseline vs full system")

    return parser


def resolve_settings(args: argparse.Namespace) -> Settings:
    """Defaults < INI file < command line flags."""
    settings = apply_overrides(load_config(args.config, args.scale), args)
    if args.command == "gen-synth":
        synth_values = {}
        if args.seed is not None:
            synth_values["seed"] = args.seed
        if args.sentences is not None:
            synth_values["sentences"] = args.sentences
        settings.synth = dataclasses.replace(settings.synth, **synth_values)
    settings.validate()
    return settings


def print_banner(title: str) -> None:
    print("\n" + "=" * 60)
    print(title)
    print("=" * 60)


def _make_chunker(name: str) -> PhraseChunker:
    return RegionSpanChunker() if name == "regions" else LexiconChunker()


def _load_retrieval(args: argparse.Namespace, settings: Settings):
    """(index, encoder, vocab) from --index / --cvae / --encoder-file."""
    if not args.index or not args.cvae:
        raise UsageError(f"{args.command} needs --index and --cvae")
    index = load_index(args.index)
    _, vocab, _ = load_latent_model(args.cvae)
    exp = settings.experiment
    if args.encoder_file:
        exp = dataclasses.replace(exp, encoder_path=args.encoder_file)
    return index, make_encoder(vocab, exp), vocab


def cmd_gen_synth(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    exp = settings.experiment
    corpus = gen_synthetic(settings.synth)
    split = split_corpus(corpus, exp.valid_fraction, exp.test_fraction, exp.split_seed)
    save_corpus(corpus, storage.path(CORPUS_FILE))
    for name, part in (("train", split.train), ("valid", split.valid), ("test", split.test)):
        save_corpus(part, storage.path(f"{name}.jsonl"))

    stats = {
        "sentences": len(corpus),
        "train": len(split.train),
        "valid": len(split.valid),
        "test": len(split.test),
        "masked_fraction": masked_fraction(corpus),
    }
    storage.save_json("stats.json", stats)
    print_banner("Synthetic corpus")
    print(f"  Sentences: {stats['sentences']} (train {stats['train']}, valid {stats['valid']}, test {stats['test']})")
    print(f"  Masked fraction under degradation: {stats['masked_fraction']:.1%}")
    print(f"  Output: {storage.output_dir}")
    return 0


def cmd_build_pset(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    corpus = load_corpus(args.corpus)
    grounding = PrecomputedGrounding.from_jsonl(args.groundings) if args.groundings else make_grounding(settings.experiment)
    builder = PhraseSetBuilder(
        _make_chunker(args.chunker), grounding, PhraseSetConfig(settings.experiment.grounding_policy)
    )
    result = builder.build(corpus)
    save_phrase_set(result.pairs, storage.path(PHRASE_SET_FILE))
    storage.save_json("pset_stats.json", result.stats)
    print_banner("Phrase set")
    for key, value in result.stats.items():
        print(f"  {key}: {value}")
    return 0


def cmd_train_cvae(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    pairs = load_phrase_set(args.pset)
    if not pairs:
        raise UsageError(f"{args.pset} holds no phrase/region pairs")
    vocab = build_vocabulary(load_corpus(args.corpus))
    latent = settings.latent
    feature_dim = len(pairs[0].region_feature)
    if latent.feature_dim != feature_dim:
        logger.info(f"Using feature_dim {feature_dim} from the phrase set")
        latent = dataclasses.replace(latent, feature_dim=feature_dim)

    result = train_cvae(pairs, vocab, latent, settings.cvae)
    save_latent_model(result.model, vocab, storage.path(CVAE_FILE), extra={"stats": result.stats})
    storage.save_json("cvae_log.json", result.log)
    vocab.save(storage.path("vocab.json"))

    accuracy = reconstruction_accuracy(result.model, pairs, vocab)
    kl = mean_kl(result.model, pairs, vocab)
    storage.save_json("cvae_stats.json", {**result.stats, "reconstruction_accuracy": accuracy, "mean_kl": kl})
    print_banner("CVAE")
    print(f"  Pairs: {len(pairs)}  Steps: {result.stats['steps']}")
    print(f"  Reconstruction accuracy: {accuracy:.4f}")
    print(f"  Mean KL: {kl:.4f} nats")
    return 0


def cmd_build_index(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    pairs = load_phrase_set(args.pset)
    model, vocab, _ = load_latent_model(args.cvae)
    exp = settings.experiment
    if args.encoder_file:
        exp = dataclasses.replace(exp, encoder_path=args.encoder_file)
    index = build_index(pairs, make_encoder(vocab, exp), model, vocab, exp.rep_mode)
    path = save_index(index, storage.path(INDEX_FILE))
    print_banner("Retrieval index")
    print(f"  Entries: {len(index)}")
    print(f"  Encoder: {index.encoder_id}")
    print(f"  Checkpoint: {index.checkpoint_id}")
    print(f"  Output: {path}")
    return 0


def cmd_query(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    index, encoder, _ = _load_retrieval(args, settings)
    if index.encoder_id != encoder.encoder_id:
        raise UsageError(f"index was built with encoder {index.encoder_id}, not {encoder.encoder_id}")
    tokens = tokenize(args.phrase)
    result = topk(encoder.encode(tokens), args.k or settings.experiment.k, index)

    rows = []
    print_banner(f"Top {len(result)} for {' '.join(tokens)!r}")
    for rank, (entry, score) in enumerate(zip(result.indices.tolist(), result.scores.tolist()), start=1):
        pair = index.pairs[entry]
        rows.append({
            "rank": rank,
            "score": score,
            "phrase": " ".join(pair.phrase_tokens),
            "head": pair.head_token,
            "source_id": pair.source_id,
        })
        print(f"{rank:2}. [{score:.4f}] {' '.join(pair.phrase_tokens)}  ({pair.source_id})")
    storage.save_csv(QUERY_HEADER, rows)
    return 0


def cmd_train_nmt(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    corpus = load_corpus(args.corpus)
    exp = settings.experiment
    retriever = None
    if args.text_only:
        vocab = load_latent_model(args.cvae)[1] if args.cvae else build_vocabulary(corpus)
        rep_dim = settings.translator.d_model
    else:
        index, encoder, vocab = _load_retrieval(args, settings)
        retriever = PhraseRetriever(index, encoder, exp.k, args.rep_kind, exp.exclude_same_source)
        rep_dim = retriever.rep_dim

    mask_source = args.mask == "on"
    examples = build_examples(corpus, vocab, retriever, _make_chunker(args.chunker), mask_source)
    result = train_translation_system(examples, vocab, rep_dim, settings.translator, use_fusion=not args.text_only)
    save_translation_model(result.model, vocab, storage.path(TRANSLATOR_FILE), extra={
        "k": exp.k,
        "rep_kind": args.rep_kind,
        "mask_source": mask_source,
        "chunker": args.chunker,
        "stats": result.stats,
    })
    storage.save_json("train_log.json", result.log)
    print_banner("Translator")
    print(f"  System: {'text-only baseline' if args.text_only else 'full system'}")
    print(f"  Sentences: {len(examples)}  Steps: {result.stats['steps']}")
    print(f"  Final loss: {result.log[-1]['loss']:.4f}" if result.log else "  No epochs run")
    return 0


def cmd_translate(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    model, vocab, metadata = load_translation_model(args.model)
    corpus = load_corpus(args.corpus)
    retriever = None
    if model.use_fusion:
        index, encoder, _ = _load_retrieval(args, settings)
        retriever = PhraseRetriever(
            index, encoder, metadata.get("k", settings.experiment.k), metadata.get("rep_kind", "guided"),
            settings.experiment.exclude_same_source,
        )

    mask_source = metadata.get("mask_source", False) if args.mask is None else args.mask == "on"
    chunker = _make_chunker(metadata.get("chunker", "lexicon"))
    examples = build_examples(corpus, vocab, retriever, chunker, mask_source)
    hypotheses = translate_examples(model, examples, vocab, args.beam or model.cfg.beam)
    path = storage.save_lines(hypotheses)
    storage.save_lines(references(corpus), REFERENCES_FILE)
    print_banner("Translations")
    print(f"  Sentences: {len(hypotheses)}")
    print(f"  Output: {path}")
    return 0


def cmd_evaluate(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    hypotheses = read_lines(args.hyp)
    if args.ref:
        refs = read_lines(args.ref)
    elif args.corpus:
        refs = references(load_corpus(args.corpus))
    else:
        raise UsageError("evaluate needs --ref or --corpus")

    exp = settings.experiment
    report = bleu(hypotheses, refs, exp.bootstrap_resamples, exp.bootstrap_seed)
    storage.save_json("bleu.json", report.to_dict())
    print(f"BLEU = {report.score:.1f} [{report.ci_low:.1f}, {report.ci_high:.1f}]")
    print(f"  precisions: {' / '.join(f'{p:.1f}' for p in report.precisions)}  BP = {report.brevity_penalty:.3f}")
    print(f"  sys_len = {report.sys_len}  ref_len = {report.ref_len}")
    print(f"  {report.signature}")
    return 0


def cmd_bootstrap(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    exp = settings.experiment
    result = paired_bootstrap(
        read_lines(args.sys_a), read_lines(args.sys_b), read_lines(args.ref),
        exp.bootstrap_resamples, exp.bootstrap_seed,
    )
    storage.save_json("bootstrap.json", {
        "p_value": result.p_value,
        "bleu_a": result.bleu_a,
        "bleu_b": result.bleu_b,
        "resamples": result.resamples,
        "a_better": result.a_better,
        "b_better": result.b_better,
        "ties": result.ties,
    })
    print(f"BLEU A = {result.bleu_a:.2f}  BLEU B = {result.bleu_b:.2f}")
    print(f"p = {result.p_value:.4f} ({result.resamples} resamples)")
    return 0


def cmd_analyze_ars(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    index, encoder, _ = _load_retrieval(args, settings)
    exp = settings.experiment
    in_domain, out_of_domain = default_ars_phrase_sets(
        load_corpus(args.corpus), _make_chunker(args.chunker), exp.ood_phrases, args.seed
    )
    rows = run_ars_analysis(index, encoder, in_domain, out_of_domain, exp.ars_k_max)
    storage.save_csv(ARS_HEADER, rows)
    print_banner("Average relevance scores")
    for row in rows:
        print(f"  k={row['k']} {row['domain']:>14}: {row['ars']:.4f}")
    return 0


def cmd_analyze_clusters(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    exp = settings.experiment
    report = run_cluster_analysis(load_index(args.index), exp.top_clusters, exp.cluster_samples, args.seed)
    storage.save_csv(PROJECTION_HEADER, report.projection_rows)
    storage.save_json("silhouette.json", {
        "silhouette_raw": report.silhouette_raw,
        "silhouette_guided": report.silhouette_guided,
        "heads": report.heads,
        **report.stats,
    })
    print_banner("Head clusters")
    print(f"  Clusters: {', '.join(report.heads)}")
    print(f"  Silhouette raw:    {report.silhouette_raw:.4f}")
    print(f"  Silhouette guided: {report.silhouette_guided:.4f}")
    return 0


def cmd_sweep_k(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    table = run_k_sweep(settings)
    storage.save_csv(SWEEP_HEADER, table.rows)
    storage.save_csv(["k", "rep_kind", "mean", "min", "max", "seeds"], table.summary, "summary.csv")
    print_banner("K sweep (mean BLEU over seeds)")
    for row in table.summary:
        print(f"  K={row['k']} {row['rep_kind']:>6}: {row['mean']:.2f} [{row['min']:.2f}, {row['max']:.2f}]")
    return 0


def cmd_degrade(args: argparse.Namespace, settings: Settings, storage: RunStorage) -> int:
    table = run_degradation_experiment(settings)
    storage.save_csv(DEGRADATION_HEADER, table.rows)
    storage.save_csv(["setting", "model", "mean", "min", "max", "seeds"], table.summary, "summary.csv")
    print_banner("Source degradation (mean BLEU over seeds)")
    for row in table.summary:
        print(f"  {row['setting']:>8} {row['model']:>8}: {row['mean']:.2f} [{row['min']:.2f}, {row['max']:.2f}]")
    return 0


COMMANDS: dict[str, Callable[[argparse.Namespace, Settings, RunStorage], int]] = {
    "gen-synth": cmd_gen_synth,
    "build-pset": cmd_build_pset,
    "train-cvae": cmd_train_cvae,
    "build-index": cmd_build_index,
    "query": cmd_query,
    "train-nmt": cmd_train_nmt,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "bootstrap": cmd_bootstrap,
    "analyze-ars": cmd_analyze_ars,
    "analyze-clusters": cmd_analyze_clusters,
    "sweep-k": cmd_sweep_k,
    "degrade": cmd_degrade,
}

# Seed recorded in the manifest of each command
MANIFEST_SEEDS: dict[str, Callable[[Settings], Optional[int]]] = {
    "gen-synth": lambda s: s.synth.seed,
    "train-cvae": lambda s: s.cvae.seed,
    "train-nmt": lambda s: s.translator.seed,
    "evaluate": lambda s: s.experiment.bootstrap_seed,
    "bootstrap": lambda s: s.experiment.bootstrap_seed,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point.

    Returns:
        Exit code (0 for success, 1 for usage errors, 2 for runtime errors, 130 when interrupted)
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        settings = resolve_settings(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except PhraseMMTError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:
        # --help
        return e.code if isinstance(e.code, int) else 0

    output_dir = args.output_dir or str(Path(settings.experiment.output_dir) / args.command)
    setup_logging(args.log_level, args.log_dir or str(Path(output_dir) / "logs"))
    logger.info(f"Starting {args.command}...")

    try:
        storage = RunStorage(output_dir)
        seed_of = MANIFEST_SEEDS.get(args.command)
        storage.save_manifest(args.command, snapshot(settings), seed_of(settings) if seed_of else None, argv)
        code = COMMANDS[args.command](args, settings, storage)
        logger.info(f"{args.command} completed successfully")
        return code
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        return 130
    except UsageError as e:
        logger.error(str(e))
        print(f"\nError: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        print(f"\nError: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
