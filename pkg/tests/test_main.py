"""
Tests for the command line interface.
"""

import json

import pytest

from phrase_mmt.main import build_parser, main


def run(argv: list[str]) -> int:
    return main(argv)


class TestParser:
    """Tests for argument parsing and exit codes."""

    def test_help(self, capsys):
        """Should print help and exit with 0."""
        assert run(["--help"]) == 0
        assert "gen-synth" in capsys.readouterr().out

    def test_unknown_subcommand(self, capsys):
        """Should exit with 1 on an unknown subcommand."""
        assert run(["fly"]) == 1
        assert "invalid choice" in capsys.readouterr().err

    def test_missing_required_flag(self):
        """Should exit with 1 when a required flag is missing."""
        assert run(["build-pset"]) == 1

    def test_bad_config_value(self, tmp_path):
        """Should exit with 1 on a malformed override."""
        assert run(["gen-synth", "--output-dir", str(tmp_path), "--translator-epochs", "many"]) == 1

    def test_config_flags_on_every_subcommand(self):
        """Should accept section overrides after any subcommand."""
        args = build_parser().parse_args(["degrade", "--experiment-k", "3"])
        assert args.experiment__k == "3"


class TestGenSynth:
    """Tests for corpus generation."""

    def test_deterministic_output(self, tmp_path):
        """Should write identical corpora for identical seeds."""
        first, second = tmp_path / "a", tmp_path / "b"
        for out in (first, second):
            assert run(["gen-synth", "--sentences", "30", "--seed", "4", "--output-dir", str(out)]) == 0
        assert (first / "corpus.jsonl").read_bytes() == (second / "corpus.jsonl").read_bytes()
        manifest = json.loads((first / "manifest.json").read_text(encoding="utf-8"))
        assert manifest["command"] == "gen-synth"
        assert manifest["seed"] == 4
        assert manifest["config"]["synth"]["sentences"] == 30
        stats = json.loads((first / "stats.json").read_text(encoding="utf-8"))
        assert stats["train"] + stats["valid"] + stats["test"] == 30


class TestEvaluation:
    """Tests for the scoring subcommands."""

    def test_evaluate_perfect(self, tmp_path, capsys):
        """Should print BLEU = 100.0 for hypotheses equal to the references."""
        ref = tmp_path / "ref.txt"
        ref.write_text("ein hund rennt .\ndas auto steht nahe dem baum .\n", encoding="utf-8")
        code = run([
            "evaluate", "--hyp", str(ref), "--ref", str(ref),
            "--output-dir", str(tmp_path / "run"), "--experiment-bootstrap-resamples", "20",
        ])
        assert code == 0
        assert "BLEU = 100.0" in capsys.readouterr().out
        report = json.loads((tmp_path / "run" / "bleu.json").read_text(encoding="utf-8"))
        assert report["score"] == pytest.approx(100.0)

    def test_evaluate_needs_references(self, tmp_path):
        """Should exit with 1 without --ref or --corpus."""
        hyp = tmp_path / "hyp.txt"
        hyp.write_text("ein hund\n", encoding="utf-8")
        assert run(["evaluate", "--hyp", str(hyp), "--output-dir", str(tmp_path / "run")]) == 1

    def test_missing_file_is_runtime_error(self, tmp_path):
        """Should exit with 2 when an input file does not exist."""
        missing = str(tmp_path / "missing.txt")
        assert run(["evaluate", "--hyp", missing, "--ref", missing, "--output-dir", str(tmp_path / "run")]) == 2

    def test_bootstrap(self, tmp_path, capsys):
        """Should report p = 0.5 for two identical systems."""
        ref = tmp_path / "ref.txt"
        ref.write_text("ein hund rennt .\ndas auto steht .\n", encoding="utf-8")
        code = run([
            "bootstrap", "--sys-a", str(ref), "--sys-b", str(ref), "--ref", str(ref),
            "--output-dir", str(tmp_path / "run"), "--experiment-bootstrap-resamples", "50",
        ])
        assert code == 0
        assert "p = 0.5000" in capsys.readouterr().out


@pytest.mark.slow
class TestPipeline:
    """Runs every stage on a tiny synthetic corpus."""

    def test_end_to_end(self, tmp_path, capsys):
        """Should chain the stages from corpus generation to BLEU."""
        small = [
            "--latent-latent-dim", "4", "--latent-hidden-dim", "16", "--latent-embed-dim", "8",
            "--cvae-epochs", "2", "--translator-d-model", "16", "--translator-ffn-dim", "32",
            "--translator-encoder-layers", "1", "--translator-decoder-layers", "1",
            "--translator-epochs", "2", "--translator-beam", "2",
            "--experiment-bootstrap-resamples", "20",
        ]
        data, pset, cvae, index, nmt, out = (tmp_path / name for name in ("data", "pset", "cvae", "index", "nmt", "out"))

        assert run(["gen-synth", "--sentences", "60", "--output-dir", str(data)]) == 0
        assert run(["build-pset", "--corpus", str(data / "train.jsonl"), "--output-dir", str(pset)] + small) == 0
        assert run([
            "train-cvae", "--pset", str(pset / "pset.jsonl"), "--corpus", str(data / "corpus.jsonl"),
            "--output-dir", str(cvae),
        ] + small) == 0
        assert run([
            "build-index", "--pset", str(pset / "pset.jsonl"), "--cvae", str(cvae / "cvae.npz"),
            "--output-dir", str(index),
        ] + small) == 0
        retrieval = ["--index", str(index / "index.bin"), "--cvae", str(cvae / "cvae.npz")]
        assert run(["query", "--phrase", "a black dog", "--k", "3", "--output-dir", str(tmp_path / "q")] + retrieval + small) == 0
        assert run([
            "train-nmt", "--corpus", str(data / "train.jsonl"), "--mask", "on", "--output-dir", str(nmt),
        ] + retrieval + small) == 0
        assert run([
            "translate", "--model", str(nmt / "nmt.npz"), "--corpus", str(data / "test.jsonl"),
            "--output-dir", str(out),
        ] + retrieval + small) == 0
        capsys.readouterr()
        assert run([
            "evaluate", "--hyp", str(out / "translations.txt"), "--corpus", str(data / "test.jsonl"),
            "--output-dir", str(tmp_path / "eval"),
        ] + small) == 0
        assert "BLEU = " in capsys.readouterr().out


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
