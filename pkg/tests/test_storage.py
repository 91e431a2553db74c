"""
Unit tests for run storage.
"""

import json

import pytest

from phrase_mmt.storage import RunStorage, atomic_write_text, package_versions, read_lines


class TestAtomicWrite:
    """Tests for atomic file writes."""

    def test_creates_parents_and_newline(self, tmp_path):
        """Should create missing directories and end text with a newline."""
        path = tmp_path / "a" / "b" / "file.txt"
        atomic_write_text(path, "hello")
        assert path.read_text(encoding="utf-8") == "hello\n"

    def test_no_temp_files_left(self, tmp_path):
        """Should leave only the destination file behind."""
        atomic_write_text(tmp_path / "file.txt", "x\n")
        assert [p.name for p in tmp_path.iterdir()] == ["file.txt"]


class TestRunStorage:
    """Tests for the run directory."""

    def test_creates_directories(self, tmp_path):
        """Should create the output and log directories."""
        storage = RunStorage(str(tmp_path / "run"))
        assert storage.output_dir.is_dir()
        assert (tmp_path / "run" / "logs").is_dir()

    def test_manifest(self, tmp_path):
        """Should record command, seed, argv, versions and config."""
        storage = RunStorage(str(tmp_path))
        path = storage.save_manifest("degrade", {"experiment": {"k": 5}}, seed=3, argv=["degrade", "--seed", "3"])
        data = json.loads(path.read_text(encoding="utf-8"))
        assert data["command"] == "degrade"
        assert data["seed"] == 3
        assert data["argv"] == ["degrade", "--seed", "3"]
        assert data["config"] == {"experiment": {"k": 5}}
        assert "python" in data["versions"] and "torch" in data["versions"]

    def test_csv_fixed_float_format(self, tmp_path):
        """Should write the header and six-decimal floats."""
        storage = RunStorage(str(tmp_path))
        path = storage.save_csv(["seed", "bleu"], [{"seed": 1, "bleu": 1 / 3}, {"seed": 2, "bleu": 50.0}])
        assert read_lines(path) == ["seed,bleu", "1,0.333333", "2,50.000000"]

    def test_csv_rejects_unknown_columns(self, tmp_path):
        """Should refuse rows with keys missing from the header."""
        storage = RunStorage(str(tmp_path))
        with pytest.raises(ValueError):
            storage.save_csv(["seed"], [{"seed": 1, "extra": 2}])

    def test_lines_and_json(self, tmp_path):
        """Should write lines and sorted JSON documents."""
        storage = RunStorage(str(tmp_path))
        assert read_lines(storage.save_lines(["ein hund .", "das auto ."])) == ["ein hund .", "das auto ."]
        data = json.loads(storage.save_json("report.json", {"b": 1, "a": 2}).read_text(encoding="utf-8"))
        assert data == {"a": 2, "b": 1}


class TestPackageVersions:
    """Tests for version capture."""

    def test_tracked_packages_present(self):
        """Should report every tracked package, unknown when missing."""
        versions = package_versions()
        for name in ("python", "phrase-mmt", "torch", "numpy", "sacrebleu", "scikit-learn"):
            assert versions[name]


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
