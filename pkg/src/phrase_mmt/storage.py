"""
Storage module for run artifacts.

Handles:
- Directory creation
- Atomic file writes (temp file + rename)
- Run manifests (manifest.json)
- Schema-stable CSV tables (results.csv)
- JSON reports and translation outputs
"""

import csv
import io
import json
import logging
import os
import platform
import sys
import tempfile
from datetime import datetime, timezone
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
RESULTS_FILE = "results.csv"
TRANSLATIONS_FILE = "translations.txt"

# Libraries whose versions are recorded in every manifest
TRACKED_PACKAGES = ("phrase-mmt", "torch", "numpy", "sacrebleu", "scikit-learn")


def atomic_write_bytes(file_path: Path, content: bytes) -> None:
    """
    Write bytes to file atomically using temp file + rename.

    The file is either fully written or not at all.

    Args:
        file_path: Destination file path
        content: Content to write
    """
    file_path = Path(file_path)
    dir_path = file_path.parent
    dir_path.mkdir(parents=True, exist_ok=True)
    fd, temp_path = tempfile.mkstemp(dir=dir_path, suffix=".tmp")

    try:
        with os.fdopen(fd, "wb") as f:
            f.write(content)

        os.replace(temp_path, file_path)
        logger.debug(f"Atomically wrote {len(content)} bytes to {file_path}")

    except Exception as e:
        try:
            os.unlink(temp_path)
        except OSError:
            pass
        raise RuntimeError(f"Failed to write {file_path}: {e}") from e


def atomic_write_text(file_path: Path, content: str, trailing_newline: bool = True) -> None:
    """
    Write text to file atomically (UTF-8).

    Args:
        file_path: Destination file path
        content: Content to write
        trailing_newline: Append a final newline when content is non-empty and lacks one
    """
    if trailing_newline and content and not content.endswith("\n"):
        content += "\n"
    atomic_write_bytes(file_path, content.encode("utf-8"))


def package_versions() -> dict[str, str]:
    """Return installed versions of the tracked packages plus the interpreter."""
    versions = {"python": platform.python_version()}
    for name in TRACKED_PACKAGES:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


class RunStorage:
    """
    Manages the output directory of one CLI run or experiment.

    Usage:
        storage = RunStorage(output_dir="runs/degrade")
        storage.save_manifest("degrade", config_snapshot, seed=1)
        storage.save_csv(header, rows)
    """

    def __init__(self, output_dir: str, logs_subdir: str = "logs"):
        """
        Initialize run storage.

        Args:
            output_dir: Base output directory for this run
            logs_subdir: Subdirectory for log files (default: logs)
        """
        self.output_dir = Path(output_dir)
        self.logs_dir = self.output_dir / logs_subdir

        self._ensure_directories()

    def _ensure_directories(self) -> None:
        """Create necessary directories if they don't exist."""
        for directory in [self.output_dir, self.logs_dir]:
            if not directory.exists():
                logger.info(f"Creating directory: {directory}")
                directory.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        """Path of an artifact inside the run directory."""
        return self.output_dir / name

    def save_manifest(
        self,
        command: str,
        config: dict[str, Any],
        seed: Optional[int] = None,
        argv: Optional[Sequence[str]] = None,
    ) -> Path:
        """
        Save the run manifest (config snapshot, seed, versions).

        Args:
            command: Subcommand or experiment name
            config: JSON-able configuration snapshot
            seed: Seed used by the run, if any
            argv: Command line that started the run

        Returns:
            Path to the saved manifest
        """
        data = {
            "command": command,
            "generated_at": datetime.now(timezone.utc).isoformat(),
            "seed": seed,
            "argv": list(argv) if argv is not None else list(sys.argv[1:]),
            "versions": package_versions(),
            "config": config,
        }
        file_path = self.path(MANIFEST_FILE)
        atomic_write_text(file_path, json.dumps(data, indent=2, sort_keys=True))
        logger.info(f"Saved manifest to {file_path}")
        return file_path

    def save_csv(
        self,
        header: Sequence[str],
        rows: Iterable[dict[str, Any]],
        name: str = RESULTS_FILE,
    ) -> Path:
        """
        Save rows as CSV with a fixed header.

        Args:
            header: Column names, in output order
            rows: Dicts keyed by column name (extra keys are rejected)
            name: File name inside the run directory

        Returns:
            Path to the saved file
        """
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        count = 0
        for row in rows:
            writer.writerow({key: _format_cell(value) for key, value in row.items()})
            count += 1

        file_path = self.path(name)
        atomic_write_text(file_path, buffer.getvalue())
        logger.info(f"Saved {count} rows to {file_path}")
        return file_path

    def save_json(self, name: str, data: Any) -> Path:
        """Save a JSON document inside the run directory."""
        file_path = self.path(name)
        atomic_write_text(file_path, json.dumps(data, indent=2, sort_keys=True))
        logger.info(f"Saved {file_path}")
        return file_path

    def save_lines(self, lines: Iterable[str], name: str = TRANSLATIONS_FILE) -> Path:
        """Save one string per line."""
        lines = list(lines)
        file_path = self.path(name)
        atomic_write_text(file_path, "\n".join(lines))
        logger.info(f"Saved {len(lines)} lines to {file_path}")
        return file_path


def read_lines(file_path: Path) -> list[str]:
    """Read a text file into a list of lines without trailing newlines."""
    with open(file_path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f]


def _format_cell(value: Any) -> Any:
    """Fixed float formatting keeps CSV output byte-stable."""
    if isinstance(value, float):
        return f"{value:.6f}"
    return value
