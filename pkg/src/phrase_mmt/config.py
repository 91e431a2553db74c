"""
Experiment configuration.

Handles:
- The experiment-level settings (paths, K, seeds, output directory)
- Reading INI files with [synth] [latent] [cvae] [translator] [experiment] sections
- Command line overrides (--<section>-<field>)
- JSON-able snapshots for run manifests
"""

import argparse
import configparser
import dataclasses
import logging
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Union

from .corpus import SynthConfig
from .errors import ConfigError
from .latent_model import CvaeTrainConfig, LatentModelConfig
from .translator import TranslatorConfig

logger = logging.getLogger(__name__)

SCALES = ("desk", "full")
TRUE_VALUES = ("1", "true", "yes", "on")
FALSE_VALUES = ("0", "false", "no", "off")


@dataclass
class ExperimentConfig:
    """Settings shared by the pipeline stages and the analyses."""
    corpus_path: Optional[str] = None      # external corpus JSONL; synthetic when unset
    grounding_path: Optional[str] = None   # precomputed groundings JSONL
    encoder_path: Optional[str] = None     # token vectors JSONL; seeded static table when unset
    valid_fraction: float = 0.1
    test_fraction: float = 0.1
    split_seed: int = 0
    grounding_policy: str = "skip"
    encoder_dim: int = 64
    encoder_seed: int = 0
    rep_mode: str = "posterior"
    k: int = 5
    k_values: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6, 7])
    exclude_same_source: bool = False
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    bootstrap_resamples: int = 1000
    bootstrap_seed: int = 12345
    top_clusters: int = 8
    cluster_samples: int = 1000
    ars_k_max: int = 5
    ood_phrases: int = 500
    sweep_retrain: bool = True             # retrain the translator for every (K, kind)
    output_dir: str = "runs"

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if not self.k_values or min(self.k_values) < 1:
            raise ConfigError(f"k_values must be non-empty and >= 1, got {self.k_values}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.grounding_policy not in ("skip", "fail"):
            raise ConfigError(f"grounding_policy must be skip or fail, got {self.grounding_policy!r}")
        if self.rep_mode not in ("posterior", "prior"):
            raise ConfigError(f"rep_mode must be posterior or prior, got {self.rep_mode!r}")
        for name in ("corpus_path", "grounding_path", "encoder_path"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise ConfigError(f"{name} does not exist: {value}")


@dataclass
class Settings:
    """All component configurations of one run."""
    synth: SynthConfig = field(default_factory=SynthConfig)
    latent: LatentModelConfig = field(default_factory=LatentModelConfig.desk_scale)
    cvae: CvaeTrainConfig = field(default_factory=CvaeTrainConfig.desk_scale)
    translator: TranslatorConfig = field(default_factory=TranslatorConfig.desk_scale)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def validate(self) -> None:
        self.synth.validate()
        self.latent.validate()
        self.cvae.validate()
        self.translator.validate()
        self.experiment.validate()


SECTIONS = ("synth", "latent", "cvae", "translator", "experiment")


def default_settings(scale: str = "desk") -> Settings:
    """Desk-scale or full-scale defaults."""
    if scale == "desk":
        return Settings()
    if scale == "full":
        return Settings(
            latent=LatentModelConfig(),
            cvae=CvaeTrainConfig(),
            translator=TranslatorConfig(),
        )
    raise ConfigError(f"scale must be one of {SCALES}, got {scale!r}")


def _base_type(annotation: Any) -> Any:
    """Strip Optional[...] from a field annotation."""
    if typing.get_origin(annotation) is Union:
        args = [a for a in typing.get_args(annotation) if a is not type(None)]
        return args[0]
    return annotation


def _is_optional(annotation: Any) -> bool:
    return typing.get_origin(annotation) is Union and type(None) in typing.get_args(annotation)


def coerce_value(annotation: Any, raw: str, name: str) -> Any:
    """
    Convert a string from an INI file or the command line to a field's type.

    Raises:
        ConfigError: If the value cannot be converted
    """
    text = raw.strip()
    if _is_optional(annotation) and text.lower() in ("", "none", "null"):
        return None
    base = _base_type(annotation)
    try:
        if base is bool:
            if text.lower() in TRUE_VALUES:
                return True
            if text.lower() in FALSE_VALUES:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if typing.get_origin(base) is list:
            (item,) = typing.get_args(base)
            return [item(part.strip()) for part in text.split(",") if part.strip()]
        if base in (int, float, str):
            return base(text)
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from e
    raise ConfigError(f"{name}: unsupported field type {annotation!r}")


def _apply(section_cfg: Any, values: dict[str, Any]) -> Any:
    """New config with the given fields replaced (works for frozen dataclasses)."""
    return dataclasses.replace(section_cfg, **values) if values else section_cfg


def load_config(path: Optional[Path] = None, scale: str = "desk") -> Settings:
    """
    Read an INI file on top of the defaults.

    Raises:
        ConfigError: On unknown sections or keys, or values of the wrong type
    """
    settings = default_settings(scale)
    if path is None:
        return settings

    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")

    parser = configparser.ConfigParser()
    parser.read(path, encoding="utf-8")
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        current = getattr(settings, section)
        known = {f.name: f for f in dataclasses.fields(current)}
        values = {}
        for key, raw in parser.items(section):
            if key not in known:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = coerce_value(known[key].type, raw, f"{section}.{key}")
        setattr(settings, section, _apply(current, values))

    logger.info(f"Loaded configuration from {path}")
    return settings


def flag_name(section: str, field_name: str) -> str:
    return f"--{section}-{field_name.replace('_', '-')}"


def dest_name(section: str, field_name: str) -> str:
    return f"{section}__{field_name}"


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """Add one --<section>-<field> flag per configuration field."""
    reference = default_settings("desk")
    for section in SECTIONS:
        group = parser.add_argument_group(f"[{section}] options")
        for f in dataclasses.fields(getattr(reference, section)):
            group.add_argument(
                flag_name(section, f.name),
                dest=dest_name(section, f.name),
                type=str,
                default=None,
                metavar="VALUE",
                help=f"Override {section}.{f.name} ({_describe(f.type)})",
            )


def _describe(annotation: Any) -> str:
    base = _base_type(annotation)
    if typing.get_origin(base) is list:
        return "comma-separated list"
    name = getattr(base, "__name__", str(base))
    return f"{name}, or none" if _is_optional(annotation) else name


def apply_overrides(settings: Settings, args: argparse.Namespace) -> Settings:
    """Apply command line flags; flags win over the INI file."""
    for section in SECTIONS:
        current = getattr(settings, section)
        values = {}
        for f in dataclasses.fields(current):
            raw = getattr(args, dest_name(section, f.name), None)
            if raw is not None:
                values[f.name] = coerce_value(f.type, raw, flag_name(section, f.name))
        setattr(settings, section, _apply(current, values))
    return settings


def with_seed(settings: Settings, seed: int) -> Settings:
    """Copy whose model and training seeds are all `seed` (the corpus seed is kept)."""
    return Settings(
        synth=settings.synth,
        latent=dataclasses.replace(settings.latent, seed=seed),
        cvae=dataclasses.replace(settings.cvae, seed=seed),
        translator=dataclasses.replace(settings.translator, seed=seed),
        experiment=settings.experiment,
    )


def snapshot(settings: Settings) -> dict[str, Any]:
    """JSON-able dict of every section."""
    return {section: asdict(getattr(settings, section)) for section in SECTIONS}
