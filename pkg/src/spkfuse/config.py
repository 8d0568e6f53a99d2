"""Run-level configuration: network, training, corpus, and paths.

Configuration files are flat ``key = value`` text. Keys are grouped by
prefix (``net.``, ``train.``, ``corpus.``, ``paths.``, ``run.``) and map
one-to-one onto dataclass fields, so a checkpoint header echo can be fed
back in unchanged. Unknown keys are rejected rather than ignored.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .network import (NetworkConfig, desk_config, format_config_value,
                      parse_config_value)
from .training import TrainConfig, desk_train_config


@dataclass
class CorpusConfig:
    """Synthetic corpus shape used by `train --synthetic` and the tests."""

    synthetic_speakers: int = 8
    synthetic_utts: int = 20
    synthetic_frames: int = 320
    synthetic_noise: float = 0.25
    synthetic_holdout: int = 5
    synthetic_trials: int = 200

    def __post_init__(self) -> None:
        if self.synthetic_speakers < 2:
            raise ConfigError("synthetic_speakers must be at least 2")
        if not 0 < self.synthetic_holdout < self.synthetic_utts:
            raise ConfigError(
                "synthetic_holdout must leave at least one training utterance")
        if self.synthetic_frames < 1 or self.synthetic_trials < 1:
            raise ConfigError("synthetic_frames and synthetic_trials "
                              "must be positive")


@dataclass
class PathsConfig:
    corpus_dir: str = "runs/corpus"
    feature_cache: str = "runs/features"
    checkpoint_dir: str = "runs/checkpoints"
    trial_list: str = "runs/trials.txt"

    def resolved(self, root: Path | None = None) -> "PathsConfig":
        base = Path(root) if root is not None else Path(".")
        return PathsConfig(*(str(base / getattr(self, f.name))
                             for f in fields(PathsConfig)))


@dataclass
class RunConfig:
    network: NetworkConfig = field(default_factory=desk_config)
    train: TrainConfig = field(default_factory=desk_train_config)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0


_SECTIONS = {
    "net": ("network", NetworkConfig),
    "train": ("train", TrainConfig),
    "corpus": ("corpus", CorpusConfig),
    "paths": ("paths", PathsConfig),
}


def _field_types(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def apply_setting(cfg: RunConfig, key: str, value: str) -> None:
    """Apply one dotted `key=value` setting in place (re-validates below)."""
    key = key.strip()
    if key == "run.seed" or key == "seed":
        cfg.seed = int(value)
        return
    if "." not in key:
        raise ConfigError(f"setting {key!r} needs a section prefix such as "
                          f"net. or train.")
    section, name = key.split(".", 1)
    if section not in _SECTIONS:
        raise ConfigError(f"unknown configuration section {section!r}")
    attr, cls = _SECTIONS[section]
    types = _field_types(cls)
    if name not in types:
        raise ConfigError(f"unknown configuration key {key!r}")
    try:
        parsed = parse_config_value(types[name], value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {exc}") from exc
    setattr(getattr(cfg, attr), name, parsed)


def _revalidate(cfg: RunConfig) -> RunConfig:
    # rebuild each dataclass so __post_init__ checks run on the final values
    cfg.network = dataclasses.replace(cfg.network)
    cfg.train = dataclasses.replace(cfg.train)
    cfg.corpus = dataclasses.replace(cfg.corpus)
    return cfg


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, "
                              f"got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            apply_setting(cfg, key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    return _revalidate(cfg)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"configuration file not found: {p}")
    return parse_config_text(p.read_text(), base)


def apply_overrides(cfg: RunConfig, settings: list[str]) -> RunConfig:
    for item in settings:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        apply_setting(cfg, key, value)
    return _revalidate(cfg)


def config_lines(cfg: RunConfig) -> list[str]:
    """Full flat echo, parseable back via parse_config_text."""
    lines = [f"run.seed = {cfg.seed}"]
    for section, (attr, cls) in _SECTIONS.items():
        obj = getattr(cfg, attr)
        for f in fields(cls):
            value = format_config_value(getattr(obj, f.name))
            lines.append(f"{section}.{f.name} = {value}")
    return sorted(lines)
