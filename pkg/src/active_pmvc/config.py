"""Experiment configuration: flat ``key = value`` files with dotted section prefixes.

Example::

    data.source = synthetic
    data.n = 300
    data.dims = 4,4
    mask.regime = two-view-paired
    mask.p = 30
    train.max_epochs = 600
    train.stage2_start = 150
    run.repeats = 5
    sweep.train.k = 2 | 4 | 8
    sweep.train.terms = rec+wgc+cgc | rec+wgc | rec+cgc

Sweep axes take ``|``-separated values and are combined as a Cartesian
product. ``train.terms`` is a shorthand for the three ``enable_*`` switches.
"""
from __future__ import annotations

import itertools
import typing
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Tuple

import numpy as np

from .dataio import MaskSpec
from .trainer import TrainConfig

TERMS = ("rec", "wgc", "cgc")


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "synthetic"
    path: str = ""
    n: int = 300
    views: int = 2
    clusters: int = 3
    dims: Tuple[int, ...] = (4, 4)
    separation: float = 6.0
    normalize: bool = True


@dataclass
class RunConfig:
    repeats: int = 1
    seed: int = 0
    out: str = "out"
    checkpoint_every: int = 0


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    mask: MaskSpec = field(default_factory=MaskSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunConfig = field(default_factory=RunConfig)
    sweep: List[Tuple[str, List[str]]] = field(default_factory=list)

    def __post_init__(self):
        if self.run.repeats < 1:
            raise ConfigError("run.repeats must be at least 1")
        for key, _ in self.sweep:
            check_key(key)

    def points(self) -> List[Dict[str, str]]:
        """One override dict per sweep point (a single empty point without axes)."""
        if not self.sweep:
            return [{}]
        keys = [k for k, _ in self.sweep]
        return [dict(zip(keys, combo)) for combo in itertools.product(*(v for _, v in self.sweep))]

    def with_overrides(self, overrides: Dict[str, str]) -> "ExperimentConfig":
        cfg = self
        for key, value in overrides.items():
            cfg = set_value(cfg, key, value)
        return cfg


def _sections(cfg: ExperimentConfig):
    return {"data": cfg.data, "mask": cfg.mask, "train": cfg.train, "run": cfg.run}


def check_key(key: str) -> None:
    section, _, name = key.partition(".")
    if key == "train.terms":
        return
    owners = {"data": DataConfig, "mask": MaskSpec, "train": TrainConfig, "run": RunConfig}
    if section not in owners or name not in {f.name for f in fields(owners[section])}:
        raise ConfigError(f"unknown config key {key!r}")


def parse_terms(value: str) -> Dict[str, bool]:
    chosen = {t.strip() for t in value.replace(",", "+").split("+") if t.strip()}
    unknown = chosen - set(TERMS)
    if unknown or not chosen:
        raise ConfigError(f"bad loss-term set {value!r}; use e.g. rec+wgc+cgc")
    return {f"enable_{t}": t in chosen for t in TERMS}


def _convert(raw: str, kind, key: str):
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if typing.get_origin(kind) is tuple:
            return tuple(int(t) for t in text.split(",") if t.strip())
        return text
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def set_value(cfg: ExperimentConfig, key: str, raw: str) -> ExperimentConfig:
    check_key(key)
    section, _, name = key.partition(".")
    if key == "train.terms":
        return replace(cfg, train=replace(cfg.train, **parse_terms(raw)))
    obj = _sections(cfg)[section]
    hints = typing.get_type_hints(type(obj))
    try:
        updated = replace(obj, **{name: _convert(raw, hints[name], key)})
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: {exc}") from None
    return replace(cfg, **{section: updated})


def parse_config_text(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    sweep = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key = key.strip()
        if key.startswith("sweep."):
            axis = key[len("sweep."):]
            check_key(axis)
            values = [v.strip() for v in value.split("|") if v.strip()]
            if not values:
                raise ConfigError(f"line {lineno}: sweep axis {axis} has no values")
            sweep.append((axis, values))
        else:
            cfg = set_value(cfg, key, value)
    cfg.sweep = sweep
    cfg.__post_init__()
    return cfg


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config_text(f.read())


def derive_seeds(root: int, repeat: int) -> Tuple[int, int]:
    """(data seed, train seed) for one repeat; shared by every sweep point."""
    data_seed, train_seed = np.random.SeedSequence([int(root), int(repeat)]).generate_state(2)
    return int(data_seed), int(train_seed)
