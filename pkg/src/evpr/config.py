"""Run configuration: flat INI-style sections mapped onto dataclasses.

Sections are `dataset`, `backend`, `fusion`, `aggregation`, `loss`, `train`,
`eval`. Every key has a default, unknown keys are rejected exhaustively, and
`section.key=value` overrides apply on top of the file. The model hash covers
the descriptor-defining sections (backend, fusion, aggregation) and ties
checkpoints to the configs that can reload them.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError

FUSION_MODES = ("vision_only", "global", "local", "full")

ENV_DATASET_ROOT = "EPRBENCH_ROOT"


@dataclass
class DatasetConfig:
    root: str = ""
    split_seed: int = 0
    split_by: str = "sample"  # or "scene"
    train_ratio: float = 0.7
    val_ratio: float = 0.1
    test_ratio: float = 0.2


@dataclass
class BackendConfig:
    visual: str = "toy"
    text: str = "toy"
    shared_dim: int = 64
    visual_dim: int = 64
    text_dim: int = 64
    image_size: int = 64
    patch_size: int = 16
    token_length: int = 77
    seed: int = 0


@dataclass
class FusionConfig:
    rho: float = 0.25
    alpha_init: float = 0.0
    mode: str = "full"


@dataclass
class AggregationConfig:
    gem_p: float = 3.0
    learnable_p: bool = False


@dataclass
class LossConfig:
    ms_alpha: float = 1.0
    ms_beta: float = 50.0
    ms_lambda: float = 1.0
    tau: float = 0.07
    gamma: float = 0.15


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    batch_p: int = 4
    batch_k: int = 6
    epochs: int = 30
    sched_step: int = 3
    sched_gamma: float = 0.5
    seed: int = 0
    out_dir: str = "runs/default"

    @property
    def batch_size(self) -> int:
        return self.batch_p * self.batch_k


@dataclass
class EvalConfig:
    database: str = "train+val"
    queries: str = "test"
    exclude_self: bool = True
    ns: str = "1,5,10"

    def n_values(self) -> tuple[int, ...]:
        return tuple(int(v) for v in self.ns.split(","))


@dataclass
class Config:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    backend: BackendConfig = field(default_factory=BackendConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "Config":
        problems = []
        d, t, f = self.dataset, self.train, self.fusion
        if abs(d.train_ratio + d.val_ratio + d.test_ratio - 1.0) > 1e-9:
            problems.append("dataset ratios must sum to 1")
        if d.split_by not in ("sample", "scene"):
            problems.append(f"dataset.split_by must be sample|scene, got {d.split_by!r}")
        if t.lr <= 0 or t.weight_decay < 0 or t.epochs < 1 or t.sched_step < 1:
            problems.append("train section needs lr > 0, weight_decay >= 0, epochs/sched_step >= 1")
        if t.batch_p < 2 or t.batch_k < 2:
            problems.append("train.batch_p and train.batch_k must both be >= 2")
        if not 0.0 < t.sched_gamma <= 1.0:
            problems.append(f"train.sched_gamma must be in (0, 1], got {t.sched_gamma}")
        if not 0.0 < f.rho <= 1.0:
            problems.append(f"fusion.rho must be in (0, 1], got {f.rho}")
        if f.mode not in FUSION_MODES:
            problems.append(f"fusion.mode must be one of {FUSION_MODES}, got {f.mode!r}")
        if self.aggregation.gem_p < 1.0:
            problems.append(f"aggregation.gem_p must be >= 1, got {self.aggregation.gem_p}")
        if self.loss.tau <= 0 or self.loss.gamma < 0:
            problems.append("loss section needs tau > 0 and gamma >= 0")
        if min(self.loss.ms_alpha, self.loss.ms_beta, self.loss.ms_lambda) <= 0:
            problems.append("multi-similarity parameters must be positive")
        if self.backend.image_size % self.backend.patch_size != 0:
            problems.append(
                f"backend.image_size {self.backend.image_size} not divisible by "
                f"patch_size {self.backend.patch_size}"
            )
        if problems:
            raise DataError("invalid config:\n" + "\n".join(problems))
        return self


def _coerce(section: str, key: str, raw: str, target_type: type):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return target_type(raw)
    except ValueError as exc:
        raise DataError(f"config value {section}.{key}={raw!r} is not a valid {target_type.__name__}") from exc


def _apply(config: Config, section: str, key: str, raw: str, unknown: list[str]) -> None:
    sub = getattr(config, section, None)
    if sub is None or not dataclasses.is_dataclass(sub):
        unknown.append(f"{section}.{key}")
        return
    fields = {f.name: f for f in dataclasses.fields(sub)}
    if key not in fields:
        unknown.append(f"{section}.{key}")
        return
    setattr(sub, key, _coerce(section, key, raw, type(getattr(sub, key))))


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> Config:
    """Build a Config from defaults, an optional INI file, and overrides.

    Unknown `section.key` entries are collected and reported together. An
    empty dataset.root falls back to the EPRBENCH_ROOT environment variable.
    """
    parser = None
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(Path(path))
        if not read:
            raise DataError(f"config file {path} not found or unreadable")
    return _config_from_parser(parser, overrides)


def config_from_text(text: str, overrides: Iterable[str] = ()) -> Config:
    """Parse a config from INI text (e.g. the copy embedded in a checkpoint)."""
    parser = configparser.ConfigParser()
    parser.read_string(text)
    return _config_from_parser(parser, overrides)


def _config_from_parser(parser: configparser.ConfigParser | None, overrides: Iterable[str]) -> Config:
    config = Config()
    unknown: list[str] = []
    if parser is not None:
        for section in parser.sections():
            for key, raw in parser.items(section):
                _apply(config, section, key, raw, unknown)
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise DataError(f"override {item!r} is not of the form section.key=value")
        dotted, raw = item.split("=", 1)
        section, key = dotted.split(".", 1)
        _apply(config, section.strip(), key.strip(), raw, unknown)
    if unknown:
        raise DataError("unknown config keys: " + ", ".join(sorted(unknown)))
    if not config.dataset.root:
        config.dataset.root = os.environ.get(ENV_DATASET_ROOT, "")
    return config.validate()


def config_to_ini(config: Config) -> str:
    parser = configparser.ConfigParser()
    for section_field in dataclasses.fields(config):
        sub = getattr(config, section_field.name)
        parser[section_field.name] = {
            f.name: repr(getattr(sub, f.name)) if isinstance(getattr(sub, f.name), float)
            else str(getattr(sub, f.name))
            for f in dataclasses.fields(sub)
        }
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def save_config(config: Config, path: str | Path) -> None:
    Path(path).write_text(config_to_ini(config), encoding="utf-8")


def model_hash(config: Config) -> str:
    """Hash of the descriptor-defining sections; checkpoints carry it so a
    mismatched reload is caught before producing wrong descriptors."""
    parts = []
    for name in ("backend", "fusion", "aggregation"):
        sub = getattr(config, name)
        for f in dataclasses.fields(sub):
            parts.append(f"{name}.{f.name}={getattr(sub, f.name)!r}")
    return hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()[:16]
