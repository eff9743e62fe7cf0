"""Configuration dataclasses and JSON config-file handling.

Every tunable lives here rather than in code: compatibility thresholds,
mining thresholds and ratios, loss weights, and optimizer settings. A config
file is a JSON object with one section per dataclass; unknown keys are
rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class CorpusConfig:
    seed: int = 0
    size: int = 64
    categories: int = 8
    train_per_category: int = 30
    test_backgrounds: int = 10
    test_foregrounds: int = 50  # candidate pool per category, includes the gt pairs
    test_r_backgrounds: int = 10
    tau_hue: float = 0.12
    tau_geo: float = 0.35
    tau_ar: float = 1.2
    # ground-truth attribute jitter as a fraction of the matching tolerance;
    # keeps the same-image foreground strictly inside the oracle's window
    gt_jitter: float = 0.2
    fg_area_min: float = 0.05
    fg_area_max: float = 0.5

    def validate(self) -> None:
        if not (4 <= self.categories <= 8):
            raise ConfigError(f"categories must be in [4, 8], got {self.categories}")
        for name in ("train_per_category", "test_backgrounds", "test_foregrounds",
                     "test_r_backgrounds"):
            v = getattr(self, name)
            if v > 100_000:
                raise ConfigError(f"{name}={v} exceeds the per-category seed space (100000)")
            if v < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.test_backgrounds > self.test_foregrounds:
            raise ConfigError("test pool must cover one ground truth per test background")


@dataclass
class MiningConfig:
    neg_threshold: float = 0.3
    pos_threshold: float = 0.8
    base_ratio: tuple[int, int] = (1, 10)
    extended_ratio: tuple[int, int] = (5, 10)
    augmented_ratio: tuple[int, int] = (7, 11)
    top_k_teacher_pos: int = 5
    seed: int = 0

    def validate(self) -> None:
        if not (0 < self.neg_threshold < self.pos_threshold < 1):
            raise ConfigError(
                f"need 0 < neg_threshold < pos_threshold < 1, got "
                f"{self.neg_threshold}, {self.pos_threshold}")


@dataclass
class LossConfig:
    margin: float = 0.1
    lambda_kd: float = 1.0
    lambda_cls: float = 1.0

    def validate(self) -> None:
        if not (0 < self.margin < 1):
            raise ConfigError(f"margin must be in (0, 1), got {self.margin}")
        if self.lambda_kd < 0 or self.lambda_cls < 0:
            raise ConfigError("loss weights must be >= 0")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 30
    batch: int = 16
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    realworld: bool = False  # enables query-box padding augmentation
    losses: LossConfig = field(default_factory=LossConfig)

    def validate(self) -> None:
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        self.losses.validate()


@dataclass
class PipelineConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    mining: MiningConfig = field(default_factory=MiningConfig)
    filter: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, epochs=6))
    teacher: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, epochs=10))
    student: TrainConfig = field(default_factory=lambda: TrainConfig(lr=1e-3, epochs=10))

    def validate(self) -> None:
        self.corpus.validate()
        self.mining.validate()
        self.filter.validate()
        self.teacher.validate()
        self.student.validate()


_SECTIONS = {
    "corpus": CorpusConfig,
    "mining": MiningConfig,
    "filter": TrainConfig,
    "teacher": TrainConfig,
    "student": TrainConfig,
}


def _build(cls, data: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown key '{path}.{key}'")
        if key == "losses":
            value = _build(LossConfig, value, f"{path}.losses")
        elif known[key].type in ("tuple[int, int]",):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from an optional JSON file plus dotted-path
    overrides like {"teacher.lr": 1e-3, "corpus.seed": 7}."""
    raw: dict = {}
    if path is not None:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    cfg = PipelineConfig()
    for section, data in raw.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section '{section}'")
        setattr(cfg, section, _build(_SECTIONS[section], data, section))
    cfg.validate()
    return cfg


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)
