"""Run configuration: JSON file with four sections, overridable from flags.

Schema (every key optional; defaults shown)::

    {
      "model":   {ModelConfig fields; vocab_size is taken from the data},
      "train":   {"epochs": 30, "batch_size": 64, "lr": 3e-4, "seed": 42,
                  "split_fraction": 0.75},
      "explain": {"disk_radius": 5, "bins": 32,
                  "entropy_normalization": "minmax", "overlay_alpha": 0.5},
      "data":    {"source": "synthetic", "k_classes": 8, "n_pairs": 800,
                  "dir": null, "image_size": 64}
    }

Precedence: command-line flag > config file > default. Unknown sections or
keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from medgrad.errors import ConfigError, ContractError
from medgrad.explain.saliency import ExplainConfig
from medgrad.model import ModelConfig


@dataclass
class TrainSection:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 3e-4
    seed: int = 42
    split_fraction: float = 0.75

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"train.split_fraction must lie in (0, 1), got {self.split_fraction}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("train.epochs must be >= 0 and train.batch_size >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError(f"train.seed must be an unsigned 64-bit integer, got {self.seed}")


@dataclass
class DataSection:
    source: str = "synthetic"
    k_classes: int = 8
    n_pairs: int = 800
    dir: str | None = None
    image_size: int = 64

    def __post_init__(self):
        if self.source not in ("synthetic", "external"):
            raise ConfigError(f"data.source must be 'synthetic' or 'external', got {self.source!r}")
        if self.n_pairs < 0:
            raise ConfigError(f"data.n_pairs must be >= 0, got {self.n_pairs}")


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)  # ModelConfig overrides
    train: TrainSection = field(default_factory=TrainSection)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    data: DataSection = field(default_factory=DataSection)

    def model_config(self, vocab_size: int) -> ModelConfig:
        kwargs = dict(self.model)
        kwargs.setdefault("image_size", self.data.image_size)
        kwargs["vocab_size"] = vocab_size
        try:
            return ModelConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "model": dict(self.model),
            "train": dataclasses.asdict(self.train),
            "explain": dataclasses.asdict(self.explain),
            "data": dataclasses.asdict(self.data),
        }


SECTIONS = {"train": TrainSection, "explain": ExplainConfig, "data": DataSection}
MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)} - {"vocab_size"}


def _build(cls, values: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
    try:
        return cls(**values)
    except ContractError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def from_dict(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Merge ``overrides`` (``{"section": {key: value}}``, ``None`` values ignored) over ``raw``."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = sorted(set(raw) - set(SECTIONS) - {"model"})
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(unknown)}")
    merged = {s: dict(raw.get(s) or {}) for s in (*SECTIONS, "model")}
    for section, values in (overrides or {}).items():
        merged[section].update({k: v for k, v in values.items() if v is not None})
    bad = sorted(set(merged["model"]) - MODEL_KEYS)
    if bad:
        raise ConfigError(f"unknown key(s) in [model]: {', '.join(bad)}")
    return RunConfig(model=merged["model"], **{s: _build(cls, merged[s], s) for s, cls in SECTIONS.items()})


def load(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(raw, overrides)
