"""Run configuration: model, optimizer and metric options in one JSON document."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .metrics import DEFAULT_BETA_SQ, N_THRESHOLDS
from .model import ModelConfig
from .training import SgdConfig


@dataclass
class MetricOptions:
    beta_sq: float = DEFAULT_BETA_SQ
    thresholds: int = N_THRESHOLDS

    def __post_init__(self):
        if self.beta_sq <= 0:
            raise ValueError("beta_sq must be positive")
        if self.thresholds < 2:
            raise ValueError("need at least two thresholds")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    sgd: SgdConfig = field(default_factory=SgdConfig)
    metrics: MetricOptions = field(default_factory=MetricOptions)

    def to_dict(self) -> dict:
        return {"model": asdict(self.model), "sgd": asdict(self.sgd), "metrics": asdict(self.metrics)}

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - {"model", "sgd", "metrics"}
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(
            model=_build(ModelConfig, data.get("model", {}), "model"),
            sgd=_build(SgdConfig, data.get("sgd", {}), "sgd"),
            metrics=_build(MetricOptions, data.get("metrics", {}), "metrics"),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _build(kind, values: dict, section: str):
    names = {f.name for f in fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return kind(**values)


def resolve(path: Optional[str] = None, *, seed: Optional[int] = None, iterations: Optional[int] = None,
            lr: Optional[float] = None, momentum: Optional[float] = None, rcl_t: Optional[int] = None,
            channels: Optional[list[int]] = None, beta_sq: Optional[float] = None,
            thresholds: Optional[int] = None) -> RunConfig:
    """Load ``path`` (or defaults) and apply command-line overrides.

    ``seed`` sets both the initialization and the training seed.
    """
    data = json.loads(Path(path).read_text()) if path else {}
    data = {k: dict(v) for k, v in data.items()}
    model, sgd, metrics = (data.setdefault(k, {}) for k in ("model", "sgd", "metrics"))
    if seed is not None:
        model["seed"] = seed
        sgd["seed"] = seed
    for section, key, value in (
        (sgd, "iterations", iterations),
        (sgd, "learning_rate", lr),
        (sgd, "momentum", momentum),
        (model, "rcl_T", rcl_t),
        (model, "block_channels", channels),
        (metrics, "beta_sq", beta_sq),
        (metrics, "thresholds", thresholds),
    ):
        if value is not None:
            section[key] = value
    return RunConfig.from_dict(data)
