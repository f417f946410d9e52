"""Run configuration stored as JSON: grid, sensor, loss weights, augmentation and evaluation thresholds."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from rigidflow.augmentor import AugmentConfig, SensorModel
from rigidflow.losses import LossWeights
from rigidflow.voxelgrid import GridSpec


@dataclass(frozen=True)
class EvalConfig:
    tp_iou: float = 0.5
    score_thresh: float = 0.5
    overlap_thresh: float = 0.1
    icp_max_iter: int = 50
    icp_tol: float = 1e-8
    icp_subsample: int = 20000
    icp_search_margin: float | None = None
    icp_floor_clearance: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.tp_iou <= 1.0:
            raise ValueError("tp_iou must lie in (0, 1]")


@dataclass
class Config:
    grid: GridSpec = field(default_factory=GridSpec)
    sensor: SensorModel = field(default_factory=SensorModel)
    losses: LossWeights = field(default_factory=LossWeights)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    _SECTIONS = {"grid": GridSpec, "sensor": SensorModel, "losses": LossWeights,
                 "augment": AugmentConfig, "eval": EvalConfig}

    def to_dict(self) -> dict:
        return {name: dataclasses.asdict(getattr(self, name)) for name in self._SECTIONS}

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        unknown = set(data) - set(cls._SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        for name, typ in cls._SECTIONS.items():
            section = data.get(name, {})
            names = {f.name for f in dataclasses.fields(typ)}
            bad = set(section) - names
            if bad:
                raise ValueError(f"unknown keys in [{name}]: {sorted(bad)}")
            kw[name] = typ(**{k: tuple(v) if isinstance(v, list) else v for k, v in section.items()})
        return cls(**kw)

    def with_seed(self, seed: int) -> "Config":
        return Config(
            dataclasses.replace(self.grid, rng_seed=seed),
            dataclasses.replace(self.sensor, rng_seed=seed),
            self.losses, self.augment, self.eval,
        )


def load_config(path) -> Config:
    return Config.from_dict(json.loads(Path(path).read_text()))


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
