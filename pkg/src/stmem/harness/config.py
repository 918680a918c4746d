"""Experiment configuration: every tunable default, loadable from YAML."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "default.yaml"


class ConfigError(ValueError):
    pass


@dataclass
class SimSection:
    camera_width: int = 320
    camera_height: int = 200
    hfov_deg: float = 70.0
    beams: int = 32
    azimuth_step_deg: float = 0.4
    range_noise: float = 0.02
    jitter_px: int = 2
    p0: float = 0.01
    p1: float = 0.1
    d_max: float = 100.0
    softening: float = 0.1
    blob_px: int = 1
    speed_min: float = 5.0
    speed_max: float = 10.0
    window_m: float = 30.0
    extension_m: float = 100.0


@dataclass
class DataSection:
    n_train: int = 40
    n_val: int = 6
    n_test: int = 50
    gt_source: str = "sim"  # sim | generated


@dataclass
class MemorySection:
    fg_threshold: float = 0.1
    horizon_m: float = 30.0
    k: int = 50


@dataclass
class OcclusionSection:
    fill_radius: int = 2


@dataclass
class NetSection:
    dims: list = field(default_factory=lambda: [6, 16, 16, 16, 3])
    hidden: int = 16
    normalize: bool = True
    scalar_kernel: bool = False


@dataclass
class TrainSection:
    lr: float = 1e-3
    finetune_lr: float = 1e-4
    max_iters: int = 2000
    finetune_iters: int = 300
    eval_every: int = 25
    patience: int = 10


@dataclass
class GtgenSection:
    eps: float = 0.5
    min_pts: int = 5
    delta: float = 0.3
    range_limit: float = 25.0


@dataclass
class EvalSection:
    bin_edges: list = field(default_factory=lambda: [0, 10, 20, 30, 40, 50, 60, 70])
    pooling: str = "global"  # global | per_sequence


@dataclass
class Config:
    seed: int = 0
    sim: SimSection = field(default_factory=SimSection)
    data: DataSection = field(default_factory=DataSection)
    memory: MemorySection = field(default_factory=MemorySection)
    occlusion: OcclusionSection = field(default_factory=OcclusionSection)
    net: NetSection = field(default_factory=NetSection)
    train: TrainSection = field(default_factory=TrainSection)
    gtgen: GtgenSection = field(default_factory=GtgenSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> Config:
        if self.data.gt_source not in ("sim", "generated"):
            raise ConfigError(f"data.gt_source must be 'sim' or 'generated', not {self.data.gt_source!r}")
        if self.eval.pooling not in ("global", "per_sequence"):
            raise ConfigError("eval.pooling must be 'global' or 'per_sequence'")
        if not 0.0 <= self.memory.fg_threshold <= 1.0:
            raise ConfigError("memory.fg_threshold must lie in [0, 1]")
        if self.memory.horizon_m <= 0 or self.memory.k < 1:
            raise ConfigError("memory.horizon_m must be > 0 and memory.k >= 1")
        edges = list(self.eval.bin_edges)
        if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigError("eval.bin_edges must be strictly ascending")
        if len(self.net.dims) < 2 or self.net.dims[0] != self.net.dims[-1] + 3:
            raise ConfigError("net.dims must start at C + 3 and end at C")
        if self.train.lr < 0 or self.train.finetune_lr < 0 or self.train.eval_every < 1:
            raise ConfigError("invalid training schedule")
        if self.sim.softening >= 1.0 or min(self.sim.p0, self.sim.p1, self.sim.jitter_px) < 0:
            raise ConfigError("invalid noise settings")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _apply(obj, data: dict, where: str):
    for key, value in data.items():
        if not hasattr(obj, key) or key.startswith("_"):
            raise ConfigError(f"unknown config key {where}{key}")
        cur = getattr(obj, key)
        if dataclasses.is_dataclass(cur):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{key} must be a mapping")
            _apply(cur, value, f"{where}{key}.")
        else:
            if isinstance(cur, bool) and not isinstance(value, bool):
                raise ConfigError(f"{where}{key} must be true or false")
            if isinstance(cur, list) and not isinstance(value, list):
                raise ConfigError(f"{where}{key} must be a list")
            if isinstance(cur, str) and not isinstance(value, str):
                raise ConfigError(f"{where}{key} must be a string")
            if isinstance(cur, (int, float)) and not isinstance(cur, bool):
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigError(f"{where}{key} must be a number")
                if isinstance(cur, int):
                    if isinstance(value, float) and not value.is_integer():
                        raise ConfigError(f"{where}{key} must be an integer")
                    value = int(value)
                else:
                    value = float(value)
            setattr(obj, key, value)


def config_from_dict(data: dict | None) -> Config:
    cfg = Config()
    _apply(cfg, data or {}, "")
    return cfg.validate()


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then the YAML file (if any), then `overrides`."""
    cfg = Config()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _apply(cfg, data, "")
    if overrides:
        _apply(cfg, overrides, "")
    return cfg.validate()
