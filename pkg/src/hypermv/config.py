"""Run configuration (JSON file <-> dataclass)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .backbone import BackboneConfig
from .dataset import SPLIT_MODES
from .hypergraph import STRATEGIES

VARIANTS = ("hypermv", "hypermv-gnn", "multi-view-baseline", "single-view-baseline")
DTYPES = ("float64", "float32")


@dataclass(frozen=True)
class RunConfig:
    T: int = 9
    k: int = 3
    L: int = 2
    channels: tuple[int, ...] = (8, 16, 32, 64)
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 12
    epochs: int = 40
    decay_step: int = 10
    gamma: float = 0.5
    seed: int = 0
    variant: str = "hypermv"
    strategy: str = "both"
    attention: bool = True
    split_mode: str = "cross-subject"
    val_views: int = 1
    dtype: str = "float64"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.split_mode not in SPLIT_MODES:
            raise ValueError(f"split_mode must be one of {SPLIT_MODES}, got {self.split_mode!r}")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {DTYPES}")
        if self.T < 1 or self.k < 1 or self.L < 1:
            raise ValueError("T, k and L must be >= 1")
        if self.batch_size < 1 or self.epochs < 0 or self.decay_step < 1:
            raise ValueError("bad batch size / epochs / decay step")

    @property
    def backbone(self) -> BackboneConfig:
        return BackboneConfig(channels=self.channels)

    def with_(self, **changes) -> "RunConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")
