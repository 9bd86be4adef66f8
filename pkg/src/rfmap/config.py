"""Run configuration: a versioned JSON document with strict keys."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

from .pinn import LossWeights

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


class MissingSceneError(ConfigError):
    """Neither (or both) of ``scene`` and ``scene_path`` were given."""


@dataclass
class SceneConfig:
    """Arguments for :func:`rfmap.geoscene.synthesize_scene`."""

    seed: int = 1
    bounds: tuple = (0.0, 0.0, 64.0, 64.0)
    n_walls: int = 4
    n_scatterers: int = 2
    f_c: float = 3.5e9
    tx_height: float = 10.0
    rx_height: float = 1.5
    tx_power: float = 0.0

    def __post_init__(self):
        self.bounds = tuple(float(b) for b in self.bounds)
        if len(self.bounds) != 4:
            raise ConfigError("scene.bounds needs four numbers")


@dataclass
class PinnConfig:
    epochs: int = 300
    lr: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 0.1
    batch_size: int = 256
    patience: int = 30
    augment_rounds: int = 5
    jitter_sigma: float = 0.1
    n_colloc: int = 0
    theory_residual: bool = True


@dataclass
class GnnSection:
    epochs: int = 800
    lr: float = 1e-3
    weight_decay: float = 1e-5
    dropout: float = 0.1
    patience: int = 60
    k: int = 8


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    scene: Optional[SceneConfig] = field(default_factory=SceneConfig)
    scene_path: Optional[str] = None
    grid_spacing: float = 1.0
    L: int = 3
    rate: float = 0.1
    seed: int = 0
    rates: tuple = (0.05, 0.10, 0.15, 0.20)
    methods: tuple = ("kriging", "separate", "gnn_only", "pinn_only", "proposed")
    pinn: PinnConfig = field(default_factory=PinnConfig)
    gnn: GnnSection = field(default_factory=GnnSection)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.rates = tuple(float(r) for r in self.rates)
        self.methods = tuple(self.methods)
        self.validate()

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version!r}")
        if (self.scene is None) == (self.scene_path is None):
            raise MissingSceneError("give exactly one of 'scene' and 'scene_path'")
        for name, rate in [("rate", self.rate)] + [("rates", r) for r in self.rates]:
            if not 0.0 < rate < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {rate}")
        positive = {"L": self.L, "grid_spacing": self.grid_spacing,
                    "pinn.epochs": self.pinn.epochs, "gnn.epochs": self.gnn.epochs,
                    "pinn.lr": self.pinn.lr, "gnn.lr": self.gnn.lr,
                    "pinn.batch_size": self.pinn.batch_size, "gnn.k": self.gnn.k,
                    "pinn.patience": self.pinn.patience, "gnn.patience": self.gnn.patience}
        for name, v in positive.items():
            if not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        from .baselines import METHODS

        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigError(f"unknown methods {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = self.loss_weights.to_dict()
        return json.loads(json.dumps(d))

    def digest(self) -> str:
        """Stable hash of the configuration (excluding the output directory)."""
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, blob: dict) -> "RunConfig":
        if not isinstance(blob, dict):
            raise ConfigError("config must be a JSON object")
        if "version" not in blob:
            raise ConfigError("config is missing 'version'")
        kw = _strict(cls, blob, "")
        if kw.get("scene") is None and kw.get("scene_path") is None:
            raise MissingSceneError("config names no scene: set 'scene' or 'scene_path'")
        for key, sub in (("pinn", PinnConfig), ("gnn", GnnSection), ("loss_weights", LossWeights)):
            if key in kw:
                kw[key] = sub(**_strict(sub, kw[key], key + "."))
        if kw.get("scene") is not None:
            kw["scene"] = SceneConfig(**_strict(SceneConfig, kw["scene"], "scene."))
        if kw.get("scene_path") is not None and "scene" not in kw:
            kw["scene"] = None
        try:
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            blob = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(blob)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                              encoding="utf-8")


def _strict(cls, blob, prefix: str) -> dict:
    if not isinstance(blob, dict):
        raise ConfigError(f"'{prefix.rstrip('.')}' must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    extra = sorted(set(blob) - names)
    if extra:
        raise ConfigError("unknown config keys: " + ", ".join(prefix + k for k in extra))
    return dict(blob)
