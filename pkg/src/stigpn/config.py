"""Dimension presets, ablation switches and the flat JSON training config."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Dims:
    raw: int            # raw visual vector length
    visual: int         # projected visual feature
    spatial: int        # spatial encoder output (hidden layer is half of it)
    semantic: int       # class embedding
    evolve: int         # concatenated intra/inter GCN output
    fuse: int           # temporal-fusion BiRNN output
    head_hidden: int
    head_mid: int

    @property
    def branch(self) -> int:
        return self.evolve // 2

    @property
    def visual_spatial(self) -> int:
        return self.visual + self.spatial

    @property
    def spatial_semantic(self) -> int:
        return self.spatial + self.semantic


PRESETS = {
    "paper": Dims(raw=2048, visual=1024, spatial=256, semantic=128, evolve=1024, fuse=2048,
                  head_hidden=2048, head_mid=512),
    "desk": Dims(raw=64, visual=32, spatial=16, semantic=8, evolve=32, fuse=64,
                 head_hidden=64, head_mid=16),
}

ABLATIONS = ("none", "no-te", "intra-only", "inter-only", "dense-baseline")


@dataclass(frozen=True)
class Ablation:
    no_te: bool = False
    intra_only: bool = False
    inter_only: bool = False
    dense_baseline: bool = False

    def __post_init__(self):
        if self.intra_only and self.inter_only:
            raise ConfigError("intra-only and inter-only are mutually exclusive")
        if self.dense_baseline and (self.intra_only or self.inter_only):
            raise ConfigError("dense-baseline replaces both parsed graphs; it cannot be combined "
                              "with intra-only or inter-only")

    @classmethod
    def from_names(cls, names) -> "Ablation":
        if isinstance(names, str):
            names = [names]
        flags = {}
        for n in names:
            if n not in ABLATIONS:
                raise ConfigError(f"unknown ablation {n!r}; choose from {ABLATIONS}")
            if n != "none":
                flags[n.replace("-", "_")] = True
        return cls(**flags)

    def names(self) -> list[str]:
        out = [f.name.replace("_", "-") for f in fields(self) if getattr(self, f.name)]
        return out or ["none"]


STREAMS = ("visual", "semantic", "both")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    preset: str = "desk"
    dims: dict[str, int] = field(default_factory=dict)  # per-field overrides of the preset
    frames: int = 10
    epochs: int = 300
    batch_size: int = 8
    learning_rate: float = 2e-5
    decay_factor: float = 0.8
    decay_interval: int = 10
    loss_weight: float = 1.0
    ablation: tuple[str, ...] = ("none",)
    stream: str = "both"
    use_norm: bool = True
    num_activities: int = 4
    num_affordances: int = 4
    num_object_classes: int = 6
    visual_seed: int = 1234
    visual_noise: float = 0.1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}")
        unknown = set(self.dims) - {f.name for f in fields(Dims)}
        if unknown:
            raise ConfigError(f"unknown dimension keys: {sorted(unknown)}")
        if self.stream not in STREAMS:
            raise ConfigError(f"stream must be one of {STREAMS}")
        if self.frames < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("frames and batch_size must be positive, epochs non-negative")
        object.__setattr__(self, "ablation", tuple(self.ablation) if not isinstance(self.ablation, str)
                           else (self.ablation,))
        self.ablation_flags  # validates

    @property
    def resolved_dims(self) -> Dims:
        return replace(PRESETS[self.preset], **self.dims)

    @property
    def ablation_flags(self) -> Ablation:
        return Ablation.from_names(self.ablation)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["ablation"] = list(self.ablation)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a flat JSON object")
        return cls.from_dict(data)
