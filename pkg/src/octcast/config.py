"""Configuration dataclasses and JSON config loading.

A config file is a JSON object with optional sections ``model``, ``train``,
``synth``, ``labels`` and ``eval``; each section uses the exact field names
of the matching dataclass. Unknown sections or keys raise ``ConfigError``.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

CONDITIONING_MODES = ("NONE", "H_GIVEN_O", "O_GIVEN_H")
TOKEN_CATEGORIES = ("hand", "object", "global")


@dataclass
class ModelConfig:
    T: int = 10
    F: int = 4
    D: int = 512
    heads: int = 8
    enc_blocks: int = 6
    dec_blocks: int = 4
    dropout: float = 0.1
    latent_dim: int = 256
    lambda_obj: float = 0.1
    K_samples: int = 20
    N_contacts: int = 5
    d_feat: int = 1024
    conditioning: str = "O_GIVEN_H"

    def validate(self) -> "ModelConfig":
        if self.D % self.heads:
            raise ConfigError(f"D={self.D} is not divisible by heads={self.heads}")
        if self.D % 2:
            raise ConfigError("D must be even for sinusoidal embeddings")
        for name in ("T", "F", "D", "heads", "latent_dim", "K_samples", "N_contacts", "d_feat"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.enc_blocks < 0 or self.dec_blocks < 0:
            raise ConfigError("block counts must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.conditioning not in CONDITIONING_MODES:
            raise ConfigError(f"unknown conditioning mode {self.conditioning!r}")
        if self.conditioning == "H_GIVEN_O":
            raise ConfigError("conditioning mode H_GIVEN_O is reserved and not supported")
        return self


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 32
    epochs: int = 35
    warmup_epochs: int = 5
    seed: int = 0
    lambda_obj: float = 0.1
    ablate: list[str] = field(default_factory=list)
    weight_decay: float = 0.0

    def validate(self) -> "TrainConfig":
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError("warmup_epochs must be in [0, epochs)")
        if self.lambda_obj < 0:
            raise ConfigError("lambda_obj must be >= 0")
        bad = set(self.ablate) - set(TOKEN_CATEGORIES)
        if bad:
            raise ConfigError(f"unknown ablation categories {sorted(bad)}")
        return self


@dataclass
class LabelConfig:
    ransac_threshold: float = 3.0
    ransac_iterations: int = 2000
    ransac_seed: int = 0
    dense_fps: int = 20
    label_fps: int = 4

    def validate(self) -> "LabelConfig":
        if self.ransac_threshold <= 0:
            raise ConfigError("ransac_threshold must be positive")
        if self.dense_fps < self.label_fps or self.dense_fps % self.label_fps:
            raise ConfigError("dense_fps must be a positive multiple of label_fps")
        return self

    @property
    def substeps(self) -> int:
        return self.dense_fps // self.label_fps


@dataclass
class SynthConfig:
    T: int = 10
    F: int = 4
    frame_size: tuple[int, int] = (456, 256)
    d_feat: int = 1024
    dense_fps: int = 20
    label_fps: int = 4
    camera_motion: float = 1.0
    n_bg: int = 40
    outlier_frac: float = 0.0
    dropout: float = 0.0
    hand_absent_prob: float = 0.0
    n_objects: int = 2
    active_prob: float = 0.5
    max_contacts: int = 5
    contact_spread: float = 6.0
    curvature: float = 1.0
    object_placement: str = "uniform"
    n_verbs: int = 2
    n_nouns: int = 3
    acting_side: int | None = None
    ransac_threshold: float = 3.0
    ransac_iterations: int = 2000

    def validate(self) -> "SynthConfig":
        if self.T < 2 or self.F < 1:
            raise ConfigError("need T >= 2 and F >= 1")
        if self.dense_fps % self.label_fps:
            raise ConfigError("dense_fps must be a multiple of label_fps")
        if not 0 <= self.outlier_frac < 1 or not 0 <= self.dropout < 1:
            raise ConfigError("outlier_frac and dropout must be in [0, 1)")
        if not 1 <= self.n_objects <= 2:
            raise ConfigError("n_objects must be 1 or 2")
        if self.acting_side not in (None, 0, 1):
            raise ConfigError("acting_side must be 0, 1 or null")
        if self.object_placement not in ("uniform", "near_hand"):
            raise ConfigError(f"unknown object_placement {self.object_placement!r}")
        self.frame_size = tuple(self.frame_size)
        return self

    @property
    def substeps(self) -> int:
        return self.dense_fps // self.label_fps


@dataclass
class EvalConfig:
    k: int = 20
    grid: tuple[int, int] = (32, 32)
    sigma: float = 0.05
    seed: int = 0

    def validate(self) -> "EvalConfig":
        if self.k < 1 or self.sigma <= 0:
            raise ConfigError("k must be >= 1 and sigma > 0")
        self.grid = tuple(self.grid)
        return self


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "labels": LabelConfig,
    "synth": SynthConfig,
    "eval": EvalConfig,
}


def from_dict(cls, data: dict[str, Any] | None):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    try:
        obj = cls(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return obj.validate()


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Read a sectioned JSON config file into dataclass instances."""
    raw: dict[str, Any] = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config sections: {unknown}")
    return {name: from_dict(cls, raw.get(name)) for name, cls in SECTIONS.items()}


def override(cfg, **flags):
    """Apply non-None CLI flag values on top of a config (flag > file > default)."""
    updates = {k: v for k, v in flags.items() if v is not None}
    if not updates:
        return cfg
    return from_dict(type(cfg), {**dataclasses.asdict(cfg), **updates})
