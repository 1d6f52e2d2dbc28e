"""Keyed text configuration: one ``key = value`` per line.

Unknown keys are rejected and every value is type-checked against the
field it sets. Saving writes fields in declaration order, so a
load -> save -> load round trip is identity.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import FormatError


@dataclass
class Config:
    # geometry / overlap
    voxel_size: float = 0.5
    pair_threshold: float = 0.1        # th inside Eq.-style overlap sums
    overlap_threshold: float = 0.5     # O_th for loop candidacy
    # detector
    keyframe_stride: int = 2           # N
    far_radius: float = 5.0            # d_f
    recent_arclength: float = 20.0     # d_h
    translation_threshold: float = 3.0  # d_th
    # model dims
    voxel_dim: int = 32
    point_dim: int = 16
    hidden_dim: int = 64
    model_dim: int = 32
    heads: int = 4
    point_budget: int = 64
    density_radius: float = 0.5
    pair_term: str = "elementwise"
    # registration pairing
    pairing_threshold: float = 0.1
    max_pairs: int = 32
    # training
    lr: float = 0.001
    steps: int = 2000
    train_pairs: int = 500
    noise_sigma: float = 0.02
    seed: int = 0
    scene_style: str = "blocks"
    half_extent: float = 4.5
    gamma: float = 1.0
    eta: float = 1.0
    circle_alpha: float = 0.5
    circle_beta: float = 0.5
    distance_points_cap: int = 1200
    # evaluation
    success_te: float = 2.0
    success_re: float = 5.0

    def validate(self) -> None:
        positive = ("voxel_size", "far_radius", "recent_arclength",
                    "translation_threshold", "overlap_threshold",
                    "half_extent", "density_radius")
        for name in positive:
            if getattr(self, name) <= 0:
                raise FormatError(f"config {name} must be positive")
        if not 0 < self.pair_threshold < 1:
            raise FormatError("config pair_threshold must lie in (0, 1)")
        if self.keyframe_stride < 1:
            raise FormatError("config keyframe_stride must be >= 1")
        if self.pair_term not in ("elementwise", "inner"):
            raise FormatError("config pair_term must be elementwise or inner")
        if self.scene_style not in ("blocks", "corridor"):
            raise FormatError("config scene_style must be blocks or corridor")


_FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def load_config(path) -> Config:
    cfg = Config()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise FormatError("expected 'key = value'", line=lineno)
            key, _, raw = text.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in _FIELD_TYPES:
                raise FormatError(f"unknown config key {key!r}", line=lineno)
            try:
                setattr(cfg, key, _parse(key, raw))
            except ValueError:
                raise FormatError(f"bad value for {key}: {raw!r}", line=lineno)
    cfg.validate()
    return cfg


def _parse(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def save_config(cfg: Config, path) -> None:
    with open(path, "w") as fh:
        for f in fields(Config):
            value = getattr(cfg, f.name)
            if isinstance(value, float):
                fh.write(f"{f.name} = {value:.17g}\n")
            else:
                fh.write(f"{f.name} = {value}\n")
