"""Pipeline configuration.

Values are layered: defaults < config file (``--config`` or the
``MVPRIOR_CONFIG`` environment variable) < manifest ``config`` block <
command-line flags.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

from mvprior.errors import ValidationError

CONFIG_ENV = "MVPRIOR_CONFIG"


@dataclass(frozen=True)
class PipelineConfig:
    ransac_iterations: int = 1000
    ransac_threshold: float = 0.05
    seed: int = 0
    fourier_freqs: int = 4
    gamma: float = 1.2
    gamma_threshold: int = 25
    max_extent: float = 5.0
    bucket: Optional[str] = None  # "HxW" override
    align: bool = True
    max_rotation_drift: float = 1e-4

    def __post_init__(self):
        if self.ransac_iterations < 1:
            raise ValidationError("ransac_iterations must be >= 1")
        if not 0 < self.ransac_threshold < 1:
            raise ValidationError("ransac_threshold must be in (0, 1)")
        if not 0 <= self.fourier_freqs <= 16:
            raise ValidationError("fourier_freqs must be in [0, 16]")
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        if self.gamma_threshold < 0:
            raise ValidationError("gamma_threshold must be >= 0")
        if not self.max_extent > 0:
            raise ValidationError("max_extent must be positive")
        if self.bucket is not None:
            parse_bucket(self.bucket)

    def updated(self, **overrides) -> "PipelineConfig":
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **overrides)

    def to_dict(self):
        return asdict(self)


def parse_bucket(text: str):
    from mvprior.conditioning import ResolutionBucket

    try:
        h, w = (int(x) for x in text.lower().split("x"))
    except ValueError as exc:
        raise ValidationError(f"bucket must look like 512x512, got {text!r}") from exc
    return ResolutionBucket(h, w)


def load_config(path=None) -> PipelineConfig:
    path = path or os.environ.get(CONFIG_ENV)
    cfg = PipelineConfig()
    if not path:
        return cfg
    try:
        with open(path) as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    return cfg.updated(**doc)
