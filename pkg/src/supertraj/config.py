"""Pipeline configuration with ``key = value`` file support."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields

from .errors import ConfigError

# reference frame size used when scaling grid and superpixel counts to small inputs
REFERENCE_PIXELS = 854 * 480


@dataclass(frozen=True)
class Config:
    K: int = 1200
    iterations: int = 5
    dt: int = 3
    N: int = 8
    superpixels: int = 2000
    compactness: float = 10.0
    gmm_components: int = 5
    seed_stride: int = 2
    min_cluster_size: int = 5
    H: float = 1e9
    density_mode: str = "similarity"
    propagation_iterations: int = 10
    threshold: float = 0.5
    app_scale: float = 1.0 / 50.0
    reverse_variant: str = "printed"
    seed: int = 0

    def __post_init__(self):
        for name in ("K", "iterations", "dt", "superpixels", "gmm_components", "seed_stride",
                     "min_cluster_size", "propagation_iterations"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.N < 0:
            raise ConfigError("N must be non-negative")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        if self.density_mode not in ("similarity", "literal"):
            raise ConfigError(f"unknown density_mode {self.density_mode!r}")
        if self.reverse_variant not in ("printed", "extrapolated"):
            raise ConfigError(f"unknown reverse_variant {self.reverse_variant!r}")
        if self.app_scale <= 0 or self.H <= 0 or self.compactness <= 0:
            raise ConfigError("app_scale, H and compactness must be positive")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def scaled_to(self, width: int, height: int) -> "Config":
        """Scale ``K`` and ``superpixels`` so cells and regions keep their reference pixel area."""
        ratio = width * height / REFERENCE_PIXELS
        return self.replace(K=max(1, math.floor(self.K * ratio + 0.5)),
                            superpixels=max(1, math.floor(self.superpixels * ratio + 0.5)))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, items: dict[str, str]) -> "Config":
        return self.replace(**{k: _coerce(k, v) for k, v in items.items()})


_TYPES = {f.name: f.type for f in fields(Config)}


def _coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            if "/" in raw:
                num, den = raw.split("/", 1)
                return float(num) / float(den)
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def parse_assignments(lines) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_config(path: str | os.PathLike | None = None, overrides: dict[str, str] | None = None,
                base: Config | None = None) -> Config:
    """Defaults, then the file at ``path``, then ``overrides``."""
    cfg = base or Config()
    if path is not None:
        with open(path) as fh:
            cfg = cfg.with_overrides(parse_assignments(fh))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg


def dump_config(cfg: Config) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_dict().items())
