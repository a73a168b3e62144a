"""Gaussian RBF rating codec.

A rating x is represented by its responses exp(-(x - c_k)^2 / sigma^2) to a
grid of evenly spaced centers c_k; decoding picks the center with the largest
response.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import OutOfRange, WrongDimension

_RANGE_TOL = 1e-9


@dataclass(frozen=True)
class RbfConfig:
    num_centers: int = 16
    range_min: float = 1.0
    range_max: float = 5.0
    sigma: float | None = None  # None -> center spacing
    noise_scale: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.num_centers < 2:
            raise ValueError("num_centers must be >= 2")
        if not self.range_max > self.range_min:
            raise ValueError("range_max must exceed range_min")
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")

    @property
    def spacing(self) -> float:
        return (self.range_max - self.range_min) / (self.num_centers - 1)

    @property
    def width(self) -> float:
        return self.spacing if self.sigma is None else float(self.sigma)

    def to_dict(self) -> dict:
        return asdict(self)


def centers(cfg: RbfConfig = RbfConfig()) -> np.ndarray:
    k = np.arange(cfg.num_centers, dtype=np.float64)
    return cfg.range_min + k * (cfg.range_max - cfg.range_min) / (cfg.num_centers - 1)


def encode(
    x: float,
    cfg: RbfConfig = RbfConfig(),
    apply_noise: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Encode one rating as a ``num_centers`` vector in (0, 1].

    With ``apply_noise`` the rating is first jittered by uniform noise in
    [-noise_scale, noise_scale] drawn from ``rng`` and clamped to the range.
    """
    x = float(x)
    if not (cfg.range_min - _RANGE_TOL <= x <= cfg.range_max + _RANGE_TOL):
        raise OutOfRange(f"rating {x} outside [{cfg.range_min}, {cfg.range_max}]")
    if apply_noise and cfg.noise_scale > 0:
        if rng is None:
            raise ValueError("apply_noise requires an explicit rng")
        x += rng.uniform(-cfg.noise_scale, cfg.noise_scale)
    x = min(max(x, cfg.range_min), cfg.range_max)
    d = x - centers(cfg)
    return np.exp(-(d * d) / cfg.width**2)


def encode_many(xs, cfg: RbfConfig = RbfConfig(), apply_noise=False, rng=None) -> np.ndarray:
    return np.stack([encode(x, cfg, apply_noise, rng) for x in xs])


def decode(t, cfg: RbfConfig = RbfConfig()) -> float:
    t = np.asarray(t, dtype=np.float64)
    if t.shape != (cfg.num_centers,):
        raise WrongDimension(f"expected {cfg.num_centers} components, got shape {t.shape}")
    # np.argmax returns the first maximum, i.e. ties go to the lower index
    return float(centers(cfg)[int(np.argmax(t))])
