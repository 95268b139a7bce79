"""Noise-level schedules and batch corruption.

A schedule holds K noise levels sigma_1 <= ... <= sigma_K plus the
reference smoothing width sigma0 that defines the single target density
the model is trained toward. Corruption assigns level i % K to row i, so
a batch of size K touches every level exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, DomainError

__all__ = ["NoiseSchedule", "make_schedule", "perturb_batch", "weight"]


@dataclass(frozen=True)
class NoiseSchedule:
    levels: np.ndarray
    spacing: str
    sigma0: float

    def __post_init__(self):
        levels = np.ascontiguousarray(self.levels, dtype=np.float64)
        object.__setattr__(self, "levels", levels)
        if self.spacing not in ("linear", "geometric"):
            raise ConfigError(f"spacing must be 'linear' or 'geometric', got {self.spacing!r}")
        if levels.ndim != 1 or levels.size < 1:
            raise ConfigError("levels must be a non-empty 1-D array")
        if not np.all(levels > 0.0):
            raise ConfigError("noise levels must be positive")
        if np.any(np.diff(levels) < 0.0):
            raise ConfigError("noise levels must be ascending")
        if not self.sigma0 > 0.0:
            raise ConfigError(f"sigma0 must be positive, got {self.sigma0}")

    @property
    def n_levels(self) -> int:
        return int(self.levels.size)

    def with_sigma0(self, sigma0: float) -> "NoiseSchedule":
        return NoiseSchedule(self.levels, self.spacing, float(sigma0))


def make_schedule(sigma_min: float, sigma_max: float, n_levels: int,
                  spacing: str = "linear", sigma0: float = 0.1) -> NoiseSchedule:
    """Build a schedule of n_levels between sigma_min and sigma_max inclusive."""
    if not (0.0 < sigma_min <= sigma_max):
        raise ConfigError(f"need 0 < sigma_min <= sigma_max, got [{sigma_min}, {sigma_max}]")
    if n_levels < 1:
        raise ConfigError(f"n_levels must be >= 1, got {n_levels}")
    if spacing == "linear":
        levels = np.linspace(sigma_min, sigma_max, n_levels)
    elif spacing == "geometric":
        levels = np.geomspace(sigma_min, sigma_max, n_levels)
    else:
        raise ConfigError(f"spacing must be 'linear' or 'geometric', got {spacing!r}")
    return NoiseSchedule(levels, spacing, float(sigma0))


def perturb_batch(x: np.ndarray, schedule: NoiseSchedule,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Corrupt each row of x with Gaussian noise at its assigned level.

    Returns (x_noisy, sigmas) where sigmas[i] = levels[i % K].
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"perturb_batch expects a 2-D batch, got shape {x.shape}")
    sigmas = schedule.levels[np.arange(x.shape[0]) % schedule.n_levels]
    noise = rng.standard_normal(x.shape)
    return x + sigmas[:, None] * noise, sigmas


def weight(sigma) -> np.ndarray:
    """Per-level loss weight l(sigma) = 1/sigma**2."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise DomainError("weight() needs positive sigma")
    return 1.0 / np.square(sigma)
