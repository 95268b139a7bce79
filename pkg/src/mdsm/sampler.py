"""Annealed Langevin dynamics and the single-step denoising jump.

Sampling starts from a broad Gaussian cloud, runs unadjusted Langevin
updates while the temperature decays geometrically (with a short
terminal plateau), then applies one denoising jump

    x <- x - sigma0**2 * grad E(x)

to strip the residual sigma0-scale blur. There is no Metropolis
correction anywhere in this module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError

__all__ = [
    "AnnealSchedule",
    "Trace",
    "default_anneal",
    "anneal_for_schedule",
    "langevin_step",
    "denoise_jump",
    "sample",
    "inpaint",
]


@dataclass(frozen=True)
class AnnealSchedule:
    """Per-step temperatures plus the Langevin step size."""

    temperatures: np.ndarray
    eps: float = 0.02

    def __post_init__(self):
        temps = np.ascontiguousarray(self.temperatures, dtype=np.float64)
        object.__setattr__(self, "temperatures", temps)
        if temps.ndim != 1 or temps.size < 1:
            raise ConfigError("temperatures must be a non-empty 1-D array")
        if not np.all(temps > 0.0):
            raise ConfigError("temperatures must be positive")
        if not self.eps > 0.0:
            raise ConfigError(f"step size eps must be positive, got {self.eps}")

    @property
    def n_steps(self) -> int:
        return int(self.temperatures.size)


def default_anneal(n_steps: int = 2700, t_start: float = 100.0,
                   t_end: float = 0.25, eps: float = 0.02) -> AnnealSchedule:
    """Geometric decay from t_start to t_end with a 10% terminal plateau."""
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    if not (t_start >= t_end > 0.0):
        raise ConfigError(f"need t_start >= t_end > 0, got {t_start}, {t_end}")
    n_plateau = n_steps // 10
    n_decay = n_steps - n_plateau
    temps = np.concatenate([
        np.geomspace(t_start, t_end, n_decay),
        np.full(n_plateau, t_end),
    ])
    return AnnealSchedule(temps, eps)


def anneal_for_schedule(noise_schedule, n_steps: int = 2700,
                        t_start: float = 100.0, eps: float = 0.02) -> AnnealSchedule:
    """Anneal whose final temperature matches the smallest noise level.

    T_end = (sigma_1 / sigma0)**2, the temperature at which the Langevin
    stationary blur equals the finest trained scale.
    """
    t_end = float(noise_schedule.levels[0] / noise_schedule.sigma0) ** 2
    return default_anneal(n_steps, t_start, t_end, eps)


@dataclass
class Trace:
    """Per-step energy summary recorded during sampling."""

    step: np.ndarray
    temperature: np.ndarray
    mean_energy: np.ndarray
    std_energy: np.ndarray

    def __len__(self):
        return len(self.step)


def langevin_step(net, x: np.ndarray, temperature: float, eps: float,
                  rng: np.random.Generator) -> np.ndarray:
    """One unadjusted Langevin update at the given temperature."""
    if not temperature > 0.0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    if not eps > 0.0:
        raise ConfigError(f"eps must be positive, got {eps}")
    g = net.energy_grad(x)
    drift = (0.5 * eps * eps) * g
    noise = (eps * math.sqrt(temperature)) * rng.standard_normal(x.shape)
    out = x - drift + noise
    if not np.all(np.isfinite(out)):
        raise NumericError("Langevin update produced non-finite coordinates")
    return out


def denoise_jump(net, x: np.ndarray, sigma0: float) -> np.ndarray:
    """Single-step denoising: x - sigma0**2 * grad E(x)."""
    if not sigma0 > 0.0:
        raise ConfigError(f"sigma0 must be positive, got {sigma0}")
    x = np.asarray(x, dtype=np.float64)
    return x - (sigma0 * sigma0) * net.energy_grad(x)


def _init_cloud(n_samples, d, t_start, sigma0, rng):
    return 0.5 + (math.sqrt(t_start) * sigma0) * rng.standard_normal((n_samples, d))


def sample(net, n_samples: int, anneal: AnnealSchedule, rng: np.random.Generator,
           sigma0: float, trace: bool = False):
    """Draw n_samples points by annealed Langevin dynamics.

    Returns (samples, trace) where trace is a :class:`Trace` when
    requested and None otherwise. The chain starts at
    N(0.5, T_1 * sigma0**2 I) and ends with one denoising jump.
    """
    if n_samples < 1:
        raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
    if not sigma0 > 0.0:
        raise ConfigError(f"sigma0 must be positive, got {sigma0}")
    temps = anneal.temperatures
    x = _init_cloud(n_samples, net.input_dim, temps[0], sigma0, rng)
    rec = _TraceRecorder(anneal.n_steps) if trace else None
    for i, t in enumerate(temps):
        try:
            x = langevin_step(net, x, t, anneal.eps, rng)
        except NumericError as e:
            raise NumericError(f"sampler diverged at step {i}: {e}") from e
        if rec is not None:
            rec.push(i, t, net.energy(x))
    x = denoise_jump(net, x, sigma0)
    return x, (rec.done() if rec is not None else None)


def inpaint(net, known: np.ndarray, mask: np.ndarray, anneal: AnnealSchedule,
            rng: np.random.Generator, sigma0: float) -> np.ndarray:
    """Sample free coordinates conditioned on the masked (known) ones.

    `mask` is a boolean vector over coordinates; True marks a clamped
    coordinate whose value is taken from `known`. Clamped coordinates are
    re-pinned to known + sqrt(T_t)*sigma0*noise before every Langevin
    update and restored exactly at the end. With an all-False mask the
    draws reduce to those of :func:`sample`.
    """
    known = np.asarray(known, dtype=np.float64)
    if known.ndim != 2 or known.shape[1] != net.input_dim:
        raise DimensionError(f"known must be [n, {net.input_dim}], got {known.shape}")
    mask = np.asarray(mask)
    if mask.shape != (net.input_dim,):
        raise DimensionError(f"mask must have shape ({net.input_dim},), got {mask.shape}")
    if mask.dtype != np.bool_:
        vals = np.unique(mask)
        if not np.all(np.isin(vals, (0, 1))):
            raise ConfigError("mask entries must be boolean or 0/1")
        mask = mask.astype(bool)
    if mask.all():
        raise ConfigError("inpainting needs at least one free coordinate")
    if not sigma0 > 0.0:
        raise ConfigError(f"sigma0 must be positive, got {sigma0}")

    temps = anneal.temperatures
    n_known = int(mask.sum())
    x = _init_cloud(known.shape[0], net.input_dim, temps[0], sigma0, rng)
    for i, t in enumerate(temps):
        if n_known:
            jitter = (sigma0 * math.sqrt(t)) * rng.standard_normal((known.shape[0], n_known))
            x[:, mask] = known[:, mask] + jitter
        try:
            x = langevin_step(net, x, t, anneal.eps, rng)
        except NumericError as e:
            raise NumericError(f"inpainting diverged at step {i}: {e}") from e
    x = denoise_jump(net, x, sigma0)
    x[:, mask] = known[:, mask]
    return x


class _TraceRecorder:
    def __init__(self, n_steps):
        self.step = np.empty(n_steps, dtype=np.int64)
        self.temperature = np.empty(n_steps)
        self.mean_energy = np.empty(n_steps)
        self.std_energy = np.empty(n_steps)

    def push(self, i, t, energies):
        self.step[i] = i
        self.temperature[i] = t
        self.mean_energy[i] = float(np.mean(energies))
        self.std_energy[i] = float(np.std(energies))

    def done(self) -> Trace:
        return Trace(self.step, self.temperature, self.mean_energy, self.std_energy)
