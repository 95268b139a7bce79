"""Closed-form oracles and diagnostic studies.

The Gaussian-mixture oracle gives exact smoothed densities and scores:
convolving a mixture with component std s by N(0, sigma**2 I) just
inflates each component to variance s**2 + sigma**2. Everything a
trained energy model claims to know about such data can therefore be
checked against closed forms, which is what the study functions here do.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DimensionError, DomainError

__all__ = [
    "GmmOracle",
    "GmmEnergy",
    "ring_gmm",
    "oracle_smoothed_score",
    "ShellSpec",
    "concentration_stats",
    "shell_score_error",
    "ModeCoverage",
    "mode_coverage",
    "mode_threshold",
    "nn_check",
    "ood_energy_score",
    "denoising_residual_score",
]


@dataclass(frozen=True)
class GmmOracle:
    """Isotropic Gaussian mixture with exact smoothed quantities.

    Parameters
    ----------
    means : ndarray of shape (m, d)
        Component centers.
    s : float
        Common component standard deviation (may be zero: point modes).
    weights : ndarray of shape (m,), optional
        Mixture weights; uniform when omitted.
    """

    means: np.ndarray
    s: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        means = np.ascontiguousarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ConfigError(f"means must be [m, d] with m >= 1, got {means.shape}")
        object.__setattr__(self, "means", means)
        if self.s < 0.0:
            raise ConfigError(f"component std must be >= 0, got {self.s}")
        if self.weights is None:
            w = np.full(means.shape[0], 1.0 / means.shape[0])
        else:
            w = np.ascontiguousarray(self.weights, dtype=np.float64)
            if w.shape != (means.shape[0],):
                raise ConfigError("weights must have one entry per component")
            if np.any(w < 0.0) or abs(float(w.sum()) - 1.0) > 1e-12:
                raise ConfigError("weights must be a probability vector")
        object.__setattr__(self, "weights", w)

    @property
    def n_modes(self) -> int:
        return int(self.means.shape[0])

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    def _check_points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"points must be [n, {self.dim}], got {x.shape}")
        return x

    def _smoothed_var(self, sigma: float) -> float:
        v = self.s * self.s + float(sigma) * float(sigma)
        if not v > 0.0:
            raise DomainError("smoothed variance is zero: point modes need sigma > 0")
        return v

    def log_density(self, x, sigma: float = 0.0) -> np.ndarray:
        """Log density of the sigma-smoothed mixture at each row of x."""
        x = self._check_points(x)
        v = self._smoothed_var(sigma)
        sq = np.square(x[:, None, :] - self.means[None, :, :]).sum(axis=2)
        comp = np.log(self.weights)[None, :] - sq / (2.0 * v) \
            - 0.5 * self.dim * math.log(2.0 * math.pi * v)
        return logsumexp(comp, axis=1)

    def score(self, x, sigma: float = 0.0) -> np.ndarray:
        """Gradient of the smoothed log density at each row of x."""
        x = self._check_points(x)
        v = self._smoothed_var(sigma)
        diffs = x[:, None, :] - self.means[None, :, :]
        sq = np.square(diffs).sum(axis=2)
        logits = np.log(self.weights)[None, :] - sq / (2.0 * v)
        logits -= logits.max(axis=1, keepdims=True)
        resp = np.exp(logits)
        resp /= resp.sum(axis=1, keepdims=True)
        return (resp @ self.means - x) / v

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        comp = rng.choice(self.n_modes, size=n, p=self.weights)
        out = self.means[comp]
        if self.s > 0.0:
            out = out + self.s * rng.standard_normal((n, self.dim))
        return out


def ring_gmm(n_modes: int = 8, radius: float = 1.0, s: float = 0.05) -> GmmOracle:
    """Equal-weight modes on a circle; the standard 2-D testbed."""
    angles = 2.0 * math.pi * np.arange(n_modes) / n_modes
    means = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return GmmOracle(means, s)


def oracle_smoothed_score(oracle: GmmOracle, x, sigma: float) -> np.ndarray:
    """Module-level alias for GmmOracle.score."""
    return oracle.score(x, sigma)


class GmmEnergy:
    """The oracle's exact smoothed density wrapped as an energy model.

    energy = -log p_sigma, so the gradient is the negated score. Plain
    ndarrays only; useful as a ground-truth stand-in for a trained net.
    """

    def __init__(self, oracle: GmmOracle, sigma: float):
        self.oracle = oracle
        self.sigma = float(sigma)
        oracle._smoothed_var(sigma)

    @property
    def input_dim(self) -> int:
        return self.oracle.dim

    def energy(self, x) -> np.ndarray:
        return -self.oracle.log_density(x, self.sigma)

    def energy_grad(self, x) -> np.ndarray:
        return -self.oracle.score(x, self.sigma)


@dataclass(frozen=True)
class ShellSpec:
    """A noise shell: dimension, scale, and a band half-width epsilon."""

    d: int
    sigma: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError(f"d must be >= 1, got {self.d}")
        if not self.sigma > 0.0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.epsilon < 0.0:
            raise ConfigError("epsilon must be >= 0")

    @property
    def shell_radius(self) -> float:
        return math.sqrt(self.d) * self.sigma


def concentration_stats(spec: ShellSpec, n_samples: int,
                        rng: np.random.Generator) -> dict:
    """Empirical concentration of Gaussian noise draws in d dimensions.

    Reports the mean norm (near sqrt(d)*sigma), the coefficient of
    variation of the norm, and the mean |cos| against a fixed direction
    (near sqrt(2/(pi*d))). When epsilon > 0 the fraction of draws inside
    the shell band is included. No assertions are made here: d = 1 is as
    legal as d = 3072, concentration just gets weaker.
    """
    if n_samples < 2:
        raise ConfigError("need at least 2 samples")
    draws = spec.sigma * rng.standard_normal((n_samples, spec.d))
    norms = np.linalg.norm(draws, axis=1)
    mean_norm = float(norms.mean())
    out = {
        "mean_norm": mean_norm,
        "cv": float(norms.std() / mean_norm),
        "mean_abs_cos": float(np.mean(np.abs(draws[:, 0] / norms))),
    }
    if spec.epsilon > 0.0:
        r = spec.shell_radius
        out["shell_fraction"] = float(np.mean(np.abs(norms - r) <= spec.epsilon))
    return out


def shell_score_error(net, oracle: GmmOracle, radii, sigma_eval: float, n: int,
                      rng: np.random.Generator, *, sigma0: float) -> np.ndarray:
    """Denoising error of a model on shells of increasing distance.

    For each radius r, points are placed at distance r*sqrt(d)*sigma_eval
    from oracle draws along random directions, i.e. where noise of scale
    r*sigma_eval concentrates. The model's denoising displacement
    sigma0**2 * grad E is compared with the oracle displacement at that
    matched noise level (sigma_eff**2 times the smoothed score, by the
    posterior-mean identity). Reported per radius: relative mean squared
    displacement error. A model trained at a single level is only
    accurate near its own shell; a multiscale model stays flat.
    """
    if not sigma_eval > 0.0:
        raise ConfigError("sigma_eval must be positive")
    if not sigma0 > 0.0:
        raise ConfigError("sigma0 must be positive")
    radii = np.asarray(radii, dtype=np.float64)
    if radii.ndim != 1 or radii.size < 1 or np.any(radii <= 0.0):
        raise ConfigError("radii must be a non-empty 1-D array of positive floats")
    d = oracle.dim
    errors = np.empty(radii.size)
    for i, r in enumerate(radii):
        base = oracle.sample(n, rng)
        dirs = rng.standard_normal((n, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        pts = base + (r * math.sqrt(d) * sigma_eval) * dirs
        sig_eff = r * sigma_eval
        disp_model = (sigma0 * sigma0) * net.energy_grad(pts)
        disp_oracle = -(sig_eff * sig_eff) * oracle.score(pts, sig_eff)
        num = np.square(disp_model - disp_oracle).sum(axis=1).mean()
        den = np.square(disp_oracle).sum(axis=1).mean()
        errors[i] = num / den
    return errors


@dataclass
class ModeCoverage:
    counts: np.ndarray
    unassigned: int
    n_covered: int
    shares: np.ndarray = field(init=False)

    def __post_init__(self):
        total = int(self.counts.sum()) + self.unassigned
        self.shares = self.counts / max(total, 1)


def mode_threshold(oracle: GmmOracle, sigma0: float) -> float:
    """Default assignment radius: 3 * sqrt(s**2 + sigma0**2) * sqrt(d)."""
    return 3.0 * math.sqrt(oracle.s ** 2 + sigma0 ** 2) * math.sqrt(oracle.dim)


def mode_coverage(samples, oracle: GmmOracle, threshold: float) -> ModeCoverage:
    """Assign samples to their nearest mode within `threshold`."""
    if not threshold > 0.0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    x = oracle._check_points(samples)
    dists = np.sqrt(np.square(x[:, None, :] - oracle.means[None, :, :]).sum(axis=2))
    nearest = np.argmin(dists, axis=1)
    within = dists[np.arange(x.shape[0]), nearest] <= threshold
    counts = np.bincount(nearest[within], minlength=oracle.n_modes)
    return ModeCoverage(counts=counts,
                        unassigned=int(x.shape[0] - within.sum()),
                        n_covered=int(np.count_nonzero(counts)))


def nn_check(samples, dataset, k: int = 1):
    """Exact brute-force k nearest dataset rows for each sample row.

    Returns (indices, distances), both [n_samples, k], ties broken by
    dataset order. Meant for eyeballing memorization of training rows.
    """
    samples = np.asarray(samples, dtype=np.float64)
    dataset = np.asarray(dataset, dtype=np.float64)
    if samples.ndim != 2 or dataset.ndim != 2 or samples.shape[1] != dataset.shape[1]:
        raise DimensionError(
            f"incompatible shapes {samples.shape} vs {dataset.shape}")
    if not 1 <= k <= dataset.shape[0]:
        raise ConfigError(f"k must be in [1, {dataset.shape[0]}], got {k}")
    idx = np.empty((samples.shape[0], k), dtype=np.int64)
    dist = np.empty((samples.shape[0], k))
    for i in range(samples.shape[0]):
        d_i = np.sqrt(np.square(dataset - samples[i]).sum(axis=1))
        order = np.argsort(d_i, kind="stable")[:k]
        idx[i] = order
        dist[i] = d_i[order]
    return idx, dist


def ood_energy_score(net, x, sigma0: float, rng: np.random.Generator,
                     n_noise: int = 16) -> np.ndarray:
    """Mean energy of each row under sigma0-scale corruptions.

    Averaging over `n_noise` independent draws smooths the estimate the
    same way the training target is smoothed.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D batch, got shape {x.shape}")
    if n_noise < 1:
        raise ConfigError("n_noise must be >= 1")
    acc = np.zeros(x.shape[0])
    for _ in range(n_noise):
        acc += net.energy(x + sigma0 * rng.standard_normal(x.shape))
    return acc / n_noise


def denoising_residual_score(net, x, sigma0: float, rng: np.random.Generator,
                             n_noise: int = 16) -> np.ndarray:
    """Per-row mean squared denoising residual at the sigma0 scale.

    ||x - x_noisy + sigma0**2 grad E(x_noisy)||**2 averaged over draws.
    Exposed as a raw statistic; no claim is made about how it orders
    in- versus out-of-distribution inputs.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D batch, got shape {x.shape}")
    if n_noise < 1:
        raise ConfigError("n_noise must be >= 1")
    acc = np.zeros(x.shape[0])
    for _ in range(n_noise):
        noisy = x + sigma0 * rng.standard_normal(x.shape)
        resid = x - noisy + (sigma0 * sigma0) * net.energy_grad(noisy)
        acc += np.square(resid).sum(axis=1)
    return acc / n_noise
