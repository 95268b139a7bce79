"""Partition-function estimation by annealed importance sampling.

The bridge between the model and a Gaussian reference N(0, ref_std**2 I)
is the geometric path

    f_beta(x) proportional to exp(-(1-beta) E_ref(x) - beta E(x))

traversed with HMC transitions. Forward AIS (reference to model) tends
to under-estimate log Z, the reverse direction over-estimates it, so the
pair brackets the truth. Estimates are means over independent chains
with a bootstrap standard error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, DimensionError, DomainError, NumericError

__all__ = [
    "AisConfig",
    "AisResult",
    "leapfrog",
    "hmc_step",
    "ais_logz",
    "reverse_ais_logz",
    "bits_per_dim",
    "beta_schedule_exponential",
]


def beta_schedule_exponential(n_intermediates: int, floor: float = 1e-4) -> np.ndarray:
    """Schedule spending most of its steps near beta = 1.

    1 - beta decays geometrically from 1 to `floor`, with the endpoints
    forced to exactly 0 and 1.
    """
    if n_intermediates < 1:
        raise ConfigError("n_intermediates must be >= 1")
    if not 0.0 < floor < 1.0:
        raise ConfigError("floor must lie in (0, 1)")
    betas = 1.0 - np.geomspace(1.0, floor, n_intermediates + 1)
    betas[0] = 0.0
    betas[-1] = 1.0
    return betas


@dataclass
class AisConfig:
    n_intermediates: int = 1000
    hmc_steps_per_dist: int = 2
    leapfrog_steps: int = 5
    leapfrog_eps: float = 0.15
    n_chains: int = 100
    reference_std: float = 1.0
    beta_schedule: np.ndarray | None = None

    def __post_init__(self):
        if self.n_intermediates < 1:
            raise ConfigError("n_intermediates must be >= 1")
        if self.hmc_steps_per_dist < 1 or self.leapfrog_steps < 1:
            raise ConfigError("HMC step counts must be >= 1")
        if not self.leapfrog_eps > 0.0:
            raise ConfigError("leapfrog_eps must be positive")
        if self.n_chains < 2:
            raise ConfigError("need at least 2 chains for a standard error")
        if not self.reference_std > 0.0:
            raise ConfigError("reference_std must be positive")
        if self.beta_schedule is None:
            betas = np.linspace(0.0, 1.0, self.n_intermediates + 1)
        else:
            betas = np.ascontiguousarray(self.beta_schedule, dtype=np.float64)
            if betas.ndim != 1 or betas.size != self.n_intermediates + 1:
                raise ConfigError(
                    "beta_schedule must have n_intermediates + 1 entries")
            if betas[0] != 0.0 or betas[-1] != 1.0 or np.any(np.diff(betas) <= 0.0):
                raise ConfigError(
                    "beta_schedule must increase strictly from 0 to 1")
        self.beta_schedule = betas

    @classmethod
    def high_accuracy(cls, **overrides) -> "AisConfig":
        """The heavyweight protocol: 10000 intermediates, 10 HMC sweeps each."""
        base = dict(n_intermediates=10000, hmc_steps_per_dist=10)
        base.update(overrides)
        return cls(**base)


@dataclass
class AisResult:
    logz: float
    stderr: float
    ess: float
    direction: str
    low_ess: bool
    n_chains: int
    n_intermediates: int

    def as_dict(self) -> dict:
        return {
            "logZ": self.logz,
            "stderr": self.stderr,
            "ess": self.ess,
            "direction": self.direction,
            "low_ess": self.low_ess,
            "n_chains": self.n_chains,
            "n_intermediates": self.n_intermediates,
        }


def leapfrog(logp_grad, x: np.ndarray, p: np.ndarray, eps: float, n_steps: int):
    """Leapfrog integration of Hamiltonian dynamics for -logp.

    Returns (x, p, logp, grad) at the end point. Time-reversible: running
    again with negated momentum returns to the start up to roundoff.
    """
    _, g = logp_grad(x)
    p = p + (0.5 * eps) * g
    for i in range(n_steps):
        x = x + eps * p
        logp, g = logp_grad(x)
        p = p + (eps if i < n_steps - 1 else 0.5 * eps) * g
    return x, p, logp, g


def hmc_step(logp_grad, x: np.ndarray, eps: float, n_leapfrog: int,
             rng: np.random.Generator):
    """One vectorized HMC transition per chain row.

    Non-finite Hamiltonians reject their proposal rather than abort.
    Returns (x_new, accept_rate).
    """
    logp0, _ = logp_grad(x)
    p0 = rng.standard_normal(x.shape)
    try:
        xn, pn, logp1, _ = leapfrog(logp_grad, x, p0, eps, n_leapfrog)
        h0 = -logp0 + 0.5 * np.sum(np.square(p0), axis=1)
        h1 = -logp1 + 0.5 * np.sum(np.square(pn), axis=1)
        log_acc = h0 - h1
    except NumericError:
        # the whole batch of proposals blew up; keep current states
        rng.uniform(size=x.shape[0])
        return x, 0.0
    u = rng.uniform(size=x.shape[0])
    accept = np.isfinite(log_acc) & (np.log(u) < log_acc)
    x_new = np.where(accept[:, None], xn, x)
    return x_new, float(np.mean(accept))


def _reference_parts(ref_std: float, d: int):
    inv_var = 1.0 / (ref_std * ref_std)
    half_inv = 0.5 * inv_var

    def e_ref(x):
        return np.sum(np.square(x), axis=1) * half_inv

    def grad_ref(x):
        return x * inv_var

    log_z_ref = 0.5 * d * math.log(2.0 * math.pi * ref_std * ref_std)
    return e_ref, grad_ref, log_z_ref


def _path_logp_grad(net, e_ref, grad_ref, beta):
    def f(x):
        e = net.energy(x)
        g = net.energy_grad(x)
        logp = -(1.0 - beta) * e_ref(x) - beta * e
        grad = -(1.0 - beta) * grad_ref(x) - beta * g
        return logp, grad
    return f


def _finish(logw, log_z_ref, sign, direction, config, rng) -> AisResult:
    n = logw.size
    log_mean = float(logsumexp(logw) - math.log(n))
    logz = log_z_ref + sign * log_mean

    boot = np.empty(200)
    for b in range(200):
        pick = rng.integers(0, n, size=n)
        boot[b] = log_z_ref + sign * float(logsumexp(logw[pick]) - math.log(n))
    stderr = float(np.std(boot))

    shifted = np.exp(logw - np.max(logw))
    ess = float(np.square(np.sum(shifted)) / np.sum(np.square(shifted)))
    return AisResult(logz=logz, stderr=stderr, ess=ess, direction=direction,
                     low_ess=bool(ess < 2.0), n_chains=n,
                     n_intermediates=config.n_intermediates)


def ais_logz(net, config: AisConfig, rng: np.random.Generator) -> AisResult:
    """Forward AIS estimate of log Z for exp(-E)."""
    d = net.input_dim
    e_ref, grad_ref, log_z_ref = _reference_parts(config.reference_std, d)
    betas = config.beta_schedule
    x = config.reference_std * rng.standard_normal((config.n_chains, d))
    logw = np.zeros(config.n_chains)
    for k in range(betas.size - 1):
        db = betas[k + 1] - betas[k]
        logw += db * (e_ref(x) - net.energy(x))
        target = _path_logp_grad(net, e_ref, grad_ref, betas[k + 1])
        for _ in range(config.hmc_steps_per_dist):
            x, _ = hmc_step(target, x, config.leapfrog_eps,
                            config.leapfrog_steps, rng)
    return _finish(logw, log_z_ref, +1.0, "forward", config, rng)


def reverse_ais_logz(net, data_points: np.ndarray, config: AisConfig,
                     rng: np.random.Generator) -> AisResult:
    """Reverse AIS started from the provided points (assumed model-typical).

    Over-estimates log Z in expectation, so together with the forward
    estimate it brackets the truth.
    """
    x = np.ascontiguousarray(data_points, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_dim:
        raise DimensionError(
            f"data_points must be [chains, {net.input_dim}], got {x.shape}")
    if x.shape[0] < 2:
        raise ConfigError("need at least 2 starting points")
    d = net.input_dim
    e_ref, grad_ref, log_z_ref = _reference_parts(config.reference_std, d)
    betas = config.beta_schedule
    logw = np.zeros(x.shape[0])
    for k in range(betas.size - 1, 0, -1):
        db = betas[k] - betas[k - 1]
        logw += db * (net.energy(x) - e_ref(x))
        target = _path_logp_grad(net, e_ref, grad_ref, betas[k - 1])
        for _ in range(config.hmc_steps_per_dist):
            x, _ = hmc_step(target, x, config.leapfrog_eps,
                            config.leapfrog_steps, rng)
    return _finish(logw, log_z_ref, -1.0, "reverse", config, rng)


def bits_per_dim(log_density: float, d: int, domain_scale: float = 256.0) -> float:
    """Negative log likelihood per dimension in bits.

    `log_density` is the mean model log density in nats on data scaled to
    [0, 1]; `domain_scale` is the width of the original integer domain
    (256 for byte images), contributing the change-of-variables term.
    """
    if d < 1:
        raise ConfigError(f"d must be >= 1, got {d}")
    if not domain_scale > 0.0:
        raise DomainError("domain_scale must be positive")
    return (-log_density / d + math.log(domain_scale)) / math.log(2.0)
