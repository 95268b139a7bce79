"""Denoising score matching objectives and the Adam training loop.

The multiscale objective corrupts each batch row at its scheduled noise
level and regresses sigma0**2 * grad_x E(x_noisy) onto the displacement
x - x_noisy, weighting each row by l(sigma) = 1/sigma**2 so every level
contributes comparably. All losses are recorded on the caller's tape
when one is active, so gradients with respect to the network parameters
flow through the inner input-gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import Tape, Tensor, grad
from .errors import CapacityError, ConfigError, DimensionError, NumericError
from .noise import NoiseSchedule, make_schedule, perturb_batch, weight

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "mdsm_loss",
    "mdsm_loss_from_pairs",
    "dsm_single_loss",
    "mdsm_star_loss",
    "train",
]

# Pairwise posterior computations in mdsm_star_loss materialize a
# [batch, N] matrix; keep N within a desk-scale budget.
STAR_LOSS_MAX_DATASET = 100_000


def _as_batch(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"expected a 2-D batch, got shape {arr.shape}")
    return arr


def mdsm_loss_from_pairs(net, x_clean, x_noisy, sigmas, sigma0: float,
                         weights=None) -> Tensor:
    """Deterministic core of the multiscale objective.

    mean_i w_i * || x_i - x_noisy_i + sigma0**2 * grad E(x_noisy_i) ||**2

    `weights` is an optional per-row array; None means unweighted. The
    result is a shape-() Tensor recorded on the active tape, if any.
    """
    x_clean = _as_batch(x_clean)
    x_noisy = _as_batch(x_noisy)
    if x_clean.shape != x_noisy.shape:
        raise DimensionError(
            f"clean/noisy shapes differ: {x_clean.shape} vs {x_noisy.shape}")
    if ad.active_tape() is None:
        with Tape():
            return _mdsm_terms(net, x_clean, x_noisy, sigmas, sigma0, weights)[0]
    return _mdsm_terms(net, x_clean, x_noisy, sigmas, sigma0, weights)[0]


def _mdsm_terms(net, x_clean, x_noisy, sigmas, sigma0, weights):
    try:
        xt = Tensor(x_noisy)
        g = net.energy_grad(xt)
        resid = ad.add(ad.sub(Tensor(x_clean), xt), ad.scale(g, sigma0 * sigma0))
        sqnorms = ad.square(resid).sum(axis=1)
        if weights is not None:
            w = np.asarray(weights, dtype=np.float64)
            if w.shape != (x_clean.shape[0],):
                raise DimensionError(
                    f"weights shape {w.shape} does not match batch {x_clean.shape[0]}")
            sqnorms_w = ad.mul(sqnorms, Tensor(w))
        else:
            sqnorms_w = sqnorms
        loss = sqnorms_w.mean()
    except NumericError as e:
        lo, hi = float(np.min(sigmas)), float(np.max(sigmas))
        raise NumericError(
            f"non-finite value in denoising loss (noise levels in [{lo:g}, {hi:g}]): {e}"
        ) from e
    mean_resid = float(np.mean(np.sqrt(sqnorms.data)))
    return loss, mean_resid


def mdsm_loss(net, x, schedule: NoiseSchedule, rng: np.random.Generator,
              weight_fn=weight) -> Tensor:
    """Multiscale DSM loss on one batch; rows get levels cyclically.

    `weight_fn` maps sigma to a per-row weight (default 1/sigma**2);
    pass None for unweighted rows.
    """
    x = _as_batch(x)
    x_noisy, sigmas = perturb_batch(x, schedule, rng)
    w = None if weight_fn is None else weight_fn(sigmas)
    return mdsm_loss_from_pairs(net, x, x_noisy, sigmas, schedule.sigma0, w)


def dsm_single_loss(net, x, sigma: float, sigma0: float,
                    rng: np.random.Generator) -> Tensor:
    """Single-level denoising loss (unweighted).

    Identical draws and arithmetic to `mdsm_loss` with a one-level
    schedule and unit weights, so the two agree bit for bit.
    """
    sched = make_schedule(sigma, sigma, 1, "linear", sigma0)
    return mdsm_loss(net, x, sched, rng, weight_fn=None)


def mdsm_star_loss(net, x_dataset, batch: int, schedule: NoiseSchedule,
                   rng: np.random.Generator, unit_weights: bool = False):
    """Importance-weighted diagnostic form of the multiscale objective.

    Each sampled pair (x, x_noisy) is weighted by the exact posterior
    ratio q_sigma0(x | x_noisy) / q_mix(x | x_noisy), both computed over
    the full dataset by Bayes rule (uniform prior over the N rows). The
    mixture kernel averages the K scheduled Gaussians. Rows are not
    l(sigma)-weighted here.

    Returns (loss_value, weight_stats) where weight_stats has the min,
    median and max of the importance weights. Diagnostic only; it is
    never used to drive parameter updates.
    """
    data = _as_batch(x_dataset)
    n = data.shape[0]
    if n > STAR_LOSS_MAX_DATASET:
        raise CapacityError(
            f"dataset of {n} rows exceeds the documented posterior budget "
            f"({STAR_LOSS_MAX_DATASET})")
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    idx = rng.integers(0, n, size=batch)
    xb = data[idx]
    x_noisy, sigmas = perturb_batch(xb, schedule, rng)

    if unit_weights:
        w = np.ones(batch)
    else:
        # squared distances from each noisy point to every dataset row
        sq = np.square(x_noisy[:, None, :] - data[None, :, :]).sum(axis=2)
        sq_own = np.square(x_noisy - xb).sum(axis=1)
        s0sq = schedule.sigma0 ** 2
        log_post_0 = (-sq_own / (2.0 * s0sq)) - logsumexp(-sq / (2.0 * s0sq), axis=1)

        levels = schedule.levels
        d = data.shape[1]
        # log q_mix(x_noisy | x_j) for every j, via logsumexp over levels
        comp = (-sq[:, :, None] / (2.0 * levels ** 2)
                - 0.5 * d * np.log(2.0 * np.pi * levels ** 2))
        log_qmix = logsumexp(comp, axis=2) - np.log(levels.size)
        comp_own = (-sq_own[:, None] / (2.0 * levels ** 2)
                    - 0.5 * d * np.log(2.0 * np.pi * levels ** 2))
        log_qmix_own = logsumexp(comp_own, axis=1) - np.log(levels.size)
        log_post_m = log_qmix_own - logsumexp(log_qmix, axis=1)
        w = np.exp(log_post_0 - log_post_m)

    loss = mdsm_loss_from_pairs(net, xb, x_noisy, sigmas, schedule.sigma0, w)
    stats = {"min": float(np.min(w)), "median": float(np.median(w)),
             "max": float(np.max(w))}
    return float(loss.item()), stats


@dataclass
class TrainConfig:
    schedule: NoiseSchedule
    steps: int
    batch_size: int = 128
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 5000
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0.0:
            raise ConfigError("learning_rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_net(cls, net) -> "AdamState":
        state = cls()
        for name, p in net.parameters():
            state.m[name] = np.zeros(p.shape)
            state.v[name] = np.zeros(p.shape)
        return state


def adam_step(net, grads: dict, state: AdamState, config: TrainConfig):
    """One Adam update. Mutates `net` and `state`, returns both."""
    state.t += 1
    b1, b2 = config.beta1, config.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    lr = config.learning_rate
    for name, p in net.parameters():
        g = np.asarray(grads[name])
        if g.shape != p.shape:
            raise DimensionError(
                f"gradient for {name} has shape {g.shape}, parameter is {p.shape}")
        m = state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        v = state.v[name] = b2 * state.v[name] + (1.0 - b2) * np.square(g)
        update = lr * (m / corr1) / (np.sqrt(v / corr2) + config.adam_eps)
        net.set_param(name, Tensor(p.data - update))
    return net, state


def train(dataset, net, config: TrainConfig, *, weight_fn=weight,
          on_checkpoint=None) -> np.ndarray:
    """Train `net` on `dataset` rows; returns the per-step loss history.

    History columns: step, loss, mean residual norm. `on_checkpoint`
    (step, net) fires every `checkpoint_every` steps when set.
    """
    data = _as_batch(dataset)
    if data.shape[0] < 1:
        raise ConfigError("dataset must not be empty")
    if data.shape[1] != net.input_dim:
        raise DimensionError(
            f"dataset width {data.shape[1]} does not match net input_dim {net.input_dim}")
    rng = np.random.default_rng(config.seed)
    state = AdamState.for_net(net)
    names = [name for name, _ in net.parameters()]
    history = np.empty((config.steps, 3))
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, data.shape[0], size=config.batch_size)
        xb = data[idx]
        x_noisy, sigmas = perturb_batch(xb, config.schedule, rng)
        w = None if weight_fn is None else weight_fn(sigmas)
        try:
            with Tape() as tp:
                loss, mean_resid = _mdsm_terms(net, xb, x_noisy, sigmas,
                                               config.schedule.sigma0, w)
                gs = grad(loss, net.param_tensors(), tape=tp)
        except NumericError as e:
            raise NumericError(f"training aborted at step {step}: {e}") from e
        grads = {name: g.data for name, g in zip(names, gs)}
        adam_step(net, grads, state, config)
        history[step - 1] = (step, loss.item(), mean_resid)
        if on_checkpoint is not None and config.checkpoint_every > 0 \
                and step % config.checkpoint_every == 0:
            on_checkpoint(step, net)
    return history
