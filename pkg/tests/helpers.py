"""Shared evaluation helpers for the test suite."""

import numpy as np


def per_level_cosine(net, oracle, schedule, n_per=256, seed=0):
    """Mean cosine between -grad E and the smoothed oracle score, per level.

    For each schedule level, draws `n_per` clean points, corrupts them at
    that level, and compares the model's negative energy gradient with the
    oracle score of the sigma0-smoothed density at the noisy points.
    Returns one mean cosine per level.
    """
    rng = np.random.default_rng(seed)
    out = np.empty(schedule.n_levels)
    for k, sig in enumerate(schedule.levels):
        clean = oracle.sample(n_per, rng)
        noisy = clean + sig * rng.standard_normal(clean.shape)
        learned = -net.energy_grad(noisy)
        target = oracle.score(noisy, schedule.sigma0)
        num = (learned * target).sum(axis=1)
        den = np.linalg.norm(learned, axis=1) * np.linalg.norm(target, axis=1)
        out[k] = np.mean(num / den)
    return out


def smoothed_gauss_eval(net, sigma0, n=4096, seed=0):
    """Cosine and relative L2 error against the smoothed unit-Gaussian score.

    Clean points are standard normal in 2-D, corrupted at sigma0; the
    smoothed score there is -x / (1 + sigma0^2).
    """
    rng = np.random.default_rng(seed)
    clean = rng.standard_normal((n, 2))
    noisy = clean + sigma0 * rng.standard_normal((n, 2))
    learned = -net.energy_grad(noisy)
    target = -noisy / (1.0 + sigma0 ** 2)
    cos = np.mean((learned * target).sum(axis=1) /
                  (np.linalg.norm(learned, axis=1) * np.linalg.norm(target, axis=1)))
    rel = np.linalg.norm(learned - target) / np.linalg.norm(target)
    return float(cos), float(rel)
