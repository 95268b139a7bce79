"""Scikit-learn style facade over the training and sampling pipeline.

MultiscaleEnergyModel bundles schedule construction, net init, training,
sampling and denoising behind the usual fit/transform surface so the
model can sit in sklearn pipelines and parameter searches. All heavy
lifting stays in the library modules; this class only validates inputs
and wires configs together.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from .energy import EnergyNet, NetConfig
from .noise import make_schedule
from .sampler import anneal_for_schedule, denoise_jump, inpaint, sample
from .training import TrainConfig, train

__all__ = ["MultiscaleEnergyModel"]


class MultiscaleEnergyModel(BaseEstimator):
    """Energy-based density model trained by multiscale denoising.

    Parameters mirror the library configs. `transform` is the denoising
    jump: it maps corrupted rows to estimates of their clean versions.
    """

    def __init__(self, hidden_dims=(64, 64), sigma_min=0.05, sigma_max=1.2,
                 n_levels=32, spacing="linear", sigma0=0.1, steps=2000,
                 batch_size=128, learning_rate=5e-5, anneal_steps=500,
                 anneal_t_start=100.0, langevin_eps=0.02, seed=0):
        self.hidden_dims = hidden_dims
        self.sigma_min = sigma_min
        self.sigma_max = sigma_max
        self.n_levels = n_levels
        self.spacing = spacing
        self.sigma0 = sigma0
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.anneal_steps = anneal_steps
        self.anneal_t_start = anneal_t_start
        self.langevin_eps = langevin_eps
        self.seed = seed

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError(
                "this MultiscaleEnergyModel instance is not fitted yet")

    def _validate(self, X, *, match_dim=True):
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        if match_dim and X.shape[1] != self.net_.input_dim:
            raise ValueError(
                f"X has {X.shape[1]} features, the model was fit with "
                f"{self.net_.input_dim}")
        return X

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_2d=True)
        self.schedule_ = make_schedule(self.sigma_min, self.sigma_max,
                                       self.n_levels, spacing=self.spacing,
                                       sigma0=self.sigma0)
        net = EnergyNet(NetConfig(input_dim=X.shape[1],
                                  hidden_dims=tuple(self.hidden_dims),
                                  seed=self.seed))
        config = TrainConfig(schedule=self.schedule_, steps=self.steps,
                             batch_size=self.batch_size,
                             learning_rate=self.learning_rate,
                             checkpoint_every=max(self.steps, 1),
                             seed=self.seed)
        self.loss_history_ = train(X, net, config)
        self.net_ = net
        self.n_features_in_ = X.shape[1]
        return self

    def score_samples(self, X):
        """Unnormalized log density (negated energy) per row."""
        self._check_fitted()
        return -self.net_.energy(self._validate(X))

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples: int = 100, random_state=None):
        self._check_fitted()
        rng = np.random.default_rng(self.seed if random_state is None
                                    else random_state)
        anneal = anneal_for_schedule(self.schedule_, n_steps=self.anneal_steps,
                                     t_start=self.anneal_t_start,
                                     eps=self.langevin_eps)
        x, _ = sample(self.net_, n_samples, anneal, rng, sigma0=self.sigma0)
        return x

    def denoise(self, X):
        """Single-step estimate of the clean points behind noisy rows."""
        self._check_fitted()
        return denoise_jump(self.net_, self._validate(X), self.sigma0)

    def transform(self, X):
        return self.denoise(X)

    def inpaint(self, X, mask, random_state=None):
        """Sample completions of X where mask marks the known coordinates."""
        self._check_fitted()
        X = self._validate(X)
        rng = np.random.default_rng(self.seed if random_state is None
                                    else random_state)
        anneal = anneal_for_schedule(self.schedule_, n_steps=self.anneal_steps,
                                     t_start=self.anneal_t_start,
                                     eps=self.langevin_eps)
        return inpaint(self.net_, X, np.asarray(mask), anneal, rng,
                       sigma0=self.sigma0)
