"""Scalar energy network: an ELU MLP trunk with a quadratic output head.

The head maps the last hidden vector h to

    E = (a.h + b1) * (c.h + b2) + sum_i d_i * h_i**2 + b3

which gives the energy quadratic growth far from the data without any
normalization layers. With no hidden layers the head acts on the input
directly, so exact quadratic energies (Gaussians, point masses) are
representable in closed form; several tests rely on that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, grad, no_record, tensor
from .errors import ConfigError, DimensionError

__all__ = ["NetConfig", "EnergyNet"]


@dataclass(frozen=True)
class NetConfig:
    """Architecture of an EnergyNet.

    hidden_dims may be empty, in which case the head consumes the input
    vector itself.
    """

    input_dim: int
    hidden_dims: tuple[int, ...] = (128, 128)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden dims must all be >= 1, got {self.hidden_dims}")

    @property
    def head_width(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    @property
    def param_count(self) -> int:
        n = 0
        fan_in = self.input_dim
        for h in self.hidden_dims:
            n += fan_in * h + h
            fan_in = h
        return n + 3 * self.head_width + 3

    def param_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes in the same order EnergyNet stores them."""
        shapes: list[tuple[str, tuple[int, ...]]] = []
        fan_in = self.input_dim
        for i, h in enumerate(self.hidden_dims):
            shapes.append((f"w{i}", (fan_in, h)))
            shapes.append((f"b{i}", (h,)))
            fan_in = h
        w = self.head_width
        for name in ("head_a", "head_c", "head_d"):
            shapes.append((name, (w,)))
        for name in ("head_b1", "head_b2", "head_b3"):
            shapes.append((name, ()))
        return shapes


class EnergyNet:
    """Energy function E(x) with named float64 parameters.

    `energy` and `energy_grad` accept either a plain ndarray (computed on
    a private scratch tape, ndarray returned) or a Tensor (recorded on the
    caller's active tape; `energy_grad` then returns a gradient that is
    itself differentiable, which is what the training losses need).
    """

    def __init__(self, config: NetConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        params: dict[str, Tensor] = {}
        fan_in = config.input_dim
        for i, h in enumerate(config.hidden_dims):
            params[f"w{i}"] = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, h)))
            params[f"b{i}"] = Tensor(np.zeros(h))
            fan_in = h
        w = config.head_width
        s = np.sqrt(1.0 / w)
        params["head_a"] = Tensor(rng.normal(0.0, s, size=(w,)))
        params["head_c"] = Tensor(rng.normal(0.0, s, size=(w,)))
        params["head_d"] = Tensor(rng.normal(0.0, s, size=(w,)))
        params["head_b1"] = Tensor(np.zeros(()))
        params["head_b2"] = Tensor(np.zeros(()))
        params["head_b3"] = Tensor(np.zeros(()))
        self._params = params

    @property
    def input_dim(self) -> int:
        return self.config.input_dim

    def parameters(self) -> list[tuple[str, Tensor]]:
        """Parameters in a fixed, stable order."""
        return list(self._params.items())

    def param_tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def get_param(self, name: str) -> Tensor:
        return self._params[name]

    def set_param(self, name: str, value) -> None:
        old = self._params[name]
        new = value if isinstance(value, Tensor) else tensor(value)
        if new.shape != old.shape:
            raise DimensionError(f"parameter {name} has shape {old.shape}, got {new.shape}")
        self._params[name] = new

    @property
    def param_count(self) -> int:
        return sum(t.size for t in self._params.values())

    def _check_batch(self, x):
        if x.ndim != 2:
            raise DimensionError(f"expected a [batch, {self.input_dim}] array, got shape {x.shape}")
        if x.shape[1] != self.input_dim:
            raise DimensionError(
                f"input width {x.shape[1]} does not match net input_dim {self.input_dim}")

    def _energy_t(self, x: Tensor) -> Tensor:
        self._check_batch(x)
        p = self._params
        h = x
        for i in range(len(self.config.hidden_dims)):
            h = ad.elu(ad.add(ad.matmul(h, p[f"w{i}"]), p[f"b{i}"]))
        lin_a = ad.add(ad.mul(h, p["head_a"]).sum(axis=1), p["head_b1"])
        lin_c = ad.add(ad.mul(h, p["head_c"]).sum(axis=1), p["head_b2"])
        quad = ad.mul(ad.square(h), p["head_d"]).sum(axis=1)
        return ad.add(ad.add(ad.mul(lin_a, lin_c), quad), p["head_b3"])

    def energy(self, x):
        """Per-row energies, shape [batch]."""
        if isinstance(x, Tensor):
            return self._energy_t(x)
        arr = np.asarray(x, dtype=np.float64)
        with no_record():
            return self._energy_t(Tensor(arr)).data

    def energy_grad(self, x):
        """Gradient of the energy with respect to its input, shape [batch, d].

        Rows are independent, so the gradient of the summed energy equals
        the stacked per-row gradients.
        """
        if isinstance(x, Tensor):
            e = self._energy_t(x)
            (g,) = grad(e.sum(), [x], create_graph=True)
            return g
        arr = np.asarray(x, dtype=np.float64)
        with Tape() as tp:
            xt = Tensor(arr)
            e = self._energy_t(xt)
            (g,) = grad(e.sum(), [xt], tape=tp)
        return g.data

    # --- closed-form constructions used by tests and diagnostics ---

    @classmethod
    def quadratic(cls, mu, inv_two_var) -> "EnergyNet":
        """Exact energy ||x - mu||^2 * inv_two_var via an empty trunk.

        With inv_two_var = 1/(2*s^2) this is the negative log density of
        N(mu, s^2 I) up to its normalizing constant.
        """
        mu = np.asarray(mu, dtype=np.float64).reshape(-1)
        d = mu.size
        net = cls(NetConfig(input_dim=d, hidden_dims=()))
        k = float(inv_two_var)
        net.set_param("head_a", Tensor(-2.0 * k * mu))
        net.set_param("head_c", Tensor(np.zeros(d)))
        net.set_param("head_d", Tensor(np.full(d, k)))
        net.set_param("head_b1", Tensor(np.asarray(k * float(mu @ mu))))
        net.set_param("head_b2", Tensor(np.asarray(1.0)))
        net.set_param("head_b3", Tensor(np.zeros(())))
        return net


class ScaledEnergy:
    """View of an energy model with its output multiplied by a constant.

    Used by the rescaling invariances: (sigma0 -> alpha*sigma0,
    E -> E/alpha**2) leaves the multiscale objective unchanged.
    """

    def __init__(self, base, factor: float):
        self.base = base
        self.factor = float(factor)

    @property
    def input_dim(self) -> int:
        return self.base.input_dim

    def energy(self, x):
        if isinstance(x, Tensor):
            return ad.scale(self.base.energy(x), self.factor)
        return self.base.energy(x) * self.factor

    def energy_grad(self, x):
        if isinstance(x, Tensor):
            e = self.energy(x)
            (g,) = grad(e.sum(), [x], create_graph=True)
            return g
        arr = np.asarray(x, dtype=np.float64)
        with Tape() as tp:
            xt = Tensor(arr)
            e = self.energy(xt)
            (g,) = grad(e.sum(), [xt], tape=tp)
        return g.data


__all__.append("ScaledEnergy")
