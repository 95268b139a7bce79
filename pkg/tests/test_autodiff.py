"""Tests for the tape-based reverse-mode autodiff engine."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from mdsm import autodiff as ad
from mdsm.autodiff import (
    Tape,
    Tensor,
    concat,
    elu,
    finite_diff_check,
    grad,
    log,
    matmul,
    narrow,
    no_record,
    reshape,
    sqrt,
    square,
    tensor,
    transpose,
)
from mdsm.errors import DimensionError, DomainError, GraphError, NumericError


def _mlp_scalar(x, w1, b1, w2, b2):
    """Two ELU layers followed by a sum, as one scalar function of x."""
    h = elu(ad.add(matmul(x, w1), b1))
    h = elu(ad.add(matmul(h, w2), b2))
    return h.sum()


class TestForwardOps:
    def test_matmul_identity(self):
        a = tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = tensor(np.eye(2))
        assert_allclose(matmul(a, eye).data, a.data)

    def test_sum_of_squares(self):
        x = tensor([3.0, 4.0])
        assert square(x).sum().item() == 25.0

    def test_elu_limits(self):
        x = tensor([-40.0, 0.0, 3.0])
        out = elu(x).data
        assert_allclose(out[0], -1.0, atol=1e-15)
        assert out[1] == 0.0
        assert out[2] == 3.0

    def test_batch_broadcast_add(self):
        a = tensor(np.arange(12.0).reshape(4, 3))
        b = tensor([1.0, 2.0, 3.0])
        assert_allclose(ad.add(a, b).data, a.data + b.data)

    def test_mismatched_add_raises(self):
        a = tensor(np.zeros((4, 3)))
        b = tensor(np.zeros(4))
        with pytest.raises(DimensionError):
            ad.add(a, b)

    def test_matmul_inner_dim_mismatch(self):
        with pytest.raises(DimensionError):
            matmul(tensor(np.zeros((2, 3))), tensor(np.zeros((2, 3))))

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            sqrt(tensor([-1.0]))
        with pytest.raises(DomainError):
            log(tensor([0.0]))

    def test_reshape_size_mismatch(self):
        with pytest.raises(DimensionError):
            reshape(tensor(np.zeros(6)), (4, 2))

    def test_nonfinite_input_rejected(self):
        with pytest.raises(NumericError):
            tensor([1.0, np.inf])

    def test_nonfinite_result_rejected(self):
        """Overflow must surface immediately, not flow into later ops."""
        with np.errstate(over="ignore", divide="ignore"):
            with pytest.raises(NumericError):
                ad.exp(tensor([1000.0]))
            with pytest.raises(NumericError):
                ad.div(tensor([1.0]), tensor([0.0]))

    def test_narrow_concat_roundtrip(self):
        x = tensor(np.arange(10.0).reshape(2, 5))
        left = narrow(x, 1, 0, 2)
        right = narrow(x, 1, 2, 5)
        back = concat([left, right], axis=1)
        assert_allclose(back.data, x.data)

    def test_narrow_bad_bounds(self):
        with pytest.raises(DimensionError):
            narrow(tensor(np.zeros(4)), 0, 1, 9)

    def test_scalar_item_guard(self):
        with pytest.raises(DimensionError):
            tensor([1.0, 2.0]).item()

    def test_operator_sugar(self):
        x = tensor([2.0, 4.0])
        assert_allclose((x * 3.0).data, [6.0, 12.0])
        assert_allclose((1.0 + x).data, [3.0, 5.0])
        assert_allclose((x / 2.0).data, [1.0, 2.0])
        assert_allclose((-x).data, [-2.0, -4.0])


class TestGrad:
    def test_sum_of_squares_gradient(self):
        with Tape() as tp:
            x = tensor([1.0, 2.0, 3.0])
            y = square(x).sum()
            (g,) = grad(y, [x], tape=tp)
        assert_allclose(g.data, [2.0, 4.0, 6.0])

    def test_second_derivative_of_quartic(self):
        """d2/dx2 of x**4 at x=2 is 12*x**2 = 48."""
        with Tape() as tp:
            x = tensor(2.0)
            y = square(square(x))
            (g,) = grad(y, [x], tape=tp, create_graph=True)
            (h,) = grad(g, [x], tape=tp)
        assert_allclose(g.item(), 32.0)
        assert_allclose(h.item(), 48.0)

    def test_mlp_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        w1 = tensor(rng.normal(size=(3, 5)) * 0.6)
        b1 = tensor(rng.normal(size=5) * 0.1)
        w2 = tensor(rng.normal(size=(5, 4)) * 0.6)
        b2 = tensor(rng.normal(size=4) * 0.1)
        x = Tensor(rng.uniform(0.2, 1.5, size=(2, 3)))
        err = finite_diff_check(lambda t: _mlp_scalar(t, w1, b1, w2, b2), x, h=1e-5)
        assert err <= 1e-6

    def test_uninvolved_wrt_gets_zeros(self):
        with Tape() as tp:
            x = tensor([1.0, 2.0])
            z = tensor([5.0])
            _ = square(z)  # on the tape but not feeding y
            y = x.sum()
            gx, gz = grad(y, [x, z], tape=tp)
        assert_allclose(gx.data, [1.0, 1.0])
        assert_allclose(gz.data, [0.0])

    def test_wrt_never_on_tape(self):
        stray = tensor([1.0])
        with Tape() as tp:
            x = tensor([2.0])
            y = square(x).sum()
            with pytest.raises(GraphError):
                grad(y, [stray], tape=tp)

    def test_nonscalar_output_rejected(self):
        with Tape() as tp:
            x = tensor([1.0, 2.0])
            y = square(x)
            with pytest.raises(DimensionError):
                grad(y, [x], tape=tp)

    def test_grad_without_tape(self):
        x = tensor([1.0])
        with Tape():
            y = square(x).sum()
        with pytest.raises(GraphError):
            grad(y, [x])


class TestSecondOrder:
    def test_gradient_norm_param_gradients(self):
        """Parameter gradients of ||d g/d x||**2 match finite differences.

        The forward pass unpacks a flat parameter vector with narrow and
        reshape, runs a two layer net, differentiates it with respect to
        the input inside the recorded graph, and squares the result. This
        is the exact double-backward pattern the training loss uses.
        """
        d, h1 = 3, 4
        rng = np.random.default_rng(13)
        x0 = rng.uniform(0.3, 1.2, size=(1, d))
        n_params = d * h1 + h1 + h1
        theta = Tensor(rng.normal(size=n_params) * 0.7)

        def f(p):
            w1 = reshape(narrow(p, 0, 0, d * h1), (d, h1))
            b1 = narrow(p, 0, d * h1, d * h1 + h1)
            a = narrow(p, 0, d * h1 + h1, n_params)
            xt = Tensor(x0)
            hidden = elu(ad.add(matmul(xt, w1), b1))
            out = ad.mul(hidden, a).sum()
            (gx,) = grad(out, [xt], create_graph=True)
            return square(gx).sum()

        err = finite_diff_check(f, theta, h=1e-5)
        assert err <= 1e-4

    def test_training_loss_param_gradients(self):
        """The denoising loss stays differentiable through its inner grad."""
        from mdsm.energy import EnergyNet, NetConfig
        from mdsm.training import mdsm_loss_from_pairs

        rng = np.random.default_rng(3)
        net = EnergyNet(NetConfig(input_dim=2, hidden_dims=(6, 5), seed=1))
        assert net.param_count <= 1000
        xc = rng.normal(size=(4, 2))
        sig = np.array([0.3, 0.3, 0.8, 0.8])
        xn = xc + sig[:, None] * rng.normal(size=(4, 2))
        w = 1.0 / sig**2

        def f(w0):
            net.set_param("w0", w0)
            return mdsm_loss_from_pairs(net, xc, xn, sig, 0.1, w)

        err = finite_diff_check(f, net.get_param("w0"), h=1e-5)
        assert err <= 1e-5


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        x = tensor([1.0, -1.0])
        err = finite_diff_check(lambda t: square(t).sum(), x, h=1e-5)
        assert err <= 1e-8

    def test_quadratic_head_energy(self):
        from mdsm.energy import EnergyNet

        net = EnergyNet.quadratic([0.5, -0.3, 1.1], 1.0 / (2.0 * 0.4**2))
        x = tensor([0.9, 0.2, -0.6])
        err = finite_diff_check(lambda t: net.energy(reshape(t, (1, 3))).sum(),
                                x, h=1e-5)
        assert err <= 1e-7

    def test_nonfinite_evaluation_raises_domain_error(self):
        x = tensor([2.0])
        with np.errstate(over="ignore"):
            with pytest.raises(DomainError):
                finite_diff_check(lambda t: ad.exp(t * 1000.0).sum(), x, h=1e-5)


def _central_diff(f, x, h=1e-5):
    """Plain central-difference gradient of a scalar f at x, as an array."""
    base = x.data
    out = np.empty_like(base).reshape(-1)
    for i in range(base.size):
        stepped = base.copy().reshape(-1)
        stepped[i] += h
        with Tape():
            hi = f(Tensor(stepped.reshape(base.shape))).item()
        stepped[i] -= 2.0 * h
        with Tape():
            lo = f(Tensor(stepped.reshape(base.shape))).item()
        out[i] = (hi - lo) / (2.0 * h)
    return out.reshape(base.shape)


def _random_scalar_graph(rng, x):
    """Chain a few randomly chosen ops, ending in a scalar reduction."""
    unary = [
        elu,
        square,
        lambda t: ad.exp(t * 0.3),
        lambda t: log(ad.add(square(t), Tensor(0.5))),
        lambda t: sqrt(ad.add(square(t), Tensor(0.3))),
        lambda t: ad.mul(t, t),
        lambda t: ad.div(t, ad.add(square(t), Tensor(1.0))),
        ad.neg,
        lambda t: ad.add(t, Tensor(0.7)),
    ]
    t = x
    for _ in range(3):
        t = unary[rng.integers(len(unary))](t)
    structural = rng.integers(4)
    if structural == 0:
        t = transpose(t)
    elif structural == 1:
        t = reshape(t, (t.size,))
    elif structural == 2:
        t = concat([narrow(t, 0, 0, 1), narrow(t, 0, 1, t.shape[0])], axis=0)
    else:
        proj = Tensor(np.linspace(-0.5, 0.5, t.shape[1] * 2).reshape(t.shape[1], 2))
        t = matmul(t, proj)
    return t.mean() if rng.integers(2) else t.sum() * 0.25


class TestGradientProperty:
    def test_random_graphs_match_finite_differences(self):
        """Every registered op composes into FD-consistent gradients.

        120 random graphs over inputs in [-2, 2]. Inputs are nudged off
        the ELU kink so the central difference stays valid. Coordinates
        whose true derivative is zero only see float round-off in the
        difference quotient, hence the small absolute floor.
        """
        for seed in range(120):
            rng = np.random.default_rng(seed)
            base = rng.uniform(-2.0, 2.0, size=(2, 3))
            base[np.abs(base) < 0.05] += 0.2
            x = Tensor(base)

            def f(t, s=seed):
                return _random_scalar_graph(np.random.default_rng(s + 1), t)

            with Tape() as tp:
                y = f(x)
                (g,) = grad(y, [x], tape=tp)
            numeric = _central_diff(f, x, h=1e-5)
            assert_allclose(g.data, numeric, rtol=1e-5, atol=1e-7,
                            err_msg=f"graph seed {seed}")


class TestTapeSemantics:
    def test_gradients_are_deterministic(self):
        """Identical inputs and graph produce bit-identical gradients."""
        def run():
            rng = np.random.default_rng(21)
            with Tape() as tp:
                x = Tensor(rng.normal(size=(3, 3)))
                w = Tensor(rng.normal(size=(3, 3)))
                y = square(elu(matmul(x, w))).sum()
                return grad(y, [x, w], tape=tp)

        first = run()
        second = run()
        for a, b in zip(first, second):
            assert np.array_equal(a.data, b.data)

    def test_no_record_suspends_recording(self):
        with Tape() as tp:
            x = tensor([1.0, 2.0])
            with no_record():
                hidden = square(x)
            assert not tp.knows(hidden)
            y = square(x).sum()
            (g,) = grad(y, [x], tape=tp)
        assert_allclose(g.data, [2.0, 4.0])

    def test_active_tape_nesting(self):
        assert ad.active_tape() is None
        with Tape() as outer:
            assert ad.active_tape() is outer
            with Tape() as inner:
                assert ad.active_tape() is inner
            assert ad.active_tape() is outer
        assert ad.active_tape() is None

    def test_grad_accumulates_over_reuse(self):
        """A tensor used twice receives the sum of both path gradients."""
        with Tape() as tp:
            x = tensor([3.0])
            y = ad.add(square(x), x * 4.0).sum()
            (g,) = grad(y, [x], tape=tp)
        assert_allclose(g.data, [10.0])
