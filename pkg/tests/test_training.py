"""Tests for the denoising objectives and the Adam training loop."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from helpers import smoothed_gauss_eval
from mdsm.energy import EnergyNet, NetConfig, ScaledEnergy
from mdsm.errors import (CapacityError, ConfigError, DimensionError,
                         NumericError)
from mdsm.noise import NoiseSchedule, make_schedule, perturb_batch
from mdsm.training import (AdamState, TrainConfig, adam_step, dsm_single_loss,
                           mdsm_loss, mdsm_loss_from_pairs, mdsm_star_loss,
                           train)

SIGMA0 = 0.1


def _constant_net(input_dim, value=0.0):
    net = EnergyNet(NetConfig(input_dim=input_dim, hidden_dims=(4,), seed=0))
    for name in ("head_a", "head_c", "head_d"):
        net.set_param(name, np.zeros(4))
    net.set_param("head_b3", np.asarray(value))
    return net


class TestMdsmLoss:
    def test_posterior_mean_energy_gives_zero_loss(self):
        """For point-mass data the energy ||x-mu||^2/(2 sigma0^2) cancels
        the displacement term by term, so the loss is float noise."""
        mu = np.array([0.4, -1.2])
        net = EnergyNet.quadratic(mu, 1.0 / (2.0 * (SIGMA0 * SIGMA0)))
        data = np.tile(mu, (64, 1))
        sched = make_schedule(0.05, 1.2, 16, "linear", SIGMA0)
        loss = mdsm_loss(net, data, sched, np.random.default_rng(0))
        assert loss.item() <= 1e-25

    def test_constant_net_loss_expectation(self):
        """With a flat energy the weighted loss reduces to
        mean 1/sigma^2 ||noise||^2, whose expectation is d."""
        d = 2
        net = _constant_net(d)
        data = np.random.default_rng(1).normal(size=(4096, d))
        sched = make_schedule(0.05, 1.2, 128, "linear", SIGMA0)
        loss = mdsm_loss(net, data, sched, np.random.default_rng(2)).item()
        assert abs(loss - d) / d <= 0.05

    def test_nonfinite_loss_reports_levels(self):
        net = EnergyNet.quadratic(np.zeros(2), 1e200)
        data = np.random.default_rng(3).normal(size=(8, 2))
        sched = make_schedule(0.1, 0.5, 4, "linear", SIGMA0)
        with np.errstate(over="ignore"):
            with pytest.raises(NumericError, match="noise levels"):
                mdsm_loss(net, data, sched, np.random.default_rng(4))

    def test_rejects_non_batch_input(self):
        net = _constant_net(2)
        sched = make_schedule(0.1, 0.5, 4, "linear", SIGMA0)
        with pytest.raises(DimensionError):
            mdsm_loss(net, np.zeros(2), sched, np.random.default_rng(0))


class TestSingleLevelReduction:
    def test_k1_unweighted_matches_bit_exactly(self):
        net = EnergyNet(NetConfig(2, (8,), seed=4))
        data = np.random.default_rng(5).normal(size=(32, 2))
        sched = make_schedule(0.3, 0.3, 1, "linear", SIGMA0)
        a = mdsm_loss(net, data, sched, np.random.default_rng(7),
                      weight_fn=None).item()
        b = dsm_single_loss(net, data, 0.3, SIGMA0,
                            np.random.default_rng(7)).item()
        assert a == b

    def test_zero_noise_limit(self):
        """At sigma -> 0 the loss collapses to sigma0^4 mean ||grad E||^2."""
        sigma0 = 0.5
        net = EnergyNet.quadratic(np.zeros(2), 2.0)
        data = np.random.default_rng(8).normal(size=(256, 2))
        loss = dsm_single_loss(net, data, 1e-8, sigma0,
                               np.random.default_rng(9)).item()
        grads = net.energy_grad(data)
        expected = sigma0 ** 4 * np.mean(np.sum(grads ** 2, axis=1))
        assert abs(loss - expected) / expected <= 1e-6

    def test_trained_gauss_score_direction(self, gauss_net):
        cos, _ = smoothed_gauss_eval(gauss_net, 0.5, seed=100)
        assert cos >= 0.99


class TestStarLoss:
    def test_separated_points_have_unit_weights(self):
        """When dataset points are far apart both posteriors collapse onto
        the generating point and the importance weights go to 1."""
        data = 20.0 * np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        sched = make_schedule(0.1, 0.3, 4, "linear", SIGMA0)
        net = _constant_net(2)
        _, stats = mdsm_star_loss(net, data, 64, sched,
                                  np.random.default_rng(10))
        assert stats["min"] >= 1.0 - 1e-6
        assert stats["max"] <= 1.0 + 1e-6

    def test_single_point_weights_exactly_one(self):
        data = np.array([[0.5, 0.5]])
        sched = make_schedule(0.1, 0.3, 4, "linear", SIGMA0)
        net = _constant_net(2)
        _, stats = mdsm_star_loss(net, data, 16, sched,
                                  np.random.default_rng(11))
        assert stats["min"] == stats["max"] == 1.0

    def test_forced_unit_weights_reduce_to_plain_loss(self):
        data = np.random.default_rng(12).normal(size=(32, 2))
        sched = make_schedule(0.1, 0.5, 8, "linear", SIGMA0)
        net = EnergyNet(NetConfig(2, (6,), seed=13))
        value, _ = mdsm_star_loss(net, data, 16, sched,
                                  np.random.default_rng(14),
                                  unit_weights=True)
        rng = np.random.default_rng(14)
        idx = rng.integers(0, 32, size=16)
        xb = data[idx]
        x_noisy, sigmas = perturb_batch(xb, sched, rng)
        expected = mdsm_loss_from_pairs(net, xb, x_noisy, sigmas,
                                        SIGMA0).item()
        assert value == expected

    def test_capacity_guard(self):
        sched = make_schedule(0.1, 0.3, 2, "linear", SIGMA0)
        net = _constant_net(2)
        with pytest.raises(CapacityError):
            mdsm_star_loss(net, np.zeros((100_001, 2)), 4, sched,
                           np.random.default_rng(0))
        with pytest.raises(ConfigError):
            mdsm_star_loss(net, np.zeros((4, 2)), 0, sched,
                           np.random.default_rng(0))


def _tiny_config(**kw):
    sched = kw.pop("schedule", make_schedule(0.1, 0.5, 4, "linear", SIGMA0))
    defaults = dict(schedule=sched, steps=5, batch_size=8,
                    learning_rate=1e-3, checkpoint_every=0, seed=0)
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        net = EnergyNet(NetConfig(2, (4,), seed=15))
        before = {n: p.data.copy() for n, p in net.parameters()}
        grads = {n: np.zeros(p.shape) for n, p in net.parameters()}
        adam_step(net, grads, AdamState.for_net(net), _tiny_config())
        for name, p in net.parameters():
            assert np.array_equal(p.data, before[name])

    def test_constant_gradient_unit_step(self):
        """For a constant gradient the bias-corrected moments give every
        update magnitude learning_rate, at every step."""
        net = EnergyNet(NetConfig(2, (4,), seed=16))
        cfg = _tiny_config(learning_rate=3e-3)
        state = AdamState.for_net(net)
        grads = {n: np.full(p.shape, 0.37) for n, p in net.parameters()}
        for _ in range(10):
            before = {n: p.data.copy() for n, p in net.parameters()}
            adam_step(net, grads, state, cfg)
            for name, p in net.parameters():
                step = np.abs(p.data - before[name])
                assert_allclose(step, cfg.learning_rate, rtol=1e-6)

    def test_training_is_deterministic(self):
        data = np.random.default_rng(17).normal(size=(64, 2))

        def run():
            net = EnergyNet(NetConfig(2, (8,), seed=18))
            train(data, net, _tiny_config(steps=100))
            return net

        a, b = run(), run()
        for (name, pa), (_, pb) in zip(a.parameters(), b.parameters()):
            assert np.array_equal(pa.data, pb.data), name

    def test_gradient_shape_mismatch(self):
        net = EnergyNet(NetConfig(2, (4,), seed=19))
        grads = {n: np.zeros(p.shape) for n, p in net.parameters()}
        grads["head_a"] = np.zeros(7)
        with pytest.raises(DimensionError):
            adam_step(net, grads, AdamState.for_net(net), _tiny_config())


class TestTrainLoop:
    def test_rejects_empty_or_mismatched_data(self):
        net = EnergyNet(NetConfig(2, (4,), seed=20))
        with pytest.raises(ConfigError):
            train(np.zeros((0, 2)), net, _tiny_config())
        with pytest.raises(DimensionError):
            train(np.zeros((8, 3)), net, _tiny_config())

    def test_history_layout(self):
        net = EnergyNet(NetConfig(2, (4,), seed=22))
        data = np.random.default_rng(23).normal(size=(32, 2))
        history = train(data, net, _tiny_config(steps=7))
        assert history.shape == (7, 3)
        assert np.array_equal(history[:, 0], np.arange(1, 8))
        assert np.all(np.isfinite(history))

    def test_checkpoint_cadence(self):
        net = EnergyNet(NetConfig(2, (4,), seed=24))
        data = np.random.default_rng(25).normal(size=(32, 2))
        seen = []
        train(data, net, _tiny_config(steps=10, checkpoint_every=4),
              on_checkpoint=lambda step, n: seen.append(step))
        assert seen == [4, 8]

    def test_checkpoint_default_interval(self):
        assert _tiny_config().checkpoint_every == 0
        sched = make_schedule(0.1, 0.5, 4, "linear", SIGMA0)
        assert TrainConfig(schedule=sched, steps=1).checkpoint_every == 5000

    def test_nonfinite_abort_names_step(self):
        net = EnergyNet.quadratic(np.zeros(2), 1e200)
        data = np.random.default_rng(26).normal(size=(16, 2))
        with np.errstate(over="ignore"):
            with pytest.raises(NumericError, match="step 1"):
                train(data, net, _tiny_config())

    def test_ring_loss_trend(self, ring_run):
        """The 1000-step moving average of the ring loss never moves up by
        more than a sliver of its total descent."""
        loss = ring_run["history"][:, 1]
        kernel = np.full(1000, 1.0 / 1000)
        ma = np.convolve(loss, kernel, mode="valid")
        descent = ma[0] - ma[-1]
        assert descent >= 0.1
        assert np.max(np.diff(ma)) <= 0.01 * descent


class TestRescalingInvariance:
    def _pairs(self):
        rng = np.random.default_rng(27)
        data = np.random.default_rng(28).normal(size=(32, 2))
        sched = make_schedule(0.05, 1.2, 8, "linear", SIGMA0)
        noisy, sigmas = perturb_batch(data, sched, rng)
        return data, noisy, sigmas

    def test_power_of_two_rescaling_is_bit_exact(self):
        """Scaling sigma0 by alpha and the energy by 1/alpha^2 leaves the
        loss unchanged; for alpha a power of two, bit for bit."""
        net = EnergyNet(NetConfig(2, (8, 8), seed=29))
        data, noisy, sigmas = self._pairs()
        w = 1.0 / sigmas ** 2
        base = mdsm_loss_from_pairs(net, data, noisy, sigmas, SIGMA0, w).item()
        for alpha in (2.0, 4.0, 0.5):
            scaled = mdsm_loss_from_pairs(ScaledEnergy(net, 1.0 / alpha ** 2),
                                          data, noisy, sigmas,
                                          alpha * SIGMA0, w).item()
            assert scaled == base, f"alpha={alpha}"

    def test_general_rescaling_close(self):
        net = EnergyNet(NetConfig(2, (8, 8), seed=29))
        data, noisy, sigmas = self._pairs()
        base = mdsm_loss_from_pairs(net, data, noisy, sigmas, SIGMA0).item()
        alpha = 1.7
        scaled = mdsm_loss_from_pairs(ScaledEnergy(net, 1.0 / alpha ** 2),
                                      data, noisy, sigmas,
                                      alpha * SIGMA0).item()
        assert abs(scaled - base) / base <= 1e-12
