import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpqfl.data import make_synthetic
from dpqfl.exceptions import EmptyShardError
from dpqfl.model import (
    PROB_FLOOR,
    Adam,
    ClassifierConfig,
    batch_gradients,
    bin_masses,
    class_masses,
    clip_gradient,
    evaluate,
    forward,
    local_epoch,
    logits_and_loss,
    parameter_shift,
    parameter_shift_gradient,
)
from dpqfl.statevec import LAMBDA_MIN, NoiseConfig, PqcArchitecture, Statevector, apply_pqc, encode_batch, expectation_z


def exact_cfg(n=4, layers=2, classes=4, lam=0.0, **kw):
    noise = NoiseConfig.noiseless() if lam == 0.0 else NoiseConfig(None, lam)
    return ClassifierConfig(PqcArchitecture(n, layers), classes, noise, **kw)


def fd_gradient(features, label, params, cfg, h=1e-5):
    grad = np.empty_like(params)
    for d in np.ndindex(params.shape):
        plus, minus = params.copy(), params.copy()
        plus[d] += h
        minus[d] -= h
        grad[d] = (forward(features, label, plus, cfg)[1] - forward(features, label, minus, cfg)[1]) / (2 * h)
    return grad


class TestForward:
    def test_point_mass_on_bin_zero(self):
        cfg = exact_cfg(classes=4)
        logits, loss = forward(np.eye(16)[0], 0, np.zeros(cfg.arch.param_shape), cfg)
        np.testing.assert_allclose(logits, [0.0] + [np.log(PROB_FLOOR)] * 3)
        assert loss == pytest.approx(3 * PROB_FLOOR, rel=1e-6)

    def test_full_depolarizing_gives_uniform(self):
        cfg = exact_cfg(classes=4, lam=1.0)
        params = cfg.arch.init_params(0)
        logits, loss = forward(np.arange(1, 17) / 16, 2, params, cfg)
        np.testing.assert_allclose(logits, np.log(0.25))
        assert loss == pytest.approx(np.log(4))

    def test_modulo_bins(self):
        probs = np.arange(8) / 28
        np.testing.assert_allclose(bin_masses(probs, 3), [(0 + 3 + 6) / 28, (1 + 4 + 7) / 28, (2 + 5) / 28])

    def test_permutation_within_bin_invariant(self, rng):
        probs = rng.dirichlet(np.ones(16))
        swapped = probs.copy()
        swapped[[1, 5]] = swapped[[5, 1]]  # both in bin 1 for C=4
        np.testing.assert_allclose(bin_masses(probs, 4), bin_masses(swapped, 4))

    def test_global_phase_invariant(self, rng):
        cfg = exact_cfg()
        params = cfg.arch.init_params(rng)
        states = encode_batch(rng.uniform(size=(3, 16)), 4)
        np.testing.assert_allclose(class_masses(states * np.exp(0.7j), params, cfg),
                                   class_masses(states, params, cfg), atol=1e-14)

    def test_finite_shot_forward_is_seeded(self):
        cfg = ClassifierConfig(PqcArchitecture(3, 1), 2, NoiseConfig(50, 0.01))
        params = cfg.arch.init_params(3)
        a = forward(np.ones(8), 1, params, cfg, seed=9)
        b = forward(np.ones(8), 1, params, cfg, seed=9)
        assert a[1] == b[1]

    def test_loss_gradient_matches_dq(self, rng):
        q = rng.dirichlet(np.ones(5), size=3)
        labels = np.array([0, 2, 4])
        _, loss, dq = logits_and_loss(q, labels)
        h = 1e-7
        for i in range(5):
            bumped = q.copy()
            bumped[:, i] += h
            np.testing.assert_allclose((logits_and_loss(bumped, labels)[1] - loss) / h, dq[:, i], rtol=1e-5)


class TestParameterShift:
    def test_single_qubit_cosine(self):
        arch = PqcArchitecture(1, 1)

        def f(w):
            return expectation_z(apply_pqc(Statevector.zero(1), arch, w), 0)

        for theta in (0.0, 0.3, 1.2, np.pi / 2):
            g = parameter_shift(f, np.array([[[theta, 0.0, 0.0]]]))
            assert g[0, 0, 0] == pytest.approx(-np.sin(theta), abs=1e-14)
        assert parameter_shift(f, np.zeros((1, 1, 3)))[0, 0, 0] == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("lam", [0.0, 0.05])
    def test_matches_finite_differences(self, lam, rng):
        cfg = exact_cfg(3, 2, classes=3, lam=lam)
        for _ in range(3):
            params = cfg.arch.init_params(rng)
            x = rng.uniform(0.05, 1.0, size=8)
            g = parameter_shift_gradient(x, 1, params, cfg)
            np.testing.assert_allclose(g, fd_gradient(x, 1, params, cfg), atol=1e-7)

    def test_batch_matches_single(self, rng):
        cfg = exact_cfg(3, 1, classes=2)
        params = cfg.arch.init_params(rng)
        X = rng.uniform(0.1, 1.0, size=(4, 8))
        y = np.array([0, 1, 1, 0])
        grads, losses, _ = batch_gradients(encode_batch(X, 3), y, params, cfg)
        for i in range(4):
            np.testing.assert_allclose(grads[i], parameter_shift_gradient(X[i], y[i], params, cfg), atol=1e-14)
            assert losses[i] == pytest.approx(forward(X[i], y[i], params, cfg)[1])

    def test_shot_noise_shrinks_with_m(self, rng):
        cfg50 = ClassifierConfig(PqcArchitecture(2, 1), 2, NoiseConfig(50, LAMBDA_MIN))
        cfg200 = ClassifierConfig(PqcArchitecture(2, 1), 2, NoiseConfig(200, LAMBDA_MIN))
        params = cfg50.arch.init_params(rng)
        x = np.array([0.3, 0.9, 0.2, 0.5])

        def spread(cfg):
            g = np.array([parameter_shift_gradient(x, 0, params, cfg, seed=s).ravel() for s in range(400)])
            return g.var(axis=0).sum()

        assert 2.5 < spread(cfg50) / spread(cfg200) < 6.0

    def test_finite_shots_need_seed_per_example(self):
        cfg = ClassifierConfig(PqcArchitecture(2, 1), 2, NoiseConfig(10, LAMBDA_MIN))
        with pytest.raises(ValueError):
            batch_gradients(encode_batch(np.ones((2, 4)), 2), [0, 1], cfg.arch.init_params(0), cfg)


class TestClipping:
    def test_example(self):
        np.testing.assert_allclose(clip_gradient([3.0, 4.0], 0.8), [0.48, 0.64])

    def test_inside_ball_unchanged(self):
        np.testing.assert_array_equal(clip_gradient([0.1, 0.2], 0.8), [0.1, 0.2])

    def test_zero(self):
        np.testing.assert_array_equal(clip_gradient(np.zeros(3), 0.8), np.zeros(3))

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.floats(1e-3, 10.0))
    def test_norm_bound_property(self, g, c):
        out = clip_gradient(g, c)
        assert np.linalg.norm(out) <= c
        if np.linalg.norm(g) > 0:
            cos = np.dot(out, g) / (np.linalg.norm(out) * np.linalg.norm(g))
            assert cos == pytest.approx(1.0) or np.linalg.norm(out) == 0


class TestLocalEpoch:
    def test_zero_learning_rate(self, rng):
        cfg = exact_cfg(classes=2, learning_rate=0.0)
        params = cfg.arch.init_params(rng)
        X = rng.uniform(0.1, 1.0, size=(10, 16))
        np.testing.assert_array_equal(local_epoch(X, np.arange(10) % 2, params, cfg, seed=1), params)

    def test_single_example_step(self, rng):
        cfg = exact_cfg(classes=2, learning_rate=0.05)
        params = cfg.arch.init_params(rng)
        x = rng.uniform(0.1, 1.0, size=16)
        want = params - 0.05 * clip_gradient(parameter_shift_gradient(x, 1, params, cfg), 0.8)
        np.testing.assert_allclose(local_epoch(x[None], [1], params, cfg, seed=0), want, atol=1e-15)

    def test_empty_shard(self):
        cfg = exact_cfg(classes=2)
        with pytest.raises(EmptyShardError):
            local_epoch(np.empty((0, 16)), [], cfg.arch.init_params(0), cfg)

    def test_deterministic(self, rng):
        cfg = ClassifierConfig(PqcArchitecture(3, 1), 2, NoiseConfig(30, 0.01), batch_size=4)
        params = cfg.arch.init_params(rng)
        X = rng.uniform(0.1, 1.0, size=(10, 8))
        y = np.arange(10) % 2
        np.testing.assert_array_equal(local_epoch(X, y, params, cfg, seed=5), local_epoch(X, y, params, cfg, seed=5))

    def test_descent_direction(self):
        cfg = exact_cfg(3, 2, classes=2, learning_rate=1e-3)
        violations = 0
        r = np.random.default_rng(77)
        for _ in range(100):
            params = cfg.arch.init_params(r)
            x = r.uniform(0.05, 1.0, size=8)
            y = int(r.integers(2))
            before = forward(x, y, params, cfg)[1]
            after = forward(x, y, local_epoch(x[None], [y], params, cfg, seed=0), cfg)[1]
            violations += after > before + 1e-12
        assert violations <= 2

    def test_smoke_training_learns(self):
        data = make_synthetic(2, 50, 16, 4.0, seed=0)
        cfg = ClassifierConfig(PqcArchitecture(4, 2), 2, NoiseConfig(None, LAMBDA_MIN), learning_rate=0.1,
                               batch_size=16)
        params = cfg.arch.init_params(0)
        for epoch in range(20):
            params = local_epoch(data.X, data.y, params, cfg, seed=epoch)
        assert evaluate(data.X, data.y, params, cfg)[1] > 0.9

    def test_adam_moves_params(self, rng):
        cfg = exact_cfg(classes=2, optimizer="adam")
        params = cfg.arch.init_params(rng)
        X = rng.uniform(0.1, 1.0, size=(8, 16))
        out = local_epoch(X, np.arange(8) % 2, params, cfg, seed=0, optimizer=Adam(0.01))
        assert not np.allclose(out, params)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_one_step_bounded_by_lr_times_clip(self, seed):
        cfg = ClassifierConfig(PqcArchitecture(2, 1), 2, NoiseConfig(20, 0.01), learning_rate=0.2, batch_size=3)
        r = np.random.default_rng(seed)
        params = cfg.arch.init_params(r)
        X = r.uniform(0.1, 1.0, size=(3, 4))
        out = local_epoch(X, [0, 1, 0], params, cfg, seed=seed)
        assert np.linalg.norm(out - params) <= 0.2 * 0.8 + 1e-12
