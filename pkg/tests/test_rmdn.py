import math

import numpy as np
import pytest

from scrawl import rmdn
from scrawl.rmdn import AdamConfig, GmmStepParams, NetworkConfig


def small_cfg(**kw):
    defaults = dict(
        input_dim=3,
        layers=2,
        hidden_dim=8,
        num_gaussians=2,
        dropout_keep=1.0,
        seq_len=5,
    )
    defaults.update(kw)
    return NetworkConfig(**defaults)


def numeric_gradient(cfg, weights, x_seq, y_seq, rng_seed, h=1e-5):
    """Central finite differences of the full forward + NLL pipeline."""
    flat = rmdn.flatten_weights(cfg, weights)
    grad = np.empty_like(flat)
    for j in range(flat.size):
        for sign, slot in ((+1, 0), (-1, 1)):
            probe = flat.copy()
            probe[j] += sign * h
            w = rmdn.unflatten_weights(cfg, probe)
            _, _, cache = rmdn.forward(
                w and cfg, w, x_seq, None, "train", np.random.default_rng(rng_seed)
            )
            loss, _ = rmdn.nll_raw_grad(cfg, cache["raw"], y_seq)
            if slot == 0:
                up = loss
            else:
                down = loss
        grad[j] = (up - down) / (2 * h)
    return grad


def analytic_gradient(cfg, weights, x_seq, y_seq, rng_seed):
    _, _, cache = rmdn.forward(
        cfg, weights, x_seq, None, "train", np.random.default_rng(rng_seed)
    )
    _, d_raw = rmdn.nll_raw_grad(cfg, cache["raw"], y_seq)
    grads = rmdn.backward(cache, d_raw, weights)
    return rmdn.flatten_weights(cfg, grads)


class TestConfig:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=2, layers=4)
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=2, dropout_keep=0.0)
        with pytest.raises(ValueError):
            NetworkConfig(input_dim=0)

    def test_output_dim(self):
        assert small_cfg(num_gaussians=5).output_dim == 30
        assert small_cfg(num_gaussians=5, pen_head=True).output_dim == 31


class TestForward:
    def test_param_ranges_fuzzed(self):
        cfg = small_cfg(pen_head=True)
        rng = np.random.default_rng(0)
        w = rmdn.init_weights(cfg, rng)
        for name in w:
            w[name] = rng.normal(0, 2, w[name].shape)
        params, _, _ = rmdn.forward(cfg, w, rng.normal(0, 3, (7, cfg.input_dim)))
        for p in params:
            assert p.weights.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(p.weights >= 0)
            assert np.all(p.deviations > 0)
            assert np.all(np.abs(p.correlations) < 1)
            assert 0.0 <= p.pen <= 1.0

    def test_zero_weights_zero_input(self):
        cfg = small_cfg(num_gaussians=4)
        w = {n: np.zeros(s) for n, s in rmdn.weight_manifest(cfg)}
        params, _, _ = rmdn.forward(cfg, w, np.zeros((1, cfg.input_dim)))
        p = params[0]
        assert np.allclose(p.weights, 0.25)
        assert np.allclose(p.correlations, 0.0)
        assert np.allclose(p.deviations, 1.0)
        assert np.allclose(p.means, 0.0)

    def test_infer_deterministic(self):
        cfg = small_cfg(dropout_keep=0.8)
        w = rmdn.init_weights(cfg, np.random.default_rng(1))
        x = np.random.default_rng(2).normal(size=(6, cfg.input_dim))
        a, _, _ = rmdn.forward(cfg, w, x)
        b, _, _ = rmdn.forward(cfg, w, x)
        for pa, pb in zip(a, b):
            assert np.array_equal(pa.means, pb.means)
            assert np.array_equal(pa.weights, pb.weights)

    def test_state_carry_equals_full_pass(self):
        cfg = small_cfg()
        w = rmdn.init_weights(cfg, np.random.default_rng(3))
        x = np.random.default_rng(4).normal(size=(9, cfg.input_dim))
        full, full_state, _ = rmdn.forward(cfg, w, x)
        first, mid_state, _ = rmdn.forward(cfg, w, x[:4])
        second, end_state, _ = rmdn.forward(cfg, w, x[4:], mid_state)
        joined = first + second
        for pf, pj in zip(full, joined):
            assert np.allclose(pf.means, pj.means, atol=1e-12)
        for cf, ce in zip(full_state.c, end_state.c):
            assert np.allclose(cf, ce, atol=1e-12)

    def test_dimension_mismatch(self):
        cfg = small_cfg()
        w = rmdn.init_weights(cfg, np.random.default_rng(0))
        with pytest.raises(ValueError):
            rmdn.forward(cfg, w, np.zeros((4, cfg.input_dim + 1)))


class TestBivariatePdf:
    def test_standard_at_mode(self):
        assert rmdn.bivariate_pdf((0, 0), (0, 0), (1, 1), 0.0) == pytest.approx(
            1 / (2 * math.pi), abs=1e-12
        )

    def test_unit_offset(self):
        assert rmdn.bivariate_pdf((1, 1), (0, 0), (1, 1), 0.0) == pytest.approx(
            math.exp(-1) / (2 * math.pi), abs=1e-9
        )

    def test_integrates_to_one(self):
        xs = np.linspace(-8, 8, 401)
        grid = np.array(
            [
                [rmdn.bivariate_pdf((x, y), (0.3, -0.2), (1.2, 0.7), 0.6) for x in xs]
                for y in xs
            ]
        )
        total = np.trapezoid(np.trapezoid(grid, xs, axis=1), xs)
        assert total == pytest.approx(1.0, abs=1e-3)


class TestNllLoss:
    def single_component(self, pen=None):
        return GmmStepParams(
            weights=np.array([1.0]),
            means=np.zeros((1, 2)),
            deviations=np.ones((1, 2)),
            correlations=np.zeros(1),
            pen=pen,
        )

    def test_known_value(self):
        loss = rmdn.nll_loss([self.single_component()], np.zeros((1, 2)))
        assert loss == pytest.approx(-math.log(1 / (2 * math.pi)), abs=1e-6)

    def test_additivity(self):
        p = self.single_component()
        single = rmdn.nll_loss([p], np.array([[0.4, -0.1]]))
        double = rmdn.nll_loss([p, p], np.array([[0.4, -0.1], [0.4, -0.1]]))
        assert double == pytest.approx(2 * single, rel=1e-12)

    def test_weight_of_nearest_component_decreases_loss(self):
        means = np.array([[0.0, 0.0], [5.0, 5.0]])
        target = np.array([[0.0, 0.0]])
        losses = []
        for w0 in (0.3, 0.5, 0.7, 0.9):
            p = GmmStepParams(
                weights=np.array([w0, 1 - w0]),
                means=means,
                deviations=np.ones((2, 2)),
                correlations=np.zeros(2),
            )
            losses.append(rmdn.nll_loss([p], target))
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_underflow_guard(self):
        p = GmmStepParams(
            weights=np.array([1.0]),
            means=np.zeros((1, 2)),
            deviations=np.full((1, 2), 1e-300),
            correlations=np.zeros(1),
        )
        assert rmdn.nll_loss([p], np.array([[50.0, 50.0]])) == math.inf


class TestGradients:
    def test_gradient_check_ten_random_nets(self):
        rng = np.random.default_rng(42)
        worst = 0.0
        for trial in range(10):
            cfg = small_cfg(
                input_dim=int(rng.integers(2, 5)),
                layers=int(rng.integers(1, 3)),
                hidden_dim=int(rng.integers(4, 9)),
                num_gaussians=int(rng.integers(1, 4)),
                dropout_keep=float(rng.choice([1.0, 0.8])),
                peepholes=bool(trial == 0),
                pen_head=bool(trial == 1),
            )
            w = rmdn.init_weights(cfg, rng)
            for name in w:
                w[name] = w[name] + rng.normal(0, 0.1, w[name].shape)
            x = rng.normal(size=(5, cfg.input_dim))
            y = rng.normal(size=(5, 3 if cfg.pen_head else 2))
            if cfg.pen_head:
                y[:, 2] = rng.integers(0, 2, 5)
            seed = int(rng.integers(0, 1 << 31))
            analytic = analytic_gradient(cfg, w, x, y, seed)
            numeric = numeric_gradient(cfg, w, x, y, seed)
            scale = max(np.abs(numeric).max(), 1.0)
            rel = np.abs(analytic - numeric).max() / scale
            worst = max(worst, rel)
        assert worst < 1e-4

    def test_zero_length_sequence(self):
        cfg = small_cfg()
        w = rmdn.init_weights(cfg, np.random.default_rng(0))
        _, _, cache = rmdn.forward(cfg, w, np.zeros((0, cfg.input_dim)))
        grads = rmdn.backward(cache, np.zeros((0, cfg.output_dim)), w)
        assert all(np.all(g == 0) for g in grads.values())

    def test_second_layer_receives_gradient(self):
        cfg = small_cfg(layers=2)
        rng = np.random.default_rng(5)
        w = rmdn.init_weights(cfg, rng)
        x = rng.normal(size=(4, cfg.input_dim))
        y = rng.normal(size=(4, 2))
        flat = analytic_gradient(cfg, w, x, y, 0)
        grads = rmdn.unflatten_weights(cfg, flat)
        assert np.abs(grads["l1.W_x"]).max() > 0


class TestClipAndAdam:
    def test_clip_identity_below_threshold(self):
        g = {"a": np.array([0.3, 0.4])}
        assert rmdn.clip_gradients(g, 5.0)["a"] is g["a"]

    def test_clip_three_four_five(self):
        g = {"a": np.array([3.0, 4.0])}
        out = rmdn.clip_gradients(g, 2.5)["a"]
        assert np.linalg.norm(out) == pytest.approx(2.5, abs=1e-12)
        assert out[1] / out[0] == pytest.approx(4 / 3, rel=1e-12)

    def test_clip_property(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            g = {"a": rng.normal(0, 10, 5), "b": rng.normal(0, 10, 3)}
            out = rmdn.clip_gradients(g, 2.0)
            norm = math.sqrt(sum(float(np.sum(v * v)) for v in out.values()))
            assert norm <= 2.0 + 1e-12

    def test_adam_zero_gradient(self):
        cfg = small_cfg()
        w = rmdn.init_weights(cfg, np.random.default_rng(0))
        before = rmdn.flatten_weights(cfg, w)
        moments = rmdn.adam_init(cfg)
        zero = {n: np.zeros(s) for n, s in rmdn.weight_manifest(cfg)}
        rmdn.adam_step(w, zero, moments, 1, AdamConfig())
        assert np.array_equal(before, rmdn.flatten_weights(cfg, w))

    def test_adam_first_step_magnitude(self):
        adam = AdamConfig()
        w = {"a": np.array([1.0])}
        moments = {"m": {"a": np.zeros(1)}, "v": {"a": np.zeros(1)}}
        rmdn.adam_step(w, {"a": np.array([0.5])}, moments, 1, adam)
        assert abs(1.0 - w["a"][0]) == pytest.approx(adam.lr, rel=1e-6)

    def test_adam_quadratic_bowl(self):
        adam = AdamConfig(lr=0.05)
        w = {"a": np.array([4.0])}
        moments = {"m": {"a": np.zeros(1)}, "v": {"a": np.zeros(1)}}
        for t in range(1, 2001):
            rmdn.adam_step(w, {"a": 2 * w["a"]}, moments, t, adam)
        assert abs(w["a"][0]) < 1e-3


class TestSegments:
    def test_enumeration(self):
        assert rmdn.make_segments(10, 4, 0.5) == [(0, 4), (2, 6), (4, 8), (6, 10)]

    def test_short_sequence_single_segment(self):
        assert rmdn.make_segments(3, 8, 0.5) == [(0, 3)]
        assert rmdn.make_segments(8, 8, 0.5) == [(0, 8)]

    def test_zero_overlap_disjoint_with_tail(self):
        segs = rmdn.make_segments(10, 4, 0.0)
        assert segs == [(0, 4), (4, 8), (6, 10)]

    def test_full_coverage_property(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            n = int(rng.integers(2, 60))
            seg_len = int(rng.integers(2, 20))
            overlap = float(rng.uniform(0, 0.9))
            covered = np.zeros(n, dtype=int)
            for a, b in rmdn.make_segments(n, seg_len, overlap):
                covered[a:b] += 1
            assert np.all(covered >= 1)

    def test_half_overlap_double_coverage(self):
        covered = np.zeros(20, dtype=int)
        for a, b in rmdn.make_segments(20, 6, 0.5):
            covered[a:b] += 1
        assert np.all(covered[3:-3] >= 2)


class TestSampling:
    def test_sigma_zero_limit_returns_mean(self):
        p = GmmStepParams(
            weights=np.array([1.0]),
            means=np.array([[2.0, -3.0]]),
            deviations=np.full((1, 2), 1e-12),
            correlations=np.zeros(1),
        )
        y = rmdn.sample_gmm(p, np.random.default_rng(0))
        assert np.allclose(y, [2.0, -3.0], atol=1e-9)

    def test_monte_carlo_mean(self):
        p = GmmStepParams(
            weights=np.array([1.0]),
            means=np.array([[1.5, -0.5]]),
            deviations=np.array([[0.8, 1.2]]),
            correlations=np.array([0.0]),
        )
        rng = np.random.default_rng(1)
        draws = np.array([rmdn.sample_gmm(p, rng) for _ in range(100_000)])
        tol = 3 * p.deviations[0] / math.sqrt(100_000)
        assert np.all(np.abs(draws.mean(axis=0) - p.means[0]) < tol)

    def test_monte_carlo_correlation(self):
        p = GmmStepParams(
            weights=np.array([1.0]),
            means=np.zeros((1, 2)),
            deviations=np.ones((1, 2)),
            correlations=np.array([0.7]),
        )
        rng = np.random.default_rng(2)
        draws = np.array([rmdn.sample_gmm(p, rng) for _ in range(100_000)])
        assert np.corrcoef(draws.T)[0, 1] == pytest.approx(0.7, abs=0.02)

    def test_sampling_deterministic(self):
        p = GmmStepParams(
            weights=np.array([0.4, 0.6]),
            means=np.array([[0.0, 0.0], [3.0, 3.0]]),
            deviations=np.ones((2, 2)),
            correlations=np.array([0.2, -0.3]),
            pen=0.5,
        )
        a = rmdn.sample_gmm(p, np.random.default_rng(11))
        b = rmdn.sample_gmm(p, np.random.default_rng(11))
        assert np.array_equal(a[0], b[0]) and a[1] == b[1]


class TestTrain:
    def constant_dataset(self, n=8, t=12, seed=0):
        rng = np.random.default_rng(seed)
        data = []
        for _ in range(n):
            x = rng.normal(size=(t, 3))
            y = np.tile([0.5, -0.25], (t, 1)) + rng.normal(0, 0.01, (t, 2))
            data.append((x, y))
        return data

    def test_loss_improves_on_learnable_data(self):
        cfg = small_cfg(hidden_dim=8, num_gaussians=1, seq_len=6)
        ckpt = rmdn.train(cfg, self.constant_dataset(), seed=0, epochs=50)
        curve = ckpt.training_meta["loss_curve"]
        assert curve[-1] < curve[0]

    def test_deterministic(self):
        cfg = small_cfg(hidden_dim=6, num_gaussians=1, seq_len=6, dropout_keep=0.9)
        a = rmdn.train(cfg, self.constant_dataset(4, 8), seed=3, epochs=3)
        b = rmdn.train(cfg, self.constant_dataset(4, 8), seed=3, epochs=3)
        for name in a.weights:
            assert np.array_equal(a.weights[name], b.weights[name])
        assert a.training_meta == b.training_meta

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            rmdn.train(small_cfg(), [], seed=0)

    def test_checkpoint_manifest_validated(self):
        cfg = small_cfg()
        w = rmdn.init_weights(cfg, np.random.default_rng(0))
        del w["out.b"]
        with pytest.raises(ValueError):
            rmdn.ModelCheckpoint(1, "DPP", cfg, w, None, {})
