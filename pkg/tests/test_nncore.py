import numpy as np
import pytest

from oracles import central_difference
from shapaudit.nncore import (AdamState, FocalLossParams, adam_step, as_matrix,
                              focal_loss, gradient_check, softmax)


class TestSoftmax:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        probs = softmax(rng.normal(size=(40, 5)) * 10.0)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)
        assert (probs > 0).all()

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(8, 3))
        shifted = logits + 500.0
        assert np.allclose(softmax(logits), softmax(shifted), atol=1e-12)

    def test_large_logits_do_not_overflow(self):
        probs = softmax(np.array([[1e4, 0.0, -1e4]]))
        assert np.isfinite(probs).all()
        assert probs[0, 0] == pytest.approx(1.0)


class TestAsMatrix:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="finite"):
            as_matrix(np.array([[1.0, np.nan]]), "x")

    def test_rejects_wrong_ndim(self):
        with pytest.raises(ValueError):
            as_matrix(np.zeros(3), "x")

    def test_returns_float64_contiguous(self):
        out = as_matrix(np.arange(6, dtype=np.int32).reshape(2, 3)[:, ::-1], "x")
        assert out.dtype == np.float64 and out.flags["C_CONTIGUOUS"]


class TestFocalLoss:
    def test_hand_value_gamma2(self):
        # single sample with p_t = 0.9: -(1-0.9)^2 * ln(0.9)
        probs = np.array([[0.9, 0.1]])
        loss, _ = focal_loss(probs, [0], FocalLossParams(gamma=2.0))
        assert loss == pytest.approx(0.0010536051565782628, abs=1e-15)

    def test_gamma_zero_is_cross_entropy(self):
        rng = np.random.default_rng(2)
        probs = softmax(rng.normal(size=(20, 4)))
        labels = rng.integers(0, 4, size=20)
        loss, _ = focal_loss(probs, labels, FocalLossParams(gamma=0.0))
        expected = -np.log(probs[np.arange(20), labels]).mean()
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_alpha_weighting(self):
        probs = np.array([[0.8, 0.2], [0.3, 0.7]])
        labels = [0, 1]
        base, _ = focal_loss(probs, labels, FocalLossParams(gamma=0.0))
        weighted, _ = focal_loss(probs, labels, FocalLossParams(gamma=0.0, alpha=(0.5, 0.5)))
        assert weighted == pytest.approx(0.5 * base, rel=1e-12)

    def test_alpha_outside_unit_interval_rejected(self):
        with pytest.raises(ValueError, match="alpha"):
            FocalLossParams(gamma=0.0, alpha=(2.0, 2.0))
        with pytest.raises(ValueError, match="alpha"):
            FocalLossParams(gamma=0.0, alpha=(0.5, 0.0))

    def test_confident_correct_prediction_clamped(self):
        probs = np.array([[1.0, 0.0]])
        loss, grad = focal_loss(probs, [0], FocalLossParams())
        assert np.isfinite(loss) and np.isfinite(grad).all()
        assert loss >= 0.0

    def test_gradient_matches_finite_differences(self):
        # the analytic gradient is w.r.t. pre-softmax logits
        rng = np.random.default_rng(3)
        for gamma in (0.0, 1.0, 2.0):
            logits = rng.normal(size=(6, 3))
            labels = rng.integers(0, 3, size=6)
            params = FocalLossParams(gamma=gamma, alpha=(0.5, 1.0, 0.25))
            _, grad = focal_loss(softmax(logits), labels, params)

            def scalar(flat):
                probs = softmax(flat.reshape(6, 3))
                return focal_loss(probs, labels, params)[0]

            fd = central_difference(scalar, logits.ravel(), h=1e-6).reshape(6, 3)
            assert np.abs(grad - fd).max() < 1e-7

    def test_bad_inputs_rejected(self):
        with pytest.raises(ValueError, match="sum"):
            focal_loss(np.array([[0.9, 0.3]]), [0], FocalLossParams())
        with pytest.raises(ValueError, match="label"):
            focal_loss(np.array([[0.5, 0.5]]), [2], FocalLossParams())
        with pytest.raises(ValueError):
            FocalLossParams(gamma=-1.0)
        with pytest.raises(ValueError):
            FocalLossParams(alpha=(1.0, -2.0))


class TestAdam:
    def test_single_step_matches_formula(self):
        p = [np.array([1.0, -2.0])]
        g = [np.array([0.5, 0.25])]
        state = AdamState.for_params(p, lr=0.1)
        adam_step(p, g, state)
        m = 0.1 * g[0]
        v = 0.001 * g[0] ** 2
        expected = np.array([1.0, -2.0]) - 0.1 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
        assert np.allclose(p[0], expected, atol=1e-15)
        assert state.step == 1

    def test_descends_quadratic(self):
        p = [np.array([5.0])]
        state = AdamState.for_params(p, lr=0.05)
        for _ in range(2000):
            adam_step(p, [2.0 * p[0]], state)
        assert abs(p[0][0]) < 1e-3

    def test_shape_mismatch_rejected(self):
        p = [np.zeros(3)]
        state = AdamState.for_params(p)
        with pytest.raises(ValueError):
            adam_step(p, [np.zeros(4)], state)

    def test_non_finite_gradient_rejected(self):
        p = [np.zeros(2)]
        state = AdamState.for_params(p)
        with pytest.raises(ValueError):
            adam_step(p, [np.array([1.0, np.inf])], state)


class TestGradientCheck:
    def test_exact_on_linear_function(self):
        rng = np.random.default_rng(4)
        w = rng.normal(size=7)

        def fn(x):
            return float(w @ x), np.empty((0,))

        err, checked, excluded = gradient_check(fn, w, rng.normal(size=7))
        assert err < 1e-9
        assert checked == 7 and excluded == 0

    def test_kink_coordinate_excluded(self):
        # f(x) = relu(x0) + x1 with x0 sitting exactly on the kink
        def fn(x):
            z = np.array([x[0]])
            return float(np.maximum(x[0], 0.0) + x[1]), z

        err, checked, excluded = gradient_check(fn, np.array([0.0, 1.0]),
                                                np.array([0.0, 1.5]))
        assert excluded == 1 and checked == 1
        assert err < 1e-9

    def test_step_size_validated(self):
        def fn(x):
            return float(x.sum()), np.empty(0)

        with pytest.raises(ValueError):
            gradient_check(fn, np.ones(3), np.zeros(3), h=1e-1)
