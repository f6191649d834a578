import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socforecast.errors import NumericError, ShapeError
from socforecast.nn import (
    Adam,
    AdamState,
    BatchNormParams,
    DenseParams,
    DropoutSpec,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    clip_by_global_norm,
    dense_backward,
    dense_forward,
    dropout_forward,
    grad_check,
    mse_loss,
)


def logistic(x):
    return 1.0 / (1.0 + math.exp(-x))


class TestDense:
    def test_identity_linear(self):
        p = DenseParams(np.eye(2), np.zeros((2, 1)), "linear")
        out, _ = dense_forward(p, [3.0, -1.0])
        np.testing.assert_array_equal(out.ravel(), [3.0, -1.0])

    def test_sigmoid_bias_only(self):
        p = DenseParams(np.zeros((2, 2)), np.array([[1.0], [-1.0]]), "sigmoid")
        out, _ = dense_forward(p, [0.3, 0.7])
        np.testing.assert_allclose(out.ravel(), [logistic(1.0), logistic(-1.0)], rtol=1e-15)
        np.testing.assert_allclose(out.ravel(), [0.7310585786300049, 0.2689414213699951], atol=1e-15)

    def test_relu(self):
        p = DenseParams(np.eye(3), np.zeros((3, 1)), "relu")
        out, _ = dense_forward(p, [-2.0, 0.0, 5.0])
        np.testing.assert_array_equal(out.ravel(), [0.0, 0.0, 5.0])

    def test_shape_mismatch_names_shapes(self):
        p = DenseParams(np.eye(2), np.zeros((2, 1)))
        with pytest.raises(ShapeError, match=r"3 rows.*\(2, 2\)"):
            dense_forward(p, [1.0, 2.0, 3.0])

    def test_linear_homogeneity_without_bias(self):
        rng = np.random.default_rng(3)
        p = DenseParams(rng.normal(size=(4, 3)), np.zeros((4, 1)), "linear")
        x = rng.normal(size=(3, 5))
        a, _ = dense_forward(p, 2.5 * x)
        b, _ = dense_forward(p, x)
        np.testing.assert_allclose(a, 2.5 * b, rtol=1e-13)

    @pytest.mark.parametrize("act", ["relu", "sigmoid", "tanh", "linear"])
    def test_gradients(self, act):
        rng = np.random.default_rng(11)
        p = DenseParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)), act)
        x = rng.normal(size=(3, 3))
        y = rng.normal(size=(3, 3))

        def loss(ps):
            out, _ = dense_forward(DenseParams(ps["weights"], ps["bias"], act), x)
            return mse_loss(out, y)[0]

        out, cache = dense_forward(p, x)
        _, d = mse_loss(out, y)
        _, grads = dense_backward(p, d, cache)
        assert grad_check(loss, p.params(), grads, 1e-5) < 1e-4


class TestMse:
    def test_perfect_fit(self):
        x = np.arange(6.0).reshape(2, 3)
        loss, grad = mse_loss(x, x)
        assert loss == 0.0
        assert not grad.any()

    def test_hand_value(self):
        loss, _ = mse_loss([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
        assert loss == pytest.approx(2.0 / 3.0, rel=1e-15)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(0)
        pred = rng.normal(size=(4, 4))
        target = rng.normal(size=(4, 4))
        _, grad = mse_loss(pred, target)
        h = 1e-6
        numeric = np.empty_like(pred)
        for idx in np.ndindex(pred.shape):
            p1, p2 = pred.copy(), pred.copy()
            p1[idx] += h
            p2[idx] -= h
            numeric[idx] = (mse_loss(p1, target)[0] - mse_loss(p2, target)[0]) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros((2, 2)), np.zeros((2, 3)))


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        st0 = AdamState.zeros_like(np.zeros((2, 2)))
        p = np.array([[1.0, -2.0], [3.0, 0.5]])
        new_p, st1 = adam_step(st0, p, np.zeros_like(p))
        np.testing.assert_array_equal(new_p, p)
        assert st1.step == 1

    def test_first_step_hand_value(self):
        lr, b1, b2, eps, g = 1e-3, 0.9, 0.999, 1e-8, 0.1
        m = (1 - b1) * g
        v = (1 - b2) * g * g
        expected = lr * (m / (1 - b1)) / (math.sqrt(v / (1 - b2)) + eps)
        st0 = AdamState.zeros_like(np.zeros((1, 1)))
        new_p, _ = adam_step(st0, np.array([[0.0]]), np.array([[g]]))
        assert -new_p[0, 0] == pytest.approx(expected, rel=1e-14)
        assert -new_p[0, 0] == pytest.approx(0.000999999900000001, rel=1e-12)

    def test_deterministic_and_pure(self):
        rng = np.random.default_rng(1)
        p, g = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
        st0 = AdamState.zeros_like(p)
        a = adam_step(st0, p, g)
        b = adam_step(st0, p, g)
        np.testing.assert_array_equal(a[0], b[0])
        assert st0.step == 0 and not st0.m.any()

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState.zeros_like(np.zeros(2)), np.zeros(2), np.zeros(3))

    @given(st.integers(1, 20), st.floats(1e-4, 1e-1))
    @settings(max_examples=25, deadline=None)
    def test_zero_gradient_fixed_point_any_state(self, steps, lr):
        rng = np.random.default_rng(steps)
        p = rng.normal(size=(2, 3))
        opt = Adam(lr=lr)
        params = {"p": p}
        for _ in range(steps):
            opt.update(params, {"p": rng.normal(size=(2, 3))})
        before = p.copy()
        st_ = opt.states["p"]
        new_p, st2 = adam_step(st_, p, np.zeros_like(p))
        # Stale moments still move parameters; the fixed point holds once moments are zero.
        zeroed = AdamState(np.zeros_like(p), np.zeros_like(p), st_.step, lr)
        np.testing.assert_array_equal(adam_step(zeroed, before, np.zeros_like(p))[0], before)
        assert st2.step == st_.step + 1
        assert np.all(st2.v >= 0)


class TestBatchNorm:
    def test_constant_batch_maps_to_zero(self):
        bn = BatchNormParams.init(3)
        out, _ = batchnorm_forward(bn, np.full((3, 5), 4.2), training=True)
        np.testing.assert_array_equal(out, 0.0)

    def test_unit_variance_batch(self):
        bn = BatchNormParams.init(2)
        out, _ = batchnorm_forward(bn, np.array([[-1.0, 1.0], [-1.0, 1.0]]), training=True)
        # Population variance is 1, so the only shrinkage comes from epsilon.
        expected = 1.0 / math.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out, [[-expected, expected]] * 2, rtol=1e-14)
        np.testing.assert_allclose(out, [[-1.0, 1.0]] * 2, atol=1e-5)

    def test_zero_gamma_gives_beta(self):
        bn = BatchNormParams.init(2)
        bn.gamma[:] = 0.0
        bn.beta[:] = 5.0
        out, _ = batchnorm_forward(bn, np.random.default_rng(0).normal(size=(2, 6)), training=True)
        np.testing.assert_array_equal(out, 5.0)

    def test_single_sample_training_rejected(self):
        with pytest.raises(ValueError):
            batchnorm_forward(BatchNormParams.init(2), np.zeros((2, 1)), training=True)

    def test_running_stats_update_and_inference(self):
        bn = BatchNormParams.init(1, momentum=0.9)
        x = np.array([[1.0, 3.0]])
        batchnorm_forward(bn, x, training=True)
        assert bn.running_mean[0, 0] == pytest.approx(0.1 * 2.0)
        assert bn.running_var[0, 0] == pytest.approx(0.9 + 0.1 * 1.0)
        out, _ = batchnorm_forward(bn, np.array([[0.2]]), training=False)
        assert out[0, 0] == pytest.approx(0.0)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, training):
        rng = np.random.default_rng(5)
        bn = BatchNormParams.init(3)
        bn.gamma[:] = rng.normal(size=(3, 1))
        bn.beta[:] = rng.normal(size=(3, 1))
        bn.running_mean[:] = rng.normal(size=(3, 1))
        bn.running_var[:] = rng.uniform(0.5, 2.0, size=(3, 1))
        x = rng.normal(size=(3, 4))
        y = rng.normal(size=(3, 4))

        def loss(ps):
            b = BatchNormParams(ps["gamma"], ps["beta"], bn.running_mean.copy(), bn.running_var.copy())
            out, _ = batchnorm_forward(b, ps["x"], training)
            return mse_loss(out, y)[0]

        snapshot = BatchNormParams(bn.gamma, bn.beta, bn.running_mean.copy(), bn.running_var.copy())
        out, cache = batchnorm_forward(snapshot, x, training)
        _, d = mse_loss(out, y)
        dx, grads = batchnorm_backward(snapshot, d, cache)
        grads["x"] = dx
        params = {"gamma": bn.gamma, "beta": bn.beta, "x": x}
        assert grad_check(loss, params, grads, 1e-5) < 1e-4


class TestDropout:
    def test_rate_zero_is_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 4))
        for training in (True, False):
            out, _ = dropout_forward(DropoutSpec(0.0), x, training)
            np.testing.assert_array_equal(out, x)

    def test_inference_identity(self):
        x = np.random.default_rng(0).normal(size=(4, 4))
        out, mask = dropout_forward(DropoutSpec(0.7, 3), x, training=False)
        np.testing.assert_array_equal(out, x)
        assert mask is None

    def test_monte_carlo_expectation(self):
        x = np.random.default_rng(1).uniform(0.5, 1.5, size=(100, 1000))
        out, _ = dropout_forward(DropoutSpec(0.2, 9), x, training=True)
        survivors = np.count_nonzero(out) / out.size
        assert abs(survivors - 0.8) <= 0.01
        assert abs(out.mean() - x.mean()) <= 0.02 * x.mean()

    def test_seeded_determinism(self):
        x = np.ones((10, 10))
        a, _ = dropout_forward(DropoutSpec(0.5, 4), x, True)
        b, _ = dropout_forward(DropoutSpec(0.5, 4), x, True)
        np.testing.assert_array_equal(a, b)

    def test_rate_one_rejected(self):
        with pytest.raises(ValueError):
            DropoutSpec(1.0)


class TestGradCheck:
    def test_linear_function_is_exact(self):
        rng = np.random.default_rng(2)
        c = rng.normal(size=(5, 1))
        theta = rng.normal(size=(5, 1))
        err = grad_check(lambda ps: float((c.T @ ps["t"])[0, 0]), {"t": theta}, {"t": c}, 1e-5)
        assert err < 1e-10

    def test_detects_doubled_gradient(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(3, 3))
        y = rng.normal(size=(3, 3))
        p = DenseParams(rng.normal(size=(3, 3)), rng.normal(size=(3, 1)), "linear")

        def loss(ps):
            out, _ = dense_forward(DenseParams(ps["weights"], ps["bias"]), x)
            return mse_loss(out, y)[0]

        out, cache = dense_forward(p, x)
        _, grads = dense_backward(p, mse_loss(out, y)[1], cache)
        bad = {k: 2.0 * v for k, v in grads.items()}
        # |2g - g| / (|2g| + |g|) = 1/3
        assert grad_check(loss, p.params(), bad, 1e-5) == pytest.approx(1.0 / 3.0, abs=1e-4)

    def test_non_finite_raises(self):
        with pytest.raises(NumericError):
            grad_check(lambda ps: float("nan"), {"a": np.zeros((1, 1))}, {"a": np.zeros((1, 1))})

    @given(st.integers(1, 8), st.integers(1, 8), st.integers(2, 8), st.sampled_from(["tanh", "sigmoid", "linear"]))
    @settings(max_examples=20, deadline=None)
    def test_dense_gradients_on_random_shapes(self, n_in, n_out, batch, act):
        rng = np.random.default_rng(n_in * 100 + n_out * 10 + batch)
        p = DenseParams(rng.normal(size=(n_out, n_in)), rng.normal(size=(n_out, 1)), act)
        x = rng.normal(size=(n_in, batch))
        y = rng.normal(size=(n_out, batch))

        def loss(ps):
            out, _ = dense_forward(DenseParams(ps["weights"], ps["bias"], act), x)
            return mse_loss(out, y)[0]

        out, cache = dense_forward(p, x)
        _, grads = dense_backward(p, mse_loss(out, y)[1], cache)
        assert grad_check(loss, p.params(), grads, 1e-5) < 1e-4


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_by_global_norm(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)
    h = {"a": np.array([0.3])}
    clip_by_global_norm(h, 1.0)
    assert h["a"][0] == 0.3
