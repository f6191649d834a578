import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socforecast.errors import ShapeError, UndefinedMetricError
from socforecast.metrics import evaluate, mean_deviation_adjust, table_report


def brute_force(preds, targets):
    """Plain-Python MAE, RMSE and R^2 with explicit loops."""
    n = len(targets)
    abs_sum = 0.0
    sq_sum = 0.0
    for p, t in zip(preds, targets):
        abs_sum += abs(t - p)
        sq_sum += (t - p) * (t - p)
    mean = math.fsum(targets) / n
    ss_tot = math.fsum((t - mean) ** 2 for t in targets)
    return abs_sum / n, math.sqrt(sq_sum / n), 1.0 - sq_sum / ss_tot


class TestEvaluate:
    def test_perfect(self):
        r = evaluate([1.0, 2.0, 4.0], [1.0, 2.0, 4.0])
        assert (r.mae, r.rmse, r.r2) == (0.0, 0.0, 1.0)

    def test_hand_mae_rmse(self):
        r = evaluate([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
        assert r.mae == pytest.approx(2.0 / 3.0, rel=1e-15)
        assert r.rmse == pytest.approx(math.sqrt(2.0 / 3.0), rel=1e-15)
        assert r.rmse == pytest.approx(0.816497, abs=1e-6)

    def test_hand_r2(self):
        assert evaluate([1.0, 2.0, 4.0], [1.0, 2.0, 3.0]).r2 == pytest.approx(0.5, abs=1e-15)

    def test_mean_prediction_gives_zero_r2(self):
        t = np.random.default_rng(0).normal(size=50)
        assert abs(evaluate(np.full(50, t.mean()), t).r2) <= 1e-12

    def test_constant_targets(self):
        with pytest.raises(UndefinedMetricError) as exc:
            evaluate([1.0, 2.0], [3.0, 3.0])
        assert exc.value.report.mae == pytest.approx(1.5)
        assert math.isnan(exc.value.report.r2)

    def test_bad_lengths(self):
        with pytest.raises(ValueError):
            evaluate([], [])
        with pytest.raises(ValueError):
            evaluate([1.0, 2.0], [1.0])

    def test_oracle_on_random_vectors(self):
        rng = np.random.default_rng(17)
        for _ in range(1000):
            n = int(rng.integers(2, 60))
            t = rng.normal(scale=rng.uniform(0.1, 10), size=n)
            p = t + rng.normal(scale=rng.uniform(0.01, 5), size=n)
            r = evaluate(p, t)
            mae, rmse, r2 = brute_force(p.tolist(), t.tolist())
            assert abs(r.mae - mae) <= 1e-12
            assert abs(r.rmse - rmse) <= 1e-12
            assert abs(r.r2 - r2) <= 1e-12
            assert r.rmse >= r.mae

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=40), st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_rmse_at_least_mae(self, targets, seed):
        t = np.array(targets)
        p = t + np.random.default_rng(seed).normal(size=len(t))
        try:
            r = evaluate(p, t)
        except UndefinedMetricError as exc:
            r = exc.report
        assert r.mae >= 0
        assert r.rmse >= r.mae * (1 - 1e-12)
        assert math.isnan(r.r2) or r.r2 <= 1.0


class TestTableReport:
    def test_keys_and_pooled_rmse(self):
        rng = np.random.default_rng(1)
        t = rng.normal(size=(30, 2))
        p = t + rng.normal(scale=0.1, size=(30, 2))
        rep = table_report(p, t)
        assert list(rep) == ["RMSE", "MAE(ah_charged)", "R2(ah_charged)", "MAE(ah_discharged)", "R2(ah_discharged)"]
        assert rep["RMSE"] == pytest.approx(math.sqrt(np.mean((p - t) ** 2)), rel=1e-14)
        assert rep["R2(ah_discharged)"] == pytest.approx(evaluate(p[:, 1], t[:, 1]).r2, rel=1e-14)

    def test_constant_column_reports_nan(self):
        t = np.column_stack([np.arange(5.0), np.zeros(5)])
        rep = table_report(t, t)
        assert rep["R2(ah_charged)"] == 1.0
        assert math.isnan(rep["R2(ah_discharged)"])

    def test_shape(self):
        with pytest.raises(ShapeError):
            table_report(np.zeros((3, 3)), np.zeros((3, 3)))


class TestMeanDeviation:
    def test_zero_mean_residuals(self):
        p = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(mean_deviation_adjust(p, np.array([[1.0, -2.0], [-1.0, 2.0]])), p)

    def test_constant_bias(self):
        p = np.arange(6.0).reshape(3, 2)
        np.testing.assert_array_equal(mean_deviation_adjust(p, np.full((4, 2), 2.0)), p - 2.0)

    def test_reference_residual_becomes_zero(self):
        rng = np.random.default_rng(2)
        actual = rng.normal(size=(200, 2))
        preds = actual + 0.3 + rng.normal(scale=0.05, size=(200, 2))
        adjusted = mean_deviation_adjust(preds, preds - actual)
        np.testing.assert_allclose((adjusted - actual).mean(axis=0), 0.0, atol=1e-12)
        assert np.abs(adjusted - actual).mean() < np.abs(preds - actual).mean()

    def test_empty_reference(self):
        with pytest.raises(ValueError):
            mean_deviation_adjust(np.zeros((2, 2)), np.zeros((0, 2)))
