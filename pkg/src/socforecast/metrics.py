"""Regression metrics and the bias correction applied to model outputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, UndefinedMetricError

TARGET_NAMES = ("ah_charged", "ah_discharged")


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    r2: float


def evaluate(preds, targets) -> MetricsReport:
    """MAE, RMSE and R^2 of ``preds`` against ``targets``.

    Raises :class:`UndefinedMetricError` when every target is identical; the
    exception's ``report`` still holds MAE and RMSE (with ``r2`` set to NaN).
    """
    y_hat = np.asarray(preds, dtype=np.float64).ravel()
    y = np.asarray(targets, dtype=np.float64).ravel()
    if y.shape != y_hat.shape:
        raise ShapeError(f"{y_hat.size} predictions vs {y.size} targets")
    if y.size == 0:
        raise ShapeError("cannot evaluate an empty set")
    resid = y - y_hat
    mae = float(np.mean(np.abs(resid)))
    ss_res = float(np.sum(resid * resid))
    rmse = float(np.sqrt(ss_res / y.size))
    dev = y - y.mean()
    ss_tot = float(np.sum(dev * dev))
    if ss_tot == 0.0:
        raise UndefinedMetricError(
            "R^2 is undefined: all targets are identical", MetricsReport(mae, rmse, float("nan"))
        )
    return MetricsReport(mae, rmse, 1.0 - ss_res / ss_tot)


def table_report(preds, targets) -> dict[str, float]:
    """Metrics for a (n, 2) charged/discharged prediction set, keyed like the
    published results table. RMSE pools both targets."""
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape or preds.ndim != 2 or preds.shape[1] != 2:
        raise ShapeError(f"expected matching (n, 2) arrays, got {preds.shape} and {targets.shape}")
    pooled = float(np.sqrt(np.mean((preds - targets) ** 2)))
    out = {"RMSE": pooled}
    for k, name in enumerate(TARGET_NAMES):
        try:
            rep = evaluate(preds[:, k], targets[:, k])
        except UndefinedMetricError as exc:
            rep = exc.report
        out[f"MAE({name})"] = rep.mae
        out[f"R2({name})"] = rep.r2
    return out


def mean_deviation_adjust(preds, residual_reference) -> np.ndarray:
    """Shift ``preds`` by the mean reference residual (prediction minus actual), per target column."""
    preds = np.asarray(preds, dtype=np.float64)
    ref = np.asarray(residual_reference, dtype=np.float64)
    if ref.size == 0:
        raise ValueError("residual reference set is empty")
    bias = ref.mean(axis=0)
    return preds - bias
