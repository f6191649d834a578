"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is solved with sequential minimal optimization over the stacked
variable vector ``beta = [alpha; alpha*]`` (length ``2n``), selecting the
maximal violating pair at every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ScalabilityError, ShapeError

MAX_TRAIN_SAMPLES = 5000
KERNEL_JITTER = 1e-10
_TAU = 1e-12


@dataclass(frozen=True)
class SvrHyperparams:
    C: float = 10.0
    epsilon: float = 0.01
    gamma: float | None = None  # None -> 1 / n_features
    tolerance: float = 1e-3
    max_passes: int = 100_000

    def __post_init__(self):
        if self.C <= 0:
            raise ValueError("C must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # (n_sv, features)
    dual_coef: np.ndarray  # alpha - alpha*, one per support vector
    b: float
    gamma: float
    hyper: SvrHyperparams = field(default_factory=SvrHyperparams)
    iterations: int = 0

    @property
    def n_features(self) -> int:
        return self.support_vectors.shape[1]


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ShapeError(f"kernel arguments have dimensions {x.size} and {y.size}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    """Pairwise kernel values between rows of ``A`` and rows of ``B``."""
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def svr_train(X, y, hyper: SvrHyperparams | None = None) -> SvrModel:
    hyper = hyper or SvrHyperparams()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.size:
        raise ShapeError(f"X {X.shape} and y ({y.size},) disagree")
    n = X.shape[0]
    if n < 2:
        raise ValueError("SVR needs at least 2 training samples")
    if n > MAX_TRAIN_SAMPLES:
        raise ScalabilityError(
            f"{n} training samples exceeds the SVR limit of {MAX_TRAIN_SAMPLES}; "
            "the dense kernel solver does not scale to this size"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("SVR inputs must be finite")
    gamma = hyper.gamma if hyper.gamma is not None else 1.0 / X.shape[1]
    C, eps, tol = hyper.C, hyper.epsilon, hyper.tolerance

    K = rbf_matrix(X, X, gamma)
    K[np.diag_indices(n)] += KERNEL_JITTER
    sign = np.concatenate([np.ones(n), -np.ones(n)])
    idx = np.concatenate([np.arange(n), np.arange(n)])
    beta = np.zeros(2 * n)
    grad = np.concatenate([eps - y, eps + y])
    qd = np.concatenate([np.diag(K), np.diag(K)])

    def q_row(s: int) -> np.ndarray:
        return sign[s] * sign * K[idx[s], idx]

    iterations = 0
    while iterations < hyper.max_passes:
        minus_yg = -sign * grad
        up = ((sign > 0) & (beta < C)) | ((sign < 0) & (beta > 0))
        low = ((sign > 0) & (beta > 0)) | ((sign < 0) & (beta < C))
        if not up.any() or not low.any():
            break
        cand = np.where(up, minus_yg, -np.inf)
        i = int(np.argmax(cand))
        cand = np.where(low, minus_yg, np.inf)
        j = int(np.argmin(cand))
        if minus_yg[i] - minus_yg[j] < tol:
            break
        iterations += 1
        Qi, Qj = q_row(i), q_row(j)
        old_i, old_j = beta[i], beta[j]
        if sign[i] != sign[j]:
            quad = max(qd[i] + qd[j] + 2.0 * Qi[j], _TAU)
            delta = (-grad[i] - grad[j]) / quad
            diff = beta[i] - beta[j]
            beta[i] += delta
            beta[j] += delta
            if diff > 0:
                if beta[j] < 0:
                    beta[j], beta[i] = 0.0, diff
            elif beta[i] < 0:
                beta[i], beta[j] = 0.0, -diff
            if diff > 0:
                if beta[i] > C:
                    beta[i], beta[j] = C, C - diff
            elif beta[j] > C:
                beta[j], beta[i] = C, C + diff
        else:
            quad = max(qd[i] + qd[j] - 2.0 * Qi[j], _TAU)
            delta = (grad[i] - grad[j]) / quad
            total = beta[i] + beta[j]
            beta[i] -= delta
            beta[j] += delta
            if total > C:
                if beta[i] > C:
                    beta[i], beta[j] = C, total - C
                if beta[j] > C:
                    beta[j], beta[i] = C, total - C
            else:
                if beta[j] < 0:
                    beta[j], beta[i] = 0.0, total
                if beta[i] < 0:
                    beta[i], beta[j] = 0.0, total
        grad += Qi * (beta[i] - old_i) + Qj * (beta[j] - old_j)

    rho = _rho(beta, grad, sign, C)
    coef = beta[:n] - beta[n:]
    keep = coef != 0.0
    return SvrModel(X[keep].copy(), coef[keep], -rho, gamma, hyper, iterations)


def _rho(beta, grad, sign, C) -> float:
    yg = sign * grad
    at_upper = beta >= C
    at_lower = beta <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(yg[free].mean())
    ub_mask = (at_upper & (sign < 0)) | (at_lower & (sign > 0))
    lb_mask = (at_upper & (sign > 0)) | (at_lower & (sign < 0))
    ub = yg[ub_mask].min() if ub_mask.any() else np.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2.0)


def svr_predict(model: SvrModel, x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    if model.support_vectors.size and x.size != model.n_features:
        raise ShapeError(f"input has {x.size} features, model expects {model.n_features}")
    return float(svr_predict_many(model, x[None, :])[0])


def svr_predict_many(model: SvrModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if model.support_vectors.shape[0] == 0:
        return np.full(X.shape[0], model.b)
    if X.shape[1] != model.n_features:
        raise ShapeError(f"input has {X.shape[1]} features, model expects {model.n_features}")
    return rbf_matrix(X, model.support_vectors, model.gamma) @ model.dual_coef + model.b
