"""Minimal neural-network substrate built on numpy.

Every array is a 2-D float64 matrix laid out as (features, batch): a batch of
column vectors. Layers expose a forward pass returning ``(output, cache)`` and
a backward pass consuming that cache; gradients are derived by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import NumericError, ShapeError

ACTIVATIONS = ("relu", "sigmoid", "tanh", "linear")


def as_matrix(x) -> np.ndarray:
    """Coerce to a 2-D float64 array; 1-D input becomes a column."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form never overflows and is a single ufunc pass.
    return 0.5 + 0.5 * np.tanh(0.5 * z)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "tanh":
        return np.tanh(z)
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation, given pre-activation ``z`` and output ``a``."""
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "sigmoid":
        return a * (1.0 - a)
    if name == "tanh":
        return 1.0 - a * a
    if name == "linear":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# ---------------------------------------------------------------------------
# Dense
# ---------------------------------------------------------------------------


@dataclass
class DenseParams:
    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out, 1)
    activation: str = "linear"

    def __post_init__(self):
        self.weights = as_matrix(self.weights)
        self.bias = as_matrix(self.bias)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.bias.shape != (self.weights.shape[0], 1):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match weights {self.weights.shape}"
            )

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, activation: str = "linear"):
        return cls(glorot_uniform(rng, n_out, n_in), np.zeros((n_out, 1)), activation)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}


def dense_forward(params: DenseParams, x: np.ndarray):
    """Return ``activation(W x + b)`` and the cache needed by :func:`dense_backward`."""
    x = as_matrix(x)
    if x.shape[0] != params.weights.shape[1]:
        raise ShapeError(
            f"dense input has {x.shape[0]} rows but weights are {params.weights.shape}"
        )
    z = params.weights @ x + params.bias
    a = activate(params.activation, z)
    return a, (x, z, a)


def dense_backward(params: DenseParams, dout: np.ndarray, cache):
    x, z, a = cache
    dz = dout * activation_grad(params.activation, z, a)
    grads = {"weights": dz @ x.T, "bias": dz.sum(axis=1, keepdims=True)}
    return params.weights.T @ dz, grads


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient w.r.t. ``pred``."""
    pred = as_matrix(pred)
    target = as_matrix(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    if pred.size == 0:
        raise ShapeError("mse_loss needs at least one element")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# ---------------------------------------------------------------------------
# Batch normalization
# ---------------------------------------------------------------------------


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("batchnorm epsilon must be positive")
        for name in ("gamma", "beta", "running_mean", "running_var"):
            setattr(self, name, as_matrix(getattr(self, name)))
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be non-negative")

    @classmethod
    def init(cls, features: int, momentum: float = 0.9, epsilon: float = 1e-5):
        return cls(
            np.ones((features, 1)),
            np.zeros((features, 1)),
            np.zeros((features, 1)),
            np.ones((features, 1)),
            momentum,
            epsilon,
        )

    @property
    def features(self) -> int:
        return self.gamma.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"gamma": self.gamma, "beta": self.beta}


def batchnorm_forward(params: BatchNormParams, x: np.ndarray, training: bool):
    """Normalize each feature row.

    Training mode uses batch statistics and folds them into the running
    estimates (``running = momentum * running + (1 - momentum) * batch``);
    inference mode uses the running estimates only.
    """
    x = as_matrix(x)
    if x.shape[0] != params.features:
        raise ShapeError(f"batchnorm expects {params.features} features, got {x.shape[0]}")
    if training:
        if x.shape[1] < 2:
            raise ValueError("batchnorm training needs a batch of at least 2 samples")
        mean = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        m = params.momentum
        params.running_mean = m * params.running_mean + (1.0 - m) * mean
        params.running_var = m * params.running_var + (1.0 - m) * var
    else:
        mean, var = params.running_mean, params.running_var
    inv_std = 1.0 / np.sqrt(var + params.epsilon)
    xhat = (x - mean) * inv_std
    return params.gamma * xhat + params.beta, (xhat, inv_std, training)


def batchnorm_backward(params: BatchNormParams, dout: np.ndarray, cache):
    xhat, inv_std, training = cache
    grads = {
        "gamma": np.sum(dout * xhat, axis=1, keepdims=True),
        "beta": dout.sum(axis=1, keepdims=True),
    }
    dxhat = dout * params.gamma
    if not training:
        return dxhat * inv_std, grads
    n = dout.shape[1]
    dx = (inv_std / n) * (
        n * dxhat
        - dxhat.sum(axis=1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=1, keepdims=True)
    )
    return dx, grads


# ---------------------------------------------------------------------------
# Dropout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DropoutSpec:
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {self.rate}")


def dropout_forward(
    spec: DropoutSpec,
    x: np.ndarray,
    training: bool,
    rng: np.random.Generator | None = None,
):
    """Inverted dropout. Returns ``(output, mask)``; the mask is None when inactive.

    Without an explicit ``rng`` the mask is drawn from ``spec.seed``, so a
    single call is reproducible. Training loops pass their own generator.
    """
    x = as_matrix(x)
    if not training or spec.rate == 0.0:
        return x, None
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    keep = 1.0 - spec.rate
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, mask


def dropout_backward(dout: np.ndarray, mask) -> np.ndarray:
    return dout if mask is None else dout * mask


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param: np.ndarray, **hyper) -> "AdamState":
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray):
    """One bias-corrected Adam update. Returns ``(new_param, new_state)``; inputs are untouched."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise ShapeError(
            f"adam shapes disagree: param {param.shape}, grad {grad.shape}, moments {state.m.shape}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    new_param = param - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.epsilon)
    return new_param, new_state


@dataclass
class Adam:
    """Adam over a named set of parameter arrays, updated in place."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def update(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name, p in params.items():
            st = self.states.get(name)
            if st is None:
                st = AdamState.zeros_like(
                    p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon
                )
            new_p, self.states[name] = adam_step(st, p, grads[name])
            p[...] = new_p


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale ``grads`` in place so their joint L2 norm is at most ``max_norm``. Returns the pre-clip norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# ---------------------------------------------------------------------------
# Finite-difference gradient check
# ---------------------------------------------------------------------------


def grad_check(
    fn: Callable[[dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    probe_eps: float = 1e-5,
) -> float:
    """Largest elementwise relative error between ``analytic`` and central differences.

    ``fn`` maps a dict of parameter arrays to a scalar loss. The error for one
    element is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    if probe_eps <= 0:
        raise ValueError("probe_eps must be positive")
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    worst = 0.0
    for name, arr in work.items():
        a_grad = np.asarray(analytic[name], dtype=np.float64)
        if a_grad.shape != arr.shape:
            raise ShapeError(f"gradient for {name!r} has shape {a_grad.shape}, param {arr.shape}")
        if not np.all(np.isfinite(a_grad)):
            raise NumericError(f"analytic gradient for {name!r} is not finite")
        flat = arr.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + probe_eps
            f_plus = fn(work)
            flat[idx] = orig - probe_eps
            f_minus = fn(work)
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite loss while probing {name!r}[{idx}]")
            numeric = (f_plus - f_minus) / (2.0 * probe_eps)
            a = a_grad.reshape(-1)[idx]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
