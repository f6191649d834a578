"""Single-layer autoencoder used to compress scaled telemetry features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TrainingError
from .nn import Adam, activate, activation_grad, as_matrix, glorot_uniform

AE_ACTIVATIONS = ("sigmoid", "tanh", "relu")


@dataclass
class AutoencoderParams:
    W_e: np.ndarray  # (latent, features)
    b_e: np.ndarray  # (latent, 1)
    W_d: np.ndarray  # (features, latent)
    b_d: np.ndarray  # (features, 1)
    activation: str = "sigmoid"

    def __post_init__(self):
        for name in ("W_e", "b_e", "W_d", "b_d"):
            setattr(self, name, as_matrix(getattr(self, name)))
        if self.activation not in AE_ACTIVATIONS:
            raise ValueError(f"unknown autoencoder activation {self.activation!r}")
        latent, features = self.W_e.shape
        if latent >= features:
            raise ValueError(f"latent size {latent} must be smaller than feature count {features}")
        if self.b_e.shape != (latent, 1) or self.W_d.shape != (features, latent) or self.b_d.shape != (features, 1):
            raise ShapeError(
                f"inconsistent autoencoder shapes: W_e {self.W_e.shape}, b_e {self.b_e.shape}, "
                f"W_d {self.W_d.shape}, b_d {self.b_d.shape}"
            )

    @classmethod
    def init(cls, rng: np.random.Generator, features: int, latent: int, activation: str = "sigmoid"):
        return cls(
            glorot_uniform(rng, latent, features),
            np.zeros((latent, 1)),
            glorot_uniform(rng, features, latent),
            np.zeros((features, 1)),
            activation,
        )

    @property
    def features(self) -> int:
        return self.W_e.shape[1]

    @property
    def latent(self) -> int:
        return self.W_e.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W_e": self.W_e, "b_e": self.b_e, "W_d": self.W_d, "b_d": self.b_d}


def encode(params: AutoencoderParams, x) -> np.ndarray:
    x = as_matrix(x)
    if x.shape[0] != params.features:
        raise ShapeError(f"encoder expects {params.features} feature rows, got {x.shape[0]}")
    return activate(params.activation, params.W_e @ x + params.b_e)


def decode(params: AutoencoderParams, z) -> np.ndarray:
    z = as_matrix(z)
    if z.shape[0] != params.latent:
        raise ShapeError(f"decoder expects {params.latent} latent rows, got {z.shape[0]}")
    return activate(params.activation, params.W_d @ z + params.b_d)


def reconstruction_loss(params: AutoencoderParams, x) -> float:
    """Mean over samples of the squared reconstruction norm."""
    x = as_matrix(x)
    diff = decode(params, encode(params, x)) - x
    return float(np.sum(diff * diff) / x.shape[1])


def reconstruction_grads(params: AutoencoderParams, x) -> tuple[float, dict[str, np.ndarray]]:
    x = as_matrix(x)
    n = x.shape[1]
    act = params.activation
    z_pre = params.W_e @ x + params.b_e
    z = activate(act, z_pre)
    xh_pre = params.W_d @ z + params.b_d
    xh = activate(act, xh_pre)
    diff = xh - x
    loss = float(np.sum(diff * diff) / n)
    d_pre = (2.0 / n) * diff * activation_grad(act, xh_pre, xh)
    dz = params.W_d.T @ d_pre
    dz_pre = dz * activation_grad(act, z_pre, z)
    grads = {
        "W_d": d_pre @ z.T,
        "b_d": d_pre.sum(axis=1, keepdims=True),
        "W_e": dz_pre @ x.T,
        "b_e": dz_pre.sum(axis=1, keepdims=True),
    }
    return loss, grads


def train_autoencoder(
    data,
    latent: int = 8,
    epochs: int = 200,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
    activation: str = "sigmoid",
    init: AutoencoderParams | None = None,
) -> tuple[AutoencoderParams, list[float]]:
    """Fit encoder and decoder on ``data`` (features x samples, min-max scaled).

    Returns the parameters and the full-data reconstruction loss after each epoch.
    """
    x = as_matrix(data)
    if x.size == 0:
        raise ValueError("autoencoder training data is empty")
    if x.min() < -0.001 or x.max() > 1.001:
        raise ValueError("autoencoder inputs must be min-max scaled to [0, 1]")
    rng = np.random.default_rng(seed)
    params = init or AutoencoderParams.init(rng, x.shape[0], latent, activation)
    opt = Adam(lr=lr)
    n = x.shape[1]
    history = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            _, grads = reconstruction_grads(params, x[:, order[start : start + batch_size]])
            opt.update(params.params(), grads)
        loss = reconstruction_loss(params, x)
        if not np.isfinite(loss):
            raise TrainingError(f"autoencoder loss diverged at epoch {epoch}", epoch=epoch)
        history.append(loss)
    return params, history


def anomaly_scores(params: AutoencoderParams, x) -> np.ndarray:
    """Per-sample squared reconstruction error."""
    x = as_matrix(x)
    diff = decode(params, encode(params, x)) - x
    return np.sum(diff * diff, axis=0)


def anomaly_threshold(train_scores, percentile: float = 99.5) -> float:
    return float(np.percentile(np.asarray(train_scores, dtype=np.float64), percentile))


def flag_anomalies(params: AutoencoderParams, x, threshold: float) -> np.ndarray:
    return anomaly_scores(params, x) > threshold
