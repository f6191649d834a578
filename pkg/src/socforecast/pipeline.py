"""End-to-end forecasting: scaling, windowing, training, prediction and rollout.

Models predict the charge moved in the step right after an input window, as a
``(dAh_charged, dAh_discharged)`` pair. Inputs are min-max scaled with
statistics from the training split only; targets are divided by a per-column
scale (largest training magnitude) inside the model and restored on output.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autoencoder import AutoencoderParams, encode, train_autoencoder
from .errors import ShapeError, TrainingError
from .metrics import table_report
from .nn import Adam, clip_by_global_norm, mse_loss
from .recurrent import BiLstmModel, LstmModel
from .svr import SvrHyperparams, SvrModel, svr_predict_many, svr_train
from .telemetry import TelemetrySeries, cell_columns

log = logging.getLogger(__name__)

PACK_FEATURES = ("soc", "pack_voltage", "current", "ah_charged", "ah_discharged")
MODEL_KINDS = ("ae_bilstm", "plain_lstm", "multi_output", "svr")
EVAL_CHUNK = 512


def default_features(cells_series: int = 16) -> tuple[str, ...]:
    return (*PACK_FEATURES, *cell_columns(cells_series))


# ---------------------------------------------------------------------------
# Scaling and windowing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalerParams:
    names: tuple[str, ...]
    minimum: np.ndarray
    maximum: np.ndarray

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        span = self.maximum - self.minimum
        safe = np.where(span > 0, span, 1.0)
        # Constant features map to 0.
        return np.where(span > 0, (x - self.minimum) / safe, 0.0)

    def inverse_transform(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        return s * (self.maximum - self.minimum) + self.minimum

    def index(self, name: str) -> int:
        return self.names.index(name)


def fit_scaler(train: TelemetrySeries, features: Sequence[str] | None = None) -> ScalerParams:
    """Per-feature min/max over the training split."""
    if len(train) < 2:
        raise ValueError("scaler needs at least 2 training records")
    names = tuple(features or default_features(train.spec.cells_series))
    x = train.feature_matrix(names)
    return ScalerParams(names, x.min(axis=0), x.max(axis=0))


@dataclass(frozen=True)
class WindowSet:
    """Sliding windows over a scaled step matrix.

    Window ``k`` covers steps ``k .. k + window_len - 1`` and its target is
    taken at step ``k + window_len``.
    """

    window_len: int
    steps: np.ndarray  # (n_steps, features), scaled
    targets: np.ndarray  # (n_windows, n_targets)

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def n_features(self) -> int:
        return self.steps.shape[1]

    @property
    def inputs(self) -> np.ndarray:
        """Read-only view shaped ``(n_windows, window_len, features)``."""
        view = sliding_window_view(self.steps, self.window_len, axis=0)[: len(self)]
        return view.transpose(0, 2, 1)


def throughput_deltas(series: TelemetrySeries) -> np.ndarray:
    """Per-step ``(dAh_charged, dAh_discharged)`` for steps 1..n-1, shape ``(n - 1, 2)``."""
    return np.column_stack([np.diff(series.ah_charged), np.diff(series.ah_discharged)])


def build_windows(
    series: TelemetrySeries,
    scaler: ScalerParams,
    window_len: int = 32,
    target: str = "throughput",
) -> WindowSet:
    """Scaled input windows with next-step targets.

    ``target="throughput"`` gives Ah deltas in ampere-hours; ``target="cells"``
    gives next-step cell voltages in volts.
    """
    if window_len < 1:
        raise ValueError("window_len must be positive")
    n = len(series)
    if n <= window_len:
        raise ValueError(f"series of length {n} is too short for windows of {window_len}")
    steps = scaler.transform(series.feature_matrix(scaler.names))
    if target == "throughput":
        y = throughput_deltas(series)[window_len - 1 :]
    elif target == "cells":
        y = series.cell_voltages[window_len:]
    else:
        raise ValueError(f"unknown target {target!r}")
    return WindowSet(window_len, steps, np.ascontiguousarray(y))


# ---------------------------------------------------------------------------
# Configuration and the trained model bundle
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    kind: str = "ae_bilstm"
    lr: float = 1e-3
    batch: int = 16
    epochs: int = 100
    patience: int = 10
    window_len: int = 32
    hidden: int = 64
    head: tuple[int, ...] | None = None
    dropout: float | None = None
    latent: int = 8
    ae_epochs: int = 60
    ae_lr: float = 3e-3
    ae_batch: int = 64
    clip_norm: float = 5.0
    efficiency: float = 1.0
    svr_C: float = 10.0
    svr_epsilon: float = 0.01
    svr_gamma: float | None = None
    seed: int = 0
    max_train_windows: int | None = None
    split_ratio: float = 0.8

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; choose from {MODEL_KINDS}")
        if self.head is not None:
            self.head = tuple(int(w) for w in self.head)

    @property
    def head_widths(self) -> tuple[int, ...]:
        if self.head is not None:
            return self.head
        return {"ae_bilstm": (64, 32), "plain_lstm": (32, 16), "multi_output": (32,)}.get(self.kind, ())

    @property
    def dropout_rate(self) -> float:
        if self.dropout is not None:
            return self.dropout
        return 0.3 if self.kind == "ae_bilstm" else 0.2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["head"] = list(self.head_widths)
        d["dropout"] = self.dropout_rate
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainedModel:
    kind: str
    config: TrainConfig
    scaler: ScalerParams
    target_scale: np.ndarray
    dt: float
    capacity_ah: float
    cells_series: int
    network: BiLstmModel | LstmModel | None = None
    autoencoder: AutoencoderParams | None = None
    svr: list[SvrModel] = field(default_factory=list)

    @property
    def window_len(self) -> int:
        return self.config.window_len

    @property
    def feature_names(self) -> tuple[str, ...]:
        return self.scaler.names

    def network_inputs(self, blocks: np.ndarray) -> np.ndarray:
        """Map scaled window blocks ``(N, L, F)`` to network sequences ``(L, F', N)``."""
        blocks = np.asarray(blocks, dtype=np.float64)
        if blocks.ndim != 3 or blocks.shape[2] != len(self.feature_names):
            raise ShapeError(
                f"windows have shape {blocks.shape}; model expects (*, *, {len(self.feature_names)})"
            )
        if self.autoencoder is not None:
            N, L, F = blocks.shape
            z = encode(self.autoencoder, blocks.reshape(N * L, F).T)
            return z.reshape(-1, N, L).transpose(2, 0, 1)
        return blocks.transpose(1, 2, 0)


def _windows_in_chunks(n: int, size: int = EVAL_CHUNK):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def predict_blocks(model: TrainedModel, blocks: np.ndarray) -> np.ndarray:
    """Predictions in target units for scaled window blocks ``(N, L, F)``."""
    blocks = np.asarray(blocks, dtype=np.float64)
    if blocks.ndim != 3 or blocks.shape[0] == 0:
        raise ValueError("need a non-empty (N, window_len, features) block array")
    if model.kind == "svr":
        flat = blocks.reshape(blocks.shape[0], -1)
        cols = [svr_predict_many(m, flat) for m in model.svr]
        return np.column_stack(cols) * model.target_scale
    out = np.empty((blocks.shape[0], model.network.n_out))
    for sl in _windows_in_chunks(blocks.shape[0]):
        y, _ = model.network.forward(model.network_inputs(blocks[sl]), training=False)
        out[sl] = y.T
    return out * model.target_scale


def predict_batch(model: TrainedModel, windows: WindowSet) -> np.ndarray:
    """One prediction row per window, in target units (Ah, or volts for cells)."""
    if len(windows) == 0:
        raise ValueError("window set is empty")
    if windows.n_features != len(model.feature_names):
        raise ShapeError(
            f"windows carry {windows.n_features} features; checkpoint expects {len(model.feature_names)}"
        )
    if windows.window_len != model.window_len:
        raise ShapeError(f"window length {windows.window_len} != model's {model.window_len}")
    return predict_blocks(model, windows.inputs)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainingLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    ae_loss: list[float] = field(default_factory=list)
    val_metrics: dict = field(default_factory=dict)


def _target_scale(y: np.ndarray) -> np.ndarray:
    s = np.max(np.abs(y), axis=0)
    return np.where(s > 0, s, 1.0)


def _val_loss(net, X_val_fn, y_val_scaled) -> float:
    n = len(y_val_scaled)
    total = 0.0
    for sl in _windows_in_chunks(n):
        out, _ = net.forward(X_val_fn(sl), training=False)
        diff = out.T - y_val_scaled[sl]
        total += float(np.sum(diff * diff))
    return total / y_val_scaled.size


def _build_network(cfg: TrainConfig, n_in: int, n_out: int, rng: np.random.Generator):
    if cfg.kind == "ae_bilstm":
        return BiLstmModel.init(rng, n_in, cfg.hidden, cfg.head_widths, n_out, cfg.dropout_rate, cfg.seed)
    return LstmModel.init(rng, n_in, cfg.hidden, cfg.head_widths, n_out, cfg.dropout_rate, cfg.seed)


def train_final_model(
    train_windows: WindowSet,
    val_windows: WindowSet,
    config: TrainConfig | None = None,
    *,
    scaler: ScalerParams,
    dt: float,
    capacity_ah: float,
    cells_series: int = 16,
    autoencoder: AutoencoderParams | None = None,
) -> tuple[TrainedModel, TrainingLog]:
    """Train one model kind and return the best-validation parameter set.

    For ``ae_bilstm`` the autoencoder is pre-trained on the training steps
    (unless supplied) and then frozen.
    """
    cfg = config or TrainConfig()
    if len(train_windows) == 0 or len(val_windows) == 0:
        raise ValueError("training and validation window sets must be non-empty")
    rng = np.random.default_rng(cfg.seed)
    log_ = TrainingLog()

    y_train = train_windows.targets
    idx_train = np.arange(len(train_windows))
    if cfg.max_train_windows is not None and len(idx_train) > cfg.max_train_windows:
        idx_train = idx_train[-cfg.max_train_windows :]
    scale = _target_scale(y_train[idx_train])

    model = TrainedModel(
        cfg.kind, cfg, scaler, scale, float(dt), float(capacity_ah), int(cells_series)
    )

    if cfg.kind == "svr":
        _train_svr(model, train_windows, idx_train)
        return model, log_

    if cfg.kind == "ae_bilstm":
        if autoencoder is None:
            steps = train_windows.steps
            autoencoder, log_.ae_loss = train_autoencoder(
                steps.T,
                latent=cfg.latent,
                epochs=cfg.ae_epochs,
                lr=cfg.ae_lr,
                batch_size=cfg.ae_batch,
                seed=cfg.seed,
            )
        model.autoencoder = autoencoder

    # Encode every step once; windows of the encoded sequence equal encoded windows.
    def step_codes(ws: WindowSet) -> np.ndarray:
        if model.autoencoder is None:
            return ws.steps
        return encode(model.autoencoder, ws.steps.T).T

    def as_seq(codes: np.ndarray, L: int):
        view = sliding_window_view(codes, L, axis=0)  # (n_windows+, F', L)

        def take(sel):
            return np.ascontiguousarray(view[sel].transpose(2, 1, 0))

        return take

    L = cfg.window_len
    train_take = as_seq(step_codes(train_windows), L)
    val_take = as_seq(step_codes(val_windows), L)

    n_in = model.autoencoder.latent if model.autoencoder is not None else train_windows.n_features
    net = _build_network(cfg, n_in, y_train.shape[1], rng)
    model.network = net
    opt = Adam(lr=cfg.lr)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    drop_rng = np.random.default_rng(cfg.seed + 2)
    y_scaled = y_train / scale
    y_val_scaled = val_windows.targets / scale
    rec_keys = net.recurrent_keys()

    best = (math.inf, None)
    stale = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(idx_train)
        running, count = 0.0, 0
        for start in range(0, len(order), cfg.batch):
            sel = np.sort(order[start : start + cfg.batch])
            if len(sel) < 2:
                continue
            out, cache = net.forward(train_take(sel), training=True, rng=drop_rng)
            loss, dout = mse_loss(out, y_scaled[sel].T)
            if not math.isfinite(loss):
                raise TrainingError(f"training loss became non-finite at epoch {epoch}", epoch=epoch)
            grads = net.backward(dout, cache)
            clip_by_global_norm({k: grads[k] for k in rec_keys}, cfg.clip_norm)
            opt.update(net.params(), grads)
            running += loss * len(sel)
            count += len(sel)
        val = _val_loss(net, val_take, y_val_scaled)
        if not math.isfinite(val):
            raise TrainingError(f"validation loss became non-finite at epoch {epoch}", epoch=epoch)
        log_.train_loss.append(running / max(count, 1))
        log_.val_loss.append(val)
        log.info("epoch %d train %.3e val %.3e", epoch, log_.train_loss[-1], val)
        if val < best[0]:
            best = (val, copy.deepcopy(net))
            log_.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.network = best[1]
    return model, log_


def _train_svr(model: TrainedModel, windows: WindowSet, idx: np.ndarray) -> None:
    cfg = model.config
    flat = windows.inputs[idx].reshape(len(idx), -1)
    hyper = SvrHyperparams(C=cfg.svr_C, epsilon=cfg.svr_epsilon, gamma=cfg.svr_gamma)
    y = windows.targets[idx] / model.target_scale
    model.svr = [svr_train(flat, y[:, k], hyper) for k in range(y.shape[1])]


# ---------------------------------------------------------------------------
# Split-level convenience
# ---------------------------------------------------------------------------


@dataclass
class PreparedData:
    scaler: ScalerParams
    train: WindowSet
    val: WindowSet
    train_series: TelemetrySeries
    val_series: TelemetrySeries


def prepare(series: TelemetrySeries, ratio: float = 0.8, window_len: int = 32, target: str = "throughput",
            features: Sequence[str] | None = None) -> PreparedData:
    """Chronological split, training-only scaler, and windows on each side of the boundary."""
    from .telemetry import chronological_split

    if target == "cells" and features is None:
        features = cell_columns(series.spec.cells_series)
    train_s, val_s = chronological_split(series, ratio)
    scaler = fit_scaler(train_s, features)
    return PreparedData(
        scaler,
        build_windows(train_s, scaler, window_len, target),
        build_windows(val_s, scaler, window_len, target),
        train_s,
        val_s,
    )


def fit(series: TelemetrySeries, config: TrainConfig | None = None, ratio: float | None = None):
    """Split ``series``, train ``config.kind`` and report validation metrics.

    ``ratio`` overrides ``config.split_ratio``. Returns ``(model, log, data)``;
    ``log.val_metrics`` holds the results-table metrics for throughput models.
    """
    cfg = config or TrainConfig()
    if ratio is not None:
        cfg = TrainConfig.from_dict({**asdict(cfg), "split_ratio": ratio})
    ratio = cfg.split_ratio
    target = "cells" if cfg.kind == "multi_output" else "throughput"
    data = prepare(series, ratio, cfg.window_len, target)
    model, tlog = train_final_model(
        data.train,
        data.val,
        cfg,
        scaler=data.scaler,
        dt=series.dt,
        capacity_ah=series.spec.capacity_ah,
        cells_series=series.spec.cells_series,
    )
    if target == "throughput":
        tlog.val_metrics = table_report(predict_batch(model, data.val), data.val.targets)
    return model, tlog, data


# ---------------------------------------------------------------------------
# Autoregressive rollout
# ---------------------------------------------------------------------------


def forecast_autoregressive(model: TrainedModel, seed_window, horizon: int) -> np.ndarray:
    """Roll the model forward ``horizon`` steps from raw (unscaled) feature windows.

    ``seed_window`` is ``(window_len, features)`` or a stack ``(N, window_len,
    features)`` of independent origins, in physical units and in the model's
    feature order. Each predicted pair is written back as a new step: SoC and
    the Ah counters advance by Coulomb counting, current becomes the implied
    net current, and every other feature repeats its last value.
    Returns ``(horizon, 2)`` or ``(N, horizon, 2)``.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    if model.kind == "multi_output":
        raise ValueError("autoregressive throughput forecasts need a throughput model")
    raw = np.array(seed_window, dtype=np.float64)
    single = raw.ndim == 2
    if single:
        raw = raw[None]
    N, L, F = raw.shape
    if L != model.window_len or F != len(model.feature_names):
        raise ShapeError(f"seed windows {raw.shape[1:]} do not match ({model.window_len}, {len(model.feature_names)})")
    names = model.feature_names
    pos = {n: names.index(n) for n in PACK_FEATURES if n in names}
    eta = model.config.efficiency
    out = np.empty((N, horizon, 2))
    for h in range(horizon):
        pred = predict_blocks(model, model.scaler.transform(raw))
        out[:, h] = pred
        dc = np.maximum(pred[:, 0], 0.0)
        dd = np.maximum(pred[:, 1], 0.0)
        new = raw[:, -1].copy()
        if "soc" in pos:
            s = new[:, pos["soc"]] + 100.0 * (eta * dc - dd) / model.capacity_ah
            new[:, pos["soc"]] = np.clip(s, 0.0, 100.0)
        if "ah_charged" in pos:
            new[:, pos["ah_charged"]] += dc
        if "ah_discharged" in pos:
            new[:, pos["ah_discharged"]] += dd
        if "current" in pos:
            new[:, pos["current"]] = (dc - dd) * 3600.0 / model.dt
        raw = np.concatenate([raw[:, 1:], new[:, None, :]], axis=1)
    return out[0] if single else out


def raw_window(series: TelemetrySeries, names: Sequence[str], end: int, window_len: int) -> np.ndarray:
    """Unscaled features for steps ``end - window_len .. end - 1``."""
    if end < window_len or end > len(series):
        raise ValueError("window does not fit inside the series")
    return series.feature_matrix(names)[end - window_len : end]
