"""Checkpoint files: one JSON document per trained model.

Tensors are stored as ``{"shape": [...], "values": [...]}`` with row-major
values written to 17 significant digits, which round-trips every binary64
value exactly. The writer is deterministic (fixed key order, fixed number
formatting) so identical models produce byte-identical files.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .autoencoder import AutoencoderParams
from .errors import SchemaError
from .nn import BatchNormParams, DenseParams, DropoutSpec
from .pipeline import MODEL_KINDS, ScalerParams, TrainConfig, TrainedModel
from .recurrent import BiLstmModel, LstmModel, LstmParams
from .svr import SvrHyperparams, SvrModel

FORMAT_VERSION = 1


class _Tensor:
    """Marker so the writer keeps a tensor's values on one line."""

    __slots__ = ("array",)

    def __init__(self, array):
        self.array = np.asarray(array, dtype=np.float64)


def _fmt_float(x: float, digits17: bool = True) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x!r}")
    # Scalars use the shortest exact repr for readability; both forms round-trip.
    s = "%.17g" % x if digits17 else repr(x)
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _write(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    if isinstance(obj, _Tensor):
        values = ", ".join(_fmt_float(v) for v in obj.array.ravel())
        shape = ", ".join(str(d) for d in obj.array.shape)
        return f'{{"shape": [{shape}], "values": [{values}]}}'
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_write(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * indent + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, _Tensor)) for v in obj):
            return "[" + ", ".join(_write(v) for v in obj) + "]"
        items = [pad + _write(v, indent + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + "  " * indent + "]"
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj, digits17=False)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _tensor(d) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in d["shape"])
        values = np.array(d["values"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed tensor entry: {exc}") from exc
    if values.size != math.prod(shape):
        raise SchemaError(f"tensor declares shape {shape} but holds {values.size} values")
    return values.reshape(shape)


# --- encoding ---------------------------------------------------------------


def _lstm_doc(p: LstmParams) -> dict:
    return {"W": _Tensor(p.W), "b": _Tensor(p.b)}


def _dense_doc(layer: DenseParams) -> dict:
    return {"activation": layer.activation, "weights": _Tensor(layer.weights), "bias": _Tensor(layer.bias)}


def _batchnorm_doc(bn: BatchNormParams | None):
    if bn is None:
        return None
    return {
        "momentum": bn.momentum,
        "epsilon": bn.epsilon,
        "gamma": _Tensor(bn.gamma),
        "beta": _Tensor(bn.beta),
        "running_mean": _Tensor(bn.running_mean),
        "running_var": _Tensor(bn.running_var),
    }


def _network_doc(net):
    if net is None:
        return None
    doc = {}
    if isinstance(net, BiLstmModel):
        doc["type"] = "bilstm"
        doc["forward"] = _lstm_doc(net.forward_params)
        doc["backward"] = _lstm_doc(net.backward_params)
    else:
        doc["type"] = "lstm"
        doc["lstm"] = _lstm_doc(net.lstm)
    doc["dropout"] = {"rate": net.dropout.rate, "seed": net.dropout.seed}
    doc["batchnorm"] = _batchnorm_doc(net.batchnorm)
    doc["head"] = [_dense_doc(layer) for layer in net.head]
    return doc


def _svr_doc(m: SvrModel) -> dict:
    h = m.hyper
    return {
        "C": h.C,
        "epsilon": h.epsilon,
        "gamma": m.gamma,
        "tolerance": h.tolerance,
        "max_passes": h.max_passes,
        "iterations": m.iterations,
        "b": m.b,
        "dual_coef": _Tensor(m.dual_coef),
        "support_vectors": _Tensor(m.support_vectors),
    }


def model_document(model: TrainedModel) -> dict:
    ae = model.autoencoder
    return {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "hyperparameters": model.config.to_dict(),
        "dt": model.dt,
        "capacity_ah": model.capacity_ah,
        "cells_series": model.cells_series,
        "scaler": {
            "names": list(model.scaler.names),
            "minimum": _Tensor(model.scaler.minimum),
            "maximum": _Tensor(model.scaler.maximum),
        },
        "target_scale": _Tensor(model.target_scale),
        "autoencoder": None
        if ae is None
        else {
            "activation": ae.activation,
            "W_e": _Tensor(ae.W_e),
            "b_e": _Tensor(ae.b_e),
            "W_d": _Tensor(ae.W_d),
            "b_d": _Tensor(ae.b_d),
        },
        "network": _network_doc(model.network),
        "svr": [_svr_doc(m) for m in model.svr],
    }


def dumps(model: TrainedModel) -> str:
    return _write(model_document(model)) + "\n"


def save_checkpoint(model: TrainedModel, path) -> Path:
    path = Path(path)
    path.write_text(dumps(model), encoding="utf-8")
    return path


# --- decoding ---------------------------------------------------------------


def _lstm_from(d) -> LstmParams:
    return LstmParams(_tensor(d["W"]), _tensor(d["b"]))


def _network_from(d):
    if d is None:
        return None
    head = [DenseParams(_tensor(h["weights"]), _tensor(h["bias"]), h["activation"]) for h in d["head"]]
    bn = None
    if d["batchnorm"] is not None:
        b = d["batchnorm"]
        bn = BatchNormParams(
            _tensor(b["gamma"]),
            _tensor(b["beta"]),
            _tensor(b["running_mean"]),
            _tensor(b["running_var"]),
            float(b["momentum"]),
            float(b["epsilon"]),
        )
    drop = DropoutSpec(float(d["dropout"]["rate"]), int(d["dropout"]["seed"]))
    if d["type"] == "bilstm":
        return BiLstmModel(_lstm_from(d["forward"]), _lstm_from(d["backward"]), head, bn, drop)
    if d["type"] == "lstm":
        return LstmModel(_lstm_from(d["lstm"]), head, drop, bn)
    raise SchemaError(f"unknown network type {d['type']!r}")


def _svr_from(d) -> SvrModel:
    hyper = SvrHyperparams(
        C=float(d["C"]),
        epsilon=float(d["epsilon"]),
        gamma=float(d["gamma"]),
        tolerance=float(d["tolerance"]),
        max_passes=int(d["max_passes"]),
    )
    sv = _tensor(d["support_vectors"])
    return SvrModel(sv, _tensor(d["dual_coef"]), float(d["b"]), float(d["gamma"]), hyper, int(d["iterations"]))


def model_from_document(doc: dict) -> TrainedModel:
    try:
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise SchemaError(f"unsupported checkpoint format_version {version!r}")
        kind = doc["kind"]
        if kind not in MODEL_KINDS:
            raise SchemaError(f"unknown model kind {kind!r}")
        hp = dict(doc["hyperparameters"])
        config = TrainConfig.from_dict(hp)
        scaler = ScalerParams(
            tuple(doc["scaler"]["names"]),
            _tensor(doc["scaler"]["minimum"]),
            _tensor(doc["scaler"]["maximum"]),
        )
        ae = doc["autoencoder"]
        autoencoder = None
        if ae is not None:
            autoencoder = AutoencoderParams(
                _tensor(ae["W_e"]), _tensor(ae["b_e"]), _tensor(ae["W_d"]), _tensor(ae["b_d"]), ae["activation"]
            )
        return TrainedModel(
            kind,
            config,
            scaler,
            _tensor(doc["target_scale"]),
            float(doc["dt"]),
            float(doc["capacity_ah"]),
            int(doc["cells_series"]),
            _network_from(doc["network"]),
            autoencoder,
            [_svr_from(m) for m in doc["svr"]],
        )
    except KeyError as exc:
        raise SchemaError(f"checkpoint is missing field {exc}") from exc


def loads(text: str) -> TrainedModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"checkpoint is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("checkpoint root must be an object")
    return model_from_document(doc)


def load_checkpoint(path) -> TrainedModel:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Raises ``FileNotFoundError`` for a missing path and ``SchemaError`` for
    malformed content.
    """
    return loads(Path(path).read_text(encoding="utf-8"))
