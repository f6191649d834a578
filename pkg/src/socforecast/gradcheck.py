"""Finite-difference verification of every hand-written backward pass.

Each check builds a small random instance, computes analytic gradients and
compares them with central differences through :func:`socforecast.nn.grad_check`.
Sizes are kept small so the whole suite finishes in seconds.
"""

from __future__ import annotations

import copy

import numpy as np

from .autoencoder import AutoencoderParams, reconstruction_grads, reconstruction_loss
from .nn import (
    BatchNormParams,
    DenseParams,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_forward,
    grad_check,
    mse_loss,
)
from .recurrent import BiLstmModel, LstmModel, LstmParams, LstmState, backprop_sequence, run_sequence

BPTT_LENGTHS = (1, 2, 5)
BPTT_HIDDEN = (1, 2, 4)


def check_dense(seed: int = 0, probe_eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for act in ("linear", "sigmoid", "tanh", "relu"):
        p = DenseParams(rng.normal(size=(3, 4)), rng.normal(size=(3, 1)), act)
        x = rng.normal(size=(4, 5))
        y = rng.normal(size=(3, 5))

        def loss(ps, act=act, x=x, y=y):
            out, _ = dense_forward(DenseParams(ps["weights"], ps["bias"], act), ps["x"])
            return mse_loss(out, y)[0]

        out, cache = dense_forward(p, x)
        dx, grads = dense_backward(p, mse_loss(out, y)[1], cache)
        grads["x"] = dx
        worst = max(worst, grad_check(loss, {**p.params(), "x": x}, grads, probe_eps))
    return worst


def check_batchnorm(seed: int = 0, probe_eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for training in (True, False):
        gamma = rng.normal(size=(3, 1))
        beta = rng.normal(size=(3, 1))
        mean = rng.normal(size=(3, 1))
        var = rng.uniform(0.5, 2.0, size=(3, 1))
        x = rng.normal(size=(3, 6))
        y = rng.normal(size=(3, 6))

        def fresh(ps):
            return BatchNormParams(ps["gamma"], ps["beta"], mean.copy(), var.copy())

        def loss(ps, training=training, y=y):
            out, _ = batchnorm_forward(fresh(ps), ps["x"], training)
            return mse_loss(out, y)[0]

        params = {"gamma": gamma, "beta": beta, "x": x}
        bn = fresh(params)
        out, cache = batchnorm_forward(bn, x, training)
        dx, grads = batchnorm_backward(bn, mse_loss(out, y)[1], cache)
        grads["x"] = dx
        worst = max(worst, grad_check(loss, params, grads, probe_eps))
    return worst


def check_mse(seed: int = 0, probe_eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    pred = rng.normal(size=(2, 7))
    target = rng.normal(size=(2, 7))
    _, d = mse_loss(pred, target)
    return grad_check(lambda ps: mse_loss(ps["pred"], target)[0], {"pred": pred}, {"pred": d}, probe_eps)


def check_autoencoder(seed: int = 0, probe_eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for act in ("sigmoid", "tanh", "relu"):
        ae = AutoencoderParams.init(rng, 6, 3, act)
        # Nonzero biases keep ReLU pre-activations off the kink at exactly 0.
        ae.b_e[:] = rng.normal(scale=0.1, size=ae.b_e.shape)
        ae.b_d[:] = rng.normal(scale=0.1, size=ae.b_d.shape)
        x = rng.uniform(size=(6, 5))

        def loss(ps, act=act, x=x):
            return reconstruction_loss(AutoencoderParams(ps["W_e"], ps["b_e"], ps["W_d"], ps["b_d"], act), x)

        _, grads = reconstruction_grads(ae, x)
        worst = max(worst, grad_check(loss, ae.params(), grads, probe_eps))
    return worst


def _sequence_check(rng, T: int, hidden: int, n_in: int, batch: int, probe_eps: float, with_state: bool) -> float:
    lp = LstmParams.init(rng, n_in, hidden)
    lp.b[:] = rng.normal(scale=0.5, size=lp.b.shape)
    X = rng.normal(size=(T, n_in, batch))
    # A weighted sum over every hidden output (and the final cell state) exercises
    # both the direct and the recurrent gradient paths.
    wH = rng.normal(size=(T, hidden, batch))
    wC = rng.normal(size=(hidden, batch)) if with_state else np.zeros((hidden, batch))
    h0 = rng.normal(size=(hidden, batch)) if with_state else np.zeros((hidden, batch))
    c0 = rng.normal(size=(hidden, batch)) if with_state else np.zeros((hidden, batch))

    def loss(ps):
        c = run_sequence(LstmParams(ps["W"], ps["b"]), ps["X"], LstmState(h0, c0))
        return float(np.sum(wH * c.H[1:]) + np.sum(wC * c.Cs[-1]))

    cache = run_sequence(lp, X, LstmState(h0, c0))
    dW, db, dX = backprop_sequence(lp, cache, wH, dC_last=wC)
    return grad_check(loss, {"W": lp.W, "b": lp.b, "X": X}, {"W": dW, "b": db, "X": dX}, probe_eps)


def check_lstm_cell(seed: int = 0, probe_eps: float = 1e-5) -> float:
    """One step from a nonzero previous state, gradients on h and C."""
    rng = np.random.default_rng(seed)
    return max(_sequence_check(rng, 1, h, 3, 2, probe_eps, with_state=True) for h in (1, 2, 4))


def check_bptt(seed: int = 0, probe_eps: float = 1e-5) -> dict[tuple[int, int], float]:
    rng = np.random.default_rng(seed)
    return {
        (T, h): _sequence_check(rng, T, h, 3, 2, probe_eps, with_state=False)
        for T in BPTT_LENGTHS
        for h in BPTT_HIDDEN
    }


def _model_check(model, X, y, dropout_seed: int, probe_eps: float) -> float:
    """Gradient check of a sequence model in training mode with a fixed dropout mask.

    Head biases are moved off zero first: with freshly initialized (zero)
    biases a fully dropped column puts every ReLU exactly on its kink, where
    central differences and the analytic one-sided derivative disagree.
    """
    rng = np.random.default_rng(dropout_seed)
    for layer in model.head:
        layer.bias[:] = rng.uniform(0.05, 0.2, size=layer.bias.shape) * rng.choice([-1.0, 1.0], size=layer.bias.shape)

    def run(m):
        return m.forward(X, training=True, rng=np.random.default_rng(dropout_seed))

    def loss(ps):
        m = copy.deepcopy(model)
        for k, v in m.params().items():
            v[...] = ps[k]
        return mse_loss(run(m)[0], y)[0]

    m = copy.deepcopy(model)
    out, cache = run(m)
    grads = m.backward(mse_loss(out, y)[1], cache)
    return grad_check(loss, model.params(), grads, probe_eps)


def check_bilstm(seed: int = 0, probe_eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    model = BiLstmModel.init(rng, 3, 3, head_widths=(4, 3), n_out=2, dropout=0.3)
    X = rng.normal(size=(4, 3, 5))
    y = rng.normal(size=(2, 5))
    return _model_check(model, X, y, seed + 100, probe_eps)


def check_plain_lstm(seed: int = 0, probe_eps: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    model = LstmModel.init(rng, 3, 3, head_widths=(4,), n_out=2, dropout=0.2)
    X = rng.normal(size=(4, 3, 5))
    y = rng.normal(size=(2, 5))
    return _model_check(model, X, y, seed + 100, probe_eps)


def run_suite(seed: int = 0, probe_eps: float = 1e-5) -> dict[str, float]:
    """Maximum relative error per component, in a fixed order."""
    bptt = check_bptt(seed, probe_eps)
    return {
        "dense": check_dense(seed, probe_eps),
        "batchnorm": check_batchnorm(seed, probe_eps),
        "mse": check_mse(seed, probe_eps),
        "autoencoder": check_autoencoder(seed, probe_eps),
        "lstm_cell": check_lstm_cell(seed, probe_eps),
        **{f"bptt_T{T}_h{h}": err for (T, h), err in bptt.items()},
        "bilstm_head": check_bilstm(seed, probe_eps),
        "lstm_head": check_plain_lstm(seed, probe_eps),
    }
