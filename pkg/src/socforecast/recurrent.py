"""LSTM cells, backpropagation through time, and the sequence regressors built on them.

Sequences are 3-D arrays shaped ``(T, features, batch)``. Gate weights act on
the stacked vector ``[h_{t-1}; x_t]`` (hidden state first), and the four gates
are kept in one ``(4 * hidden, hidden + input)`` matrix in the order
forget, input, output, candidate so the three sigmoid gates are contiguous.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError
from .nn import (
    BatchNormParams,
    DenseParams,
    DropoutSpec,
    as_matrix,
    batchnorm_backward,
    batchnorm_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    glorot_uniform,
    sigmoid,
)

GATES = ("f", "i", "o", "C")


@dataclass
class LstmParams:
    W: np.ndarray  # (4h, h + n_in), rows grouped [f, i, o, C]
    b: np.ndarray  # (4h, 1)

    def __post_init__(self):
        self.W = as_matrix(self.W)
        self.b = as_matrix(self.b)
        if self.W.shape[0] % 4:
            raise ShapeError(f"stacked gate weights need 4*hidden rows, got {self.W.shape}")
        h = self.W.shape[0] // 4
        if self.W.shape[1] <= h:
            raise ShapeError(f"gate weights {self.W.shape} leave no input columns")
        if self.b.shape != (4 * h, 1):
            raise ShapeError(f"gate bias shape {self.b.shape}, expected {(4 * h, 1)}")

    @classmethod
    def from_gates(cls, W_f, W_i, W_C, W_o, b_f, b_i, b_C, b_o) -> "LstmParams":
        Ws = [as_matrix(w) for w in (W_f, W_i, W_C, W_o)]
        bs = [as_matrix(v) for v in (b_f, b_i, b_C, b_o)]
        if len({w.shape for w in Ws}) != 1 or len({v.shape for v in bs}) != 1:
            raise ShapeError("all gate weights (and all gate biases) must share a shape")
        return cls(np.vstack([Ws[0], Ws[1], Ws[3], Ws[2]]), np.vstack([bs[0], bs[1], bs[3], bs[2]]))

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int, forget_bias: float = 1.0):
        n = hidden_size + input_size
        W = np.vstack([glorot_uniform(rng, hidden_size, n) for _ in GATES])
        b = np.zeros((4 * hidden_size, 1))
        b[:hidden_size] = forget_bias
        return cls(W, b)

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmParams":
        return cls(np.zeros((4 * hidden_size, hidden_size + input_size)), np.zeros((4 * hidden_size, 1)))

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden_size

    def _rows(self, k: int) -> slice:
        h = self.hidden_size
        return slice(k * h, (k + 1) * h)

    W_f = property(lambda self: self.W[self._rows(0)])
    W_i = property(lambda self: self.W[self._rows(1)])
    W_o = property(lambda self: self.W[self._rows(2)])
    W_C = property(lambda self: self.W[self._rows(3)])
    b_f = property(lambda self: self.b[self._rows(0)])
    b_i = property(lambda self: self.b[self._rows(1)])
    b_o = property(lambda self: self.b[self._rows(2)])
    b_C = property(lambda self: self.b[self._rows(3)])

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def copy(self) -> "LstmParams":
        return LstmParams(self.W.copy(), self.b.copy())


def split_gate_grads(dW: np.ndarray, db: np.ndarray) -> dict[str, np.ndarray]:
    """Expand stacked gradients into the eight per-gate tensors."""
    h = dW.shape[0] // 4
    out = {}
    for k, g in enumerate(GATES):
        rows = slice(k * h, (k + 1) * h)
        out[f"W_{g}"] = dW[rows]
        out[f"b_{g}"] = db[rows]
    return out


@dataclass
class LstmState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, hidden_size: int, batch: int = 1) -> "LstmState":
        return cls(np.zeros((hidden_size, batch)), np.zeros((hidden_size, batch)))


@dataclass
class GateCache:
    """Everything one cell step needs for its backward pass."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    f: np.ndarray
    i: np.ndarray
    g: np.ndarray  # candidate C~
    o: np.ndarray
    tanh_c: np.ndarray


def lstm_cell_forward(params: LstmParams, x_t: np.ndarray, prev: LstmState):
    x_t = as_matrix(x_t)
    h = params.hidden_size
    if x_t.shape[0] != params.input_size:
        raise ShapeError(f"cell input has {x_t.shape[0]} rows, expected {params.input_size}")
    if prev.h.shape[0] != h or prev.c.shape[0] != h:
        raise ShapeError(f"previous state shapes {prev.h.shape}/{prev.c.shape}, hidden {h}")
    z = params.W @ np.vstack([prev.h, x_t]) + params.b
    f = sigmoid(z[:h])
    i = sigmoid(z[h : 2 * h])
    o = sigmoid(z[2 * h : 3 * h])
    g = np.tanh(z[3 * h :])
    c = f * prev.c + i * g
    tanh_c = np.tanh(c)
    return LstmState(o * tanh_c, c), GateCache(x_t, prev.h, prev.c, f, i, g, o, tanh_c)


@dataclass
class SequenceCache:
    """Stacked per-step activations for one sequence pass."""

    X: np.ndarray  # (T, n_in, B)
    H: np.ndarray  # (T + 1, h, B); H[0] is the initial state
    Cs: np.ndarray  # (T + 1, h, B)
    gates: np.ndarray  # (T, 4h, B) post-activation [f, i, o, g]
    tanh_c: np.ndarray  # (T, h, B)

    def states(self) -> list[LstmState]:
        return [LstmState(self.H[t], self.Cs[t]) for t in range(1, self.H.shape[0])]


def _as_sequence(inputs) -> np.ndarray:
    if isinstance(inputs, np.ndarray) and inputs.ndim == 3:
        X = inputs.astype(np.float64, copy=False)
    else:
        steps = [as_matrix(x) for x in inputs]
        if not steps:
            raise ValueError("sequence must contain at least one step")
        if len({s.shape for s in steps}) != 1:
            raise ShapeError("all sequence steps must share a shape")
        X = np.stack(steps)
    if X.shape[0] == 0:
        raise ValueError("sequence must contain at least one step")
    return X


def _fold(A: np.ndarray) -> np.ndarray:
    """``(T, k, B)`` -> ``(k, T * B)``."""
    T, k, B = A.shape
    return A.transpose(1, 0, 2).reshape(k, T * B)


def _unfold(M: np.ndarray, T: int, B: int) -> np.ndarray:
    """``(k, T * B)`` -> ``(T, k, B)``."""
    return M.reshape(M.shape[0], T, B).transpose(1, 0, 2)


def run_sequence(params: LstmParams, X: np.ndarray, init: LstmState | None = None) -> SequenceCache:
    """Left-to-right pass over ``X`` of shape ``(T, n_in, B)``."""
    # A fixed memory layout keeps BLAS rounding independent of how X was sliced
    # (a reversed view and its copy must give bit-identical states).
    X = np.ascontiguousarray(X, dtype=np.float64)
    T, n_in, B = X.shape
    if n_in != params.input_size:
        raise ShapeError(f"sequence input width {n_in}, expected {params.input_size}")
    h = params.hidden_size
    Wh, Wx = params.W[:, :h], params.W[:, h:]
    # Input projections for all steps in one product.
    Zx = np.ascontiguousarray(_unfold(Wx @ _fold(X), T, B)) + params.b
    H = np.empty((T + 1, h, B))
    Cs = np.empty((T + 1, h, B))
    gates = np.empty((T, 4 * h, B))
    tanh_c = np.empty((T, h, B))
    if init is None:
        H[0] = 0.0
        Cs[0] = 0.0
    else:
        H[0], Cs[0] = init.h, init.c
    # sigmoid(z) = 0.5 + 0.5 tanh(z / 2): one tanh over all four gates.
    pre = np.full((4 * h, 1), 0.5)
    pre[3 * h :] = 1.0
    for t in range(T):
        a = gates[t]
        np.tanh((Zx[t] + Wh @ H[t]) * pre, out=a)
        a[: 3 * h] *= 0.5
        a[: 3 * h] += 0.5
        Cs[t + 1] = a[:h] * Cs[t] + a[h : 2 * h] * a[3 * h :]
        np.tanh(Cs[t + 1], out=tanh_c[t])
        H[t + 1] = a[2 * h : 3 * h] * tanh_c[t]
    return SequenceCache(X, H, Cs, gates, tanh_c)


def backprop_sequence(params: LstmParams, cache: SequenceCache, dH: np.ndarray, dC_last=None):
    """BPTT given upstream gradients ``dH`` on every hidden output ``(T, h, B)``.

    Returns ``(dW, db, dX)`` with gradients summed over all steps.
    """
    if cache is None:
        raise StateError("no forward cache: run the sequence forward before backpropagating")
    T, h, B = dH.shape
    Wh, Wx = params.W[:, :h], params.W[:, h:]
    WhT = np.ascontiguousarray(Wh.T)
    G = cache.gates
    f, i, o, g = G[:, :h], G[:, h : 2 * h], G[:, 2 * h : 3 * h], G[:, 3 * h :]
    tc = cache.tanh_c
    # Local derivative factors do not depend on the recursion; form them up front.
    dc_coef = np.empty((T, 4, h, B))
    dc_coef[:, 0] = cache.Cs[:-1] * f * (1.0 - f)
    dc_coef[:, 1] = g * i * (1.0 - i)
    dc_coef[:, 3] = i * (1.0 - g * g)
    o_coef = tc * o * (1.0 - o)
    dh_to_dc = o * (1.0 - tc * tc)
    dZ = np.empty((T, 4, h, B))
    dh_next = np.zeros((h, B))
    dc_next = np.zeros((h, B)) if dC_last is None else np.array(dC_last, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        dh = dH[t] + dh_next
        dc = dc_next + dh * dh_to_dc[t]
        dz = dZ[t]
        np.multiply(dc_coef[t], dc, out=dz)
        np.multiply(o_coef[t], dh, out=dz[2])
        dh_next = WhT @ dz.reshape(4 * h, B)
        dc_next = dc * f[t]
    dZ = dZ.reshape(T, 4 * h, B)
    dZf = _fold(dZ)
    dW = np.empty_like(params.W)
    dW[:, :h] = dZf @ _fold(cache.H[:-1]).T
    dW[:, h:] = dZf @ _fold(cache.X).T
    db = dZf.sum(axis=1, keepdims=True)
    dX = _unfold(Wx.T @ dZf, T, B)
    return dW, db, dX


def lstm_sequence_forward(params: LstmParams, inputs, init: LstmState | None = None):
    """Chain cells over ``inputs``; returns ``(states, cache)`` with one state per step."""
    cache = run_sequence(params, _as_sequence(inputs), init)
    return cache.states(), cache


def lstm_bptt(params: LstmParams, cache: SequenceCache | None, dH) -> dict[str, np.ndarray]:
    """Gradients of the eight gate tensors (``W_f`` ... ``b_o``) accumulated over all steps."""
    if cache is None:
        raise StateError("no forward cache: run lstm_sequence_forward first")
    dW, db, _ = backprop_sequence(params, cache, _as_sequence(dH))
    return split_gate_grads(dW, db)


# ---------------------------------------------------------------------------
# Dense head shared by the sequence regressors
# ---------------------------------------------------------------------------


def _head_forward(model, feat, training, rng):
    caches = {}
    if model.batchnorm is not None:
        feat, caches["bn"] = batchnorm_forward(model.batchnorm, feat, training)
    feat, caches["drop"] = dropout_forward(model.dropout, feat, training, rng)
    layer_caches = []
    for layer in model.head:
        feat, c = dense_forward(layer, feat)
        layer_caches.append(c)
    caches["head"] = layer_caches
    return feat, caches


def _head_backward(model, dout, caches, grads):
    d = dout
    for k in range(len(model.head) - 1, -1, -1):
        d, g = dense_backward(model.head[k], d, caches["head"][k])
        grads[f"head{k}.weights"] = g["weights"]
        grads[f"head{k}.bias"] = g["bias"]
    d = dropout_backward(d, caches["drop"])
    if model.batchnorm is not None:
        d, g = batchnorm_backward(model.batchnorm, d, caches["bn"])
        grads["bn.gamma"], grads["bn.beta"] = g["gamma"], g["beta"]
    return d


def _head_params(model) -> dict[str, np.ndarray]:
    out = {}
    for k, layer in enumerate(model.head):
        out[f"head{k}.weights"] = layer.weights
        out[f"head{k}.bias"] = layer.bias
    if model.batchnorm is not None:
        out["bn.gamma"] = model.batchnorm.gamma
        out["bn.beta"] = model.batchnorm.beta
    return out


def build_head(rng, n_in: int, widths, n_out: int, activation: str = "relu") -> list[DenseParams]:
    layers = []
    for w in widths:
        layers.append(DenseParams.init(rng, n_in, w, activation))
        n_in = w
    layers.append(DenseParams.init(rng, n_in, n_out, "linear"))
    return layers


# ---------------------------------------------------------------------------
# Bidirectional model
# ---------------------------------------------------------------------------


@dataclass
class BiLstmModel:
    """Forward and backward LSTMs whose summaries (final forward state, first
    backward state) are concatenated, normalized and fed to a dense head."""

    forward_params: LstmParams
    backward_params: LstmParams
    head: list[DenseParams]
    batchnorm: BatchNormParams | None = None
    dropout: DropoutSpec = field(default_factory=DropoutSpec)

    def __post_init__(self):
        fp, bp = self.forward_params, self.backward_params
        if (fp.hidden_size, fp.input_size) != (bp.hidden_size, bp.input_size):
            raise ShapeError("forward and backward LSTMs must share sizes")
        if self.head and self.head[0].n_in != 2 * fp.hidden_size:
            raise ShapeError(
                f"head input width {self.head[0].n_in} != 2 x hidden ({2 * fp.hidden_size})"
            )

    @classmethod
    def init(cls, rng, input_size, hidden_size=64, head_widths=(64, 32), n_out=2, dropout=0.3, dropout_seed=0):
        return cls(
            LstmParams.init(rng, input_size, hidden_size),
            LstmParams.init(rng, input_size, hidden_size),
            build_head(rng, 2 * hidden_size, head_widths, n_out),
            BatchNormParams.init(2 * hidden_size),
            DropoutSpec(dropout, dropout_seed),
        )

    @property
    def input_size(self) -> int:
        return self.forward_params.input_size

    @property
    def n_out(self) -> int:
        return self.head[-1].n_out

    def params(self) -> dict[str, np.ndarray]:
        out = {
            "fwd.W": self.forward_params.W,
            "fwd.b": self.forward_params.b,
            "bwd.W": self.backward_params.W,
            "bwd.b": self.backward_params.b,
        }
        out.update(_head_params(self))
        return out

    def recurrent_keys(self) -> tuple[str, ...]:
        return ("fwd.W", "fwd.b", "bwd.W", "bwd.b")

    def summary(self, X: np.ndarray):
        """Concatenated ``[h_fwd at T ; h_bwd at 1]`` of shape ``(2h, B)`` plus caches."""
        fc = run_sequence(self.forward_params, X)
        bc = run_sequence(self.backward_params, X[::-1])
        return np.vstack([fc.H[-1], bc.H[-1]]), (fc, bc)

    def forward(self, X: np.ndarray, training: bool = False, rng=None):
        X = _as_sequence(X)
        feat, seq_caches = self.summary(X)
        out, head_caches = _head_forward(self, feat, training, rng)
        return out, (seq_caches, head_caches)

    def backward(self, dout: np.ndarray, cache, need_input_grad: bool = False):
        (fc, bc), head_caches = cache
        grads: dict[str, np.ndarray] = {}
        dfeat = _head_backward(self, dout, head_caches, grads)
        h = self.forward_params.hidden_size
        T, _, B = fc.X.shape
        dH = np.zeros((T, h, B))
        dH[-1] = dfeat[:h]
        grads["fwd.W"], grads["fwd.b"], dXf = backprop_sequence(self.forward_params, fc, dH)
        dH = np.zeros((T, h, B))
        dH[-1] = dfeat[h:]
        grads["bwd.W"], grads["bwd.b"], dXb = backprop_sequence(self.backward_params, bc, dH)
        if need_input_grad:
            return grads, dXf + dXb[::-1]
        return grads


def bilstm_forward(model: BiLstmModel, inputs, training: bool = False, rng=None) -> np.ndarray:
    out, _ = model.forward(_as_sequence(inputs), training, rng)
    return out


# ---------------------------------------------------------------------------
# Unidirectional model and multi-output head
# ---------------------------------------------------------------------------


@dataclass
class LstmModel:
    """Single-direction LSTM whose final hidden state feeds a dense head."""

    lstm: LstmParams
    head: list[DenseParams]
    dropout: DropoutSpec = field(default_factory=DropoutSpec)
    batchnorm: BatchNormParams | None = None

    def __post_init__(self):
        if self.head and self.head[0].n_in != self.lstm.hidden_size:
            raise ShapeError(
                f"head input width {self.head[0].n_in} != hidden ({self.lstm.hidden_size})"
            )

    @classmethod
    def init(cls, rng, input_size, hidden_size=64, head_widths=(32, 16), n_out=2, dropout=0.2, dropout_seed=0):
        return cls(
            LstmParams.init(rng, input_size, hidden_size),
            build_head(rng, hidden_size, head_widths, n_out),
            DropoutSpec(dropout, dropout_seed),
        )

    @property
    def input_size(self) -> int:
        return self.lstm.input_size

    @property
    def n_out(self) -> int:
        return self.head[-1].n_out

    def params(self) -> dict[str, np.ndarray]:
        out = {"lstm.W": self.lstm.W, "lstm.b": self.lstm.b}
        out.update(_head_params(self))
        return out

    def recurrent_keys(self) -> tuple[str, ...]:
        return ("lstm.W", "lstm.b")

    @property
    def output_head(self) -> "MultiOutputHead":
        return MultiOutputHead(self.head[-1])

    def forward(self, X: np.ndarray, training: bool = False, rng=None):
        X = _as_sequence(X)
        sc = run_sequence(self.lstm, X)
        out, head_caches = _head_forward(self, sc.H[-1], training, rng)
        return out, (sc, head_caches)

    def backward(self, dout: np.ndarray, cache, need_input_grad: bool = False):
        sc, head_caches = cache
        grads: dict[str, np.ndarray] = {}
        dfeat = _head_backward(self, dout, head_caches, grads)
        T, _, B = sc.X.shape
        dH = np.zeros((T, self.lstm.hidden_size, B))
        dH[-1] = dfeat
        grads["lstm.W"], grads["lstm.b"], dX = backprop_sequence(self.lstm, sc, dH)
        if need_input_grad:
            return grads, dX
        return grads


@dataclass
class MultiOutputHead:
    """Final dense layer emitting one voltage per series cell."""

    per_cell: DenseParams

    @property
    def n_cells(self) -> int:
        return self.per_cell.n_out


def multi_output_forward(head: MultiOutputHead, features: np.ndarray) -> np.ndarray:
    out, _ = dense_forward(head.per_cell, features)
    return out


def aggregate_cells(outputs: np.ndarray) -> np.ndarray:
    """Pack-level sum of per-cell rows, folded left to right in cell order."""
    outputs = as_matrix(outputs)
    acc = outputs[0].copy()
    for row in outputs[1:]:
        acc = acc + row
    return acc
