"""Dense and LSTM layers with hand-derived gradients, Adam, MSE and a gradient checker.

Everything runs in float64.  Parameters of a network live in an ordered
``dict`` mapping ``"<layer>.<W|U|b>"`` to numpy arrays; the layer helpers
below take light views over that dict.

LSTM gate blocks are stacked in the order input, forget, candidate, output,
so ``W`` is ``(4H, I)``, ``U`` is ``(4H, H)`` and ``b`` is ``(4H,)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StateError

GATES = ("input", "forget", "candidate", "output")
CHECKPOINT_FORMAT = "aqcast-params"
CHECKPOINT_VERSION = 1


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# Parameter layout and initialization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LayerShape:
    name: str
    kind: str  # "dense" or "lstm"
    n_in: int
    n_out: int
    activation: str = "identity"

    def param_shapes(self):
        if self.kind == "dense":
            return {"W": (self.n_out, self.n_in), "b": (self.n_out,)}
        if self.kind == "lstm":
            h = self.n_out
            return {"W": (4 * h, self.n_in), "U": (4 * h, h), "b": (4 * h,)}
        raise ShapeError(f"unknown layer kind {self.kind!r}")

    @property
    def param_count(self) -> int:
        return sum(math.prod(s) for s in self.param_shapes().values())


def lstm_param_count(n_in: int, hidden: int) -> int:
    return 4 * (hidden * (n_in + hidden) + hidden)


def init_params(layout, seed: int) -> dict:
    """Seeded init: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases, forget bias 1."""
    rng = np.random.default_rng(seed)
    params = {}
    for layer in layout:
        if layer.n_in < 1 or layer.n_out < 1:
            raise ShapeError(f"layer {layer.name!r} has non-positive dimension ({layer.n_in}, {layer.n_out})")
        for key, shape in layer.param_shapes().items():
            name = f"{layer.name}.{key}"
            if key == "b":
                bias = np.zeros(shape)
                if layer.kind == "lstm":
                    h = layer.n_out
                    bias[h:2 * h] = 1.0
                params[name] = bias
            else:
                limit = 1.0 / math.sqrt(shape[1])
                params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


# --------------------------------------------------------------------------
# Dense layer
# --------------------------------------------------------------------------


@dataclass
class DenseParams:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f"dense weights {self.weights.shape} and bias {self.bias.shape} disagree")
        if self.activation not in ("relu", "identity"):
            raise ShapeError(f"unsupported activation {self.activation!r}")

    @classmethod
    def view(cls, params, name, activation="identity"):
        return cls(params[f"{name}.W"], params[f"{name}.b"], activation)


def dense_forward(p: DenseParams, x):
    """``x`` is (..., in); returns (y, cache)."""
    if x.shape[-1] != p.weights.shape[1]:
        raise ShapeError(f"dense layer expects {p.weights.shape[1]} inputs, got {x.shape[-1]}")
    pre = x @ p.weights.T + p.bias
    y = np.maximum(pre, 0.0) if p.activation == "relu" else pre
    return y, (x, pre, p.weights.shape)


def dense_backward(p: DenseParams, cache, dy):
    x, pre, shape = cache
    if shape != p.weights.shape:
        raise StateError("dense cache was produced by differently shaped parameters")
    if p.activation == "relu":
        dy = dy * (pre > 0)
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dy.reshape(-1, dy.shape[-1])
    grads = {"W": d2.T @ x2, "b": d2.sum(axis=0)}
    return grads, dy @ p.weights


# --------------------------------------------------------------------------
# LSTM layer
# --------------------------------------------------------------------------


@dataclass
class LstmCellParams:
    W: np.ndarray
    U: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        h4, n_in = self.W.shape
        if h4 % 4 or self.U.shape != (h4, h4 // 4) or self.b.shape != (h4,):
            raise ShapeError(f"inconsistent LSTM shapes W{self.W.shape} U{self.U.shape} b{self.b.shape}")

    @classmethod
    def view(cls, params, name):
        return cls(params[f"{name}.W"], params[f"{name}.U"], params[f"{name}.b"])

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @property
    def param_count(self) -> int:
        return self.W.size + self.U.size + self.b.size

    def gate(self, name):
        """(input weights, recurrent weights, bias) of one gate."""
        h = self.hidden_size
        k = GATES.index(name)
        block = slice(k * h, (k + 1) * h)
        return self.W[block], self.U[block], self.b[block]


def _gates(p: LstmCellParams, x_t, h_prev):
    h = p.hidden_size
    z = x_t @ p.W.T + h_prev @ p.U.T + p.b
    i = sigmoid(z[..., :h])
    f = sigmoid(z[..., h:2 * h])
    g = np.tanh(z[..., 2 * h:3 * h])
    o = sigmoid(z[..., 3 * h:])
    return i, f, g, o


def lstm_cell_step(p: LstmCellParams, x_t, h_prev, c_prev):
    """One step of the standard (non-peephole) LSTM cell; works on vectors or batches."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    if x_t.shape[-1] != p.input_size:
        raise ShapeError(f"x_t has {x_t.shape[-1]} features, cell expects {p.input_size}")
    if h_prev.shape[-1] != p.hidden_size or c_prev.shape != h_prev.shape:
        raise ShapeError(f"state shapes {h_prev.shape}/{c_prev.shape} do not match hidden size {p.hidden_size}")
    i, f, g, o = _gates(p, x_t, h_prev)
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


@dataclass
class LstmCache:
    shapes: tuple
    x: np.ndarray
    h: np.ndarray  # (B, N+1, H), h[:, 0] is the initial state
    c: np.ndarray
    i: np.ndarray
    f: np.ndarray
    g: np.ndarray
    o: np.ndarray
    tanh_c: np.ndarray = field(repr=False)

    @property
    def hidden(self):
        return self.h[:, 1:]


def lstm_forward(p: LstmCellParams, x):
    """Run the cell over ``x`` of shape (B, N, I) from zero state.

    Returns hidden states (B, N, H) and the cache needed by :func:`lstm_backward`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != p.input_size:
        raise ShapeError(f"LSTM expects (B, N, {p.input_size}) input, got {x.shape}")
    b, n, _ = x.shape
    hsz = p.hidden_size
    hs = np.zeros((b, n + 1, hsz))
    cs = np.zeros((b, n + 1, hsz))
    gi, gf, gg, go = (np.empty((b, n, hsz)) for _ in range(4))
    # input projections for every step at once
    xw = x @ p.W.T + p.b
    for t in range(n):
        z = xw[:, t] + hs[:, t] @ p.U.T
        gi[:, t] = sigmoid(z[:, :hsz])
        gf[:, t] = sigmoid(z[:, hsz:2 * hsz])
        gg[:, t] = np.tanh(z[:, 2 * hsz:3 * hsz])
        go[:, t] = sigmoid(z[:, 3 * hsz:])
        cs[:, t + 1] = gf[:, t] * cs[:, t] + gi[:, t] * gg[:, t]
        hs[:, t + 1] = go[:, t] * np.tanh(cs[:, t + 1])
    cache = LstmCache((p.W.shape, p.U.shape), x, hs, cs, gi, gf, gg, go, np.tanh(cs[:, 1:]))
    return hs[:, 1:], cache


def lstm_backward(p: LstmCellParams, cache: LstmCache, d_hidden):
    """Backpropagation through time.

    ``d_hidden`` (B, N, H) is the loss gradient w.r.t. every emitted hidden
    state.  Returns ``({"W", "U", "b"} gradients, d_inputs (B, N, I))``.
    """
    if cache.shapes != (p.W.shape, p.U.shape):
        raise StateError("LSTM cache was produced by differently shaped parameters")
    d_hidden = np.asarray(d_hidden, dtype=np.float64)
    if d_hidden.shape != cache.hidden.shape:
        raise ShapeError(f"hidden gradient shape {d_hidden.shape} != {cache.hidden.shape}")
    b, n, hsz = d_hidden.shape
    dW = np.zeros_like(p.W)
    dU = np.zeros_like(p.U)
    dz_all = np.empty((b, n, 4 * hsz))
    dh_next = np.zeros((b, hsz))
    dc_next = np.zeros((b, hsz))
    for t in reversed(range(n)):
        i, f, g, o = cache.i[:, t], cache.f[:, t], cache.g[:, t], cache.o[:, t]
        tc = cache.tanh_c[:, t]
        dh = d_hidden[:, t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[:, t]
        dz[:, :hsz] = dc * g * i * (1.0 - i)
        dz[:, hsz:2 * hsz] = dc * cache.c[:, t] * f * (1.0 - f)
        dz[:, 2 * hsz:3 * hsz] = dc * i * (1.0 - g * g)
        dz[:, 3 * hsz:] = dh * tc * o * (1.0 - o)
        dU += dz.T @ cache.h[:, t]
        dh_next = dz @ p.U
        dc_next = dc * f
    flat_dz = dz_all.reshape(b * n, 4 * hsz)
    dW += flat_dz.T @ cache.x.reshape(b * n, -1)
    grads = {"W": dW, "U": dU, "b": flat_dz.sum(axis=0)}
    return grads, dz_all @ p.W


# --------------------------------------------------------------------------
# Loss and optimizer
# --------------------------------------------------------------------------


def mse_loss(pred, target):
    """Mean squared error over every element, with its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params, **hyper):
        return cls(zeros_like_params(params), zeros_like_params(params), 0, **hyper)


def adam_step(params: dict, grads: dict, state: AdamState):
    """Bias-corrected Adam update; returns new ``(params, state)`` without mutating inputs."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ShapeError("parameter, gradient and optimizer keys differ")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {theta.shape}")
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        new_params[name] = theta - state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(new_m, new_v, t, state.learning_rate, b1, b2, state.epsilon)


# --------------------------------------------------------------------------
# Verification
# --------------------------------------------------------------------------


def grad_check(model, inputs, targets, eps: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``model`` needs a ``params`` dict and ``loss_and_grad(inputs, targets)``
    returning ``(loss, grads)``.  Parameters are perturbed in place and
    restored.  Relative error uses ``max(|a|, |n|, 1e-8)`` as denominator.
    """
    _, analytic = model.loss_and_grad(inputs, targets)
    worst = 0.0
    for name, theta in model.params.items():
        grad = analytic[name].reshape(-1)
        for k in range(theta.size):
            saved = theta.flat[k]
            theta.flat[k] = saved + eps
            up, _ = model.loss_and_grad(inputs, targets)
            theta.flat[k] = saved - eps
            down, _ = model.loss_and_grad(inputs, targets)
            theta.flat[k] = saved
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(grad[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[k] - numeric) / denom)
    return worst


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def params_to_records(params: dict):
    return [
        {"name": name, "shape": list(arr.shape), "values": [float(v) for v in arr.reshape(-1)]}
        for name, arr in params.items()
    ]


def params_from_records(records) -> dict:
    params = {}
    for rec in records:
        arr = np.array(rec["values"], dtype=np.float64)
        shape = tuple(rec["shape"])
        if arr.size != math.prod(shape):
            raise ShapeError(f"checkpoint entry {rec['name']} has {arr.size} values for shape {shape}")
        params[rec["name"]] = arr.reshape(shape)
    return params


def save_params(stream, params: dict, layout, seed: int) -> None:
    """Text checkpoint.  Floats are written with ``repr`` so reloads are exact."""
    json.dump(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "layout": [vars(layer) for layer in layout],
            "seed": seed,
            "params": params_to_records(params),
        },
        stream,
    )


def load_params(stream):
    """Returns ``(params, layout, seed)``."""
    data = json.load(stream)
    if data.get("format") != CHECKPOINT_FORMAT or data.get("version") != CHECKPOINT_VERSION:
        raise StateError("not an aqcast parameter checkpoint of a supported version")
    layout = [LayerShape(**layer) for layer in data["layout"]]
    return params_from_records(data["params"]), layout, data["seed"]
