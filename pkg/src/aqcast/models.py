"""The four forecasting architectures and their train / predict contracts.

=======  ===============================================================
FNN      flatten(N x F) -> dense 64 relu -> dense 32 relu -> dense N_out
LSTM     LSTM(F -> 50) -> last hidden state -> dense N_out
BDLSTM   forward + reversed LSTM(F -> 50) -> concat last states -> dense N_out
EDLSTM   encoder LSTM(F -> 50) -> repeat N_out times -> decoder LSTM(50 -> 50)
         -> shared dense 50 -> 1 on every decoder step
=======  ===============================================================
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import neural
from .errors import ConfigError, DivergenceError, ShapeError, StateError
from .neural import DenseParams, LayerShape, LstmCellParams
from .station_data import TARGET, ScalerParams
from .windowing import WindowedDataset, shuffle_windows

KINDS = ("FNN", "LSTM", "BDLSTM", "EDLSTM")
DEFAULT_HIDDEN = {"FNN": (64, 32), "LSTM": (50,), "BDLSTM": (50,), "EDLSTM": (50, 50)}
MODEL_CHECKPOINT_FORMAT = "aqcast-model"


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    lookback: int = 5
    n_features: int = 11
    horizon: int = 10
    hidden: tuple | None = None
    hidden_activation: str = "relu"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        hidden = DEFAULT_HIDDEN[self.kind] if self.hidden is None else tuple(int(h) for h in self.hidden)
        object.__setattr__(self, "hidden", hidden)
        if min(self.lookback, self.n_features, self.horizon, *hidden) < 1:
            raise ShapeError(f"model dimensions must be positive: {self}")
        if self.kind in ("LSTM", "BDLSTM") and len(hidden) != 1:
            raise ShapeError(f"{self.kind} takes a single hidden size, got {hidden}")
        if self.kind == "EDLSTM" and len(hidden) != 2:
            raise ShapeError(f"EDLSTM takes (encoder, decoder) hidden sizes, got {hidden}")
        if self.hidden_activation not in ("relu", "identity"):
            raise ShapeError(f"unsupported hidden activation {self.hidden_activation!r}")

    @property
    def input_width(self) -> int:
        """Width of the flattened input for the FNN."""
        return self.lookback * self.n_features

    def to_dict(self):
        return {
            "kind": self.kind, "lookback": self.lookback, "n_features": self.n_features,
            "horizon": self.horizon, "hidden": list(self.hidden),
            "hidden_activation": self.hidden_activation,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**{**data, "hidden": tuple(data["hidden"])})


# --------------------------------------------------------------------------
# Networks: stateless forward/backward over a params dict
# --------------------------------------------------------------------------


class FNN:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        sizes = (spec.input_width, *spec.hidden)
        self.layout = [
            LayerShape(f"hidden{k + 1}", "dense", sizes[k], sizes[k + 1], spec.hidden_activation)
            for k in range(len(spec.hidden))
        ]
        self.layout.append(LayerShape("out", "dense", sizes[-1], spec.horizon))

    def forward(self, params, x):
        a = x.reshape(x.shape[0], -1)
        caches = []
        for layer in self.layout:
            a, cache = neural.dense_forward(DenseParams.view(params, layer.name, layer.activation), a)
            caches.append(cache)
        return a, caches

    def backward(self, params, caches, dy):
        grads = {}
        for layer, cache in zip(reversed(self.layout), reversed(caches)):
            g, dy = neural.dense_backward(DenseParams.view(params, layer.name, layer.activation), cache, dy)
            grads.update({f"{layer.name}.{k}": v for k, v in g.items()})
        return grads


class LSTMNet:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        h = spec.hidden[0]
        self.layout = [
            LayerShape("lstm", "lstm", spec.n_features, h),
            LayerShape("out", "dense", h, spec.horizon),
        ]

    def forward(self, params, x):
        hidden, lstm_cache = neural.lstm_forward(LstmCellParams.view(params, "lstm"), x)
        y, dense_cache = neural.dense_forward(DenseParams.view(params, "out"), hidden[:, -1])
        return y, (lstm_cache, dense_cache)

    def backward(self, params, cache, dy):
        lstm_cache, dense_cache = cache
        g_out, d_last = neural.dense_backward(DenseParams.view(params, "out"), dense_cache, dy)
        d_hidden = np.zeros_like(lstm_cache.hidden)
        d_hidden[:, -1] = d_last
        g_lstm, _ = neural.lstm_backward(LstmCellParams.view(params, "lstm"), lstm_cache, d_hidden)
        return {**_prefixed("lstm", g_lstm), **_prefixed("out", g_out)}


class BDLSTMNet:
    """The backward layer reads the window reversed; its last state summarizes step 0."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        h = spec.hidden[0]
        self.layout = [
            LayerShape("forward", "lstm", spec.n_features, h),
            LayerShape("backward", "lstm", spec.n_features, h),
            LayerShape("out", "dense", 2 * h, spec.horizon),
        ]

    def forward(self, params, x):
        h = self.spec.hidden[0]
        hf, cache_f = neural.lstm_forward(LstmCellParams.view(params, "forward"), x)
        hb, cache_b = neural.lstm_forward(LstmCellParams.view(params, "backward"), x[:, ::-1])
        w = params["out.W"]
        # two partial products so a zeroed backward half contributes exactly nothing
        y = (hf[:, -1] @ w[:, :h].T + hb[:, -1] @ w[:, h:].T) + params["out.b"]
        return y, (cache_f, cache_b, hf[:, -1], hb[:, -1])

    def backward(self, params, cache, dy):
        cache_f, cache_b, last_f, last_b = cache
        h = self.spec.hidden[0]
        w = params["out.W"]
        if w.shape != (dy.shape[1], 2 * h):
            raise StateError("BDLSTM cache does not match output weights")
        g_out = {"W": dy.T @ np.concatenate([last_f, last_b], axis=1), "b": dy.sum(axis=0)}
        grads = _prefixed("out", g_out)
        for name, c, d_last in (("forward", cache_f, dy @ w[:, :h]), ("backward", cache_b, dy @ w[:, h:])):
            d_hidden = np.zeros_like(c.hidden)
            d_hidden[:, -1] = d_last
            g, _ = neural.lstm_backward(LstmCellParams.view(params, name), c, d_hidden)
            grads.update(_prefixed(name, g))
        return grads


class EDLSTMNet:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        h_enc, h_dec = spec.hidden
        self.layout = [
            LayerShape("encoder", "lstm", spec.n_features, h_enc),
            LayerShape("decoder", "lstm", h_enc, h_dec),
            LayerShape("out", "dense", h_dec, 1),
        ]

    def forward(self, params, x):
        enc_hidden, enc_cache = neural.lstm_forward(LstmCellParams.view(params, "encoder"), x)
        context = enc_hidden[:, -1]
        repeated = np.repeat(context[:, None, :], self.spec.horizon, axis=1)
        dec_hidden, dec_cache = neural.lstm_forward(LstmCellParams.view(params, "decoder"), repeated)
        y, dense_cache = neural.dense_forward(DenseParams.view(params, "out"), dec_hidden)
        return y[..., 0], (enc_cache, dec_cache, dense_cache)

    def backward(self, params, cache, dy):
        enc_cache, dec_cache, dense_cache = cache
        g_out, d_dec = neural.dense_backward(DenseParams.view(params, "out"), dense_cache, dy[..., None])
        g_dec, d_repeated = neural.lstm_backward(LstmCellParams.view(params, "decoder"), dec_cache, d_dec)
        d_enc = np.zeros_like(enc_cache.hidden)
        d_enc[:, -1] = d_repeated.sum(axis=1)
        g_enc, _ = neural.lstm_backward(LstmCellParams.view(params, "encoder"), enc_cache, d_enc)
        return {**_prefixed("encoder", g_enc), **_prefixed("decoder", g_dec), **_prefixed("out", g_out)}


NETWORKS = {"FNN": FNN, "LSTM": LSTMNet, "BDLSTM": BDLSTMNet, "EDLSTM": EDLSTMNet}


def _prefixed(prefix, grads):
    return {f"{prefix}.{k}": v for k, v in grads.items()}


def network_for(spec: ModelSpec):
    return NETWORKS[spec.kind](spec)


# --------------------------------------------------------------------------
# Training configuration and trained models
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingConfig:
    """Optimizer and protocol settings.  ``shuffle_seed`` turns on per-epoch window shuffling."""

    epochs: int = 200
    batch_size: int = 20
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    trials: int = 30
    base_seed: int = 0
    shuffle_seed: int | None = None
    strategy: object = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")

    def adam_hyper(self):
        return {"learning_rate": self.learning_rate, "beta1": self.beta1,
                "beta2": self.beta2, "epsilon": self.epsilon}


@dataclass
class TrainedModel:
    spec: ModelSpec
    params: dict
    scaler: ScalerParams | None = None
    loss_history: list = field(default_factory=list)
    seed: int = 0
    target: str = TARGET

    @property
    def network(self):
        return network_for(self.spec)

    def _check_inputs(self, inputs):
        inputs = np.asarray(inputs, dtype=np.float64)
        expected = (self.spec.lookback, self.spec.n_features)
        if inputs.ndim != 3 or inputs.shape[1:] != expected:
            raise ShapeError(f"{self.spec.kind} expects windows of shape (M, {expected[0]}, {expected[1]}), "
                             f"got {inputs.shape}")
        return inputs

    def predict(self, inputs) -> np.ndarray:
        """Scaled N_out-step predictions for each window in ``inputs`` (M, N, F)."""
        inputs = self._check_inputs(inputs)
        if inputs.shape[0] == 0:
            return np.zeros((0, self.spec.horizon))
        y, _ = self.network.forward(self.params, inputs)
        return y

    def loss_and_grad(self, inputs, targets):
        """Batch-mean MSE and its gradient for every parameter."""
        net = self.network
        y, cache = net.forward(self.params, self._check_inputs(inputs))
        loss, dy = neural.mse_loss(y, targets)
        return loss, net.backward(self.params, cache, dy)

    def unscale_target(self, values):
        if self.scaler is None:
            return np.array(values, dtype=np.float64)
        return self.scaler.unscale(self.target, values)

    def describe(self):
        """Per-layer shapes and parameter counts."""
        rows = []
        for layer in self.network.layout:
            shapes = {k: tuple(self.params[f"{layer.name}.{k}"].shape) for k in layer.param_shapes()}
            rows.append({"layer": layer.name, "kind": layer.kind, "n_in": layer.n_in,
                         "n_out": layer.n_out, "shapes": shapes, "params": layer.param_count})
        return rows

    @property
    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def save(self, stream):
        json.dump({
            "format": MODEL_CHECKPOINT_FORMAT,
            "version": neural.CHECKPOINT_VERSION,
            "spec": self.spec.to_dict(),
            "target": self.target,
            "seed": self.seed,
            "scaler": None if self.scaler is None else self.scaler.to_dict(),
            "loss_history": [float(v) for v in self.loss_history],
            "params": neural.params_to_records(self.params),
        }, stream)

    @classmethod
    def load(cls, stream):
        data = json.load(stream)
        if data.get("format") != MODEL_CHECKPOINT_FORMAT or data.get("version") != neural.CHECKPOINT_VERSION:
            raise StateError("not an aqcast model checkpoint of a supported version")
        spec = ModelSpec.from_dict(data["spec"])
        params = neural.params_from_records(data["params"])
        expected = {f"{l.name}.{k}": s for l in network_for(spec).layout for k, s in l.param_shapes().items()}
        if {k: v.shape for k, v in params.items()} != expected:
            raise StateError("checkpoint parameters do not match its model spec")
        scaler = None if data["scaler"] is None else ScalerParams.from_dict(data["scaler"])
        return cls(spec, params, scaler, list(data["loss_history"]), data["seed"], data["target"])


def build_model(spec: ModelSpec, seed: int, scaler: ScalerParams | None = None) -> TrainedModel:
    net = network_for(spec)
    return TrainedModel(spec, neural.init_params(net.layout, seed), scaler, [], seed)


def train(model: TrainedModel, train_set: WindowedDataset, config: TrainingConfig) -> TrainedModel:
    """Mini-batch Adam on batch-mean MSE; returns a new model, ``model`` is untouched."""
    if train_set.n_features != model.spec.n_features or train_set.lookback != model.spec.lookback:
        raise ShapeError(
            f"dataset windows ({train_set.lookback}, {train_set.n_features}) do not match "
            f"model ({model.spec.lookback}, {model.spec.n_features})"
        )
    if train_set.horizon != model.spec.horizon:
        raise ShapeError(f"dataset horizon {train_set.horizon} != model horizon {model.spec.horizon}")
    params = {k: v.copy() for k, v in model.params.items()}
    history = list(model.loss_history)
    if config.epochs == 0 or len(train_set) == 0:
        return replace(model, params=params, loss_history=history)

    net = model.network
    state = neural.AdamState.for_params(params, **config.adam_hyper())
    m = len(train_set)
    bs = config.batch_size
    for epoch in range(config.epochs):
        data = train_set
        if config.shuffle_seed is not None:
            data = shuffle_windows(train_set, (config.shuffle_seed, model.seed, epoch))
        total = 0.0
        for lo in range(0, m, bs):
            x = data.inputs[lo:lo + bs]
            y_true = data.targets[lo:lo + bs]
            y, cache = net.forward(params, x)
            loss, dy = neural.mse_loss(y, y_true)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            grads = net.backward(params, cache, dy)
            params, state = neural.adam_step(params, grads, state)
            total += loss * len(x)
        epoch_loss = total / m
        if not math.isfinite(epoch_loss):
            raise DivergenceError(epoch, epoch_loss)
        history.append(epoch_loss)
    return replace(model, params=params, loss_history=history)


def predict_batch(model: TrainedModel, dataset: WindowedDataset):
    """Returns ``(scaled, denormalized)`` prediction matrices of shape (M, N_out)."""
    scaled = model.predict(dataset.inputs)
    return scaled, model.unscale_target(scaled)
