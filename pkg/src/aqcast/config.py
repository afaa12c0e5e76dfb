"""Flat ``key = value`` experiment configuration files.

Blank lines and ``#`` comments are ignored.  List-valued keys (``model``,
``mode``, ``strategy``) take comma-separated values and expand into the
strategy matrix.  Example::

    input = data/anand_vihar.csv
    station = Anand Vihar
    model = BDLSTM
    mode = multivariate, univariate
    strategy = plain, shuffled, seasonal
    train_end = 2020-06-01T00:00
    seasonal_months = 2-9
    trials = 30
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .models import KINDS
from .windowing import MODES, STRATEGIES

DEFAULT_EPOCHS = {"plain": 200, "shuffled": 200, "univariate": 1000, "seasonal": 50}

KEYS = {
    "input", "station", "model", "mode", "strategy", "lookback", "horizon", "epochs",
    "batch_size", "trials", "train_end", "seasonal_months", "learning_rate", "beta1",
    "beta2", "epsilon", "shuffle_seed", "seed", "impute_k", "input_features", "checkpoints",
}


@dataclass
class ExperimentConfig:
    input: str | None = None
    station: str | None = None
    models: list = field(default_factory=lambda: ["BDLSTM"])
    modes: list = field(default_factory=lambda: ["multivariate"])
    strategies: list = field(default_factory=lambda: ["plain"])
    lookback: int = 5
    horizon: int = 10
    epochs: int | None = None
    batch_size: int = 20
    trials: int = 30
    train_end: str | None = None
    seasonal_months: tuple | None = None
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle_seed: int = 0
    seed: int = 0
    impute_k: int = 2
    input_features: tuple | None = None
    checkpoints: bool = True
    source: str | None = None

    def epochs_for(self, mode: str, strategy: str) -> int:
        """Explicit ``epochs`` wins; otherwise 50 seasonal, 1000 univariate, 200 otherwise."""
        if self.epochs is not None:
            return self.epochs
        if strategy == "seasonal":
            return DEFAULT_EPOCHS["seasonal"]
        if mode == "univariate":
            return DEFAULT_EPOCHS["univariate"]
        return DEFAULT_EPOCHS[strategy]

    def runs(self):
        """Every (model, mode, strategy) cell of the strategy matrix."""
        return [(k, m, s) for k in self.models for m in self.modes for s in self.strategies]


def _as_int(key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}") from None


def _as_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected a number, got {value!r}") from None


def _as_list(key, value, allowed):
    items = [v.strip() for v in value.split(",") if v.strip()]
    for item in items:
        if item not in allowed:
            raise ConfigError(f"config key {key!r}: unknown value {item!r}; expected one of {', '.join(allowed)}")
    if not items:
        raise ConfigError(f"config key {key!r} is empty")
    return items


def parse_config_text(text: str, source: str | None = None) -> ExperimentConfig:
    raw = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {line_no}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r} (line {line_no})")
        raw[key] = value

    cfg = ExperimentConfig(source=source)
    for key, value in raw.items():
        if key in ("input", "station", "train_end"):
            setattr(cfg, key, value)
        elif key == "model":
            cfg.models = _as_list(key, value, KINDS)
        elif key == "mode":
            cfg.modes = _as_list(key, value, MODES)
        elif key == "strategy":
            cfg.strategies = _as_list(key, value, STRATEGIES)
        elif key in ("lookback", "horizon", "epochs", "batch_size", "trials", "shuffle_seed", "seed", "impute_k"):
            setattr(cfg, key, _as_int(key, value))
        elif key in ("learning_rate", "beta1", "beta2", "epsilon"):
            setattr(cfg, key, _as_float(key, value))
        elif key == "seasonal_months":
            parts = value.replace(",", "-").split("-")
            if len(parts) != 2:
                raise ConfigError(f"config key 'seasonal_months': expected 'start-end', got {value!r}")
            cfg.seasonal_months = (_as_int(key, parts[0]), _as_int(key, parts[1]))
        elif key == "input_features":
            cfg.input_features = tuple(v.strip() for v in value.split(",") if v.strip())
        elif key == "checkpoints":
            if value.lower() not in ("yes", "no", "true", "false"):
                raise ConfigError(f"config key 'checkpoints': expected yes/no, got {value!r}")
            cfg.checkpoints = value.lower() in ("yes", "true")

    if "seasonal" in cfg.strategies and cfg.seasonal_months is None:
        raise ConfigError("config key 'seasonal_months' is required by the seasonal strategy")
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config_text(text, str(path))
    if cfg.input is not None and not Path(cfg.input).is_absolute():
        cfg.input = str((path.parent / cfg.input).resolve())
    return cfg
