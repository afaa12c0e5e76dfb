"""Evaluation protocol: per-horizon RMSE, repeated trials and recursive forecasts."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeError, SplitError, UnsupportedModeError
from .models import ModelSpec, TrainedModel, TrainingConfig, build_model, predict_batch, train
from .station_data import (
    TARGET,
    ScalerParams,
    TimeSeriesFrame,
    confidence_interval,
    format_timestamp,
    minmax_apply,
    minmax_fit,
    to_minute,
)
from .windowing import (
    UNIVARIATE,
    SplitSpec,
    WindowedDataset,
    build_windows,
    chronological_split,
    concat_datasets,
    empty_like,
    halve_for_validation,
)

STEP_HOURS = 8
THREADS_ENV = "AQCAST_THREADS"

__all__ = [
    "DataBundle", "ExperimentSummary", "ForecastResult", "HorizonMetrics", "TrainingConfig",
    "TrialResult", "confidence_interval", "forecast_with_uncertainty", "horizon_rmse",
    "prepare_data", "recursive_forecast", "rmse", "run_trials",
]


def rmse(actual, predicted) -> float:
    actual = np.asarray(actual, dtype=np.float64).ravel()
    predicted = np.asarray(predicted, dtype=np.float64).ravel()
    if actual.size == 0 or actual.shape != predicted.shape:
        raise ShapeError(f"rmse needs equal non-empty lengths, got {actual.size} and {predicted.size}")
    diff = actual - predicted
    return math.sqrt(float(np.mean(diff * diff)))


@dataclass(frozen=True)
class HorizonMetrics:
    per_horizon_rmse: tuple
    overall_rmse: float
    dataset_label: str = "test"


def horizon_rmse(predictions, targets, label: str = "test") -> HorizonMetrics:
    """RMSE per forecast step (column) plus the pooled RMSE over all steps."""
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if predictions.ndim != 2 or predictions.shape != targets.shape or predictions.shape[0] == 0:
        raise ShapeError(f"horizon_rmse needs matching (M>=1, N_out) matrices, got "
                         f"{predictions.shape} and {targets.shape}")
    sq = (predictions - targets) ** 2
    per = tuple(float(v) for v in np.sqrt(sq.mean(axis=0)))
    return HorizonMetrics(per, float(np.sqrt(sq.mean())), label)


# --------------------------------------------------------------------------
# Data preparation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DataBundle:
    """Scaled train/validation/test windows plus the scaler fitted on the training rows."""

    train: WindowedDataset
    validation: WindowedDataset
    test: WindowedDataset
    scaler: ScalerParams
    frame: TimeSeriesFrame
    split: SplitSpec
    target: str = TARGET


def _season_segments(frame, months):
    """Row ranges of each contiguous run of timestamps inside the month range."""
    lo, hi = months
    month = (frame.timestamps.astype("datetime64[M]").astype(np.int64) % 12) + 1
    inside = (month >= lo) & (month <= hi)
    segments, start = [], None
    for i, flag in enumerate(inside):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            segments.append((start, i))
            start = None
    if start is not None:
        segments.append((start, len(inside)))
    return segments


def prepare_data(frame: TimeSeriesFrame, split: SplitSpec, lookback: int = 5, horizon: int = 10,
                 target: str = TARGET, features=None) -> DataBundle:
    """Scale, window and partition an imputed frame.

    The scaler is fitted on rows before ``split.train_end`` only (for the
    seasonal strategy, on the in-season rows before it).  Seasonal windows
    never straddle the gap between seasons.
    """
    boundary = to_minute(split.train_end)
    if split.strategy == "seasonal":
        segments = _season_segments(frame, split.seasonal_months)
    else:
        segments = [(0, len(frame))]

    fit_rows = np.zeros(len(frame), dtype=bool)
    for lo, hi in segments:
        fit_rows[lo:hi] = True
    fit_rows &= frame.timestamps < boundary
    if not fit_rows.any():
        raise SplitError(f"no training rows before {boundary}")
    scaler = minmax_fit(frame.select(fit_rows))
    scaled = minmax_apply(frame, scaler)

    parts = []
    for lo, hi in segments:
        if hi - lo >= lookback + horizon:
            parts.append(build_windows(scaled.select(slice(lo, hi)), lookback, horizon, split.mode,
                                       target, features, index_offset=lo))
    if not parts:
        raise SplitError("no segment is long enough to build a single window")
    windows = concat_datasets(parts)
    train_set, holdout = chronological_split(windows, frame, boundary)
    validation, test = halve_for_validation(holdout)
    return DataBundle(train_set, validation, test, scaler, frame, split, target)


# --------------------------------------------------------------------------
# Repeated trials
# --------------------------------------------------------------------------


@dataclass
class TrialResult:
    trial: int
    seed: int
    metrics: dict = field(default_factory=dict)  # label -> HorizonMetrics
    model: TrainedModel | None = None
    error: str | None = None

    @property
    def diverged(self) -> bool:
        return self.error is not None


@dataclass
class ExperimentSummary:
    """Mean and 95% half-width per metric over the non-diverged trials."""

    metrics: dict  # name -> (mean, half_width)
    trials: int
    diverged: int
    horizon: int
    config: dict
    trial_results: list = field(default_factory=list, repr=False)

    def row_names(self):
        return ["Train", "Test"] + [f"Step-{h + 1}" for h in range(self.horizon)]

    def write_csv(self, stream, label: str = "value"):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["metric", f"{label}_mean", f"{label}_half_width"])
        for name in self.row_names():
            mean, half = self.metrics.get(name, (math.nan, math.nan))
            writer.writerow([name, f"{mean:.6f}", f"{half:.6f}"])


def _thread_count(requested=None):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return 1


def _run_one(bundle: DataBundle, spec: ModelSpec, config: TrainingConfig, trial: int) -> TrialResult:
    seed = config.base_seed + trial
    model = build_model(spec, seed, bundle.scaler)
    model = replace(model, target=bundle.target)
    try:
        model = train(model, bundle.train, config)
    except DivergenceError as exc:
        return TrialResult(trial, seed, error=str(exc))
    metrics = {}
    for label, dataset in (("train", bundle.train), ("validation", bundle.validation), ("test", bundle.test)):
        _, denorm = predict_batch(model, dataset)
        actual = model.unscale_target(dataset.targets)
        if not np.all(np.isfinite(denorm)):
            return TrialResult(trial, seed, error=f"non-finite predictions on {label} set")
        metrics[label] = horizon_rmse(denorm, actual, label)
    return TrialResult(trial, seed, metrics, model)


def run_trials(bundle: DataBundle, spec: ModelSpec, config: TrainingConfig, threads=None,
               keep_models: bool = False) -> ExperimentSummary:
    """Train ``config.trials`` independent models (seed = base_seed + k) and aggregate RMSE.

    RMSE is measured in denormalized target units.  Trials run on up to
    ``threads`` workers (default: ``$AQCAST_THREADS`` or 1); results are
    folded in trial order so serial and parallel runs agree exactly.
    """
    if bundle.train.n_features != spec.n_features:
        raise ShapeError(f"data has {bundle.train.n_features} input features, spec expects {spec.n_features}")
    workers = min(_thread_count(threads), config.trials)
    if workers == 1:
        results = [_run_one(bundle, spec, config, k) for k in range(config.trials)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda k: _run_one(bundle, spec, config, k), range(config.trials)))
    return summarize(results, spec, config, keep_models)


def summarize(results, spec: ModelSpec, config: TrainingConfig, keep_models: bool = False) -> ExperimentSummary:
    results = sorted(results, key=lambda r: r.trial)
    ok = [r for r in results if not r.diverged]
    metrics = {}
    if ok:
        metrics["Train"] = confidence_interval([r.metrics["train"].overall_rmse for r in ok])
        metrics["Validation"] = confidence_interval([r.metrics["validation"].overall_rmse for r in ok])
        metrics["Test"] = confidence_interval([r.metrics["test"].overall_rmse for r in ok])
        for h in range(spec.horizon):
            metrics[f"Step-{h + 1}"] = confidence_interval([r.metrics["test"].per_horizon_rmse[h] for r in ok])
    if not keep_models:
        results = [replace(r, model=None) for r in results]
    snapshot = {
        "spec": spec.to_dict(),
        "epochs": config.epochs, "batch_size": config.batch_size,
        "learning_rate": config.learning_rate, "beta1": config.beta1, "beta2": config.beta2,
        "epsilon": config.epsilon, "trials": config.trials, "base_seed": config.base_seed,
        "shuffle_seed": config.shuffle_seed,
    }
    return ExperimentSummary(metrics, len(results), len(results) - len(ok), spec.horizon, snapshot, results)


# --------------------------------------------------------------------------
# Recursive forecasting
# --------------------------------------------------------------------------


@dataclass
class ForecastResult:
    timestamps: np.ndarray
    mean: np.ndarray
    half_width_95: np.ndarray
    trajectories: np.ndarray  # (trials, steps), denormalized
    invocations: int = 0

    def __len__(self):
        return len(self.mean)

    def write_csv(self, stream):
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["timestamp", "mean", "lower95", "upper95"])
        for ts, m, h in zip(self.timestamps, self.mean, self.half_width_95):
            writer.writerow([format_timestamp(ts), f"{m:.6f}", f"{m - h:.6f}", f"{m + h:.6f}"])


def _future_timestamps(last, steps):
    if last is None:
        return np.array([], dtype="datetime64[m]")
    return to_minute(last) + np.arange(1, steps + 1) * np.timedelta64(STEP_HOURS * 60, "m")


def recursive_forecast(model, seed_window, steps: int, last_timestamp=None) -> ForecastResult:
    """Forecast ``steps`` values by feeding each N_out-block of predictions back as input.

    ``seed_window`` holds the latest N scaled target values.  The window
    slides by N_out per model call and the tail of the final call is dropped.
    """
    spec = model.spec
    if spec.n_features != 1:
        raise UnsupportedModeError("recursive forecasting needs a univariate model "
                                   "(no feedback policy for exogenous features)")
    if steps < 1:
        raise ShapeError(f"steps must be >= 1, got {steps}")
    history = [float(v) for v in np.asarray(seed_window, dtype=np.float64).ravel()]
    if len(history) != spec.lookback:
        raise ShapeError(f"seed window must hold {spec.lookback} values, got {len(history)}")
    produced, calls = [], 0
    while len(produced) < steps:
        window = np.array(history[-spec.lookback:]).reshape(1, spec.lookback, 1)
        block = np.asarray(model.predict(window), dtype=np.float64).reshape(-1)
        calls += 1
        produced.extend(block.tolist())
        history.extend(block.tolist())
    scaled = np.array(produced[:steps])
    values = model.unscale_target(scaled)
    return ForecastResult(_future_timestamps(last_timestamp, steps), values,
                          np.zeros(steps), values[None, :], calls)


def forecast_with_uncertainty(models, seed_window, steps: int, last_timestamp=None) -> ForecastResult:
    """Per-step mean and 95% half-width over one recursive trajectory per model."""
    models = list(models)
    if not models:
        raise ConfigError("at least one trained model is required")
    spec = models[0].spec
    for m in models[1:]:
        if m.spec != spec:
            raise ConfigError(f"model specs differ: {m.spec} vs {spec}")
    runs = [recursive_forecast(m, seed_window, steps, last_timestamp) for m in models]
    paths = np.vstack([r.trajectories for r in runs])
    stats = [confidence_interval(paths[:, j]) for j in range(steps)]
    mean = np.array([s[0] for s in stats])
    half = np.array([s[1] for s in stats])
    return ForecastResult(runs[0].timestamps, mean, half, paths, sum(r.invocations for r in runs))


def seed_window_from(frame: TimeSeriesFrame, scaler: ScalerParams, lookback: int, target: str = TARGET):
    """Scaled target values of the latest ``lookback`` rows."""
    if len(frame) < lookback:
        raise ShapeError(f"frame has {len(frame)} rows, need {lookback} for the seed window")
    return scaler.scale(target, frame.column(target)[-lookback:])
