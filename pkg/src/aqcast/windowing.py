"""Sliding-window datasets and the train / validation / test partitions."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError, ShapeError, SplitError
from .station_data import TARGET, TimeSeriesFrame, to_minute

MULTIVARIATE = "multivariate"
UNIVARIATE = "univariate"
MODES = (MULTIVARIATE, UNIVARIATE)
STRATEGIES = ("plain", "shuffled", "seasonal")


@dataclass(frozen=True, eq=False)
class WindowedDataset:
    """``inputs`` is (M, N, F_in); ``targets`` is (M, N_out) of the target feature."""

    inputs: np.ndarray
    targets: np.ndarray
    window_start_indices: np.ndarray
    lookback: int
    horizon: int
    input_features: tuple = ()

    def __post_init__(self):
        inputs = np.asarray(self.inputs, dtype=np.float64)
        targets = np.asarray(self.targets, dtype=np.float64)
        starts = np.asarray(self.window_start_indices, dtype=np.int64)
        m = len(starts)
        if inputs.ndim != 3 or inputs.shape[:2] != (m, self.lookback):
            raise ShapeError(f"inputs shape {inputs.shape} inconsistent with M={m}, N={self.lookback}")
        if targets.shape != (m, self.horizon):
            raise ShapeError(f"targets shape {targets.shape} inconsistent with M={m}, N_out={self.horizon}")
        for name, arr in (("inputs", inputs), ("targets", targets), ("window_start_indices", starts)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "input_features", tuple(self.input_features))

    def __len__(self):
        return len(self.window_start_indices)

    @property
    def n_features(self) -> int:
        return self.inputs.shape[2]

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return WindowedDataset(
            self.inputs[idx], self.targets[idx], self.window_start_indices[idx],
            self.lookback, self.horizon, self.input_features,
        )


def empty_like(dataset: WindowedDataset) -> WindowedDataset:
    return dataset.subset(np.array([], dtype=np.int64))


def concat_datasets(parts) -> WindowedDataset:
    parts = list(parts)
    first = parts[0]
    return WindowedDataset(
        np.concatenate([p.inputs for p in parts]),
        np.concatenate([p.targets for p in parts]),
        np.concatenate([p.window_start_indices for p in parts]),
        first.lookback, first.horizon, first.input_features,
    )


def input_features_for(frame: TimeSeriesFrame, mode: str, target: str = TARGET, features=None):
    """Resolve the input columns: every non-target column (multivariate) or the target alone."""
    if mode == UNIVARIATE:
        return (target,)
    if mode != MULTIVARIATE:
        raise ConfigError(f"unknown mode {mode!r}")
    if features:
        return tuple(features)
    return tuple(n for n in frame.feature_names if n != target)


def build_windows(frame: TimeSeriesFrame, lookback: int, horizon: int, mode: str = MULTIVARIATE,
                  target: str = TARGET, features=None, index_offset: int = 0) -> WindowedDataset:
    """Cut ``frame`` into M = T - N - N_out + 1 overlapping windows.

    Window ``i`` reads rows ``[i, i+N)`` of the input features and targets the
    ``target`` column at rows ``[i+N, i+N+N_out)``.
    """
    if lookback < 1 or horizon < 1:
        raise ShapeError("lookback and horizon must be positive")
    n_rows = len(frame)
    if n_rows < lookback + horizon:
        raise InsufficientDataError(
            f"series of length {n_rows} is shorter than lookback + horizon = {lookback + horizon}"
        )
    names = input_features_for(frame, mode, target, features)
    cols = [frame.feature_names.index(n) for n in names]
    x = frame.values[:, cols]
    y = frame.column(target)
    m = n_rows - lookback - horizon + 1
    steps = np.arange(m)[:, None]
    inputs = x[steps + np.arange(lookback)[None, :]]
    targets = y[steps + lookback + np.arange(horizon)[None, :]]
    return WindowedDataset(inputs, targets, np.arange(m) + index_offset, lookback, horizon, names)


@dataclass(frozen=True)
class SplitSpec:
    train_end: object
    mode: str = MULTIVARIATE
    strategy: str = "plain"
    seasonal_months: tuple | None = None
    shuffle_seed: int | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.strategy == "shuffled" and self.shuffle_seed is None:
            raise ConfigError("shuffled strategy requires shuffle_seed")
        if self.strategy == "seasonal":
            if self.seasonal_months is None:
                raise ConfigError("seasonal strategy requires seasonal_months")
            lo, hi = self.seasonal_months
            if not 1 <= lo <= hi <= 12:
                raise ConfigError(f"invalid seasonal_months {self.seasonal_months}")


def chronological_split(dataset: WindowedDataset, frame: TimeSeriesFrame, boundary):
    """Partition windows by whether their last target timestamp precedes ``boundary``."""
    boundary = to_minute(boundary)
    last_rows = dataset.window_start_indices + dataset.lookback + dataset.horizon - 1
    in_train = frame.timestamps[last_rows] < boundary
    train_idx = np.nonzero(in_train)[0]
    hold_idx = np.nonzero(~in_train)[0]
    if train_idx.size == 0:
        raise SplitError(f"boundary {boundary} leaves the training partition empty")
    if hold_idx.size == 0:
        raise SplitError(f"boundary {boundary} leaves the holdout partition empty")
    return dataset.subset(train_idx), dataset.subset(hold_idx)


def halve_for_validation(holdout: WindowedDataset):
    """Earlier ceil(M/2) windows become validation, the rest test."""
    m = len(holdout)
    if m < 2:
        raise SplitError(f"need at least 2 holdout windows to split, got {m}")
    cut = (m + 1) // 2
    return holdout.subset(np.arange(cut)), holdout.subset(np.arange(cut, m))


def shuffle_windows(dataset: WindowedDataset, seed: int) -> WindowedDataset:
    """Seeded Fisher-Yates permutation (numpy PCG64) of whole windows."""
    order = np.arange(len(dataset))
    np.random.default_rng(seed).shuffle(order)
    return dataset.subset(order)


def dump_windows_csv(dataset: WindowedDataset, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["window_index", "step", "feature", "value"])
    names = dataset.input_features or tuple(f"f{j}" for j in range(dataset.n_features))
    for i, start in enumerate(dataset.window_start_indices):
        for step in range(dataset.lookback):
            for j, name in enumerate(names):
                writer.writerow([int(start), step, name, repr(float(dataset.inputs[i, step, j]))])
