"""Station CSV ingestion, gap repair, scaling and descriptive statistics.

Frames keep missing values as NaN until :func:`impute_neighbor_median` has
run.  Timestamps are ``datetime64[m]`` arrays at an 8-hour cadence.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .errors import (
    ImputationError,
    InsufficientDataError,
    OrderingError,
    ParseError,
    PreconditionError,
    RangeError,
    SchemaError,
    ShapeError,
)

FEATURES = (
    "PM10", "Benzene", "Toluene", "NH3", "NO", "NO2", "NOx",
    "WS", "Ozone", "SO2", "CO", "PM2.5",
)
TARGET = "PM2.5"
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"
MISSING_TOKENS = ("", "NA")
Z95 = 1.96


def to_minute(value) -> np.datetime64:
    """Coerce a string, datetime or datetime64 into ``datetime64[m]``."""
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[m]")
    if isinstance(value, datetime):
        return np.datetime64(value.replace(tzinfo=None), "m")
    return np.datetime64(str(value), "m")


def _freeze(array):
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class TimeSeriesFrame:
    """Multivariate series for one station: rows are timestamps, columns features."""

    station_name: str
    timestamps: np.ndarray
    feature_names: tuple
    values: np.ndarray

    def __post_init__(self):
        ts = np.array(self.timestamps, dtype="datetime64[m]")
        values = np.array(self.values, dtype=np.float64)
        names = tuple(self.feature_names)
        if values.ndim != 2 or values.shape != (len(ts), len(names)):
            raise ShapeError(
                f"values shape {values.shape} does not match "
                f"{len(ts)} timestamps x {len(names)} features"
            )
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate feature names in {names}")
        if len(ts) > 1:
            bad = np.nonzero(np.diff(ts) <= np.timedelta64(0, "m"))[0]
            if bad.size:
                raise OrderingError(f"timestamps not strictly increasing at row {int(bad[0]) + 1}")
        object.__setattr__(self, "timestamps", _freeze(ts))
        object.__setattr__(self, "values", _freeze(values))
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return len(self.timestamps)

    def __eq__(self, other):
        if not isinstance(other, TimeSeriesFrame):
            return NotImplemented
        return (
            self.station_name == other.station_name
            and self.feature_names == other.feature_names
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None

    def column(self, name: str) -> np.ndarray:
        try:
            return self.values[:, self.feature_names.index(name)]
        except ValueError:
            raise SchemaError(f"frame has no feature {name!r}") from None

    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def missing_count(self) -> int:
        return int(self.missing_mask().sum())

    def with_values(self, values) -> "TimeSeriesFrame":
        return TimeSeriesFrame(self.station_name, self.timestamps, self.feature_names, values)

    def select(self, rows) -> "TimeSeriesFrame":
        return TimeSeriesFrame(
            self.station_name, self.timestamps[rows], self.feature_names, self.values[rows]
        )


def parse_station_csv(source, station_name: str, columns=FEATURES) -> TimeSeriesFrame:
    """Read a station export.

    ``source`` may be a path, a text stream or a byte stream.  The header must
    be exactly ``timestamp`` followed by ``columns``; empty cells and ``NA``
    are treated as missing.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, "rb") as fh:
            return parse_station_csv(fh, station_name, columns)
    raw = source.read()
    text = raw.decode("utf-8-sig") if isinstance(raw, bytes) else raw
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty file: header row missing") from None

    expected = ["timestamp", *columns]
    if header != expected:
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        parts = []
        if missing:
            parts.append("missing column(s): " + ", ".join(missing))
        if extra:
            parts.append("unexpected column(s): " + ", ".join(extra))
        if not parts:
            parts.append("columns out of order; expected " + ",".join(expected))
        raise SchemaError("; ".join(parts))

    stamps, rows = [], []
    # line 1 is the header
    for line_no, record in enumerate(reader, start=2):
        if not record or all(not cell.strip() for cell in record):
            continue
        if len(record) != len(expected):
            raise ParseError(f"row {line_no}: expected {len(expected)} cells, got {len(record)}")
        try:
            stamps.append(np.datetime64(datetime.strptime(record[0].strip(), TIMESTAMP_FORMAT), "m"))
        except ValueError:
            raise ParseError(f"row {line_no}: bad timestamp {record[0]!r}") from None
        row = []
        for name, cell in zip(columns, record[1:]):
            cell = cell.strip()
            if cell in MISSING_TOKENS:
                row.append(math.nan)
                continue
            try:
                number = float(cell)
            except ValueError:
                raise ParseError(f"row {line_no}: non-numeric value {cell!r} in column {name}") from None
            if not math.isfinite(number):
                raise ParseError(f"row {line_no}: non-finite value {cell!r} in column {name}")
            row.append(number)
        rows.append(row)

    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
    return TimeSeriesFrame(station_name, np.array(stamps, dtype="datetime64[m]"), tuple(columns), values)


def format_timestamp(ts) -> str:
    return str(np.datetime64(ts, "m"))


def write_station_csv(frame: TimeSeriesFrame, stream) -> None:
    """Serialize ``frame`` in the canonical ingest format (exact float repr)."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["timestamp", *frame.feature_names])
    for ts, row in zip(frame.timestamps, frame.values):
        writer.writerow([format_timestamp(ts)] + ["" if math.isnan(v) else repr(float(v)) for v in row])


def impute_neighbor_median(frame: TimeSeriesFrame, k: int = 2) -> TimeSeriesFrame:
    """Fill each gap with the median of available values within ``k`` rows.

    Neighbors are read from the original (pre-imputation) values only, so the
    result does not depend on the order gaps are visited.
    """
    if k < 1:
        raise PreconditionError(f"neighbor radius k must be >= 1, got {k}")
    source = frame.values
    missing = np.isnan(source)
    if not missing.any():
        return frame
    out = source.copy()
    n_rows = source.shape[0]
    for t, f in zip(*np.nonzero(missing)):
        lo, hi = max(0, t - k), min(n_rows, t + k + 1)
        window = source[lo:hi, f]
        # row t itself is NaN, so nanmedian ignores it along with other gaps
        if np.isnan(window).all():
            raise ImputationError(int(t), frame.feature_names[f])
        out[t, f] = np.nanmedian(window)
    return frame.with_values(out)


@dataclass(frozen=True, eq=False)
class ScalerParams:
    feature_names: tuple
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        lo = np.array(self.minimum, dtype=np.float64)
        hi = np.array(self.maximum, dtype=np.float64)
        if lo.shape != (len(self.feature_names),) or hi.shape != lo.shape:
            raise ShapeError("scaler bounds must have one entry per feature")
        if np.any(hi < lo):
            raise PreconditionError("scaler maximum below minimum")
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "minimum", _freeze(lo))
        object.__setattr__(self, "maximum", _freeze(hi))

    def _index(self, name):
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise SchemaError(f"scaler has no feature {name!r}") from None

    def scale(self, name: str, values):
        i = self._index(name)
        span = self.maximum[i] - self.minimum[i]
        values = np.asarray(values, dtype=np.float64)
        if span == 0:
            return np.zeros_like(values)
        return (values - self.minimum[i]) / span

    def unscale(self, name: str, values):
        i = self._index(name)
        values = np.asarray(values, dtype=np.float64)
        return values * (self.maximum[i] - self.minimum[i]) + self.minimum[i]

    def to_dict(self):
        return {
            "feature_names": list(self.feature_names),
            "minimum": [float(v) for v in self.minimum],
            "maximum": [float(v) for v in self.maximum],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(data["feature_names"]), data["minimum"], data["maximum"])


def _require_complete(frame, what):
    if frame.missing_mask().any():
        raise PreconditionError(f"{what} requires a frame without missing values")


def minmax_fit(frame: TimeSeriesFrame) -> ScalerParams:
    _require_complete(frame, "minmax_fit")
    if len(frame) == 0:
        raise InsufficientDataError("cannot fit a scaler on an empty frame")
    return ScalerParams(frame.feature_names, frame.values.min(axis=0), frame.values.max(axis=0))


def _transform(frame, scaler, fn, what):
    _require_complete(frame, what)
    if set(frame.feature_names) != set(scaler.feature_names):
        raise SchemaError(
            f"scaler features {scaler.feature_names} do not match frame features {frame.feature_names}"
        )
    out = np.column_stack([fn(name, frame.values[:, j]) for j, name in enumerate(frame.feature_names)])
    return frame.with_values(out.reshape(frame.values.shape))


def minmax_apply(frame: TimeSeriesFrame, scaler: ScalerParams) -> TimeSeriesFrame:
    return _transform(frame, scaler, scaler.scale, "minmax_apply")


def minmax_invert(frame: TimeSeriesFrame, scaler: ScalerParams) -> TimeSeriesFrame:
    return _transform(frame, scaler, scaler.unscale, "minmax_invert")


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Pearson coefficients; ``undefined[i, j]`` marks pairs with a constant feature (stored as 0)."""

    feature_names: tuple
    coefficients: np.ndarray
    undefined: np.ndarray

    def get(self, a: str, b: str) -> float:
        return float(self.coefficients[self.feature_names.index(a), self.feature_names.index(b)])


def pearson_matrix(frame: TimeSeriesFrame) -> CorrelationMatrix:
    _require_complete(frame, "pearson_matrix")
    if len(frame) < 2:
        raise InsufficientDataError("Pearson correlation needs at least 2 rows")
    centered = frame.values - frame.values.mean(axis=0)
    norms = np.sqrt((centered ** 2).sum(axis=0))
    flat = norms == 0
    undefined = flat[:, None] | flat[None, :]
    safe = np.where(flat, 1.0, norms)
    coef = (centered.T @ centered) / np.outer(safe, safe)
    coef = np.clip((coef + coef.T) / 2.0, -1.0, 1.0)
    coef[undefined] = 0.0
    return CorrelationMatrix(frame.feature_names, _freeze(coef), _freeze(undefined))


def write_correlation_csv(matrix: CorrelationMatrix, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["feature", *matrix.feature_names])
    for name, row in zip(matrix.feature_names, matrix.coefficients):
        writer.writerow([name] + [f"{v:.6f}" for v in row])


def correlation_records(matrix: CorrelationMatrix):
    """One JSON-ready dict per unordered feature pair."""
    names = matrix.feature_names
    for i in range(len(names)):
        for j in range(i, len(names)):
            yield {
                "a": names[i],
                "b": names[j],
                "coefficient": float(matrix.coefficients[i, j]),
                "undefined": bool(matrix.undefined[i, j]),
            }


def confidence_interval(samples):
    """Return ``(mean, half_width)`` of the normal-approximation 95% interval.

    ``half_width = 1.96 * s / sqrt(n)`` with ``s`` the n-1 standard deviation;
    a single sample gives a half-width of 0.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n == 0:
        raise ShapeError("confidence interval of an empty sample")
    if np.all(x == x[0]):
        # avoids a rounding residue in the mean (3 * 0.4 / 3 != 0.4)
        return float(x[0]), 0.0
    mean = float(x.mean())
    # one square root instead of two: {4, 6} gives exactly 1.96
    return mean, float(Z95 * math.sqrt(x.var(ddof=1) / n))


@dataclass(frozen=True)
class PeriodSummary:
    feature: str
    period: tuple
    mean: float
    half_width_95: float
    sample_count: int

    def to_record(self, station=None):
        record = {} if station is None else {"station": station}
        record.update(
            feature=self.feature,
            start=format_timestamp(self.period[0]),
            end=format_timestamp(self.period[1]),
            mean=self.mean,
            half_width_95=self.half_width_95,
            sample_count=self.sample_count,
        )
        return record

    def to_json(self, station=None) -> str:
        return json.dumps(self.to_record(station))


def period_stats(frame: TimeSeriesFrame, feature: str, start, end) -> PeriodSummary:
    """Mean and 95% half-width of ``feature`` over timestamps in ``[start, end]``."""
    start, end = to_minute(start), to_minute(end)
    in_range = (frame.timestamps >= start) & (frame.timestamps <= end)
    samples = frame.column(feature)[in_range]
    samples = samples[~np.isnan(samples)]
    if samples.size == 0:
        raise RangeError(f"no {feature} samples between {start} and {end}")
    mean, half = confidence_interval(samples)
    return PeriodSummary(feature, (start, end), mean, half, int(samples.size))


def seasonal_slice(frame: TimeSeriesFrame, start, end) -> TimeSeriesFrame:
    """Rows with timestamps in ``[start, end)``."""
    start, end = to_minute(start), to_minute(end)
    if not start < end:
        raise PreconditionError(f"slice start {start} must precede end {end}")
    keep = (frame.timestamps >= start) & (frame.timestamps < end)
    if not keep.any():
        raise RangeError(f"no rows between {start} and {end}")
    return frame.select(keep)
