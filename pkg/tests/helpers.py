"""Synthetic frames shared by the test modules."""

import io

import numpy as np

from aqcast.station_data import FEATURES, TimeSeriesFrame, write_station_csv

STEP = np.timedelta64(8 * 60, "m")


def make_frame(values, start="2019-01-01T00:00", names=None, station="synthetic"):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    if names is None:
        names = FEATURES if values.shape[1] == len(FEATURES) else tuple(f"f{j}" for j in range(values.shape[1]))
    stamps = np.datetime64(start, "m") + np.arange(values.shape[0]) * STEP
    return TimeSeriesFrame(station, stamps, names, values)


def station_frame(n_rows, seed=0, start="2019-01-01T00:00"):
    """Random positive readings for all 12 schema columns."""
    rng = np.random.default_rng(seed)
    return make_frame(rng.uniform(1.0, 100.0, size=(n_rows, len(FEATURES))), start)


def frame_csv(frame) -> str:
    buf = io.StringIO()
    write_station_csv(frame, buf)
    return buf.getvalue()
