import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aqcast.errors import ConfigError, InsufficientDataError, SplitError
from aqcast.station_data import FEATURES
from aqcast.windowing import (
    SplitSpec,
    build_windows,
    chronological_split,
    dump_windows_csv,
    halve_for_validation,
    shuffle_windows,
)

from helpers import make_frame, station_frame


def brute_force_windows(values, names, n, n_out, inputs, target="PM2.5"):
    """Enumerate every valid offset explicitly."""
    xs, ys, starts = [], [], []
    offset = 0
    while offset + n + n_out <= len(values):
        xs.append([[values[offset + j][names.index(f)] for f in inputs] for j in range(n)])
        ys.append([values[offset + n + h][names.index(target)] for h in range(n_out)])
        starts.append(offset)
        offset += 1
    return np.array(xs), np.array(ys), starts


class TestBuildWindows:
    def test_twenty_rows(self):
        frame = station_frame(20)
        ds = build_windows(frame, 5, 10)
        assert len(ds) == 6
        assert ds.inputs.shape == (6, 5, 11)
        assert ds.targets.shape == (6, 10)
        pm = FEATURES.index("PM2.5")
        inputs = [j for j in range(12) if j != pm]
        assert np.array_equal(ds.inputs[0], frame.values[0:5][:, inputs])
        assert np.array_equal(ds.targets[0], frame.values[5:15, pm])

    def test_boundary_length(self):
        assert len(build_windows(station_frame(15), 5, 10)) == 1

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            build_windows(station_frame(14), 5, 10)

    def test_univariate_uses_target_only(self):
        frame = station_frame(20)
        ds = build_windows(frame, 5, 10, "univariate")
        assert ds.n_features == 1
        assert np.array_equal(ds.inputs[3, :, 0], frame.column("PM2.5")[3:8])

    def test_configurable_features(self):
        ds = build_windows(station_frame(20), 5, 10, features=("PM10", "NO2"))
        assert ds.input_features == ("PM10", "NO2")

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 40), st.integers(1, 8), st.integers(1, 12), st.integers(0, 10_000))
    def test_matches_brute_force(self, t, n, n_out, seed):
        frame = station_frame(t, seed=seed)
        if t < n + n_out:
            with pytest.raises(InsufficientDataError):
                build_windows(frame, n, n_out)
            return
        ds = build_windows(frame, n, n_out)
        names = list(FEATURES)
        xs, ys, starts = brute_force_windows(frame.values.tolist(), names, n, n_out, list(ds.input_features))
        assert len(ds) == t - n - n_out + 1 == len(starts)
        assert np.array_equal(ds.inputs, xs)
        assert np.array_equal(ds.targets, ys)
        assert ds.window_start_indices.tolist() == starts

    def test_debug_dump(self):
        ds = build_windows(make_frame(np.arange(12.0), names=("PM2.5",)), 2, 3, "univariate")
        buf = io.StringIO()
        dump_windows_csv(ds, buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "window_index,step,feature,value"
        assert lines[1] == "0,0,PM2.5,0.0"
        assert len(lines) == 1 + len(ds) * 2


class TestChronologicalSplit:
    def test_split_between_windows(self):
        frame = station_frame(30)
        ds = build_windows(frame, 5, 10)
        # window i's last target row is i + 14; boundary between rows 14+i and 15+i
        for i in range(len(ds) - 1):
            last_i = frame.timestamps[i + 14]
            boundary = last_i + np.timedelta64(4 * 60, "m")
            train, hold = chronological_split(ds, frame, boundary)
            assert len(train) == i + 1
            assert len(hold) == len(ds) - i - 1

    def test_boundary_after_all_data(self):
        frame = station_frame(30)
        ds = build_windows(frame, 5, 10)
        with pytest.raises(SplitError):
            chronological_split(ds, frame, "2030-01-01T00:00")

    def test_boundary_before_all_data(self):
        frame = station_frame(30)
        with pytest.raises(SplitError):
            chronological_split(build_windows(frame, 5, 10), frame, "2000-01-01T00:00")

    def test_partition_property(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            t = int(rng.integers(17, 80))
            frame = station_frame(t, seed=int(rng.integers(1_000)))
            ds = build_windows(frame, 5, 10)
            row = int(rng.integers(0, t))
            boundary = frame.timestamps[row]
            last_rows = ds.window_start_indices + 14
            expected_train = {int(s) for s, r in zip(ds.window_start_indices, last_rows) if r < row}
            try:
                train, hold = chronological_split(ds, frame, boundary)
            except SplitError:
                assert not expected_train or len(expected_train) == len(ds)
                continue
            a = set(train.window_start_indices.tolist())
            b = set(hold.window_start_indices.tolist())
            assert a == expected_train
            assert not a & b
            assert a | b == set(ds.window_start_indices.tolist())


class TestHalve:
    @pytest.mark.parametrize("m,expected", [(10, (5, 5)), (11, (6, 5)), (2, (1, 1))])
    def test_sizes(self, m, expected):
        ds = build_windows(station_frame(m + 14), 5, 10)
        val, test = halve_for_validation(ds)
        assert (len(val), len(test)) == expected
        assert val.window_start_indices.max() < test.window_start_indices.min()

    def test_single_window(self):
        with pytest.raises(SplitError):
            halve_for_validation(build_windows(station_frame(15), 5, 10))


class TestShuffle:
    def setup_method(self):
        self.ds = build_windows(station_frame(114), 5, 10)

    def test_deterministic(self):
        a = shuffle_windows(self.ds, 7)
        b = shuffle_windows(self.ds, 7)
        assert np.array_equal(a.window_start_indices, b.window_start_indices)

    def test_permutation(self):
        out = shuffle_windows(self.ds, 7)
        assert sorted(out.window_start_indices.tolist()) == self.ds.window_start_indices.tolist()

    def test_pairs_stay_intact(self):
        out = shuffle_windows(self.ds, 3)
        for k, start in enumerate(out.window_start_indices):
            assert np.array_equal(out.targets[k], self.ds.targets[start])
            assert np.array_equal(out.inputs[k], self.ds.inputs[start])

    def test_seeds_differ(self):
        assert len(self.ds) == 100
        a = shuffle_windows(self.ds, 1).window_start_indices
        b = shuffle_windows(self.ds, 2).window_start_indices
        assert np.any(a != b)


class TestSplitSpec:
    def test_shuffled_needs_seed(self):
        with pytest.raises(ConfigError):
            SplitSpec("2020-06-01", strategy="shuffled")

    def test_seasonal_needs_months(self):
        with pytest.raises(ConfigError):
            SplitSpec("2020-06-01", strategy="seasonal")

    def test_valid(self):
        spec = SplitSpec("2020-06-01", "univariate", "seasonal", seasonal_months=(2, 9))
        assert spec.seasonal_months == (2, 9)
