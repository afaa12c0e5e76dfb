import csv
import json
from pathlib import Path

import numpy as np
import pytest

from aqcast.cli import main
from aqcast.station_data import FEATURES, parse_station_csv

from helpers import frame_csv, make_frame, station_frame


def write_frame(path, frame):
    path.write_text(frame_csv(frame))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def smooth_frame(n_rows=60, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n_rows)[:, None]
    values = 50 + 20 * np.sin(2 * np.pi * t / 9 + np.arange(12)) + rng.normal(scale=2.0, size=(n_rows, 12))
    return make_frame(values)


def write_config(tmp_path, data, **overrides):
    keys = {
        "input": data.name, "station": "Test", "model": "FNN", "mode": "univariate",
        "strategy": "plain", "train_end": "2019-01-15T00:00", "epochs": "2", "trials": "2",
        "batch_size": "8",
    }
    keys.update(overrides)
    path = tmp_path / "exp.cfg"
    path.write_text("# test run\n" + "\n".join(f"{k} = {v}" for k, v in keys.items()) + "\n")
    return path


class TestIngest:
    def test_repairs_and_reports(self, tmp_path, capsys):
        frame = station_frame(12)
        values = frame.values.copy()
        values[3, 0] = np.nan
        values[7, 11] = np.nan
        src = write_frame(tmp_path / "raw.csv", frame.with_values(values))
        assert main(["ingest", str(src), "--out-dir", str(tmp_path)]) == 0
        assert "repaired 2" in capsys.readouterr().out
        clean = parse_station_csv(tmp_path / "raw_clean.csv", "raw")
        assert clean.missing_count == 0

    def test_idempotent(self, tmp_path, capsys):
        src = write_frame(tmp_path / "a.csv", station_frame(10))
        main(["ingest", str(src), "--output", str(tmp_path / "b.csv")])
        main(["ingest", str(tmp_path / "b.csv"), "--output", str(tmp_path / "c.csv")])
        assert "repaired 0" in capsys.readouterr().out
        assert (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()

    def test_unknown_column(self, tmp_path, capsys):
        src = tmp_path / "bad.csv"
        src.write_text("timestamp," + ",".join(FEATURES) + ",Humidity\n")
        assert main(["ingest", str(src)]) != 0
        assert "Humidity" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["ingest", str(tmp_path / "nope.csv")]) != 0


class TestStats:
    def test_four_stations(self, tmp_path, capsys):
        args = ["stats", "--from", "2019-01-01", "--to", "2019-01-05", "--out-dir", str(tmp_path)]
        for k in range(4):
            path = write_frame(tmp_path / f"s{k}.csv", station_frame(20, seed=k))
            args += ["--input", f"Station {k}={path}"]
        assert main(args) == 0
        rows = read_csv(tmp_path / "period_stats.csv")
        assert rows[0] == ["station", "feature", "start", "end", "mean", "interval", "samples"]
        assert [r[0] for r in rows[1:]] == [f"Station {k}" for k in range(4)]
        # 2019-01-01T00:00 through 2019-01-05T00:00 inclusive, every 8 hours
        assert all(r[6] == "13" for r in rows[1:])
        lines = (tmp_path / "period_stats.jsonl").read_text().splitlines()
        assert json.loads(lines[2])["station"] == "Station 2"

    def test_constant_feature_has_zero_interval(self, tmp_path, capsys):
        path = write_frame(tmp_path / "c.csv", make_frame(np.full((10, 12), 7.0)))
        assert main(["stats", "--input", str(path), "--from", "2019-01-01", "--to", "2019-02-01",
                     "--out-dir", str(tmp_path)]) == 0
        row = read_csv(tmp_path / "period_stats.csv")[1]
        assert (row[4], row[5]) == ("7.00", "0.00")

    def test_empty_range(self, tmp_path):
        path = write_frame(tmp_path / "c.csv", station_frame(10))
        assert main(["stats", "--input", str(path), "--from", "2025-01-01", "--to", "2025-02-01",
                     "--out-dir", str(tmp_path)]) != 0


class TestCorrelate:
    def test_matrix(self, tmp_path, capsys):
        values = station_frame(40, seed=1).values.copy()
        values[:, 1] = values[:, 0]
        values[:, 2] = -values[:, 0]
        path = write_frame(tmp_path / "st.csv", make_frame(values))
        assert main(["correlate", "--input", f"Anand Vihar={path}", "--out-dir", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "correlation_Anand_Vihar.csv")
        assert rows[0][1:] == list(FEATURES)
        m = np.array([[float(c) for c in r[1:]] for r in rows[1:]])
        assert np.array_equal(m, m.T)
        assert m[0, 1] == pytest.approx(1.0, abs=1e-12)
        assert m[0, 2] == pytest.approx(-1.0, abs=1e-12)

    def test_requires_ingested_data(self, tmp_path, capsys):
        values = station_frame(10).values.copy()
        values[2, 2] = np.nan
        path = write_frame(tmp_path / "st.csv", make_frame(values))
        assert main(["correlate", "--input", str(path)]) != 0
        assert "ingest" in capsys.readouterr().err


class TestExperiment:
    def test_smoke(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(60))
        cfg = write_config(tmp_path, data)
        out = tmp_path / "out"
        assert main(["experiment", "--config", str(cfg), "--out-dir", str(out)]) == 0
        rows = read_csv(out / "metrics_FNN-univariate-plain.csv")
        assert [r[0] for r in rows[1:3]] == ["Train", "Test"]
        assert len(rows) == 1 + 2 + 10
        assert len(list((out / "checkpoints" / "FNN-univariate-plain").glob("*.json"))) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [0, 1]
        assert all(Path(p).exists() for p in manifest["outputs"])

    def test_rerun_is_byte_identical(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(60))
        cfg = write_config(tmp_path, data, model="FNN, LSTM", strategy="plain, shuffled")
        for name in ("a", "b"):
            assert main(["experiment", "--config", str(cfg), "--out-dir", str(tmp_path / name), "--seed", "3"]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) > 5
        for rel in files:
            if rel.name == "manifest.json":
                continue
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_seasonal_without_months(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(60))
        cfg = write_config(tmp_path, data, strategy="seasonal")
        assert main(["experiment", "--config", str(cfg), "--out-dir", str(tmp_path)]) != 0
        assert "seasonal_months" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(60))
        cfg = write_config(tmp_path, data, dropout="0.2")
        assert main(["experiment", "--config", str(cfg)]) != 0
        assert "dropout" in capsys.readouterr().err


class TestForecast:
    def test_default_horizon_from_config(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(40))
        cfg = write_config(tmp_path, data)
        assert main(["forecast", "--config", str(cfg), "--out-dir", str(tmp_path), "--trials", "2"]) == 0
        rows = read_csv(tmp_path / "forecast.csv")
        assert rows[0] == ["timestamp", "mean", "lower95", "upper95"]
        assert len(rows) == 1 + 90
        assert "9 invocations each" in capsys.readouterr().out

    def test_single_trial_band_collapses(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(40))
        cfg = write_config(tmp_path, data)
        assert main(["forecast", "--config", str(cfg), "--out-dir", str(tmp_path), "--trials", "1"]) == 0
        for _, mean, lo, hi in read_csv(tmp_path / "forecast.csv")[1:]:
            assert lo == mean == hi

    def test_from_checkpoints(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(60))
        cfg = write_config(tmp_path, data)
        main(["experiment", "--config", str(cfg), "--out-dir", str(tmp_path / "run")])
        ckpts = tmp_path / "run" / "checkpoints" / "FNN-univariate-plain"
        assert main(["forecast", "--checkpoints", str(ckpts), "--input", str(data),
                     "--steps", "12", "--out-dir", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "forecast.csv")
        assert len(rows) == 13
        traj = np.loadtxt(tmp_path / "forecast_trajectories.csv", delimiter=",")
        assert traj.shape == (2, 12)

    def test_multivariate_checkpoint_rejected(self, tmp_path, capsys):
        data = write_frame(tmp_path / "st.csv", smooth_frame(60))
        cfg = write_config(tmp_path, data, mode="multivariate")
        main(["experiment", "--config", str(cfg), "--out-dir", str(tmp_path / "run")])
        ckpts = tmp_path / "run" / "checkpoints" / "FNN-multivariate-plain"
        assert main(["forecast", "--checkpoints", str(ckpts), "--input", str(data),
                     "--out-dir", str(tmp_path)]) != 0
        assert "univariate" in capsys.readouterr().err


class TestDescribe:
    def test_all_kinds(self, capsys):
        assert main(["describe"]) == 0
        out = capsys.readouterr().out
        assert "FNN: lookback=5 features=11 horizon=10 input_width=55" in out
        # LSTM, both BDLSTM directions and the EDLSTM encoder
        assert out.count("params=12400") == 4

    def test_single_kind(self, capsys):
        assert main(["describe", "--model", "EDLSTM"]) == 0
        out = capsys.readouterr().out
        assert "encoder" in out and "decoder" in out
