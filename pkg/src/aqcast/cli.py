"""``aqcast`` command-line entry point.

Subcommands: ingest, stats, correlate, experiment, forecast, describe.
Every data output is deterministic given inputs, config and seed; only the
``created_at`` field of ``manifest.json`` varies between runs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import AqcastError, ConfigError
from .harness import forecast_with_uncertainty, prepare_data, run_trials, seed_window_from
from .models import KINDS, ModelSpec, TrainedModel, TrainingConfig, build_model, train
from .station_data import (
    TARGET,
    correlation_records,
    impute_neighbor_median,
    minmax_apply,
    minmax_fit,
    parse_station_csv,
    pearson_matrix,
    period_stats,
    write_correlation_csv,
    write_station_csv,
)
from .windowing import SplitSpec, build_windows

DEFAULT_TRAIN_END = "2020-06-01T00:00"
FORECAST_STEPS = 90


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _station_arg(value):
    """``NAME=PATH`` or bare ``PATH`` (station named after the file stem)."""
    if "=" in value:
        name, path = value.split("=", 1)
        return name.strip(), Path(path)
    return Path(value).stem, Path(value)


def _load_ingested(name, path):
    frame = parse_station_csv(path, name)
    if frame.missing_count:
        raise AqcastError(f"{path} still has {frame.missing_count} missing values; run 'aqcast ingest' first")
    return frame


def _write_manifest(out_dir: Path, command, config_path, inputs, seeds, outputs, extra=None):
    manifest = {
        "command": command,
        "config": config_path,
        "inputs": {str(p): _digest(p) for p in inputs},
        "seeds": list(seeds),
        "outputs": [str(p) for p in outputs],
        "tool_version": __version__,
        "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if extra:
        manifest.update(extra)
    missing = [p for p in outputs if not Path(p).exists()]
    if missing:
        raise AqcastError(f"declared outputs were not written: {missing}")
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    name = args.station or Path(args.input).stem
    raw = parse_station_csv(args.input, name)
    repaired = raw.missing_count
    frame = impute_neighbor_median(raw, args.k)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    output = Path(args.output) if args.output else out_dir / f"{Path(args.input).stem}_clean.csv"
    with open(output, "w", newline="") as fh:
        write_station_csv(frame, fh)
    print(f"station={name} rows={len(frame)} features={len(frame.feature_names)} repaired {repaired}")
    print(f"wrote {output}")
    return 0


def cmd_stats(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = []
    for spec in args.input:
        name, path = _station_arg(spec)
        frame = parse_station_csv(path, name)
        summaries.append((name, period_stats(frame, args.feature, args.start, args.end)))

    csv_path = out_dir / "period_stats.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["station", "feature", "start", "end", "mean", "interval", "samples"])
        for name, s in summaries:
            rec = s.to_record()
            writer.writerow([name, s.feature, rec["start"], rec["end"],
                             f"{s.mean:.2f}", f"{s.half_width_95:.2f}", s.sample_count])
    jsonl_path = out_dir / "period_stats.jsonl"
    with open(jsonl_path, "w") as fh:
        for name, s in summaries:
            fh.write(s.to_json(station=name) + "\n")
    for name, s in summaries:
        print(f"{name}: {s.feature} mean={s.mean:.2f} +/- {s.half_width_95:.2f} (n={s.sample_count})")
    return 0


def cmd_correlate(args) -> int:
    name, path = _station_arg(args.input)
    matrix = pearson_matrix(_load_ingested(name, path))
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = name.replace(" ", "_")
    csv_path = out_dir / f"correlation_{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        write_correlation_csv(matrix, fh)
    with open(out_dir / f"correlation_{stem}.jsonl", "w") as fh:
        for rec in correlation_records(matrix):
            fh.write(json.dumps(rec) + "\n")
    pairs = sorted(
        (r for r in correlation_records(matrix) if r["a"] != r["b"] and not r["undefined"]),
        key=lambda r: -r["coefficient"],
    )
    for r in pairs[:5]:
        print(f"{r['a']}-{r['b']}: {r['coefficient']:.3f}")
    print(f"wrote {csv_path}")
    return 0


def _resolve_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if cfg.input is None:
        raise ConfigError("config key 'input' is required")
    return cfg


def _frame_from_config(cfg: ExperimentConfig):
    frame = parse_station_csv(cfg.input, cfg.station or Path(cfg.input).stem)
    return impute_neighbor_median(frame, cfg.impute_k)


def cmd_experiment(args) -> int:
    cfg = _resolve_config(args)
    frame = _frame_from_config(cfg)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs, seeds, diverged = [], set(), {}
    table = {}
    for kind, mode, strategy in cfg.runs():
        label = f"{kind}-{mode}-{strategy}"
        split = SplitSpec(
            cfg.train_end or DEFAULT_TRAIN_END, mode, strategy,
            cfg.seasonal_months if strategy == "seasonal" else None,
            cfg.shuffle_seed if strategy == "shuffled" else None,
        )
        bundle = prepare_data(frame, split, cfg.lookback, cfg.horizon, TARGET, cfg.input_features)
        spec = ModelSpec(kind, cfg.lookback, bundle.train.n_features, cfg.horizon)
        tconf = TrainingConfig(
            epochs=cfg.epochs_for(mode, strategy), batch_size=cfg.batch_size,
            learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon,
            trials=cfg.trials, base_seed=cfg.seed, shuffle_seed=split.shuffle_seed, strategy=split,
        )
        summary = run_trials(bundle, spec, tconf, keep_models=True)
        diverged[label] = summary.diverged
        seeds.update(r.seed for r in summary.trial_results)
        table[label] = summary

        metrics_path = out_dir / f"metrics_{label}.csv"
        with open(metrics_path, "w", newline="") as fh:
            summary.write_csv(fh)
        loss_path = out_dir / f"loss_{label}.csv"
        with open(loss_path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["trial", "epoch", "loss"])
            for r in summary.trial_results:
                if r.model is None:
                    continue
                for epoch, loss in enumerate(r.model.loss_history):
                    writer.writerow([r.trial, epoch, repr(loss)])
        outputs += [metrics_path, loss_path]
        if cfg.checkpoints:
            ckpt_dir = out_dir / "checkpoints" / label
            ckpt_dir.mkdir(parents=True, exist_ok=True)
            for r in summary.trial_results:
                if r.model is not None:
                    path = ckpt_dir / f"trial_{r.trial:03d}.json"
                    with open(path, "w") as fh:
                        r.model.save(fh)
                    outputs.append(path)
        mean, half = summary.metrics.get("Test", (float("nan"), float("nan")))
        print(f"{label}: test RMSE {mean:.4f} +/- {half:.4f} ({summary.trials - summary.diverged} trials ok)")

    table_path = out_dir / "rmse_table.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        labels = list(table)
        writer.writerow(["metric"] + [f"{l}_{c}" for l in labels for c in ("mean", "half_width")])
        for row in next(iter(table.values())).row_names():
            cells = []
            for l in labels:
                mean, half = table[l].metrics.get(row, (float("nan"), float("nan")))
                cells += [f"{mean:.6f}", f"{half:.6f}"]
            writer.writerow([row] + cells)
    outputs.append(table_path)
    _write_manifest(out_dir, "experiment", cfg.source, [cfg.input], sorted(seeds), outputs,
                    {"diverged_trials": diverged,
                     "config_snapshot": {l: s.config for l, s in table.items()}})
    return 0


def _train_forecasters(cfg: ExperimentConfig, frame, trials):
    scaler = minmax_fit(frame)
    windows = build_windows(minmax_apply(frame, scaler), cfg.lookback, cfg.horizon, "univariate")
    kind = cfg.models[0]
    spec = ModelSpec(kind, cfg.lookback, 1, cfg.horizon)
    tconf = TrainingConfig(epochs=cfg.epochs_for("univariate", "plain"), batch_size=cfg.batch_size,
                           learning_rate=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2,
                           epsilon=cfg.epsilon, trials=trials, base_seed=cfg.seed)
    models = []
    for k in range(trials):
        models.append(train(build_model(spec, cfg.seed + k, scaler), windows, tconf))
    return models


def cmd_forecast(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs = []
    if args.checkpoints:
        paths = sorted(Path(args.checkpoints).glob("*.json"))
        if not paths:
            raise AqcastError(f"no checkpoints found in {args.checkpoints}")
        if args.trials:
            paths = paths[: args.trials]
        models = []
        for p in paths:
            with open(p) as fh:
                models.append(TrainedModel.load(fh))
        if not args.input:
            raise ConfigError("--input is required with --checkpoints (the seed window comes from it)")
        name, path = _station_arg(args.input)
        frame = _load_ingested(name, path)
        inputs.append(path)
    elif args.config:
        cfg = _resolve_config(args)
        if args.input:
            name, path = _station_arg(args.input)
            cfg.input = str(path)
        frame = _frame_from_config(cfg)
        inputs.append(cfg.input)
        models = _train_forecasters(cfg, frame, args.trials or cfg.trials)
    else:
        raise AqcastError("forecast needs --checkpoints DIR or --config FILE")

    first = models[0]
    window = seed_window_from(frame, first.scaler, first.spec.lookback, first.target)
    result = forecast_with_uncertainty(models, window, args.steps, frame.timestamps[-1])
    csv_path = out_dir / "forecast.csv"
    with open(csv_path, "w", newline="") as fh:
        result.write_csv(fh)
    traj_path = out_dir / "forecast_trajectories.csv"
    np.savetxt(traj_path, result.trajectories, delimiter=",", fmt="%.6f")
    _write_manifest(out_dir, "forecast", getattr(args, "config", None), inputs,
                    [m.seed for m in models], [csv_path, traj_path],
                    {"steps": args.steps, "trials": len(models), "model_invocations": result.invocations})
    print(f"forecast: {len(result)} steps from {len(models)} model(s), "
          f"{result.invocations // len(models)} invocations each")
    print(f"wrote {csv_path}")
    return 0


def cmd_describe(args) -> int:
    if args.checkpoint:
        with open(args.checkpoint) as fh:
            models = [TrainedModel.load(fh)]
    else:
        kinds = [args.model] if args.model else list(KINDS)
        models = [build_model(ModelSpec(k, args.lookback, args.features, args.horizon), 0) for k in kinds]
    for m in models:
        s = m.spec
        print(f"{s.kind}: lookback={s.lookback} features={s.n_features} horizon={s.horizon} "
              f"input_width={s.input_width if s.kind == 'FNN' else f'({s.lookback},{s.n_features})'} "
              f"total_params={m.param_count}")
        for row in m.describe():
            shapes = " ".join(f"{k}{list(v)}" for k, v in row["shapes"].items())
            print(f"  {row['layer']:<10} {row['kind']:<6} {row['n_in']}->{row['n_out']}  "
                  f"params={row['params']}  {shapes}")
    return 0


# --------------------------------------------------------------------------
# Argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base random seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS, help="directory for outputs (default: .)")
    common.add_argument("--config", default=argparse.SUPPRESS, help="experiment config file")

    parser = argparse.ArgumentParser(prog="aqcast", parents=[common],
                                     description="Multi-step PM2.5 forecasting with LSTM models.")
    parser.add_argument("--version", action="version", version=f"aqcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse, impute and write a canonical station CSV")
    p.add_argument("input")
    p.add_argument("--station")
    p.add_argument("--output")
    p.add_argument("-k", type=int, default=2, help="imputation neighbor radius (rows each side)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", parents=[common], help="period mean and 95%% interval per station")
    p.add_argument("--input", action="append", required=True, help="[NAME=]PATH, repeatable")
    p.add_argument("--feature", default=TARGET)
    p.add_argument("--from", dest="start", required=True)
    p.add_argument("--to", dest="end", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("correlate", parents=[common], help="Pearson correlation matrix of a station")
    p.add_argument("--input", required=True, help="[NAME=]PATH")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("experiment", parents=[common], help="run the configured strategy matrix")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("forecast", parents=[common], help="recursive forecast with a 95%% band")
    p.add_argument("--checkpoints", help="directory of trained model checkpoints")
    p.add_argument("--input", help="[NAME=]PATH of the ingested station CSV")
    p.add_argument("--steps", type=int, default=FORECAST_STEPS, help="8-hour steps (default 90 = 720 h)")
    p.add_argument("--trials", type=int, help="number of models to use or train")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("describe", parents=[common], help="layer shapes and parameter counts")
    p.add_argument("--model", choices=KINDS)
    p.add_argument("--checkpoint")
    p.add_argument("--lookback", type=int, default=5)
    p.add_argument("--features", type=int, default=11)
    p.add_argument("--horizon", type=int, default=10)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("seed", None), ("out_dir", "."), ("config", None)):
        if not hasattr(args, name):
            setattr(args, name, default)
    try:
        return args.func(args)
    except AqcastError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
