"""Command line entry point: ``onenas run|baseline|synth|report``.

Set ``ONENAS_LOG`` (DEBUG, INFO, WARNING...) to change log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from onenas.baselines import BASELINE_METHODS, BaselineConfig, run_baseline
from onenas.data_io import SYNTHETIC, DataError, load_csv, write_csv
from onenas.engine import ConfigError, EngineConfig, load_config, run
from onenas.errors import OneNasError
from onenas.metrics import generation_win_rate, online_rmse_series

log = logging.getLogger("onenas")


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else EngineConfig()
    overrides = {k: v for k, v in (("seed", args.seed), ("workers", args.workers),
                                   ("mode", args.mode), ("pace_ms", args.pace_ms),
                                   ("generations", args.generations), ("data", args.data),
                                   ("target", args.target)) if v is not None}
    cfg = EngineConfig.from_mapping({**cfg.to_dict(), **overrides})
    if not cfg.data or not cfg.target:
        raise ConfigError("a data file and a target column are required (config or --data/--target)")
    series = load_csv(cfg.data, cfg.target)
    result = run(series, cfg, args.out_dir)
    err = result.predictions - result.actuals
    naive = result.naive_predictions - result.actuals
    print(f"generations: {len(result.reports)}  predictions: {err.size}")
    if err.size:
        print(f"online mse: {np.mean(err ** 2):.6g}  naive mse: {np.mean(naive ** 2):.6g}")
    print(f"logs written to {args.out_dir}")
    return 0


def _cmd_baseline(args) -> int:
    series = load_csv(args.data, args.target)
    values = series.target_series
    methods = BASELINE_METHODS if args.method == "all" else (args.method,)
    cfg = BaselineConfig(ma_window=args.window, alpha=args.alpha, ar_order=args.order,
                         differencing=args.differencing)
    columns = {m: run_baseline(values, m, cfg) for m in methods}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step_index", "actual", *methods])
        for i in range(1, len(values)):
            writer.writerow([i, repr(float(values[i])), *(repr(float(columns[m][i - 1])) for m in methods)])
    for m in methods:
        print(f"{m:10s} rmse {np.sqrt(np.mean((columns[m] - values[1:]) ** 2)):.6g}")
    return 0


def _cmd_synth(args) -> int:
    series = SYNTHETIC[args.kind](args.steps, seed=args.seed)
    write_csv(series, args.out)
    print(f"wrote {len(series)} rows of {args.kind} to {args.out} (target column {series.target!r})")
    return 0


def _read_predictions(path: Path):
    rows = defaultdict(lambda: ([], [], [], []))
    with path.open(newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            idx, gen, actual, pred = rows[rec["method"]]
            idx.append(int(rec["step_index"]))
            gen.append(int(rec["generation"]))
            actual.append(float(rec["actual"]))
            pred.append(float(rec["predicted"]))
    return {m: tuple(np.array(c) for c in cols) for m, cols in rows.items()}


def _cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    pred_path = run_dir / "predictions.csv"
    if not pred_path.exists():
        raise DataError(f"{pred_path}: not found; is {run_dir} a run directory?")
    data = _read_predictions(pred_path)
    if "onenas" not in data or "naive" not in data:
        raise DataError(f"{pred_path}: needs both 'onenas' and 'naive' rows")
    cfg = json.loads((run_dir / "config.json").read_text())
    idx, gen, actual, pred = data["onenas"]
    naive = data["naive"][3]
    rmse = {m: online_rmse_series(d[3] - d[2]) for m, d in data.items()}
    wins = generation_win_rate(pred, naive, actual, cfg["p"])

    with (run_dir / "rmse_over_time.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step_index", *rmse])
        for k, i in enumerate(idx):
            writer.writerow([int(i), *(repr(float(r[k])) for r in rmse.values())])
    with (run_dir / "win_rate.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["generation", "win_rate"])
        for g, w in zip(np.unique(gen), wins):
            writer.writerow([int(g), repr(float(w))])
    half = len(actual) // 2
    summary = {
        "generations": int(len(wins)),
        "predictions": int(len(actual)),
        "online_mse": float(np.mean((pred - actual) ** 2)),
        "naive_mse": float(np.mean((naive - actual) ** 2)),
        "final_half_mse": float(np.mean((pred - actual)[half:] ** 2)),
        "final_half_naive_mse": float(np.mean((naive - actual)[half:] ** 2)),
        "mean_win_rate": float(wins.mean()),
    }
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    for k, v in summary.items():
        print(f"{k:22s} {v:.6g}" if isinstance(v, float) else f"{k:22s} {v}")
    if args.figures:
        _figures(run_dir, idx, rmse, np.unique(gen), wins)
    return 0


def _figures(run_dir: Path, idx, rmse, gens, wins) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    for method, series in rmse.items():
        ax.plot(idx, series, label=method)
    ax.set_xlabel("time step")
    ax.set_ylabel("online RMSE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(run_dir / "rmse_over_time.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(gens, wins)
    ax.set_xlabel("generation")
    ax.set_ylabel("win rate vs naive")
    ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(run_dir / "win_rate.png", dpi=120)
    plt.close(fig)
    print(f"figures written to {run_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="onenas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evolve RNNs online over a recorded CSV stream")
    p.add_argument("--config", help="flat TOML config file")
    p.add_argument("--data", help="CSV file (overrides the config)")
    p.add_argument("--target", help="target column (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--mode", choices=("replay", "paced"))
    p.add_argument("--pace-ms", type=float, dest="pace_ms")
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("baseline", help="run the simple and online ARIMA forecasters")
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--method", choices=(*BASELINE_METHODS, "all"), default="all")
    p.add_argument("--window", type=int, default=3)
    p.add_argument("--alpha", type=float, default=0.2)
    p.add_argument("--order", type=int, default=8)
    p.add_argument("--differencing", type=int, default=1)
    p.add_argument("--out", required=True, help="output CSV of per-step forecasts")
    p.set_defaults(func=_cmd_baseline)

    p = sub.add_parser("synth", help="write a synthetic stream to CSV")
    p.add_argument("kind", choices=sorted(SYNTHETIC))
    p.add_argument("--steps", type=int, default=12526)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("report", help="summarize a run directory into CSVs (and optional PNGs)")
    p.add_argument("run_dir")
    p.add_argument("--figures", action="store_true", help="also render PNG figures")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("ONENAS_LOG", "WARNING").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OneNasError, OSError) as exc:
        print(f"onenas: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
