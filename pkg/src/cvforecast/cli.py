"""Command-line entry point: ``cvforecast <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np

from . import evaluation, runner, trajectory
from .errors import CvForecastError

log = logging.getLogger("cvforecast")


def _csv_list(cast=str):
    # Commas inside parentheses belong to the item, e.g. "arima(1,0,0)".
    def parse(text):
        return [cast(v.strip()) for v in re.split(r",(?![^()]*\))", text) if v.strip()]

    return parse


def _add_config_args(p):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--data", type=Path, help="trajectory CSV (default: synthetic data)")
    p.add_argument("--layout", choices=("native", "ngsim"))
    p.add_argument("--synthetic-seed", type=int)
    p.add_argument("--quantities", type=_csv_list())
    p.add_argument("--penetrations", type=_csv_list(float))
    p.add_argument("--filters", type=_csv_list())
    p.add_argument("--predictors", type=_csv_list())
    p.add_argument("--split", type=_csv_list(int), help="train,test frame counts")
    p.add_argument("--epochs", type=int)
    p.add_argument("--neurons", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lookback", type=int)
    p.add_argument("--stateful", action="store_true", default=None)
    p.add_argument("--root-seed", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--lag", type=int)
    p.add_argument("--ma-window", type=int)
    p.add_argument("--sampling-mode", choices=("per_frame", "persistent"))
    p.add_argument("--rmse-root-sum", action="store_true", default=None)
    p.add_argument("--formats", type=_csv_list())
    p.add_argument("--record-timing", action="store_true", default=None)
    p.add_argument("--save-models", action="store_true", default=None)
    p.add_argument("--workers", type=int, help="worker processes for grid cells")
    p.add_argument("-o", "--output-dir")


def build_config(args) -> runner.ExperimentConfig:
    """Config file values overridden by any flags given on the command line."""
    d = {}
    if args.config:
        d = json.loads(args.config.read_text(encoding="utf-8"))
    if args.data:
        d["data"] = {"path": str(args.data), "layout": args.layout or "native"}
    elif args.synthetic_seed is not None:
        d.setdefault("data", {"synthetic": {}})
        d["data"].setdefault("synthetic", {})["rng_seed"] = args.synthetic_seed
    simple = {
        "quantities": args.quantities, "penetrations": args.penetrations, "filters": args.filters,
        "predictors": args.predictors, "split": args.split, "root_seed": args.root_seed,
        "replicates": args.replicates, "lag": args.lag, "ma_window": args.ma_window,
        "sampling_mode": args.sampling_mode, "formats": args.formats,
        "record_timing": args.record_timing, "save_models": args.save_models, "output_dir": args.output_dir,
        "workers": args.workers,
    }
    d.update({k: v for k, v in simple.items() if v is not None})
    if args.rmse_root_sum:
        d["rmse_mode"] = "root_sum"
    hyper = dict(d.get("hyperparams", {}))
    for key in ("epochs", "neurons", "batch_size", "lookback", "stateful"):
        v = getattr(args, key)
        if v is not None:
            hyper[key] = v
    d["hyperparams"] = hyper
    return runner.ExperimentConfig.from_dict(d)


def cmd_simulate(args):
    cfg = trajectory.SyntheticConfig.from_dict(json.loads(args.config.read_text()) if args.config else {})
    if args.seed is not None:
        cfg = trajectory.SyntheticConfig.from_dict({**_asdict(cfg), "rng_seed": args.seed})
    ds = trajectory.generate_synthetic(cfg)
    with open(args.output, "w", newline="", encoding="utf-8") as fh:
        trajectory.write_trajectory_csv(ds, fh)
    print(f"wrote {len(ds)} records over {ds.n_frames} frames to {args.output}")
    return 0


def _asdict(cfg):
    from dataclasses import asdict

    return asdict(cfg)


def cmd_ingest(args):
    with open(args.input, "rb") as fh:
        ds = trajectory.parse_trajectory_file(fh, args.layout, args.segment_length)
    print(f"{args.input}: {len(ds)} records, {ds.n_frames} frames, valid")
    if args.output:
        with open(args.output, "w", newline="", encoding="utf-8") as fh:
            trajectory.write_trajectory_csv(ds, fh)
        print(f"wrote native CSV to {args.output}")
    return 0


def cmd_run(args):
    cfg = build_config(args)
    report = runner.run_experiment(cfg)
    print(f"{len(report.rows)} cells, {report.n_errors} errors; report in {cfg.output_dir}/report.csv")
    return 0 if report.n_errors == 0 else 1


def cmd_replay(args):
    cfg = build_config(args)
    lags = args.lags or [0, cfg.lag]
    reports = runner.replay_from_config(cfg, args.model, lags, args.frame_rate)
    print("lag,n_steps,min_us,mean_us,max_us,p99_us,budget_us,passed")
    for r in reports:
        print(f"{r.lag},{r.n_steps},{r.min_us:.1f},{r.mean_us:.1f},{r.max_us:.1f},{r.p99_us:.1f},{r.budget_us:.0f},{int(r.passed)}")
    return 0 if all(r.passed for r in reports) else 1


def cmd_sweep(args):
    cfg = build_config(args)
    stats, best, _ = runner.run_sweep(cfg, args.parameter, args.candidates, args.trials)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{args.parameter}.csv").write_text(evaluation.sweep_csv(stats))
    if "svg" in cfg.formats:
        from . import plotting

        plotting.plot_sweep(stats, out / f"sweep_{args.parameter}.svg", args.parameter)
    print(evaluation.sweep_csv(stats), end="")
    print(f"selected {args.parameter} = {best:g}")
    return 0


def cmd_report(args):
    report = runner.EvalReport.from_csv(args.csv.read_text(encoding="utf-8"))
    traces = args.csv.with_name("traces.npz")
    if traces.exists():
        with np.load(traces) as z:
            report.traces = {k: z[k] for k in z.files}
    out = args.output_dir or args.csv.parent
    out.mkdir(parents=True, exist_ok=True)
    from . import plotting

    for p in plotting.render_report(report, out):
        print(p)
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvforecast", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic trajectory dataset")
    p.add_argument("-o", "--output", type=Path, required=True)
    p.add_argument("--config", type=Path, help="JSON synthetic-generator settings")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="validate a trajectory file, optionally convert it")
    p.add_argument("input", type=Path)
    p.add_argument("--layout", choices=("native", "ngsim"), default="native")
    p.add_argument("--segment-length", type=float)
    p.add_argument("-o", "--output", type=Path)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("run", help="run the experiment grid")
    _add_config_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("replay", help="streaming latency harness")
    _add_config_args(p)
    p.add_argument("--model", type=Path, help="saved model file (trained on the fly if omitted)")
    p.add_argument("--lags", type=_csv_list(int))
    p.add_argument("--frame-rate", type=float, help="pace the stream (default: as fast as possible)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("sweep", help="hyperparameter box-whisker sweep")
    _add_config_args(p)
    p.add_argument("--parameter", default="neurons")
    p.add_argument("--candidates", type=_csv_list(float), required=True)
    p.add_argument("--trials", type=int, default=30)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-render figures from a report CSV")
    p.add_argument("csv", type=Path)
    p.add_argument("-o", "--output-dir", type=Path)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (CvForecastError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
