"""Command-line front end: simulate ensembles, replicate single trials,
analyze simulated or ingested data, and emit tables and SVG figures.

Config precedence: built-in defaults < --config file < command-line flags.
Every run writes a manifest capturing the resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import ensemble_synergy, load_wide_csv, outlier_filter, rmse, steady_means
from .simulator import TrialConfig, TrialRecord, iter_trials, load_trial, run_trial, save_trial
from .svgplot import Figure


def _fmt6(x) -> str:
    return f"{float(x):.6g}"


def _resolve_seed(args) -> int | None:
    """Flag, then SYNSIM_SEED; None lets a config-file seed (or 0) apply."""
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SYNSIM_SEED")
    if env is not None:
        return int(env)
    return None


def _parse_window(text):
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError as exc:
        raise ValueError(f"window must look like A:B, got {text!r}") from exc


def _load_config(args, **overrides) -> TrialConfig:
    base = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            base = json.load(fh)
    base.update({k: v for k, v in overrides.items() if v is not None})
    if getattr(args, "window_steady", None):
        base["steady_window"] = _parse_window(args.window_steady)
    if getattr(args, "window_transient", None):
        base["transient_window"] = _parse_window(args.window_transient)
    return TrialConfig.from_dict(base)


def _write_manifest(out: Path, command: str, cfg: TrialConfig | None,
                    seed: int | None, outputs: list, extra: dict | None = None):
    manifest = {
        "tool": "synsim",
        "version": __version__,
        "command": command,
        "seed": seed,
        "config": cfg.to_dict() if cfg is not None else None,
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    outputs.append(path)


def _write_report(out: Path, rows: list, name: str = "report") -> list:
    """Write the same values as machine CSV and a human table."""
    csv_path = out / f"{name}.csv"
    txt_path = out / f"{name}.txt"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("metric,value\n")
        for key, val in rows:
            fh.write(f"{key},{_fmt6(val)}\n")
    width = max(len(k) for k, _ in rows)
    with open(txt_path, "w", encoding="utf-8") as fh:
        fh.write(f"{'metric'.ljust(width)}  value\n")
        fh.write(f"{'-' * width}  {'-' * 12}\n")
        for key, val in rows:
            fh.write(f"{key.ljust(width)}  {_fmt6(val)}\n")
    return [csv_path, txt_path]


def cmd_simulate(args) -> int:
    if args.trials < 1:
        print("synsim simulate: --trials must be at least 1", file=sys.stderr)
        return 2
    cfg = _load_config(args, seed=_resolve_seed(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []

    def produce():
        for rec in iter_trials(cfg, args.trials):
            path = out / f"trial_{rec.trial_index:04d}.csv"
            save_trial(rec, path)
            outputs.append(path)
            yield rec

    report = ensemble_synergy(produce(), y_target=cfg.y_target,
                              rmse_on=args.rmse_on)
    outputs.extend(_write_report(out, report.rows()))
    _write_manifest(out, "simulate", cfg, cfg.seed, outputs,
                    {"n_trials": args.trials})
    print(f"simulated {args.trials} trials -> {out}")
    print(f"steady-state RMSE ({args.rmse_on}): "
          f"{_fmt6(report.rmse_mean)} +/- {_fmt6(report.rmse_stderr)} N "
          f"over window {cfg.steady_window[0]:g}:{cfg.steady_window[1]:g}s")
    return 0


def _parse_replicate(text: str) -> dict:
    """Parse 'zeta=..,wn=..,eta=..,s=a,b,c,d' (s consumes the rest)."""
    out = {}
    key = None
    for token in text.split(","):
        if "=" in token:
            key, val = token.split("=", 1)
            key = key.strip()
            out[key] = [val]
        elif key is None:
            raise ValueError(f"bad replicate parameters near {token!r}")
        else:
            out[key].append(token)
    parsed = {}
    for key, vals in out.items():
        if key == "s":
            parsed["s"] = [float(v) for v in vals]
        elif key in ("zeta", "wn", "eta"):
            if len(vals) != 1:
                raise ValueError(f"{key} takes one value")
            parsed[key] = float(vals[0])
        else:
            raise ValueError(f"unknown replicate parameter {key!r}")
    missing = {"zeta", "wn", "eta", "s"} - set(parsed)
    if missing:
        raise ValueError(f"replicate parameters missing {sorted(missing)}")
    return parsed


def _average_records(records: list[TrialRecord]) -> TrialRecord:
    """Pointwise average of trajectories across runs of one configuration."""
    first = records[0]
    mean = {a: np.mean([getattr(r, a) for r in records], axis=0)
            for a in ("y", "ydot", "y_hat", "ydot_hat", "u", "ybar_hat", "z_d")}
    return TrialRecord(t=first.t.copy(), shares=first.shares.copy(),
                       seed=first.seed, trial_index=-1, config=first.config,
                       **mean)


def cmd_replicate(args) -> int:
    params = _parse_replicate(args.replicate)
    s = np.asarray(params["s"], dtype=float)
    if np.any((s == 0.0) | (s == 1.0)):
        print("warning: degenerate sharing vector (simplex boundary)",
              file=sys.stderr)
    cfg = _load_config(args, seed=_resolve_seed(args), zeta=params["zeta"],
                       omega_n=params["wn"], eta=params["eta"],
                       shares=s.tolist())
    if args.runs < 1:
        print("synsim replicate: --runs must be at least 1", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    records = [run_trial(cfg, k) for k in range(args.runs)]
    averaged = _average_records(records)
    avg_path = out / "averaged_trial.csv"
    save_trial(averaged, avg_path)
    outputs = [avg_path]

    window = cfg.steady_window
    rows = []
    n = cfg.n_agents
    if args.reference:
        ref = load_wide_csv(args.reference, cutoff_hz=None)
        if ref.y_hat.shape != averaged.y_hat.shape or \
                np.abs(ref.t - averaged.t).max() > 1e-9:
            print("synsim replicate: reference time grid does not match run",
                  file=sys.stderr)
            return 1
        combined = averaged.y_hat.sum(axis=1)
        ref_combined = ref.y_hat.sum(axis=1)
        rows.append(("rmse_combined_vs_reference",
                     float(np.sqrt(np.mean((combined - ref_combined) ** 2)))))
        for i in range(n):
            rows.append((f"rmse_y{i+1}_vs_reference",
                         float(np.sqrt(np.mean(
                             (averaged.y_hat[:, i] - ref.y_hat[:, i]) ** 2)))))
    for k, rec in enumerate(records):
        rows.append((f"run{k}_rmse_avg_output_vs_target",
                     rmse(rec.t, rec.ybar_hat, cfg.y_target, window)))
    rows.append(("averaged_rmse_avg_output_vs_target",
                 rmse(averaged.t, averaged.ybar_hat, cfg.y_target, window)))
    for i in range(n):
        rows.append((f"averaged_steady_mean_y{i+1}",
                     float(steady_means(averaged)[i])))
    outputs.extend(_write_report(out, rows, name="replicate_report"))
    _write_manifest(out, "replicate", cfg, cfg.seed, outputs,
                    {"runs": args.runs, "reference": args.reference})
    print(f"replicated {args.runs} runs -> {out}")
    return 0


def _load_inputs(args):
    records = []
    failures = []
    for path in args.inputs or []:
        try:
            records.append(load_trial(path))
        except Exception as exc:
            failures.append((path, str(exc)))
    ingested = []
    for path in args.ingest or []:
        try:
            ingested.append(load_wide_csv(path))
        except Exception as exc:
            failures.append((path, str(exc)))
    return records, ingested, failures


def cmd_analyze(args) -> int:
    records, ingested, failures = _load_inputs(args)
    for path, msg in failures:
        print(f"synsim analyze: {path}: {msg}", file=sys.stderr)
    if failures:
        return 1
    if not records and not ingested:
        print("synsim analyze: no inputs given", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    window = _parse_window(args.window_steady) if args.window_steady else None

    outputs = []
    removed_names = []
    if ingested:
        if window is None:
            print("synsim analyze: ingested data needs --window-steady",
                  file=sys.stderr)
            return 2
        kept = outlier_filter(ingested, window=window)
        removed_names = [r.name for r in ingested if r not in kept]
        for name in removed_names:
            print(f"outlier removed: {name}")
        records = records + kept
    if not records:
        print("synsim analyze: all trials removed as outliers", file=sys.stderr)
        return 1

    report = ensemble_synergy(records, window=window, y_target=args.y_target,
                              rmse_on=args.rmse_on)
    rows = report.rows()
    if removed_names:
        rows.append(("outliers_removed", float(len(removed_names))))
    outputs.extend(_write_report(out, rows))
    detail = out / "per_trial.csv"
    with open(detail, "w", encoding="utf-8") as fh:
        n = len(report.per_trial[0]["means"])
        fh.write("trial_index,rmse," + ",".join(f"mean_y{i+1}" for i in range(n)) + "\n")
        for row in report.per_trial:
            fh.write(",".join([str(row["trial_index"]), _fmt6(row["rmse"])]
                              + [_fmt6(v) for v in row["means"]]) + "\n")
    outputs.append(detail)
    _write_manifest(out, "analyze", None, None, outputs,
                    {"inputs": list(args.inputs or []) + list(args.ingest or []),
                     "outliers_removed": removed_names})
    print(f"analyzed {report.n_trials} trials -> {out}")
    print(f"RMSE {_fmt6(report.rmse_mean)} +/- {_fmt6(report.rmse_stderr)} N; "
          f"dV={_fmt6(report.delta_v)} "
          f"(V_UCM={_fmt6(report.v_ucm)}, V_ORT={_fmt6(report.v_ort)})")
    return 0


def cmd_report(args) -> int:
    records, ingested, failures = _load_inputs(args)
    for path, msg in failures:
        print(f"synsim report: {path}: {msg}", file=sys.stderr)
    if failures:
        return 1
    records = records + ingested
    if not records:
        print("synsim report: no inputs given", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    window = _parse_window(args.window_steady) if args.window_steady else None
    outputs = []

    first = records[0]
    fig = Figure(title="Finger forces, trial 0", xlabel="time (s)",
                 ylabel="force (N)")
    n = first.y_hat.shape[1]
    for i in range(n):
        fig.line(first.t, first.y_hat[:, i], label=f"finger {i+1}")
    combined = first.y_hat.mean(axis=1)
    fig.line(first.t, combined, label="combined / N", color="#000000")
    fig.hline(args.y_target, label=f"target {args.y_target:g} N",
              color="#888888")
    p = out / "trial_forces.svg"
    fig.write(p)
    outputs.append(p)

    if len(records) >= 2:
        fig = Figure(title="Mean force per trial", xlabel="trial",
                     ylabel="mean force (N)")
        means = np.array([steady_means(r, window) for r in records])
        idx = np.arange(len(records), dtype=float)
        for i in range(means.shape[1]):
            fig.scatter(idx, means[:, i], label=f"finger {i+1}")
        p = out / "trial_means.svg"
        fig.write(p)
        outputs.append(p)

    if args.reference:
        try:
            ref = load_wide_csv(args.reference, cutoff_hz=None)
        except Exception as exc:
            print(f"synsim report: {args.reference}: {exc}", file=sys.stderr)
            return 1
        fig = Figure(title="Simulation vs reference", xlabel="time (s)",
                     ylabel="force (N)")
        for i in range(n):
            fig.line(ref.t, ref.y_hat[:, i], label=f"reference y{i+1}")
            fig.line(first.t, first.y_hat[:, i], label=f"simulation y{i+1}",
                     dashed=True)
        fig.line(ref.t, ref.y_hat.mean(axis=1), label="reference combined/N",
                 color="#000000")
        fig.line(first.t, combined, label="sim combined/N", color="#555555",
                 dashed=True)
        p = out / "overlay.svg"
        fig.write(p)
        outputs.append(p)

    report = ensemble_synergy(records, window=window, y_target=args.y_target,
                              rmse_on=args.rmse_on)
    outputs.extend(_write_report(out, report.rows()))
    _write_manifest(out, "report", None, None, outputs,
                    {"inputs": list(args.inputs or []) + list(args.ingest or [])})
    print(f"report written -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synsim",
        description="Consensus-based collaborative force-tracking simulator")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, windows=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="seed (falls back to SYNSIM_SEED, then 0)")
        p.add_argument("--config", default=None, help="JSON config file")
        if windows:
            p.add_argument("--window-steady", default=None, metavar="A:B")
            p.add_argument("--window-transient", default=None, metavar="A:B")
        p.add_argument("--rmse-on", choices=("average", "total"),
                       default="average")

    p = sub.add_parser("simulate", help="run an ensemble and write trial files")
    common(p)
    p.add_argument("--trials", type=int, default=182)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replicate",
                       help="run one parameter set several times and average")
    common(p)
    p.add_argument("--replicate", required=True,
                   metavar='"zeta=..,wn=..,eta=..,s=a,b,c,d"')
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--reference", default=None,
                   help="stored reference trajectory (trial format)")
    p.set_defaults(func=cmd_replicate)

    p = sub.add_parser("analyze", help="compute synergy statistics")
    common(p)
    p.add_argument("--inputs", nargs="*", default=[], help="trial files")
    p.add_argument("--ingest", nargs="*", default=[],
                   help="external wide CSVs (time,f1..f4)")
    p.add_argument("--y-target", type=float, default=5.0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("report", help="emit SVG figures and summary tables")
    common(p)
    p.add_argument("--inputs", nargs="*", default=[], help="trial files")
    p.add_argument("--ingest", nargs="*", default=[])
    p.add_argument("--reference", default=None)
    p.add_argument("--y-target", type=float, default=5.0)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"synsim {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
