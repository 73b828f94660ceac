"""Command-line entry point: run scenarios and presets, write CSV and JSON outputs."""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import override_seeds, parse_config
from .errors import EmptyLog, SyncNetError
from .presets import PAIRED, canonical_name, get_preset, preset_names
from .simulation import compute_metrics, prepare_scenario, run_scenario

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


def _fmt(v):
    return format(float(v), ".17g")


def emit_csv(log, path):
    """One row per (sample, agent) followed by a ``ref`` row for the reference model."""
    if log is None or len(log) == 0:
        raise EmptyLog("cannot write an empty trajectory log")
    n = log.x_m.shape[1]
    p = log.u.shape[2]
    header = (["t", "agent"] + [f"state_{k}" for k in range(1, n + 1)] + [f"u_{k}" for k in range(1, p + 1)]
              + [f"usat_{k}" for k in range(1, p + 1)] + ["err_norm", "V"])
    lines = [",".join(header)]
    for s in range(len(log)):
        ts = _fmt(log.t[s])
        v = _fmt(log.V_total[s])
        for i in range(log.n_agents):
            vals = [*log.x[s, i], *log.u[s, i], *log.u_sat[s, i], log.err[s, i]]
            lines.append(",".join([ts, str(i + 1), *map(_fmt, vals), v]))
        ref = [*log.x_m[s], *log.u_m[s], *log.u_m[s], 0.0]
        lines.append(",".join([ts, "ref", *map(_fmt, ref), v]))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def lyapunov_summary(log, rel_tol=1e-6):
    """Largest per-sample increase of V and whether it stays within ``rel_tol * (1 + V)``."""
    v = log.V_total
    d = np.diff(v)
    if d.size == 0:
        return {"max_increase": 0.0, "monotone": True}
    if not np.all(np.isfinite(d)):
        return {"max_increase": float("inf"), "monotone": False}
    return {"max_increase": float(d.max()), "monotone": bool(np.all(d <= rel_tol * (1.0 + np.abs(v[:-1]))))}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_json_safe(doc), fh, indent=2, sort_keys=True)
        fh.write("\n")


def metrics_document(cfg, log, network):
    m = compute_metrics(log, **cfg.metrics)
    doc = m.to_dict()
    doc.update(name=cfg.name, mode=cfg.mode, samples=len(log), horizon=log.horizon, events=log.events,
               lyapunov=lyapunov_summary(log), monitor_exact=network.monitor_exact,
               monitor_notes=list(network.monitor_notes))
    return m, doc


def execute(cfg, out_dir):
    """Run one scenario and write the three output files. Returns its metrics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prepared = prepare_scenario(cfg)
    log = run_scenario(cfg, prepared)
    network = prepared[0]
    metrics, doc = metrics_document(cfg, log, network)
    _write_json(out_dir / "effective_config.json", cfg.to_dict())
    emit_csv(log, out_dir / "trajectory.csv")
    _write_json(out_dir / "metrics.json", doc)
    return metrics, log


def magnitude_series(log):
    """Network-wide synchronization error magnitude and saturated input magnitude per sample."""
    err = np.linalg.norm(log.err, axis=1)
    u = np.linalg.norm(log.u_sat.reshape(len(log), -1), axis=1)
    return err, u


def execute_paired(cfg, modes, out_dir):
    """Run ``cfg`` under each mode with identical seeds; write per-mode outputs plus a comparison."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = {}
    for mode in modes:
        doc = cfg.to_dict()
        doc["mode"] = mode
        sub = parse_config(doc, base_dir=cfg.base_dir)
        metrics, log = execute(sub, out_dir / mode)
        runs[mode] = (metrics, log)
    primary = modes[0]
    _write_json(out_dir / "effective_config.json", cfg.to_dict())
    comparison = compare_runs(runs)
    _write_json(out_dir / "comparison.json", comparison)
    # the top-level trajectory and metrics mirror the primary mode
    emit_csv(runs[primary][1], out_dir / "trajectory.csv")
    _write_json(out_dir / "metrics.json",
                {**runs[primary][0].to_dict(), "mode": primary, "comparison": "comparison.json"})
    return runs[primary][0], comparison


def compare_runs(runs):
    """Paired error/input magnitude series on the common time grid."""
    modes = list(runs)
    logs = [runs[m][1] for m in modes]
    length = min(len(lg) for lg in logs)
    t = logs[0].t[:length]
    series = {}
    for mode, lg in zip(modes, logs):
        err, u = magnitude_series(lg)
        series[mode] = {"err": err[:length].tolist(), "u_sat": u[:length].tolist(),
                        "diverged": bool(runs[mode][0].diverged), "divergence_time": runs[mode][0].divergence_time}
    out = {"t": t.tolist(), "modes": modes, "series": series}
    if len(modes) == 2:
        a, b = (np.asarray(series[m]["err"]) for m in modes)
        u_max = np.max(np.abs(logs[0].u_sat))
        onset = np.flatnonzero(np.any(np.abs(logs[1].u[:length]) > u_max * (1 - 1e-12), axis=(1, 2)))
        out["saturation_onset"] = float(t[onset[0]]) if onset.size else None
        out["second_exceeds_first_fraction"] = float(np.mean(b > a))
        # from here on the second error series stays above the first
        at_or_below = np.flatnonzero(b <= a)
        if not at_or_below.size:
            out["crossover_time"] = float(t[0])
        elif at_or_below[-1] == length - 1:
            out["crossover_time"] = None
        else:
            out["crossover_time"] = float(t[at_or_below[-1] + 1])
    return out


def _out_dir(args, name):
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("SYNCNET_OUT_DIR", "out")) / name


def _cmd_run(args):
    cfg = parse_config(args.config)
    if args.seed_override is not None:
        cfg = override_seeds(cfg, args.seed_override)
    metrics, _ = execute(cfg, _out_dir(args, cfg.name))
    return EXIT_DIVERGED if metrics.diverged else EXIT_OK


def _cmd_preset(args):
    try:
        doc = get_preset(args.name)
    except KeyError:
        print(f"unknown preset {args.name!r}; see 'syncnet list-presets'", file=sys.stderr)
        return EXIT_INVALID
    cfg = parse_config(doc)
    name = canonical_name(args.name)
    out = _out_dir(args, name)
    if name in PAIRED:
        metrics, _ = execute_paired(cfg, PAIRED[name], out)
    else:
        metrics, _ = execute(cfg, out)
    return EXIT_DIVERGED if metrics.diverged else EXIT_OK


def _cmd_list(args):
    for name in preset_names():
        print(name)
    return EXIT_OK


def _cmd_validate(args):
    from .config import check_config

    cfg = parse_config(args.config)
    check_config(cfg)
    print(f"{cfg.name}: ok")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="syncnet", description="Distributed adaptive synchronization simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="simulate a scenario file")
    run.add_argument("config")
    run.add_argument("--out")
    run.add_argument("--seed-override", type=int)
    run.set_defaults(func=_cmd_run)
    pre = sub.add_parser("preset", help="simulate a shipped scenario")
    pre.add_argument("name")
    pre.add_argument("--out")
    pre.set_defaults(func=_cmd_preset)
    lst = sub.add_parser("list-presets", help="print the shipped scenario names")
    lst.set_defaults(func=_cmd_list)
    val = sub.add_parser("validate", help="check a scenario without simulating")
    val.add_argument("config")
    val.set_defaults(func=_cmd_validate)
    return parser


def run_command(argv=None):
    """Parse ``argv`` and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INVALID if exc.code else EXIT_OK
    try:
        return args.func(args)
    except SyncNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


def main():
    sys.exit(run_command())
