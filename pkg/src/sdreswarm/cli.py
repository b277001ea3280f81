"""Command-line interface: ``sdreswarm run | verify | compare``.

Examples
--------
::

    sdreswarm run n4 --seeds 10 --out runs/n4
    sdreswarm run my.cfg --controller pd --noise 2e-4 --plot
    sdreswarm verify all --out runs/verify
    sdreswarm compare runs/n4/n4_sdre_summary.json runs/n4/n4_pd_summary.json
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .export import (
    IncompatibleTraceError,
    compare_summaries,
    compare_traces,
    plot_trace,
    read_trace_csv,
    run_summary,
    write_trace_csv,
)
from .scenario import ScenarioError, apply_overrides, dump_scenario, load_scenario, parse_scenario
from .sim import CONTROLLERS, run_scenario
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

BUILTIN = ("n4", "n8")


def builtin_text(name: str) -> str:
    return resources.files("sdreswarm").joinpath("scenarios", f"{name}.cfg").read_text(encoding="utf-8")


def resolve_scenario(ref: str):
    """A built-in scenario name or a path to a scenario file."""
    if ref in BUILTIN:
        return parse_scenario(builtin_text(ref))
    return load_scenario(ref)


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _dump_json(obj, path=None):
    text = json.dumps(obj, indent=2, default=_json_default, allow_nan=True)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


def _run_one(job):
    cfg, out_dir, stem, plot = job
    trace = run_scenario(cfg)
    csv_path = write_trace_csv(trace, Path(out_dir) / f"{stem}_seed{cfg.seed}.csv")
    if plot:
        plot_trace(trace, Path(out_dir) / f"{stem}_seed{cfg.seed}.svg")
    summary = run_summary(trace)
    summary["trace"] = csv_path.name
    return summary


def cmd_run(args) -> int:
    sc = resolve_scenario(args.scenario)
    sc = apply_overrides(sc, controller=args.controller, seeds=args.seeds, noise=args.noise, dt=args.dt,
                         duration=args.duration, out=args.out, sigma_enter=args.sigma_enter,
                         sigma_exit=args.sigma_exit)
    out_dir = Path(sc.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{sc.name}_{sc.sim.controller}"
    (out_dir / f"{stem}.cfg").write_text(dump_scenario(sc), encoding="utf-8")
    hc = sc.sim.hysteresis()
    print(f"sdreswarm {__version__}: {sc.name}, controller {sc.sim.controller}, {sc.seeds} seed(s) from {sc.sim.seed}")
    print(f"  thresholds: enter {hc.sigma_enter:.5g} m^2 = {sc.sim.enter_mult:g} r^2 + 0.55 N r^2, "
          f"exit {hc.sigma_exit:.5g} m^2 = {sc.sim.exit_mult:g} r^2 + 0.55 N r^2 "
          f"(enter above exit; both in m^2)")
    jobs = [(cfg, str(out_dir), stem, args.plot) for cfg in sc.seed_configs()]
    workers = max(1, min(args.jobs or os.cpu_count() or 1, len(jobs)))
    if workers == 1:
        runs = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(workers) as ex:
            runs = list(ex.map(_run_one, jobs))
    for r in runs:
        f = r["final"]
        print(f"  seed {r['seed']:>4}: {r['status']:<7} regulated={str(r['regulated']):<5} "
              f"d={f['distance_to_target']:.4f} m theta={f['mean_theta']:+.4f} rad "
              f"work={r['energy']['work']:.4e} J effort={r['energy']['effort']:.4e} "
              f"switches={r['mode_switches']} lyap_flags={r['lyapunov']['flags_post_transient']}")
    summary = {
        "scenario": sc.name,
        "config": sc.sim.to_dict(),
        "seeds": [r["seed"] for r in runs],
        "runs": runs,
        "median": {"work": float(np.median([r["energy"]["work"] for r in runs])),
                   "effort": float(np.median([r["energy"]["effort"] for r in runs]))},
        "regulated": int(sum(r["regulated"] for r in runs)),
        "status": "ok" if all(r["status"] == "ok" for r in runs) else "aborted",
    }
    _dump_json(summary, out_dir / f"{stem}_summary.json")
    print(f"  median work {summary['median']['work']:.4e} J, effort {summary['median']['effort']:.4e}; "
          f"regulated {summary['regulated']}/{len(runs)}; wrote {out_dir}")
    return EXIT_OK if summary["status"] == "ok" else EXIT_FAILED


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    results = run_suites(names, out_dir=args.out, seed=args.seed)
    ok = True
    for name, checks in results.items():
        print(f"[{name}]")
        for c in checks:
            print("  " + c.line())
            ok &= c.passed
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAILED


def _load_any(path):
    p = Path(path)
    if p.suffix == ".json":
        return "summary", json.loads(p.read_text(encoding="utf-8"))
    return "trace", read_trace_csv(p)


def cmd_compare(args) -> int:
    try:
        ka, a = _load_any(args.a)
        kb, b = _load_any(args.b)
        if ka != kb:
            raise IncompatibleTraceError("cannot compare a trace with a summary")
        res = compare_traces(a, b, band=args.band) if ka == "trace" else compare_summaries(a, b)
    except IncompatibleTraceError as exc:
        _dump_json({"error": "incompatible", "message": str(exc)})
        return EXIT_USAGE
    res = {"a": str(args.a), "b": str(args.b), **res}
    _dump_json(res, args.out)
    print(res["reduction_line"], file=sys.stderr)
    if args.out is not None:
        print(f"wrote {args.out}")
    return EXIT_OK


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def _nonneg_float(text):
    v = float(text)
    if not (v >= 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError("must be a finite non-negative number")
    return v


def _pos_float(text):
    v = _nonneg_float(text)
    if v == 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdreswarm", description="Broadcast SDRE control of underactuated robot swarms.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario over one or more seeds")
    r.add_argument("scenario", nargs="?", default="n4", help=f"scenario file or built-in name {BUILTIN} (default n4)")
    r.add_argument("--controller", choices=CONTROLLERS)
    r.add_argument("--seeds", type=_positive_int, help="number of consecutive seeds")
    r.add_argument("--noise", type=_nonneg_float, help="velocity noise intensity")
    r.add_argument("--dt", type=_pos_float)
    r.add_argument("--duration", type=_nonneg_float)
    r.add_argument("--out", help="output directory")
    r.add_argument("--plot", action="store_true", help="write one SVG per seed (needs matplotlib)")
    r.add_argument("--jobs", type=_positive_int, help="worker processes (default: CPU count)")
    r.add_argument("--sigma-enter", type=_pos_float, help="override the gather entry threshold (m^2)")
    r.add_argument("--sigma-exit", type=_pos_float, help="override the gather exit threshold (m^2)")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="run numerical self-checks")
    v.add_argument("suite", choices=(*SUITES, "all"))
    v.add_argument("--out", help="directory for the SDC residual histogram and degenerate catalog")
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("compare", help="compare two traces (CSV) or two run summaries (JSON); a is the candidate")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--band", type=_pos_float, default=0.02, help="settling band around the final mean (m)")
    c.add_argument("--out", help="write the comparison JSON here instead of stdout")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, FileNotFoundError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
