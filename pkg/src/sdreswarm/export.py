"""Trace CSV files, run summaries, trace comparison and plots."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .sim import SimTrace

__all__ = [
    "TRACE_COLUMNS",
    "IncompatibleTraceError",
    "TraceTable",
    "write_trace_csv",
    "read_trace_csv",
    "trace_table",
    "run_summary",
    "settling_time",
    "compare_traces",
    "compare_summaries",
    "plot_trace",
]

TRACE_COLUMNS = (
    "t", "robot_id", "x1", "dx1", "y1", "dy1", "theta", "dtheta", "u1", "u2",
    "mean_x", "mean_y", "mean_theta", "var_x", "var_y", "mode_x", "mode_y",
    "L", "dL", "care_residual", "e_work", "e_effort",
)


class IncompatibleTraceError(ValueError):
    """Traces cannot be read or compared (columns, time base or robot count differ)."""


@dataclass(frozen=True)
class TraceTable:
    """Per-sample view of a trace CSV (robot rows collapsed).

    ``u`` holds the physical inputs written to the ``u1``/``u2`` columns.
    """

    t: np.ndarray
    n_robots: int
    mean: np.ndarray
    var: np.ndarray
    u: np.ndarray
    L: np.ndarray
    e_work: np.ndarray
    e_effort: np.ndarray
    modes: np.ndarray

    @property
    def energy_work(self) -> float:
        return float(self.e_work[-1])

    @property
    def energy_effort(self) -> float:
        return float(self.e_effort[-1])


def _fmt(v) -> str:
    return repr(float(v))


def write_trace_csv(trace: SimTrace, path) -> Path:
    """One row per sample and robot, columns :data:`TRACE_COLUMNS`.

    ``u1``/``u2`` are the physical inputs (N, N m or N, N), identical across
    the robots of a sample.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for k in range(trace.t.size):
            shared = [
                _fmt(trace.u_phys[k, 0]), _fmt(trace.u_phys[k, 1]),
                _fmt(trace.mean[k, 0]), _fmt(trace.mean[k, 2]), _fmt(trace.mean[k, 4]),
                _fmt(trace.var[k, 0]), _fmt(trace.var[k, 1]),
                trace.mode_x[k], trace.mode_y[k],
                _fmt(trace.L[k]), _fmt(trace.dL[k]), _fmt(trace.care_residual[k]),
                _fmt(trace.e_work[k]), _fmt(trace.e_effort[k]),
            ]
            for i in range(trace.q.shape[1]):
                q, v = trace.q[k, i], trace.qdot[k, i]
                w.writerow([_fmt(trace.t[k]), i, _fmt(q[0]), _fmt(v[0]), _fmt(q[1]), _fmt(v[1]),
                            _fmt(q[2]), _fmt(v[2])] + shared)
    return path


def read_trace_csv(path) -> TraceTable:
    """Load a trace CSV written by :func:`write_trace_csv`.

    Raises
    ------
    IncompatibleTraceError
        If the header differs from :data:`TRACE_COLUMNS` or the robot rows
        are ragged.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != TRACE_COLUMNS:
        raise IncompatibleTraceError(f"{path}: header does not match the trace format")
    body = rows[1:]
    if not body:
        raise IncompatibleTraceError(f"{path}: no samples")
    robot_ids = [int(r[1]) for r in body]
    n = max(robot_ids) + 1
    if len(body) % n:
        raise IncompatibleTraceError(f"{path}: ragged robot rows")
    first = body[::n]
    col = {c: j for j, c in enumerate(TRACE_COLUMNS)}

    def arr(name):
        return np.array([float(r[col[name]]) for r in first])

    return TraceTable(
        t=arr("t"), n_robots=n,
        mean=np.stack([arr("mean_x"), arr("mean_y"), arr("mean_theta")], axis=1),
        var=np.stack([arr("var_x"), arr("var_y")], axis=1),
        u=np.stack([arr("u1"), arr("u2")], axis=1),
        L=arr("L"), e_work=arr("e_work"), e_effort=arr("e_effort"),
        modes=np.array([(r[col["mode_x"]], r[col["mode_y"]]) for r in first]),
    )


def trace_table(trace: SimTrace) -> TraceTable:
    """In-memory equivalent of writing and reading back a CSV."""
    return TraceTable(trace.t.copy(), trace.q.shape[1], trace.mean[:, [0, 2, 4]].copy(), trace.var.copy(),
                      trace.u_phys.copy(), trace.L.copy(), trace.e_work.copy(), trace.e_effort.copy(),
                      np.stack([trace.mode_x, trace.mode_y], axis=1))


def settling_time(tab: TraceTable, band: float = 0.02) -> float:
    """Earliest time after which the mean position stays within ``band`` of its final value.

    Returns ``nan`` for an empty trace.
    """
    if tab.t.size == 0:
        return math.nan
    d = np.hypot(tab.mean[:, 0] - tab.mean[-1, 0], tab.mean[:, 1] - tab.mean[-1, 1])
    outside = np.nonzero(d > band)[0]
    return float(tab.t[0] if outside.size == 0 else tab.t[min(outside[-1] + 1, tab.t.size - 1)])


def _check_compatible(a: TraceTable, b: TraceTable):
    if a.n_robots != b.n_robots:
        raise IncompatibleTraceError(f"robot counts differ ({a.n_robots} vs {b.n_robots})")
    if a.t.size != b.t.size or not np.allclose(a.t, b.t, rtol=0, atol=1e-9):
        raise IncompatibleTraceError("time bases differ")


def _reduction(cand: float, base: float) -> float:
    return 100.0 * (1.0 - cand / base) if base > 0 else math.nan


def _reduction_line(work_pct: float, effort_pct: float) -> str:
    return f"energy reduction of a relative to b: work {work_pct:.1f}%, effort {effort_pct:.1f}%"


def compare_traces(a: TraceTable, b: TraceTable, band: float = 0.02) -> dict:
    """Compare candidate ``a`` against baseline ``b``.

    Ratios are ``a / b``; reductions are ``100 (1 - a / b)`` percent.

    Raises
    ------
    IncompatibleTraceError
        If the traces differ in robot count or time base.
    """
    _check_compatible(a, b)
    out = {}
    for key, ea, eb in (("work", a.energy_work, b.energy_work), ("effort", a.energy_effort, b.energy_effort)):
        out[f"energy_{key}"] = {"a": ea, "b": eb, "ratio": ea / eb if eb > 0 else math.nan,
                                "reduction_pct": _reduction(ea, eb)}
    out["settling_time"] = {"a": settling_time(a, band), "b": settling_time(b, band), "band": band}
    out["peak_abs_u"] = {"a": float(np.max(np.linalg.norm(a.u, axis=1))),
                         "b": float(np.max(np.linalg.norm(b.u, axis=1)))}
    out["reduction_line"] = _reduction_line(out["energy_work"]["reduction_pct"],
                                            out["energy_effort"]["reduction_pct"])
    return out


def compare_summaries(a: dict, b: dict) -> dict:
    """Per-seed and median energy comparison of two multi-seed run summaries.

    Seeds are paired by value; only seeds present in both are used.

    Raises
    ------
    IncompatibleTraceError
        If the summaries share no seeds or differ in robot count.
    """
    ra = {r["seed"]: r for r in a.get("runs", [])}
    rb = {r["seed"]: r for r in b.get("runs", [])}
    seeds = sorted(set(ra) & set(rb))
    if not seeds:
        raise IncompatibleTraceError("summaries share no seeds")
    if a["config"]["n_robots"] != b["config"]["n_robots"]:
        raise IncompatibleTraceError("robot counts differ")
    per_seed = []
    for s in seeds:
        row = {"seed": s}
        for key in ("work", "effort"):
            ea, eb = ra[s]["energy"][key], rb[s]["energy"][key]
            row[key] = {"a": ea, "b": eb, "reduction_pct": _reduction(ea, eb)}
        per_seed.append(row)
    med = {}
    for key in ("work", "effort"):
        ma = float(np.median([ra[s]["energy"][key] for s in seeds]))
        mb = float(np.median([rb[s]["energy"][key] for s in seeds]))
        med[key] = {"a": ma, "b": mb, "ratio": ma / mb if mb > 0 else math.nan, "reduction_pct": _reduction(ma, mb),
                    "median_seed_reduction_pct": float(np.median([r[key]["reduction_pct"] for r in per_seed]))}
    return {"seeds": seeds, "per_seed": per_seed, "median": med,
            "reduction_line": "median " + _reduction_line(med["work"]["reduction_pct"], med["effort"]["reduction_pct"])}


def run_summary(trace: SimTrace, lyapunov_after: Optional[float] = None) -> dict:
    """JSON-ready digest of one run.

    Lyapunov flags count samples with ``dL >= 0`` while the mean is outside
    the regulation tolerance; ``post_transient`` counts those after
    ``lyapunov_after`` seconds (default: half the duration).
    """
    cfg = trace.config
    hc = cfg.hysteresis()
    after = cfg.duration / 2 if lyapunov_after is None else lyapunov_after
    last = trace.mean[-1]
    dist = math.hypot(last[0] - cfg.target[0], last[2] - cfg.target[1])
    flags = trace.lyapunov_flags()
    switches = trace.mode_switches()
    resid = trace.care_residual[np.isfinite(trace.care_residual)]
    methods, counts = np.unique(trace.care_method, return_counts=True)
    return {
        "seed": cfg.seed,
        "controller": cfg.controller,
        "status": trace.status,
        "failure": trace.failure,
        "t_final": float(trace.t[-1]),
        "final": {
            "mean_x": float(last[0]), "mean_y": float(last[2]), "mean_theta": float(last[4]),
            "var_x": float(trace.var[-1, 0]), "var_y": float(trace.var[-1, 1]),
            "distance_to_target": dist,
        },
        "regulated": trace.regulated(),
        "energy": {"work": trace.energy_work, "effort": trace.energy_effort},
        "mode_switches": len(switches),
        "thresholds": {"sigma_enter": hc.sigma_enter, "sigma_exit": hc.sigma_exit,
                       "sigma_optimal": hc.sigma_optimal},
        "lyapunov": {
            "flags": int(np.sum(flags)),
            "flags_post_transient": int(np.sum(flags & (trace.t >= after))),
            "transient_end": after,
            "L_initial": float(trace.L[0]) if trace.L.size else math.nan,
            "L_final": float(trace.L[-1]) if trace.L.size else math.nan,
        },
        "care": {
            "max_residual": float(resid.max()) if resid.size else math.nan,
            "methods": {str(m): int(c) for m, c in zip(methods, counts)},
        },
    }


def plot_trace(trace: SimTrace, path) -> Path:
    """Mean path, variances and inputs as polyline plots in one SVG file.

    Requires matplotlib (the ``plot`` extra).
    """
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    cfg = trace.config
    fig, ax = plt.subplots(1, 3, figsize=(13, 4))
    x0, x1, y0, y1 = cfg.arena
    ax[0].plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], "k--", lw=0.8)
    for i in range(trace.q.shape[1]):
        ax[0].plot(trace.q[:, i, 0], trace.q[:, i, 1], lw=0.5, alpha=0.5)
    ax[0].plot(trace.mean[:, 0], trace.mean[:, 2], "k", lw=1.5, label="mean")
    ax[0].plot([cfg.target[0]], [cfg.target[1]], "rx")
    ax[0].set_aspect("equal")
    ax[0].set_xlabel("x (m)")
    ax[0].set_ylabel("y (m)")
    ax[1].plot(trace.t, trace.var[:, 0], label="var x")
    ax[1].plot(trace.t, trace.var[:, 1], label="var y")
    hc = cfg.hysteresis()
    ax[1].axhline(hc.sigma_enter, color="r", ls=":", lw=0.8)
    ax[1].axhline(hc.sigma_exit, color="g", ls=":", lw=0.8)
    ax[1].set_xlabel("t (s)")
    ax[1].legend()
    ax[2].plot(trace.t, trace.u_phys[:, 0], label="u1")
    ax[2].plot(trace.t, trace.u_phys[:, 1], label="u2")
    ax[2].set_xlabel("t (s)")
    ax[2].legend()
    fig.suptitle(f"{cfg.controller} seed {cfg.seed}")
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
