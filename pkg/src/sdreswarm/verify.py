"""Self-checks behind ``sdreswarm verify``.

Each suite returns a list of :class:`Check` rows; a suite passes when all of
its rows pass.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import (
    GeneralizedState,
    HolonomicParams,
    forward_dynamics,
    forward_dynamics_batch,
    holonomic_model,
    rk4_batch,
    skew_symmetry_residual,
)
from .riccati import reference_weighting, newton_kleinman, solve_care
from .sdc import ctrb_rank, degenerate_scan, plant_rhs, sdc_factorize
from .transform import (
    build_transform,
    check_assumptions,
    decoupled_dynamics,
    phi_batch,
    phi_inv_batch,
    sample_states,
    schur_block,
    transformed_accelerations_batch,
)

__all__ = ["Check", "SUITES", "trajectory_equivalence", "verify_transform", "verify_sdc", "verify_care", "run_suites"]


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<44s} {self.value:11.3e}  (tol {self.tolerance:.1e}) {self.detail}"


def _le(name, value, tol, detail=""):
    return Check(name, float(value), float(tol), bool(value <= tol), detail)


def _model(params: Optional[HolonomicParams] = None):
    model = holonomic_model(params or HolonomicParams())
    return model, build_transform(model)


def trajectory_equivalence(params=None, n_traj: int = 20, duration: float = 1.0, dt: float = 1e-4,
                           seed: int = 0) -> dict:
    """Integrate the original and the decoupled equations side by side.

    ``n_traj`` seeded initial states and sinusoidal inputs are integrated
    with RK4 twice: once as ``M q'' + C q' = G u`` in ``q`` and once as the
    block-diagonal equations in ``bq = Phi(q)``, mapped back through
    ``Phi^-1`` at the end.

    Returns
    -------
    dict
        ``max_position_error`` (m, over ``x1, y1``), ``max_angle_error``
        (rad) and ``seconds`` of wall time.
    """
    import time

    model, spec = _model(params)
    p = model.meta["params"]
    rng = np.random.default_rng(seed)
    Q0 = np.column_stack([rng.uniform(-0.5, 0.5, (n_traj, 2)), rng.uniform(-math.pi, math.pi, n_traj)])
    V0 = rng.normal(size=(n_traj, 3)) * np.array([0.05, 0.05, 1.0])
    # forces of order m * 0.1 m/s^2, torques of order m L^2 * 1 rad/s^2, in the model's convention
    amp = rng.uniform(0.2, 1.0, (n_traj, 2)) * np.array([0.1 * p.m, p.m * p.L ** 2]) / p.input_scale
    omega = rng.uniform(1.0, 10.0, (n_traj, 2))
    phase = rng.uniform(0, 2 * math.pi, (n_traj, 2))

    def u_of_t(t):
        return amp * np.sin(omega * t + phase)

    steps = int(round(duration / dt))
    t0 = time.perf_counter()
    Q, _ = rk4_batch(lambda q, v, u: forward_dynamics_batch(model, q, v, u), Q0, V0, u_of_t, dt, steps)
    bV0 = np.stack([spec.T_inv(q) @ v for q, v in zip(Q0, V0)])
    bQ, _ = rk4_batch(lambda bq, bv, u: transformed_accelerations_batch(spec, bq, bv, u),
                      phi_batch(spec, Q0), bV0, u_of_t, dt, steps)
    Qd = phi_inv_batch(spec, bQ)
    seconds = time.perf_counter() - t0
    return {"max_position_error": float(np.abs(Q[:, :2] - Qd[:, :2]).max()),
            "max_angle_error": float(np.abs(Q[:, 2] - Qd[:, 2]).max()),
            "displacement": float(np.abs(Q[:, :2] - Q0[:, :2]).max()),
            "seconds": seconds, "trajectories": n_traj, "steps": steps}


def verify_transform(samples: int = 100, seed: int = 0, params=None, trajectories: int = 20) -> list:
    """Assumption checks, block-diagonal inertia and decoupled vs original accelerations."""
    model, spec = _model(params)
    rep = check_assumptions(model, sample_states(3, max(10, samples), seed), seed=seed)
    out = [Check(f"assumption {r.name}", r.worst_residual, r.tolerance, r.passed, r.description)
           for r in rep.results]
    rng = np.random.default_rng(seed)
    off = acc = skew = schur = 0.0
    m = model.mass_matrix
    for _ in range(samples):
        q = rng.uniform(-math.pi, math.pi, 3)
        qd = rng.normal(size=3)
        u = rng.normal(size=2)
        st = GeneralizedState(q, qd)
        T = spec.T(q)
        D = T.T @ m(q) @ T
        off = max(off, np.abs(D[0, 1:]).max(), np.abs(D[1:, 0]).max())
        S = schur_block(model, q)
        schur = max(schur, np.abs(D[1:, 1:] - S).max())
        acc = max(acc, np.abs(decoupled_dynamics(model, spec, st, u) - forward_dynamics(model, st, u)).max())
        skew = max(skew, skew_symmetry_residual(model, st))
    out += [
        _le("off-diagonal of T^T M T", off, 1e-12),
        _le("actuated block vs Schur complement", schur, 1e-12),
        _le("decoupled vs original acceleration", acc, 1e-9),
        _le("skew symmetry of Mdot - 2C", skew, 1e-12),
    ]
    if trajectories:
        eq = trajectory_equivalence(params, n_traj=trajectories, seed=seed)
        out.append(_le("decoupled vs original trajectory, 1 s", eq["max_position_error"], 1e-6,
                       f"{trajectories} runs, RK4 dt 1e-4, {eq['seconds']:.1f} s"))
    return out


def verify_sdc(samples: int = 1000, seed: int = 0, params=None, out_dir=None) -> list:
    """SDC reconstruction, pointwise controllability and the degenerate-state catalog.

    With ``out_dir`` the residual histogram and the catalog are written as
    ``sdc_residuals.csv`` and ``sdc_degenerate.csv``.
    """
    model, spec = _model(params)
    form = sdc_factorize(spec, model)
    rng = np.random.default_rng(seed)
    res = np.empty(samples)
    ranks = np.empty(samples, dtype=int)
    for k in range(samples):
        x = rng.uniform(-1, 1, 6) * np.array([1, 1, 1, 1, math.pi, 2])
        u = rng.normal(size=2)
        A, B = form.evaluate(x)
        f = plant_rhs(model, spec, x, u)
        res[k] = np.abs(A @ x + B @ u - f).max() / max(1.0, np.abs(f).max())
        ranks[k] = ctrb_rank(A, B)
    cat = degenerate_scan(form)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        edges = np.concatenate([[0.0], 10.0 ** np.arange(-17, 1)])
        counts, _ = np.histogram(res, bins=edges)
        with open(out_dir / "sdc_residuals.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([repr(lo), repr(hi), int(c)])
        with open(out_dir / "sdc_degenerate.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "dx1", "y1", "dy1", "theta", "dtheta", "rank"])
            for x, r in cat:
                w.writerow([repr(float(v)) for v in x] + [r])
    n_deg = sum(1 for _, r in cat if r < 6)
    return [
        _le("A(x)x + B(x)u reconstruction (relative)", res.max(), 1e-9),
        Check("controllability rank 6 at random states", float(np.sum(ranks < 6)), 0.0, bool(np.all(ranks == 6)),
              f"{samples} states"),
        Check("degenerate catalog entries", float(n_deg), float("inf"), True, f"{len(cat)} scanned"),
    ]


def verify_care(samples: int = 200, seed: int = 0, params=None) -> list:
    """Analytic cases, random plant states with the reference weights, and Newton-Kleinman agreement."""
    out = []
    sol = solve_care([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    out.append(_le("scalar integrator P = 1", abs(sol.P[0, 0] - 1.0), 1e-10))
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    sol = solve_care(A, B, np.eye(2), np.eye(1))
    P = np.array([[math.sqrt(3), 1.0], [1.0, math.sqrt(3)]])
    out.append(_le("double integrator P", np.abs(sol.P - P).max(), 1e-10))
    model, spec = _model(params or HolonomicParams(inputs="normalized"))
    form = sdc_factorize(spec, model)
    W = reference_weighting()
    rng = np.random.default_rng(seed)
    worst = agree = 0.0
    bad = 0
    for _ in range(samples):
        x = rng.uniform(-1, 1, 6) * np.array([0.5, 0.2, 0.5, 0.2, math.pi, 1])
        A, B = form.evaluate(x)
        Q = W.Q(x)
        sol = solve_care(A, B, Q, W.R)
        worst = max(worst, sol.residual)
        pd_ok = np.min(np.linalg.eigvalsh(sol.P)) > 0 and np.allclose(sol.P, sol.P.T, rtol=0, atol=1e-12)
        bad += int(not (sol.hurwitz and pd_ok))
        nk = newton_kleinman(A, B, Q, W.R, K0=sol.K)
        agree = max(agree, np.abs(nk.P - sol.P).max() / max(1.0, np.abs(sol.P).max()))
    out += [
        _le("plant-state CARE residual", worst, 1e-8, f"{samples} states"),
        Check("P symmetric PD and closed loop Hurwitz", float(bad), 0.0, bad == 0),
        _le("Newton-Kleinman vs Schur (relative)", agree, 1e-8),
    ]
    return out


SUITES = {"transform": verify_transform, "sdc": verify_sdc, "care": verify_care}


def run_suites(names, out_dir=None, seed: int = 0) -> dict:
    """Run the named suites; ``{name: [Check, ...]}``."""
    res = {}
    for name in names:
        if name == "sdc":
            res[name] = verify_sdc(seed=seed, out_dir=out_dir)
        else:
            res[name] = SUITES[name](seed=seed)
    return res
