"""Fixed-step stochastic simulation of a robot swarm in a walled arena.

Each step applies the broadcast command to every robot, integrates with
semi-implicit Euler, adds velocity noise (Euler-Maruyama), then enforces the
arena walls and disk collisions.  All randomness comes from one generator
seeded by the config, drawn robot by robot and axis by axis, so a config
fully determines its trace.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .control import (
    HysteresisConfig,
    PDGains,
    SdreController,
    SupervisorState,
    pd_control,
    plant_states,
    supervisor_step,
    swarm_stats,
)
from .dynamics import HolonomicParams, forced_dynamics_batch, holonomic_model
from .riccati import lyapunov_monitor, reference_weighting
from .sdc import sdc_factorize
from .transform import build_transform

__all__ = [
    "CONTROLLERS",
    "StateBlowupError",
    "SimConfig",
    "World",
    "SimTrace",
    "initial_world",
    "apply_wall_constraints",
    "resolve_collisions",
    "step",
    "energy",
    "run_scenario",
    "free_diffusion",
    "diffusion_rate",
]

CONTROLLERS = ("sdre", "pd")
BLOWUP_LIMIT = 1e6
HEADING_TOL = 0.05


class StateBlowupError(FloatingPointError):
    """A state component left the plausible range."""


@dataclass(frozen=True)
class SimConfig:
    """Everything that determines a run.

    Lengths in m, times in s.  ``noise_sigma`` is the intensity of the white
    noise added to every velocity component (units per s per sqrt(s)).
    ``sigma_enter`` / ``sigma_exit`` default to ``enter_mult r^2 +
    0.55 N r^2`` and ``exit_mult r^2 + 0.55 N r^2``.
    """

    n_robots: int = 4
    dt: float = 0.01
    duration: float = 60.0
    arena: tuple = (0.0, 0.5, 0.0, 0.5)
    noise_sigma: float = 1e-4
    seed: int = 0
    radius: float = 0.05
    collisions: bool = True
    controller: str = "sdre"
    params: HolonomicParams = field(default_factory=lambda: HolonomicParams(inputs="normalized"))
    target: tuple = (0.3, 0.25, 0.0)
    gather_corner: Optional[tuple] = None
    heading_spread: float = math.pi / 4
    init_margin: float = 2.0
    q_diag: tuple = (260.0, 1.0, 260.0, 1.0, 160.0, 100.0)
    q_scale: float = 1e-3
    angle_weight: float = 0.01
    r_weight: float = 50.0
    pd_gains: PDGains = field(default_factory=PDGains)
    enter_mult: float = 15.0
    exit_mult: float = 2.5
    sigma_enter: Optional[float] = None
    sigma_exit: Optional[float] = None
    lever_gain: float = 1.0
    lever_tau: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.n_robots < 1:
            raise ValueError("need at least one robot")
        x0, x1, y0, y1 = self.arena
        if not (x1 - x0 > 2 * self.radius and y1 - y0 > 2 * self.radius):
            raise ValueError("arena must be wider than one robot on both axes")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        object.__setattr__(self, "arena", tuple(float(v) for v in self.arena))
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        if len(self.target) != 3:
            raise ValueError("target is (x, y, theta)")
        self.hysteresis()

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.dt))

    def hysteresis(self) -> HysteresisConfig:
        corner = self.gather_corner if self.gather_corner is not None else (self.arena[0], self.arena[2])
        base = HysteresisConfig.from_radius(self.radius, self.n_robots, self.target, corner,
                                            self.enter_mult, self.exit_mult)
        if self.sigma_enter is None and self.sigma_exit is None:
            return base
        return HysteresisConfig(self.radius, self.n_robots,
                                base.sigma_enter if self.sigma_enter is None else self.sigma_enter,
                                base.sigma_exit if self.sigma_exit is None else self.sigma_exit,
                                base.gather_corner, base.target)

    def weighting(self):
        return reference_weighting(self.q_diag, self.q_scale, self.angle_weight, self.r_weight)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = asdict(self.params)
        d["pd_gains"] = asdict(self.pd_gains)
        return d


@dataclass
class World:
    """Mutable swarm state: time, configurations ``(N, 3)``, velocities ``(N, 3)``."""

    t: float
    q: np.ndarray
    qdot: np.ndarray

    def copy(self) -> "World":
        return World(self.t, self.q.copy(), self.qdot.copy())


def apply_wall_constraints(q: np.ndarray, qdot: np.ndarray, arena, r: float):
    """Clamp ``(x1, y1)`` into ``[min + r, max - r]``; zero the outward normal velocity.

    Works on one robot ``(3,)`` or a swarm ``(N, 3)``; returns new arrays.
    """
    q = np.array(q, dtype=float)
    qdot = np.array(qdot, dtype=float)
    Q = np.atleast_2d(q)
    V = np.atleast_2d(qdot)
    for axis, (lo, hi) in enumerate(((arena[0], arena[1]), (arena[2], arena[3]))):
        low = Q[:, axis] < lo + r
        high = Q[:, axis] > hi - r
        Q[low, axis] = lo + r
        Q[high, axis] = hi - r
        V[low & (V[:, axis] < 0), axis] = 0.0
        V[high & (V[:, axis] > 0), axis] = 0.0
    return q, qdot


def resolve_collisions(q: np.ndarray, qdot: np.ndarray, r: float, passes: int = 8):
    """Push overlapping disks apart to distance ``2 r``.

    Each overlapping pair moves symmetrically along the line of centres and
    loses its approaching relative normal velocity.  Repeats until no pair
    overlaps or ``passes`` sweeps have run.  Returns new arrays.
    """
    q = np.array(q, dtype=float)
    qdot = np.array(qdot, dtype=float)
    n = q.shape[0]
    for _ in range(passes):
        moved = False
        for a in range(n):
            for b in range(a + 1, n):
                d = q[b, :2] - q[a, :2]
                dist = math.hypot(d[0], d[1])
                if dist >= 2 * r:
                    continue
                normal = d / dist if dist > 0 else np.array([1.0, 0.0])
                corr = 0.5 * (2 * r - dist)
                q[a, :2] -= corr * normal
                q[b, :2] += corr * normal
                rel = float((qdot[b, :2] - qdot[a, :2]) @ normal)
                if rel < 0:
                    qdot[a, :2] += 0.5 * rel * normal
                    qdot[b, :2] -= 0.5 * rel * normal
                moved = True
        if not moved:
            break
    return q, qdot


def initial_world(cfg: SimConfig, rng: np.random.Generator) -> World:
    """Uniform positions with margin ``init_margin * r``, headings in
    ``[-heading_spread, heading_spread]``, zero velocities."""
    x0, x1, y0, y1 = cfg.arena
    margin = cfg.init_margin * cfg.radius
    n = cfg.n_robots
    q = np.zeros((n, 3))
    q[:, 0] = rng.uniform(x0 + margin, x1 - margin, n)
    q[:, 1] = rng.uniform(y0 + margin, y1 - margin, n)
    q[:, 2] = rng.uniform(-cfg.heading_spread, cfg.heading_spread, n)
    qdot = np.zeros((n, 3))
    if cfg.collisions:
        q, qdot = resolve_collisions(q, qdot, cfg.radius)
    q, qdot = apply_wall_constraints(q, qdot, cfg.arena, cfg.radius)
    return World(0.0, q, qdot)


def step(world: World, forces: np.ndarray, model, cfg: SimConfig, rng: np.random.Generator) -> World:
    """Advance one ``cfg.dt``.

    ``forces`` holds each robot's generalized force ``(N, 3)``.

    Raises
    ------
    StateBlowupError
        If any coordinate or velocity exceeds ``1e6`` in magnitude.
    """
    dt = cfg.dt
    q = world.q.copy()
    qdot = world.qdot.copy()
    forces = np.asarray(forces, float)
    qdot += forced_dynamics_batch(model, q, qdot, forces) * dt
    if cfg.noise_sigma > 0:
        qdot += cfg.noise_sigma * math.sqrt(dt) * rng.standard_normal(q.shape)
    q += qdot * dt
    q, qdot = apply_wall_constraints(q, qdot, cfg.arena, cfg.radius)
    if cfg.collisions:
        q, qdot = resolve_collisions(q, qdot, cfg.radius)
        q, qdot = apply_wall_constraints(q, qdot, cfg.arena, cfg.radius)
    if not (np.all(np.abs(q) < BLOWUP_LIMIT) and np.all(np.abs(qdot) < BLOWUP_LIMIT)):
        raise StateBlowupError(f"state exceeded {BLOWUP_LIMIT:g} at t={world.t + dt:.2f}")
    return World(world.t + dt, q, qdot)


@dataclass
class SimTrace:
    """Sampled history of a run, one row per step including ``t = 0``.

    ``u`` is the broadcast command in the controller's own units and
    ``u_phys`` the same command as ``[f1 + f3, 2 L f3]`` (SDRE) or
    ``[fx, fy]`` (PD), both in N / N m.  ``e_work`` and ``e_effort`` are the
    accumulated energies before the step taken at that sample.  The
    Lyapunov columns are NaN for the PD controller.
    """

    config: SimConfig
    t: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    u: np.ndarray
    u_phys: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    mode_x: np.ndarray
    mode_y: np.ndarray
    error: np.ndarray
    P: np.ndarray
    L: np.ndarray
    dL: np.ndarray
    dP_max: np.ndarray
    care_residual: np.ndarray
    care_method: np.ndarray
    e_work: np.ndarray
    e_effort: np.ndarray
    status: str = "ok"
    failure: str = ""

    @property
    def energy_work(self) -> float:
        return float(self.e_work[-1])

    @property
    def energy_effort(self) -> float:
        return float(self.e_effort[-1])

    def within_tolerance(self) -> np.ndarray:
        """Per sample: mean within ``2 r`` of the goal and heading within ``HEADING_TOL``."""
        e = self.error
        return (np.hypot(e[:, 0], e[:, 2]) < 2 * self.config.radius) & (np.abs(e[:, 4]) < HEADING_TOL)

    def regulated(self) -> bool:
        """Final mean within ``2 r`` of the target and ``|theta - theta*| < HEADING_TOL``."""
        if self.status != "ok" or self.t.size == 0:
            return False
        c = self.config
        m = self.mean[-1]
        return bool(math.hypot(m[0] - c.target[0], m[2] - c.target[1]) < 2 * c.radius
                    and abs(m[4] - c.target[2]) < HEADING_TOL)

    def lyapunov_flags(self) -> np.ndarray:
        """Samples with ``dL >= 0`` while outside the regulation tolerance (SDRE only)."""
        if self.config.controller != "sdre":
            return np.zeros(self.t.size, dtype=bool)
        return (self.dL >= 0) & ~self.within_tolerance()

    def mode_switches(self):
        """``(axis, index, new_mode)`` for every supervisor transition."""
        out = []
        for axis, modes in (("x", self.mode_x), ("y", self.mode_y)):
            for k in np.nonzero(modes[1:] != modes[:-1])[0] + 1:
                out.append((axis, int(k), str(modes[k])))
        return sorted(out, key=lambda e: e[1])


def _lyapunov_columns(t, error, P, controller):
    n = t.size
    nan = np.full(n, np.nan)
    if controller != "sdre" or n < 3:
        L = np.einsum("ti,tij,tj->t", error, P, error) if controller == "sdre" else nan.copy()
        return L, nan.copy(), nan.copy()
    lm = lyapunov_monitor(t, error, P)
    return lm.L, lm.dL, lm.dP_max_eig


def energy(trace: SimTrace):
    """``(energy_work, energy_effort)`` accumulated over the trace."""
    return trace.energy_work, trace.energy_effort


def _build_controller(cfg: SimConfig):
    model = holonomic_model(cfg.params)
    if cfg.controller == "pd":
        return model, None
    spec = build_transform(model)
    form = sdc_factorize(spec, model, lever_gain=cfg.lever_gain, lever_tau=cfg.lever_tau)
    return model, SdreController(form, cfg.weighting())


def run_scenario(cfg: SimConfig) -> SimTrace:
    """Simulate ``cfg`` from its seeded initial condition.

    On a solver failure or state blow-up the trace up to that point is
    returned with ``status = "aborted"`` and the reason in ``failure``.
    """
    model, ctrl = _build_controller(cfg)
    hcfg = cfg.hysteresis()
    scale = cfg.params.input_scale
    rng = np.random.default_rng(cfg.seed)
    world = initial_world(cfg, rng)
    sup = SupervisorState.initial(hcfg)
    n = cfg.n_robots
    K = cfg.steps
    rows = K + 1
    t = np.zeros(rows)
    Qs = np.zeros((rows, n, 3))
    Vs = np.zeros((rows, n, 3))
    U = np.zeros((rows, 2))
    Uphys = np.zeros((rows, 2))
    mean = np.zeros((rows, 6))
    var = np.zeros((rows, 2))
    mode_x = np.empty(rows, dtype=object)
    mode_y = np.empty(rows, dtype=object)
    err = np.zeros((rows, 6))
    Ps = np.zeros((rows, 6, 6))
    resid = np.full(rows, np.nan)
    method = np.empty(rows, dtype=object)
    e_work = np.zeros(rows)
    e_effort = np.zeros(rows)
    work = effort = 0.0
    status, failure = "ok", ""
    last = -1
    for k in range(rows):
        try:
            stats = swarm_stats(plant_states(world.q, world.qdot))
            sup = supervisor_step(stats, hcfg, sup)
            if ctrl is not None:
                sd = ctrl.step(stats, sup, hcfg)
                u = sd.u
                u_phys = u * scale
                s, c = np.sin(world.q[:, 2]), np.cos(world.q[:, 2])
                forces = np.stack([-s * u_phys[0], c * u_phys[0], np.full(n, u_phys[1])], axis=1)
                err[k], Ps[k], resid[k], method[k] = sd.error, sd.P, sd.residual, sd.method
            else:
                u = pd_control(stats, sup, cfg.pd_gains)
                u_phys = u
                forces = np.zeros((n, 3))
                forces[:, :2] = u
                err[k] = stats.mean_state - np.array([sup.goal[0], 0, sup.goal[1], 0, hcfg.target[2], 0])
                method[k] = "pd"
        except Exception as exc:  # noqa: BLE001 - record and stop
            status, failure = "aborted", f"{type(exc).__name__}: {exc}"
            break
        t[k] = world.t
        Qs[k], Vs[k] = world.q, world.qdot
        U[k], Uphys[k] = u, u_phys
        mean[k] = stats.mean_state
        var[k] = stats.var_x, stats.var_y
        mode_x[k], mode_y[k] = sup.mode_x.value, sup.mode_y.value
        e_work[k], e_effort[k] = work, effort
        last = k
        if k == K:
            break
        work += float(np.sum(np.abs(np.einsum("ij,ij->i", forces, world.qdot)))) * cfg.dt
        effort += float(u_phys @ u_phys) * cfg.dt
        try:
            world = step(world, forces, model, cfg, rng)
        except Exception as exc:  # noqa: BLE001
            status, failure = "aborted", f"{type(exc).__name__}: {exc}"
            break
    m = last + 1
    L, dL, dP = _lyapunov_columns(t[:m], err[:m], Ps[:m], cfg.controller)
    return SimTrace(cfg, t[:m], Qs[:m], Vs[:m], U[:m], Uphys[:m], mean[:m], var[:m],
                    mode_x[:m].astype(str), mode_y[:m].astype(str), err[:m], Ps[:m], L, dL, dP,
                    resid[:m], method[:m].astype(str), e_work[:m], e_effort[:m], status, failure)


def free_diffusion(noise_sigma: float, seeds, n_robots: int = 10, duration: float = 2.0, dt: float = 0.01,
                   m: float = 0.01, L: float = 0.02):
    """Seed-averaged swarm position variance of unforced, noisy robots.

    Robots start at the origin at rest with zero heading in an arena far
    larger than their spread, with collisions off, so only the noise moves
    them.  Seed ``s`` uses ``default_rng(s)``: the same seeds at two noise
    levels share their noise draws.

    Returns
    -------
    t : ndarray
    var : ndarray
        ``var_x + var_y`` averaged over seeds at each ``t``.
    """
    cfg = SimConfig(n_robots=n_robots, dt=dt, duration=duration, arena=(-1e3, 1e3, -1e3, 1e3),
                    noise_sigma=noise_sigma, radius=1e-3, collisions=False, controller="pd",
                    params=HolonomicParams(m=m, L=L, inputs="normalized"))
    model = holonomic_model(cfg.params)
    forces = np.zeros((n_robots, 3))
    seeds = list(seeds)
    t = np.arange(cfg.steps + 1) * dt
    var = np.zeros(t.size)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        world = World(0.0, np.zeros((n_robots, 3)), np.zeros((n_robots, 3)))
        for k in range(t.size):
            if k:
                world = step(world, forces, model, cfg, rng)
            var[k] += world.q[:, 0].var() + world.q[:, 1].var()
    return t, var / len(seeds)


def diffusion_rate(t: np.ndarray, var: np.ndarray) -> float:
    """Least-squares ``c`` in ``var = c t^3``.

    White velocity noise of intensity ``sigma`` makes each position
    coordinate drift with variance ``sigma^2 t^3 / 3``.  The population
    variance of ``N`` such robots over two coordinates has expectation
    ``(N - 1) / N * 2 sigma^2 t^3 / 3``, so ``c`` is proportional to
    ``sigma^2``.
    """
    t3 = np.asarray(t, float) ** 3
    return float(t3 @ np.asarray(var, float) / (t3 @ t3))
