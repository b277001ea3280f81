"""Swarm statistics, the mean/variance supervisor and the two controllers.

Every robot receives the same command.  The supervisor watches the
positional variance on each axis: once it grows past ``sigma_enter`` the
swarm is driven into the arena's minimum wall on that axis (gather), and it
returns to tracking the target once the variance has dropped below
``sigma_exit``.  The gap between the two thresholds prevents chattering.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .riccati import CareError, CareSolution, Weighting, newton_kleinman, sdre_gain, solve_care

__all__ = [
    "Mode",
    "SwarmStats",
    "HysteresisConfig",
    "SupervisorState",
    "PDGains",
    "EmptySwarmError",
    "plant_states",
    "swarm_stats",
    "supervisor_step",
    "goal_state",
    "pd_control",
    "sdre_control",
    "SdreController",
    "SdreStep",
]

DISK_PACKING_VARIANCE = 0.55


class EmptySwarmError(ValueError):
    pass


class Mode(str, enum.Enum):
    TRACK = "TRACK"
    GATHER = "GATHER"


@dataclass(frozen=True)
class SwarmStats:
    """Population mean of the plant states and positional variances (1/N)."""

    mean_state: np.ndarray
    var_x: float
    var_y: float
    n: int

    @property
    def var_total(self) -> float:
        return self.var_x + self.var_y


def plant_states(q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Stack per-robot ``(q, qdot)`` into ``(N, 6)`` plant states."""
    q = np.atleast_2d(q)
    qdot = np.atleast_2d(qdot)
    return np.stack([q[:, 0], qdot[:, 0], q[:, 1], qdot[:, 1], q[:, 2], qdot[:, 2]], axis=1)


def swarm_stats(states) -> SwarmStats:
    """Means and population variances of ``(N, 6)`` plant states.

    Examples
    --------
    >>> s = swarm_stats([[1, 0, 0, 0, 0, 0], [-1, 0, 0, 0, 0, 0]])
    >>> float(s.mean_state[0]), s.var_x
    (0.0, 1.0)
    """
    X = np.atleast_2d(np.asarray(states, float))
    if X.shape[0] == 0:
        raise EmptySwarmError("swarm has no robots")
    if X.shape[1] != 6:
        raise ValueError("plant states must have 6 components")
    mean = X.mean(axis=0)
    var_x = float(np.mean((X[:, 0] - mean[0]) ** 2))
    var_y = float(np.mean((X[:, 2] - mean[2]) ** 2))
    return SwarmStats(mean, var_x, var_y, X.shape[0])


@dataclass(frozen=True)
class HysteresisConfig:
    """Thresholds and goals of the supervisor.

    Attributes
    ----------
    r : float
        Robot radius (m).
    n_robots : int
    sigma_enter, sigma_exit : float
        Per-axis variance thresholds (m^2) for entering and leaving gather.
    gather_corner : tuple
        ``(x_min, y_min)`` goal while gathering.
    target : tuple
        ``(x*, y*, theta*)``.
    """

    r: float
    n_robots: int
    sigma_enter: float
    sigma_exit: float
    gather_corner: tuple
    target: tuple

    def __post_init__(self):
        if not self.sigma_enter > self.sigma_exit >= self.sigma_optimal:
            raise ValueError(
                f"need sigma_enter > sigma_exit >= sigma_optimal, got {self.sigma_enter:.3g}, "
                f"{self.sigma_exit:.3g}, {self.sigma_optimal:.3g}")
        object.__setattr__(self, "target", tuple(float(v) for v in self.target))
        object.__setattr__(self, "gather_corner", tuple(float(v) for v in self.gather_corner))

    @property
    def sigma_optimal(self) -> float:
        """Packing bound ``0.55 N r^2``."""
        return DISK_PACKING_VARIANCE * self.n_robots * self.r ** 2

    @property
    def band(self) -> float:
        return self.sigma_enter - self.sigma_exit

    @classmethod
    def from_radius(cls, r: float, n_robots: int, target, gather_corner,
                    enter_mult: float = 15.0, exit_mult: float = 2.5) -> "HysteresisConfig":
        """Thresholds ``mult * r^2 + 0.55 N r^2``."""
        opt = DISK_PACKING_VARIANCE * n_robots * r ** 2
        return cls(r, n_robots, enter_mult * r ** 2 + opt, exit_mult * r ** 2 + opt, tuple(gather_corner), tuple(target))


@dataclass(frozen=True)
class SupervisorState:
    mode_x: Mode
    mode_y: Mode
    goal: tuple

    @classmethod
    def initial(cls, cfg: HysteresisConfig) -> "SupervisorState":
        return cls(Mode.TRACK, Mode.TRACK, (cfg.target[0], cfg.target[1]))


def _axis_mode(var: float, prev: Mode, cfg: HysteresisConfig) -> Mode:
    if prev is Mode.TRACK and var > cfg.sigma_enter:
        return Mode.GATHER
    if prev is Mode.GATHER and var < cfg.sigma_exit:
        return Mode.TRACK
    return prev


def supervisor_step(stats: SwarmStats, cfg: HysteresisConfig, prev: SupervisorState) -> SupervisorState:
    """Per-axis hysteresis update of the modes and goal."""
    mx = _axis_mode(stats.var_x, prev.mode_x, cfg)
    my = _axis_mode(stats.var_y, prev.mode_y, cfg)
    gx = cfg.gather_corner[0] if mx is Mode.GATHER else cfg.target[0]
    gy = cfg.gather_corner[1] if my is Mode.GATHER else cfg.target[1]
    return SupervisorState(mx, my, (gx, gy))


def goal_state(sup: SupervisorState, cfg: HysteresisConfig) -> np.ndarray:
    """Plant-state goal ``[x_goal, 0, y_goal, 0, theta*, 0]``."""
    return np.array([sup.goal[0], 0.0, sup.goal[1], 0.0, cfg.target[2], 0.0])


@dataclass(frozen=True)
class PDGains:
    kp_x: float = 0.04
    kp_y: float = 0.03
    kd_x: float = 0.03
    kd_y: float = 0.04

    def __post_init__(self):
        if min(self.kp_x, self.kp_y, self.kd_x, self.kd_y) <= 0:
            raise ValueError("PD gains must be positive")


def pd_control(stats: SwarmStats, sup: SupervisorState, gains: PDGains = PDGains()) -> np.ndarray:
    """Global forces ``(fx, fy)`` of the fully actuated baseline."""
    x = stats.mean_state
    fx = gains.kp_x * (sup.goal[0] - x[0]) - gains.kd_x * x[1]
    fy = gains.kp_y * (sup.goal[1] - x[2]) - gains.kd_y * x[3]
    return np.array([fx, fy])


@dataclass(frozen=True)
class SdreStep:
    """One SDRE evaluation.

    ``method`` is ``"schur"``, ``"newton-kleinman"`` (warm-started fallback)
    or ``"hold"`` (both solvers failed, previous gain reused).
    """

    u: np.ndarray
    error: np.ndarray
    K: np.ndarray
    P: np.ndarray
    residual: float
    method: str


def sdre_control(stats: SwarmStats, sup: SupervisorState, W: Weighting, form, cfg: HysteresisConfig,
                 warm: Optional[CareSolution] = None) -> np.ndarray:
    """Stateless SDRE command ``u = -R^-1 B^T P(e) e`` on the mean error state."""
    u, _, _ = sdre_gain(form, W, stats.mean_state - goal_state(sup, cfg), warm=warm)
    return u


class SdreController:
    """SDRE regulator of the swarm mean with warm start and gain hold.

    The SDC matrices are evaluated at the error state ``e = xbar - goal``.
    Because the plant drift depends only on the heading states and the
    heading goal is zero, ``A(e) e`` equals the drift at the mean state.

    Parameters
    ----------
    form : SdcForm
    W : Weighting
    """

    def __init__(self, form, W: Weighting):
        self.form = form
        self.W = W
        self.last: Optional[CareSolution] = None
        self.fallbacks = {"newton-kleinman": 0, "hold": 0}

    def reset(self):
        self.last = None
        self.fallbacks = {"newton-kleinman": 0, "hold": 0}

    def step(self, stats: SwarmStats, sup: SupervisorState, cfg: HysteresisConfig) -> SdreStep:
        e = stats.mean_state - goal_state(sup, cfg)
        A, B = self.form.evaluate(e)
        Q = self.W.Q(e)
        method = "schur"
        try:
            care = solve_care(A, B, Q, self.W.R)
        except CareError:
            care = None
            if self.last is not None:
                try:
                    care = newton_kleinman(A, B, Q, self.W.R, P0=self.last.P)
                    method = "newton-kleinman"
                except CareError:
                    care = None
            if care is None:
                if self.last is None:
                    if np.any(e):
                        raise
                    # at the goal any gain gives u = 0
                    z = np.zeros((B.shape[1], e.size))
                    return SdreStep(np.zeros(B.shape[1]), e, z, np.zeros((e.size, e.size)), float("nan"), "hold")
                method = "hold"
        if method != "schur":
            self.fallbacks[method] += 1
        if care is not None:
            self.last = care
        K, P = self.last.K, self.last.P
        residual = care.residual if care is not None else float("nan")
        return SdreStep(-K @ e, e, K, P, residual, method)
