"""Euler-Lagrange dynamics and the three-mass holonomic robot.

A mechanical system obeys

    M(q) q'' + C(q, q') q' + grad V(q) = G(q) u

with ``M`` symmetric positive definite.  :class:`ELModel` bundles the
evaluators for one such system together with the split of ``q`` into
unactuated coordinates ``q_u`` and actuated coordinates ``q_a``.

The holonomic robot is three point masses ``m`` spaced ``L`` apart along a
rigid shaft.  Its configuration is ``q = [x1, y1, theta]`` where ``(x1, y1)``
is the end mass and ``theta`` the shaft heading.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

__all__ = [
    "GeneralizedState",
    "ELModel",
    "HolonomicParams",
    "SingularMassError",
    "INPUT_CONVENTIONS",
    "holonomic_model",
    "holonomic_split_coriolis",
    "christoffel_coriolis",
    "forward_dynamics",
    "forced_dynamics",
    "mass_partials",
    "mass_derivative",
    "skew_symmetry_residual",
    "lagrangian",
    "kinetic_energy",
    "rk4_step",
    "integrate_rk4",
    "forward_dynamics_batch",
    "forced_dynamics_batch",
    "rk4_batch",
]

MASS_COND_LIMIT = 1e12
FD_STEP = 1e-6


class SingularMassError(ValueError):
    """Raised when the mass matrix is too ill-conditioned to invert."""


@dataclass(frozen=True)
class GeneralizedState:
    """Configuration ``q`` and velocity ``qdot`` of an n-dof system."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float).reshape(-1)
        qdot = np.array(self.qdot, dtype=float).reshape(-1)
        if q.shape != qdot.shape:
            raise ValueError(f"q has length {q.size} but qdot has length {qdot.size}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("state entries must be finite")
        q.setflags(write=False)
        qdot.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class ELModel:
    """Evaluators of an Euler-Lagrange system.

    Parameters
    ----------
    n, m_inputs : int
        Degrees of freedom and actuator count, ``m_inputs < n``.
    mass_matrix : callable
        ``q -> (n, n)`` inertia matrix.
    coriolis : callable
        ``(q, qdot) -> (n, n)`` Coriolis matrix.
    potential_grad : callable
        ``q -> (n,)`` gradient of the potential.
    input_matrix : callable
        ``q -> (n, m_inputs)`` input map.
    unactuated, actuated : tuple of int
        Index sets of ``q_u`` and ``q_a``; together a partition of ``range(n)``.
    potential : callable, optional
        ``q -> float``.  Defaults to zero.
    mass_partials : callable, optional
        ``q -> (n, n, n)`` array whose ``[k]`` slice is ``dM/dq_k``.  When
        absent, derivatives of ``M`` fall back to central differences.
    phi_a : callable, optional
        Closed-form antiderivative ``q_a -> (s,)`` of ``m_uu^-1 m_au^T``,
        used by the coordinate transformation when known.

    Notes
    -----
    The batched routines (:func:`forward_dynamics_batch` and friends) call
    the evaluators with stacked arguments of shape ``(B, n)`` and expect
    results with the same leading axis.  The holonomic robot's evaluators
    broadcast this way; a model whose evaluators do not can still use every
    single-state routine.
    """

    n: int
    m_inputs: int
    mass_matrix: Callable[[np.ndarray], np.ndarray]
    coriolis: Callable[[np.ndarray, np.ndarray], np.ndarray]
    potential_grad: Callable[[np.ndarray], np.ndarray]
    input_matrix: Callable[[np.ndarray], np.ndarray]
    unactuated: tuple
    actuated: tuple
    potential: Optional[Callable[[np.ndarray], float]] = None
    mass_partials: Optional[Callable[[np.ndarray], np.ndarray]] = None
    phi_a: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "el-model"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not 0 < self.m_inputs < self.n:
            raise ValueError("need 0 < m_inputs < n for an underactuated model")
        u = tuple(int(i) for i in self.unactuated)
        a = tuple(int(i) for i in self.actuated)
        if sorted(u + a) != list(range(self.n)) or len(a) != self.m_inputs:
            raise ValueError("unactuated/actuated must partition range(n) with len(actuated) == m_inputs")
        object.__setattr__(self, "unactuated", u)
        object.__setattr__(self, "actuated", a)

    @property
    def s(self) -> int:
        """Number of unactuated coordinates."""
        return self.n - self.m_inputs

    def V(self, q) -> float:
        return 0.0 if self.potential is None else float(self.potential(np.asarray(q, float)))


INPUT_CONVENTIONS = ("torque", "normalized")


@dataclass(frozen=True)
class HolonomicParams:
    """Physical parameters of the three-mass robot.

    Parameters
    ----------
    m : float
        Mass of each particle (kg).
    L : float
        Spacing between neighbouring particles (m).
    inputs : {"torque", "normalized"}
        Input convention.  ``"torque"`` uses ``u = [f1 + f3, 2 L f3]``: a
        force along the shaft normal and a torque about the end mass.
        ``"normalized"`` rescales these to ``u = [(f1 + f3)/L, 2 f3/L]`` so
        that the heading obeys ``theta'' = (u2 - u1) / (2 m)`` for any ``L``.
    """

    m: float = 0.01
    L: float = 0.02
    inputs: str = "torque"

    def __post_init__(self):
        if not (self.m > 0 and self.L > 0):
            raise ValueError("m and L must be positive")
        if self.inputs not in INPUT_CONVENTIONS:
            raise ValueError(f"inputs must be one of {INPUT_CONVENTIONS}, got {self.inputs!r}")

    @property
    def input_scale(self) -> np.ndarray:
        """Factors mapping this convention's ``u`` to ``[f1 + f3, 2 L f3]``."""
        if self.inputs == "torque":
            return np.array([1.0, 1.0])
        return np.array([self.L, self.L ** 2])


def holonomic_model(params: HolonomicParams = HolonomicParams()) -> ELModel:
    """Build the three-mass holonomic robot.

    The Coriolis matrix is the Christoffel-symbol form, which makes
    ``M' - 2C`` skew-symmetric.  :func:`holonomic_split_coriolis` gives an
    alternative with the same ``C q'`` product.

    Examples
    --------
    >>> model = holonomic_model(HolonomicParams(m=0.01, L=0.02))
    >>> model.mass_matrix([0.0, 0.0, 0.0])[1, 2]
    0.0006
    """
    m, L = params.m, params.L
    g1, g2 = params.input_scale

    def mass_matrix(q):
        q = np.asarray(q, float)
        s, c = np.sin(q[..., 2]), np.cos(q[..., 2])
        a = 3 * L * m
        M = np.zeros(q.shape[:-1] + (3, 3))
        M[..., 0, 0] = M[..., 1, 1] = 3 * m
        M[..., 2, 2] = 5 * L * L * m
        M[..., 0, 2] = M[..., 2, 0] = -a * s
        M[..., 1, 2] = M[..., 2, 1] = a * c
        return M

    def mass_partials(q):
        q = np.asarray(q, float)
        s, c = np.sin(q[..., 2]), np.cos(q[..., 2])
        a = 3 * L * m
        d = np.zeros(q.shape[:-1] + (3, 3, 3))
        d[..., 2, 0, 2] = d[..., 2, 2, 0] = -a * c
        d[..., 2, 1, 2] = d[..., 2, 2, 1] = -a * s
        return d

    def coriolis(q, qdot):
        q, qdot = np.asarray(q, float), np.asarray(qdot, float)
        s, c = np.sin(q[..., 2]), np.cos(q[..., 2])
        a = 3 * L * m * qdot[..., 2]
        C = np.zeros(q.shape[:-1] + (3, 3))
        C[..., 0, 2] = -a * c
        C[..., 1, 2] = -a * s
        return C

    def input_matrix(q):
        q = np.asarray(q, float)
        s, c = np.sin(q[..., 2]), np.cos(q[..., 2])
        G = np.zeros(q.shape[:-1] + (3, 2))
        G[..., 0, 0] = -s * g1
        G[..., 1, 0] = c * g1
        G[..., 2, 1] = g2
        return G

    def phi_a(qa):
        qa = np.asarray(qa, float)
        return L * np.cos(qa[..., 1:2])

    return ELModel(
        n=3,
        m_inputs=2,
        mass_matrix=mass_matrix,
        coriolis=coriolis,
        potential_grad=lambda q: np.zeros(np.shape(q)),
        input_matrix=input_matrix,
        unactuated=(0,),
        actuated=(1, 2),
        potential=lambda q: 0.0,
        mass_partials=mass_partials,
        phi_a=phi_a,
        name="holonomic-robot",
        meta={"params": params},
    )


def holonomic_split_coriolis(params: HolonomicParams, q, qdot) -> np.ndarray:
    """Alternative Coriolis matrix with split lower-left entries.

    The first two rows match :func:`holonomic_model`.  The third row is
    ``[3 L m c w / 2, 3 L m s w / 2, h_s]`` with ``h_s = -(3 L m / 2)(c x1' +
    s y1')``, so it contributes nothing to ``C q'`` and the equations of
    motion are unchanged.  Unlike the Christoffel form it does not make
    ``M' - 2C`` skew-symmetric.
    """
    m, L = params.m, params.L
    s, c = np.sin(q[2]), np.cos(q[2])
    w = qdot[2]
    a = 3 * L * m
    h_s = -0.5 * a * (c * qdot[0] + s * qdot[1])
    return np.array([[0.0, 0.0, -a * c * w],
                     [0.0, 0.0, -a * s * w],
                     [0.5 * a * c * w, 0.5 * a * s * w, h_s]])


def _fd_mass_partials(model: ELModel, q: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    d = np.empty((model.n, model.n, model.n))
    for k in range(model.n):
        step = h * max(1.0, abs(q[k]))
        qp, qm = q.copy(), q.copy()
        qp[k] += step
        qm[k] -= step
        d[k] = (np.asarray(model.mass_matrix(qp)) - np.asarray(model.mass_matrix(qm))) / (2 * step)
    return d


def mass_partials(model: ELModel, q) -> np.ndarray:
    """``dM/dq_k`` stacked along the first axis, analytic when available."""
    q = np.asarray(q, float)
    if model.mass_partials is not None:
        return np.asarray(model.mass_partials(q), float)
    return _fd_mass_partials(model, q)


def christoffel_coriolis(model: ELModel, q, qdot) -> np.ndarray:
    """Coriolis matrix from Christoffel symbols of the mass matrix.

    ``C_kj = sum_i 0.5 (dM_kj/dq_i + dM_ki/dq_j - dM_ij/dq_k) qdot_i``.
    """
    d = mass_partials(model, q)
    qdot = np.asarray(qdot, float)
    # d[i, k, j] = dM_kj / dq_i
    term1 = np.einsum("ikj,i->kj", d, qdot)
    term2 = np.einsum("jki,i->kj", d, qdot)
    term3 = np.einsum("kij,i->kj", d, qdot)
    return 0.5 * (term1 + term2 - term3)


def _cho_solve_guarded(M: np.ndarray, rhs: np.ndarray, cond_limit: float) -> np.ndarray:
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularMassError(f"mass matrix condition number {cond:.3e} exceeds {cond_limit:.1e}")
    try:
        factor = sla.cho_factor(M)
    except np.linalg.LinAlgError as exc:
        raise SingularMassError("mass matrix is not positive definite") from exc
    return sla.cho_solve(factor, rhs)


def forward_dynamics(model: ELModel, state: GeneralizedState, u, cond_limit: float = MASS_COND_LIMIT) -> np.ndarray:
    """Solve ``M q'' = G u - C q' - grad V`` for the accelerations.

    Raises
    ------
    SingularMassError
        If ``cond(M)`` exceeds ``cond_limit`` or ``M`` is not positive definite.
    """
    u = np.asarray(u, float).reshape(-1)
    if u.size != model.m_inputs:
        raise ValueError(f"expected {model.m_inputs} inputs, got {u.size}")
    if state.q.size != model.n:
        raise ValueError(f"state has {state.q.size} coordinates, model has {model.n}")
    return forced_dynamics(model, state, np.asarray(model.input_matrix(state.q), float) @ u, cond_limit)


def forced_dynamics(model: ELModel, state: GeneralizedState, tau, cond_limit: float = MASS_COND_LIMIT) -> np.ndarray:
    """Accelerations under an arbitrary generalized force ``tau``.

    Used for the fully actuated baseline, whose forces are not in the range
    of ``G``.
    """
    q, qdot = state.q, state.qdot
    if q.size != model.n:
        raise ValueError(f"state has {q.size} coordinates, model has {model.n}")
    M = np.asarray(model.mass_matrix(q), float)
    rhs = (np.asarray(tau, float)
           - np.asarray(model.coriolis(q, qdot), float) @ qdot
           - np.asarray(model.potential_grad(q), float))
    return _cho_solve_guarded(M, rhs, cond_limit)


def mass_derivative(model: ELModel, state: GeneralizedState, method: str = "auto", h: float = FD_STEP) -> np.ndarray:
    """Time derivative ``M'`` along the current velocity.

    Parameters
    ----------
    method : {"auto", "analytic", "fd"}
        ``"analytic"`` contracts the model's mass partials with ``qdot``.
        ``"fd"`` differences ``M(q +/- h qdot)``.  ``"auto"`` prefers analytic.
    """
    q, qdot = state.q, state.qdot
    if method == "auto":
        method = "analytic" if model.mass_partials is not None else "fd"
    if method == "analytic":
        if model.mass_partials is None:
            raise ValueError("model has no analytic mass partials")
        return np.einsum("kij,k->ij", np.asarray(model.mass_partials(q), float), qdot)
    if method == "fd":
        return (np.asarray(model.mass_matrix(q + h * qdot)) - np.asarray(model.mass_matrix(q - h * qdot))) / (2 * h)
    raise ValueError(f"unknown method {method!r}")


def skew_symmetry_residual(model: ELModel, state: GeneralizedState, method: str = "auto",
                           coriolis: Optional[np.ndarray] = None) -> float:
    """Frobenius norm of the symmetric part of ``M' - 2C`` (times two).

    Zero when ``M' - 2C`` is skew-symmetric.  ``coriolis`` overrides the
    model's own C, which lets alternative Coriolis forms be audited.
    """
    Md = mass_derivative(model, state, method=method)
    C = np.asarray(model.coriolis(state.q, state.qdot) if coriolis is None else coriolis, float)
    S = Md - 2 * C
    return float(np.linalg.norm(S + S.T, "fro"))


def kinetic_energy(model: ELModel, state: GeneralizedState) -> float:
    return 0.5 * float(state.qdot @ np.asarray(model.mass_matrix(state.q)) @ state.qdot)


def lagrangian(model: ELModel, state: GeneralizedState) -> float:
    """``0.5 q'^T M(q) q' - V(q)`` in joules."""
    return kinetic_energy(model, state) - model.V(state.q)


def rk4_step(model: ELModel, state: GeneralizedState, u, dt: float,
             accel: Optional[Callable] = None) -> GeneralizedState:
    """One classical Runge-Kutta step with ``u`` held constant.

    ``accel(state, u)`` defaults to :func:`forward_dynamics` for ``model``.
    """
    if accel is None:
        accel = lambda st, uu: forward_dynamics(model, st, uu)  # noqa: E731
    q, v = state.q, state.qdot

    def f(qq, vv):
        return vv, accel(GeneralizedState(qq, vv), u)

    k1q, k1v = f(q, v)
    k2q, k2v = f(q + 0.5 * dt * k1q, v + 0.5 * dt * k1v)
    k3q, k3v = f(q + 0.5 * dt * k2q, v + 0.5 * dt * k2v)
    k4q, k4v = f(q + dt * k3q, v + dt * k3v)
    return GeneralizedState(q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q),
                            v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v))


def integrate_rk4(model: ELModel, state: GeneralizedState, u_of_t: Callable[[float], np.ndarray],
                  dt: float, steps: int, accel: Optional[Callable] = None) -> Sequence[GeneralizedState]:
    """Integrate with RK4, holding ``u_of_t(t_k)`` over each step."""
    out = [state]
    for k in range(steps):
        state = rk4_step(model, state, u_of_t(k * dt), dt, accel=accel)
        out.append(state)
    return out


def forced_dynamics_batch(model: ELModel, Q, V, F) -> np.ndarray:
    """:func:`forced_dynamics` for ``B`` states at once.

    ``Q``, ``V`` and the generalized forces ``F`` have shape ``(B, n)``.
    No conditioning guard: use with models whose inertia is uniformly
    well conditioned, such as the holonomic robot (``det M = 18 m^3 L^2``).
    """
    Q, V, F = (np.asarray(a, float) for a in (Q, V, F))
    M = np.asarray(model.mass_matrix(Q), float)
    rhs = (F - (np.asarray(model.coriolis(Q, V), float) @ V[..., None])[..., 0]
           - np.asarray(model.potential_grad(Q), float))
    return np.linalg.solve(M, rhs[..., None])[..., 0]


def forward_dynamics_batch(model: ELModel, Q, V, U) -> np.ndarray:
    """:func:`forward_dynamics` for ``B`` states at once.

    ``Q`` and ``V`` have shape ``(B, n)``, ``U`` shape ``(B, m_inputs)``.
    No conditioning guard, as in :func:`forced_dynamics_batch`.
    """
    Q, U = np.asarray(Q, float), np.asarray(U, float)
    F = (np.asarray(model.input_matrix(Q), float) @ U[..., None])[..., 0]
    return forced_dynamics_batch(model, Q, V, F)


def rk4_batch(accel: Callable, Q, V, u_of_t: Callable[[float], np.ndarray], dt: float, steps: int):
    """RK4 for ``B`` second-order systems sharing one step size.

    ``accel(Q, V, U)`` returns ``(B, n)`` accelerations; ``u_of_t(t)``
    returns ``(B, m)`` inputs held over each step.  Returns the final
    ``(Q, V)``.
    """
    Q, V = np.array(Q, dtype=float), np.array(V, dtype=float)
    for k in range(steps):
        U = u_of_t(k * dt)
        k1q, k1v = V, accel(Q, V, U)
        k2q, k2v = V + 0.5 * dt * k1v, accel(Q + 0.5 * dt * k1q, V + 0.5 * dt * k1v, U)
        k3q, k3v = V + 0.5 * dt * k2v, accel(Q + 0.5 * dt * k2q, V + 0.5 * dt * k2v, U)
        k4q, k4v = V + dt * k3v, accel(Q + dt * k3q, V + dt * k3v, U)
        Q = Q + dt / 6 * (k1q + 2 * k2q + 2 * k3q + k4q)
        V = V + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return Q, V
