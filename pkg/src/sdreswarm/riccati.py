"""Continuous algebraic Riccati equation and SDRE feedback.

For frozen ``(A, B)`` the stabilizing solution of

    A^T P + P A - P B R^-1 B^T P + Q = 0

is read off the stable invariant subspace of the Hamiltonian matrix using an
ordered real Schur decomposition.  Newton-Kleinman iteration, warm-started
from a previous solution, serves as a fallback and as an independent check.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

__all__ = [
    "CareError",
    "NoStabilizingSolutionError",
    "IllConditionedCareError",
    "CareSolution",
    "Weighting",
    "reference_weighting",
    "care_residual",
    "solve_care",
    "newton_kleinman",
    "sdre_gain",
    "LyapunovSeries",
    "lyapunov_monitor",
]

SYMMETRY_TOL = 1e-8


class CareError(np.linalg.LinAlgError):
    """Base class for Riccati solver failures."""


class NoStabilizingSolutionError(CareError):
    """The Hamiltonian has no n-dimensional stable invariant subspace."""

    def __init__(self, msg: str, spectrum: Optional[np.ndarray] = None):
        super().__init__(msg)
        self.spectrum = spectrum


class IllConditionedCareError(CareError):
    """The extracted solution is not symmetric to working accuracy."""


@dataclass(frozen=True)
class CareSolution:
    """Stabilizing CARE solution.

    Attributes
    ----------
    P : ndarray
        Symmetric positive (semi)definite solution.
    K : ndarray
        Optimal gain ``R^-1 B^T P``.
    residual : float
        Frobenius norm of the Riccati residual.
    closed_loop_spectrum : ndarray
        Eigenvalues of ``A - B K``.
    method : str
        ``"schur"`` or ``"newton-kleinman"``.
    """

    P: np.ndarray
    K: np.ndarray
    residual: float
    closed_loop_spectrum: np.ndarray
    method: str = "schur"
    iterations: int = 0

    @property
    def hurwitz(self) -> bool:
        return bool(np.all(self.closed_loop_spectrum.real < 0))


@dataclass(frozen=True)
class Weighting:
    """State weight ``Q(x)`` and constant input weight ``R``."""

    Q: Callable[[np.ndarray], np.ndarray]
    R: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, float))
        if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ValueError("R must be symmetric positive definite")
        object.__setattr__(self, "R", R)

    def scaled(self, q_factor: float = 1.0, r_factor: float = 1.0) -> "Weighting":
        Q = self.Q
        return Weighting(lambda x: q_factor * Q(x), r_factor * self.R)


def reference_weighting(q_diag=(260.0, 1.0, 260.0, 1.0, 160.0, 100.0), q_scale: float = 1e-3,
                        angle_weight: float = 0.01, r: float = 50.0) -> Weighting:
    """``Q(x) = (1 + w x5^2 + w x6^2) q_scale diag(q_diag)``, ``R = r I``.

    The heading-dependent factor stiffens the weighting when the swarm is
    rotating or tilted.
    """
    base = q_scale * np.diag(np.asarray(q_diag, float))

    def Q(x):
        x = np.asarray(x, float)
        return (1.0 + angle_weight * x[4] ** 2 + angle_weight * x[5] ** 2) * base

    return Weighting(Q, r * np.eye(2))


def care_residual(A, B, Q, R, P) -> float:
    """``||A^T P + P A - P B R^-1 B^T P + Q||_F``."""
    PB = P @ B
    res = A.T @ P + P @ A - PB @ np.linalg.solve(R, PB.T) + Q
    return float(np.linalg.norm(res, "fro"))


def _as_problem(A, B, Q, R):
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float)
    if B.ndim == 1:
        B = B[:, None]
    Q = np.atleast_2d(np.asarray(Q, float))
    R = np.atleast_2d(np.asarray(R, float))
    n = A.shape[0]
    if A.shape != (n, n) or B.shape[0] != n or Q.shape != (n, n) or R.shape != (B.shape[1],) * 2:
        raise ValueError("inconsistent CARE dimensions")
    return A, B, Q, R


def _finish(A, B, Q, R, P, method, iterations=0) -> CareSolution:
    K = np.linalg.solve(R, B.T @ P)
    spec = np.linalg.eigvals(A - B @ K)
    return CareSolution(P, K, care_residual(A, B, Q, R, P), spec, method, iterations)


def solve_care(A, B, Q, R, refine: int = 3, tol: float = 1e-11) -> CareSolution:
    """Stabilizing CARE solution via the ordered Schur form of the Hamiltonian.

    Parameters
    ----------
    refine : int
        Maximum Newton-Kleinman refinement sweeps applied while the residual
        exceeds ``tol`` and keeps decreasing.

    Raises
    ------
    NoStabilizingSolutionError
        If fewer than ``n`` Hamiltonian eigenvalues lie in the open left half
        plane, or the resulting closed loop is not Hurwitz.
    IllConditionedCareError
        If the basis of the stable subspace is singular or the extracted
        ``P`` is asymmetric beyond ``1e-8`` (relative).

    Examples
    --------
    >>> sol = solve_care([[0.0]], [[1.0]], [[1.0]], [[1.0]])
    >>> round(float(sol.P[0, 0]), 12)
    1.0
    """
    A, B, Q, R = _as_problem(A, B, Q, R)
    n = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    T, Z, sdim = sla.schur(H, output="real", sort="lhp")
    if sdim != n:
        raise NoStabilizingSolutionError(
            f"Hamiltonian has {sdim} stable eigenvalues, need {n}", spectrum=np.linalg.eigvals(H))
    U11, U21 = Z[:n, :n], Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise IllConditionedCareError(f"stable subspace basis is ill-conditioned (cond {np.linalg.cond(U11):.2e})")
    P = np.linalg.solve(U11.T, U21.T).T
    asym = np.linalg.norm(P - P.T) / max(1e-300, np.linalg.norm(P))
    if asym > SYMMETRY_TOL:
        raise IllConditionedCareError(f"extracted P is asymmetric (relative {asym:.2e})")
    P = 0.5 * (P + P.T)
    sol = _finish(A, B, Q, R, P, "schur")
    # Kleinman sweeps polish the subspace solution; keep the best residual.
    for sweep in range(1, refine + 1):
        if sol.residual <= tol or not sol.hurwitz:
            break
        cand = _finish(A, B, Q, R, _kleinman_step(A, B, Q, R, sol.K), "schur", sweep)
        if cand.residual >= sol.residual:
            break
        sol = cand
    if not sol.hurwitz:
        raise NoStabilizingSolutionError("closed loop from the Schur solution is not Hurwitz",
                                         spectrum=sol.closed_loop_spectrum)
    return sol


def _kleinman_step(A, B, Q, R, K) -> np.ndarray:
    Acl = A - B @ K
    P = sla.solve_continuous_lyapunov(Acl.T, -(Q + K.T @ R @ K))
    return 0.5 * (P + P.T)


def newton_kleinman(A, B, Q, R, P0=None, K0=None, tol: float = 1e-12, max_iter: int = 60) -> CareSolution:
    """Newton-Kleinman iteration from a stabilizing initial gain.

    The start gain is ``K0`` if given, else ``R^-1 B^T P0``.

    Raises
    ------
    NoStabilizingSolutionError
        If the start gain does not stabilize ``A`` or the iteration stalls.
    """
    A, B, Q, R = _as_problem(A, B, Q, R)
    if K0 is None:
        if P0 is None:
            raise ValueError("need P0 or K0")
        K0 = np.linalg.solve(R, B.T @ np.asarray(P0, float))
    K = np.asarray(K0, float)
    if np.any(np.linalg.eigvals(A - B @ K).real >= 0):
        raise NoStabilizingSolutionError("initial gain is not stabilizing")
    P_prev = None
    for it in range(1, max_iter + 1):
        P = _kleinman_step(A, B, Q, R, K)
        K = np.linalg.solve(R, B.T @ P)
        if P_prev is not None and np.linalg.norm(P - P_prev) <= tol * max(1.0, np.linalg.norm(P)):
            sol = _finish(A, B, Q, R, P, "newton-kleinman", it)
            if not sol.hurwitz:
                raise NoStabilizingSolutionError("Newton-Kleinman converged to a non-stabilizing P",
                                                 spectrum=sol.closed_loop_spectrum)
            return sol
        P_prev = P
    raise NoStabilizingSolutionError(f"Newton-Kleinman did not converge in {max_iter} iterations")


def sdre_gain(form, W: Weighting, xbar, warm: Optional[CareSolution] = None):
    """SDRE feedback ``u = -R^-1 B(x)^T P(x) x`` at ``xbar``.

    ``form`` supplies ``evaluate(x) -> (A, B)``.  The Schur solver runs
    first; when it fails and ``warm`` is given, Newton-Kleinman is seeded
    with ``warm.P``.

    At ``xbar = 0`` the frozen pair can be uncontrollable; the command is
    then zero and ``care`` is None.

    Returns
    -------
    u : ndarray
    K : ndarray
    care : CareSolution or None
    """
    x = np.asarray(xbar, float)
    A, B = form.evaluate(x)
    Q = W.Q(x)
    try:
        care = solve_care(A, B, Q, W.R)
    except CareError:
        if warm is not None:
            care = newton_kleinman(A, B, Q, W.R, P0=warm.P)
        elif not np.any(x):
            # at the origin any gain gives u = 0
            K = np.zeros((B.shape[1], x.size))
            return np.zeros(B.shape[1]), K, None
        else:
            raise
    u = -care.K @ x
    return u, care.K, care


@dataclass(frozen=True)
class LyapunovSeries:
    """Diagnostics of ``V(t) = x(t)^T P(x(t)) x(t)`` along a trace.

    Attributes
    ----------
    L : ndarray
        ``x^T P x`` at every sample.
    dL : ndarray
        Central-difference time derivative (one-sided at the ends).
    dP_max_eig : ndarray
        Largest eigenvalue of the central-difference ``P'``.
    flags : ndarray of bool
        ``dL >= 0`` while ``||x|| > origin_tol``.
    """

    t: np.ndarray
    L: np.ndarray
    dL: np.ndarray
    dP_max_eig: np.ndarray
    flags: np.ndarray

    def flag_count(self, after: float = -np.inf) -> int:
        return int(np.sum(self.flags & (self.t >= after)))


def lyapunov_monitor(t: Sequence[float], xs: Sequence[np.ndarray], Ps: Sequence[np.ndarray],
                     origin_tol: float = 1e-6) -> LyapunovSeries:
    """Evaluate the SDRE Lyapunov candidate along a fixed-step trace."""
    t = np.asarray(t, float)
    xs = np.asarray(xs, float)
    Ps = np.asarray(Ps, float)
    if t.size < 3:
        raise ValueError("need at least 3 samples")
    L = np.einsum("ti,tij,tj->t", xs, Ps, xs)
    dL = np.gradient(L, t)
    dP = np.gradient(Ps, t, axis=0)
    dP = 0.5 * (dP + np.transpose(dP, (0, 2, 1)))
    dP_max = np.linalg.eigvalsh(dP)[:, -1]
    flags = (dL >= 0) & (np.linalg.norm(xs, axis=1) > origin_tol)
    return LyapunovSeries(t, L, dL, dP_max, flags)
