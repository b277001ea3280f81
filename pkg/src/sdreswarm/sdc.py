"""State-dependent coefficient form of the six-state robot plant.

The plant state is ``x = [x1, x1', y1, y1', theta, theta']`` and

    x' = A(x) x + B(x) u.

Accelerations are never typed in by hand: the drift and the input columns
are evaluated from :func:`sdreswarm.transform.decoupled_dynamics`, and each
drift component is attributed to the ``theta'`` column (or the ``theta``
column when it does not vanish at ``theta' = 0``).

SDC factorizations are not unique.  The plain attribution leaves ``(A, B)``
uncontrollable whenever ``theta' = 0``: a frozen-heading linearization cannot
move the robot along its shaft.  :class:`SdcForm` therefore adds a null-space
term ``N(x)`` with ``N(x) x = 0`` that couples the heading into the ``x1``
acceleration row.  It leaves ``A(x) x`` unchanged, so the plant is the same,
but it restores pointwise controllability away from a thin set of states.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import ELModel, GeneralizedState
from .transform import TransformSpec, decoupled_dynamics, decoupled_input_response

__all__ = [
    "STATE_LABELS",
    "FactorizationSingularityError",
    "SdcForm",
    "sdc_factorize",
    "plant_rhs",
    "controllability_matrix",
    "ctrb_rank",
    "degenerate_scan",
    "reference_matrices",
    "reference_diff",
]

STATE_LABELS = ("x1", "dx1", "y1", "dy1", "theta", "dtheta")
PIVOT_EPS = 1e-9
RANK_TOL = 1e-10
_LIMIT_STEP = 1e-4
# acceleration rows and the matching configuration index
_ACC_ROWS = (1, 3, 5)


class FactorizationSingularityError(ArithmeticError):
    """A drift term is nonzero where both pivot states vanish."""


def _to_general(x) -> GeneralizedState:
    x = np.asarray(x, float)
    return GeneralizedState(x[[0, 2, 4]], x[[1, 3, 5]])


def plant_rhs(model: ELModel, spec: TransformSpec, x, u) -> np.ndarray:
    """First-order embedding ``[x1', x1'', y1', y1'', theta', theta'']``."""
    x = np.asarray(x, float)
    acc = decoupled_dynamics(model, spec, _to_general(x), u)
    return np.array([x[1], acc[0], x[3], acc[1], x[5], acc[2]])


@dataclass(frozen=True)
class SdcForm:
    """``A(x)`` and ``B(x)`` for the six-state plant.

    Parameters
    ----------
    model, spec
        The holonomic robot and its decoupling transform.
    lever_gain : float
        Weight ``k`` of the null-space term.  ``A[1, 4] += k (x1 + tau x1')``
        with compensating entries ``A[1, 0] -= k theta`` and
        ``A[1, 1] -= k tau theta``.  Zero gives the plain factorization.
    lever_tau : float
        Velocity lead ``tau`` (s) in the null-space term.
    eps : float
        Pivot threshold below which analytic limits replace division.
    """

    model: ELModel
    spec: TransformSpec
    lever_gain: float = 1.0
    lever_tau: float = 1.0
    eps: float = PIVOT_EPS

    def _acc(self, theta: float, dtheta: float, u) -> np.ndarray:
        # the holonomic drift depends only on the heading states
        st = GeneralizedState([0.0, 0.0, theta], [0.0, 0.0, dtheta])
        return decoupled_dynamics(self.model, self.spec, st, u)

    def drift_matrix(self, x) -> np.ndarray:
        """Plain factorization without the null-space term."""
        x = np.asarray(x, float)
        th, w = x[4], x[5]
        A = np.zeros((6, 6))
        A[0, 1] = A[2, 3] = A[4, 5] = 1.0
        zero_u = np.zeros(self.model.m_inputs)
        f = self._acc(th, w, zero_u)
        if abs(w) > self.eps:
            A[_ACC_ROWS, 5] = f / w
            return A
        f0 = self._acc(th, 0.0, zero_u)
        scale = max(1.0, float(np.max(np.abs(f0))))
        for i, row in enumerate(_ACC_ROWS):
            if abs(f0[i]) <= 1e-12 * scale:
                # f(theta, 0) = 0, so f / theta' tends to df/dtheta' at 0
                fp = self._acc(th, _LIMIT_STEP, zero_u)[i]
                fm = self._acc(th, -_LIMIT_STEP, zero_u)[i]
                A[row, 5] = (fp - fm) / (2 * _LIMIT_STEP)
            elif abs(th) > self.eps:
                A[row, 4] = f[i] / th
            else:
                raise FactorizationSingularityError(
                    f"drift {STATE_LABELS[row]}'={f[i]:.3e} nonzero with theta={th:.1e}, theta'={w:.1e}")
        return A

    def lever_matrix(self, x) -> np.ndarray:
        """Null-space term ``N(x)`` with ``N(x) x = 0``."""
        x = np.asarray(x, float)
        k, tau = self.lever_gain, self.lever_tau
        N = np.zeros((6, 6))
        if k == 0.0:
            return N
        th = x[4]
        N[1, 4] = k * (x[0] + tau * x[1])
        N[1, 0] = -k * th
        N[1, 1] = -k * tau * th
        return N

    def A(self, x) -> np.ndarray:
        return self.drift_matrix(x) + self.lever_matrix(x)

    def B(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        B = np.zeros((6, self.model.m_inputs))
        B[_ACC_ROWS, :] = decoupled_input_response(self.model, self.spec, [0.0, 0.0, x[4]])
        return B

    def evaluate(self, x):
        """``(A(x), B(x))``."""
        return self.A(x), self.B(x)


def sdc_factorize(spec: TransformSpec, model: ELModel, lever_gain: float = 1.0, lever_tau: float = 1.0,
                  eps: float = PIVOT_EPS) -> SdcForm:
    """SDC form of the holonomic robot built from the decoupled dynamics."""
    if model.n != 3 or model.m_inputs != 2:
        raise ValueError("the six-state SDC form is defined for the three-dof, two-input robot")
    if spec.model is not model:
        raise ValueError("spec was built for a different model")
    return SdcForm(model, spec, lever_gain=lever_gain, lever_tau=lever_tau, eps=eps)


def controllability_matrix(A, B) -> np.ndarray:
    """``[B, AB, ..., A^(n-1) B]``."""
    A = np.atleast_2d(np.asarray(A, float))
    B = np.asarray(B, float)
    if B.ndim == 1:
        B = B[:, None]
    blocks = [B]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def ctrb_rank(A, B, tol: float = RANK_TOL) -> int:
    """Numerical rank: singular values above ``tol * sigma_max``."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    sv = np.linalg.svd(controllability_matrix(A, B), compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0
    return int(np.sum(sv > tol * sv[0]))


def degenerate_scan(form: SdcForm, tol: float = RANK_TOL,
                    lever_values=(-0.5, 0.0, 0.5), dy_values=(-0.1, 0.0, 0.1)):
    """Rank of the controllability matrix at states with ``sin(theta) = 0``, ``theta' = 0``.

    Returns a list of ``(x, rank)`` for every combination of heading in
    ``{-pi, 0, pi}``, lever argument ``x1 + tau x1'`` in ``lever_values`` and
    ``y1'`` in ``dy_values``.
    """
    out = []
    for th in (-np.pi, 0.0, np.pi):
        for lev in lever_values:
            for dy in dy_values:
                x = np.array([lev, 0.0, 0.0, dy, th, 0.0])
                A, B = form.evaluate(x)
                out.append((x, ctrb_rank(A, B, tol)))
    return out


def reference_matrices(m: float, L: float, x) -> tuple:
    """An alternative hand-derived ``A(x)``, ``B(x)``, kept for comparison only.

    These entries are dimensionally inconsistent (for example ``5 L`` is
    added to a term in ``kg m``) and disagree with the decoupled dynamics;
    :func:`reference_diff` quantifies the gap.
    """
    th, w = x[4], x[5]
    s, c = np.sin(th), np.cos(th)
    A = np.zeros((6, 6))
    A[0, 1] = A[2, 3] = A[4, 5] = 1.0
    A[1, 4] = 3 * L * m * s * w * (-w + 1) + 5 * L
    A[1, 5] = 3 * L * m * c * (2 * w - 1)
    A[3, 4] = L * w * w * c + 3 * s
    A[3, 5] = 2 * L * w * s
    B = np.array([[0.0, 0.0],
                  [-L * s, 0.0],
                  [0.0, 0.0],
                  [5 * L * c / (6 * m), -c / (2 * m)],
                  [0.0, 0.0],
                  [-1 / (2 * m), 1 / (2 * m)]])
    return A, B


def reference_diff(form: SdcForm, x, u) -> dict:
    """Compare the reference matrices with ``form`` at ``(x, u)``.

    Returns the max entry differences of ``B`` and the difference in the
    predicted state derivative, both of which would be zero if the reference
    matrices described the same plant.
    """
    params = form.model.meta.get("params")
    if params is None:
        raise ValueError("form's model carries no holonomic parameters")
    x = np.asarray(x, float)
    u = np.asarray(u, float)
    Ar, Br = reference_matrices(params.m, params.L, x)
    A, B = form.evaluate(x)
    truth = plant_rhs(form.model, form.spec, x, u)
    return {
        "B_max_abs_diff": float(np.max(np.abs(Br - B))),
        "rhs_reference": Ar @ x + Br @ u,
        "rhs_true": truth,
        "rhs_max_abs_diff": float(np.max(np.abs(Ar @ x + Br @ u - truth))),
        "B_rows_differing": [STATE_LABELS[i] for i in range(6) if np.max(np.abs(Br[i] - B[i])) > 1e-9 * max(1.0, np.max(np.abs(B[i])))],
    }
