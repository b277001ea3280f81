"""Inertia-decoupling coordinate change for underactuated EL systems.

With ``J(q) = m_uu^-1 m_ua`` (``s x m``) the new coordinates are

    bq = Phi(q) = [q_u + Phi_a(q_a); q_a],   grad Phi_a = J,

whose Jacobian inverse is ``T(q) = [[I_s, -J], [0, I_m]]``.  In ``bq`` the
inertia ``T^T M T`` is block diagonal, ``diag(m_uu, m_aa - m_au J)``, so the
unactuated and actuated subsystems have separate mass matrices.  The
existence of ``Phi_a`` needs ``J`` to be integrable, and the decoupled form
needs ``M`` independent of ``q_u`` and ``m_uu`` constant; these conditions
(labelled A1 to A5 below) are checked on samples by :func:`check_assumptions`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Optional

import numpy as np

from .dynamics import (
    ELModel,
    GeneralizedState,
    MASS_COND_LIMIT,
    _cho_solve_guarded,
    mass_partials,
)

__all__ = [
    "NonIntegrableError",
    "InversionError",
    "TransformSpec",
    "TransformedModel",
    "AssumptionResult",
    "AssumptionReport",
    "build_transform",
    "check_assumptions",
    "transform_model",
    "to_transformed",
    "from_transformed",
    "decoupled_dynamics",
    "decoupled_input_response",
    "transformed_accelerations",
    "transformed_accelerations_batch",
    "phi_batch",
    "phi_inv_batch",
    "transformed_lagrangian",
    "newton_inverse",
    "sample_states",
]

INTEGRABILITY_TOL = 1e-6
FD_STEP = 1e-6
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)


class NonIntegrableError(ValueError):
    """``m_uu^-1 m_ua`` is not a gradient, so ``Phi_a`` does not exist."""


class InversionError(RuntimeError):
    """Newton iteration for ``Phi^-1`` did not converge."""


@lru_cache(maxsize=None)
def _ix(unactuated: tuple, actuated: tuple):
    u, a = list(unactuated), list(actuated)
    return np.ix_(u, u), np.ix_(u, a), np.ix_(a, a)


@lru_cache(maxsize=None)
def _axis_index(idx: tuple):
    # a slice when the indices are a contiguous run (cheap views), else an array
    if idx == tuple(range(idx[0], idx[0] + len(idx))):
        return slice(idx[0], idx[0] + len(idx))
    return np.array(idx)


def _blocks(model: ELModel, M: np.ndarray):
    uu, ua, aa = _ix(model.unactuated, model.actuated)
    return M[uu], M[ua], M[aa]


def coupling_map(model: ELModel, q) -> np.ndarray:
    """``J(q) = m_uu^-1 m_ua``, shape ``(s, m)``."""
    M = np.asarray(model.mass_matrix(np.asarray(q, float)), float)
    m_uu, m_ua, _ = _blocks(model, M)
    return np.linalg.solve(m_uu, m_ua)


def coupling_partials(model: ELModel, q) -> np.ndarray:
    """``dJ/dq_k`` stacked along the first axis, shape ``(n, s, m)``."""
    q = np.asarray(q, float)
    M = np.asarray(model.mass_matrix(q), float)
    m_uu, m_ua, _ = _blocks(model, M)
    J = np.linalg.solve(m_uu, m_ua)
    dM = mass_partials(model, q)
    out = np.empty((model.n,) + J.shape)
    for k in range(model.n):
        d_uu, d_ua, _ = _blocks(model, dM[k])
        out[k] = np.linalg.solve(m_uu, d_ua - d_uu @ J)
    return out


def integrability_residual(model: ELModel, q, h: float = FD_STEP) -> float:
    """Largest asymmetry of ``dJ_i / dq_a`` over rows ``i`` (central differences)."""
    q = np.asarray(q, float)
    a = list(model.actuated)
    m = len(a)
    D = np.empty((model.s, m, m))
    for k, idx in enumerate(a):
        step = h * max(1.0, abs(q[idx]))
        qp, qm = q.copy(), q.copy()
        qp[idx] += step
        qm[idx] -= step
        D[:, :, k] = (coupling_map(model, qp) - coupling_map(model, qm)) / (2 * step)
    scale = max(1.0, float(np.max(np.abs(D))))
    return float(np.max(np.abs(D - np.transpose(D, (0, 2, 1))))) / scale


@dataclass(frozen=True)
class TransformSpec:
    """The coordinate change ``bq = Phi(q)`` and its Jacobian inverse ``T``.

    Attributes
    ----------
    model : ELModel
        System the transform was built for.
    phi_a : callable
        ``q_a -> (s,)``; ``grad Phi_a = m_uu^-1 m_ua``.
    closed_form : bool
        True when ``phi_a`` came from the model rather than quadrature.
    """

    model: ELModel
    phi_a: Callable[[np.ndarray], np.ndarray]
    closed_form: bool

    def J(self, q) -> np.ndarray:
        return coupling_map(self.model, q)

    def T(self, q) -> np.ndarray:
        """``[[I, -J], [0, I]]`` in the model's coordinate ordering."""
        return self._assemble(-self.J(q))

    def T_inv(self, q) -> np.ndarray:
        """Jacobian of ``Phi``, ``[[I, J], [0, I]]``."""
        return self._assemble(self.J(q))

    def _assemble(self, block: np.ndarray) -> np.ndarray:
        out = np.eye(self.model.n)
        out[_ix(self.model.unactuated, self.model.actuated)[1]] = block
        return out

    def phi(self, q) -> np.ndarray:
        q = np.asarray(q, float)
        out = q.copy()
        u, a = list(self.model.unactuated), list(self.model.actuated)
        out[u] = q[u] + self.phi_a(q[a])
        return out

    def phi_inv(self, bq) -> np.ndarray:
        """Closed-form inverse ``q_u = bq_u - Phi_a(bq_a)``, ``q_a = bq_a``."""
        bq = np.asarray(bq, float)
        out = bq.copy()
        u, a = list(self.model.unactuated), list(self.model.actuated)
        out[u] = bq[u] - self.phi_a(bq[a])
        return out


def newton_inverse(spec: TransformSpec, bq, q0=None, tol: float = 1e-13, max_iter: int = 50) -> np.ndarray:
    """Solve ``Phi(q) = bq`` by Newton's method with Jacobian ``T^-1``.

    Generic fallback for transforms whose inverse is not explicit.
    """
    bq = np.asarray(bq, float)
    q = bq.copy() if q0 is None else np.asarray(q0, float).copy()
    for _ in range(max_iter):
        r = bq - spec.phi(q)
        if np.max(np.abs(r)) <= tol * max(1.0, np.max(np.abs(bq))):
            return q
        q = q + spec.T(q) @ r
    raise InversionError(f"Phi inverse did not converge in {max_iter} iterations (residual {np.max(np.abs(r)):.3e})")


def _quadrature_phi_a(model: ELModel) -> Callable[[np.ndarray], np.ndarray]:
    # Line integral of J from q_a = 0 along a straight path; path independent
    # when J is integrable, with Phi_a(0) = 0.
    u, a = list(model.unactuated), list(model.actuated)

    def phi_a(qa):
        qa = np.asarray(qa, float)
        total = np.zeros(model.s)
        for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
            t = 0.5 * (node + 1.0)
            q = np.zeros(model.n)
            q[a] = t * qa
            total += 0.5 * weight * (coupling_map(model, q) @ qa)
        return total

    return phi_a


def sample_states(n_dof: int, count: int, seed: int = 0, q_scale: float = np.pi, v_scale: float = 1.0):
    """Seeded uniform states ``q in [-q_scale, q_scale]^n``, ``qdot`` likewise."""
    rng = np.random.default_rng(seed)
    return [GeneralizedState(rng.uniform(-q_scale, q_scale, n_dof), rng.uniform(-v_scale, v_scale, n_dof))
            for _ in range(count)]


def build_transform(model: ELModel, samples: Optional[Iterable[GeneralizedState]] = None,
                    tol: float = INTEGRABILITY_TOL) -> TransformSpec:
    """Construct ``Phi`` for ``model``.

    Uses the model's closed-form ``phi_a`` when present, otherwise a
    Gauss-Legendre line integral of ``J``.  Both are checked against ``J``.

    Raises
    ------
    NonIntegrableError
        If the curl test on ``J`` or the gradient check of ``Phi_a`` fails
        on the sample states.
    """
    if model.s < 1:
        raise ValueError("model has no unactuated coordinates")
    samples = list(samples) if samples is not None else sample_states(model.n, 16, seed=12345)
    for st in samples:
        res = integrability_residual(model, st.q)
        if res > tol:
            raise NonIntegrableError(f"m_uu^-1 m_ua fails the curl test at q={st.q} (residual {res:.3e})")
    if model.phi_a is not None:
        spec = TransformSpec(model, model.phi_a, closed_form=True)
    else:
        spec = TransformSpec(model, _quadrature_phi_a(model), closed_form=False)
    for st in samples:
        err = phi_a_gradient_error(spec, st.q)
        if err > tol:
            raise NonIntegrableError(f"grad Phi_a differs from m_uu^-1 m_ua by {err:.3e} at q={st.q}")
    return spec


def phi_a_gradient_error(spec: TransformSpec, q, h: float = FD_STEP) -> float:
    """Max abs difference between the central-difference ``grad Phi_a`` and ``J``."""
    q = np.asarray(q, float)
    a = list(spec.model.actuated)
    qa = q[a]
    grad = np.empty((spec.model.s, len(a)))
    for k in range(len(a)):
        step = h * max(1.0, abs(qa[k]))
        p, m_ = qa.copy(), qa.copy()
        p[k] += step
        m_[k] -= step
        grad[:, k] = (spec.phi_a(p) - spec.phi_a(m_)) / (2 * step)
    return float(np.max(np.abs(grad - spec.J(q))))


@dataclass(frozen=True)
class AssumptionResult:
    name: str
    description: str
    passed: bool
    worst_residual: float
    tolerance: float


@dataclass(frozen=True)
class AssumptionReport:
    model_name: str
    n_samples: int
    results: tuple = field(default_factory=tuple)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __getitem__(self, name: str) -> AssumptionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_text(self) -> str:
        lines = [f"assumption check: {self.model_name} ({self.n_samples} samples)"]
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"  {r.name} {status:4s} worst={r.worst_residual:.3e} tol={r.tolerance:.1e}  {r.description}")
        lines.append(f"  overall {'PASS' if self.all_passed else 'FAIL'}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"model": self.model_name, "n_samples": self.n_samples, "all_passed": self.all_passed,
                "results": [r.__dict__.copy() for r in self.results]}


def check_assumptions(model: ELModel, samples: Iterable[GeneralizedState], tol: float = 1e-8,
                      integrability_tol: float = INTEGRABILITY_TOL, seed: int = 7) -> AssumptionReport:
    """Sample-based audit of the five structural assumptions.

    A1  ``det T(q) != 0``.
    A2  ``J`` has symmetric Jacobian in ``q_a`` (integrable).
    A3  ``M`` unchanged when only ``q_u`` moves.
    A4  ``m_uu`` the same at every sample.
    A5  ``d^2 V / dq_u dq_a = 0`` (potential separates).

    Residuals are relative to the size of the quantity tested.  Passing
    means the property holds on the given samples, not symbolically.
    """
    samples = list(samples)
    if len(samples) < 10:
        raise ValueError("need at least 10 samples")
    rng = np.random.default_rng(seed)
    u, a = list(model.unactuated), list(model.actuated)
    spec = TransformSpec(model, lambda qa: np.zeros(model.s), closed_form=False)

    det_min = min(abs(np.linalg.det(spec.T(st.q))) for st in samples)
    a1 = AssumptionResult("A1", "T(q) invertible", det_min > tol, float(det_min), tol)

    curl = max(integrability_residual(model, st.q) for st in samples)
    a2 = AssumptionResult("A2", "m_uu^-1 m_ua integrable", curl <= integrability_tol, curl, integrability_tol)

    drift = 0.0
    for st in samples:
        M0 = np.asarray(model.mass_matrix(st.q), float)
        scale = max(1e-300, np.max(np.abs(M0)))
        for _ in range(3):
            q1 = st.q.copy()
            q1[u] += rng.uniform(-10.0, 10.0, len(u))
            drift = max(drift, float(np.max(np.abs(np.asarray(model.mass_matrix(q1)) - M0))) / scale)
    a3 = AssumptionResult("A3", "M independent of q_u", drift <= tol, drift, tol)

    muu = np.array([np.asarray(model.mass_matrix(st.q), float)[np.ix_(u, u)] for st in samples])
    spread = float(np.max(np.abs(muu - muu.mean(axis=0)))) / max(1e-300, float(np.max(np.abs(muu))))
    a4 = AssumptionResult("A4", "m_uu constant", spread <= tol, spread, tol)

    cross = 0.0
    for st in samples:
        g0 = np.asarray(model.potential_grad(st.q), float)
        for idx in a:
            step = FD_STEP * max(1.0, abs(st.q[idx]))
            qp, qm = st.q.copy(), st.q.copy()
            qp[idx] += step
            qm[idx] -= step
            dgu = (np.asarray(model.potential_grad(qp), float)[u] - np.asarray(model.potential_grad(qm), float)[u]) / (2 * step)
            cross = max(cross, float(np.max(np.abs(dgu))) / max(1.0, float(np.max(np.abs(g0)))))
    a5 = AssumptionResult("A5", "potential separates in q_u, q_a", cross <= integrability_tol, cross, integrability_tol)

    return AssumptionReport(model.name, len(samples), (a1, a2, a3, a4, a5))


@dataclass(frozen=True)
class TransformedModel:
    """Dynamics in the decoupled coordinates ``bq``.

    Attributes
    ----------
    spec : TransformSpec
    mass_uu : ndarray
        Constant ``s x s`` unactuated inertia.
    """

    spec: TransformSpec
    mass_uu: np.ndarray

    @property
    def model(self) -> ELModel:
        return self.spec.model

    def _q(self, bq):
        return self.spec.phi_inv(bq)

    def mass_aa_s(self, bq) -> np.ndarray:
        """Schur block ``m_aa - m_au m_uu^-1 m_ua`` at ``q = Phi^-1(bq)``."""
        return schur_block(self.model, self._q(bq))

    def full_mass(self, bq) -> np.ndarray:
        """``T^T M T`` evaluated directly (block diagonal up to rounding)."""
        q = self._q(bq)
        T = self.spec.T(q)
        return T.T @ np.asarray(self.model.mass_matrix(q), float) @ T

    def potential(self, bq) -> float:
        return self.model.V(self._q(bq))

    def potential_grad(self, bq) -> np.ndarray:
        q = self._q(bq)
        return self.spec.T(q).T @ np.asarray(self.model.potential_grad(q), float)

    def input_u(self, bq) -> np.ndarray:
        """``G_u(q)``."""
        q = self._q(bq)
        return np.asarray(self.model.input_matrix(q), float)[list(self.model.unactuated)]

    def input_a(self, bq) -> np.ndarray:
        """``G_a - m_au m_uu^-1 G_u``."""
        q = self._q(bq)
        G = np.asarray(self.model.input_matrix(q), float)
        Gu, Ga = G[list(self.model.unactuated)], G[list(self.model.actuated)]
        return Ga - self.spec.J(q).T @ Gu

    def input_matrix(self, bq) -> np.ndarray:
        """``T^T G`` in the model's coordinate ordering."""
        q = self._q(bq)
        return self.spec.T(q).T @ np.asarray(self.model.input_matrix(q), float)


def schur_block(model: ELModel, q) -> np.ndarray:
    M = np.asarray(model.mass_matrix(np.asarray(q, float)), float)
    m_uu, m_ua, m_aa = _blocks(model, M)
    return m_aa - m_ua.T @ np.linalg.solve(m_uu, m_ua)


def transform_model(model: ELModel, spec: TransformSpec, samples: Optional[Iterable[GeneralizedState]] = None,
                    tol: float = 1e-10) -> TransformedModel:
    """Decoupled model.  Requires ``m_uu`` constant on ``samples``."""
    samples = list(samples) if samples is not None else sample_states(model.n, 16, seed=54321)
    u = list(model.unactuated)
    blocks = [np.asarray(model.mass_matrix(st.q), float)[np.ix_(u, u)] for st in samples]
    ref = blocks[0]
    spread = max(float(np.max(np.abs(b - ref))) for b in blocks) / max(1e-300, float(np.max(np.abs(ref))))
    if spread > tol:
        raise ValueError(f"m_uu varies over samples (relative spread {spread:.3e}); decoupled form needs it constant")
    return TransformedModel(spec, ref.copy())


def to_transformed(spec: TransformSpec, state: GeneralizedState):
    """``(bq, bq')`` with ``bq' = T^-1 q'``."""
    return spec.phi(state.q), spec.T_inv(state.q) @ state.qdot


def from_transformed(spec: TransformSpec, bq, bqdot) -> GeneralizedState:
    q = spec.phi_inv(bq)
    return GeneralizedState(q, spec.T(q) @ np.asarray(bqdot, float))


def _decoupled_mass_partials(spec: TransformSpec, q: np.ndarray) -> np.ndarray:
    # d/dbq_k of diag(m_uu, S) via d/dq_j and dq/dbq = T.
    model = spec.model
    u, a = list(model.unactuated), list(model.actuated)
    M = np.asarray(model.mass_matrix(q), float)
    m_uu, m_ua, _ = _blocks(model, M)
    J = np.linalg.solve(m_uu, m_ua)
    dM = mass_partials(model, q)
    dJ = coupling_partials(model, q)
    d_tilde = np.zeros((model.n, model.n, model.n))
    uu, _, aa = _ix(model.unactuated, model.actuated)
    for j in range(model.n):
        d_uu, d_ua, d_aa = _blocks(model, dM[j])
        d_tilde[j][uu] = d_uu
        d_tilde[j][aa] = d_aa - d_ua.T @ J - m_ua.T @ dJ[j]
    return np.einsum("jab,jk->kab", d_tilde, spec.T(q))


def transformed_accelerations(spec: TransformSpec, bq, bqdot, u, cond_limit: float = MASS_COND_LIMIT) -> np.ndarray:
    """``bq''`` from the EL equations of the decoupled Lagrangian.

    Each block is solved with its own mass matrix; no full ``n x n`` solve.
    """
    model = spec.model
    ui, ai = list(model.unactuated), list(model.actuated)
    bqdot = np.asarray(bqdot, float)
    q = spec.phi_inv(bq)
    M = np.asarray(model.mass_matrix(q), float)
    m_uu, _, _ = _blocks(model, M)
    S = schur_block(model, q)
    dMb = _decoupled_mass_partials(spec, q)
    # (C bq')_k = sum_ij (d_i Mb_kj - 0.5 d_k Mb_ij) bq'_i bq'_j
    cor = (np.einsum("ikj,i,j->k", dMb, bqdot, bqdot)
           - 0.5 * np.einsum("kij,i,j->k", dMb, bqdot, bqdot))
    T = spec.T(q)
    force = T.T @ (np.asarray(model.input_matrix(q), float) @ np.asarray(u, float)
                   - np.asarray(model.potential_grad(q), float))
    rhs = force - cor
    out = np.empty(model.n)
    out[ui] = _cho_solve_guarded(m_uu, rhs[ui], cond_limit)
    out[ai] = _cho_solve_guarded(S, rhs[ai], cond_limit)
    return out


def decoupled_dynamics(model: ELModel, spec: TransformSpec, state: GeneralizedState, u,
                       cond_limit: float = MASS_COND_LIMIT) -> np.ndarray:
    """Original-coordinate accelerations computed through the decoupled form.

    Evaluates the block-diagonal EL equations in ``bq`` and maps back with
    ``q'' = T bq'' + T' bq'``.
    """
    if spec.model is not model:
        raise ValueError("spec was built for a different model")
    bq, bqdot = to_transformed(spec, state)
    bqdd = transformed_accelerations(spec, bq, bqdot, u, cond_limit)
    dJ = coupling_partials(model, state.q)
    Jdot = np.einsum("kij,k->ij", dJ, state.qdot)
    ui, ai = list(model.unactuated), list(model.actuated)
    qdd = spec.T(state.q) @ bqdd
    qdd[ui] -= Jdot @ bqdot[ai]
    return qdd


def decoupled_input_response(model: ELModel, spec: TransformSpec, q,
                             cond_limit: float = MASS_COND_LIMIT) -> np.ndarray:
    """``d q'' / d u`` through the decoupled form, shape ``(n, m_inputs)``.

    ``T diag(m_uu, S)^-1 T^T G``; the accelerations are affine in ``u`` so
    this is exact for any state.
    """
    q = np.asarray(q, float)
    ui, ai = list(model.unactuated), list(model.actuated)
    M = np.asarray(model.mass_matrix(q), float)
    m_uu, _, _ = _blocks(model, M)
    T = spec.T(q)
    G = T.T @ np.asarray(model.input_matrix(q), float)
    out = np.empty_like(G)
    out[ui] = _cho_solve_guarded(m_uu, G[ui], cond_limit)
    out[ai] = _cho_solve_guarded(schur_block(model, q), G[ai], cond_limit)
    return T @ out


def _phi_a_batch(spec: TransformSpec, QA: np.ndarray) -> np.ndarray:
    if spec.closed_form:
        return np.asarray(spec.phi_a(QA), float).reshape(QA.shape[0], spec.model.s)
    return np.stack([spec.phi_a(qa) for qa in QA])


def phi_batch(spec: TransformSpec, Q) -> np.ndarray:
    """``Phi`` row by row for ``Q`` of shape ``(B, n)``."""
    Q = np.asarray(Q, float)
    u, a = _axis_index(spec.model.unactuated), _axis_index(spec.model.actuated)
    out = Q.copy()
    out[:, u] = Q[:, u] + _phi_a_batch(spec, Q[:, a])
    return out


def phi_inv_batch(spec: TransformSpec, bQ) -> np.ndarray:
    """``Phi^-1`` row by row for ``bQ`` of shape ``(B, n)``."""
    bQ = np.asarray(bQ, float)
    u, a = _axis_index(spec.model.unactuated), _axis_index(spec.model.actuated)
    out = bQ.copy()
    out[:, u] = bQ[:, u] - _phi_a_batch(spec, bQ[:, a])
    return out


_ADJ_SIGN = np.array([[1.0, -1.0], [-1.0, 1.0]])


def _small_solve(A: np.ndarray, R: np.ndarray) -> np.ndarray:
    # batched A^-1 R for (..., k, k) A and (..., k, r) R; closed forms for
    # k = 1, 2 beat the LAPACK dispatch at these sizes
    k = A.shape[-1]
    if k == 1:
        return R / A
    if k == 2:
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
        adj = np.swapaxes(A[..., ::-1, ::-1], -1, -2) * _ADJ_SIGN
        return adj @ R / det[..., None, None]
    return np.linalg.solve(A, R)


def _mm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    # A @ B; an inner dimension of one is a broadcast product, which skips
    # the matmul dispatch that dominates at these sizes
    if A.shape[-1] == 1:
        return A * B
    return A @ B


def _batch_mass_partials(model: ELModel, Q: np.ndarray) -> np.ndarray:
    if model.mass_partials is not None:
        return np.asarray(model.mass_partials(Q), float)
    return np.stack([mass_partials(model, q) for q in Q])


def transformed_accelerations_batch(spec: TransformSpec, bQ, bV, U) -> np.ndarray:
    """:func:`transformed_accelerations` for ``B`` states, shapes ``(B, n)``.

    Needs evaluators that broadcast over a leading axis (see
    :class:`~sdreswarm.dynamics.ELModel`).  No conditioning guard.
    """
    model = spec.model
    u, a = _axis_index(model.unactuated), _axis_index(model.actuated)
    bV, U = np.asarray(bV, float), np.asarray(U, float)
    Q = phi_inv_batch(spec, bQ)
    B, n = Q.shape
    M = np.asarray(model.mass_matrix(Q), float)
    Mu = M[:, u]
    m_uu, m_ua, m_aa = Mu[:, :, u], Mu[:, :, a], M[:, a][:, :, a]
    J = _small_solve(m_uu, m_ua)
    Jt = np.swapaxes(J, -1, -2)
    vu, va = bV[:, u], bV[:, a]
    p = _mm(J, va[..., None])[..., 0]
    # q' = T bq' and the shifted velocity z = (-J bq'_a, bq'_a): with them the
    # Christoffel terms of diag(m_uu, S) need only dM, never dJ
    qd = bV.copy()
    qd[:, u] -= p
    z = bV.copy()
    z[:, u] = -p
    dM = _batch_mass_partials(model, Q)
    Mdot = (qd[:, None, :] @ dM.reshape(B, n, n * n)).reshape(B, n, n)
    dMz = (dM @ z[:, None, :, None])[..., 0]
    # w_i = bq'_u^T dM_uu,i bq'_u + z^T dM_i z = bq'^T d diag(m_uu, S) / dq_i bq'
    w = (z[:, None, None, :] @ dMz[..., None])[:, :, 0, 0]
    w += (_mm(vu[:, None, None, :], dM[:, :, u][..., u]) @ vu[:, None, :, None])[:, :, 0, 0]
    G = np.asarray(model.input_matrix(Q), float)
    gen = (G @ U[..., None])[..., 0] - np.asarray(model.potential_grad(Q), float)
    # unactuated row: m_uu bq''_u = f_u - m_uu' bq'_u + w_u / 2
    ru = gen[:, u] - (Mdot[:, u][:, :, u] @ vu[..., None])[..., 0] + 0.5 * w[:, u]
    # actuated rows: S bq''_a = h_a - J^T h_u with h = f - M' z + w / 2, which
    # folds the T^T of the forces, of S' bq'_a and of the bq-gradient into one
    h = gen - (Mdot @ z[..., None])[..., 0] + 0.5 * w
    ra = h[:, a] - _mm(Jt, h[:, u, None])[..., 0]
    out = np.empty((B, n))
    out[:, u] = _small_solve(m_uu, ru[..., None])[..., 0]
    out[:, a] = _small_solve(m_aa - _mm(np.swapaxes(m_ua, -1, -2), J), ra[..., None])[..., 0]
    return out


def transformed_lagrangian(tmodel: TransformedModel, bq, bqdot) -> float:
    """``0.5 bq'^T diag(m_uu, S) bq' - V`` in the decoupled coordinates."""
    model = tmodel.model
    ui, ai = list(model.unactuated), list(model.actuated)
    bqdot = np.asarray(bqdot, float)
    ke = 0.5 * bqdot[ui] @ tmodel.mass_uu @ bqdot[ui] + 0.5 * bqdot[ai] @ tmodel.mass_aa_s(bq) @ bqdot[ai]
    return float(ke) - tmodel.potential(bq)
