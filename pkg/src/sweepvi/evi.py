"""Elliptic variational inequalities solved by metric-projected contraction.

Problem: find ``u`` in a cone ``K`` with

    (A u, v - u)_X + j(eta, v) - j(eta, u) >= (f, v - u)_X   for all v in K,

for a strongly monotone Lipschitz operator ``A``.  The solver iterates the
constrained proximal map of ``rho * j`` applied to ``u - rho (A u - f)``,
which contracts with factor ``sqrt(1 - m^2 / L^2)`` at the step size
``rho = m / L^2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import eigh

from .core import (
    ConstraintCone,
    DimensionMismatchError,
    HilbertSpace,
    HomogeneousFunctional,
    MovingSet,
    sample_unit_directions,
)

__all__ = [
    "AuditError",
    "NonConvergenceError",
    "MonotoneOperator",
    "LipschitzOperator",
    "OperatorAudit",
    "EviProblem",
    "EviSolution",
    "audit_operator",
    "solve_evi",
    "vi_residual",
    "check_vi_normal_cone_agreement",
]


class AuditError(RuntimeError):
    """Declared operator constants failed the sampled audit."""


class NonConvergenceError(RuntimeError):
    """Iteration budget exhausted before the stopping rule fired."""

    def __init__(self, message, last_iterate=None, displacement=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.displacement = displacement


@dataclass(frozen=True)
class MonotoneOperator:
    """Operator on X with declared strong monotonicity ``m`` and Lipschitz ``L``.

    The constants are declarations; :func:`audit_operator` spot-checks them on
    sampled pairs.  ``m > 0`` and ``L >= m`` are required.
    """

    apply: Callable[[np.ndarray], np.ndarray]
    m: float
    L: float
    tag: str = "operator"

    def __post_init__(self):
        if not (self.m > 0.0 and np.isfinite(self.m)):
            raise ValueError("m must be positive")
        if not (self.L >= self.m):
            raise ValueError("L must be at least m")

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.apply(u)

    @classmethod
    def from_matrix(cls, space: HilbertSpace, matrix, tag: str = "linear") -> "MonotoneOperator":
        """Linear operator ``u -> H u`` with exact constants in the space norm.

        ``H`` must be self-adjoint w.r.t. the metric (``M H`` symmetric);
        the constants are the extreme generalized eigenvalues of ``(M H, M)``.
        """
        H = np.asarray(matrix, dtype=float)
        if H.shape != (space.dim, space.dim):
            raise DimensionMismatchError("matrix shape does not match space")
        MH = space.metric @ H
        if np.abs(MH - MH.T).max() > 1e-10 * max(np.abs(MH).max(), 1e-30):
            raise ValueError("matrix is not self-adjoint in the space metric")
        vals = eigh(0.5 * (MH + MH.T), space.metric, eigvals_only=True)
        m, L = float(vals.min()), float(vals.max())
        if m <= 0:
            raise ValueError("matrix is not positive definite in the space metric")
        return cls(apply=lambda u, H=H: H @ u, m=m, L=L, tag=tag)


@dataclass(frozen=True)
class LipschitzOperator:
    """Operator with a declared Lipschitz constant and no monotonicity claim."""

    apply: Callable[[np.ndarray], np.ndarray]
    L: float
    tag: str = "lipschitz"

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.apply(u)


@dataclass(frozen=True)
class OperatorAudit:
    """Sampled monotonicity and Lipschitz margins for declared constants."""

    m_declared: float
    L_declared: float
    m_observed: float
    L_observed: float
    trials: int

    @property
    def ok(self) -> bool:
        slack = 1e-7 * max(1.0, self.m_declared, self.L_declared)
        return self.m_observed >= self.m_declared - slack and self.L_observed <= self.L_declared + slack


def audit_operator(op: MonotoneOperator, space: HilbertSpace, trials: int = 1000,
                   seed: int = 0, radius: float = 10.0) -> OperatorAudit:
    """Check the declared ``(m, L)`` on ``trials`` random pairs of points."""
    rng = np.random.default_rng(seed)
    m_obs, l_obs = np.inf, 0.0
    for _ in range(trials):
        u = radius * rng.standard_normal(space.dim)
        v = radius * rng.standard_normal(space.dim)
        d = u - v
        nd2 = space.inner(d, d)
        if nd2 < 1e-20:
            continue
        ad = op(u) - op(v)
        m_obs = min(m_obs, space.inner(ad, d) / nd2)
        l_obs = max(l_obs, np.sqrt(max(space.inner(ad, ad), 0.0) / nd2))
    return OperatorAudit(op.m, op.L, float(m_obs), float(l_obs), trials)


def audit_lipschitz(op: LipschitzOperator, space: HilbertSpace, trials: int = 200,
                    seed: int = 0, radius: float = 10.0) -> float:
    """Largest sampled difference quotient; should not exceed the declared L."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        u = radius * rng.standard_normal(space.dim)
        v = radius * rng.standard_normal(space.dim)
        nd = space.distance(u, v)
        if nd < 1e-10:
            continue
        worst = max(worst, space.distance(op(u), op(v)) / nd)
    return worst


@dataclass(frozen=True)
class EviProblem:
    """One elliptic variational inequality (space, cone, operator, j, data)."""

    space: HilbertSpace
    cone: ConstraintCone
    operator: MonotoneOperator
    functional: HomogeneousFunctional
    eta: np.ndarray | None
    f: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.f, dtype=float)
        if f.shape != (self.space.dim,):
            raise DimensionMismatchError("f has the wrong dimension")
        object.__setattr__(self, "f", f)


@dataclass(frozen=True)
class EviSolution:
    """Converged iterate with iteration count and quality indicators.

    ``residual`` is the final displacement-based error bound on the distance
    to the exact solution; ``contraction_estimate`` is the largest observed
    ratio of successive displacements (0 when fewer than two steps ran).
    """

    u: np.ndarray
    iterations: int
    residual: float
    contraction_estimate: float


def solve_evi(problem: EviProblem, tol: float = 1e-10, max_iter: int = 5000,
              rho: float | None = None, start: np.ndarray | None = None,
              force: bool = False, audit_trials: int = 64, seed: int = 0) -> EviSolution:
    """Solve the variational inequality by the contraction iteration.

    Parameters
    ----------
    tol : float
        Bound on the distance between the returned iterate and the exact
        solution, enforced through the a-posteriori contraction estimate
        ``||u+ - u*|| <= q / (1 - q) * ||u+ - u||``.
    rho : float, optional
        Step size; defaults to ``m / L^2`` which minimizes the contraction
        factor ``q = sqrt(1 - m^2 / L^2)``.
    force : bool
        Run even if the sampled audit of the declared constants fails.
    audit_trials : int
        Pairs used for the entry audit; 0 skips it (callers that audit once
        for a family of solves pass 0).
    """
    op, space = problem.operator, problem.space
    if audit_trials > 0:
        audit = audit_operator(op, space, trials=audit_trials, seed=seed)
        if not audit.ok and not force:
            raise AuditError(
                f"declared (m={op.m:.6g}, L={op.L:.6g}) failed the sampled audit "
                f"(observed m={audit.m_observed:.6g}, L={audit.L_observed:.6g}); "
                "pass force=True to run anyway"
            )
    if rho is None:
        rho = op.m / (op.L * op.L)
    elif rho <= 0.0:
        raise ValueError("rho must be positive")
    q = float(np.sqrt(max(1.0 - 2.0 * rho * op.m + (rho * op.L) ** 2, 0.0)))
    q = min(q, 1.0 - 1e-16)
    # displacement threshold equivalent to a distance-to-solution of tol
    threshold = tol * (1.0 - q) / q if q > 0.0 else np.inf

    u = space.zeros() if start is None else np.array(start, dtype=float)
    if u.shape != (space.dim,):
        raise DimensionMismatchError("start vector has the wrong dimension")
    prev_disp = None
    contraction = 0.0
    for it in range(1, max_iter + 1):
        w = u - rho * (op(u) - problem.f)
        u_next = problem.functional.prox(problem.eta, problem.cone, rho, w)
        disp = space.distance(u_next, u)
        u = u_next
        if prev_disp is not None and prev_disp > 1e-300:
            contraction = max(contraction, disp / prev_disp)
        prev_disp = disp
        if disp <= threshold:
            bound = disp * q / (1.0 - q) if q > 0.0 else 0.0
            return EviSolution(u=u, iterations=it, residual=float(bound),
                               contraction_estimate=float(contraction))
    raise NonConvergenceError(
        f"no convergence in {max_iter} iterations (last displacement {prev_disp:.3e})",
        last_iterate=u, displacement=prev_disp,
    )


def vi_residual(u: np.ndarray, problem: EviProblem, sampler_budget: int = 4096,
                seed: int = 0, extra_points: np.ndarray | None = None,
                feasibility_tol: float = 1e-9) -> float:
    """Largest sampled violation of the variational inequality at ``u``.

    Returns ``-min`` over sampled ``v`` in the cone of
    ``(A u, v - u) + j(eta, v) - j(eta, u) - (f, v - u)``; the sample always
    contains the origin and ``u`` itself, so the value is nonnegative and a
    valid solution stays at solver-tolerance size.  Infeasible ``u`` returns
    ``+inf``.
    """
    space = problem.space
    u = np.asarray(u, dtype=float)
    if problem.cone.violation(u) > feasibility_tol:
        return np.inf
    dirs = sample_unit_directions(problem.cone, sampler_budget, seed)
    # violations of far-from-origin candidates only show up past ||u||, so
    # test each direction at unit scale and beyond that radius (cones are
    # closed under positive scaling)
    far = 2.0 * (space.norm(u) + 1.0)
    rows = [dirs, far * dirs, np.zeros((1, space.dim)), u[None, :]]
    if extra_points is not None and len(extra_points):
        rows.append(np.asarray(extra_points, dtype=float))
    vs = np.vstack(rows)
    g = problem.operator(u) - problem.f
    ju = problem.functional.eval(problem.eta, u)
    vals = (vs - u[None, :]) @ (space.metric @ g) + problem.functional.eval_many(problem.eta, vs) - ju
    return float(-vals.min())


def check_vi_normal_cone_agreement(u: np.ndarray, z: np.ndarray, problem: EviProblem,
                                   sampler_budget: int = 4096, seed: int = 0,
                                   accept_tol: float = 1e-7, reject_tol: float = 1e-3) -> bool:
    """Agreement of the two equivalent solution tests at the pair ``(u, z)``.

    Test one: the parametrized inequality
    ``j(eta, v) - j(eta, u) >= (f - z, v - u)`` over sampled ``v`` in the
    cone.  Test two: membership of ``-u`` in the normal cone of the moving
    set ``f - C(eta)`` at ``z``.  Returns True when both accept (residuals
    <= ``accept_tol``) or both clearly reject (> ``reject_tol``).
    """
    space = problem.space
    u = np.asarray(u, dtype=float)
    z = np.asarray(z, dtype=float)
    w = problem.f - z
    if problem.cone.violation(u) > 1e-9:
        vi_res = np.inf
    else:
        rows = [sample_unit_directions(problem.cone, sampler_budget, seed),
                np.zeros((1, space.dim)), u[None, :]]
        vs = np.vstack(rows)
        ju = problem.functional.eval(problem.eta, u)
        vals = (problem.functional.eval_many(problem.eta, vs) - ju) - (vs - u[None, :]) @ (space.metric @ w)
        vi_res = float(-vals.min())
    mset = MovingSet(problem.functional, problem.cone, problem.eta, problem.f)
    member_res = mset.membership_residual(z, -u, sampler_budget, seed + 1)
    both_accept = vi_res <= accept_tol and member_res <= accept_tol
    both_reject = vi_res > reject_tol and member_res > reject_tol
    return both_accept or both_reject
