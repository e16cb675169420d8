"""Time-dependent normal-cone inclusions driven by history operators.

The problem class: find a trajectory ``u`` with ``u(t) in K`` and

    -u(t) in N_{C(eta(t), t)}(A u(t) + xi(t)),

where ``eta = R u`` is produced by a parameter memory (values in Y, feeding
the functional ``j``), ``xi = S u`` by a load memory (values in X, shifting
the load), and ``C(eta, t)`` is the moving set induced by ``j(eta, .)``, the
cone ``K`` and the load ``f(t)``.  Node by node the inclusion is equivalent
to an elliptic variational inequality, so the solver reduces everything to a
fixed point of the coupling map

    theta = (eta, xi)  ->  (R u_theta, S u_theta),

where ``u_theta`` solves the per-node EVI with the frozen parameters.  The
map contracts when ``(alpha + 1)(l_param + l_load) < m``; that admissibility
gate is checked up front and can only be bypassed explicitly, in which case
divergence is recorded rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    ConstraintCone,
    DimensionMismatchError,
    HilbertSpace,
    HomogeneousFunctional,
    MovingSet,
    TimeGrid,
    Trajectory,
    product_space,
)
from .evi import (
    AuditError,
    EviProblem,
    EviSolution,
    MonotoneOperator,
    NonConvergenceError,
    audit_operator,
    solve_evi,
    vi_residual,
)
from .histop import HistoryOperator, IneligibleOperatorError, identity_operator, zero_operator

__all__ = [
    "SmallnessError",
    "SmallnessReport",
    "InclusionSpec",
    "InclusionSolution",
    "check_smallness",
    "solve_intermediate",
    "stability_gap_violation",
    "apply_coupling_map",
    "solve_inclusion",
    "build_inclusion_variant",
]


class SmallnessError(RuntimeError):
    """The admissibility gate failed and the caller did not force the run."""


@dataclass(frozen=True)
class SmallnessReport:
    """Constants entering the contraction gate, evaluated strictly."""

    alpha: float
    l_parameter: float
    l_load: float
    m: float

    @property
    def lhs(self) -> float:
        return (self.alpha + 1.0) * (self.l_parameter + self.l_load)

    @property
    def passed(self) -> bool:
        return self.lhs < self.m

    @property
    def ratio(self) -> float:
        """Contraction modulus implied by the constants (may exceed 1)."""
        return self.lhs / self.m

    def describe(self) -> str:
        verdict = "pass" if self.passed else "FAIL"
        return (f"(alpha+1)(l_param+l_load) = ({self.alpha:.6g}+1)"
                f"({self.l_parameter:.6g}+{self.l_load:.6g}) = {self.lhs:.6g} "
                f"{'<' if self.passed else '>='} m = {self.m:.6g}  [{verdict}]")


@dataclass(frozen=True)
class InclusionSpec:
    """Immutable description of one inclusion problem on a fixed grid.

    ``parameter_memory`` maps X-valued trajectories to Y-valued ones and its
    output feeds the functional's parameter slot; ``load_memory`` maps X to X
    and its output is subtracted from the load.  Both must be causal.
    """

    x_space: HilbertSpace
    y_space: HilbertSpace
    cone: ConstraintCone
    operator: MonotoneOperator
    functional: HomogeneousFunctional
    parameter_memory: HistoryOperator
    load_memory: HistoryOperator
    f: Trajectory
    grid: TimeGrid

    def __post_init__(self):
        if self.cone.space.dim != self.x_space.dim:
            raise DimensionMismatchError("cone lives in the wrong space")
        if self.functional.x_space.dim != self.x_space.dim:
            raise DimensionMismatchError("functional acts on the wrong space")
        if not self.functional.eta_free and self.functional.y_space.dim != self.y_space.dim:
            raise DimensionMismatchError("functional parameter space does not match Y")
        if self.f.space.dim != self.x_space.dim:
            raise DimensionMismatchError("load must be X-valued")
        if self.f.grid.steps != self.grid.steps or self.f.grid.horizon != self.grid.horizon:
            raise DimensionMismatchError("load trajectory lives on a different grid")
        # probe both memories once so dimension bugs surface at build time
        zeros = Trajectory.zeros(self.x_space, self.grid)
        for op, dim, label in ((self.parameter_memory, self.y_space.dim, "parameter"),
                               (self.load_memory, self.x_space.dim, "load")):
            out = op(zeros)
            if out.samples.shape[1] != dim:
                raise DimensionMismatchError(f"{label} memory output has dimension "
                                             f"{out.samples.shape[1]}, expected {dim}")

    @property
    def theta_space(self) -> HilbertSpace:
        return product_space(self.y_space, self.x_space)

    def split_theta(self, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ny = self.y_space.dim
        return samples[:, :ny], samples[:, ny:]


@dataclass(frozen=True)
class InclusionSolution:
    """Solution trajectory with per-node convergence evidence."""

    u: Trajectory
    theta: Trajectory
    per_step_iterations: np.ndarray
    per_step_residuals: np.ndarray
    smallness: SmallnessReport
    converged: bool
    diagnostics: dict = field(repr=False)


def check_smallness(spec: InclusionSpec) -> SmallnessReport:
    """Evaluate the contraction gate from the declared constants.

    Declared constants win over sampled estimates; estimation is advisory
    and lives in ``histop.estimate_constants``.
    """
    return SmallnessReport(alpha=spec.functional.alpha,
                           l_parameter=spec.parameter_memory.l,
                           l_load=spec.load_memory.l,
                           m=spec.operator.m)


def _node_problem(spec: InclusionSpec, eta_k: np.ndarray, xi_k: np.ndarray,
                  f_k: np.ndarray) -> EviProblem:
    return EviProblem(space=spec.x_space, cone=spec.cone, operator=spec.operator,
                      functional=spec.functional, eta=eta_k, f=f_k - xi_k)


def _solve_nodes(spec: InclusionSpec, theta: Trajectory, tol: float,
                 start: np.ndarray | None = None) -> tuple[Trajectory, np.ndarray]:
    """Solve the frozen-parameter EVI at every node, warm-starting along t."""
    eta, xi = spec.split_theta(theta.samples)
    n = spec.grid.steps
    out = np.empty((n + 1, spec.x_space.dim))
    iters = np.zeros(n + 1, dtype=int)
    guess = None
    for k in range(n + 1):
        problem = _node_problem(spec, eta[k], xi[k], spec.f.node(k))
        if start is not None:
            guess = start[k]
        try:
            sol = solve_evi(problem, tol=tol, start=guess, audit_trials=0)
        except NonConvergenceError as exc:
            raise NonConvergenceError(f"EVI stalled at node {k}: {exc}",
                                      last_iterate=exc.last_iterate,
                                      displacement=exc.displacement) from exc
        out[k] = sol.u
        iters[k] = sol.iterations
        if start is None:
            guess = sol.u
    return Trajectory(spec.x_space, spec.grid, out), iters


def solve_intermediate(theta: Trajectory, spec: InclusionSpec, tol: float = 1e-10,
                       audit_trials: int = 256, seed: int = 0) -> Trajectory:
    """Solve the decoupled problem: at each node the EVI with frozen theta.

    theta carries (eta, xi) stacked in the product space Y x X.  The result
    at node k depends only on theta at node k and the load there.
    """
    if theta.samples.shape[1] != spec.theta_space.dim:
        raise DimensionMismatchError("theta must take values in Y x X")
    if audit_trials:
        audit = audit_operator(spec.operator, spec.x_space, trials=audit_trials, seed=seed)
        if not audit.ok:
            raise AuditError(f"operator constants failed the sampled audit: {audit}")
    traj, _ = _solve_nodes(spec, theta, tol)
    return traj


def stability_gap_violation(spec: InclusionSpec, theta1: Trajectory, theta2: Trajectory,
                            tol: float = 1e-10) -> float:
    """Worst violation of the frozen-parameter stability bound.

    For solutions u1, u2 of the decoupled problems the gap obeys
    ``||u1 - u2|| <= (alpha ||eta1 - eta2|| + ||xi1 - xi2||) / m`` node by
    node; the return value is the max over nodes of lhs - rhs, which should
    not exceed a couple of solver tolerances.
    """
    u1 = solve_intermediate(theta1, spec, tol=tol, audit_trials=0)
    u2 = solve_intermediate(theta2, spec, tol=tol, audit_trials=0)
    eta1, xi1 = spec.split_theta(theta1.samples)
    eta2, xi2 = spec.split_theta(theta2.samples)
    lhs = spec.x_space.norms_many(u1.samples - u2.samples)
    rhs = (spec.functional.alpha * spec.y_space.norms_many(eta1 - eta2)
           + spec.x_space.norms_many(xi1 - xi2)) / spec.operator.m
    return float(np.max(lhs - rhs))


def apply_coupling_map(spec: InclusionSpec, theta: Trajectory, tol: float = 1e-10,
                       start: np.ndarray | None = None) -> tuple[Trajectory, Trajectory, np.ndarray]:
    """One sweep of theta -> (R u_theta, S u_theta); returns (theta+, u, iters)."""
    u, iters = _solve_nodes(spec, theta, tol, start=start)
    eta_new = spec.parameter_memory(u)
    xi_new = spec.load_memory(u)
    stacked = np.hstack([eta_new.samples, xi_new.samples])
    return Trajectory(spec.theta_space, spec.grid, stacked), u, iters


def _membership_residuals(spec: InclusionSpec, u: Trajectory, theta: Trajectory,
                          nodes: np.ndarray, seed: int) -> dict[int, float]:
    eta, xi = spec.split_theta(theta.samples)
    out = {}
    for k in nodes:
        k = int(k)
        moving = MovingSet(spec.functional, spec.cone, eta[k], spec.f.node(k))
        z = spec.operator(u.node(k)) + xi[k]
        out[k] = moving.membership_residual(z, -u.node(k), seed=seed + k)
    return out


def solve_inclusion(spec: InclusionSpec, tol: float = 1e-10,
                    mode: str = "time_marching", force: bool = False,
                    max_sweeps: int = 500, max_inner: int = 500,
                    audit_trials: int = 256, membership_nodes: int = 8,
                    membership_tol: float | None = None,
                    residual_budget: int = 1024, seed: int = 0) -> InclusionSolution:
    """Drive the coupling map to its fixed point and return the trajectory.

    global_picard iterates theta over whole trajectories; time_marching
    freezes history node by node and runs the same iteration on the single
    trailing component.  Causal memories make the two fixed points coincide.

    With ``force`` the admissibility gate and non-convergence become data:
    the run continues and the returned diagnostics record what happened.
    """
    if mode not in ("global_picard", "time_marching"):
        raise ValueError(f"unknown mode {mode!r}")
    report = check_smallness(spec)
    if not report.passed and not force:
        raise SmallnessError(f"admissibility gate failed: {report.describe()}; "
                             "pass force=True to record the attempt anyway")
    if audit_trials:
        audit = audit_operator(spec.operator, spec.x_space, trials=audit_trials, seed=seed)
        if not audit.ok:
            raise AuditError(f"operator constants failed the sampled audit: {audit}")

    # stop when the sweep displacement certifies a fixed-point distance <= tol,
    # but never on a displacement larger than tol itself
    def threshold(ratio: float) -> float:
        r = min(max(ratio, 1e-3), 0.95)
        return min(tol, tol * (1.0 - r) / r)

    evi_tol = 0.05 * tol
    gate_ratio = report.ratio if report.passed else 0.5
    diagnostics: dict = {"mode": mode, "forced": bool(force and not report.passed),
                         "smallness": report.describe()}
    converged = True

    if mode == "global_picard":
        theta = Trajectory.zeros(spec.theta_space, spec.grid)
        u = None
        changes: list[float] = []
        iters = np.zeros(spec.grid.steps + 1, dtype=int)
        sweeps = 0
        for sweeps in range(1, max_sweeps + 1):
            start = u.samples if u is not None else None
            theta_new, u, iters = apply_coupling_map(spec, theta, tol=evi_tol, start=start)
            change = theta.sup_distance(theta_new)
            changes.append(change)
            theta = theta_new
            ratio = changes[-1] / changes[-2] if len(changes) > 1 and changes[-2] > 0 else gate_ratio
            if change <= threshold(ratio):
                break
        else:
            converged = False
        if not changes or changes[-1] == 0.0:
            converged = True
        diagnostics["sweeps"] = sweeps
        diagnostics["sweep_changes"] = changes
    else:
        n = spec.grid.steps
        u_samples = np.zeros((n + 1, spec.x_space.dim))
        theta_samples = np.zeros((n + 1, spec.theta_space.dim))
        iters = np.zeros(n + 1, dtype=int)
        inner_counts = np.zeros(n + 1, dtype=int)
        for k in range(n + 1):
            if k > 0:
                u_samples[k] = u_samples[k - 1]
            guess = u_samples[k]
            node_ok = False
            change = np.inf
            prev_change = None
            for inner in range(1, max_inner + 1):
                u_traj = Trajectory(spec.x_space, spec.grid, u_samples)
                eta_k = spec.parameter_memory.at_node(u_traj, k)
                xi_k = spec.load_memory.at_node(u_traj, k)
                theta_k = np.concatenate([eta_k, xi_k])
                problem = _node_problem(spec, eta_k, xi_k, spec.f.node(k))
                try:
                    sol = solve_evi(problem, tol=evi_tol, start=guess, audit_trials=0)
                except NonConvergenceError as exc:
                    raise NonConvergenceError(f"EVI stalled at node {k}: {exc}",
                                              last_iterate=exc.last_iterate,
                                              displacement=exc.displacement) from exc
                iters[k] += sol.iterations
                change = spec.theta_space.distance(theta_samples[k], theta_k)
                theta_samples[k] = theta_k
                u_samples[k] = sol.u
                guess = sol.u
                ratio = change / prev_change if prev_change and prev_change > 0 else gate_ratio
                prev_change = change
                inner_counts[k] = inner
                # the first pass compares against the stale initial theta, which
                # can match by accident; only trust the change from pass two on
                if inner >= 2 and change <= 0.1 * threshold(ratio):
                    node_ok = True
                    break
            if not node_ok:
                converged = False
                if not force:
                    raise NonConvergenceError(
                        f"inner iteration stalled at node {k}; last change {change:.3e}",
                        last_iterate=u_samples[k], displacement=change)
        u = Trajectory(spec.x_space, spec.grid, u_samples)
        theta = Trajectory(spec.theta_space, spec.grid, theta_samples)
        diagnostics["inner_iterations"] = inner_counts

    if not converged and not force:
        raise NonConvergenceError(
            f"coupling map did not settle within {max_sweeps} sweeps; "
            f"last change {diagnostics.get('sweep_changes', [np.inf])[-1]:.3e}",
            displacement=diagnostics.get("sweep_changes", [np.inf])[-1])

    eta, xi = spec.split_theta(theta.samples)
    residuals = np.empty(spec.grid.steps + 1)
    for k in range(spec.grid.steps + 1):
        problem = _node_problem(spec, eta[k], xi[k], spec.f.node(k))
        residuals[k] = vi_residual(u.node(k), problem, sampler_budget=residual_budget,
                                   seed=seed + k)

    count = min(membership_nodes, spec.grid.steps + 1)
    nodes = np.unique(np.linspace(0, spec.grid.steps, count).round().astype(int))
    membership = _membership_residuals(spec, u, theta, nodes, seed)
    diagnostics["membership"] = membership
    if converged:
        limit = membership_tol if membership_tol is not None else max(1e-6, 100.0 * tol)
        worst = max(membership.values())
        if worst > limit:
            raise AuditError(f"solution failed the inclusion membership check: "
                             f"worst residual {worst:.3e} > {limit:.3e}")

    return InclusionSolution(u=u, theta=theta, per_step_iterations=iters,
                             per_step_residuals=residuals, smallness=report,
                             converged=converged, diagnostics=diagnostics)


def build_inclusion_variant(variant: str, *, cone: ConstraintCone,
                            operator: MonotoneOperator,
                            functional: HomogeneousFunctional,
                            f: Trajectory, grid: TimeGrid,
                            parameter_memory: HistoryOperator | None = None,
                            load_memory: HistoryOperator | None = None) -> InclusionSpec:
    """Assemble one of the three canonical couplings.

    memory_pair
        Both memories integrate strictly over the past (instantaneous
        constant 0); the admissibility gate then passes for free.
    state_parameter
        The functional's parameter is the current state itself (parameter
        memory = identity), which costs l = 1 and tightens the gate to
        ``alpha + 1 < m``.
    parameter_free
        The functional ignores its parameter; the parameter memory is
        dropped entirely.
    """
    x_space = functional.x_space
    if variant == "memory_pair":
        if parameter_memory is None or load_memory is None:
            raise ValueError("memory_pair needs both memories")
        if parameter_memory.l != 0.0 or load_memory.l != 0.0:
            raise IneligibleOperatorError(
                "memory_pair requires strictly history-dependent memories (l = 0); "
                f"got l_param={parameter_memory.l}, l_load={load_memory.l}")
        y_space = functional.y_space
    elif variant == "state_parameter":
        if parameter_memory is not None:
            raise ValueError("state_parameter supplies its own parameter memory")
        if functional.eta_free:
            raise ValueError("state_parameter needs a parameter-dependent functional")
        if functional.y_space.dim != x_space.dim:
            raise DimensionMismatchError("state feedback needs Y = X")
        parameter_memory = identity_operator(tag="state_feedback")
        load_memory = load_memory or zero_operator(x_space)
        if load_memory.l != 0.0:
            raise IneligibleOperatorError("state_parameter requires an l = 0 load memory")
        if not functional.alpha + 1.0 < operator.m:
            raise SmallnessError(
                f"state_parameter gate failed: alpha + 1 = {functional.alpha + 1.0:.6g} "
                f">= m = {operator.m:.6g}")
        y_space = functional.y_space
    elif variant == "parameter_free":
        if not functional.eta_free:
            raise ValueError("parameter_free needs a functional that ignores its parameter")
        y_space = functional.y_space
        parameter_memory = parameter_memory or zero_operator(y_space, tag="unused_parameter")
        load_memory = load_memory or zero_operator(x_space)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return InclusionSpec(x_space=x_space, y_space=y_space, cone=cone, operator=operator,
                         functional=functional, parameter_memory=parameter_memory,
                         load_memory=load_memory, f=f, grid=grid)
