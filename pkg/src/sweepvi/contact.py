"""1-D viscoelastic contact discretizations feeding the abstract solvers.

Two geometries, both linear P1 elements on an interval with the left end
clamped and the right end in contact:

* a rod loaded along its axis, for the unilateral problems -- either a rigid
  obstacle (complementarity at the contact node) or normal compliance whose
  yield threshold grows with the accumulated penetration;
* a shear layer with a bilaterally constrained normal component and a scalar
  tangential dof at the contact node, for slip-rate-dependent friction driven
  through a sweeping process in the velocity.

The inner product is the stiffness form ``int u' v'`` on the free nodes, so
Riesz representatives and reactions follow the variational convention: the
contact traction is the discrete equilibrium residual at the contact dof.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import eigh

from .core import (
    AssumptionWarning,
    ConstraintCone,
    DimensionMismatchError,
    HilbertSpace,
    HomogeneousFunctional,
    TimeGrid,
    Trajectory,
    UnsupportedConfigurationError,
)
from .evi import LipschitzOperator, MonotoneOperator
from .histop import HistoryOperator, VolterraKernel, volterra_operator, zero_operator
from .inclusion import InclusionSolution, InclusionSpec, solve_inclusion
from .sweeping import SweepingSpec, SweepingSolution, solve_sweeping

__all__ = [
    "Mesh1D",
    "Material",
    "ContactLaw",
    "Loads",
    "ContactProblem",
    "ContactSolution",
    "StressRecord",
    "ContactReport",
    "assemble_space",
    "assemble_A",
    "assemble_elastic",
    "assemble_relaxation",
    "penetration_memory",
    "slip_memory",
    "assemble_loads",
    "trace_constant",
    "build_problem",
    "solve_contact",
    "recover_stress",
    "contact_diagnostics",
]


class Mesh1D:
    """Nodes on ``[0, length]``; node 0 clamped, last node is the contact node."""

    def __init__(self, nodes, fixed_first: bool = True):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("need at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("node coordinates must be strictly increasing")
        self.nodes = nodes
        self.nodes.flags.writeable = False
        self.fixed_first = bool(fixed_first)

    @classmethod
    def uniform(cls, length: float, elements: int) -> "Mesh1D":
        if elements < 1 or length <= 0:
            raise ValueError("need a positive length and at least one element")
        return cls(np.linspace(0.0, length, elements + 1))

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def n_free(self) -> int:
        return self.nodes.size - 1

    @property
    def length(self) -> float:
        return float(self.nodes[-1] - self.nodes[0])

    def __repr__(self) -> str:
        return f"Mesh1D({self.n_elements} elements on [0, {self.nodes[-1]:g}])"


def _per_element(value, n_el: int, name: str, positive: bool) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n_el, float(arr))
    if arr.shape != (n_el,):
        raise DimensionMismatchError(f"{name} must be scalar or one value per element")
    if positive and np.any(arr <= 0):
        raise ValueError(f"{name} must be positive")
    if not positive and np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


@dataclass(frozen=True)
class Material:
    """Coefficients of the constitutive response.

    ``a``: viscosity (or instantaneous) coefficient, per element or uniform;
    the monotone operator it induces has m = min(a), L = max(a) + mu.
    ``mu``: magnitude of the bounded-slope nonlinearity mu*tanh(strain),
    odd and increasing, so it never degrades monotonicity.
    ``b``: elastic coefficient for the displacement coupling (zero for the
    purely viscoelastic rod problems).
    ``beta``: scalar relaxation profile beta(t) for the fading-memory term.
    """

    a: object
    mu: float = 0.0
    b: object = 0.0
    beta: Callable[[float], float] | None = None

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")

    def a_field(self, mesh: Mesh1D) -> np.ndarray:
        return _per_element(self.a, mesh.n_elements, "a", positive=True)

    def b_field(self, mesh: Mesh1D) -> np.ndarray:
        return _per_element(self.b, mesh.n_elements, "b", positive=False)


@dataclass(frozen=True)
class ContactLaw:
    """Contact response at the right end.

    kind "rigid": unilateral constraint, no threshold map.
    kind "compliance": normal stress bounded by F(accumulated penetration).
    kind "friction": tangential stress bounded by F(accumulated slip).
    """

    kind: str
    F: Callable[[np.ndarray], np.ndarray] | None = None
    L_F: float = 0.0

    def __post_init__(self):
        if self.kind not in ("rigid", "compliance", "friction"):
            raise ValueError(f"unknown contact law kind {self.kind!r}")
        if self.kind == "rigid":
            if self.F is not None:
                raise ValueError("a rigid law takes no threshold map")
            return
        if self.F is None:
            raise ValueError(f"{self.kind} law needs a threshold map")
        if self.L_F < 0:
            raise ValueError("L_F must be nonnegative")
        self._audit()

    def _audit(self, samples: int = 400, radius: float = 50.0):
        r = np.linspace(0.0, radius, samples)
        vals = np.asarray(self.F(r), dtype=float)
        if abs(float(np.asarray(self.F(np.array([0.0])))[0])) > 1e-12:
            raise ValueError("threshold map must vanish at zero slip")
        if np.any(vals < -1e-12):
            raise ValueError("threshold map must be nonnegative")
        slopes = np.abs(np.diff(vals)) / np.diff(r)
        if slopes.max(initial=0.0) > self.L_F + 1e-9 * max(1.0, self.L_F):
            raise ValueError(
                f"threshold map exceeds its declared Lipschitz constant: sampled "
                f"slope {slopes.max():.6g} > {self.L_F:.6g}")

    @classmethod
    def rigid(cls) -> "ContactLaw":
        return cls("rigid")

    @classmethod
    def zero(cls, kind: str = "compliance") -> "ContactLaw":
        return cls(kind, F=lambda r: np.zeros_like(np.asarray(r, dtype=float)), L_F=0.0)

    @classmethod
    def linear(cls, slope: float, kind: str = "compliance") -> "ContactLaw":
        if slope < 0:
            raise ValueError("slope must be nonnegative")
        return cls(kind, F=lambda r, s=float(slope): s * np.asarray(r, dtype=float), L_F=float(slope))

    @classmethod
    def saturating(cls, fmax: float, rate: float, kind: str = "friction") -> "ContactLaw":
        if fmax < 0 or rate < 0:
            raise ValueError("fmax and rate must be nonnegative")
        fmax, rate = float(fmax), float(rate)
        return cls(kind, F=lambda r: fmax * (1.0 - np.exp(-rate * np.asarray(r, dtype=float))),
                   L_F=fmax * rate)

    @classmethod
    def from_table(cls, slips, thresholds, kind: str = "compliance") -> "ContactLaw":
        slips = np.asarray(slips, dtype=float)
        thresholds = np.asarray(thresholds, dtype=float)
        if slips.shape != thresholds.shape or slips.ndim != 1 or slips.size < 2:
            raise ValueError("need matching 1-D slip and threshold tables")
        if slips[0] != 0.0 or thresholds[0] != 0.0:
            raise ValueError("table must start at (0, 0)")
        if np.any(np.diff(slips) <= 0):
            raise ValueError("slip abscissae must increase")
        L = float(np.abs(np.diff(thresholds) / np.diff(slips)).max())
        return cls(kind, F=lambda r: np.interp(np.asarray(r, dtype=float), slips, thresholds),
                   L_F=L)


@dataclass(frozen=True)
class Loads:
    """Body force density and an optional point traction at the contact end.

    ``body``: scalar, per-mesh-node array, or callable of t returning either;
    for the shear layer give two components (normal, tangential) as shape
    (2,) or (2, n_nodes).  ``traction`` follows the same convention but is a
    single value per component, applied at the contact node.
    """

    body: object = 0.0
    traction: object = 0.0

    def body_at(self, t: float, components: int, n_nodes: int) -> np.ndarray:
        raw = self.body(t) if callable(self.body) else self.body
        arr = np.asarray(raw, dtype=float)
        if components == 1:
            if arr.ndim == 0:
                arr = np.full(n_nodes, float(arr))
            if arr.shape != (n_nodes,):
                raise DimensionMismatchError("body load must be scalar or per-node")
            return arr[None, :]
        if arr.ndim == 0:
            arr = np.full((2, n_nodes), float(arr))
        elif arr.shape == (2,):
            arr = np.repeat(arr[:, None], n_nodes, axis=1)
        if arr.shape != (2, n_nodes):
            raise DimensionMismatchError("body load must be (2,) or (2, n_nodes)")
        return arr

    def traction_at(self, t: float, components: int) -> np.ndarray:
        raw = self.traction(t) if callable(self.traction) else self.traction
        arr = np.atleast_1d(np.asarray(raw, dtype=float))
        if arr.shape == (1,) and components == 2:
            arr = np.repeat(arr, 2)
        if arr.shape != (components,):
            raise DimensionMismatchError("traction must have one value per component")
        return arr


def _stiffness(mesh: Mesh1D, coeff: np.ndarray) -> np.ndarray:
    """Free-node Gram matrix of ``int coeff u' v'``."""
    n, h = mesh.n_free, mesh.h
    K = np.zeros((n, n))
    for e in range(mesh.n_elements):
        w = coeff[e] / h[e]
        left, right = e - 1, e          # free-dof indices of the element ends
        K[right, right] += w
        if left >= 0:
            K[left, left] += w
            K[left, right] -= w
            K[right, left] -= w
    return K


def _mass(mesh: Mesh1D) -> np.ndarray:
    """Full P1 mass matrix over all mesh nodes (fixed node included)."""
    m = mesh.nodes.size
    M = np.zeros((m, m))
    h = mesh.h
    for e in range(mesh.n_elements):
        M[e:e + 2, e:e + 2] += h[e] / 6.0 * np.array([[2.0, 1.0], [1.0, 2.0]])
    return M


def _strain_matrix(mesh: Mesh1D) -> np.ndarray:
    """Element strains from free-node values (clamped end contributes zero)."""
    n_el, n = mesh.n_elements, mesh.n_free
    G = np.zeros((n_el, n))
    for e in range(n_el):
        G[e, e] = 1.0 / mesh.h[e]
        if e - 1 >= 0:
            G[e, e - 1] = -1.0 / mesh.h[e]
    return G


def _block_diag(block: np.ndarray, count: int) -> np.ndarray:
    if count == 1:
        return block
    out = np.zeros((block.shape[0] * count, block.shape[1] * count))
    for c in range(count):
        sl = slice(c * block.shape[0], (c + 1) * block.shape[0])
        out[sl, c * block.shape[1]:(c + 1) * block.shape[1]] = block
    return out


def assemble_space(mesh: Mesh1D, components: int = 1) -> HilbertSpace:
    """Energy inner product ``int u' v'`` on the free nodes, per component."""
    if not mesh.fixed_first:
        raise UnsupportedConfigurationError(
            "mesh has no clamped node; the energy form is only semi-definite")
    K = _stiffness(mesh, np.ones(mesh.n_elements))
    return HilbertSpace(mesh.n_free * components, _block_diag(K, components))


def trace_constant(space: HilbertSpace, dof: int) -> float:
    """Exact norm of point evaluation at one dof: sup |v_dof| / ||v||."""
    return float(np.sqrt(space.inv_metric[dof, dof]))


def assemble_A(mesh: Mesh1D, material: Material, space: HilbertSpace | None = None,
               components: int = 1) -> MonotoneOperator:
    """Viscosity operator ``a * strain + mu * tanh(strain)`` in Riesz form.

    tanh is odd with slope in (0, 1], so the nonlinearity only adds
    monotonicity: m = min(a), L = max(a) + mu, both exact in the energy norm.
    """
    space = space or assemble_space(mesh, components)
    a = material.a_field(mesh)
    G = _block_diag(_strain_matrix(mesh), components)
    h = np.tile(mesh.h, components)
    Ka = G.T @ np.diag(np.tile(a, components) * h) @ G
    mu = float(material.mu)

    def apply(u: np.ndarray, Ka=Ka, G=G, h=h, mu=mu, space=space) -> np.ndarray:
        force = Ka @ u
        if mu:
            force = force + mu * (G.T @ (h * np.tanh(G @ u)))
        return space.solve_metric(force)

    return MonotoneOperator(apply=apply, m=float(a.min()), L=float(a.max()) + mu,
                            tag="viscosity")


def assemble_elastic(mesh: Mesh1D, material: Material, space: HilbertSpace | None = None,
                     components: int = 1) -> LipschitzOperator:
    """Linear elastic coupling ``b * strain`` with its exact energy norm."""
    space = space or assemble_space(mesh, components)
    b = material.b_field(mesh)
    G = _block_diag(_strain_matrix(mesh), components)
    h = np.tile(mesh.h, components)
    Kb = G.T @ np.diag(np.tile(b, components) * h) @ G
    if b.max() > 0:
        L = float(eigh(Kb, space.metric, eigvals_only=True).max())
    else:
        L = 0.0
    return LipschitzOperator(apply=lambda u: space.solve_metric(Kb @ u), L=L, tag="elastic")


def assemble_relaxation(material: Material, dim: int) -> VolterraKernel:
    """Fading-memory kernel: the profile times the identity in Riesz form.

    The spatial part of the memory term matches the energy form itself, so
    the nodal kernel is beta(t) * Id on the Riesz representatives.
    """
    beta = material.beta or (lambda t: 0.0)
    return VolterraKernel(scalar_profile=beta, matrix=np.eye(dim), symmetric=True)


def _accumulated(fn: Callable[[np.ndarray], np.ndarray], scalar_series: np.ndarray,
                 dt: float) -> np.ndarray:
    from scipy.integrate import cumulative_trapezoid

    acc = cumulative_trapezoid(scalar_series, dx=dt, initial=0.0)
    return np.asarray(fn(acc), dtype=float)


def penetration_memory(law: ContactLaw, contact_dof: int, grid: TimeGrid,
                       y_space: HilbertSpace | None = None) -> HistoryOperator:
    """Threshold trajectory F(int (u at the contact node)^+ ds).

    History-dependent: l = 0.  The integral constant routes through the
    trace bound, L = c0 * L_F, supplied by the caller via the declared L on
    the returned operator when assembling the problem.
    """
    y_space = y_space or HilbertSpace(1)

    def fn(traj: Trajectory) -> Trajectory:
        series = np.maximum(traj.samples[:, contact_dof], 0.0)
        vals = _accumulated(law.F, series, traj.grid.dt)
        return Trajectory(y_space, traj.grid, vals[:, None])

    def fn_node(traj: Trajectory, k: int) -> np.ndarray:
        series = np.maximum(traj.samples[:k + 1, contact_dof], 0.0)
        if k == 0:
            acc = 0.0
        else:
            acc = np.trapezoid(series, dx=traj.grid.dt)
        return np.array([float(law.F(np.array([acc]))[0])])

    return HistoryOperator(fn=fn, l=0.0, L=law.L_F, tag="penetration_threshold",
                           fn_node=fn_node)


def slip_memory(law: ContactLaw, contact_dof: int, grid: TimeGrid,
                y_space: HilbertSpace | None = None) -> HistoryOperator:
    """Threshold trajectory F(int |tangential velocity at the contact node| ds)."""
    y_space = y_space or HilbertSpace(1)

    def fn(traj: Trajectory) -> Trajectory:
        series = np.abs(traj.samples[:, contact_dof])
        vals = _accumulated(law.F, series, traj.grid.dt)
        return Trajectory(y_space, traj.grid, vals[:, None])

    def fn_node(traj: Trajectory, k: int) -> np.ndarray:
        series = np.abs(traj.samples[:k + 1, contact_dof])
        acc = 0.0 if k == 0 else np.trapezoid(series, dx=traj.grid.dt)
        return np.array([float(law.F(np.array([acc]))[0])])

    return HistoryOperator(fn=fn, l=0.0, L=law.L_F, tag="slip_threshold", fn_node=fn_node)


def assemble_loads(mesh: Mesh1D, loads: Loads, grid: TimeGrid,
                   space: HilbertSpace | None = None,
                   components: int = 1) -> tuple[Trajectory, np.ndarray]:
    """Riesz representatives of the load functional plus the raw covectors.

    The covectors (consistent mass-weighted nodal forces, traction included)
    are returned alongside because reactions are recovered from them.
    """
    space = space or assemble_space(mesh, components)
    M_full = _mass(mesh)
    n = mesh.n_free
    covectors = np.empty((grid.steps + 1, space.dim))
    for k, t in enumerate(grid.nodes):
        density = loads.body_at(t, components, mesh.nodes.size)
        traction = loads.traction_at(t, components)
        row = np.empty(space.dim)
        for c in range(components):
            b_full = M_full @ density[c]
            row[c * n:(c + 1) * n] = b_full[1:]
            row[(c + 1) * n - 1] += traction[c]
        covectors[k] = row
    riesz = np.linalg.solve(space.metric, covectors.T).T
    return Trajectory(space, grid, riesz), covectors


@dataclass(frozen=True)
class ContactProblem:
    """Assembled problem plus everything stress recovery needs."""

    kind: str
    spec: object                       # InclusionSpec or SweepingSpec
    mesh: Mesh1D
    material: Material
    law: ContactLaw
    space: HilbertSpace
    grid: TimeGrid
    components: int
    contact_dofs: dict
    load_covectors: np.ndarray = field(repr=False)
    relaxation: HistoryOperator = field(repr=False)


@dataclass(frozen=True)
class ContactSolution:
    """Uniform result wrapper for both problem families."""

    u: Trajectory
    v: Trajectory | None
    theta: Trajectory
    per_step_iterations: np.ndarray
    per_step_residuals: np.ndarray
    converged: bool
    diagnostics: dict = field(repr=False)


def build_problem(kind: str, mesh: Mesh1D, material: Material, law: ContactLaw,
                  loads: Loads, grid: TimeGrid, u0=None) -> ContactProblem:
    """Assemble one of the three contact problems.

    normal_compliance: rod, unconstrained cone, penetration-memory threshold
    on the positive part of the contact displacement.
    rigid_obstacle: rod, nonpositive contact displacement, no threshold.
    shear_friction: shear layer in the velocity, bilateral normal component,
    slip-memory friction threshold on the tangential velocity.
    """
    if kind in ("normal_compliance", "rigid_obstacle"):
        components = 1
    elif kind == "shear_friction":
        components = 2
    else:
        raise ValueError(f"unknown problem kind {kind!r}")
    space = assemble_space(mesh, components)
    n = mesh.n_free
    A = assemble_A(mesh, material, space, components)
    f, covectors = assemble_loads(mesh, loads, grid, space, components)
    relaxation = volterra_operator(assemble_relaxation(material, space.dim), grid,
                                   space, tag="relaxation")

    if kind == "normal_compliance":
        if law.kind != "compliance":
            raise UnsupportedConfigurationError(
                f"normal_compliance needs a compliance law, got {law.kind!r}")
        contact = n - 1
        c0 = trace_constant(space, contact)
        y_space = HilbertSpace(1)
        functional = HomogeneousFunctional.positive_part(space, y_space,
                                                         weights=[1.0], indices=[contact])
        memory = penetration_memory(law, contact, grid, y_space)
        memory = HistoryOperator(fn=memory.fn, l=0.0, L=c0 * law.L_F,
                                 tag=memory.tag, fn_node=memory.fn_node)
        spec = InclusionSpec(x_space=space, y_space=y_space,
                             cone=ConstraintCone.whole_space(space), operator=A,
                             functional=functional, parameter_memory=memory,
                             load_memory=relaxation, f=f, grid=grid)
        dofs = {"nu": contact}
    elif kind == "rigid_obstacle":
        if law.kind != "rigid":
            raise UnsupportedConfigurationError(
                f"rigid_obstacle needs a rigid law, got {law.kind!r}")
        contact = n - 1
        y_space = HilbertSpace(1)
        functional = HomogeneousFunctional.zero(space, y_space)
        spec = InclusionSpec(x_space=space, y_space=y_space,
                             cone=ConstraintCone.nonpositive(space, [contact]),
                             operator=A, functional=functional,
                             parameter_memory=zero_operator(y_space),
                             load_memory=relaxation, f=f, grid=grid)
        dofs = {"nu": contact}
    else:
        if law.kind not in ("friction",):
            raise UnsupportedConfigurationError(
                f"shear_friction needs a friction law, got {law.kind!r}")
        nu_dof, tau_dof = n - 1, 2 * n - 1
        c0 = trace_constant(space, tau_dof)
        y_space = HilbertSpace(1)
        functional = HomogeneousFunctional.block_norm(space, y_space, weights=[1.0],
                                                      blocks=[[tau_dof]])
        memory = slip_memory(law, tau_dof, grid, y_space)
        memory = HistoryOperator(fn=memory.fn, l=0.0, L=c0 * law.L_F,
                                 tag=memory.tag, fn_node=memory.fn_node)
        core = InclusionSpec(x_space=space, y_space=y_space,
                             cone=ConstraintCone.zero(space, [nu_dof]), operator=A,
                             functional=functional, parameter_memory=memory,
                             load_memory=relaxation, f=f, grid=grid)
        b_op = assemble_elastic(mesh, material, space, components)
        if u0 is None:
            u0 = np.zeros(space.dim)
        u0 = np.asarray(u0, dtype=float)
        if abs(u0[nu_dof]) > 1e-14:
            raise UnsupportedConfigurationError(
                "initial displacement must respect the bilateral contact constraint")
        spec = SweepingSpec(core=core, b_op=b_op, u0=u0)
        dofs = {"nu": nu_dof, "tau": tau_dof}
    return ContactProblem(kind=kind, spec=spec, mesh=mesh, material=material, law=law,
                          space=space, grid=grid, components=components,
                          contact_dofs=dofs, load_covectors=covectors,
                          relaxation=relaxation)


def solve_contact(problem: ContactProblem, tol: float = 1e-10,
                  mode: str = "time_marching", **kwargs) -> ContactSolution:
    if isinstance(problem.spec, SweepingSpec):
        sol = solve_sweeping(problem.spec, tol=tol, mode=mode, **kwargs)
        return ContactSolution(u=sol.u, v=sol.v, theta=sol.theta,
                               per_step_iterations=sol.per_step_iterations,
                               per_step_residuals=sol.per_step_residuals,
                               converged=sol.converged, diagnostics=sol.diagnostics)
    sol = solve_inclusion(problem.spec, tol=tol, mode=mode, **kwargs)
    return ContactSolution(u=sol.u, v=None, theta=sol.theta,
                           per_step_iterations=sol.per_step_iterations,
                           per_step_residuals=sol.per_step_residuals,
                           converged=sol.converged, diagnostics=sol.diagnostics)


@dataclass(frozen=True)
class StressRecord:
    """Element stresses and contact reactions over time.

    ``element_stress`` has shape (nodes, elements, components); reactions are
    equilibrium residuals at the contact dofs, the variationally consistent
    notion of boundary traction.
    """

    element_stress: np.ndarray
    sigma_nu: np.ndarray
    sigma_tau: np.ndarray | None = None


def recover_stress(problem: ContactProblem, u: Trajectory,
                   v: Trajectory | None = None) -> StressRecord:
    """Constitutive stress per element plus contact reactions per time node."""
    mesh, material, grid = problem.mesh, problem.material, problem.grid
    comps, n = problem.components, mesh.n_free
    G1 = _strain_matrix(mesh)
    a = material.a_field(mesh)
    mu = float(material.mu)
    rate = v if v is not None else u     # variable the viscous part acts on
    n_nodes = grid.steps + 1

    eps_rate = np.einsum("en,kcn->kce", G1,
                         rate.samples.reshape(n_nodes, comps, n))
    sigma = a * eps_rate + mu * np.tanh(eps_rate)
    if v is not None:
        b = material.b_field(mesh)
        eps_u = np.einsum("en,kcn->kce", G1, u.samples.reshape(n_nodes, comps, n))
        sigma = sigma + b * eps_u
    memory = problem.relaxation(rate)
    eps_mem = np.einsum("en,kcn->kce", G1, memory.samples.reshape(n_nodes, comps, n))
    sigma = sigma + eps_mem
    sigma = np.moveaxis(sigma, 1, 2)     # (time, element, component)

    # reactions: residual of the unconstrained discrete equilibrium
    space = problem.space
    total = np.empty_like(rate.samples)
    for k in range(n_nodes):
        total[k] = problem.spec.core.operator(rate.node(k)) if isinstance(
            problem.spec, SweepingSpec) else problem.spec.operator(rate.node(k))
    if isinstance(problem.spec, SweepingSpec):
        for k in range(n_nodes):
            total[k] = total[k] + problem.spec.b_op(u.node(k))
    total = total + memory.samples
    residual = (space.metric @ total.T).T - problem.load_covectors
    sigma_nu = residual[:, problem.contact_dofs["nu"]]
    sigma_tau = residual[:, problem.contact_dofs["tau"]] if "tau" in problem.contact_dofs else None
    return StressRecord(element_stress=sigma, sigma_nu=sigma_nu, sigma_tau=sigma_tau)


@dataclass(frozen=True)
class ContactReport:
    """Per-time-node contact law residuals with their worst values."""

    kind: str
    series: dict
    worst: dict

    def ok(self, tol: float = 1e-8) -> bool:
        return all(v <= tol for v in self.worst.values())


def contact_diagnostics(problem: ContactProblem, solution: ContactSolution,
                        stress: StressRecord) -> ContactReport:
    """Check the contact law pointwise in time on the solved fields."""
    from scipy.integrate import cumulative_trapezoid

    dt = problem.grid.dt
    series: dict = {}
    worst: dict = {}
    if problem.kind == "rigid_obstacle":
        u_nu = solution.u.samples[:, problem.contact_dofs["nu"]]
        series["penetration"] = np.maximum(u_nu, 0.0)
        series["pressure_sign"] = np.maximum(stress.sigma_nu, 0.0)
        series["complementarity"] = np.abs(stress.sigma_nu * u_nu)
    elif problem.kind == "normal_compliance":
        u_nu = solution.u.samples[:, problem.contact_dofs["nu"]]
        acc = cumulative_trapezoid(np.maximum(u_nu, 0.0), dx=dt, initial=0.0)
        bound = np.asarray(problem.law.F(acc), dtype=float)
        series["pressure_sign"] = np.maximum(stress.sigma_nu, 0.0)
        series["bound_excess"] = np.maximum(-stress.sigma_nu - bound, 0.0)
        series["threshold"] = bound
    else:
        v_tau = solution.v.samples[:, problem.contact_dofs["tau"]]
        acc = cumulative_trapezoid(np.abs(v_tau), dx=dt, initial=0.0)
        bound = np.asarray(problem.law.F(acc), dtype=float)
        dissipation = -stress.sigma_tau * v_tau
        series["bound_excess"] = np.maximum(np.abs(stress.sigma_tau) - bound, 0.0)
        series["dissipation"] = dissipation
        series["threshold"] = bound
        sliding = np.abs(v_tau) > 1e-8
        align = np.zeros_like(v_tau)
        align[sliding] = np.abs(dissipation[sliding] - bound[sliding] * np.abs(v_tau[sliding]))
        series["sliding_alignment"] = align
        worst["dissipation_negativity"] = float(np.maximum(-dissipation, 0.0).max())
    for name in ("penetration", "pressure_sign", "complementarity", "bound_excess",
                 "sliding_alignment"):
        if name in series:
            worst[name] = float(series[name].max())
    return ContactReport(kind=problem.kind, series=series, worst=worst)
