"""Finite-dimensional Hilbert spaces, trajectories, cones and homogeneous functionals.

Everything downstream (variational-inequality solves, memory operators,
sweeping processes, contact assembly) is built on the primitives collected
here: metric inner products, piecewise-linear trajectories on a uniform time
grid, exact metric projections onto coordinate cones, closed-form constrained
proximal maps, and support-function membership tests for moving constraint
sets of the form ``f(t) - C(eta)``.

All objects are treated as immutable after construction and all operations
are pure functions of their arguments, so concurrent read-only use is safe.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh, solve_triangular
from scipy.optimize import nnls

__all__ = [
    "DimensionMismatchError",
    "UnsupportedConfigurationError",
    "TimeRangeError",
    "AssumptionWarning",
    "HilbertSpace",
    "product_space",
    "TimeGrid",
    "Trajectory",
    "ConstraintCone",
    "HomogeneousFunctional",
    "MovingSet",
    "ShiftedSet",
    "sample_unit_directions",
    "normal_cone_identities",
]

_COUPLING_RTOL = 1e-10


class DimensionMismatchError(ValueError):
    """Vector or matrix shape inconsistent with the declared space."""


class UnsupportedConfigurationError(ValueError):
    """No exact formula for the requested metric/cone/functional combination."""


class TimeRangeError(ValueError):
    """Query time lies outside the trajectory's grid."""


class AssumptionWarning(RuntimeWarning):
    """A structural assumption (sign, monotonicity, ...) failed an audit."""


def _vec(x, dim: int) -> np.ndarray:
    v = np.asarray(x, dtype=float)
    if v.shape != (dim,):
        raise DimensionMismatchError(f"expected vector of length {dim}, got shape {v.shape}")
    return v


class HilbertSpace:
    """Real inner-product space of fixed dimension with an SPD metric.

    Parameters
    ----------
    dim : int
        Dimension of the space.
    metric : array_like, optional
        Symmetric positive definite Gram matrix defining the inner product
        ``(u, v) = u^T M v``.  Defaults to the identity.
    """

    def __init__(self, dim: int, metric=None):
        if dim < 1:
            raise DimensionMismatchError("dim must be positive")
        self.dim = int(dim)
        if metric is None:
            metric = np.eye(self.dim)
        metric = np.array(metric, dtype=float)
        if metric.shape != (self.dim, self.dim):
            raise DimensionMismatchError("metric shape does not match dim")
        scale = np.abs(metric).max()
        if scale <= 0.0 or not np.all(np.isfinite(metric)):
            raise ValueError("metric must be finite and nonzero")
        if np.abs(metric - metric.T).max() > 1e-12 * scale:
            raise ValueError("metric must be symmetric")
        metric = 0.5 * (metric + metric.T)
        try:
            self._chol = cho_factor(metric, lower=True)
        except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own type
            raise ValueError("metric must be positive definite") from exc
        except Exception as exc:
            raise ValueError("metric must be positive definite") from exc
        self.metric = metric
        self.inv_metric = cho_solve(self._chol, np.eye(self.dim))
        self.inv_metric = 0.5 * (self.inv_metric + self.inv_metric.T)
        off = metric - np.diag(np.diag(metric))
        self.is_diagonal = bool(np.abs(off).max() <= 1e-14 * scale) if self.dim > 1 else True
        self.metric.flags.writeable = False
        self.inv_metric.flags.writeable = False

    def inner(self, u, v) -> float:
        u = _vec(u, self.dim)
        v = _vec(v, self.dim)
        return float(u @ (self.metric @ v))

    def norm(self, v) -> float:
        v = _vec(v, self.dim)
        return float(np.sqrt(max(v @ (self.metric @ v), 0.0)))

    def distance(self, u, v) -> float:
        return self.norm(np.asarray(u, dtype=float) - np.asarray(v, dtype=float))

    def inner_many(self, u, vs: np.ndarray) -> np.ndarray:
        """Inner product of ``u`` with each row of ``vs``."""
        u = _vec(u, self.dim)
        return np.asarray(vs, dtype=float) @ (self.metric @ u)

    def norms_many(self, vs: np.ndarray) -> np.ndarray:
        vs = np.asarray(vs, dtype=float)
        return np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", vs, self.metric, vs), 0.0))

    def solve_metric(self, b) -> np.ndarray:
        """Riesz map: return ``M^{-1} b``."""
        return cho_solve(self._chol, np.asarray(b, dtype=float))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.dim)

    def __repr__(self) -> str:
        tag = "diag" if self.is_diagonal else "full"
        return f"HilbertSpace(dim={self.dim}, metric={tag})"


def product_space(a: HilbertSpace, b: HilbertSpace) -> HilbertSpace:
    """Product of two spaces with the Euclidean combination of the norms."""
    metric = np.zeros((a.dim + b.dim, a.dim + b.dim))
    metric[: a.dim, : a.dim] = a.metric
    metric[a.dim :, a.dim :] = b.metric
    return HilbertSpace(a.dim + b.dim, metric)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * horizon / steps`` on ``[0, horizon]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        object.__setattr__(self, "_nodes", np.linspace(0.0, self.horizon, self.steps + 1))
        self._nodes.flags.writeable = False

    @property
    def nodes(self) -> np.ndarray:
        return self._nodes

    @property
    def dt(self) -> float:
        return self.horizon / self.steps


class Trajectory:
    """Grid samples of a function ``[0, T] -> X`` with linear interpolation."""

    def __init__(self, space: HilbertSpace, grid: TimeGrid, samples):
        samples = np.array(samples, dtype=float)
        if samples.shape != (grid.steps + 1, space.dim):
            raise DimensionMismatchError(
                f"expected samples of shape {(grid.steps + 1, space.dim)}, got {samples.shape}"
            )
        self.space = space
        self.grid = grid
        self.samples = samples
        self.samples.flags.writeable = False

    @classmethod
    def zeros(cls, space: HilbertSpace, grid: TimeGrid) -> "Trajectory":
        return cls(space, grid, np.zeros((grid.steps + 1, space.dim)))

    @classmethod
    def constant(cls, space: HilbertSpace, grid: TimeGrid, value) -> "Trajectory":
        value = _vec(value, space.dim)
        return cls(space, grid, np.tile(value, (grid.steps + 1, 1)))

    @classmethod
    def from_function(cls, space: HilbertSpace, grid: TimeGrid, fn: Callable[[float], Sequence[float]]) -> "Trajectory":
        rows = [_vec(fn(t), space.dim) for t in grid.nodes]
        return cls(space, grid, np.vstack(rows))

    def node(self, k: int) -> np.ndarray:
        return self.samples[k]

    def at(self, t: float) -> np.ndarray:
        """Piecewise-linear value at time ``t``; exact at grid nodes."""
        nodes = self.grid.nodes
        if t < nodes[0] or t > nodes[-1]:
            raise TimeRangeError(f"t={t} outside [0, {self.grid.horizon}]")
        k = int(np.searchsorted(nodes, t, side="right")) - 1
        k = min(max(k, 0), self.grid.steps - 1)
        span = nodes[k + 1] - nodes[k]
        w = (t - nodes[k]) / span
        if w == 0.0:
            return self.samples[k].copy()
        return (1.0 - w) * self.samples[k] + w * self.samples[k + 1]

    def sup_distance(self, other: "Trajectory") -> float:
        if other.grid.steps != self.grid.steps or other.space.dim != self.space.dim:
            raise DimensionMismatchError("trajectories live on different grids or spaces")
        return float(self.space.norms_many(self.samples - other.samples).max())

    def sup_norm(self) -> float:
        return float(self.space.norms_many(self.samples).max())

    def __repr__(self) -> str:
        return f"Trajectory(dim={self.space.dim}, steps={self.grid.steps})"


_CONE_KINDS = ("whole", "nonpositive", "nonnegative", "zero")


class ConstraintCone:
    """Closed convex cone given by coordinate sign or equality constraints.

    Supported kinds: the whole space, ``x_i <= 0`` on an index set,
    ``x_i >= 0`` on an index set, and ``x_i = 0`` on an index set.  Metric
    projections are exact: coordinate clamps when the metric is diagonal,
    otherwise a small dual solve (nonnegative least squares for inequality
    constraints, a linear solve for equality constraints).
    """

    def __init__(self, space: HilbertSpace, kind: str, indices: Sequence[int] = ()):
        if kind not in _CONE_KINDS:
            raise ValueError(f"unknown cone kind {kind!r}")
        idx = np.array(sorted(set(int(i) for i in indices)), dtype=int)
        if kind == "whole":
            idx = np.array([], dtype=int)
        else:
            if idx.size == 0:
                raise ValueError(f"cone kind {kind!r} needs at least one index")
            if idx.min() < 0 or idx.max() >= space.dim:
                raise DimensionMismatchError("cone indices out of range")
        self.space = space
        self.kind = kind
        self.indices = idx
        self.indices.flags.writeable = False
        if kind != "whole" and not space.is_diagonal:
            G = space.inv_metric[np.ix_(idx, idx)]
            self._gram = G
            self._gram_chol = np.linalg.cholesky(G)
            self._inv_cols = space.inv_metric[:, idx]
        else:
            self._gram = None
            self._gram_chol = None
            self._inv_cols = None

    @classmethod
    def whole_space(cls, space: HilbertSpace) -> "ConstraintCone":
        return cls(space, "whole")

    @classmethod
    def nonpositive(cls, space: HilbertSpace, indices: Sequence[int]) -> "ConstraintCone":
        return cls(space, "nonpositive", indices)

    @classmethod
    def nonnegative(cls, space: HilbertSpace, indices: Sequence[int]) -> "ConstraintCone":
        return cls(space, "nonnegative", indices)

    @classmethod
    def zero(cls, space: HilbertSpace, indices: Sequence[int]) -> "ConstraintCone":
        return cls(space, "zero", indices)

    def negated(self) -> "ConstraintCone":
        """The cone ``-K``."""
        flip = {"whole": "whole", "nonpositive": "nonnegative", "nonnegative": "nonpositive", "zero": "zero"}
        return ConstraintCone(self.space, flip[self.kind], self.indices)

    def violation(self, x) -> float:
        """Largest coordinate-wise constraint violation (0 inside the cone)."""
        x = _vec(x, self.space.dim)
        if self.kind == "whole":
            return 0.0
        vals = x[self.indices]
        if self.kind == "nonpositive":
            return float(max(vals.max(initial=0.0), 0.0))
        if self.kind == "nonnegative":
            return float(max(-vals.min(initial=0.0), 0.0))
        return float(np.abs(vals).max(initial=0.0))

    def contains(self, x, tol: float = 1e-12) -> bool:
        return self.violation(x) <= tol

    def distance(self, x) -> float:
        """Metric distance from ``x`` to the cone."""
        x = _vec(x, self.space.dim)
        return self.space.distance(x, self.project(x))

    def project(self, x) -> np.ndarray:
        """Metric-nearest point of the cone; idempotent and firmly nonexpansive."""
        x = _vec(x, self.space.dim)
        if self.kind == "whole":
            return x.copy()
        idx = self.indices
        if self.space.is_diagonal:
            y = x.copy()
            if self.kind == "nonpositive":
                y[idx] = np.minimum(y[idx], 0.0)
            elif self.kind == "nonnegative":
                y[idx] = np.maximum(y[idx], 0.0)
            else:
                y[idx] = 0.0
            return y
        if self.kind == "nonnegative":
            return -self.negated().project(-x)
        if self.kind == "zero":
            mu = cho_solve((self._gram_chol, True), x[idx])
            y = x - self._inv_cols @ mu
            y[idx] = 0.0
            return y
        # nonpositive under a coupled metric: dual nonnegative least squares
        if idx.size == 1:
            mu = max(x[idx[0]] / self._gram[0, 0], 0.0)
            y = x - self._inv_cols[:, 0] * mu
        else:
            L = self._gram_chol
            b = solve_triangular(L, x[idx], lower=True)
            mu, _ = nnls(L.T, b)
            y = x - self._inv_cols @ mu
        y[idx] = np.minimum(y[idx], 0.0)
        return y

    def project_many(self, xs: np.ndarray) -> np.ndarray:
        """Row-wise projection; vectorized whenever a clamp formula applies."""
        xs = np.asarray(xs, dtype=float)
        if self.kind == "whole":
            return xs.copy()
        idx = self.indices
        if self.space.is_diagonal:
            ys = xs.copy()
            if self.kind == "nonpositive":
                ys[:, idx] = np.minimum(ys[:, idx], 0.0)
            elif self.kind == "nonnegative":
                ys[:, idx] = np.maximum(ys[:, idx], 0.0)
            else:
                ys[:, idx] = 0.0
            return ys
        if self.kind in ("nonpositive", "nonnegative") and idx.size == 1:
            sign = 1.0 if self.kind == "nonpositive" else -1.0
            zs = sign * xs
            mu = np.maximum(zs[:, idx[0]] / self._gram[0, 0], 0.0)
            ys = zs - np.outer(mu, self._inv_cols[:, 0])
            ys[:, idx[0]] = np.minimum(ys[:, idx[0]], 0.0)
            return sign * ys
        if self.kind == "zero":
            mu = cho_solve((self._gram_chol, True), xs[:, idx].T).T
            ys = xs - mu @ self._inv_cols.T
            ys[:, idx] = 0.0
            return ys
        return np.vstack([self.project(row) for row in xs])

    def __repr__(self) -> str:
        return f"ConstraintCone({self.kind}, indices={list(self.indices)})"


def sample_unit_directions(cone: ConstraintCone, count: int, seed: int, include_axes: bool = True) -> np.ndarray:
    """Deterministic unit-norm directions inside the cone.

    Random sphere points are projected onto the cone and renormalized in the
    metric; the signed coordinate axes (those with a nonzero projection) are
    always appended so low-dimensional corners are never missed.
    """
    space = cone.space
    rng = np.random.default_rng(seed)
    raw = rng.standard_normal((max(count, 0), space.dim))
    if include_axes:
        eye = np.eye(space.dim)
        raw = np.vstack([raw, eye, -eye]) if raw.size else np.vstack([eye, -eye])
    pts = cone.project_many(raw)
    norms = space.norms_many(pts)
    keep = norms > 1e-12
    pts = pts[keep] / norms[keep, None]
    return pts


_FUNC_KINDS = ("zero", "positive_part", "block_norm", "separable")


class HomogeneousFunctional:
    """Convex, positively homogeneous integrand ``j(eta, v)`` with cheap proxes.

    Kinds
    -----
    zero
        ``j = 0``; the constrained prox reduces to the cone projection.
    positive_part
        ``j(eta, v) = sum_i w_i eta_i max(v[c_i], 0)``.
    block_norm
        ``j(eta, v) = sum_b w_b eta_b ||v[B_b]||_2``.
    separable
        ``j(eta, v) = p(eta) q(v)`` for a scalar Lipschitz map ``p`` and a
        parameter-free base functional ``q``.

    Each instance declares ``alpha``: the best constant with
    ``j(e1,v2)-j(e1,v1)+j(e2,v1)-j(e2,v2) <= alpha ||e1-e2||_Y ||v1-v2||_X``,
    computed exactly from the metrics (a generalized eigenvalue problem).
    """

    def __init__(self, kind, x_space, y_space, weights=None, indices=None, blocks=None,
                 p=None, p_lipschitz=None, base=None, eta_free=False):
        if kind not in _FUNC_KINDS:
            raise ValueError(f"unknown functional kind {kind!r}")
        self.kind = kind
        self.x_space = x_space
        self.y_space = y_space
        self.eta_free = bool(eta_free) or kind == "zero"
        self.weights = None
        self.indices = None
        self.blocks = None
        self.p = p
        self.p_lipschitz = p_lipschitz
        self.base = base
        if kind == "positive_part":
            self.indices = np.array([int(i) for i in indices], dtype=int)
            self.weights = np.array([float(w) for w in weights], dtype=float)
            if self.indices.size != self.weights.size or self.indices.size == 0:
                raise DimensionMismatchError("need one weight per index")
            if self.indices.min() < 0 or self.indices.max() >= x_space.dim:
                raise DimensionMismatchError("functional indices out of range")
            if len(set(self.indices.tolist())) != self.indices.size:
                raise ValueError("functional indices must be distinct")
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")
        elif kind == "block_norm":
            self.blocks = tuple(np.array([int(i) for i in b], dtype=int) for b in blocks)
            self.weights = np.array([float(w) for w in weights], dtype=float)
            if len(self.blocks) != self.weights.size or not self.blocks:
                raise DimensionMismatchError("need one weight per block")
            flat = np.concatenate(self.blocks)
            if flat.min() < 0 or flat.max() >= x_space.dim:
                raise DimensionMismatchError("block indices out of range")
            if len(set(flat.tolist())) != flat.size:
                raise ValueError("blocks must be disjoint")
            if np.any(self.weights < 0):
                raise ValueError("weights must be nonnegative")
        elif kind == "separable":
            if base is None or p is None or p_lipschitz is None:
                raise ValueError("separable kind needs p, p_lipschitz and base")
            if not base.eta_free:
                raise UnsupportedConfigurationError("separable base must ignore its parameter")
            self.eta_free = False
        if not self.eta_free and kind != "separable":
            if y_space.dim != self._param_count():
                raise DimensionMismatchError("parameter space dimension must match the number of weights")
            if not y_space.is_diagonal:
                raise UnsupportedConfigurationError("parameter-space metric must be diagonal for this kind")
        self.alpha = self._compute_alpha()

    # -- constructors -------------------------------------------------------

    @classmethod
    def zero(cls, x_space: HilbertSpace, y_space: HilbertSpace | None = None) -> "HomogeneousFunctional":
        return cls("zero", x_space, y_space or HilbertSpace(1))

    @classmethod
    def positive_part(cls, x_space, y_space, weights, indices, eta_free=False) -> "HomogeneousFunctional":
        return cls("positive_part", x_space, y_space, weights=weights, indices=indices, eta_free=eta_free)

    @classmethod
    def block_norm(cls, x_space, y_space, weights, blocks, eta_free=False) -> "HomogeneousFunctional":
        return cls("block_norm", x_space, y_space, weights=weights, blocks=blocks, eta_free=eta_free)

    @classmethod
    def separable(cls, y_space, p, p_lipschitz, base) -> "HomogeneousFunctional":
        return cls("separable", base.x_space, y_space, p=p, p_lipschitz=p_lipschitz, base=base)

    # -- structure ----------------------------------------------------------

    def _param_count(self) -> int:
        if self.kind == "positive_part":
            return self.indices.size
        if self.kind == "block_norm":
            return len(self.blocks)
        return self.y_space.dim

    def affected_indices(self) -> np.ndarray:
        """Coordinates of X on which the functional actually depends."""
        if self.kind == "positive_part":
            return self.indices.copy()
        if self.kind == "block_norm":
            return np.concatenate(self.blocks)
        if self.kind == "separable":
            return self.base.affected_indices()
        return np.array([], dtype=int)

    def _extraction_constant(self, d_weights: np.ndarray) -> float:
        # sup of sqrt(sum_u d_u * |v restricted to unit u|^2) over ||v||_X = 1,
        # an exact generalized eigenvalue computation.
        Q = np.zeros((self.x_space.dim, self.x_space.dim))
        if self.kind == "positive_part":
            units = [np.array([i]) for i in self.indices]
        else:
            units = list(self.blocks)
        for d, u in zip(d_weights, units):
            for i in u:
                Q[i, i] += d
        vals = eigh(Q, self.x_space.metric, eigvals_only=True)
        return float(np.sqrt(max(vals.max(), 0.0)))

    def _compute_alpha(self) -> float:
        if self.kind == "zero" or self.eta_free:
            return 0.0
        if self.kind == "separable":
            return float(self.p_lipschitz) * self.base.v_lipschitz()
        my = np.diag(self.y_space.metric)
        return self._extraction_constant(self.weights**2 / my)

    def v_lipschitz(self) -> float:
        """Lipschitz constant of ``v -> j(eta, v)`` at unit parameter values."""
        if self.kind == "zero":
            return 0.0
        if self.kind == "separable":
            raise UnsupportedConfigurationError("v_lipschitz of a separable functional depends on eta")
        return self._extraction_constant(self.weights**2)

    def _effective_eta(self, eta) -> np.ndarray:
        if self.eta_free:
            return np.ones(self._param_count())
        eta = _vec(eta, self.y_space.dim)
        if np.any(eta < 0):
            warnings.warn("negative parameter entries break convexity of j", AssumptionWarning, stacklevel=3)
        return eta

    # -- evaluation ---------------------------------------------------------

    def eval(self, eta, v) -> float:
        v = _vec(v, self.x_space.dim)
        if self.kind == "zero":
            return 0.0
        if self.kind == "separable":
            return float(self.p(_vec(eta, self.y_space.dim))) * self.base.eval(None, v)
        e = self._effective_eta(eta)
        if self.kind == "positive_part":
            return float(np.sum(self.weights * e * np.maximum(v[self.indices], 0.0)))
        total = 0.0
        for w, s, block in zip(self.weights, e, self.blocks):
            total += w * s * float(np.linalg.norm(v[block]))
        return float(total)

    def eval_many(self, eta, vs: np.ndarray) -> np.ndarray:
        vs = np.asarray(vs, dtype=float)
        if self.kind == "zero":
            return np.zeros(vs.shape[0])
        if self.kind == "separable":
            return float(self.p(_vec(eta, self.y_space.dim))) * self.base.eval_many(None, vs)
        e = self._effective_eta(eta)
        if self.kind == "positive_part":
            return np.maximum(vs[:, self.indices], 0.0) @ (self.weights * e)
        out = np.zeros(vs.shape[0])
        for w, s, block in zip(self.weights, e, self.blocks):
            out += w * s * np.linalg.norm(vs[:, block], axis=1)
        return out

    # -- proximal map -------------------------------------------------------

    def prox(self, eta, cone: ConstraintCone, rho: float, w) -> np.ndarray:
        """argmin over ``v`` in the cone of ``0.5 ||v - w||_X^2 + rho j(eta, v)``.

        Exactness requires that the coordinates the functional touches are
        mutually uncoupled in the inverse metric and uncoupled from the
        cone-constrained coordinates (always true for diagonal metrics and
        for the block metrics produced by the contact assembly); otherwise an
        :class:`UnsupportedConfigurationError` is raised.
        """
        w = _vec(w, self.x_space.dim)
        if cone.space is not self.x_space and cone.space.dim != self.x_space.dim:
            raise DimensionMismatchError("cone lives in a different space")
        if rho < 0:
            raise ValueError("rho must be nonnegative")
        if self.kind == "zero":
            return cone.project(w)
        if self.kind == "separable":
            scale = float(self.p(_vec(eta, self.y_space.dim)))
            if scale < 0:
                raise UnsupportedConfigurationError("separable scale p(eta) is negative; prox undefined")
            return self.base.prox(None, cone, rho * scale, w)

        e = self._effective_eta(eta)
        space = self.x_space
        M = space.metric
        G = space.inv_metric
        if self.kind == "positive_part":
            units = [(np.array([i]), float(t)) for i, t in zip(self.indices, rho * self.weights * e)]
        else:
            units = [(b, float(t)) for b, t in zip(self.blocks, rho * self.weights * e)]
        for _, tau in units:
            if tau < 0:
                raise UnsupportedConfigurationError("negative effective weight; prox undefined")

        constrained = set(cone.indices.tolist())
        mixed_units, free_units, zeroed_units = [], [], []
        for coords, tau in units:
            inter = [c for c in coords if c in constrained]
            if not inter:
                free_units.append((coords, tau))
            elif len(coords) == 1:
                mixed_units.append((int(coords[0]), tau))
            elif cone.kind == "zero" and len(inter) == len(coords):
                zeroed_units.append(coords)
            else:
                raise UnsupportedConfigurationError(
                    "functional block partially overlaps the cone constraints"
                )

        def coupled(i: int, j: int, A: np.ndarray) -> bool:
            return abs(A[i, j]) > _COUPLING_RTOL * np.sqrt(abs(A[i, i] * A[j, j]))

        unit_coords = [c for coords, _ in free_units for c in coords]
        outside = sorted((constrained - {i for i, _ in mixed_units}))
        for i, _ in mixed_units:
            row = np.abs(M[i]).copy()
            row[i] = 0.0
            if row.max(initial=0.0) > _COUPLING_RTOL * abs(M[i, i]):
                raise UnsupportedConfigurationError(
                    f"coordinate {i} carries both a constraint and a functional term "
                    "but is coupled through the metric"
                )
        for coords, _ in free_units:
            d = G[coords[0], coords[0]]
            for c in coords:
                if abs(G[c, c] - d) > _COUPLING_RTOL * abs(d):
                    raise UnsupportedConfigurationError("inverse metric not scalar on a norm block")
            others = [j for j in unit_coords if j not in set(coords.tolist())] + outside
            for c in coords:
                for j in others:
                    if coupled(c, j, G):
                        raise UnsupportedConfigurationError(
                            f"inverse-metric coupling between coordinates {c} and {j} "
                            "prevents a closed-form prox"
                        )
            for c in coords:
                for j in coords:
                    if c != j and coupled(c, j, G):
                        raise UnsupportedConfigurationError(
                            "inverse-metric coupling inside a functional unit"
                        )

        v = cone.project(w)
        # subgradient step through the inverse metric for unconstrained units
        s = np.zeros(space.dim)
        for coords, tau in free_units:
            if tau == 0.0:
                continue
            d = G[coords[0], coords[0]]
            if self.kind == "positive_part":
                i = int(coords[0])
                if w[i] - d * tau > 0.0:
                    g = tau
                elif w[i] < 0.0:
                    g = 0.0
                else:
                    g = w[i] / d
                s[i] = g
            else:
                # norm blocks shrink symmetrically, including singletons
                nb = float(np.linalg.norm(w[coords]))
                if nb > d * tau:
                    s[coords] = tau * w[coords] / nb
                else:
                    s[coords] = w[coords] / d
        if s.any():
            v = v - G @ s
        # combined one-dimensional formulas where constraint and term share a coordinate
        for i, tau in mixed_units:
            d = G[i, i]
            if cone.kind == "zero":
                v[i] = 0.0
            elif cone.kind == "nonnegative":
                v[i] = max(w[i] - d * tau, 0.0)
            elif self.kind == "block_norm":
                # |v| is active on the feasible side, so it pushes upward
                v[i] = min(w[i] + d * tau, 0.0)
            else:  # nonpositive: the positive part vanishes on the feasible side
                v[i] = min(w[i], 0.0)
        for coords in zeroed_units:
            v[coords] = 0.0
        return v

    def __repr__(self) -> str:
        return f"HomogeneousFunctional({self.kind}, alpha={self.alpha:.6g})"


class MovingSet:
    """Time-sliced constraint set ``C(eta, t) = shift - C(eta)``.

    ``C(eta)`` is the subgradient set at zero of the functional extended by
    the cone's indicator, so membership of a normal vector is tested through
    the support inequalities of the functional rather than by constructing
    the set itself.
    """

    def __init__(self, functional: HomogeneousFunctional, cone: ConstraintCone, eta, shift):
        self.functional = functional
        self.cone = cone
        self.eta = None if functional.eta_free else _vec(eta, functional.y_space.dim)
        self.shift = _vec(shift, cone.space.dim)

    def membership_residual(self, z, xi, sampler_budget: int = 2048, seed: int = 0,
                            extra_dirs: np.ndarray | None = None) -> float:
        """Violation of ``xi in N_{C(eta,t)}(z)``; accept iff <= tolerance.

        The test works through the equivalent variational statement for
        ``u = -xi``: feasibility of ``u`` in the cone, the support
        inequalities ``(shift - z, v) <= j(eta, v)`` over sampled cone
        directions, and the complementarity identity at ``u`` itself.
        """
        space = self.cone.space
        z = _vec(z, space.dim)
        xi = _vec(xi, space.dim)
        u = -xi
        w = self.shift - z
        cone_gap = self.cone.distance(u)
        dirs = sample_unit_directions(self.cone, sampler_budget, seed)
        rows = [dirs]
        un = space.norm(u)
        if un > 1e-12:
            rows.append((u / un)[None, :])
        if extra_dirs is not None and len(extra_dirs):
            rows.append(np.asarray(extra_dirs, dtype=float))
        vs = np.vstack(rows)
        support = space.inner_many(w, vs) - self.functional.eval_many(self.eta, vs)
        support_max = float(support.max(initial=0.0))
        compl = self.functional.eval(self.eta, u) - space.inner(w, u)
        return max(support_max, compl, cone_gap)


@dataclass(frozen=True)
class ShiftedSet:
    """Translate of a constraint cone: ``{shift + x : x in cone}``."""

    cone: ConstraintCone
    shift: np.ndarray

    def violation(self, x) -> float:
        return self.cone.violation(_vec(x, self.cone.space.dim) - self.shift)

    def project(self, x) -> np.ndarray:
        return self.shift + self.cone.project(_vec(x, self.cone.space.dim) - self.shift)

    def negated(self) -> "ShiftedSet":
        return ShiftedSet(self.cone.negated(), -self.shift)

    def translated(self, v) -> "ShiftedSet":
        return ShiftedSet(self.cone, self.shift - _vec(v, self.cone.space.dim))

    def normal_residual(self, point, xi, sampler_budget: int = 512, seed: int = 0) -> float:
        """Violation of ``xi in N_set(point)`` by sampled support testing."""
        space = self.cone.space
        point = _vec(point, space.dim)
        xi = _vec(xi, space.dim)
        gap = space.distance(point, self.project(point))
        dirs = sample_unit_directions(self.cone, sampler_budget, seed)
        best = gap
        for radius in (0.5, 1.0, 4.0, 32.0):
            ys = self.shift[None, :] + radius * dirs
            vals = (ys - point[None, :]) @ (space.metric @ xi)
            best = max(best, float(vals.max(initial=0.0)))
        return best

    def normal_samples(self, point, count: int, seed: int, atol: float = 1e-9) -> np.ndarray:
        """Closed-form normal vectors at ``point`` (active-constraint combinations)."""
        space = self.cone.space
        x = _vec(point, space.dim) - self.shift
        gens = []
        for i in self.cone.indices:
            if self.cone.kind == "nonpositive" and abs(x[i]) <= atol:
                gens.append(np.eye(space.dim)[i])
            elif self.cone.kind == "nonnegative" and abs(x[i]) <= atol:
                gens.append(-np.eye(space.dim)[i])
            elif self.cone.kind == "zero":
                gens.append(np.eye(space.dim)[i])
                gens.append(-np.eye(space.dim)[i])
        rows = [np.zeros(space.dim)]
        if gens:
            gens = np.vstack(gens)
            rng = np.random.default_rng(seed)
            coeff = rng.uniform(0.0, 2.0, size=(count, gens.shape[0]))
            rows.append(coeff @ gens)
            rows.append(gens)
        return np.vstack([r[None, :] if r.ndim == 1 else r for r in rows])


def normal_cone_identities(cset: ShiftedSet, u, v, sampler_budget: int = 512,
                           seed: int = 0, tol: float = 1e-10) -> tuple[bool, bool]:
    """Sampled check of the translation and reflection identities for normal cones.

    Returns a pair of booleans: the first for
    ``N_C(u + v) == N_{C - v}(u)``, the second for ``N_C(-u) == -N_{-C}(u)``.
    Raises if the base points do not lie in the respective sets.
    """
    space = cset.cone.space
    u = _vec(u, space.dim)
    v = _vec(v, space.dim)
    if cset.violation(u + v) > 1e-9:
        raise ValueError("u + v must lie in the set")
    shifted = cset.translated(v)
    ok_shift = True
    for xi in cset.normal_samples(u + v, 16, seed):
        if shifted.normal_residual(u, xi, sampler_budget, seed + 1) > tol * max(1.0, space.norm(xi)):
            ok_shift = False
    for xi in shifted.normal_samples(u, 16, seed + 2):
        if cset.normal_residual(u + v, xi, sampler_budget, seed + 3) > tol * max(1.0, space.norm(xi)):
            ok_shift = False

    ok_neg = True
    if cset.violation(-u) <= 1e-9:
        neg = cset.negated()
        for xi in cset.normal_samples(-u, 16, seed + 4):
            if neg.normal_residual(u, -xi, sampler_budget, seed + 5) > tol * max(1.0, space.norm(xi)):
                ok_neg = False
        for xi in neg.normal_samples(u, 16, seed + 6):
            if cset.normal_residual(-u, -xi, sampler_budget, seed + 7) > tol * max(1.0, space.norm(xi)):
                ok_neg = False
    else:
        raise ValueError("-u must lie in the set for the reflection identity")
    return ok_shift, ok_neg
