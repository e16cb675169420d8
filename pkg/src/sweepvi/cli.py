"""Configuration-driven command line.

Subcommands:
  check        parse the config, audit assumptions, print the smallness gate
  run          solve and write solution.csv + diagnostics.txt into --out
  convergence  empirical refinement study in dt (and h for contact kinds)
  verify       recompute residuals and oracle gaps from the written files

Exit codes: 0 ok, 2 gate or verification failure, 3 non-convergence,
4 config or usage error.

The config is a sectioned key-value file (configparser dialect); see the
repository's configs/ directory for commented examples.  Float output uses
17 significant digits so reruns are byte-identical and round-trip exactly.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .contact import (
    ContactLaw,
    ContactProblem,
    ContactSolution,
    Loads,
    Material,
    Mesh1D,
    build_problem,
    contact_diagnostics,
    recover_stress,
)
from .core import (
    ConstraintCone,
    HilbertSpace,
    HomogeneousFunctional,
    TimeGrid,
    Trajectory,
)
from .evi import AuditError, MonotoneOperator, NonConvergenceError, audit_operator, vi_residual
from .histop import VolterraKernel, identity_operator, volterra_operator, zero_operator
from .inclusion import (
    InclusionSpec,
    SmallnessError,
    _membership_residuals,
    _node_problem,
    check_smallness,
    solve_inclusion,
)
from .oracle import GridSearchConfig, brute_inclusion
from .sweeping import SweepingSpec, integrate_velocity, lift_to_velocity, solve_sweeping

__all__ = ["ConfigError", "RunConfig", "load_config", "main"]

_CONTACT_KINDS = ("normal_compliance", "rigid_obstacle", "shear_friction")
_ORACLE_DIM_CAP = 2
_ORACLE_STEP_CAP = 16


class ConfigError(Exception):
    """Unusable configuration; the message names the section and key."""


def _g(x: float) -> str:
    return "%.17g" % float(x)


@dataclass(frozen=True)
class RunConfig:
    """Parsed run description: problem family plus solver settings."""

    kind: str
    grid: TimeGrid
    tol: float
    max_iter: int
    mode: str
    seed: int
    force: bool
    mesh: Mesh1D | None = None
    material: Material | None = None
    law: ContactLaw | None = None
    loads: Loads | None = None
    u0: np.ndarray | None = None
    abstract: dict | None = None


def _floats(text: str) -> np.ndarray:
    try:
        return np.array([float(p) for p in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    try:
        return [int(p) for p in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"expected integers, got {text!r}") from exc


def _require(parser: configparser.ConfigParser, section: str) -> configparser.SectionProxy:
    if not parser.has_section(section):
        raise ConfigError(f"missing [{section}] section")
    return parser[section]


def _get(sec, key: str, default: str | None = None) -> str:
    val = sec.get(key, default)
    if val is None:
        raise ConfigError(f"[{sec.name}] is missing key {key!r}")
    return val


def _law_from(sec) -> ContactLaw:
    name = _get(sec, "law")
    law_kind = sec.get("law_kind", None)
    if name == "rigid":
        return ContactLaw.rigid()
    if name == "zero":
        return ContactLaw.zero(kind=law_kind or "compliance")
    if name == "linear":
        return ContactLaw.linear(float(_get(sec, "slope")), kind=law_kind or "compliance")
    if name == "saturating":
        return ContactLaw.saturating(float(_get(sec, "fmax")), float(_get(sec, "rate")),
                                     kind=law_kind or "friction")
    if name == "table":
        return ContactLaw.from_table(_floats(_get(sec, "slips")),
                                     _floats(_get(sec, "thresholds")),
                                     kind=law_kind or "compliance")
    raise ConfigError(f"[contact] unknown law {name!r}")


def _schedule(base: np.ndarray, ramp: np.ndarray):
    """Constant value, or an affine-in-time callable when a ramp is present."""
    base_v = float(base[0]) if base.size == 1 else base
    if not np.any(ramp):
        return base_v
    ramp_v = float(ramp[0]) if ramp.size == 1 else ramp
    return lambda t: base_v + t * ramp_v


def _loads_from(sec) -> Loads:
    body = _floats(sec.get("body", "0"))
    body_ramp = _floats(sec.get("body_ramp", "0"))
    traction = _floats(sec.get("traction", "0"))
    traction_ramp = _floats(sec.get("traction_ramp", "0"))
    return Loads(body=_schedule(body, body_ramp),
                 traction=_schedule(traction, traction_ramp))


def _material_from(sec) -> Material:
    a = _floats(_get(sec, "a"))
    amp = float(sec.get("beta", "0"))
    rate = float(sec.get("beta_rate", "0"))
    beta = None
    if amp != 0.0:
        beta = (lambda t, c=amp: c) if rate == 0.0 else (lambda t, c=amp, r=rate: c * np.exp(-r * t))
    return Material(a=float(a[0]) if a.size == 1 else a,
                    mu=float(sec.get("mu", "0")),
                    b=float(sec.get("b", "0")),
                    beta=beta)


def _abstract_from(sec) -> dict:
    out = {
        "variant": _get(sec, "variant"),
        "dimension": int(_get(sec, "dimension")),
        "y_dimension": int(sec.get("y_dimension", sec.get("dimension"))),
        "metric": _floats(sec.get("metric", "1")),
        "operator": _floats(_get(sec, "operator")),
        "cone": sec.get("cone", "whole"),
        "cone_indices": _ints(sec["cone_indices"]) if "cone_indices" in sec else None,
        "functional": sec.get("functional", "zero"),
        "weights": _floats(sec.get("weights", "1")),
        "indices": _ints(sec.get("indices", "0")),
        "blocks": [_ints(b) for b in sec.get("blocks", "0").split(";")],
        "eta_free": sec.getboolean("eta_free", fallback=False),
        "parameter_kernel": float(sec.get("parameter_kernel", "0")),
        "parameter_rate": float(sec.get("parameter_rate", "0")),
        "load_kernel": float(sec.get("load_kernel", "0")),
        "load_rate": float(sec.get("load_rate", "0")),
        "f": _floats(sec.get("f", "0")),
        "f_ramp": _floats(sec.get("f_ramp", "0")),
    }
    if out["variant"] not in ("memory_pair", "state_parameter", "parameter_free"):
        raise ConfigError(f"[abstract] unknown variant {out['variant']!r}")
    if out["dimension"] < 1:
        raise ConfigError("[abstract] dimension must be >= 1")
    return out


def load_config(path: str | Path) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"parse error in {path}: {exc}") from exc

    prob = _require(parser, "problem")
    kind = _get(prob, "kind")
    tsec = _require(parser, "time")
    horizon = float(_get(tsec, "horizon"))
    steps = int(_get(tsec, "steps"))
    if steps < 1 or not np.isfinite(horizon) or horizon <= 0:
        raise ConfigError("[time] needs horizon > 0 and steps >= 1")
    grid = TimeGrid(horizon, steps)

    sol = parser["solver"] if parser.has_section("solver") else {}
    get = sol.get if hasattr(sol, "get") else dict(sol).get
    tol = float(get("tol", "1e-10"))
    max_iter = int(get("max_iter", "500"))
    mode = get("mode", "time_marching")
    seed = int(get("seed", "0"))
    force = str(get("force", "false")).strip().lower() in ("1", "true", "yes", "on")
    if mode not in ("time_marching", "global_picard"):
        raise ConfigError(f"[solver] unknown mode {mode!r}")
    if not (np.isfinite(tol) and tol > 0):
        raise ConfigError("[solver] tol must be a positive finite number")

    if kind in _CONTACT_KINDS:
        msec = _require(parser, "mesh")
        mesh = Mesh1D.uniform(float(_get(msec, "length")), int(_get(msec, "elements")))
        material = _material_from(_require(parser, "material"))
        law = _law_from(_require(parser, "contact"))
        loads = _loads_from(_require(parser, "loads"))
        u0 = _floats(prob["u0"]) if "u0" in prob else None
        return RunConfig(kind=kind, grid=grid, tol=tol, max_iter=max_iter, mode=mode,
                         seed=seed, force=force, mesh=mesh, material=material,
                         law=law, loads=loads, u0=u0)
    if kind == "abstract":
        return RunConfig(kind=kind, grid=grid, tol=tol, max_iter=max_iter, mode=mode,
                         seed=seed, force=force, abstract=_abstract_from(_require(parser, "abstract")))
    raise ConfigError(f"[problem] unknown kind {kind!r}")


def _build_abstract(cfg: RunConfig) -> InclusionSpec:
    """Wire an InclusionSpec directly so --force can bypass the gate."""
    ab = cfg.abstract
    dim, y_dim = ab["dimension"], ab["y_dimension"]
    metric = ab["metric"]
    metric = np.diag(np.full(dim, metric[0]) if metric.size == 1 else metric)
    if metric.shape != (dim, dim):
        raise ConfigError("[abstract] metric must list one value per dimension")
    x_space = HilbertSpace(dim, metric=metric)
    if ab["variant"] == "state_parameter":
        y_dim = dim
    y_space = HilbertSpace(y_dim)

    op_entries = ab["operator"]
    if op_entries.size != dim * dim:
        raise ConfigError("[abstract] operator needs dimension^2 entries (row-major)")
    try:
        operator = MonotoneOperator.from_matrix(x_space, op_entries.reshape(dim, dim))
    except ValueError as exc:
        raise ConfigError(f"[abstract] operator rejected: {exc}") from exc

    idx = ab["cone_indices"] if ab["cone_indices"] is not None else list(range(dim))
    cone_kind = ab["cone"]
    if cone_kind == "whole":
        cone = ConstraintCone.whole_space(x_space)
    elif cone_kind in ("nonnegative", "nonpositive", "zero"):
        cone = getattr(ConstraintCone, cone_kind)(x_space, idx)
    else:
        raise ConfigError(f"[abstract] unknown cone {cone_kind!r}")

    fk = ab["functional"]
    eta_free = ab["eta_free"] or ab["variant"] == "parameter_free"
    if fk == "zero":
        functional = HomogeneousFunctional.zero(x_space, y_space)
    elif fk == "positive_part":
        functional = HomogeneousFunctional.positive_part(
            x_space, y_space, weights=ab["weights"], indices=ab["indices"], eta_free=eta_free)
    elif fk == "block_norm":
        functional = HomogeneousFunctional.block_norm(
            x_space, y_space, weights=ab["weights"], blocks=ab["blocks"], eta_free=eta_free)
    else:
        raise ConfigError(f"[abstract] unknown functional {fk!r}")

    def _volterra(amp, rate, out_space):
        profile = (lambda t, c=amp: c) if rate == 0.0 else (lambda t, c=amp, r=rate: c * np.exp(-r * t))
        C = np.eye(out_space.dim, dim)
        return volterra_operator(VolterraKernel(scalar_profile=profile, matrix=C,
                                                symmetric=out_space.dim == dim),
                                 cfg.grid, x_space, out_space=out_space)

    if ab["variant"] == "state_parameter":
        parameter = identity_operator(tag="state_feedback")
    elif ab["parameter_kernel"] != 0.0:
        if y_dim != dim:
            raise ConfigError("[abstract] parameter_kernel needs y_dimension == dimension")
        parameter = _volterra(ab["parameter_kernel"], ab["parameter_rate"], y_space)
    else:
        parameter = zero_operator(y_space, tag="zero_parameter")
    load = (_volterra(ab["load_kernel"], ab["load_rate"], x_space)
            if ab["load_kernel"] != 0.0 else zero_operator(x_space, tag="zero_load"))

    base, ramp = ab["f"], ab["f_ramp"]
    base = np.full(dim, base[0]) if base.size == 1 else base
    ramp = np.full(dim, ramp[0]) if ramp.size == 1 else ramp
    if base.shape != (dim,) or ramp.shape != (dim,):
        raise ConfigError("[abstract] f and f_ramp need one value per dimension")
    f = Trajectory.from_function(x_space, cfg.grid, lambda t: base + t * ramp)

    return InclusionSpec(x_space=x_space, y_space=y_space, cone=cone, operator=operator,
                         functional=functional, parameter_memory=parameter,
                         load_memory=load, f=f, grid=cfg.grid)


def _build(cfg: RunConfig):
    """Returns (ContactProblem | None, InclusionSpec | SweepingSpec)."""
    if cfg.kind in _CONTACT_KINDS:
        problem = build_problem(cfg.kind, cfg.mesh, cfg.material, cfg.law,
                                cfg.loads, cfg.grid, u0=cfg.u0)
        return problem, problem.spec
    return None, _build_abstract(cfg)


def _core_spec(spec) -> InclusionSpec:
    return lift_to_velocity(spec) if isinstance(spec, SweepingSpec) else spec


# ---------------------------------------------------------------- check

def cmd_check(cfg: RunConfig, out) -> int:
    problem, spec = _build(cfg)
    core = _core_spec(spec)
    audit = audit_operator(core.operator, core.x_space, trials=400, seed=cfg.seed)
    print(f"problem: {cfg.kind}", file=out)
    print(f"operator [{core.operator.tag}]: declared m={_g(audit.m_declared)} "
          f"L={_g(audit.L_declared)}; sampled m={_g(audit.m_observed)} "
          f"L={_g(audit.L_observed)} over {audit.trials} pairs "
          f"[{'pass' if audit.ok else 'FAIL'}]", file=out)
    if problem is not None and problem.law.kind != "rigid":
        print(f"contact law [{problem.law.kind}]: F(0)=0, nondecreasing bound, "
              f"Lipschitz constant {_g(problem.law.L_F)} [pass]", file=out)
    report = check_smallness(core)
    print(f"memories: l_parameter={_g(report.l_parameter)} l_load={_g(report.l_load)} "
          f"alpha={_g(report.alpha)}", file=out)
    print("smallness gate: " + report.describe(), file=out)
    ok = audit.ok and report.passed
    print("check: " + ("all gates pass" if ok else "gate failure"), file=out)
    return 0 if ok else 2


# ---------------------------------------------------------------- run

def _solve(cfg: RunConfig, spec, mode=None, tol=None, force=None):
    mode = mode or cfg.mode
    tol = tol if tol is not None else cfg.tol
    force = cfg.force if force is None else force
    kwargs = dict(tol=tol, mode=mode, force=force, seed=cfg.seed,
                  max_inner=cfg.max_iter, max_sweeps=cfg.max_iter)
    if isinstance(spec, SweepingSpec):
        sol = solve_sweeping(spec, **kwargs)
        return sol.u, sol.v, sol.theta, sol
    sol = solve_inclusion(spec, **kwargs)
    return sol.u, None, sol.theta, sol


def _csv_rows(cfg: RunConfig, problem, u, v, sol):
    header = ["t"] + [f"u{i}" for i in range(u.space.dim)]
    cols = [cfg.grid.nodes] + [u.samples[:, i] for i in range(u.space.dim)]
    if v is not None:
        header += [f"v{i}" for i in range(v.space.dim)]
        cols += [v.samples[:, i] for i in range(v.space.dim)]
    if problem is not None:
        stress = recover_stress(problem, u, v)
        header.append("sigma_nu")
        cols.append(stress.sigma_nu)
        if stress.sigma_tau is not None:
            header.append("sigma_tau")
            cols.append(stress.sigma_tau)
    header += ["residual", "iterations"]
    cols.append(np.asarray(sol.per_step_residuals, dtype=float))
    iters = np.asarray(sol.per_step_iterations, dtype=int)
    rows = []
    for k in range(cfg.grid.steps + 1):
        row = [_g(c[k]) for c in cols] + [str(int(iters[k]))]
        rows.append(row)
    return header, rows


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _diagnostics_text(cfg: RunConfig, problem, spec, sol, error: str | None = None) -> str:
    core = _core_spec(spec)
    lines = [f"problem: {cfg.kind}"]
    if cfg.abstract:
        lines.append(f"variant: {cfg.abstract['variant']}")
    lines += [f"mode: {cfg.mode}", f"tol: {_g(cfg.tol)}", f"seed: {cfg.seed}",
              f"forced: {str(cfg.force).lower()}"]
    rep = check_smallness(core)
    lines += ["smallness:",
              f"  alpha: {_g(rep.alpha)}",
              f"  l_parameter: {_g(rep.l_parameter)}",
              f"  l_load: {_g(rep.l_load)}",
              f"  m: {_g(rep.m)}",
              f"  lhs: {_g(rep.lhs)}",
              f"  verdict: {'pass' if rep.passed else 'fail'}"]
    lines += ["operator:", f"  tag: {core.operator.tag}",
              f"  m: {_g(core.operator.m)}", f"  L: {_g(core.operator.L)}"]
    if error is not None:
        lines += ["converged: false", f"error: {error}"]
        return "\n".join(lines) + "\n"
    lines.append(f"converged: {str(sol.converged).lower()}")
    lines.append(f"nodes: {cfg.grid.steps + 1}")
    res = np.asarray(sol.per_step_residuals, dtype=float)
    lines.append(f"max_residual: {_g(res.max())}")
    lines.append(f"total_iterations: {int(np.asarray(sol.per_step_iterations).sum())}")
    membership = sol.diagnostics.get("membership", {})
    if membership:
        lines.append(f"membership_worst: {_g(max(membership.values()))}")
    if problem is not None:
        stress = recover_stress(problem, sol.u, sol.v if hasattr(sol, "v") else None)
        contact_sol = sol if isinstance(sol, ContactSolution) else ContactSolution(
            u=sol.u, v=getattr(sol, "v", None), theta=sol.theta,
            per_step_iterations=sol.per_step_iterations,
            per_step_residuals=sol.per_step_residuals,
            converged=sol.converged, diagnostics=sol.diagnostics)
        report = contact_diagnostics(problem, contact_sol, stress)
        lines.append("contact:")
        for key in sorted(report.worst):
            lines.append(f"  {key}: {_g(report.worst[key])}")
    return "\n".join(lines) + "\n"


def cmd_run(cfg: RunConfig, out_dir: Path, out) -> int:
    problem, spec = _build(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        u, v, theta, sol = _solve(cfg, spec)
    except NonConvergenceError as exc:
        text = _diagnostics_text(cfg, problem, spec, None, error=str(exc))
        (out_dir / "diagnostics.txt").write_text(text, encoding="utf-8")
        print(f"non-convergence: {exc}", file=out)
        return 3
    header, rows = _csv_rows(cfg, problem, u, v, sol)
    _write_csv(out_dir / "solution.csv", header, rows)
    (out_dir / "diagnostics.txt").write_text(
        _diagnostics_text(cfg, problem, spec, sol), encoding="utf-8")
    print(f"wrote {out_dir / 'solution.csv'} ({len(rows)} rows) "
          f"and {out_dir / 'diagnostics.txt'}", file=out)
    if not sol.converged:
        print("run finished without meeting the stopping rule (recorded)", file=out)
        return 3
    return 0


# ---------------------------------------------------------------- convergence

def _refined(cfg: RunConfig, steps=None, elements=None) -> RunConfig:
    out = cfg
    if steps is not None:
        out = replace(out, grid=TimeGrid(cfg.grid.horizon, steps))
    if elements is not None:
        out = replace(out, mesh=Mesh1D.uniform(cfg.mesh.length, elements))
    return out


def _solution_u(cfg: RunConfig):
    _, spec = _build(cfg)
    u, v, _, _ = _solve(cfg, spec)
    return u if v is None else v       # compare the primary unknown field


def _order_table(label, sizes, diffs, out, lines):
    block = [label, f"  {'level':>8}  {'sup-diff':>24}  {'order':>6}"]
    for i, (n, d) in enumerate(zip(sizes[1:], diffs)):
        order = "--" if i == 0 or diffs[i - 1] == 0 or d == 0 else \
            f"{np.log2(diffs[i - 1] / d):.2f}"
        block.append(f"  {n:>8}  {_g(d):>24}  {order:>6}")
    lines.extend(block)
    for ln in block:
        print(ln, file=out)


def cmd_convergence(cfg: RunConfig, refinements: int, out_dir: Path | None, out) -> int:
    if refinements < 2:
        raise ConfigError("convergence study needs --refinements >= 2")
    lines: list[str] = []

    sols = [_solution_u(_refined(cfg, steps=cfg.grid.steps * 2 ** k))
            for k in range(refinements + 1)]
    diffs = []
    for coarse, fine in zip(sols, sols[1:]):
        gap = coarse.space.norms_many(coarse.samples - fine.samples[::2]).max()
        diffs.append(float(gap))
    _order_table("temporal refinement (dt halving):",
                 [s.grid.steps for s in sols], diffs, out, lines)

    if cfg.kind in _CONTACT_KINDS:
        base_el = cfg.mesh.n_elements
        sols_h = [_solution_u(_refined(cfg, elements=base_el * 2 ** k))
                  for k in range(refinements + 1)]
        diffs_h = []
        comps = 2 if cfg.kind == "shear_friction" else 1
        for lev, (coarse, fine) in enumerate(zip(sols_h, sols_h[1:])):
            n = base_el * 2 ** lev
            shared = 2 * np.arange(1, n + 1) - 1          # coarse nodes on the fine mesh
            cs = coarse.samples.reshape(-1, comps, n)
            fs = fine.samples.reshape(-1, comps, 2 * n)[:, :, shared]
            diffs_h.append(float(np.abs(cs - fs).max()))
        _order_table("spatial refinement (h halving):",
                     [base_el * 2 ** k for k in range(refinements + 1)],
                     diffs_h, out, lines)

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "convergence.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------- verify

def _read_solution(path: Path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            rows = [line.strip().split(",") for line in fh if line.strip()]
        data = np.array([[float(x) for x in row] for row in rows])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read solution file {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] != len(header):
        raise ConfigError(f"malformed solution file {path}")
    return header, data


def _columns(header, data, prefix):
    idx = [i for i, h in enumerate(header) if h.startswith(prefix) and h[len(prefix):].isdigit()]
    return data[:, idx] if idx else None


def _verify_fields(cfg, problem, core, u_samples, v_samples, out):
    """Recompute residuals from file data; return the list of failures."""
    failures = []
    driver = v_samples if v_samples is not None else u_samples
    traj = Trajectory(core.x_space, cfg.grid, driver)
    eta = np.array([core.parameter_memory.at_node(traj, k)
                    for k in range(cfg.grid.steps + 1)])
    xi = np.array([core.load_memory.at_node(traj, k)
                   for k in range(cfg.grid.steps + 1)])
    theta = Trajectory(core.theta_space, cfg.grid, np.hstack([eta, xi]))

    worst_vi = -np.inf
    for k in range(cfg.grid.steps + 1):
        node = _node_problem(core, eta[k], xi[k], core.f.node(k))
        worst_vi = max(worst_vi, vi_residual(driver[k], node,
                                             sampler_budget=2048, seed=cfg.seed + k))
    print(f"worst recomputed VI residual: {_g(worst_vi)}", file=out)
    if worst_vi > 1e-6:
        failures.append(f"VI residual {worst_vi:.3e} > 1e-06")

    nodes = np.arange(cfg.grid.steps + 1)
    membership = _membership_residuals(core, traj, theta, nodes, cfg.seed)
    worst_mem = max(membership.values())
    print(f"worst inclusion membership residual: {_g(worst_mem)}", file=out)
    if worst_mem > 1e-5:
        failures.append(f"membership residual {worst_mem:.3e} > 1e-05")

    for k in nodes:
        if not core.cone.contains(driver[k], tol=1e-9):
            failures.append(f"constraint violated at node {k}")
            break
    return failures, traj


def cmd_verify(cfg: RunConfig, out_dir: Path, out) -> int:
    problem, spec = _build(cfg)
    header, data = _read_solution(out_dir / "solution.csv")
    if data.shape[0] != cfg.grid.steps + 1:
        raise ConfigError("solution file does not match the configured time grid")
    u_samples = _columns(header, data, "u")
    v_samples = _columns(header, data, "v")
    if u_samples is None or u_samples.shape[1] != (spec.core.x_space.dim
                                                   if isinstance(spec, SweepingSpec)
                                                   else spec.x_space.dim):
        raise ConfigError("solution file does not match the configured problem size")

    core = _core_spec(spec)
    failures, traj = _verify_fields(cfg, problem, core, u_samples, v_samples, out)

    if isinstance(spec, SweepingSpec):
        v_traj = Trajectory(core.x_space, cfg.grid, v_samples)
        u_rec = integrate_velocity(v_traj, spec.u0)
        drift = float(np.abs(u_rec.samples - u_samples).max())
        print(f"displacement vs integrated velocity: {_g(drift)}", file=out)
        if drift > 1e-9:
            failures.append(f"displacement drift {drift:.3e} > 1e-09")

    if problem is not None:
        u_traj = Trajectory(problem.space, cfg.grid, u_samples)
        v_traj = (Trajectory(problem.space, cfg.grid, v_samples)
                  if v_samples is not None else None)
        stress = recover_stress(problem, u_traj, v_traj)
        for col, series in (("sigma_nu", stress.sigma_nu), ("sigma_tau", stress.sigma_tau)):
            if col in header and series is not None:
                gap = float(np.abs(data[:, header.index(col)] - series).max())
                print(f"{col} recomputed vs stored: {_g(gap)}", file=out)
                if gap > 1e-9:
                    failures.append(f"{col} mismatch {gap:.3e} > 1e-09")
        sol = ContactSolution(u=u_traj, v=v_traj, theta=traj, per_step_iterations=
                              data[:, header.index("iterations")].astype(int),
                              per_step_residuals=data[:, header.index("residual")],
                              converged=True, diagnostics={})
        report = contact_diagnostics(problem, sol, stress)
        worst = max(report.worst.values())
        print(f"contact law checks, worst residual: {_g(worst)}", file=out)
        if not report.ok(tol=1e-8):
            failures.append(f"contact diagnostics {worst:.3e} > 1e-08")
    else:
        if core.x_space.dim > _ORACLE_DIM_CAP or cfg.grid.steps > _ORACLE_STEP_CAP:
            raise ConfigError(
                f"oracle comparison needs dimension <= {_ORACLE_DIM_CAP} and "
                f"steps <= {_ORACLE_STEP_CAP}; shrink the instance to verify it")
        radius = 1.5 * max(1.0, float(np.abs(u_samples).max()))
        res = 241 if core.x_space.dim == 1 else 81
        ref = brute_inclusion(core, GridSearchConfig(radius=radius, resolution=res))
        gap = traj.sup_distance(ref)
        print(f"grid-search oracle gap: {_g(gap)}", file=out)
        if gap > 1e-3:
            failures.append(f"oracle gap {gap:.3e} > 1e-03")

    if failures:
        for f in failures:
            print("verify FAIL: " + f, file=out)
        return 2
    print("verify: all checks pass", file=out)
    return 0


# ---------------------------------------------------------------- entry

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sweepvi",
                                description="variational-inequality and sweeping-process solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name, doc in (("check", "audit assumptions and the smallness gate"),
                      ("run", "solve and write solution.csv + diagnostics.txt"),
                      ("convergence", "empirical dt/h refinement study"),
                      ("verify", "recompute residuals and oracle gaps from written files")):
        q = sub.add_parser(name, help=doc)
        q.add_argument("--config", required=True, help="path to the INI-style config")
        q.add_argument("--out", default="out", help="output directory (default: out)")
        q.add_argument("--tol", type=float, default=None, help="override solver tolerance")
        q.add_argument("--mode", choices=("time_marching", "global_picard"), default=None)
        q.add_argument("--seed", type=int, default=None, help="override sampling seed")
        q.add_argument("--force", action="store_true",
                       help="run even when the smallness gate fails")
        q.add_argument("--threads", type=int, default=1,
                       help="accepted for interface compatibility; runs are sequential")
        if name == "convergence":
            q.add_argument("--refinements", type=int, default=3,
                           help="number of halvings (>= 2)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = sys.stdout
    try:
        cfg = load_config(args.config)
        if args.tol is not None:
            cfg = replace(cfg, tol=args.tol)
        if args.mode is not None:
            cfg = replace(cfg, mode=args.mode)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.force:
            cfg = replace(cfg, force=True)
        out_dir = Path(args.out)
        if args.command == "check":
            return cmd_check(cfg, out)
        if args.command == "run":
            return cmd_run(cfg, out_dir, out)
        if args.command == "convergence":
            return cmd_convergence(cfg, args.refinements, out_dir, out)
        return cmd_verify(cfg, out_dir, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except SmallnessError as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return 2
    except AuditError as exc:
        print(f"gate failure: {exc}", file=sys.stderr)
        return 2
    except NonConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
