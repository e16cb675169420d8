import numpy as np
import pytest

from sweepvi import (
    ConstraintCone,
    DimensionMismatchError,
    HilbertSpace,
    HomogeneousFunctional,
    InclusionSpec,
    IneligibleOperatorError,
    MonotoneOperator,
    NonConvergenceError,
    SmallnessError,
    TimeGrid,
    Trajectory,
    VolterraKernel,
    apply_coupling_map,
    build_inclusion_variant,
    check_smallness,
    identity_operator,
    solve_inclusion,
    solve_intermediate,
    stability_gap_violation,
    volterra_operator,
    zero_operator,
)

X = HilbertSpace(1)
Y = HilbertSpace(1)
FREE = ConstraintCone.whole_space(X)


def decay_spec(steps, horizon=1.0):
    """2 u(t) + 0.5 int_0^t u = 1, hence u(t) = e^{-t/4} / 2."""
    grid = TimeGrid(horizon, steps)
    kern = VolterraKernel(scalar_profile=lambda t: 0.5, matrix=np.eye(1), symmetric=True)
    return build_inclusion_variant(
        "parameter_free",
        cone=FREE,
        operator=MonotoneOperator.from_matrix(X, [[2.0]]),
        functional=HomogeneousFunctional.zero(X),
        f=Trajectory.constant(X, grid, [1.0]),
        grid=grid,
        load_memory=volterra_operator(kern, grid, X),
    )


def feedback_spec(weight=0.8, stiffness=4.0, steps=8):
    """State feedback eta = u with j = weight * eta * max(u, 0)."""
    grid = TimeGrid(1.0, steps)
    return build_inclusion_variant(
        "state_parameter",
        cone=FREE,
        operator=MonotoneOperator.from_matrix(X, [[stiffness]]),
        functional=HomogeneousFunctional.positive_part(X, Y, weights=[weight], indices=[0]),
        f=Trajectory.constant(X, grid, [1.0]),
        grid=grid,
    )


class TestSmallnessReport:
    def test_gate_arithmetic(self):
        rep = check_smallness(feedback_spec())
        assert rep.alpha == pytest.approx(0.8)
        assert rep.l_parameter == 1.0
        assert rep.l_load == 0.0
        assert rep.m == pytest.approx(4.0)
        assert rep.lhs == pytest.approx(1.8)
        assert rep.ratio == pytest.approx(0.45)
        assert rep.passed

    def test_describe_mentions_verdict(self):
        assert "[pass]" in check_smallness(feedback_spec()).describe()

    def test_memory_pair_gate_passes_for_free(self):
        rep = check_smallness(decay_spec(8))
        assert rep.lhs == 0.0
        assert rep.passed


class TestSpecValidation:
    def test_load_on_wrong_grid_rejected(self):
        grid = TimeGrid(1.0, 8)
        other = TimeGrid(1.0, 9)
        kern = VolterraKernel(scalar_profile=lambda t: 0.5, matrix=np.eye(1), symmetric=True)
        with pytest.raises(DimensionMismatchError):
            InclusionSpec(
                x_space=X, y_space=Y, cone=FREE,
                operator=MonotoneOperator.from_matrix(X, [[2.0]]),
                functional=HomogeneousFunctional.zero(X),
                parameter_memory=zero_operator(Y),
                load_memory=volterra_operator(kern, grid, X),
                f=Trajectory.constant(X, other, [1.0]),
                grid=grid,
            )

    def test_memory_with_wrong_output_dimension_rejected(self):
        grid = TimeGrid(1.0, 4)
        wide = HilbertSpace(2)
        with pytest.raises(DimensionMismatchError):
            InclusionSpec(
                x_space=X, y_space=Y, cone=FREE,
                operator=MonotoneOperator.from_matrix(X, [[2.0]]),
                functional=HomogeneousFunctional.zero(X),
                parameter_memory=zero_operator(wide),  # Y is 1-dimensional
                load_memory=zero_operator(X),
                f=Trajectory.constant(X, grid, [1.0]),
                grid=grid,
            )

    def test_intermediate_solve_checks_theta_width(self):
        spec = decay_spec(4)
        narrow = Trajectory.zeros(X, spec.grid)
        with pytest.raises(DimensionMismatchError):
            solve_intermediate(narrow, spec)


class TestBuilderVariants:
    def test_memory_pair_requires_strict_history(self):
        grid = TimeGrid(1.0, 4)
        with pytest.raises(IneligibleOperatorError):
            build_inclusion_variant(
                "memory_pair",
                cone=FREE,
                operator=MonotoneOperator.from_matrix(X, [[2.0]]),
                functional=HomogeneousFunctional.zero(X),
                f=Trajectory.constant(X, grid, [1.0]),
                grid=grid,
                parameter_memory=identity_operator(),  # l = 1
                load_memory=zero_operator(X),
            )

    def test_memory_pair_requires_both_memories(self):
        grid = TimeGrid(1.0, 4)
        with pytest.raises(ValueError):
            build_inclusion_variant(
                "memory_pair",
                cone=FREE,
                operator=MonotoneOperator.from_matrix(X, [[2.0]]),
                functional=HomogeneousFunctional.zero(X),
                f=Trajectory.constant(X, grid, [1.0]),
                grid=grid,
                load_memory=zero_operator(X),
            )

    def test_state_parameter_rejects_parameter_free_functional(self):
        grid = TimeGrid(1.0, 4)
        with pytest.raises(ValueError):
            build_inclusion_variant(
                "state_parameter",
                cone=FREE,
                operator=MonotoneOperator.from_matrix(X, [[4.0]]),
                functional=HomogeneousFunctional.zero(X),
                f=Trajectory.constant(X, grid, [1.0]),
                grid=grid,
            )

    def test_state_parameter_enforces_tight_gate_at_build_time(self):
        # alpha + 1 = 3 >= m = 1
        with pytest.raises(SmallnessError):
            feedback_spec(weight=2.0, stiffness=1.0)

    def test_parameter_free_rejects_parameter_dependent_functional(self):
        grid = TimeGrid(1.0, 4)
        jp = HomogeneousFunctional.positive_part(X, Y, weights=[1.0], indices=[0])
        with pytest.raises(ValueError):
            build_inclusion_variant(
                "parameter_free",
                cone=FREE,
                operator=MonotoneOperator.from_matrix(X, [[2.0]]),
                functional=jp,
                f=Trajectory.constant(X, grid, [1.0]),
                grid=grid,
            )

    def test_unknown_variant_rejected(self):
        grid = TimeGrid(1.0, 4)
        with pytest.raises(ValueError):
            build_inclusion_variant(
                "surprise",
                cone=FREE,
                operator=MonotoneOperator.from_matrix(X, [[2.0]]),
                functional=HomogeneousFunctional.zero(X),
                f=Trajectory.constant(X, grid, [1.0]),
                grid=grid,
            )


class TestDecoupledLayer:
    def test_no_memory_reduces_to_node_by_node_inversion(self):
        grid = TimeGrid(1.0, 6)
        spec = build_inclusion_variant(
            "parameter_free",
            cone=FREE,
            operator=MonotoneOperator.from_matrix(X, [[2.0]]),
            functional=HomogeneousFunctional.zero(X),
            f=Trajectory(X, grid, (1.0 + grid.nodes)[:, None]),
            grid=grid,
        )
        sol = solve_inclusion(spec, tol=1e-12)
        np.testing.assert_allclose(sol.u.samples[:, 0], (1.0 + grid.nodes) / 2.0, atol=1e-11)

    def test_stability_gap_never_violated(self):
        spec = feedback_spec()
        rng = np.random.default_rng(3)
        th1 = Trajectory(spec.theta_space, spec.grid, np.abs(rng.normal(size=(9, 2))))
        th2 = Trajectory(spec.theta_space, spec.grid, np.abs(rng.normal(size=(9, 2))))
        assert stability_gap_violation(spec, th1, th2, tol=1e-12) <= 1e-10

    def test_coupling_map_contracts_at_initial_node(self):
        # at t = 0 no history has accumulated, so the one-step
        # contraction factor is bounded by the gate ratio alone
        spec = feedback_spec()
        rep = check_smallness(spec)
        rng = np.random.default_rng(3)
        th1 = Trajectory(spec.theta_space, spec.grid, np.abs(rng.normal(size=(9, 2))))
        th2 = Trajectory(spec.theta_space, spec.grid, np.abs(rng.normal(size=(9, 2))))
        p1, _, _ = apply_coupling_map(spec, th1, tol=1e-12)
        p2, _, _ = apply_coupling_map(spec, th2, tol=1e-12)
        d_in = spec.theta_space.distance(th1.samples[0], th2.samples[0])
        d_out = spec.theta_space.distance(p1.samples[0], p2.samples[0])
        assert d_out / d_in <= rep.ratio + 0.05


class TestSolveInclusion:
    def test_volterra_decay_matches_closed_form(self):
        spec = decay_spec(64)
        sol = solve_inclusion(spec, tol=1e-12)
        exact = 0.5 * np.exp(-0.25 * spec.grid.nodes)
        assert sol.converged
        assert np.max(np.abs(sol.u.samples[:, 0] - exact)) < 2e-7

    def test_discretization_error_is_second_order(self):
        errs = []
        for steps in (32, 64):
            spec = decay_spec(steps)
            sol = solve_inclusion(spec, tol=1e-12)
            exact = 0.5 * np.exp(-0.25 * spec.grid.nodes)
            errs.append(np.max(np.abs(sol.u.samples[:, 0] - exact)))
        assert errs[0] == pytest.approx(4.951524213980818e-07, rel=1e-6)
        assert errs[0] / errs[1] == pytest.approx(4.0, abs=0.6)

    def test_marching_and_global_modes_agree(self):
        spec = decay_spec(24)
        a = solve_inclusion(spec, tol=1e-12, mode="time_marching")
        b = solve_inclusion(spec, tol=1e-12, mode="global_picard")
        assert np.max(np.abs(a.u.samples - b.u.samples)) <= 5e-12

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            solve_inclusion(decay_spec(4), mode="sideways")

    def test_state_feedback_fixed_point(self):
        # eta = u and 4u - 1 + 0.8 eta = 0 on u > 0 gives u = 1 / 4.8
        sol = solve_inclusion(feedback_spec(), tol=1e-11)
        np.testing.assert_allclose(sol.u.samples, 1.0 / 4.8, atol=1e-10)
        eta, xi = feedback_spec().split_theta(sol.theta.samples)
        np.testing.assert_allclose(eta, sol.u.samples, atol=1e-9)
        assert not xi.any()

    def test_membership_residuals_certify_the_inclusion(self):
        sol = solve_inclusion(feedback_spec(), tol=1e-11)
        assert max(sol.diagnostics["membership"].values()) <= 1e-7

    def test_vi_residuals_reported_per_node(self):
        spec = decay_spec(16)
        sol = solve_inclusion(spec, tol=1e-12)
        assert sol.per_step_residuals.shape == (17,)
        assert np.all(sol.per_step_residuals <= 1e-8)


class TestGateAndForce:
    @staticmethod
    def cycling_spec(steps=8):
        # weight 2 with m = 1 fails the gate, and the state feedback
        # genuinely cycles: eta 0 -> u 1 -> eta 1 -> u 0 -> ...
        grid = TimeGrid(1.0, steps)
        jp = HomogeneousFunctional.positive_part(X, Y, weights=[2.0], indices=[0])
        return InclusionSpec(
            x_space=X, y_space=Y, cone=FREE,
            operator=MonotoneOperator.from_matrix(X, [[1.0]]),
            functional=jp,
            parameter_memory=identity_operator(tag="state_feedback"),
            load_memory=zero_operator(X),
            f=Trajectory.constant(X, grid, [1.0]),
            grid=grid,
        )

    def test_failed_gate_raises_without_force(self):
        with pytest.raises(SmallnessError):
            solve_inclusion(self.cycling_spec(), tol=1e-10)

    def test_forced_run_records_the_failure_instead_of_hiding_it(self):
        sol = solve_inclusion(self.cycling_spec(), tol=1e-10, force=True, max_inner=40)
        assert not sol.converged
        assert sol.diagnostics["forced"]
        assert sol.diagnostics["inner_iterations"][0] == 40
        assert not sol.smallness.passed
