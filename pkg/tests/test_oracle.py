"""Stacked dense NLP used as an independent cross-check."""

import numpy as np
import pytest

import parakkt
from parakkt import (
    OptimizerOptions,
    SpatialGrid,
    TimeGrid,
    compare_multipliers,
    discretize_to_nlp,
    pack_point,
    solve_nlp_active_set,
    solve_ocp,
    unpack_solution,
)
from parakkt.exceptions import OracleError
from parakkt.oracle import STATIONARITY_TOL


@pytest.fixture(scope="module")
def small_tracking():
    spec = parakkt.builtin_problem("tracking_box_1d")
    grid = SpatialGrid(extents=spec.extents, nodes=(5,))
    timegrid = TimeGrid(n_levels=5, horizon=spec.horizon)
    instance = discretize_to_nlp(spec, grid, timegrid)
    point, trace, _ = solve_ocp(spec, grid, timegrid, OptimizerOptions(tol_kkt=1e-11))
    assert trace.converged
    sol = solve_nlp_active_set(instance)
    return spec, grid, timegrid, instance, point, sol


class TestInstance:
    def test_dimensions_and_meta(self, small_tracking):
        _, grid, timegrid, instance, _, _ = small_tracking
        n_steps = timegrid.n_levels - 1
        assert instance.n_vars == 2 * grid.n_interior * n_steps
        assert instance.meta["n_interior"] == grid.n_interior
        assert instance.meta["n_steps"] == n_steps
        assert instance.meta["omega"] == pytest.approx(
            timegrid.tau * grid.spacing[0], rel=1e-15
        )

    def test_size_guard(self):
        spec = parakkt.builtin_problem("tracking_box_1d")
        grid = SpatialGrid(extents=spec.extents, nodes=(33,))
        timegrid = TimeGrid(n_levels=65, horizon=spec.horizon)
        with pytest.raises(OracleError, match="above the 2000 guard"):
            discretize_to_nlp(spec, grid, timegrid)

    def test_objective_matches_solver_objective(self, small_tracking):
        _, _, _, instance, point, _ = small_tracking
        z = pack_point(instance, point)
        assert instance.objective(z) == pytest.approx(point.objective, rel=1e-12)


class TestActiveSetSolve:
    def test_converges_to_certified_tolerances(self, small_tracking):
        _, _, _, _, _, sol = small_tracking
        assert sol.converged
        assert sol.stationarity_inf <= STATIONARITY_TOL
        assert sol.feas_eq_inf <= 1e-9
        assert sol.feas_ineq <= 1e-9
        assert sol.complementarity <= 1e-10
        assert np.all(sol.mu >= 0.0)

    def test_solution_matches_solver_point(self, small_tracking):
        _, _, _, instance, point, sol = small_tracking
        y, u, phi, e = unpack_solution(instance, sol)
        assert y.shape == u.shape == (4, 3)
        np.testing.assert_allclose(y, point.state.values[1:], atol=1e-7)
        np.testing.assert_allclose(u, point.control.values[1:], atol=1e-7)

    def test_warm_start_from_solver_point(self, small_tracking):
        _, _, _, instance, point, cold = small_tracking
        warm = solve_nlp_active_set(instance, z0=pack_point(instance, point))
        assert warm.converged
        assert warm.n_set_changes <= cold.n_set_changes
        assert warm.objective == pytest.approx(cold.objective, rel=1e-10)

    def test_deterministic(self, small_tracking):
        _, _, _, instance, _, _ = small_tracking
        a = solve_nlp_active_set(instance)
        b = solve_nlp_active_set(instance)
        np.testing.assert_array_equal(a.z, b.z)
        np.testing.assert_array_equal(a.working_set, b.working_set)

    def test_inactive_problem_has_empty_working_set(self):
        spec = parakkt.builtin_problem("strictly_feasible_1d")
        grid = SpatialGrid(extents=spec.extents, nodes=(5,))
        timegrid = TimeGrid(n_levels=5, horizon=spec.horizon)
        sol = solve_nlp_active_set(discretize_to_nlp(spec, grid, timegrid))
        assert sol.converged
        assert len(sol.working_set) == 0
        assert np.all(sol.mu == 0.0)


class TestMultiplierCorrespondence:
    def test_scaled_multipliers_agree(self, small_tracking):
        spec, _, _, instance, point, sol = small_tracking
        cmp = compare_multipliers(instance, sol, point)
        assert cmp.scaled
        assert cmp.adjoint_inf <= 1e-6
        assert cmp.multiplier_inf <= 1e-6
        assert abs(cmp.objective_gap) <= 1e-9

    def test_raw_multipliers_differ_by_the_cell_volume(self, small_tracking):
        """Without the volume rescale the two conventions must not agree."""
        spec, _, _, instance, point, sol = small_tracking
        raw = compare_multipliers(instance, sol, point, apply_weight_scaling=False)
        assert not raw.scaled
        assert raw.adjoint_inf > 1e-2

    def test_l2_distances_are_also_small(self, small_tracking):
        spec, _, _, instance, point, sol = small_tracking
        cmp = compare_multipliers(instance, sol, point)
        assert cmp.adjoint_l2 <= 1e-6
        assert cmp.multiplier_l2 <= 1e-6
