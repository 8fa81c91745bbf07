"""Second-order diagnostics: critical directions, curvature, growth."""

import numpy as np
import pytest

from parakkt import (
    legendre_min,
    linearized_state,
    quadratic_form,
    quadratic_growth_probe,
    sample_critical_direction,
    strongly_active,
)
from parakkt.grids import objective_weights


class TestCriticalDirection:
    def test_direction_satisfies_cone_conditions(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        d = sample_critical_direction(spec, point, seed=0)
        assert d.c1_satisfied
        assert abs(d.c1_value) <= 1e-10
        assert d.c2_residual <= 1e-11
        assert d.c3_violation == 0.0

    def test_direction_vanishes_on_strong_set(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        d = sample_critical_direction(spec, point, seed=0)
        mask = strongly_active(point.multiplier)
        assert np.all(d.control_direction.values[mask] == 0.0)
        assert float(np.max(np.abs(d.control_direction.values))) > 0.0

    def test_state_direction_solves_linearized_equation(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        d = sample_critical_direction(spec, point, seed=0)
        again = linearized_state(spec, point, d.control_direction)
        np.testing.assert_allclose(
            again.values, d.state_direction.values, rtol=0, atol=1e-12
        )

    def test_seed_controls_the_sample(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        a = sample_critical_direction(spec, point, seed=0)
        b = sample_critical_direction(spec, point, seed=0)
        c = sample_critical_direction(spec, point, seed=1)
        np.testing.assert_array_equal(
            a.control_direction.values, b.control_direction.values
        )
        assert not np.array_equal(
            a.control_direction.values, c.control_direction.values
        )


class TestQuadraticForm:
    def test_curvature_dominates_control_mass(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        d = sample_critical_direction(spec, point, seed=0)
        q = quadratic_form(spec, point, d)
        w = objective_weights(point.control.grid, point.control.timegrid)
        mass = float(np.sum(w.values * d.control_direction.values**2))
        assert q >= 0.5 * spec.gamma1 * mass
        assert q > 0.0

    def test_zero_direction_gives_zero(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        d = sample_critical_direction(spec, point, seed=0)
        zeroed = type(d)(
            control_direction=d.control_direction.copy(),
            state_direction=d.state_direction.copy(),
            c1_value=0.0,
            c1_satisfied=True,
            c2_residual=0.0,
            c3_violation=0.0,
        )
        zeroed.control_direction.values[:] = 0.0
        zeroed.state_direction.values[:] = 0.0
        assert quadratic_form(spec, point, zeroed) == 0.0


class TestSmallestEigenvalue:
    def test_tracking_floor_is_the_control_weight(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        value, location = legendre_min(spec, point)
        assert value == pytest.approx(0.1, abs=1e-12)
        level, node = location
        assert 0 <= level < point.control.values.shape[0]
        assert 0 <= node < point.control.values.shape[1]

    def test_feasible_problem_floor(self, feasible_bundle):
        spec, point, _, _ = feasible_bundle
        value, _ = legendre_min(spec, point)
        assert value == pytest.approx(0.1, abs=1e-12)


class TestGrowthProbe:
    def test_every_trial_sees_quadratic_growth(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        probe = quadratic_growth_probe(spec, point, n_trials=50, radius=0.01, seed=0)
        assert len(probe.rows) == 50
        assert probe.n_feasible == 50
        ratios = [row[1] for row in probe.rows]
        assert min(ratios) >= 0.0
        assert probe.kappa_hat >= 0.04

    def test_probe_is_deterministic(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        a = quadratic_growth_probe(spec, point, n_trials=8, radius=0.01, seed=3)
        b = quadratic_growth_probe(spec, point, n_trials=8, radius=0.01, seed=3)
        assert a.kappa_hat == b.kappa_hat
        assert a.rows == b.rows

    def test_radius_controls_perturbation_size(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        small = quadratic_growth_probe(spec, point, n_trials=5, radius=1e-3, seed=0)
        large = quadratic_growth_probe(spec, point, n_trials=5, radius=1e-2, seed=0)
        assert max(r[2] for r in small.rows) < max(r[2] for r in large.rows)
