"""Residual checks, the pointwise control update, and multiplier recovery."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import parakkt
from parakkt import (
    KKTPoint,
    ResidualReport,
    SpaceTimeField,
    SpatialGrid,
    TimeGrid,
    constraint_boundary,
    constraint_boundary_field,
    control_update_field,
    discrete_objective,
    h_potential_audit,
    kkt_residuals,
    loads,
    pointwise_control_update,
    recover_multiplier_division,
    recover_multiplier_max,
    strongly_active,
)
from parakkt.kkt import FEASIBILITY_SLACK, active_threshold


def hand_spec():
    """Linear-reaction variant small enough to solve with pencil and paper."""
    text = parakkt.catalog.builtin_problem_text("tracking_box_1d")
    text = text.replace(
        "expr = y^3\ndf = 3*y^2\nddf = 6*y", "expr = 0\ndf = 0\nddf = 0"
    )
    text = text.replace(
        "expr = 0.5*(y - 0.8*sin(pi*x1))^2 + 0.05*u^2",
        "expr = 0.5*(y - 1)^2 + 0.05*u^2",
    )
    text = text.replace("dy = y - 0.8*sin(pi*x1)", "dy = y - 1")
    text = text.replace("expr = u - 0.4", "expr = u - 10")
    return loads(text)


def hand_point(spec):
    """Exact stationary quadruple on one interior node and one time step.

    With h = 1/2 the interior operator is the scalar 8, the step is tau = 1,
    and the optimality system reduces to rational arithmetic.
    """
    g = SpatialGrid(extents=(1.0,), nodes=(3,))
    tg = TimeGrid(n_levels=2, horizon=1.0)
    y = SpaceTimeField(np.array([[0.0], [10.0 / 91.0]]), g, tg)
    u = SpaceTimeField(np.array([[1000.0 / 819.0], [90.0 / 91.0]]), g, tg)
    phi = SpaceTimeField(np.array([[100.0 / 819.0], [9.0 / 91.0]]), g, tg)
    e = SpaceTimeField.zeros(g, tg)
    return KKTPoint(
        state=y,
        control=u,
        adjoint=phi,
        multiplier=e,
        objective=discrete_objective(spec, y, u),
    )


class TestResiduals:
    def test_hand_built_point_is_stationary(self):
        spec = hand_spec()
        rep = kkt_residuals(spec, hand_point(spec))
        for name in (
            "stat_res",
            "comp_res",
            "sign_viol",
            "feas_viol",
            "adjoint_res",
            "state_res",
        ):
            assert getattr(rep, name) <= 1e-13, name

    def test_control_perturbation_moves_the_right_residuals(self):
        spec = hand_spec()
        point = hand_point(spec)
        delta = 1e-3
        bumped = point.control.copy()
        bumped.values[1, 0] += delta
        moved = KKTPoint(
            state=point.state,
            control=bumped,
            adjoint=point.adjoint,
            multiplier=point.multiplier,
            objective=point.objective,
        )
        rep = kkt_residuals(spec, moved)
        assert rep.stat_res == pytest.approx(0.1 * delta, rel=1e-9)
        assert rep.state_res == pytest.approx(delta, rel=1e-9)
        assert rep.comp_res <= 1e-13

    def test_negative_multiplier_is_flagged(self):
        spec = hand_spec()
        point = hand_point(spec)
        e = point.multiplier.copy()
        e.values[1, 0] = -1e-6
        moved = KKTPoint(point.state, point.control, point.adjoint, e, point.objective)
        rep = kkt_residuals(spec, moved)
        assert rep.sign_viol == pytest.approx(1e-6, rel=1e-12)

    def test_recompute_matches_solver_report(self, tracking_bundle):
        spec, point, trace, report = tracking_bundle
        again = kkt_residuals(spec, point)
        for name in (
            "stat_res",
            "comp_res",
            "sign_viol",
            "feas_viol",
            "adjoint_res",
            "state_res",
        ):
            assert getattr(again, name) == getattr(report, name), name

    def test_report_text_roundtrip(self, tracking_bundle):
        _, _, _, report = tracking_bundle
        back = ResidualReport.from_text(report.to_text())
        assert back == report


class TestControlUpdate:
    def test_inactive_branch_worked_example(self):
        spec = parakkt.builtin_problem("tracking_box_1d")
        u, e = pointwise_control_update(spec, (0.5,), 0.5, 0.0, 0.02)
        assert u == pytest.approx(0.2, abs=1e-14)
        assert e == 0.0

    def test_active_branch_worked_example(self):
        spec = parakkt.builtin_problem("tracking_box_1d")
        u, e = pointwise_control_update(spec, (0.5,), 0.5, 0.0, 0.06)
        assert u == pytest.approx(0.4, abs=1e-12)
        assert e == pytest.approx(0.02, abs=1e-12)

    def test_cubic_constraint_worked_examples(self):
        spec = parakkt.builtin_problem("example31_poly")
        u, e = pointwise_control_update(spec, (0.5,), 0.5, 1.0, -0.1)
        assert u == pytest.approx(-1.0, abs=1e-12)
        assert e == 0.0
        u, e = pointwise_control_update(spec, (0.5,), 0.5, 1.0, 0.1)
        assert u == pytest.approx(0.0, abs=1e-12)
        assert e == pytest.approx(0.05, abs=1e-12)

    @pytest.mark.parametrize("name", ["tracking_box_1d", "example31_poly"])
    @given(
        phi=st.floats(-5.0, 5.0, allow_nan=False),
        y=st.floats(-2.0, 2.0, allow_nan=False),
        x=st.floats(0.05, 0.95, allow_nan=False),
        t=st.floats(0.0, 1.0, allow_nan=False),
    )
    def test_update_satisfies_first_order_conditions(self, name, phi, y, x, t):
        spec = parakkt.builtin_problem(name)
        u, e = pointwise_control_update(spec, (x,), t, y, phi)
        g = float(spec.constraint.eval(x1=x, t=t, y=y, u=u))
        gu = float(spec.constraint.du(x1=x, t=t, y=y, u=u))
        lu = float(spec.cost.du(x1=x, t=t, y=y, u=u))
        assert e >= 0.0
        assert g <= FEASIBILITY_SLACK
        assert abs(e * g) <= 1e-10 * (1.0 + abs(e))
        assert abs(lu - phi + e * gu) <= 1e-9 * (1.0 + abs(phi))

    def test_field_update_matches_pointwise(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        grid = point.state.grid
        timegrid = point.state.timegrid
        u_f, e_f, bound, constrained = control_update_field(
            spec, grid, timegrid, point.state.values, point.adjoint.values
        )
        xs = grid.interior_coords
        for m in (0, len(timegrid.times) // 2, len(timegrid.times) - 1):
            t = timegrid.times[m]
            for i in range(0, grid.n_interior, 7):
                u_p, e_p = pointwise_control_update(
                    spec, tuple(xs[i]), t, point.state.values[m, i],
                    point.adjoint.values[m, i],
                )
                assert u_f[m, i] == pytest.approx(u_p, abs=1e-12)
                assert e_f[m, i] == pytest.approx(e_p, abs=1e-12)
        assert constrained.dtype == bool
        np.testing.assert_allclose(
            u_f[constrained], bound[constrained], rtol=0, atol=1e-12
        )
        assert np.all(e_f[~constrained] == 0.0)

    def test_boundary_field_matches_pointwise(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        grid = point.state.grid
        b = constraint_boundary_field(
            spec, grid, point.state.timegrid, point.state.values
        )
        x0 = tuple(grid.interior_coords[3])
        direct = constraint_boundary(spec, x0, 0.5, point.state.values[32, 3])
        assert b[32, 3] == pytest.approx(direct, abs=1e-12)
        np.testing.assert_allclose(b, 0.4, atol=1e-9)


class TestMultiplierRecovery:
    def test_max_form_reproduces_solver_multiplier(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        rec = recover_multiplier_max(spec, point.state, point.adjoint)
        np.testing.assert_allclose(
            rec.values, point.multiplier.values, rtol=0, atol=1e-13
        )

    def test_division_form_agrees_on_strong_set(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        div = recover_multiplier_division(
            spec, point.state, point.control, point.adjoint
        )
        mask = strongly_active(point.multiplier)
        assert np.any(mask)
        diff = np.abs(div.values - point.multiplier.values)[mask]
        assert float(np.max(diff)) <= 1e-8

    def test_strongly_active_uses_threshold(self, tracking_bundle):
        _, point, _, _ = tracking_bundle
        thr = active_threshold(point.multiplier)
        assert thr > 0.0
        mask = strongly_active(point.multiplier)
        np.testing.assert_array_equal(mask, point.multiplier.values > thr)


class TestPotentialAudit:
    def test_field_is_reaction_slope_along_state(self, tracking_bundle):
        spec, point, _, _ = tracking_bundle
        audit = h_potential_audit(spec, point.state, point.control)
        np.testing.assert_allclose(
            audit.field.values, 3.0 * point.state.values**2, rtol=1e-12, atol=1e-15
        )
        assert audit.lower == float(np.min(audit.field.values))
        assert audit.upper == float(np.max(audit.field.values))
