"""Outer solver: fixed-point control updates safeguarded by a line search.

Each sweep solves the state forward, the adjoint backward, and then the
pointwise constrained minimization at every node, which yields both a
candidate control and a candidate multiplier.  The move toward the candidate
is a strict descent direction for the reduced objective (strong convexity in
u guarantees it), so an Armijo backtracking step keeps the sweep globally
convergent; near the solution the full step is accepted and the iteration
inherits the contraction of the fixed point.

The objective, the duality pairing, and the directional derivative all use
the uniform objective weights, under which the backward sweep is the exact
transpose of the forward one; the reported gradient is therefore the exact
derivative of the reported objective, not an approximation of it.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .grids import SpaceTimeField, SpatialGrid, TimeGrid, objective_weights
from .kkt import (
    KKTPoint,
    ResidualReport,
    constraint_boundary_field,
    control_update_field,
    kkt_residuals,
)
from .parabolic import SolverOptions, solve_adjoint, solve_state
from .problem import ProblemSpec, eval_scalar_map

__all__ = [
    "OptimizerOptions",
    "SolveTrace",
    "discrete_objective",
    "reduced_gradient",
    "recompute_certificate",
    "solve_ocp",
]

TRACE_HEADER = "iter,J,step,stat_res,comp_res,feas_viol,active_count"


@dataclass(frozen=True)
class OptimizerOptions:
    max_outer: int = 200
    tol_kkt: float = 1e-8
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    u_init: float = 0.0
    solver: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class SolveTrace:
    rows: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def append(self, it, objective, step, stat, comp, feas, active):
        self.rows.append((it, objective, step, stat, comp, feas, active))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write(TRACE_HEADER + "\n")
        for it, objective, step, stat, comp, feas, active in self.rows:
            out.write(
                "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n"
                % (it, objective, step, stat, comp, feas, active)
            )
        return out.getvalue()


def discrete_objective(spec: ProblemSpec, state: SpaceTimeField,
                       control: SpaceTimeField) -> float:
    """The weighted running cost over the cylinder (initial level excluded)."""
    w = objective_weights(state.grid, state.timegrid)
    lvals = eval_scalar_map(spec.cost.eval, state.grid, state.timegrid,
                            state.values, control.values)
    return float(np.sum(w.values * lvals))


def reduced_gradient(spec: ProblemSpec, state: SpaceTimeField,
                     control: SpaceTimeField,
                     adjoint: SpaceTimeField) -> SpaceTimeField:
    """Derivative of the reduced objective with respect to the control.

    Equal to L_u - phi nodewise.  On the levels the objective weights see
    this is the exact discrete derivative; the value it also assigns to the
    initial level is the same formula used as a diagnostic, since that level
    carries no weight.
    """
    l_u = eval_scalar_map(spec.cost.du, state.grid, state.timegrid,
                          state.values, control.values)
    return SpaceTimeField(l_u - adjoint.values, state.grid, state.timegrid)


def recompute_certificate(spec: ProblemSpec, state: SpaceTimeField,
                          control: SpaceTimeField,
                          solver: SolverOptions | None = None,
                          max_sweeps: int = 100):
    """Rebuild (adjoint, multiplier) from a frozen state/control pair.

    Sweeps the backward solve and the boundary-based multiplier formula until
    the multiplier stops moving.  The result depends only on the inputs, so
    two calls on the same pair agree to rounding regardless of when or where
    the pair was produced.
    """
    from .kkt import recover_multiplier_max

    solver = solver or SolverOptions()
    grid, timegrid = state.grid, state.timegrid
    e = SpaceTimeField.zeros(grid, timegrid)
    adjoint = None
    for _ in range(max_sweeps):
        adjoint = solve_adjoint(spec, state, control, e, solver)
        e_next = recover_multiplier_max(spec, state, adjoint)
        gap = float(np.max(np.abs(e_next.values - e.values)))
        e = e_next
        if gap <= 1e-14 * (1.0 + float(np.max(np.abs(e.values)))):
            break
    return adjoint, e


def _project_feasible(spec, grid, timegrid, u_values, y_values):
    boundary = constraint_boundary_field(spec, grid, timegrid, y_values)
    return np.minimum(u_values, boundary)


def _restored_trial(spec, grid, timegrid, u_values, solver):
    """State solve plus feasibility restoration; returns (u, state, objective)."""
    u = u_values
    state, _ = solve_state(spec, SpaceTimeField(u, grid, timegrid), solver)
    for _ in range(2):
        projected = _project_feasible(spec, grid, timegrid, u, state.values)
        if np.array_equal(projected, u):
            break
        u = projected
        state, _ = solve_state(spec, SpaceTimeField(u, grid, timegrid), solver)
    control = SpaceTimeField(u, grid, timegrid)
    return control, state, discrete_objective(spec, state, control)


def solve_ocp(spec: ProblemSpec, grid: SpatialGrid, timegrid: TimeGrid,
              options: OptimizerOptions | None = None):
    """Solve the control problem on the given grids.

    Returns ``(point, trace, report)`` where the point is the best quadruple
    found, the trace logs one row per outer iteration, and the report holds
    the recomputed residuals of the returned point.  Non-convergence is not
    an exception: the trace says so and the report shows how far it got.
    """
    options = options or OptimizerOptions()
    solver = options.solver
    w = objective_weights(grid, timegrid)
    trace = SolveTrace()

    u_values = np.full((timegrid.n_levels, grid.n_interior),
                       float(options.u_init))
    control, state, objective = _restored_trial(spec, grid, timegrid,
                                                u_values, solver)
    e_values = np.zeros_like(control.values)

    adjoint = None
    e_new = e_values
    for it in range(1, options.max_outer + 1):
        adjoint = solve_adjoint(spec, state, control,
                                SpaceTimeField(e_values, grid, timegrid),
                                solver)
        u_new, e_new, _, constrained = control_update_field(
            spec, grid, timegrid, state.values, adjoint.values
        )
        active = int(np.count_nonzero(constrained))

        l_u = eval_scalar_map(spec.cost.du, grid, timegrid, state.values,
                              control.values)
        g_u = eval_scalar_map(spec.constraint.du, grid, timegrid,
                              state.values, control.values)
        g = eval_scalar_map(spec.constraint.eval, grid, timegrid,
                            state.values, control.values)
        stat = float(np.max(np.abs(l_u - adjoint.values + e_new * g_u)))
        comp = float(np.max(np.abs(e_new * g)))
        feas = max(0.0, float(np.max(g)))
        sign = max(0.0, -float(np.min(e_new)))

        if max(stat, comp, feas, sign) <= options.tol_kkt:
            trace.append(it, objective, 0.0, stat, comp, feas, active)
            # Refresh the adjoint with the candidate multiplier before
            # certifying, so the recursion the report checks is the one that
            # produced the returned fields.
            adjoint = solve_adjoint(spec, state, control,
                                    SpaceTimeField(e_new, grid, timegrid),
                                    solver)
            _, e_cert, _, _ = control_update_field(
                spec, grid, timegrid, state.values, adjoint.values
            )
            point = KKTPoint(state, control, adjoint,
                             SpaceTimeField(e_cert, grid, timegrid), objective)
            report = kkt_residuals(spec, point)
            if report.kkt_error <= options.tol_kkt:
                trace.converged = True
                trace.message = f"converged in {it} iterations"
                return point, trace, report
            e_values = e_cert
            continue

        direction = u_new - control.values
        slope = float(np.sum(w.values * (l_u - adjoint.values) * direction))
        step = 1.0
        accepted = None
        fallback = None
        for _ in range(options.max_backtracks + 1):
            trial_u = control.values + step * direction
            trial = _restored_trial(spec, grid, timegrid, trial_u, solver)
            if slope < 0 and trial[2] <= objective + options.armijo_c1 * step * slope:
                accepted = (step, trial)
                break
            if fallback is None and trial[2] <= objective + 1e-14 * (1 + abs(objective)):
                fallback = (step, trial)
            step *= options.backtrack_factor
        if accepted is None:
            accepted = fallback
        if accepted is None:
            trace.append(it, objective, 0.0, stat, comp, feas, active)
            trace.message = (
                f"line search failed at iteration {it}; no step reduced the "
                "objective"
            )
            break
        step, (control, state, objective) = accepted
        e_values = e_new
        trace.append(it, objective, step, stat, comp, feas, active)
    else:
        trace.message = f"stopped after {options.max_outer} iterations"

    if adjoint is None:
        adjoint = solve_adjoint(spec, state, control,
                                SpaceTimeField(e_values, grid, timegrid),
                                solver)
    point = KKTPoint(state, control, adjoint,
                     SpaceTimeField(e_new, grid, timegrid), objective)
    report = kkt_residuals(spec, point)
    return point, trace, report
