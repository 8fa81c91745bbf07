"""Pointwise KKT machinery: control updates, multiplier recovery, residuals.

Everything here operates node by node: because the running cost is strongly
convex in u and the constraint is strictly increasing in u, the minimizer of
the pointwise Lagrangian and the constraint boundary are well-defined roots
of scalar monotone functions, which we compute with a safeguarded bracketed
Newton iteration vectorized over the whole space-time cylinder.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import AuditError, ConfigError, HypothesisViolationError, SolveError
from .grids import SpaceTimeField, SpatialGrid, TimeGrid, assemble_operator
from .problem import ProblemSpec, eval_scalar_map

__all__ = [
    "KKTPoint",
    "ResidualReport",
    "HPotentialAudit",
    "constraint_boundary",
    "constraint_boundary_field",
    "pointwise_control_update",
    "control_update_field",
    "recover_multiplier_division",
    "recover_multiplier_max",
    "h_potential_audit",
    "kkt_residuals",
    "strongly_active",
    "active_threshold",
]

_MAX_BRACKET_DOUBLINGS = 60
_MAX_ROOT_ITER = 200

MULTIPLIER_SIGN_SLACK = 1e-10
FEASIBILITY_SLACK = 1e-8


def _b(val, shape):
    return np.broadcast_to(np.asarray(val, dtype=float), shape)


def _cylinder_env(grid: SpatialGrid, timegrid: TimeGrid) -> dict:
    env = {k: v[None, :] for k, v in grid.spatial_env().items()}
    env["t"] = timegrid.times[:, None]
    return env


def _monotone_root(fn, dfn, u0: np.ndarray, what: str) -> np.ndarray:
    """Roots of a per-point strictly increasing function, vectorized.

    Brackets each root by doubling steps away from the start value, then
    refines with Newton steps that fall back to bisection whenever they leave
    the bracket.  Convergence is by bracket width at machine precision.
    """
    shape = u0.shape
    u = np.array(u0, dtype=float)
    v = _b(fn(u), shape).copy()
    if not np.all(np.isfinite(v)):
        raise HypothesisViolationError(f"{what}: non-finite evaluation at start")
    lo = u.copy()
    hi = u.copy()
    vlo = v.copy()
    vhi = v.copy()
    step = np.ones(shape)
    need_lo = vlo > 0
    need_hi = vhi < 0
    for _ in range(_MAX_BRACKET_DOUBLINGS):
        if not (need_lo.any() or need_hi.any()):
            break
        lo = np.where(need_lo, lo - step, lo)
        hi = np.where(need_hi, hi + step, hi)
        vlo = np.where(need_lo, _b(fn(lo), shape), vlo)
        vhi = np.where(need_hi, _b(fn(hi), shape), vhi)
        if not (np.all(np.isfinite(vlo)) and np.all(np.isfinite(vhi))):
            raise HypothesisViolationError(f"{what}: non-finite evaluation while bracketing")
        need_lo = vlo > 0
        need_hi = vhi < 0
        step *= 2.0
    if need_lo.any() or need_hi.any():
        raise HypothesisViolationError(
            f"{what}: no sign change within {_MAX_BRACKET_DOUBLINGS} bracket doublings; "
            "the monotonicity assumption in u looks violated"
        )
    u = 0.5 * (lo + hi)
    eps = np.finfo(float).eps
    for _ in range(_MAX_ROOT_ITER):
        v = _b(fn(u), shape)
        lo = np.where(v <= 0, u, lo)
        hi = np.where(v > 0, u, hi)
        done = (hi - lo) <= 4.0 * eps * (1.0 + np.abs(u))
        if done.all():
            break
        d = _b(dfn(u), shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            trial = u - v / d
        ok = np.isfinite(trial) & (trial > lo) & (trial < hi)
        u = np.where(ok, trial, 0.5 * (lo + hi))
    else:
        raise SolveError(f"{what}: root refinement did not converge")
    return u


def constraint_boundary_field(spec: ProblemSpec, grid: SpatialGrid,
                              timegrid: TimeGrid,
                              y_values: np.ndarray) -> np.ndarray:
    """Per-node root of u -> g(x, t, y, u); the feasible set is u <= root."""
    env = _cylinder_env(grid, timegrid)
    g = spec.constraint

    def gval(u):
        return g.eval(y=y_values, u=u, **env)

    def gslope(u):
        return g.du(y=y_values, u=u, **env)

    return _monotone_root(gval, gslope, np.zeros_like(y_values),
                          "constraint boundary")


def constraint_boundary(spec: ProblemSpec, x, t: float, y: float) -> float:
    """Scalar convenience wrapper around the field version."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    env = {"x1": np.array([xs[0]])}
    if spec.dim == 2:
        if xs.size < 2:
            raise ConfigError("need two spatial coordinates in two dimensions")
        env["x2"] = np.array([xs[1]])
    env["t"] = float(t)
    yv = np.array([float(y)])
    g = spec.constraint

    def gval(u):
        return g.eval(y=yv, u=u, **env)

    def gslope(u):
        return g.du(y=yv, u=u, **env)

    return float(_monotone_root(gval, gslope, np.zeros(1), "constraint boundary")[0])


def control_update_field(spec: ProblemSpec, grid: SpatialGrid, timegrid: TimeGrid,
                         y_values: np.ndarray, phi_values: np.ndarray):
    """Pointwise minimizer of the constrained control problem at every node.

    Returns ``(u, e, boundary, constrained)``: the new control, the matching
    multiplier (zero off the active set), the constraint boundary in u, and
    the mask of nodes where the constraint decided the value.
    """
    env = _cylinder_env(grid, timegrid)
    shape = y_values.shape
    cost, g = spec.cost, spec.constraint
    boundary = constraint_boundary_field(spec, grid, timegrid, y_values)

    def sval(u):
        return _b(cost.du(y=y_values, u=u, **env), shape) - phi_values

    def sslope(u):
        return cost.duu(y=y_values, u=u, **env)

    u_free = _monotone_root(sval, sslope, boundary.copy(), "control stationarity")
    g_free = _b(g.eval(y=y_values, u=u_free, **env), shape)
    constrained = g_free > 0.0
    u = np.where(constrained, boundary, u_free)
    lu_b = _b(cost.du(y=y_values, u=boundary, **env), shape)
    gu_b = _b(g.du(y=y_values, u=boundary, **env), shape)
    if np.any(gu_b < 0.5 * spec.gamma2):
        raise HypothesisViolationError(
            "g_u dropped below half its declared lower bound on the constraint "
            "boundary"
        )
    e = np.where(constrained, (phi_values - lu_b) / gu_b, 0.0)
    return u, e, boundary, constrained


def pointwise_control_update(spec: ProblemSpec, x, t: float, y: float,
                             phi: float):
    """Scalar (u, e) update at a single point; mirrors the field version."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    grid_like_env = {"x1": np.array([[xs[0]]])}
    if spec.dim == 2:
        grid_like_env["x2"] = np.array([[xs[1]]])
    grid_like_env["t"] = np.array([[float(t)]])
    yv = np.array([[float(y)]])
    pv = np.array([[float(phi)]])
    cost, g = spec.cost, spec.constraint
    shape = yv.shape

    def gval(u):
        return g.eval(y=yv, u=u, **grid_like_env)

    def gslope(u):
        return g.du(y=yv, u=u, **grid_like_env)

    boundary = _monotone_root(gval, gslope, np.zeros(shape), "constraint boundary")

    def sval(u):
        return _b(cost.du(y=yv, u=u, **grid_like_env), shape) - pv

    def sslope(u):
        return cost.duu(y=yv, u=u, **grid_like_env)

    u_free = _monotone_root(sval, sslope, boundary.copy(), "control stationarity")
    if float(_b(gval(u_free), shape)[0, 0]) > 0.0:
        lu_b = float(_b(cost.du(y=yv, u=boundary, **grid_like_env), shape)[0, 0])
        gu_b = float(_b(g.du(y=yv, u=boundary, **grid_like_env), shape)[0, 0])
        if gu_b < 0.5 * spec.gamma2:
            raise HypothesisViolationError(
                "g_u dropped below half its declared lower bound on the "
                "constraint boundary"
            )
        return float(boundary[0, 0]), (float(phi) - lu_b) / gu_b
    return float(u_free[0, 0]), 0.0


def recover_multiplier_division(spec: ProblemSpec, state: SpaceTimeField,
                                control: SpaceTimeField,
                                adjoint: SpaceTimeField) -> SpaceTimeField:
    """Multiplier from pointwise stationarity: e = (phi - L_u) / g_u.

    Evaluated at the given control; exact at a stationary point, and off a
    stationary point it reports the stationarity defect scaled by 1/g_u.
    """
    grid, timegrid = state.grid, state.timegrid
    l_u = eval_scalar_map(spec.cost.du, grid, timegrid, state.values,
                          control.values)
    g_u = eval_scalar_map(spec.constraint.du, grid, timegrid, state.values,
                          control.values)
    if np.any(np.abs(g_u) < 0.5 * spec.gamma2):
        k = np.unravel_index(int(np.argmin(np.abs(g_u))), g_u.shape)
        raise HypothesisViolationError(
            f"g_u = {g_u[k]:.3e} at level {k[0]}, node {k[1]} is below half the "
            f"declared bound gamma2 = {spec.gamma2}; division recovery refused"
        )
    return SpaceTimeField((adjoint.values - l_u) / g_u, grid, timegrid)


def recover_multiplier_max(spec: ProblemSpec, state: SpaceTimeField,
                           adjoint: SpaceTimeField) -> SpaceTimeField:
    """Multiplier from the state and adjoint alone, via the constraint boundary.

    The control never enters: with ``b`` the constraint boundary in u, the
    multiplier is max{0, phi - L_u(x, t, y, b)} / g_u(x, t, y, b).  This is
    the formula that certifies the sign condition by construction.
    """
    grid, timegrid = state.grid, state.timegrid
    env = _cylinder_env(grid, timegrid)
    shape = state.values.shape
    boundary = constraint_boundary_field(spec, grid, timegrid, state.values)
    lu_b = _b(spec.cost.du(y=state.values, u=boundary, **env), shape)
    gu_b = _b(spec.constraint.du(y=state.values, u=boundary, **env), shape)
    if np.any(np.abs(gu_b) < 0.5 * spec.gamma2):
        raise HypothesisViolationError(
            "g_u on the constraint boundary is below half the declared bound"
        )
    e = np.maximum(0.0, adjoint.values - lu_b) / gu_b
    return SpaceTimeField(e, grid, timegrid)


@dataclass(frozen=True)
class HPotentialAudit:
    field: SpaceTimeField
    lower: float
    upper: float


def h_potential_audit(spec: ProblemSpec, state: SpaceTimeField,
                      control: SpaceTimeField) -> HPotentialAudit:
    """The zero-order coefficient f'(y) + g_y/g_u of the reduced dynamics.

    Its boundedness is what the continuity theory of the multiplier rests
    on, so the audit reports the extremes over the grid.
    """
    grid, timegrid = state.grid, state.timegrid
    fp = np.empty_like(state.values)
    for k in range(timegrid.n_levels):
        fp[k] = _b(spec.nonlinearity.df(y=state.values[k]), (grid.n_interior,))
    g_y = eval_scalar_map(spec.constraint.dy, grid, timegrid, state.values,
                          control.values)
    g_u = eval_scalar_map(spec.constraint.du, grid, timegrid, state.values,
                          control.values)
    if np.any(np.abs(g_u) < 0.5 * spec.gamma2):
        raise HypothesisViolationError(
            "g_u is below half the declared bound; the reduced potential is "
            "not trustworthy"
        )
    vals = fp + g_y / g_u
    field = SpaceTimeField(vals, grid, timegrid)
    return HPotentialAudit(field, float(np.min(vals)), float(np.max(vals)))


@dataclass
class KKTPoint:
    """A candidate stationary quadruple with its objective value."""

    state: SpaceTimeField
    control: SpaceTimeField
    adjoint: SpaceTimeField
    multiplier: SpaceTimeField
    objective: float

    def validate(self, spec: ProblemSpec) -> None:
        for name, fld in (("control", self.control), ("adjoint", self.adjoint),
                          ("multiplier", self.multiplier)):
            if not self.state.same_layout(fld):
                raise ConfigError(f"{name} layout differs from the state layout")
        e = self.multiplier.values
        if float(np.min(e)) < -MULTIPLIER_SIGN_SLACK:
            raise AuditError(
                f"multiplier has negative entries below {-MULTIPLIER_SIGN_SLACK:g}"
            )
        g = eval_scalar_map(spec.constraint.eval, self.state.grid,
                            self.state.timegrid, self.state.values,
                            self.control.values)
        worst = float(np.max(g))
        if worst > FEASIBILITY_SLACK:
            raise AuditError(
                f"constraint violated by {worst:.3e}, beyond the allowed "
                f"{FEASIBILITY_SLACK:g}"
            )


@dataclass(frozen=True)
class ResidualReport:
    stat_res: float
    comp_res: float
    sign_viol: float
    feas_viol: float
    adjoint_res: float
    state_res: float

    @property
    def kkt_error(self) -> float:
        return max(self.stat_res, self.comp_res, self.sign_viol, self.feas_viol)

    def to_text(self) -> str:
        return "\n".join(
            "%s %.17g" % (k, getattr(self, k))
            for k in ("stat_res", "comp_res", "sign_viol", "feas_viol",
                      "adjoint_res", "state_res")
        )

    @classmethod
    def from_text(cls, text: str) -> "ResidualReport":
        vals = {}
        for line in text.strip().splitlines():
            key, _, raw = line.strip().partition(" ")
            vals[key] = float(raw)
        return cls(**vals)


def active_threshold(multiplier: SpaceTimeField) -> float:
    return 1e-6 * (1.0 + float(np.max(np.abs(multiplier.values))))


def strongly_active(multiplier: SpaceTimeField) -> np.ndarray:
    """Mask of nodes whose multiplier clearly certifies an active constraint."""
    return multiplier.values > active_threshold(multiplier)


def kkt_residuals(spec: ProblemSpec, point: KKTPoint) -> ResidualReport:
    """Recompute all first-order residuals of a quadruple from scratch."""
    state, control = point.state, point.control
    phi, e = point.adjoint.values, point.multiplier.values
    grid, timegrid = state.grid, state.timegrid
    tau = timegrid.tau
    y, u = state.values, control.values

    l_u = eval_scalar_map(spec.cost.du, grid, timegrid, y, u)
    g_u = eval_scalar_map(spec.constraint.du, grid, timegrid, y, u)
    g = eval_scalar_map(spec.constraint.eval, grid, timegrid, y, u)
    stat = float(np.max(np.abs(l_u - phi + e * g_u)))
    comp = float(np.max(np.abs(e * g)))
    sign = max(0.0, -float(np.min(e)))
    feas = max(0.0, float(np.max(g)))

    A = assemble_operator(spec, grid).matrix
    At = A.T.tocsr()
    f, df = spec.nonlinearity.f, spec.nonlinearity.df
    from .parabolic import sample_initial_state

    state_res = float(np.max(np.abs(y[0] - sample_initial_state(spec, grid))))
    for j in range(timegrid.n_levels - 1):
        r = (y[j + 1] - y[j]) / tau + A @ y[j + 1] \
            + np.asarray(f(y=y[j + 1]), dtype=float) - u[j + 1]
        state_res = max(state_res, float(np.max(np.abs(r))))

    l_y = eval_scalar_map(spec.cost.dy, grid, timegrid, y, u)
    g_y = eval_scalar_map(spec.constraint.dy, grid, timegrid, y, u)
    adj_res = 0.0
    ahead = np.zeros(grid.n_interior)
    for m in range(timegrid.n_levels - 1, -1, -1):
        fp = _b(df(y=y[m]), (grid.n_interior,))
        r = phi[m] / tau + At @ phi[m] + fp * phi[m] - ahead / tau \
            + (l_y[m] + e[m] * g_y[m])
        adj_res = max(adj_res, float(np.max(np.abs(r))))
        ahead = phi[m]
    return ResidualReport(stat, comp, sign, feas, adj_res, state_res)
