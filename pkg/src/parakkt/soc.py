"""Second-order analysis at a candidate stationary point.

Provides the curvature form of the Lagrangian along linearized directions,
a sampler for directions in the critical cone, the pointwise Legendre scan,
and a Monte-Carlo probe of quadratic growth of the objective around the
point.  The curvature form uses the same uniform weights as the objective,
which makes it the exact second derivative of the reduced objective (plus
the multiplier terms), so finite differences of the objective reproduce it
to rounding.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .exceptions import AuditError
from .grids import (
    SpaceTimeField,
    objective_weights,
    quadrature_weights,
)
from .kkt import KKTPoint, active_threshold
from .optimizer import _restored_trial, discrete_objective
from .parabolic import SolverOptions, solve_linear_parabolic
from .problem import ProblemSpec, eval_scalar_map

__all__ = [
    "CriticalDirection",
    "GrowthProbe",
    "linearized_state",
    "quadratic_form",
    "sample_critical_direction",
    "legendre_min",
    "quadratic_growth_probe",
]


@dataclass
class CriticalDirection:
    """A control direction with its linearized state and cone diagnostics."""

    control_direction: SpaceTimeField
    state_direction: SpaceTimeField
    c1_value: float
    c1_satisfied: bool
    c2_residual: float
    c3_violation: float


def _df_field(spec, state):
    grid, timegrid = state.grid, state.timegrid
    out = np.empty_like(state.values)
    for k in range(timegrid.n_levels):
        out[k] = np.broadcast_to(
            np.asarray(spec.nonlinearity.df(y=state.values[k]), dtype=float),
            (grid.n_interior,),
        )
    return SpaceTimeField(out, grid, timegrid)


def linearized_state(spec: ProblemSpec, point: KKTPoint,
                     v: SpaceTimeField,
                     options: SolverOptions | None = None) -> SpaceTimeField:
    """Solve the state equation linearized at the point, driven by ``v``."""
    potential = _df_field(spec, point.state)
    zero_init = np.zeros(point.state.grid.n_interior)
    return solve_linear_parabolic(spec, potential, v, zero_init,
                                  use_adjoint_operator=False, options=options)


def _c2_residual(spec, point, v, z):
    grid, timegrid = v.grid, v.timegrid
    tau = timegrid.tau
    from .grids import assemble_operator

    A = assemble_operator(spec, grid).matrix
    df = spec.nonlinearity.df
    res = float(np.max(np.abs(z.values[0])))
    for j in range(timegrid.n_levels - 1):
        fp = np.broadcast_to(
            np.asarray(df(y=point.state.values[j + 1]), dtype=float),
            (grid.n_interior,),
        )
        r = (z.values[j + 1] - z.values[j]) / tau + A @ z.values[j + 1] \
            + fp * z.values[j + 1] - v.values[j + 1]
        res = max(res, float(np.max(np.abs(r))))
    return res


def quadratic_form(spec: ProblemSpec, point: KKTPoint,
                   direction: CriticalDirection) -> float:
    """Curvature of the Lagrangian along the direction, objective-weighted.

    Refuses directions whose linearized-state residual is above 1e-8: the
    value would then not mean anything.
    """
    v = direction.control_direction
    z = direction.state_direction
    if not point.state.same_layout(v) or not point.state.same_layout(z):
        raise AuditError("direction layout differs from the point layout")
    if direction.c2_residual > 1e-8:
        raise AuditError(
            f"linearized-state residual {direction.c2_residual:.3e} is too "
            "large for a trustworthy curvature value"
        )
    grid, timegrid = point.state.grid, point.state.timegrid
    y, u = point.state.values, point.control.values
    zv, vv = z.values, v.values
    w = objective_weights(grid, timegrid).values

    l_yy = eval_scalar_map(spec.cost.dyy, grid, timegrid, y, u)
    l_yu = eval_scalar_map(spec.cost.dyu, grid, timegrid, y, u)
    l_uu = eval_scalar_map(spec.cost.duu, grid, timegrid, y, u)
    g_yy = eval_scalar_map(spec.constraint.dyy, grid, timegrid, y, u)
    g_yu = eval_scalar_map(spec.constraint.dyu, grid, timegrid, y, u)
    g_uu = eval_scalar_map(spec.constraint.duu, grid, timegrid, y, u)
    fpp = np.empty_like(y)
    for k in range(timegrid.n_levels):
        fpp[k] = np.broadcast_to(
            np.asarray(spec.nonlinearity.ddf(y=y[k]), dtype=float),
            (grid.n_interior,),
        )
    e = point.multiplier.values
    phi = point.adjoint.values
    density = (
        l_yy * zv**2 + 2.0 * l_yu * zv * vv + l_uu * vv**2
        + e * (g_yy * zv**2 + 2.0 * g_yu * zv * vv + g_uu * vv**2)
        + phi * fpp * zv**2
    )
    return float(np.sum(w * density))


def _smooth_random_field(grid, timegrid, rng) -> np.ndarray:
    """A few low Fourier modes with random weights, sup-normalized."""
    x = grid.interior_coords
    t = timegrid.times
    vals = np.zeros((timegrid.n_levels, grid.n_interior))
    space_modes = []
    if grid.dim == 1:
        for m in (1, 2, 3):
            space_modes.append(np.sin(m * np.pi * x[:, 0] / grid.extents[0]))
    else:
        for m in (1, 2):
            for p in (1, 2):
                space_modes.append(
                    np.sin(m * np.pi * x[:, 0] / grid.extents[0])
                    * np.sin(p * np.pi * x[:, 1] / grid.extents[1])
                )
    for sm in space_modes:
        for q in (0, 1, 2):
            c = rng.standard_normal()
            tfun = np.cos(q * np.pi * t / timegrid.horizon)
            vals += c * tfun[:, None] * sm[None, :]
    sup = np.max(np.abs(vals))
    if sup > 0:
        vals /= sup
    return vals


def sample_critical_direction(spec: ProblemSpec, point: KKTPoint,
                              seed: int = 0,
                              options: SolverOptions | None = None) -> CriticalDirection:
    """Draw a smooth direction and project it into the critical cone.

    On nodes where the multiplier certifies the constraint the direction is
    forced tangent (g_y z + g_u v = 0); on active nodes without a certifying
    multiplier the tangency is enforced one-sidedly.  The linearized state is
    recomputed after each pass.  If the descent test fails the sign is
    flipped and the projection redone.
    """
    grid, timegrid = point.state.grid, point.state.timegrid
    rng = np.random.default_rng(seed)
    raw = _smooth_random_field(grid, timegrid, rng)
    raw[0] = 0.0

    y, u = point.state.values, point.control.values
    g = eval_scalar_map(spec.constraint.eval, grid, timegrid, y, u)
    g_y = eval_scalar_map(spec.constraint.dy, grid, timegrid, y, u)
    g_u = eval_scalar_map(spec.constraint.du, grid, timegrid, y, u)
    strong = point.multiplier.values > active_threshold(point.multiplier)
    active = g >= -1e-6 * (1.0 + np.max(np.abs(g)))
    weak = active & ~strong

    w = objective_weights(grid, timegrid).values
    l_y = eval_scalar_map(spec.cost.dy, grid, timegrid, y, u)
    l_u = eval_scalar_map(spec.cost.du, grid, timegrid, y, u)

    def build(sign):
        v = sign * raw.copy()
        z = None
        for _ in range(2):
            zf = linearized_state(
                spec, point, SpaceTimeField(v, grid, timegrid), options
            )
            z = zf.values
            tangent = -g_y * z / g_u
            v = np.where(strong, tangent, v)
            v = np.where(weak, np.minimum(v, tangent), v)
        zf = linearized_state(spec, point, SpaceTimeField(v, grid, timegrid),
                              options)
        z = zf.values
        lin = g_y * z + g_u * v
        c3 = 0.0
        if strong.any():
            c3 = max(c3, float(np.max(np.abs(lin[strong]))))
        if weak.any():
            c3 = max(c3, max(0.0, float(np.max(lin[weak]))))
        c1 = float(np.sum(w * (l_y * z + l_u * v)))
        return v, zf, c1, c3

    v, zf, c1, c3 = build(1.0)
    c1_tol = 1e-8 * (1.0 + abs(point.objective))
    if c1 > c1_tol:
        v, zf, c1, c3 = build(-1.0)
    if c3 > 1e-6:
        raise AuditError(
            f"cone projection left a tangency violation of {c3:.3e}; the "
            "active-set geometry at this point resists the two-pass projection"
        )
    vfield = SpaceTimeField(v, grid, timegrid)
    c2 = _c2_residual(spec, point, vfield, zf)
    return CriticalDirection(vfield, zf, c1, c1 <= c1_tol, c2, c3)


def legendre_min(spec: ProblemSpec, point: KKTPoint):
    """Pointwise minimum of L_uu + e g_uu over the cylinder.

    Returns ``(value, (level, node))``; positivity uniformly in the grid is
    the pointwise second-order necessary condition made quantitative.
    """
    grid, timegrid = point.state.grid, point.state.timegrid
    y, u = point.state.values, point.control.values
    l_uu = eval_scalar_map(spec.cost.duu, grid, timegrid, y, u)
    g_uu = eval_scalar_map(spec.constraint.duu, grid, timegrid, y, u)
    dens = l_uu + point.multiplier.values * g_uu
    flat = int(np.argmin(dens))
    idx = np.unravel_index(flat, dens.shape)
    return float(dens[idx]), (int(idx[0]), int(idx[1]))


@dataclass
class GrowthProbe:
    rows: list
    kappa_hat: float
    n_feasible: int

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("trial,ratio,norm_du,feasible\n")
        for trial, ratio, norm_du, feasible in self.rows:
            out.write("%d,%.17g,%.17g,%d\n" % (trial, ratio, norm_du, feasible))
        return out.getvalue()


def quadratic_growth_probe(spec: ProblemSpec, point: KKTPoint,
                           n_trials: int = 50, radius: float = 1e-2,
                           seed: int = 0,
                           options: SolverOptions | None = None) -> GrowthProbe:
    """Ratio of objective increase to squared control distance, sampled.

    Each trial perturbs the control by a smooth field of sup size ``radius``,
    restores feasibility, re-solves the state, and records
    (J_trial - J) / ||u_trial - u||^2 in the integration norm.  The smallest
    ratio over feasible trials estimates the growth constant.
    """
    solver = options or SolverOptions()
    grid, timegrid = point.state.grid, point.state.timegrid
    rng = np.random.default_rng(seed)
    qw = quadrature_weights(grid, timegrid).values
    rows = []
    kappa = np.inf
    n_feasible = 0
    for trial in range(n_trials):
        delta = radius * _smooth_random_field(grid, timegrid, rng)
        delta[0] = 0.0
        u_try = point.control.values + delta
        control, state, objective = _restored_trial(
            spec, grid, timegrid, u_try, solver
        )
        du = control.values - point.control.values
        norm_du = float(np.sqrt(np.sum(qw * du**2)))
        g = eval_scalar_map(spec.constraint.eval, grid, timegrid,
                            state.values, control.values)
        feasible = bool(np.max(g) <= 1e-8) and norm_du >= 1e-8
        ratio = 0.0
        if norm_du >= 1e-8:
            ratio = (objective - point.objective) / norm_du**2
        if feasible:
            n_feasible += 1
            kappa = min(kappa, ratio)
        rows.append((trial, ratio, norm_du, feasible))
    if not np.isfinite(kappa):
        kappa = 0.0
    return GrowthProbe(rows, float(kappa), n_feasible)
