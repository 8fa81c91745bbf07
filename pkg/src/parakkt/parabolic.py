"""Implicit time stepping for the state, linearized, and adjoint equations.

All three solvers march the same one-step systems

    (I/tau + A + diag(c)) v_new = v_old / tau + data,

differing only in the direction of the sweep, the operator (``A`` or its
transpose), and where the zero-order coefficient comes from.  The adjoint
sweep is the exact transpose of the forward linearized sweep, which is what
makes the reduced gradient exact in the discrete duality pairing.

The adjoint field is stored on all time levels.  Its last stored level is
the solution of the first backward step started from a virtual zero beyond
the horizon, so it is of size O(tau) rather than literally zero; writing the
literal zero instead would break the exactness of the gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigError, SolveError
from .grids import (
    DiscreteOperator,
    SpaceTimeField,
    SpatialGrid,
    TimeGrid,
    assemble_operator,
    quadrature_weights,
)
from .problem import ProblemSpec, eval_scalar_map

__all__ = [
    "SolverOptions",
    "StateSolveReport",
    "sample_initial_state",
    "solve_state",
    "solve_linear_parabolic",
    "solve_adjoint",
]

_STALL_LIMIT = 5


@dataclass(frozen=True)
class SolverOptions:
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    linear_solver_tol: float = 1e-12
    scheme: str = "implicit-euler"
    linear_solver: str = "auto"

    def __post_init__(self):
        if self.scheme != "implicit-euler":
            raise ConfigError(f"unknown time scheme {self.scheme!r}")
        if self.linear_solver not in ("auto", "banded", "splu", "dense"):
            raise ConfigError(f"unknown linear solver {self.linear_solver!r}")


@dataclass(frozen=True)
class StateSolveReport:
    max_newton_iterations: int
    step_residuals: np.ndarray
    bound_ratio: float


class _StepSolver:
    """Solves (M + diag(d)) x = b repeatedly for a fixed sparse M."""

    def __init__(self, matrix: sp.spmatrix, mode: str):
        n = matrix.shape[0]
        coo = matrix.tocoo()
        if mode == "auto":
            bw = int(np.max(np.abs(coo.row - coo.col))) if coo.nnz else 0
            mode = "banded" if bw <= 2 else "splu"
        self.mode = mode
        self.n = n
        if mode == "banded":
            self.lo = int(np.max(coo.row - coo.col)) if coo.nnz else 0
            self.up = int(np.max(coo.col - coo.row)) if coo.nnz else 0
            ab = np.zeros((self.lo + self.up + 1, n))
            np.add.at(ab, (self.up + coo.row - coo.col, coo.col), coo.data)
            self.ab = ab
        elif mode == "splu":
            self.base = matrix.tocsc()
        elif mode == "dense":
            self.base = matrix.toarray()
        else:
            raise ConfigError(f"unknown linear solver {mode!r}")

    def solve(self, diag_add: np.ndarray, rhs: np.ndarray, step: int) -> np.ndarray:
        try:
            if self.mode == "banded":
                ab = self.ab.copy()
                ab[self.up, :] += diag_add
                x = scipy.linalg.solve_banded(
                    (self.lo, self.up), ab, rhs, check_finite=False
                )
            elif self.mode == "splu":
                mat = (self.base + sp.diags(diag_add).tocsc()).tocsc()
                x = spla.splu(mat).solve(rhs)
            else:
                x = np.linalg.solve(self.base + np.diag(diag_add), rhs)
        except (np.linalg.LinAlgError, RuntimeError) as exc:
            raise SolveError(
                f"singular step matrix at step {step}; reduce the time step"
            ) from exc
        if not np.all(np.isfinite(x)):
            raise SolveError(
                f"singular step matrix at step {step}; reduce the time step"
            )
        return x


def _step_machinery(spec: ProblemSpec, grid: SpatialGrid, timegrid: TimeGrid,
                    options: SolverOptions, adjoint: bool):
    op = assemble_operator(spec, grid, adjoint=adjoint)
    base = (sp.identity(grid.n_interior, format="csr") / timegrid.tau
            + op.matrix).tocsr()
    return op, _StepSolver(base, options.linear_solver)


def sample_initial_state(spec: ProblemSpec, grid: SpatialGrid) -> np.ndarray:
    vals = np.broadcast_to(
        np.asarray(spec.initial_state(**grid.spatial_env()), dtype=float),
        (grid.n_interior,),
    ).copy()
    if not np.all(np.isfinite(vals)):
        raise ConfigError("initial state evaluates non-finite on the grid")
    return vals


def solve_state(spec: ProblemSpec, control: SpaceTimeField,
                options: SolverOptions | None = None):
    """March the semilinear state equation driven by the given control.

    Returns the state field together with a report carrying the worst Newton
    iteration count, the final residual of every step, and the ratio of the
    state sup norm to the natural size of the data.
    """
    options = options or SolverOptions()
    grid, timegrid = control.grid, control.timegrid
    tau = timegrid.tau
    f, df = spec.nonlinearity.f, spec.nonlinearity.df
    op, stepper = _step_machinery(spec, grid, timegrid, options, adjoint=False)
    A = op.matrix

    values = np.empty((timegrid.n_levels, grid.n_interior))
    values[0] = sample_initial_state(spec, grid)
    max_newton = 0
    step_res = np.zeros(timegrid.n_levels - 1)
    for j in range(timegrid.n_levels - 1):
        y_prev = values[j]
        u_lvl = control.values[j + 1]
        scale = 1.0 + np.max(np.abs(y_prev)) + np.max(np.abs(u_lvl))
        tol = options.newton_tol * scale
        y = y_prev.copy()
        best = np.inf
        stall = 0
        n_solves = 0
        while True:
            fy = np.asarray(f(y=y), dtype=float)
            res = (y - y_prev) / tau + A @ y + fy - u_lvl
            rnorm = float(np.max(np.abs(res)))
            if not np.isfinite(rnorm):
                raise SolveError(
                    f"state Newton produced non-finite residual at step {j + 1}"
                )
            if rnorm <= tol:
                break
            if n_solves >= options.newton_max_iter:
                raise SolveError(
                    f"state Newton did not converge at step {j + 1}: residual "
                    f"{rnorm:.3e} after {n_solves} iterations"
                )
            if rnorm >= best:
                stall += 1
                if stall >= _STALL_LIMIT:
                    raise SolveError(
                        f"state Newton stalled at step {j + 1}: residual "
                        f"{rnorm:.3e} after {n_solves} iterations"
                    )
            else:
                best = rnorm
                stall = 0
            fp = np.broadcast_to(np.asarray(df(y=y), dtype=float), y.shape)
            y = y - stepper.solve(fp, res, j + 1)
            n_solves += 1
        max_newton = max(max_newton, n_solves)
        step_res[j] = rnorm
        values[j + 1] = y

    state = SpaceTimeField(values, grid, timegrid)
    qw = quadrature_weights(grid, timegrid)
    data_size = float(np.sqrt(np.sum(qw.values * control.values**2)))
    data_size += float(np.max(np.abs(values[0])))
    sup = float(np.max(np.abs(values)))
    if sup == 0.0:
        ratio = 0.0
    elif data_size == 0.0:
        ratio = float("inf")
    else:
        ratio = sup / data_size
    return state, StateSolveReport(max_newton, step_res, ratio)


def solve_linear_parabolic(spec: ProblemSpec, potential: SpaceTimeField,
                           rhs: SpaceTimeField, initial_values: np.ndarray,
                           use_adjoint_operator: bool = False,
                           options: SolverOptions | None = None) -> SpaceTimeField:
    """March the linearized equation z' + A z + c z = r forward in time.

    The zero-order coefficient ``c`` and the source ``r`` are read at the
    target level of each step.  With ``use_adjoint_operator`` the transpose
    operator is used in place of ``A``.
    """
    options = options or SolverOptions()
    if not potential.same_layout(rhs):
        raise ConfigError("potential and rhs live on different grids")
    grid, timegrid = potential.grid, potential.timegrid
    tau = timegrid.tau
    initial_values = np.broadcast_to(
        np.asarray(initial_values, dtype=float), (grid.n_interior,)
    )
    _, stepper = _step_machinery(spec, grid, timegrid, options,
                                 adjoint=use_adjoint_operator)
    values = np.empty((timegrid.n_levels, grid.n_interior))
    values[0] = initial_values
    for j in range(timegrid.n_levels - 1):
        b = values[j] / tau + rhs.values[j + 1]
        values[j + 1] = stepper.solve(potential.values[j + 1], b, j + 1)
    return SpaceTimeField(values, grid, timegrid)


def solve_adjoint(spec: ProblemSpec, state: SpaceTimeField,
                  control: SpaceTimeField, multiplier: SpaceTimeField,
                  options: SolverOptions | None = None) -> SpaceTimeField:
    """Sweep the adjoint equation backward from a virtual zero at the horizon.

    Every stored level m solves

        (I/tau + A^T + diag(f'(y_m))) phi_m = phi_{m+1}/tau - (L_y + e g_y)|_m

    down to and including level 0, with phi beyond the last level taken as
    zero.  The transpose operator makes this sweep the exact adjoint of the
    forward linearized sweep under the uniform objective weights.
    """
    options = options or SolverOptions()
    if not (state.same_layout(control) and state.same_layout(multiplier)):
        raise ConfigError("state, control, and multiplier layouts differ")
    grid, timegrid = state.grid, state.timegrid
    tau = timegrid.tau
    df = spec.nonlinearity.df
    _, stepper = _step_machinery(spec, grid, timegrid, options, adjoint=True)

    l_y = eval_scalar_map(spec.cost.dy, grid, timegrid, state.values,
                          control.values)
    g_y = eval_scalar_map(spec.constraint.dy, grid, timegrid, state.values,
                          control.values)
    source = -(l_y + multiplier.values * g_y)

    values = np.empty((timegrid.n_levels, grid.n_interior))
    ahead = np.zeros(grid.n_interior)
    for m in range(timegrid.n_levels - 1, -1, -1):
        fp = np.broadcast_to(
            np.asarray(df(y=state.values[m]), dtype=float), (grid.n_interior,)
        )
        values[m] = stepper.solve(fp, ahead / tau + source[m], m)
        ahead = values[m]
    return SpaceTimeField(values, grid, timegrid)
