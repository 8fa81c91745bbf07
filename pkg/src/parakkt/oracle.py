"""Independent verification: the discretized problem as a finite NLP.

The time-stepped control problem on a coarse grid is written out as a plain
nonlinear program in the stacked variables (all state levels, all control
levels past the initial one) and solved by a primal-dual active-set method
that knows nothing about parabolic structure.  Its multipliers, rescaled by
the objective weight of a single node, must then agree with the adjoint and
multiplier fields of the PDE-side solver; that agreement is the strongest
correctness check the package has.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import OracleError
from .grids import SpaceTimeField, SpatialGrid, TimeGrid, assemble_operator
from .kkt import KKTPoint
from .parabolic import sample_initial_state
from .problem import ProblemSpec

__all__ = [
    "NLPInstance",
    "NLPSolution",
    "MultiplierComparison",
    "discretize_to_nlp",
    "pack_point",
    "unpack_solution",
    "solve_nlp_active_set",
    "compare_multipliers",
]

MAX_VARS = 2000
MAX_SET_CHANGES = 500
NEWTON_TOL = 1e-11
STATIONARITY_TOL = 1e-9
COMPLEMENTARITY_TOL = 1e-10


@dataclass
class NLPInstance:
    """A smooth NLP: min f(z) s.t. F(z) = 0, G(z) <= 0.

    ``hessian`` is the Hessian of the Lagrangian f + lam.F + mu.G.  All
    slots are plain callables so toy instances can be built by hand.
    """

    n_vars: int
    objective: object
    gradient: object
    hessian: object
    eq: object
    eq_jac: object
    ineq: object
    ineq_jac: object
    meta: dict = field(default_factory=dict)


@dataclass
class NLPSolution:
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    objective: float
    working_set: np.ndarray
    n_set_changes: int
    converged: bool
    stationarity_inf: float
    feas_eq_inf: float
    feas_ineq: float
    complementarity: float

    def validate(self) -> None:
        if float(np.min(self.mu, initial=0.0)) < 0.0:
            raise OracleError("inequality multiplier went negative")
        if self.complementarity > COMPLEMENTARITY_TOL:
            raise OracleError(
                f"complementarity {self.complementarity:.3e} exceeds "
                f"{COMPLEMENTARITY_TOL:g}"
            )
        if self.stationarity_inf > STATIONARITY_TOL:
            raise OracleError(
                f"stationarity {self.stationarity_inf:.3e} exceeds "
                f"{STATIONARITY_TOL:g}"
            )


def _level_env(spec, grid, times_tail):
    env = {k: v[None, :] for k, v in grid.spatial_env().items()}
    env["t"] = times_tail[:, None]
    return env


def _bcast(val, shape):
    return np.broadcast_to(np.asarray(val, dtype=float), shape)


def discretize_to_nlp(spec: ProblemSpec, grid: SpatialGrid,
                      timegrid: TimeGrid) -> NLPInstance:
    """Stack the stepped problem into an NLP over (y, u) at levels 1..K.

    The objective carries the uniform node weight tau * h^d, the stepping
    residuals and the constraint rows are unweighted.  On construction the
    analytic gradient and Jacobians are spot-checked against central finite
    differences at a seeded point; a mismatch is a construction bug and
    raises immediately.
    """
    n = grid.n_interior
    big_k = timegrid.n_levels - 1
    n_vars = 2 * n * big_k
    if n_vars > MAX_VARS:
        raise OracleError(
            f"NLP would have {n_vars} variables, above the {MAX_VARS} guard; "
            "use a coarser grid for oracle comparisons"
        )
    tau = timegrid.tau
    omega = tau * float(np.prod(grid.spacing))
    A = assemble_operator(spec, grid).matrix
    y0 = sample_initial_state(spec, grid)
    env = _level_env(spec, grid, timegrid.times[1:])
    shape = (big_k, n)
    nl = spec.nonlinearity
    cost, con = spec.cost, spec.constraint

    def split(z):
        y = z[: big_k * n].reshape(big_k, n)
        u = z[big_k * n:].reshape(big_k, n)
        return y, u

    def objective(z):
        y, u = split(z)
        lvals = _bcast(cost.eval(y=y, u=u, **env), shape)
        return float(omega * np.sum(lvals))

    def gradient(z):
        y, u = split(z)
        gy = _bcast(cost.dy(y=y, u=u, **env), shape)
        gu = _bcast(cost.du(y=y, u=u, **env), shape)
        return omega * np.concatenate([gy.ravel(), gu.ravel()])

    def eq(z):
        y, u = split(z)
        out = np.empty(shape)
        prev = y0
        for j in range(big_k):
            out[j] = (y[j] - prev) / tau + A @ y[j] \
                + np.asarray(nl.f(y=y[j]), dtype=float) - u[j]
            prev = y[j]
        return out.ravel()

    def eq_jac(z):
        y, _ = split(z)
        blocks_y = []
        for j in range(big_k):
            fp = _bcast(nl.df(y=y[j]), (n,))
            row = [None] * big_k
            row[j] = sp.identity(n) / tau + A + sp.diags(fp)
            if j > 0:
                row[j - 1] = -sp.identity(n) / tau
            blocks_y.append(row)
        jy = sp.bmat(blocks_y, format="csr")
        ju = -sp.identity(big_k * n, format="csr")
        return sp.hstack([jy, ju], format="csr")

    def ineq(z):
        y, u = split(z)
        return _bcast(con.eval(y=y, u=u, **env), shape).ravel()

    def ineq_jac(z):
        y, u = split(z)
        gy = _bcast(con.dy(y=y, u=u, **env), shape).ravel()
        gu = _bcast(con.du(y=y, u=u, **env), shape).ravel()
        return sp.hstack([sp.diags(gy), sp.diags(gu)], format="csr")

    def hessian(z, lam, mu):
        y, u = split(z)
        lam2 = lam.reshape(big_k, n)
        mu2 = mu.reshape(big_k, n)
        l_yy = _bcast(cost.dyy(y=y, u=u, **env), shape)
        l_yu = _bcast(cost.dyu(y=y, u=u, **env), shape)
        l_uu = _bcast(cost.duu(y=y, u=u, **env), shape)
        g_yy = _bcast(con.dyy(y=y, u=u, **env), shape)
        g_yu = _bcast(con.dyu(y=y, u=u, **env), shape)
        g_uu = _bcast(con.duu(y=y, u=u, **env), shape)
        fpp = np.empty(shape)
        for j in range(big_k):
            fpp[j] = _bcast(nl.ddf(y=y[j]), (n,))
        d_yy = (omega * l_yy + lam2 * fpp + mu2 * g_yy).ravel()
        d_yu = (omega * l_yu + mu2 * g_yu).ravel()
        d_uu = (omega * l_uu + mu2 * g_uu).ravel()
        return sp.bmat(
            [[sp.diags(d_yy), sp.diags(d_yu)],
             [sp.diags(d_yu), sp.diags(d_uu)]],
            format="csr",
        )

    instance = NLPInstance(
        n_vars=n_vars,
        objective=objective,
        gradient=gradient,
        hessian=hessian,
        eq=eq,
        eq_jac=eq_jac,
        ineq=ineq,
        ineq_jac=ineq_jac,
        meta={
            "grid": grid,
            "timegrid": timegrid,
            "omega": omega,
            "n_interior": n,
            "n_steps": big_k,
            "problem": spec.name,
        },
    )
    _self_check(instance)
    return instance


def _self_check(instance: NLPInstance, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    z = 0.1 * rng.standard_normal(instance.n_vars)
    eps = 1e-6
    grad = instance.gradient(z)
    for i in rng.choice(instance.n_vars, size=min(8, instance.n_vars),
                        replace=False):
        step = np.zeros(instance.n_vars)
        step[i] = eps
        fd = (instance.objective(z + step) - instance.objective(z - step)) / (2 * eps)
        if abs(fd - grad[i]) > 1e-6 * (1.0 + abs(fd)):
            raise OracleError(
                f"gradient self-check failed at component {i}: analytic "
                f"{grad[i]:.12g} vs finite difference {fd:.12g}"
            )
    for name, fun, jac in (("equality", instance.eq, instance.eq_jac),
                           ("inequality", instance.ineq, instance.ineq_jac)):
        jmat = jac(z)
        for _ in range(3):
            d = rng.standard_normal(instance.n_vars)
            d /= np.linalg.norm(d)
            fd = (fun(z + eps * d) - fun(z - eps * d)) / (2 * eps)
            an = jmat @ d
            err = float(np.max(np.abs(fd - an)))
            if err > 1e-6 * (1.0 + float(np.max(np.abs(fd)))):
                raise OracleError(
                    f"{name} Jacobian self-check failed: max deviation {err:.3e}"
                )


def pack_point(instance: NLPInstance, point: KKTPoint) -> np.ndarray:
    """Stack a quadruple's state and control into the NLP variable vector."""
    big_k = instance.meta["n_steps"]
    n = instance.meta["n_interior"]
    y = point.state.values[1:].reshape(big_k * n)
    u = point.control.values[1:].reshape(big_k * n)
    return np.concatenate([y, u])


def unpack_solution(instance: NLPInstance, sol: NLPSolution):
    """NLP solution as space-time arrays (levels 1..K) in PDE scaling.

    Returns ``(y, u, phi, e)`` where phi and e are the equality and
    inequality multipliers divided by the objective node weight.
    """
    big_k = instance.meta["n_steps"]
    n = instance.meta["n_interior"]
    omega = instance.meta["omega"]
    y = sol.z[: big_k * n].reshape(big_k, n)
    u = sol.z[big_k * n:].reshape(big_k, n)
    phi = sol.lam.reshape(big_k, n) / omega
    e = sol.mu.reshape(big_k, n) / omega
    return y, u, phi, e


def _kkt_residual(instance, z, lam, mu, working):
    grad = instance.gradient(z)
    jf = instance.eq_jac(z)
    jg = instance.ineq_jac(z)
    stat = grad + jf.T @ lam + jg.T @ mu
    feq = instance.eq(z)
    gin = instance.ineq(z)
    parts = [stat, feq]
    if working.size:
        parts.append(gin[working])
    return np.concatenate(parts) if len(parts) > 1 else stat, stat, feq, gin


def solve_nlp_active_set(instance: NLPInstance,
                         z0: np.ndarray | None = None,
                         max_newton: int = 100) -> NLPSolution:
    """Primal-dual active set with damped Newton inner solves.

    Maintains a working set of inequality rows treated as equalities, solves
    each working-set problem to tight stationarity, then exchanges at most
    one row (worst violated in, most negative multiplier out) per round.
    """
    n = instance.n_vars
    z = np.zeros(n) if z0 is None else np.array(z0, dtype=float)
    n_eq = instance.eq(z).size
    lam = np.zeros(n_eq)
    working = np.zeros(0, dtype=int)
    n_ineq = instance.ineq(z).size
    mu_w = np.zeros(0)
    changes = 0

    while True:
        # Newton on the working-set KKT system.
        for _ in range(max_newton):
            mu = np.zeros(n_ineq)
            mu[working] = mu_w
            res, stat, feq, gin = _kkt_residual(instance, z, lam, mu, working)
            scale = 1.0 + float(np.max(np.abs(instance.gradient(z))))
            rnorm = float(np.max(np.abs(res)))
            if not np.isfinite(rnorm):
                raise OracleError("oracle Newton produced a non-finite residual")
            if rnorm <= NEWTON_TOL * scale:
                break
            h = instance.hessian(z, lam, mu)
            jf = instance.eq_jac(z)
            jg = instance.ineq_jac(z)
            con_jacs = []
            con_rhs = []
            if n_eq:
                con_jacs.append(jf)
                con_rhs.append(-feq)
            if working.size:
                con_jacs.append(jg[working])
                con_rhs.append(-gin[working])
            if con_jacs:
                jall = sp.vstack(con_jacs, format="csr")
                kkt = sp.bmat([[h, jall.T], [jall, None]], format="csc")
                rhs = np.concatenate([-stat] + con_rhs)
            else:
                kkt = sp.csc_matrix(h)
                rhs = -stat
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", spla.MatrixRankWarning)
                    delta = np.atleast_1d(spla.spsolve(kkt, rhs))
            except RuntimeError as exc:
                raise OracleError(
                    f"singular working-set KKT system (|W| = {working.size}, "
                    f"rows {working.tolist()})"
                ) from exc
            if not np.all(np.isfinite(delta)):
                raise OracleError(
                    f"singular working-set KKT system (|W| = {working.size}, "
                    f"rows {working.tolist()})"
                )
            dz = delta[:n]
            dlam = delta[n: n + n_eq]
            dmu = delta[n + n_eq:]
            alpha = 1.0
            for _ in range(30):
                z_t = z + alpha * dz
                lam_t = lam + alpha * dlam
                mu_t = mu_w + alpha * dmu
                mu_full = np.zeros(n_ineq)
                mu_full[working] = mu_t
                res_t, *_ = _kkt_residual(instance, z_t, lam_t, mu_full,
                                          working)
                if float(np.max(np.abs(res_t))) <= (1.0 - 1e-4 * alpha) * rnorm:
                    break
                alpha *= 0.5
            else:
                raise OracleError(
                    "oracle Newton stalled; no damping step reduced the residual"
                )
            z, lam, mu_w = z_t, lam_t, mu_t
        else:
            raise OracleError(
                f"oracle Newton did not reach tolerance in {max_newton} "
                "iterations"
            )

        gin = instance.ineq(z)
        feas_tol = NEWTON_TOL * (1.0 + float(np.max(np.abs(gin))))
        outside = np.setdiff1d(np.arange(n_ineq), working, assume_unique=False)
        violated = outside[gin[outside] > feas_tol] if outside.size else outside
        negative = np.where(mu_w < -NEWTON_TOL)[0] if working.size else np.empty(0, int)

        if violated.size == 0 and negative.size == 0:
            break
        if changes >= MAX_SET_CHANGES:
            raise OracleError(
                f"active-set iteration exceeded {MAX_SET_CHANGES} working-set "
                "changes; the instance is cycling"
            )
        if negative.size:
            worst = negative[np.argmin(mu_w[negative])]
            keep = np.ones(working.size, dtype=bool)
            keep[worst] = False
            working = working[keep]
            mu_w = mu_w[keep]
        else:
            worst = violated[np.argmax(gin[violated])]
            working = np.append(working, worst)
            mu_w = np.append(mu_w, 0.0)
        changes += 1

    mu = np.zeros(n_ineq)
    mu[working] = np.maximum(mu_w, 0.0)
    _, stat, feq, gin = _kkt_residual(instance, z, lam, mu, working)
    sol = NLPSolution(
        z=z,
        lam=lam,
        mu=mu,
        objective=instance.objective(z),
        working_set=np.sort(working.copy()),
        n_set_changes=changes,
        converged=True,
        stationarity_inf=float(np.max(np.abs(stat))),
        feas_eq_inf=float(np.max(np.abs(feq), initial=0.0)),
        feas_ineq=max(0.0, float(np.max(gin, initial=0.0))),
        complementarity=float(np.abs(mu @ gin)),
    )
    sol.validate()
    return sol


@dataclass
class MultiplierComparison:
    adjoint_inf: float
    adjoint_l2: float
    multiplier_inf: float
    multiplier_l2: float
    objective_gap: float
    scaled: bool

    def to_text(self) -> str:
        return "\n".join([
            "adjoint_inf %.17g" % self.adjoint_inf,
            "adjoint_l2 %.17g" % self.adjoint_l2,
            "multiplier_inf %.17g" % self.multiplier_inf,
            "multiplier_l2 %.17g" % self.multiplier_l2,
            "objective_gap %.17g" % self.objective_gap,
            "scaled %d" % self.scaled,
        ])


def compare_multipliers(instance: NLPInstance, sol: NLPSolution,
                        point: KKTPoint,
                        apply_weight_scaling: bool = True) -> MultiplierComparison:
    """Agreement between the NLP multipliers and the PDE-side fields.

    The comparison covers the weighted levels (everything past the initial
    one).  With scaling off, the raw NLP multipliers are compared instead;
    that is only useful to demonstrate how wrong the unscaled match is.
    """
    big_k = instance.meta["n_steps"]
    n = instance.meta["n_interior"]
    omega = instance.meta["omega"]
    denom = omega if apply_weight_scaling else 1.0
    phi_or = sol.lam.reshape(big_k, n) / denom
    e_or = sol.mu.reshape(big_k, n) / denom
    phi_pde = point.adjoint.values[1:]
    e_pde = point.multiplier.values[1:]
    d_phi = phi_pde - phi_or
    d_e = e_pde - e_or
    cell = omega
    return MultiplierComparison(
        adjoint_inf=float(np.max(np.abs(d_phi))),
        adjoint_l2=float(np.sqrt(cell * np.sum(d_phi**2))),
        multiplier_inf=float(np.max(np.abs(d_e))),
        multiplier_l2=float(np.sqrt(cell * np.sum(d_e**2))),
        objective_gap=float(point.objective - sol.objective),
        scaled=apply_weight_scaling,
    )
