"""Problem data: coefficients, running cost, constraint, and their audits.

A problem consists of the reaction term f(y), the running cost
L(x, t, y, u), the mixed constraint g(x, t, y, u) <= 0, an optional
diffusion matrix a(x), the initial state, and two positive constants:
``gamma1`` bounding L_uu from below and ``gamma2`` bounding g_u from below.
Those bounds are what the whole method leans on (well-posed pointwise
control updates, invertible multiplier recovery), so they are not taken on
faith; ``validate_hypotheses`` samples them over a stated box and fails
loudly when the data does not deliver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .exceptions import AuditError, ConfigError

__all__ = [
    "ScalarMap2",
    "Nonlinearity",
    "ProblemSpec",
    "HypothesisReport",
    "eval_scalar_map",
    "validate_hypotheses",
]


@dataclass(frozen=True)
class ScalarMap2:
    """A scalar function of (x, t, y, u) with first and second derivatives.

    Every slot is a callable taking keyword arguments ``x1`` (and ``x2`` in
    two dimensions), ``t``, ``y``, ``u`` and broadcasting over arrays.
    """

    eval: object
    dy: object
    du: object
    dyy: object
    dyu: object
    duu: object


@dataclass(frozen=True)
class Nonlinearity:
    """Reaction term f(y) with f(0) = 0 and f' bounded below."""

    f: object
    df: object
    ddf: object
    lower_slope: float = 0.0


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    dim: int
    extents: tuple
    horizon: float
    nonlinearity: Nonlinearity
    cost: ScalarMap2
    constraint: ScalarMap2
    initial_state: object
    gamma1: float
    gamma2: float
    diffusion: tuple | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigError("problem dimension must be 1 or 2")
        if len(self.extents) != self.dim:
            raise ConfigError("extents do not match the problem dimension")
        if self.horizon <= 0:
            raise ConfigError("time horizon must be positive")
        if self.gamma1 <= 0 or self.gamma2 <= 0:
            raise ConfigError("gamma1 and gamma2 must be positive")


def eval_scalar_map(fn, grid, timegrid, y, u):
    """Evaluate a keyword map on every interior node and level.

    ``y`` and ``u`` are (n_levels, n_interior) arrays; the result has the
    same shape, with scalars broadcast.
    """
    env = grid.spatial_env()
    out = np.empty((timegrid.n_levels, grid.n_interior))
    for k, t in enumerate(timegrid.times):
        out[k] = np.broadcast_to(
            np.asarray(fn(t=t, y=y[k], u=u[k], **env), dtype=float),
            (grid.n_interior,),
        )
    return out


@dataclass(frozen=True)
class HypothesisReport:
    ellipticity_min: float
    symmetry_ok: bool
    slope_min: float
    f_zero_ok: bool
    min_gu: float
    min_luu: float
    pass_ellipticity: bool
    pass_reaction: bool
    pass_strong_convexity: bool
    sample_count: int
    argmin_gu: tuple
    argmin_luu: tuple

    @property
    def all_passed(self) -> bool:
        return self.pass_ellipticity and self.pass_reaction and self.pass_strong_convexity

    def to_text(self) -> str:
        lines = [
            f"samples {self.sample_count}",
            f"ellipticity_min {self.ellipticity_min:.6g} "
            f"{'PASS' if self.pass_ellipticity else 'FAIL'}"
            + ("" if self.symmetry_ok else " (asymmetric)"),
            f"reaction slope_min {self.slope_min:.6g} f(0)="
            f"{'0' if self.f_zero_ok else 'NONZERO'} "
            f"{'PASS' if self.pass_reaction else 'FAIL'}",
            f"min_Luu {self.min_luu:.6g} at {_fmt_point(self.argmin_luu)}",
            f"min_gu {self.min_gu:.6g} at {_fmt_point(self.argmin_gu)}",
            f"strong convexity/monotonicity "
            f"{'PASS' if self.pass_strong_convexity else 'FAIL'}",
        ]
        return "\n".join(lines)


def _fmt_point(pt):
    return "(" + ", ".join(f"{v:.4g}" for v in pt) + ")"


def _sample_box(dim, extents, horizon, y_range, u_range, n_samples):
    # Deterministic low-discrepancy samples plus every corner of the box.
    lows = [0.0] * dim + [0.0, y_range[0], u_range[0]]
    highs = list(extents) + [horizon, y_range[1], u_range[1]]
    d = len(lows)
    sampler = qmc.Halton(d=d, scramble=False)
    pts = qmc.scale(sampler.random(n_samples), lows, highs)
    corners = np.array(
        [[lo if (m >> k) & 1 == 0 else hi for k, (lo, hi) in enumerate(zip(lows, highs))]
         for m in range(2**d)]
    )
    return np.vstack([pts, corners])


def _map_env(dim, pts):
    env = {"x1": pts[:, 0]}
    col = 1
    if dim == 2:
        env["x2"] = pts[:, 1]
        col = 2
    env["t"] = pts[:, col]
    env["y"] = pts[:, col + 1]
    env["u"] = pts[:, col + 2]
    return env


def _finite_or_raise(vals, what, pts, dim):
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise AuditError(
            f"{what} evaluated non-finite at {_fmt_point(tuple(pts[i]))}"
        )


def validate_hypotheses(spec: ProblemSpec, y_range, u_range,
                        n_samples: int = 2048) -> HypothesisReport:
    """Audit the structural assumptions over a sampling box.

    Checks, on a Halton sample of (x, t, y, u) augmented with the box
    corners: the diffusion matrix is symmetric with minimum eigenvalue
    bounded away from zero, f(0) = 0 with f' bounded below by the declared
    slope, L_uu >= gamma1, and g_u >= gamma2.  Non-finite evaluations raise
    ``AuditError`` naming the map and the sample point.
    """
    y_range = (float(y_range[0]), float(y_range[1]))
    u_range = (float(u_range[0]), float(u_range[1]))
    if y_range[0] > y_range[1] or u_range[0] > u_range[1]:
        raise ConfigError("audit ranges must be nondecreasing intervals")
    pts = _sample_box(spec.dim, spec.extents, spec.horizon, y_range, u_range,
                      n_samples)
    env = _map_env(spec.dim, pts)
    x_env = {k: env[k] for k in env if k.startswith("x")}

    if spec.diffusion is None:
        ell_min, symmetry_ok = 1.0, True
    else:
        a11 = np.broadcast_to(
            np.asarray(spec.diffusion[0][0](**x_env), dtype=float), (len(pts),)
        )
        _finite_or_raise(a11, "a11", pts, spec.dim)
        if spec.dim == 1:
            ell_min, symmetry_ok = float(np.min(a11)), True
        else:
            a22 = np.broadcast_to(
                np.asarray(spec.diffusion[1][1](**x_env), dtype=float), (len(pts),)
            )
            _finite_or_raise(a22, "a22", pts, spec.dim)
            if spec.diffusion[0][1] is None:
                a12 = np.zeros(len(pts))
            else:
                a12 = np.broadcast_to(
                    np.asarray(spec.diffusion[0][1](**x_env), dtype=float),
                    (len(pts),),
                )
                _finite_or_raise(a12, "a12", pts, spec.dim)
            # Smallest eigenvalue of a symmetric 2x2 matrix, in closed form.
            half_tr = 0.5 * (a11 + a22)
            disc = np.sqrt(0.25 * (a11 - a22) ** 2 + a12**2)
            ell_min = float(np.min(half_tr - disc))
            symmetry_ok = True
    pass_ellipticity = bool(ell_min > 0.0) and symmetry_ok

    y_only = env["y"]
    f0 = float(np.asarray(spec.nonlinearity.f(y=np.zeros(1)), dtype=float).ravel()[0])
    fp = np.broadcast_to(
        np.asarray(spec.nonlinearity.df(y=y_only), dtype=float), (len(pts),)
    )
    _finite_or_raise(fp, "f'", pts, spec.dim)
    fvals = np.broadcast_to(
        np.asarray(spec.nonlinearity.f(y=y_only), dtype=float), (len(pts),)
    )
    _finite_or_raise(fvals, "f", pts, spec.dim)
    slope_min = float(np.min(fp))
    f_zero_ok = abs(f0) <= 1e-14
    pass_reaction = f_zero_ok and slope_min >= spec.nonlinearity.lower_slope - 1e-12

    luu = np.broadcast_to(np.asarray(spec.cost.duu(**env), dtype=float), (len(pts),))
    _finite_or_raise(luu, "L_uu", pts, spec.dim)
    gu = np.broadcast_to(np.asarray(spec.constraint.du(**env), dtype=float), (len(pts),))
    _finite_or_raise(gu, "g_u", pts, spec.dim)
    for fn, what in ((spec.cost.eval, "L"), (spec.constraint.eval, "g")):
        vals = np.broadcast_to(np.asarray(fn(**env), dtype=float), (len(pts),))
        _finite_or_raise(vals, what, pts, spec.dim)
    i_luu = int(np.argmin(luu))
    i_gu = int(np.argmin(gu))
    min_luu = float(luu[i_luu])
    min_gu = float(gu[i_gu])
    pass_strong = (min_luu >= spec.gamma1) and (min_gu >= spec.gamma2)

    return HypothesisReport(
        ellipticity_min=ell_min,
        symmetry_ok=symmetry_ok,
        slope_min=slope_min,
        f_zero_ok=f_zero_ok,
        min_gu=min_gu,
        min_luu=min_luu,
        pass_ellipticity=pass_ellipticity,
        pass_reaction=pass_reaction,
        pass_strong_convexity=pass_strong,
        sample_count=len(pts),
        argmin_gu=tuple(pts[i_gu]),
        argmin_luu=tuple(pts[i_luu]),
    )
