"""Uniqueness analysis for initial data with zero fluidity.

When the initial datum is supported inside [-1, 1] the evolution can
either stay frozen forever (unique solution) or escape along a family
of profiles parameterized by a waiting time.  The decision rests on
the integrability at zero of 1/F, where F maps accumulated diffusion
x to the fluidity of the heat-smeared initial datum.  This module
evaluates F exactly for cell-averaged data, classifies initial data,
inverts the escape integral equation and assembles the branch family.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.special import erfc as _erfc

from .analytic import first_time_outside, heat_evolve
from .core import DensityField, ShearProtocol, fluidity

__all__ = [
    "Verdict",
    "DegeneracyReport",
    "EscapeProfile",
    "smeared_fluidity",
    "smeared_fluidity_uniform",
    "classify_degenerate",
    "escape_profile",
    "branch_solution",
    "critical_time",
]

_SQRT_PI = math.sqrt(math.pi)

# F values below this are treated as (numerically) exactly zero, the
# signature of super-polynomial decay from a support gap at +-1.
_F_FLOOR = 1e-250


class Verdict(enum.Enum):
    UNIQUE = "unique"
    NON_UNIQUE = "non-unique"
    INCONCLUSIVE = "inconclusive"


def _require_degenerate(p0: DensityField, alpha: float) -> None:
    d0 = fluidity(p0, alpha)
    if d0 > 0.0:
        raise ValueError(
            f"initial fluidity must vanish for the degenerate analysis, got {d0}"
        )


def _tail_antiderivative(u: np.ndarray) -> np.ndarray:
    """Antiderivative of the tail integral: d/du [u*E(u) - exp(-u^2)/2] = E(u)."""
    return u * (0.5 * _SQRT_PI * _erfc(u)) - 0.5 * np.exp(-np.square(u))


def smeared_fluidity(p0: DensityField, x: float, alpha: float) -> float:
    """Fluidity of the initial datum after accumulated diffusion x.

    Exact for cell-averaged data: the tail integrals against each cell
    are integrated in closed form, so adjacent evaluations are smooth
    to machine precision (needed by the exponent fit and the strict
    monotonicity property).
    """
    if x < 0:
        raise ValueError(f"accumulated diffusion must be nonnegative, got {x}")
    _require_degenerate(p0, alpha)
    if x == 0.0:
        return 0.0
    grid = p0.grid
    idx = np.nonzero(p0.values > 0.0)[0]
    if idx.size == 0:
        return 0.0
    lo, hi = idx[0], idx[-1] + 1
    v = p0.values[lo:hi]
    edges = grid.edges[lo : hi + 1]
    scale = 0.5 / math.sqrt(x)
    up = (1.0 + edges) * scale
    um = (1.0 - edges) * scale
    a_up = _tail_antiderivative(up)
    a_um = _tail_antiderivative(um)
    per_cell = (a_up[1:] - a_up[:-1]) + (a_um[:-1] - a_um[1:])
    return float(alpha / _SQRT_PI * 2.0 * math.sqrt(x) * (v * per_cell).sum())


def smeared_fluidity_uniform(x: float, alpha: float) -> float:
    """Closed form of the smeared fluidity for the uniform datum on [-1, 1].

    Behaves like alpha/sqrt(pi) * sqrt(x) as x -> 0.
    """
    if not x > 0:
        raise ValueError(f"accumulated diffusion must be positive, got {x}")
    sx = math.sqrt(x)
    tail = 0.5 * _SQRT_PI * math.erfc(1.0 / sx)
    return 2.0 * alpha / _SQRT_PI * (tail - 0.5 * sx * math.exp(-1.0 / x) + 0.5 * sx)


@dataclass(frozen=True)
class DegeneracyReport:
    """Outcome of the uniqueness classification.

    ``criterion_integral`` is the integral of 1/F over (0, 1];
    math.inf marks divergence (the unique case).  ``small_x_exponent``
    is the fitted local power of F near zero (math.inf when F decays
    faster than any power).  ``t_c`` is the critical transport time
    for the supplied protocol (zero shear by default, hence infinity).
    """

    verdict: Verdict
    criterion_integral: float
    small_x_exponent: float
    fit_residual: float
    t_c: float


def _fit_exponent(xs: np.ndarray, fs: np.ndarray) -> tuple[float, float, float]:
    """Least-squares slope of log F vs log x plus max abs residual."""
    lx, lf = np.log(xs), np.log(fs)
    coeffs = np.polyfit(lx, lf, 1)
    resid = lf - np.polyval(coeffs, lx)
    return float(coeffs[0]), float(coeffs[1]), float(np.max(np.abs(resid)))


def _inverse_f_integral(
    p0: DensityField, alpha: float, z: float, n_nodes: int = 2001
) -> float:
    """Integral of 1/F over (0, z] via the exact sqrt substitution.

    With x = u^2 the integrand 2u/F(u^2) extends continuously to u = 0
    whenever F has the square-root behavior of boundary-touching data,
    so a smooth-grid quadrature handles the endpoint without any
    singular head.
    """
    s = math.sqrt(z)
    us = np.linspace(0.0, s, n_nodes)
    g = np.empty_like(us)
    for i, u in enumerate(us):
        if u == 0.0:
            g[i] = 0.0  # replaced by limit below
        else:
            g[i] = 2.0 * u / smeared_fluidity(p0, u * u, alpha)
    g[0] = 2.0 * g[1] - g[2]  # linear extrapolation of the smooth integrand
    from scipy.integrate import simpson

    return float(simpson(g, x=us))


def classify_degenerate(
    p0: DensityField,
    alpha: float,
    protocol: ShearProtocol | None = None,
    fit_range: tuple[float, float] = (1e-8, 1e-2),
    fit_points: int = 25,
    exponent_margin: float = 0.05,
    residual_tol: float = 0.05,
) -> DegeneracyReport:
    """Decide whether the frozen datum is the unique solution.

    The local exponent beta of F near zero is fitted on a log-log
    grid; a clean fit with beta < 1 means 1/F is integrable at zero
    (infinitely many solutions), beta > 1 means it is not (unique).
    Data whose F underflows to zero decay super-polynomially and are
    unique.  Borderline or dirty fits fall back to cutoff integrals
    with decreasing lower limits; if those fail to settle the verdict
    is Inconclusive rather than a silent guess.
    """
    _require_degenerate(p0, alpha)
    t_c = critical_time(p0, protocol or ShearProtocol.zero())

    xs = np.geomspace(fit_range[0], fit_range[1], fit_points)
    fs = np.array([smeared_fluidity(p0, float(x), alpha) for x in xs])
    if np.any(fs < _F_FLOOR):
        return DegeneracyReport(
            verdict=Verdict.UNIQUE,
            criterion_integral=math.inf,
            small_x_exponent=math.inf,
            fit_residual=math.nan,
            t_c=t_c,
        )

    beta, _, resid = _fit_exponent(xs, fs)
    clean = resid <= residual_tol
    if clean and beta <= 1.0 - exponent_margin:
        integral = _inverse_f_integral(p0, alpha, 1.0)
        return DegeneracyReport(Verdict.NON_UNIQUE, integral, beta, resid, t_c)
    if clean and beta >= 1.0 + exponent_margin:
        return DegeneracyReport(Verdict.UNIQUE, math.inf, beta, resid, t_c)

    # cutoff extrapolation: integral of 1/F over [cut, 1] for shrinking cuts
    cuts = [1e-4, 1e-6, 1e-8, 1e-10]
    total = _inverse_f_integral(p0, alpha, 1.0)
    tails = [total - _inverse_f_integral(p0, alpha, cut) for cut in cuts]
    gaps = np.diff(tails)
    if np.all(gaps[1:] <= 0.5 * gaps[:-1] + 1e-12):
        return DegeneracyReport(Verdict.NON_UNIQUE, total, beta, resid, t_c)
    if np.all(gaps[1:] >= gaps[:-1] * 0.99):
        return DegeneracyReport(Verdict.UNIQUE, math.inf, beta, resid, t_c)
    return DegeneracyReport(Verdict.INCONCLUSIVE, math.nan, beta, resid, t_c)


@dataclass(frozen=True)
class EscapeProfile:
    """Accumulated escape diffusion z(t) with z(0) = 0, strictly increasing.

    ``integral(t)`` returns z(t) (the accumulated diffusion feeding the
    heat reconstruction); ``rate_at(t)`` its derivative, the escaping
    fluidity itself.
    """

    gamma: float
    times: np.ndarray
    z_values: np.ndarray
    _spline: CubicSpline = dc_field(repr=False, compare=False, default=None)

    def __post_init__(self) -> None:
        t = np.ascontiguousarray(self.times, dtype=np.float64)
        z = np.ascontiguousarray(self.z_values, dtype=np.float64)
        if t.size != z.size or t.size < 4:
            raise ValueError("need matching time/value tables with >= 4 knots")
        if t[0] != 0.0 or z[0] != 0.0:
            raise ValueError("escape profile must start at (0, 0)")
        if np.any(np.diff(z) <= 0.0):
            raise ValueError("escape profile must be strictly increasing")
        t.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "z_values", z)
        object.__setattr__(self, "_spline", CubicSpline(t, z))

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def integral(self, t: float) -> float:
        self._check(t)
        return max(float(self._spline(t)), 0.0)

    def rate_at(self, t: float) -> float:
        self._check(t)
        return float(self._spline(t, 1))

    def _check(self, t: float) -> None:
        if t < -1e-12 or t > self.horizon * (1.0 + 1e-12):
            raise ValueError(f"t={t} outside escape table range [0, {self.horizon}]")


def escape_profile(
    p0: DensityField,
    alpha: float,
    gamma: float,
    T: float,
    n_knots: int = 1601,
    report: DegeneracyReport | None = None,
) -> EscapeProfile:
    """Invert the escape integral equation on [0, T].

    Solves cumulative(1/F)(z(t)) = (1 - exp(-gamma t))/gamma (or t for
    gamma = 0) for a monotone table of z values.  Only meaningful for
    non-unique data; unique data are rejected.
    """
    if gamma < 0:
        raise ValueError(f"sink rate must be nonnegative, got {gamma}")
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    if report is None:
        report = classify_degenerate(p0, alpha)
    if report.verdict is not Verdict.NON_UNIQUE:
        raise ValueError(
            f"escape profile requires a non-unique verdict, got {report.verdict.value}"
        )

    if gamma > 0.0:
        rho = lambda t: (1.0 - math.exp(-gamma * t)) / gamma
    else:
        rho = lambda t: t
    target = rho(T)

    # cumulative H(s) = integral of 2u/F(u^2) du, tabulated on a fine
    # uniform u-grid grown until it covers the requested horizon
    s_hi = 1.0
    for _ in range(60):
        us, H = _cumulative_inverse_f(p0, alpha, s_hi)
        if H[-1] >= target:
            break
        s_hi *= 1.6
    else:
        raise RuntimeError("failed to bracket the escape range")
    H_interp = PchipInterpolator(us, H)

    knot_t = np.linspace(0.0, T, n_knots)
    z = np.empty_like(knot_t)
    z[0] = 0.0
    from scipy.optimize import brentq

    for i, t in enumerate(knot_t[1:], start=1):
        tgt = rho(float(t))
        j = int(np.searchsorted(H, tgt))
        lo = us[max(j - 1, 0)]
        hi = us[min(j, us.size - 1)]
        if lo == hi:
            s_root = lo
        else:
            s_root = brentq(
                lambda s: float(H_interp(s)) - tgt, lo, hi, xtol=1e-15, rtol=1e-15
            )
        z[i] = s_root * s_root
    return EscapeProfile(gamma=gamma, times=knot_t, z_values=z)


def _cumulative_inverse_f(
    p0: DensityField, alpha: float, s_hi: float, n_nodes: int = 4001
) -> tuple[np.ndarray, np.ndarray]:
    """Nodes u and cumulative integral of 2u/F(u^2) from 0, via Simpson."""
    us = np.linspace(0.0, s_hi, n_nodes)
    g = np.empty_like(us)
    for i, u in enumerate(us[1:], start=1):
        g[i] = 2.0 * u / smeared_fluidity(p0, float(u * u), alpha)
    g[0] = 2.0 * g[1] - g[2]
    h = us[1] - us[0]
    # composite Simpson cumulative on pairs of intervals, trapezoid fill-in
    H = np.zeros_like(us)
    simp = np.zeros_like(us)
    simp[2::2] = np.cumsum(h / 3.0 * (g[:-2:2] + 4.0 * g[1::2][: (n_nodes - 1) // 2] + g[2::2]))
    # use Simpson at even nodes, Simpson + half-step trapezoid at odd ones
    H[2::2] = simp[2::2]
    H[3::2] = simp[2:-1:2] + 0.5 * h * (g[2:-1:2] + g[3::2])
    if n_nodes > 2:
        H[1] = 0.5 * h * (g[0] + g[1])
    return us, H


def branch_solution(
    p0: DensityField,
    alpha: float,
    gamma: float,
    t0: float,
    t: float,
    profile: EscapeProfile | None = None,
) -> DensityField:
    """Member of the escaping family with waiting time t0, at time t.

    Stays frozen at the initial datum until t0, then follows the
    heat-and-decay reconstruction driven by the escape trace.
    """
    if t0 < 0:
        raise ValueError(f"waiting time must be nonnegative, got {t0}")
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    if t <= t0:
        return p0
    if profile is None:
        profile = escape_profile(p0, alpha, gamma, T=t - t0)
    return heat_evolve(p0, profile, gamma, t - t0)


def critical_time(p0: DensityField, protocol: ShearProtocol) -> float:
    """Longest time the evolution can remain a pure transport.

    First instant the advected support of the initial datum sticks out
    of [-1, 1]; infinity when it never does (zero shear in particular).
    """
    s_lo, s_hi = p0.support_interval()
    return first_time_outside(protocol, -1.0 - s_lo, 1.0 - s_hi)
