"""Closed-form Gaussian machinery and a-priori bound constants.

Provides the Gaussian kernel, the unnormalized complementary error
integral, discrete convolution against renormalized grid kernels, the
explicit sub/super-solution envelopes that sandwich every solution of
the frozen-coefficient problem, the smoothed-and-decayed profile used
by the degenerate branch construction, and the lower/upper bound
constants (nu, L-infinity, moment, L2, gradient-energy).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc as _erfc, ndtr as _ndtr

from .core import DensityField, ShearProtocol, StepFunction, StressGrid

__all__ = [
    "EnvelopePair",
    "BoundsReport",
    "gaussian_kernel",
    "gauss_tail_integral",
    "grid_convolve",
    "deposit_point_mass",
    "comparison_envelopes",
    "heat_evolve",
    "apriori_bounds",
    "support_escape_time",
]

_SQRT_PI = math.sqrt(math.pi)


def gaussian_kernel(eta: float, x):
    """Normal density with standard deviation eta, evaluated at x."""
    if not eta > 0:
        raise ValueError(f"kernel width must be positive, got {eta}")
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * (x / eta) ** 2) / (math.sqrt(2.0 * math.pi) * eta)


def gauss_tail_integral(z):
    """Integral of exp(-t^2) from z to infinity.

    This is the complementary error integral without the usual
    2/sqrt(pi) normalization; gauss_tail_integral(0) = sqrt(pi)/2.
    """
    return 0.5 * _SQRT_PI * _erfc(z)


def _discrete_kernel(grid: StressGrid, width: float, shift: float) -> np.ndarray:
    """Gaussian kernel sampled on cell-offset lattice, unit discrete mass.

    Offsets run over d*cell_width - shift for d in [-(n-1), n-1].  The
    kernel is renormalized so its discrete mass is exactly 1, which
    keeps the envelope mass laws exact at the grid level.
    """
    n = grid.n_cells
    dx = grid.cell_width
    offsets = np.arange(-(n - 1), n) * dx - shift
    k = np.exp(-0.5 * (offsets / width) ** 2)
    s = k.sum() * dx
    if s <= 0.0:
        return np.zeros_like(k)
    return k / s


def grid_convolve(
    field: DensityField, width: float, shift: float = 0.0
) -> np.ndarray:
    """Convolve a field with a Gaussian of given width, shifted by shift.

    Returns cell values of sum_j v_j * K(c_i - c_j - shift) * dx with K
    the renormalized discrete kernel.  Widths below half a cell are
    collapsed to a point mass on the grid (sampling a sub-cell Gaussian
    at centers is meaningless).
    """
    grid = field.grid
    n = grid.n_cells
    dx = grid.cell_width
    if width < 0.5 * dx:
        return _shift_by_cells(field.values, grid, shift)
    k = _discrete_kernel(grid, width, shift)
    conv = np.convolve(field.values, k, mode="full")[n - 1 : 2 * n - 1]
    return conv * dx


def _shift_by_cells(values: np.ndarray, grid: StressGrid, shift: float) -> np.ndarray:
    """Shift cell values by the nearest whole number of cells, zero fill."""
    j = int(round(shift / grid.cell_width))
    out = np.zeros_like(values)
    if abs(j) >= values.size:
        return out
    if j == 0:
        out[:] = values
    elif j > 0:
        out[j:] = values[:-j]
    else:
        out[:j] = values[-j:]
    return out


def deposit_point_mass(
    out: np.ndarray, grid: StressGrid, position: float, mass: float
) -> None:
    """Add a point mass at stress ``position`` to cell values, in place.

    If the position coincides with a cell edge the mass is split
    equally between the two flanking cells, matching the time stepper's
    treatment of the reinjection point at sigma = 0.
    """
    dx = grid.cell_width
    q = (position + grid.half_width) / dx
    nearest_edge = round(q)
    n = grid.n_cells
    if abs(q - nearest_edge) < 1e-9:
        left = int(nearest_edge) - 1
        right = int(nearest_edge)
        half = 0.5 * mass / dx
        if 0 <= left < n:
            out[left] += half
        if 0 <= right < n:
            out[right] += half
    else:
        cell = int(math.floor(q))
        if 0 <= cell < n:
            out[cell] += mass / dx


@dataclass(frozen=True)
class EnvelopePair:
    """Lower/upper comparison profiles at one time."""

    lower: DensityField
    upper: DensityField
    t: float


def _heat_time_primitive(v: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Primitive in v of the heat kernel of variance v at offset x.

    P(v; x) = integral over [0, v] of exp(-x^2/(2w)) / sqrt(2 pi w) dw
            = 2 [ sqrt(v/(2 pi)) exp(-x^2/(2v)) - |x| N(-|x|/sqrt(v)) ]
    with N the standard normal distribution function.  Lets the
    envelope's source term be integrated exactly in time across its
    integrable endpoint singularity.
    """
    v = np.asarray(v, dtype=np.float64)
    ax = np.abs(x)
    out = np.zeros(np.broadcast(v, ax).shape)
    pos = v > 0.0
    vv = np.where(pos, v, 1.0)
    val = 2.0 * (
        np.sqrt(vv / (2.0 * math.pi)) * np.exp(-0.5 * ax**2 / vv)
        - ax * _ndtr(-ax / np.sqrt(vv))
    )
    return np.where(pos, val, out)


def comparison_envelopes(
    p0: DensityField,
    a_history: StepFunction,
    dq_history: StepFunction,
    protocol: ShearProtocol,
    t: float,
    alpha: float,
) -> EnvelopePair:
    """Explicit sub/super-solution profiles at time t.

    ``a_history`` is the diffusion coefficient actually used by the
    stepper (fluidity + epsilon) and ``dq_history`` the fluidity trace
    feeding the reinjection source.  The lower profile is the decayed,
    smeared, advected initial datum; the upper one drops the decay and
    adds the accumulated source contributions, each slab integrated
    exactly in time (the kernel-variance primitive absorbs the
    square-root singularity at the emission time).
    """
    slack = 1e-12 * (1.0 + a_history.horizon)
    if t < -slack or t > a_history.horizon + slack:
        raise ValueError(f"t={t} outside history range [0, {a_history.horizon}]")
    if np.any(a_history.values < 0.0) or np.any(dq_history.values < 0.0):
        raise ValueError("envelope histories must be nonnegative step functions")
    grid = p0.grid
    dx = grid.cell_width
    chi_t = protocol.integral(t)
    width0 = math.sqrt(max(2.0 * a_history.integral(t), 0.0))
    base = grid_convolve(p0, width0, chi_t)
    lower = math.exp(-t) * base

    source = np.zeros(grid.n_cells)
    breaks = dq_history.breaks
    n_slabs = int(np.searchsorted(breaks, t - 1e-15))
    for k in range(n_slabs):
        s_lo = float(breaks[k])
        s_hi = min(float(breaks[k + 1]), t)
        d_k = float(dq_history.values[k])
        m_k = d_k * (s_hi - s_lo) / alpha
        if m_k == 0.0:
            continue
        a_k = float(a_history.values[k])
        v_hi = max(2.0 * a_history.integral_between(s_hi, t), 0.0)
        v_lo = v_hi + 2.0 * a_k * (s_hi - s_lo)
        # deposits travel with the advection from their release time
        pos_k = chi_t - protocol.integral(s_lo)
        offsets = grid.centers - pos_k
        if a_k > 0.0:
            prof = (
                d_k
                / (2.0 * alpha * a_k)
                * (_heat_time_primitive(v_lo, offsets) - _heat_time_primitive(v_hi, offsets))
            )
        elif v_hi > (0.5 * dx) ** 2:
            prof = m_k * np.exp(-0.5 * offsets**2 / v_hi) / math.sqrt(2.0 * math.pi * v_hi)
        else:
            deposit_point_mass(source, grid, pos_k, m_k)
            continue
        s = prof.sum() * dx
        if s > 0.0:
            source += prof * (m_k / s)
    upper = base + source
    return EnvelopePair(
        lower=DensityField(grid, np.maximum(lower, 0.0)),
        upper=DensityField(grid, np.maximum(upper, 0.0)),
        t=t,
    )


def heat_evolve(p0: DensityField, d_trace, gamma: float, t: float) -> DensityField:
    """Profile after heat flow with trace d_trace and uniform decay gamma.

    ``d_trace`` only needs an ``integral(t)`` method returning the
    accumulated diffusion; while that integral is zero the profile is
    just the decayed initial datum.
    """
    if gamma < 0:
        raise ValueError(f"decay rate must be nonnegative, got {gamma}")
    if t < 0:
        raise ValueError(f"time must be nonnegative, got {t}")
    x = d_trace.integral(t)
    if x < 0:
        raise ValueError("diffusion trace integrated to a negative value")
    decay = math.exp(-gamma * t)
    if x == 0.0:
        return DensityField(p0.grid, decay * p0.values)
    vals = decay * grid_convolve(p0, math.sqrt(2.0 * x), 0.0)
    return DensityField(p0.grid, np.maximum(vals, 0.0))


def _mass_outside_window(field: DensityField, chi: float) -> float:
    """Mass outside [-1 - chi, 1 - chi], exact for cell-averaged fields."""
    e = field.grid.edges
    lo, hi = -1.0 - chi, 1.0 - chi
    inside = np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None)
    return float(field.mass() - (field.values * inside).sum())


def _time_samples(protocol: ShearProtocol, t_lo: float, t_hi: float) -> np.ndarray:
    """Dense sampling of [t_lo, t_hi] refined within protocol pieces."""
    pts = [t_lo, t_hi]
    pts += [b for b in protocol.breakpoints if t_lo < b < t_hi]
    pts = sorted(set(pts))
    samples = []
    for a, b in zip(pts[:-1], pts[1:]):
        samples.append(np.linspace(a, b, 129))
    return np.unique(np.concatenate(samples)) if samples else np.array([t_lo])


def support_escape_time(p0: DensityField, protocol: ShearProtocol) -> float:
    """First time the advected support no longer sticks out of [-1, 1].

    Infinity if the mass outside the moving window never vanishes.
    Mirrors the entry-time of chi(t) into the interval of shifts that
    swallow the support.
    """
    s_lo, s_hi = p0.support_interval()
    c_lo, c_hi = -1.0 - s_lo, 1.0 - s_hi
    if c_lo > c_hi:  # support wider than 2: never swallowed
        return math.inf
    return _first_time_inside(protocol, c_lo, c_hi)


def _first_time_inside(protocol: ShearProtocol, lo: float, hi: float) -> float:
    """First t >= 0 with chi(t) in [lo, hi]; inf if never."""
    chi = 0.0
    t = 0.0
    pieces = protocol.pieces
    for (start, b), nxt in zip(
        pieces, [p[0] for p in pieces[1:]] + [math.inf]
    ):
        if lo <= chi <= hi:
            return t
        seg = nxt - start
        if b != 0.0:
            target = lo if chi < lo else hi
            if (target - chi) * b > 0:
                dt_hit = (target - chi) / b
                if dt_hit <= seg:
                    return t + dt_hit
        if math.isinf(nxt):
            break
        chi += b * seg
        t = nxt
    return t if lo <= chi <= hi else math.inf


def first_time_outside(protocol: ShearProtocol, lo: float, hi: float) -> float:
    """First t >= 0 with chi(t) strictly outside [lo, hi]; inf if never."""
    if not lo <= 0.0 <= hi:
        return 0.0
    chi = 0.0
    t = 0.0
    pieces = protocol.pieces
    for (start, b), nxt in zip(
        pieces, [p[0] for p in pieces[1:]] + [math.inf]
    ):
        seg = nxt - start
        if b > 0.0:
            dt_hit = (hi - chi) / b
            if dt_hit < seg or (math.isinf(nxt) and math.isfinite(dt_hit)):
                return t + dt_hit
        elif b < 0.0:
            dt_hit = (lo - chi) / b
            if dt_hit < seg or (math.isinf(nxt) and math.isfinite(dt_hit)):
                return t + dt_hit
        if math.isinf(nxt):
            return math.inf
        chi += b * seg
        t = nxt
    return math.inf


@dataclass(frozen=True)
class BoundsReport:
    """A-priori bound constants for a run on [0, T].

    nu = min(nu1, nu2) bounds the fluidity from below; linf_bound the
    solution sup; c1 the absolute first moment; c2 the squared L2 norm;
    c3 the diffusion-weighted gradient energy.  ``degenerate`` flags
    initial data with zero fluidity, for which nu = 0.
    """

    nu1: float
    nu2: float
    nu: float
    linf_bound: float
    c1: float
    c2: float
    c3: float
    t_star_input: float
    degenerate: bool


def apriori_bounds(
    p0: DensityField, protocol: ShearProtocol, alpha: float, T: float
) -> BoundsReport:
    """Bound constants for the regularized evolution on [0, T]."""
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    from .core import observables as _obs

    obs0 = _obs(p0, alpha)
    sup0 = p0.max_value()
    linf = sup0 + math.sqrt(alpha / math.pi) * math.sqrt(T)
    b_l2 = protocol.l2_norm(T)
    c1 = (
        obs0.abs_moment
        + math.sqrt(T) * (2.0 * math.sqrt(1.0 + alpha) / _SQRT_PI + b_l2)
        + (2.0 / 3.0) * T ** 1.5 * (1.0 + 2.0 * math.sqrt(1.0 + alpha) / _SQRT_PI)
    )
    c2 = sup0 + math.sqrt(alpha) * math.sqrt(T) / _SQRT_PI
    c3 = sup0 * (0.5 + T) + math.sqrt(alpha / math.pi) * T ** 1.5

    t_star = support_escape_time(p0, protocol)
    if obs0.fluidity <= 0.0:
        return BoundsReport(
            nu1=0.0, nu2=0.0, nu=0.0, linf_bound=linf,
            c1=c1, c2=c2, c3=c3, t_star_input=t_star, degenerate=True,
        )

    def nu1_at(horizon: float) -> float:
        ts = _time_samples(protocol, 0.0, horizon)
        m_min = min(_mass_outside_window(p0, protocol.integral(s)) for s in ts)
        return 0.5 * alpha * math.exp(-horizon) * max(m_min, 0.0)

    nu1 = nu1_at(T)
    if math.isinf(t_star) or T < 0.5 * t_star:
        nu2 = math.inf
    else:
        w = math.sqrt(2.0 * t_star * nu1_at(0.5 * t_star))
        chi_star = protocol.integral(t_star)
        ts = _time_samples(protocol, 0.5 * t_star, T)
        vals = [
            float(
                gauss_tail_integral((2.0 - chi_star + protocol.integral(s)) / w)
                + gauss_tail_integral((2.0 + chi_star - protocol.integral(s)) / w)
            )
            for s in ts
        ]
        nu2 = alpha / _SQRT_PI * math.exp(-T) * min(vals)
    nu = min(nu1, nu2)
    return BoundsReport(
        nu1=nu1, nu2=nu2, nu=nu, linf_bound=linf,
        c1=c1, c2=c2, c3=c3, t_star_input=t_star, degenerate=False,
    )
