"""Grids, density fields, shear protocols and observables.

Everything downstream (time stepping, closed-form envelopes, steady
states) works on the objects defined here.  The stress axis is
discretized into uniform cells whose edges are required to hit the
special abscissae sigma = -1, 0, +1 exactly, so that the yielded-region
indicator and the stress-reinjection point are grid-exact.

Units follow the rescaled model (critical stress and relaxation time
both equal to 1): sigma is dimensionless stress, densities carry
1/stress, the fluidity D carries stress^2/time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "GridAlignmentError",
    "ModelParams",
    "StressGrid",
    "DensityField",
    "ShearProtocol",
    "StepFunction",
    "Observables",
    "build_grid",
    "observables",
    "fluidity",
    "shear_integral",
    "uniform_density",
    "gaussian_density",
    "density_from_cell_values",
]


class GridAlignmentError(ValueError):
    """Requested grid cannot place -1, 0, +1 on cell edges."""


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of a run.

    alpha. . . . . mechanical fragility (> 0)
    epsilon. . . . viscosity floor of the regularized system (0 <= eps <= 1)
    half_width . . stress-axis truncation L (> 1)
    n_cells. . . . number of cells (even; n_cells/(2*half_width) integer)
    tol_*. . . . . tolerances used by mass checks, root finds, ODE residuals
    """

    alpha: float
    epsilon: float = 0.0
    half_width: float = 8.0
    n_cells: int = 1600
    tol_mass: float = 1e-6
    tol_root: float = 1e-12
    tol_ode: float = 1e-6

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not self.half_width > 1:
            raise ValueError(f"half_width must exceed 1, got {self.half_width}")
        for name in ("tol_mass", "tol_root", "tol_ode"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def grid(self) -> "StressGrid":
        return build_grid(self.half_width, self.n_cells)


@dataclass(frozen=True)
class StressGrid:
    """Uniform cell partition of [-L, L] with -1, 0, +1 on cell edges.

    ``edge_unit`` is the number of cells per unit stress; the alignment
    constraint is exactly that this is a positive integer.
    """

    half_width: float
    n_cells: int
    edge_unit: int

    @cached_property
    def cell_width(self) -> float:
        return 1.0 / self.edge_unit

    @cached_property
    def edges(self) -> np.ndarray:
        idx = np.arange(self.n_cells + 1) - self.n_cells // 2
        e = idx / self.edge_unit
        e.setflags(write=False)
        return e

    @cached_property
    def centers(self) -> np.ndarray:
        c = 0.5 * (self.edges[:-1] + self.edges[1:])
        c.setflags(write=False)
        return c

    @cached_property
    def outer_mask(self) -> np.ndarray:
        """Cells entirely outside [-1, 1] (grid-exact split)."""
        m = np.abs(self.centers) > 1.0
        m.setflags(write=False)
        return m

    @cached_property
    def center_flank_indices(self) -> tuple[int, int]:
        """Indices of the two cells sharing the edge at sigma = 0."""
        half = self.n_cells // 2
        return half - 1, half


def _nearest_aligned_n(half_width: float, n_cells: int) -> int:
    """Closest admissible cell count for the given half width."""
    m_guess = n_cells / (2.0 * half_width)
    best = None
    for m in range(max(1, math.floor(m_guess) - 2), math.ceil(m_guess) + 3):
        n = 2.0 * half_width * m
        n_int = round(n)
        if abs(n - n_int) > 1e-9 or n_int % 2 or n_int <= 0:
            continue
        if best is None or abs(n_int - n_cells) < abs(best - n_cells):
            best = n_int
    if best is None:
        raise GridAlignmentError(
            f"no admissible n_cells near {n_cells} for half_width={half_width}; "
            "half_width must be rational with a small denominator"
        )
    return best


def build_grid(half_width: float, n_cells: int) -> StressGrid:
    """Construct a StressGrid, rejecting misaligned requests.

    Admissibility: n_cells even and n_cells/(2*half_width) a positive
    integer, which puts -1, 0, +1 bit-exactly on cell edges.
    """
    if not half_width > 1:
        raise ValueError(f"half_width must exceed 1, got {half_width}")
    if n_cells <= 0:
        raise ValueError(f"n_cells must be positive, got {n_cells}")
    m = n_cells / (2.0 * half_width)
    m_int = round(m)
    aligned = (
        n_cells % 2 == 0
        and m_int >= 1
        and abs(m - m_int) < 1e-12
        and (n_cells / 2) / m_int == half_width
    )
    if not aligned:
        nearest = _nearest_aligned_n(half_width, n_cells)
        raise GridAlignmentError(
            f"n_cells={n_cells} does not align -1, 0, +1 with cell edges for "
            f"half_width={half_width}; nearest admissible n_cells is {nearest}"
        )
    return StressGrid(half_width=half_width, n_cells=n_cells, edge_unit=m_int)


@dataclass(frozen=True)
class DensityField:
    """Nonnegative cell-averaged density on a StressGrid."""

    grid: StressGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if vals.shape != (self.grid.n_cells,):
            raise ValueError(
                f"values must have shape ({self.grid.n_cells},), got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("density values must be finite")
        if vals.min(initial=0.0) < 0.0:
            raise ValueError(f"density values must be nonnegative, min={vals.min()}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def mass(self) -> float:
        return float(self.grid.cell_width * self.values.sum())

    def max_value(self) -> float:
        return float(self.values.max())

    def with_values(self, values: np.ndarray) -> "DensityField":
        return DensityField(self.grid, values)

    def support_interval(self) -> tuple[float, float]:
        """Smallest [lo, hi] of cell edges containing all positive cells."""
        idx = np.nonzero(self.values > 0.0)[0]
        if idx.size == 0:
            return 0.0, 0.0
        return float(self.grid.edges[idx[0]]), float(self.grid.edges[idx[-1] + 1])


@dataclass(frozen=True)
class Observables:
    """Integral observables of a density field."""

    mass: float
    fluidity: float
    mean_stress: float
    abs_moment: float


def observables(field: DensityField, alpha: float) -> Observables:
    """Mass, fluidity D, mean stress tau and absolute first moment.

    The fluidity is alpha times the mass outside [-1, 1]; the split is
    grid-exact because +-1 sit on cell edges.
    """
    g = field.grid
    v = field.values
    dx = g.cell_width
    return Observables(
        mass=float(dx * v.sum()),
        fluidity=float(alpha * dx * v[g.outer_mask].sum()),
        mean_stress=float(dx * (g.centers * v).sum()),
        abs_moment=float(dx * (np.abs(g.centers) * v).sum()),
    )


def fluidity(field: DensityField, alpha: float) -> float:
    """alpha * (mass outside [-1, 1])."""
    g = field.grid
    return float(alpha * g.cell_width * field.values[g.outer_mask].sum())


@dataclass(frozen=True)
class ShearProtocol:
    """Piecewise-constant-in-time shear rate b(t).

    ``pieces`` is an ordered tuple of (t_start, b_value); the first
    piece starts at t = 0 and each piece holds until the next start.
    """

    pieces: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if not self.pieces:
            raise ValueError("protocol needs at least one piece")
        starts = [p[0] for p in self.pieces]
        if starts[0] != 0.0:
            raise ValueError(f"first piece must start at t=0, got {starts[0]}")
        if any(b >= a for a, b in zip(starts[1:], starts[:-1])):
            raise ValueError("piece start times must be strictly increasing")
        object.__setattr__(
            self,
            "pieces",
            tuple((float(t), float(b)) for t, b in self.pieces),
        )

    @classmethod
    def constant(cls, b: float) -> "ShearProtocol":
        return cls(pieces=((0.0, float(b)),))

    @classmethod
    def zero(cls) -> "ShearProtocol":
        return cls.constant(0.0)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(p[0] for p in self.pieces)

    def value(self, t: float) -> float:
        if t < 0:
            raise ValueError(f"protocol time must be nonnegative, got {t}")
        b = self.pieces[0][1]
        for start, val in self.pieces:
            if start <= t:
                b = val
            else:
                break
        return b

    def integral(self, t: float) -> float:
        """Accumulated shear chi(t) = integral of b over [0, t], exact."""
        if t < 0:
            raise ValueError(f"protocol time must be nonnegative, got {t}")
        chi = 0.0
        for (start, val), nxt in zip(
            self.pieces, list(self.breakpoints[1:]) + [math.inf]
        ):
            if t <= start:
                break
            chi += val * (min(t, nxt) - start)
        return chi

    def l2_norm(self, T: float) -> float:
        """L2 norm of b over [0, T], exact for piecewise-constant b."""
        acc = 0.0
        for (start, val), nxt in zip(
            self.pieces, list(self.breakpoints[1:]) + [math.inf]
        ):
            if T <= start:
                break
            acc += val * val * (min(T, nxt) - start)
        return math.sqrt(acc)

    def max_abs(self, T: float) -> float:
        vals = [abs(v) for s, v in self.pieces if s < T] or [abs(self.pieces[0][1])]
        return max(vals)


def shear_integral(protocol: ShearProtocol, t: float) -> float:
    """Accumulated shear chi(t); rejects t < 0."""
    return protocol.integral(t)


@dataclass(frozen=True)
class StepFunction:
    """Right-open step function of time on [0, breaks[-1]].

    Value on [breaks[k], breaks[k+1]) is values[k]; used for the
    recorded diffusion-coefficient and source traces of a run.
    """

    breaks: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        br = np.ascontiguousarray(self.breaks, dtype=np.float64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if br.ndim != 1 or vals.ndim != 1 or br.size != vals.size + 1:
            raise ValueError("need len(breaks) == len(values) + 1")
        if br[0] != 0.0:
            raise ValueError("breaks must start at 0")
        if np.any(np.diff(br) <= 0):
            raise ValueError("breaks must be strictly increasing")
        br.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breaks", br)
        object.__setattr__(self, "values", vals)

    @cached_property
    def _cumulative(self) -> np.ndarray:
        c = np.concatenate(([0.0], np.cumsum(self.values * np.diff(self.breaks))))
        c.setflags(write=False)
        return c

    @property
    def horizon(self) -> float:
        return float(self.breaks[-1])

    def _locate(self, t: float) -> int:
        slack = 1e-12 * (1.0 + self.horizon)
        if t < -slack or t > self.horizon + slack:
            raise ValueError(f"t={t} outside recorded range [0, {self.horizon}]")
        k = int(np.searchsorted(self.breaks, t, side="right") - 1)
        return min(max(k, 0), self.values.size - 1)

    def value_at(self, t: float) -> float:
        return float(self.values[self._locate(t)])

    def integral(self, t: float) -> float:
        k = self._locate(t)
        return float(self._cumulative[k] + self.values[k] * (t - self.breaks[k]))

    def integral_between(self, s: float, t: float) -> float:
        return self.integral(t) - self.integral(s)


def _overlap(lo: np.ndarray, hi: np.ndarray, a: float, b: float) -> np.ndarray:
    return np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)


def uniform_density(grid: StressGrid, lo: float, hi: float) -> DensityField:
    """Cell-averaged uniform probability density on [lo, hi].

    Exact when lo and hi coincide with cell edges; partially covered
    cells receive their overlap fraction otherwise.
    """
    if not hi > lo:
        raise ValueError(f"need hi > lo, got [{lo}, {hi}]")
    e = grid.edges
    vals = _overlap(e[:-1], e[1:], lo, hi) / (grid.cell_width * (hi - lo))
    return DensityField(grid, vals)


def gaussian_density(
    grid: StressGrid, mean: float = 0.0, width: float = 1.0, normalize: bool = True
) -> DensityField:
    """Cell averages of a normal density, truncated to the grid.

    With ``normalize`` the values are rescaled so the grid mass is
    exactly 1 (the truncation loss is reassigned explicitly, never
    silently).
    """
    from scipy.special import ndtr

    if not width > 0:
        raise ValueError(f"width must be positive, got {width}")
    cdf = ndtr((grid.edges - mean) / width)
    vals = np.diff(cdf) / grid.cell_width
    field = DensityField(grid, vals)
    if normalize:
        m = field.mass()
        if m <= 0:
            raise ValueError("gaussian mass vanished on the grid")
        field = DensityField(grid, vals / m)
    return field


def density_from_cell_values(
    grid: StressGrid, values: np.ndarray, normalize: bool = False
) -> DensityField:
    """Wrap raw per-cell averages, optionally rescaling to unit mass."""
    field = DensityField(grid, np.asarray(values, dtype=np.float64))
    if normalize:
        m = field.mass()
        if m <= 0:
            raise ValueError("cannot normalize a field with nonpositive mass")
        field = DensityField(grid, field.values / m)
    return field
