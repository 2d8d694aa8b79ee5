import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import erfc

from hllab import (
    ShearProtocol,
    Verdict,
    branch_solution,
    build_grid,
    classify_degenerate,
    critical_time,
    density_from_cell_values,
    escape_profile,
    smeared_fluidity,
    smeared_fluidity_uniform,
    uniform_density,
)


@pytest.fixture(scope="module")
def grid():
    return build_grid(8.0, 1600)


@pytest.fixture(scope="module")
def uniform_p0(grid):
    return uniform_density(grid, -1.0, 1.0)


def _quad_oracle(x, alpha):
    """Direct adaptive quadrature of the smeared-fluidity integrand."""

    def integrand(sp):
        e = lambda z: 0.5 * math.sqrt(math.pi) * erfc(z)
        s = 2.0 * math.sqrt(x)
        return 0.5 * (e((1.0 + sp) / s) + e((1.0 - sp) / s))

    val, err = quad(integrand, -1.0, 1.0, epsabs=1e-14, limit=200)
    return alpha / math.sqrt(math.pi) * val


class TestSmearedFluidity:
    def test_zero_diffusion(self, uniform_p0):
        assert smeared_fluidity(uniform_p0, 0.0, 1.0) == 0.0

    def test_negative_rejected(self, uniform_p0):
        with pytest.raises(ValueError):
            smeared_fluidity(uniform_p0, -1e-6, 1.0)

    def test_nondegenerate_rejected(self, grid):
        wide = uniform_density(grid, -2.0, 2.0)
        with pytest.raises(ValueError):
            smeared_fluidity(wide, 1.0, 1.0)
        with pytest.raises(ValueError):
            classify_degenerate(wide, 1.0)

    def test_closed_form_agreement(self, uniform_p0):
        for x in np.geomspace(1e-6, 1e2, 40):
            fe = smeared_fluidity(uniform_p0, float(x), 1.0)
            fc = smeared_fluidity_uniform(float(x), 1.0)
            assert abs(fe - fc) <= 1e-8 * (1.0 + fc)

    def test_quadrature_oracle(self, uniform_p0):
        for x in (1e-3, 1.0, 10.0):
            oracle = _quad_oracle(x, 1.0)
            assert smeared_fluidity(uniform_p0, x, 1.0) == pytest.approx(
                oracle, rel=1e-10
            )
            assert smeared_fluidity_uniform(x, 1.0) == pytest.approx(oracle, rel=1e-10)

    def test_small_x_asymptote(self):
        x = 1e-4
        assert smeared_fluidity_uniform(x, 1.0) == pytest.approx(
            math.sqrt(x) / math.sqrt(math.pi), rel=0.01
        )

    def test_alpha_linearity(self, uniform_p0):
        for x in (0.01, 1.0):
            f1 = smeared_fluidity(uniform_p0, x, 1.0)
            f2 = smeared_fluidity(uniform_p0, x, 2.0)
            assert f2 == pytest.approx(2.0 * f1, rel=1e-14)

    def test_large_x_limit(self, grid):
        bump = uniform_density(grid, -0.05, 0.05)
        val = smeared_fluidity(bump, 1e4, 1.0)
        assert val == pytest.approx(1.0 * bump.mass(), rel=0.01)

    def test_strict_monotonicity_random(self, grid):
        # boundary-adjacent mass keeps F well above the underflow floor
        rng = np.random.default_rng(42)
        inner = np.abs(grid.centers) < 1.0
        for _ in range(5):
            vals = np.zeros(grid.n_cells)
            vals[inner] = 0.05 + rng.random(inner.sum())
            p0 = density_from_cell_values(grid, vals, normalize=True)
            xs = np.geomspace(1e-6, 1e2, 30)
            fs = [smeared_fluidity(p0, float(x), 1.0) for x in xs]
            assert all(b > a for a, b in zip(fs, fs[1:]))

    def test_continuity_at_zero(self, uniform_p0):
        vals = [smeared_fluidity(uniform_p0, x, 1.0) for x in (1e-4, 1e-8, 1e-12)]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-6

    def test_interior_support_underflows_to_zero(self, grid):
        # strictly interior support decays faster than any power; at
        # double precision this is an exact zero plateau near x = 0
        p0 = uniform_density(grid, -0.5, 0.5)
        assert smeared_fluidity(p0, 1e-8, 1.0) == 0.0
        assert smeared_fluidity(p0, 1.0, 1.0) > 0.0


class TestClassifier:
    def test_uniform_non_unique(self, uniform_p0):
        rep = classify_degenerate(uniform_p0, 1.0)
        assert rep.verdict is Verdict.NON_UNIQUE
        assert rep.small_x_exponent == pytest.approx(0.5, abs=0.05)
        assert math.isfinite(rep.criterion_integral)
        assert rep.criterion_integral > 0
        assert math.isinf(rep.t_c)

    def test_interior_support_unique(self, grid):
        p0 = uniform_density(grid, -0.5, 0.5)
        rep = classify_degenerate(p0, 1.0)
        assert rep.verdict is Verdict.UNIQUE
        assert math.isinf(rep.criterion_integral)

    def test_one_sided_non_unique(self, grid):
        p0 = uniform_density(grid, 0.0, 1.0)
        rep = classify_degenerate(p0, 1.0)
        assert rep.verdict is Verdict.NON_UNIQUE
        assert rep.small_x_exponent == pytest.approx(0.5, abs=0.05)


class TestEscapeProfile:
    def test_starts_at_zero(self, uniform_p0):
        prof = escape_profile(uniform_p0, 1.0, 0.0, T=0.5)
        assert prof.integral(0.0) == 0.0
        assert np.all(np.diff(prof.z_values) > 0)

    def test_small_time_law(self, uniform_p0):
        prof = escape_profile(uniform_p0, 1.0, 0.0, T=1.0)
        t = 1e-3
        law = (t / (2.0 * math.sqrt(math.pi))) ** 2
        assert prof.integral(t) / law == pytest.approx(1.0, rel=0.02)

    @pytest.mark.parametrize("gamma", [0.0, 1.0])
    def test_integral_equation_residual(self, uniform_p0, gamma):
        prof = escape_profile(uniform_p0, 1.0, gamma, T=1.0)
        ts = np.concatenate(
            [prof.times[1:], 0.5 * (prof.times[1:-1] + prof.times[2:])]
        )
        worst = max(
            abs(
                prof.rate_at(float(t))
                - math.exp(-gamma * t)
                * smeared_fluidity(uniform_p0, prof.integral(float(t)), 1.0)
            )
            for t in ts
        )
        assert worst <= 1e-6

    def test_unique_data_rejected(self, grid):
        p0 = uniform_density(grid, -0.5, 0.5)
        with pytest.raises(ValueError):
            escape_profile(p0, 1.0, 0.0, T=1.0)

    def test_negative_gamma_rejected(self, uniform_p0):
        with pytest.raises(ValueError):
            escape_profile(uniform_p0, 1.0, -0.5, T=1.0)


class TestBranchSolution:
    def test_frozen_before_waiting_time(self, uniform_p0):
        out = branch_solution(uniform_p0, 1.0, 0.0, t0=2.0, t=1.0)
        assert out is uniform_p0

    def test_mass_conserved_without_sink(self, uniform_p0):
        prof = escape_profile(uniform_p0, 1.0, 0.0, T=1.0)
        out = branch_solution(uniform_p0, 1.0, 0.0, 0.0, 1.0, profile=prof)
        assert out.mass() == pytest.approx(1.0, abs=1e-9)

    def test_mass_decays_with_sink(self, uniform_p0):
        prof = escape_profile(uniform_p0, 1.0, 1.0, T=1.0)
        out = branch_solution(uniform_p0, 1.0, 1.0, 0.0, 1.0, profile=prof)
        assert out.mass() == pytest.approx(math.exp(-1.0), abs=1e-9)

    def test_branches_distinct(self, uniform_p0):
        prof = escape_profile(uniform_p0, 1.0, 0.0, T=1.0)
        q0 = branch_solution(uniform_p0, 1.0, 0.0, 0.0, 1.0, profile=prof)
        q1 = branch_solution(uniform_p0, 1.0, 0.0, 1.0, 1.0, profile=prof)
        grid = uniform_p0.grid
        dist = math.sqrt(grid.cell_width * ((q0.values - q1.values) ** 2).sum())
        assert dist > 0.1

    @pytest.mark.parametrize("gamma", [0.0, 1.0])
    def test_weak_pde_residual(self, uniform_p0, gamma):
        # centered time difference against the frozen-trace operator
        grid = uniform_p0.grid
        prof = escape_profile(uniform_p0, 1.0, gamma, T=1.0)
        dt = 1e-4
        dx = grid.cell_width
        psi = np.exp(-0.5 * (grid.centers / 0.7) ** 2)
        for t in (0.3, 0.7):
            wm = branch_solution(uniform_p0, 1.0, gamma, 0.0, t - dt, profile=prof)
            w0 = branch_solution(uniform_p0, 1.0, gamma, 0.0, t, profile=prof)
            wp = branch_solution(uniform_p0, 1.0, gamma, 0.0, t + dt, profile=prof)
            dwdt = (wp.values - wm.values) / (2.0 * dt)
            pad = np.concatenate(([0.0], w0.values, [0.0]))
            lap = (pad[2:] - 2.0 * pad[1:-1] + pad[:-2]) / dx**2
            rhs = prof.rate_at(t) * lap - gamma * w0.values
            weak = abs(((dwdt - rhs) * psi).sum() * dx)
            assert weak < 1e-3


class TestCriticalTime:
    def test_zero_shear_never(self, uniform_p0):
        assert math.isinf(critical_time(uniform_p0, ShearProtocol.zero()))

    def test_half_support_constant_shear(self, grid):
        p0 = uniform_density(grid, -0.5, 0.5)
        assert critical_time(p0, ShearProtocol.constant(1.0)) == pytest.approx(0.5)
        assert critical_time(p0, ShearProtocol.constant(-1.0)) == pytest.approx(0.5)

    def test_boundary_touching_support(self, uniform_p0):
        assert critical_time(uniform_p0, ShearProtocol.constant(1.0)) == 0.0

    def test_piecewise(self, grid):
        p0 = uniform_density(grid, -0.5, 0.5)
        proto = ShearProtocol(pieces=((0.0, 1.0), (0.2, -2.0)))
        # chi climbs to 0.2 then descends; hits -0.5 at t = 0.2 + 0.7/2
        assert critical_time(p0, proto) == pytest.approx(0.55)
