import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fisherkin.functionals import OverflowGuardError, entropy, moment
from fisherkin.grid import Distribution, gradient, make_grid, maxwellian, quadrature
from fisherkin.landau import (
    StaleFieldsError,
    constant_test_function,
    drift_bounds,
    ellipticity_constant,
    energy_test_function,
    entropy_production,
    exp_test_function,
    landau_fields,
    landau_op,
    max_eigenvalue,
    sqrt_energy_terms,
    upper_ellipticity_constant,
    weak_moment_rhs,
)

from conftest import smooth_field

# Frozen outputs of tests/oracles/generate.py
A_DIAG_ORIGIN = 4.2553843242819486
DIVB_ORIGIN = -12.766152972845846

G8 = make_grid(3, 8, 4.0)
G16 = make_grid(3, 16, 6.0)
seeds = st.integers(0, 2**32 - 1)


def dist(grid, seed, width=1.0):
    return Distribution(grid, smooth_field(grid, seed, width))


@pytest.fixture(scope="module")
def maxwell_fields(fine_maxwellian):
    return landau_fields(fine_maxwellian, 1.0)


class TestFields:
    @staticmethod
    def origin_average(arr, n):
        # the eight nodes around the origin; odd terms in v cancel exactly
        c = n // 2
        return arr[..., c - 1 : c + 1, c - 1 : c + 1, c - 1 : c + 1].mean(axis=(-3, -2, -1))

    def test_origin_oracle(self):
        # the octant average is a(0) + O(h^2); extrapolate in h^2 from two grids
        est = {}
        for n in (48, 64):
            g = make_grid(3, n, 6.0)
            flds = landau_fields(Distribution(g, maxwellian(g)), 1.0)
            est[g.h] = (self.origin_average(flds.a, n), self.origin_average(flds.divb, n))
        (h1, (a1, d1)), (h2, (a2, d2)) = sorted(est.items())
        w = h2**2 / (h2**2 - h1**2)
        a0 = w * a1 + (1 - w) * a2
        divb0 = w * d1 + (1 - w) * d2
        np.testing.assert_allclose(np.diag(a0), A_DIAG_ORIGIN, rtol=1e-3)
        assert divb0 == pytest.approx(DIVB_ORIGIN, rel=1e-3)

    def test_isotropic_at_origin(self, maxwell_fields, fine_maxwellian):
        a = self.origin_average(maxwell_fields.a, fine_maxwellian.grid.n)
        off = a - np.diag(np.diag(a))
        assert np.max(np.abs(off)) <= 1e-3 * np.min(np.diag(a))

    def test_fft_matches_direct(self):
        f = dist(G8, 3)
        a = landau_fields(f, 0.5, "fft")
        b = landau_fields(f, 0.5, "direct")
        for name in ("a", "b", "divb", "drift"):
            x, y = getattr(a, name), getattr(b, name)
            assert np.max(np.abs(x - y)) <= 1e-10 * np.max(np.abs(y)), name

    @settings(max_examples=10, deadline=None)
    @given(seeds, st.sampled_from([0.0, 0.5, 1.0]))
    def test_symmetric_positive_semidefinite(self, seed, gamma):
        flds = landau_fields(dist(G8, seed), gamma)
        np.testing.assert_array_equal(flds.a, np.swapaxes(flds.a, 0, 1))
        eig = np.linalg.eigvalsh(np.moveaxis(flds.a.reshape(3, 3, -1), -1, 0))
        assert eig.min() >= -1e-12 * eig.max()

    def test_divergence_consistent_with_b(self):
        errs = []
        for n in (16, 32):
            g = make_grid(3, n, 6.0)
            flds = landau_fields(Distribution(g, maxwellian(g)), 1.0)
            div = sum(gradient(flds.b[i], g)[i] for i in range(3))
            inner = (slice(2, -2),) * 3
            errs.append(np.max(np.abs(div[inner] - flds.divb[inner])) / np.max(np.abs(flds.divb)))
        assert errs[1] < errs[0] / 3

    def test_rejects_2d_and_bad_gamma(self):
        g2 = make_grid(2, 8, 4.0)
        with pytest.raises(ValueError):
            landau_fields(Distribution(g2, maxwellian(g2)), 1.0)
        with pytest.raises(ValueError):
            landau_fields(Distribution(G8, maxwellian(G8)), 1.5)


class TestEllipticity:
    def test_lower_constant_positive_and_stable(self):
        vals = []
        for n in (16, 24, 32):
            g = make_grid(3, n, 6.0)
            vals.append(ellipticity_constant(landau_fields(Distribution(g, maxwellian(g)), 1.0)))
        assert min(vals) > 0
        assert max(vals) <= 1.1 * min(vals)

    @settings(max_examples=10, deadline=None)
    @given(seeds)
    def test_upper_constant(self, seed):
        f = dist(G16, seed)
        flds = landau_fields(f, 1.0)
        bound = 2 * (moment(f, 3.0) + moment(f, 0.0))
        assert upper_ellipticity_constant(flds) <= bound

    @settings(max_examples=10, deadline=None)
    @given(seeds, st.sampled_from([0.25, 1.0]))
    def test_drift_bounds(self, seed, gamma):
        f = dist(G16, seed)
        db = drift_bounds(f, landau_fields(f, gamma))
        assert db.b_margin >= 0 and db.divb_margin >= 0
        assert db.b_ratio <= 1 and db.divb_ratio <= 1

    def test_max_eigenvalue(self, maxwell_fields):
        assert max_eigenvalue(maxwell_fields) >= A_DIAG_ORIGIN * 0.99


class TestOperator:
    def test_maxwellian_residual_decreases(self):
        res = []
        for n in (16, 24, 32):
            g = make_grid(3, n, 6.0)
            f = Distribution(g, maxwellian(g))
            flds = landau_fields(f, 1.0)
            q = landau_op(f, flds)
            flux = np.einsum("ij...,j...->i...", flds.a, gradient(f.values, g))
            res.append(quadrature(np.abs(q), g) / quadrature(np.sqrt(np.sum(flux**2, axis=0)), g))
        # the fitted drift makes the moment-matched Maxwellian a discrete equilibrium
        assert max(res) <= 5e-3
        assert max(res) <= 1e-10

    @settings(max_examples=10, deadline=None)
    @given(seeds)
    def test_mass_conserved_to_rounding(self, seed):
        f = dist(G8, seed)
        q = landau_op(f, landau_fields(f, 1.0))
        assert abs(quadrature(q, G8)) <= 1e-12 * quadrature(np.abs(q), G8)

    @pytest.mark.parametrize("n", [16, 32])
    def test_momentum_and_energy_within_h2(self, n):
        g = make_grid(3, n, 6.0)
        f = dist(g, 12, 1.3)
        q = landau_op(f, landau_fields(f, 1.0))
        scale = quadrature(np.abs(q) * (1 + g.speed_squared), g)
        for i in range(3):
            assert abs(quadrature(g.mesh[i] * q, g)) <= g.h**2 * scale
        assert abs(quadrature(g.speed_squared * q, g)) <= g.h**2 * scale

    def test_zero(self):
        z = Distribution.zeros(G8)
        assert np.all(landau_op(z, landau_fields(z, 1.0)) == 0)

    def test_stale_fields(self):
        f = dist(G8, 1)
        g = dist(G8, 2)
        with pytest.raises(StaleFieldsError):
            landau_op(g, landau_fields(f, 1.0))

    @given(st.floats(0.1, 10))
    def test_quadratic_scaling(self, alpha):
        f = dist(G8, 5)
        af = Distribution(G8, alpha * f.values)
        q1 = landau_op(f, landau_fields(f, 1.0))
        q2 = landau_op(af, landau_fields(af, 1.0))
        assert np.max(np.abs(q2 - alpha**2 * q1)) <= 1e-10 * alpha**2 * np.max(np.abs(q1))


class TestEntropyProduction:
    def test_maxwellian_near_zero(self, fine_maxwellian, maxwell_fields):
        from fisherkin.functionals import fisher

        assert abs(entropy_production(fine_maxwellian, maxwell_fields)) <= 1e-3 * fisher(fine_maxwellian, 1.0)

    @settings(max_examples=10, deadline=None)
    @given(seeds)
    def test_nonnegative_up_to_grid(self, seed):
        f = dist(G16, seed, 1.2)
        assert entropy_production(f, landau_fields(f, 1.0)) >= -1e-3 * abs(entropy(f)[0])


class TestWeakForm:
    @given(seeds)
    def test_constant_gives_zero(self, seed):
        f = dist(G8, seed)
        assert weak_moment_rhs(f, landau_fields(f, 1.0), constant_test_function(G8)) == 0.0

    def test_energy_conserved_weakly(self):
        g = make_grid(3, 24, 6.0)
        f = dist(g, 8, 1.3)
        flds = landau_fields(f, 1.0)
        phi = energy_test_function(g)
        first = 2.0 * quadrature(f.values * np.sum(flds.b * phi.grad, axis=0), g)
        assert abs(weak_moment_rhs(f, flds, phi)) <= g.h**2 * abs(first)

    def test_exp_test_function_derivatives(self):
        g = make_grid(3, 32, 4.0)
        phi = exp_test_function(g, 0.3, 1.5)
        fd = gradient(phi.value, g)
        inner = (slice(2, -2),) * 3
        np.testing.assert_allclose(fd[0][inner], phi.grad[0][inner], rtol=0.02, atol=1e-3)
        fd2 = gradient(phi.grad[1], g)
        np.testing.assert_allclose(fd2[0][inner], phi.hess[0, 1][inner], rtol=0.02, atol=1e-3)

    def test_exp_overflow(self):
        with pytest.raises(OverflowGuardError):
            exp_test_function(G16, 10.0, 2.0)


class TestSqrtEnergy:
    def test_maxwellian_terms_finite(self, grid32):
        f = Distribution(grid32, maxwellian(grid32))
        flds = landau_fields(f, 1.0)
        for i in range(3):
            t = sqrt_energy_terms(f, flds, i)
            vals = [t.lhs_dirichlet, t.rhs_weighted_fisher, *t.rhs_const_parts, t.g_norm2, t.a_bound, t.b_bound]
            assert all(np.isfinite(vals))
            assert min(vals) >= 0

    def test_zero(self):
        z = Distribution.zeros(G8)
        t = sqrt_energy_terms(z, landau_fields(z, 1.0), 0)
        assert t.lhs_dirichlet == 0 and t.g_norm2 == 0

    def test_bad_axis(self):
        f = Distribution(G8, maxwellian(G8))
        with pytest.raises(ValueError):
            sqrt_energy_terms(f, landau_fields(f, 1.0), 3)
