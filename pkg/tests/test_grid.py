import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fisherkin.grid import (
    FLOOR_RELATIVE,
    Distribution,
    Field,
    floored,
    gradient,
    laplacian,
    make_grid,
    maxwellian,
    quadrature,
    weight,
)

grids = st.builds(
    make_grid,
    st.sampled_from([2, 3]),
    st.sampled_from([8, 10, 12, 16]),
    st.floats(min_value=1.0, max_value=10.0),
)


class TestMakeGrid:
    def test_spacing_and_size_3d(self):
        g = make_grid(3, 32, 8.0)
        assert g.h == 0.5
        assert g.size == 32768
        assert g.shape == (32, 32, 32)

    def test_spacing_and_size_2d(self):
        g = make_grid(2, 8, 4.0)
        assert g.h == 1.0
        assert g.size == 64

    @pytest.mark.parametrize("args", [(3, 7, 8.0), (3, 6, 8.0), (3, 130, 8.0), (3, 16, 0.0), (3, 16, -1.0), (4, 16, 1.0)])
    def test_rejects_bad_arguments(self, args):
        with pytest.raises(ValueError):
            make_grid(*args)

    @given(grids)
    def test_no_origin_node(self, g):
        assert np.min(np.abs(g.nodes)) == pytest.approx(g.h / 2)
        assert g.h == 2 * g.lmax / g.n
        assert g.mesh.shape == (g.d,) + g.shape

    def test_nodes_are_cell_centres(self):
        g = make_grid(3, 8, 4.0)
        np.testing.assert_array_equal(g.nodes, np.arange(-3.5, 4.0, 1.0))


class TestWeights:
    @given(grids, st.floats(min_value=0, max_value=6))
    def test_weight_at_least_one(self, g, k):
        assert np.all(weight(g, k).values >= 1.0)

    def test_origin_adjacent_weight_near_one(self):
        g = make_grid(3, 32, 8.0)
        w = weight(g, 2.0).values
        assert abs(w[15, 15, 15] - 1.0) <= g.h**2


class TestDistribution:
    def test_rejects_negative(self, grid8):
        vals = np.ones(grid8.shape)
        vals[0, 0, 0] = -1e-3
        with pytest.raises(ValueError):
            Distribution(grid8, vals)

    def test_rejects_nonfinite(self, grid8):
        vals = np.ones(grid8.shape)
        vals[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            Distribution(grid8, vals)

    def test_zero_only_when_explicit(self, grid8):
        with pytest.raises(ValueError):
            Distribution(grid8, np.zeros(grid8.shape))
        z = Distribution.zeros(grid8)
        assert z.is_zero
        assert quadrature(z.values, grid8) == 0.0

    def test_values_are_read_only(self, grid8):
        f = Distribution(grid8, np.ones(grid8.shape))
        with pytest.raises(ValueError):
            f.values[0, 0, 0] = 2.0

    def test_wrong_length(self, grid8):
        with pytest.raises(ValueError):
            Field(grid8, np.ones(10))


class TestQuadrature:
    def test_constant_is_exact(self):
        g = make_grid(3, 32, 8.0)
        assert quadrature(np.ones(g.shape), g) == 4096.0

    def test_unit_maxwellian(self, grid32):
        # Gaussian mass outside [-8, 8]^3 is below 1e-14
        assert quadrature(maxwellian(grid32), grid32) == pytest.approx(1.0, abs=1e-6)

    def test_zero(self, grid8):
        assert quadrature(np.zeros(grid8.shape), grid8) == 0.0

    def test_length_mismatch(self, grid8):
        with pytest.raises(ValueError):
            quadrature(np.ones(7), grid8)

    @given(grids, st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
    def test_linear(self, g, seed, a, b):
        rng = np.random.default_rng(seed)
        f, h = rng.random(g.shape), rng.random(g.shape)
        lhs = quadrature(a * f + b * h, g)
        rhs = a * quadrature(f, g) + b * quadrature(h, g)
        scale = (abs(a) + abs(b)) * quadrature(np.ones(g.shape), g)
        assert abs(lhs - rhs) <= 1e-13 * scale

    @given(st.integers(0, 2**32 - 1), st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3))
    def test_translation_invariant(self, seed, sx, sy, sz):
        g = make_grid(3, 16, 4.0)
        rng = np.random.default_rng(seed)
        vals = np.zeros(g.shape)
        vals[5:11, 5:11, 5:11] = rng.integers(0, 1000, (6, 6, 6)) / 8.0
        shifted = np.roll(vals, (sx, sy, sz), axis=(0, 1, 2))
        assert quadrature(shifted, g) == quadrature(vals, g)


class TestStencils:
    @given(grids)
    def test_gradient_exact_on_affine(self, g):
        field = 2.0 * g.mesh[0] - 0.5 * g.mesh[-1] + 3.0
        grad = gradient(field, g)
        expect = [2.0] + [0.0] * (g.d - 2) + [-0.5]
        for i in range(g.d):
            np.testing.assert_allclose(grad[i], expect[i], atol=1e-12 * g.lmax / g.h)

    @given(grids)
    def test_laplacian_exact_on_quadratics(self, g):
        lap = laplacian(g.speed_squared, g)
        np.testing.assert_allclose(lap, 2.0 * g.d, rtol=1e-9)

    def test_maxwellian_gradient_second_order(self):
        errs = []
        for n in (16, 32):
            g = make_grid(3, n, 6.0)
            m = maxwellian(g)
            grad = gradient(m, g)
            exact = -g.mesh * m
            inner = (slice(2, -2),) * 3
            errs.append(np.max(np.abs(grad[0][inner] - exact[0][inner])) / np.max(np.abs(exact[0])))
        assert errs[1] < errs[0] / 3.0

    @given(st.integers(0, 2**32 - 1))
    def test_discrete_divergence_theorem(self, seed):
        g = make_grid(3, 16, 4.0)
        rng = np.random.default_rng(seed)
        vals = np.zeros(g.shape)
        vals[3:13, 3:13, 3:13] = rng.random((10, 10, 10))
        grad = gradient(vals, g)
        for i in range(3):
            assert abs(quadrature(grad[i], g)) <= 1e-12 * np.sum(np.abs(grad[i])) * g.cell_volume


class TestFloor:
    def test_floor_relative_to_max(self):
        vals = np.array([0.0, 1e-40, 2.0])
        fl = floored(vals)
        assert fl[0] == FLOOR_RELATIVE * 2.0
        assert fl[2] == 2.0

    def test_zero_field_floor_positive(self):
        assert np.all(floored(np.zeros(4)) > 0)
        assert math.isfinite(np.log(floored(np.zeros(4)))[0])
