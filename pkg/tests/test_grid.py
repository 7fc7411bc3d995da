import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfg_inverse.grid import (
    SpaceTimeField,
    SpatialField,
    cosine_coeff,
    cosine_synthesis,
    discrete_eigenvalue,
    fields_from_csv,
    fields_to_csv,
    gradient,
    integrate_space,
    make_grid,
    mode_norm_sq,
    neumann_eigenpair,
    spacetime_from_csv,
    spatial_from_csv,
)
from mfg_inverse.parabolic import laplacian


class TestMakeGrid:
    def test_steps(self):
        g = make_grid(101, 200, 1.0, 1.0)
        assert g.h == pytest.approx(0.01)
        assert g.dt == pytest.approx(0.005)

    def test_coarsest(self):
        g = make_grid(3, 1, 2.0, 0.5)
        assert g.h == 0.5 and g.dt == 2.0
        assert g.x.tolist() == [0.0, 0.5, 1.0]
        assert g.t.tolist() == [0.0, 2.0]

    @pytest.mark.parametrize("args", [(2, 1, 1.0, 1.0), (11, 0, 1.0, 1.0), (11, 1, 0.0, 1.0),
                                      (11, 1, 1.0, 0.0), (11, 1, -1.0, 1.0), (11, 1, 1.0, np.nan)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            make_grid(*args)

    def test_nodes_cover_interval(self):
        g = make_grid(17, 9, 3.0, 1.0)
        assert g.x[0] == 0.0 and g.x[-1] == 1.0
        assert g.t[0] == 0.0 and g.t[-1] == 3.0
        assert g.h * (g.n_x - 1) == pytest.approx(1.0, abs=1e-15)
        assert g.dt * g.n_t == pytest.approx(3.0, abs=1e-15)

    def test_weights_sum_to_one(self):
        for n in (3, 10, 201):
            assert make_grid(n, 1, 1.0, 1.0).weights.sum() == pytest.approx(1.0, abs=1e-14)


class TestFields:
    def test_shape_checked(self, grid):
        with pytest.raises(ValueError):
            SpatialField(np.zeros(grid.n_x + 1), grid)
        with pytest.raises(ValueError):
            SpaceTimeField(np.zeros((2, grid.n_x)), grid)

    def test_finite_checked(self, grid):
        v = np.zeros(grid.n_x)
        v[3] = np.nan
        with pytest.raises(FloatingPointError):
            SpatialField(v, grid)

    def test_csv_round_trip_bit_exact(self, grid):
        rng = np.random.default_rng(1)
        u = SpaceTimeField(rng.standard_normal(grid.shape) * 1e-7, grid)
        back = spacetime_from_csv(u.to_csv(), grid)
        assert np.array_equal(back.values, u.values)
        f = SpatialField(rng.standard_normal(grid.n_x), grid)
        assert np.array_equal(spatial_from_csv(f.to_csv(), grid).values, f.values)

    def test_csv_header_is_x(self, grid):
        x, rows = fields_from_csv(fields_to_csv(grid.x, np.ones((2, grid.n_x))))
        assert np.array_equal(x, grid.x)
        assert rows.shape == (2, grid.n_x)

    def test_csv_grid_mismatch(self, grid):
        other = make_grid(11, 2, 1.0, 1.0)
        with pytest.raises(ValueError):
            spatial_from_csv(SpatialField.constant(other, 1.0).to_csv(), grid)


class TestIntegrate:
    def test_constant(self, grid):
        assert integrate_space(SpatialField.constant(grid, 1.0)) == pytest.approx(1.0, abs=1e-15)

    def test_odd_about_midpoint(self, grid):
        f = SpatialField.from_function(grid, lambda x: np.cos(np.pi * x))
        assert abs(integrate_space(f)) < 1e-15

    def test_square(self, grid):
        # trapezoid value 1/3 + h^2/6, frozen from an independent mpmath sum
        f = SpatialField.from_function(grid, lambda x: x**2)
        assert integrate_space(f) == pytest.approx(0.33335, abs=1e-14)
        assert abs(integrate_space(f) - 1 / 3) <= grid.h**2

    @given(a=st.floats(-1e3, 1e3), b=st.floats(-1e3, 1e3), n=st.integers(3, 300))
    def test_exact_on_affine(self, a, b, n):
        g = make_grid(n, 1, 1.0, 1.0)
        f = SpatialField.from_function(g, lambda x: a + b * x)
        assert integrate_space(f) == pytest.approx(a + b / 2, abs=1e-11 * (1 + abs(a) + abs(b)))


class TestEigen:
    def test_mode_zero(self, grid):
        mu, g = neumann_eigenpair(0, grid)
        assert mu == 0.0 and np.all(g.values == 1.0)

    def test_mode_one(self, grid):
        mu, g = neumann_eigenpair(1, grid)
        assert mu == pytest.approx(9.8696044, rel=1e-8)
        assert np.allclose(g.values, np.cos(np.pi * grid.x))

    def test_mode_two_midpoint(self, grid):
        mu, g = neumann_eigenpair(2, grid)
        assert mu == pytest.approx(4 * np.pi**2)
        assert g.values[50] == pytest.approx(-1.0)

    def test_negative_mode(self, grid):
        with pytest.raises(ValueError):
            neumann_eigenpair(-1, grid)

    @pytest.mark.parametrize("k", [1, 3, 10])
    def test_discrete_laplacian(self, grid, k):
        mu, g = neumann_eigenpair(k, grid)
        lap = laplacian(g.values, grid)
        # exact eigenvector of the discrete operator ...
        assert np.allclose(-lap, discrete_eigenvalue(k, grid) * g.values, atol=1e-9 * mu)
        # ... whose eigenvalue is the continuous one to O(h^2)
        assert abs(discrete_eigenvalue(k, grid) - mu) <= mu * (k * np.pi * grid.h) ** 2 / 12 * 1.01


class TestCosine:
    def test_coeff_examples(self, grid):
        f = SpatialField.from_function(grid, lambda x: np.cos(np.pi * x))
        assert cosine_coeff(f, 1) == pytest.approx(0.5, abs=1e-12)
        assert abs(cosine_coeff(f, 2)) < 1e-12
        assert cosine_coeff(SpatialField.constant(grid, 1.0), 0) == pytest.approx(1.0)

    def test_synthesis_examples(self, grid):
        assert np.allclose(cosine_synthesis([(0, 1.0)], grid).values, 1.0)
        assert np.allclose(cosine_synthesis([(1, 0.5)], grid).values, np.cos(np.pi * grid.x))
        two = cosine_synthesis([(1, 0.5), (2, 0.25)], grid).values
        x = grid.x
        assert np.allclose(two, np.cos(np.pi * x) + 0.5 * np.cos(2 * np.pi * x))

    def test_duplicate_modes(self, grid):
        with pytest.raises(ValueError):
            cosine_synthesis([(1, 0.5), (1, 0.1)], grid)

    def test_norms(self):
        assert mode_norm_sq(0) == 1.0 and mode_norm_sq(5) == 0.5

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=26))
    def test_round_trip(self, amps):
        g = make_grid(101, 1, 1.0, 1.0)
        f = SpatialField(sum(a * np.cos(k * np.pi * g.x) for k, a in enumerate(amps)), g)
        coeffs = [(k, cosine_coeff(f, k)) for k in range(len(amps))]
        back = cosine_synthesis(coeffs, g)
        assert np.abs(back.values - f.values).max() <= 1e-10 * (1 + np.abs(amps).max())


def test_gradient_zero_at_boundary(grid):
    d = gradient(np.sin(3 * grid.x), grid.h)
    assert d[0] == 0.0 and d[-1] == 0.0
    assert np.allclose(d[1:-1], 3 * np.cos(3 * grid.x[1:-1]), atol=10 * grid.h**2)
