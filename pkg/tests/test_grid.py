"""Spectral calculus checks.

The derivative oracles are deliberately non-spectral: gradients are
compared against high-order centred finite differences on the same data,
so a sign or scaling slip in the Fourier route cannot cancel itself.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from torusgas.grid import (
    Field,
    Grid,
    GridError,
    VecField,
    bessel_potential,
    constant_field,
    dealias,
    div,
    fractional_norm,
    grad,
    grad_inv_laplacian,
    hessian_inv_laplacian,
    integrate,
    inv_laplacian,
    inv_laplacian_div,
    l2_norm,
    laplacian,
    lp_norm,
    mean,
    shift,
    w1p_norm,
    wneg1p_norm,
)
from conftest import band_limited_field, band_limited_vec


def fd_gradient(values: np.ndarray, axis: int, spacing: float) -> np.ndarray:
    """Fourth-order centred difference with periodic wrap; the oracle."""
    r = np.roll
    return (
        -r(values, -2, axis=axis)
        + 8 * r(values, -1, axis=axis)
        - 8 * r(values, 1, axis=axis)
        + r(values, 2, axis=axis)
    ) / (12 * spacing)


class TestGridConstruction:
    def test_rejects_bad_dimension(self):
        with pytest.raises(GridError):
            Grid(3, 64)

    def test_rejects_non_power_of_two(self):
        with pytest.raises(GridError):
            Grid(1, 100)

    def test_rejects_tiny_grid(self):
        with pytest.raises(GridError):
            Grid(1, 4)

    def test_rejects_nan_field(self, grid1d):
        vals = np.zeros(grid1d.shape)
        vals[3] = np.nan
        with pytest.raises(GridError):
            Field(grid1d, vals)

    def test_rejects_shape_mismatch(self, grid1d):
        with pytest.raises(GridError):
            Field(grid1d, np.zeros(64))


class TestDerivatives:
    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_grad_exact_on_single_mode_1d(self, grid1d, k):
        (x,) = grid1d.coords()
        f = Field(grid1d, np.sin(k * x))
        gf = grad(f).components[0].values
        assert np.max(np.abs(gf - k * np.cos(k * x))) < 1e-12

    def test_grad_exact_on_single_mode_2d(self, grid2d):
        x, y = grid2d.coords()
        f = Field(grid2d, np.sin(3 * x) * np.cos(2 * y))
        gf = grad(f)
        assert np.max(np.abs(gf.components[0].values - 3 * np.cos(3 * x) * np.cos(2 * y))) < 1e-12
        assert np.max(np.abs(gf.components[1].values + 2 * np.sin(3 * x) * np.sin(2 * y))) < 1e-12

    def test_grad_matches_finite_difference_oracle(self, grid2d, rng):
        f = band_limited_field(grid2d, 5, rng)
        gf = grad(f)
        for axis in range(2):
            oracle = fd_gradient(f.values, axis, grid2d.spacing)
            # 4th-order FD truncation at n=64, kmax=5 is ~1e-2; a sign or
            # scale slip in the spectral route would show up at O(1)
            assert np.max(np.abs(gf.components[axis].values - oracle)) < 5e-2

    def test_div_of_grad_is_laplacian(self, grid2d, rng):
        f = band_limited_field(grid2d, 6, rng)
        lhs = div(grad(f)).values
        rhs = laplacian(f).values
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_laplacian_single_mode(self, grid1d):
        (x,) = grid1d.coords()
        f = Field(grid1d, np.cos(5 * x))
        assert np.max(np.abs(laplacian(f).values + 25 * np.cos(5 * x))) < 1e-11


class TestInverseLaplacian:
    def test_round_trip(self, grid2d, rng):
        f = band_limited_field(grid2d, 6, rng)
        g, m = inv_laplacian(f)
        back = laplacian(g).values
        target = -(f.values - np.mean(f.values))
        assert np.max(np.abs(back - target)) < 1e-10

    def test_reports_discarded_mean(self, grid1d):
        (x,) = grid1d.coords()
        f = Field(grid1d, 3.5 + np.sin(x))
        g, m = inv_laplacian(f)
        assert abs(m - 3.5) < 1e-12
        assert abs(np.mean(g.values)) < 1e-13

    def test_inv_laplacian_div_on_gradient(self, grid1d):
        # v = grad(sin x)  =>  (-lap)^{-1} div v = -sin x
        (x,) = grid1d.coords()
        v = grad(Field(grid1d, np.sin(x)))
        out = inv_laplacian_div(v)
        assert np.max(np.abs(out.values + np.sin(x))) < 1e-12

    def test_inv_laplacian_div_mean_zero(self, grid2d, rng):
        v = band_limited_vec(grid2d, 5, rng)
        out = inv_laplacian_div(v)
        assert abs(np.mean(out.values)) < 1e-13

    def test_grad_inv_laplacian_consistency(self, grid1d):
        (x,) = grid1d.coords()
        f = Field(grid1d, np.cos(2 * x))
        # lap^{-1} cos(2x) = -cos(2x)/4, gradient = sin(2x)/2
        out = grad_inv_laplacian(f)
        assert np.max(np.abs(out.components[0].values - np.sin(2 * x) / 2)) < 1e-12

    def test_hessian_inv_laplacian_trace(self, grid2d, rng):
        # trace of hess lap^{-1} f must reproduce f - mean(f)
        f = band_limited_field(grid2d, 5, rng)
        H = hessian_inv_laplacian(f)
        tr = H[0][0].values + H[1][1].values
        assert np.max(np.abs(tr - (f.values - f.values.mean()))) < 1e-10


class TestNormsAndQuadrature:
    def test_mean_equals_zeroth_coefficient(self, grid2d, rng):
        f = band_limited_field(grid2d, 4, rng)
        coeff = np.fft.fftn(f.values).flat[0].real / f.values.size
        assert abs(mean(f) - coeff) <= 1e-12 * max(1.0, abs(coeff))

    def test_parseval(self, grid1d, rng):
        f = band_limited_field(grid1d, 10, rng)
        quad = l2_norm(f)
        f_hat = np.fft.fft(f.values)
        spec = np.sqrt((np.abs(f_hat) ** 2).sum() * grid1d.cell_volume / f.values.size)
        assert abs(quad - spec) < 1e-10

    def test_l2_of_sine(self, grid1d):
        (x,) = grid1d.coords()
        assert abs(l2_norm(Field(grid1d, np.sin(x))) - np.sqrt(np.pi)) < 1e-12

    def test_lp_norm_closed_form(self, grid1d):
        # ||sin||_4^4 = int sin^4 = 3*pi/4 on [0, 2*pi)
        (x,) = grid1d.coords()
        got = lp_norm(Field(grid1d, np.sin(x)), 4)
        assert abs(got - (3 * np.pi / 4) ** 0.25) < 1e-12

    def test_linf_norm(self, grid1d):
        (x,) = grid1d.coords()
        assert lp_norm(Field(grid1d, np.sin(x)), np.inf) == pytest.approx(1.0, abs=1e-12)

    def test_w1p_norm_closed_form(self, grid1d):
        (x,) = grid1d.coords()
        got = w1p_norm(Field(grid1d, np.sin(3 * x)), 2)
        # ||f||_2^2 = pi, ||f'||_2^2 = 9*pi
        assert abs(got - np.sqrt(10 * np.pi)) < 1e-12

    def test_fractional_norm_single_mode(self, grid1d):
        (x,) = grid1d.coords()
        f = Field(grid1d, np.sin(x))
        got = fractional_norm(f, -1.0)
        assert abs(got - np.sqrt(np.pi / 2)) < 1e-12

    def test_fractional_rejects_p_not_two(self, grid1d):
        f = constant_field(grid1d, 1.0)
        with pytest.raises(ValueError):
            fractional_norm(f, 0.5, p=4)

    def test_fractional_rejects_s_out_of_range(self, grid1d):
        f = constant_field(grid1d, 1.0)
        with pytest.raises(ValueError):
            fractional_norm(f, 2.5)

    def test_wneg1p_matches_fractional_at_p2(self, grid1d, rng):
        f = band_limited_field(grid1d, 8, rng)
        assert wneg1p_norm(f, 2) == pytest.approx(fractional_norm(f, -1.0), rel=1e-12)

    def test_bessel_potential_inverts(self, grid1d, rng):
        f = band_limited_field(grid1d, 8, rng)
        back = bessel_potential(bessel_potential(f, -1.0), 1.0)
        assert np.max(np.abs(back.values - f.values)) < 1e-10

    def test_integrate_constant(self, grid2d):
        assert integrate(constant_field(grid2d, 2.0)) == pytest.approx(
            2.0 * grid2d.volume, rel=1e-14
        )


class TestDealiasAndShift:
    def test_product_within_bandwidth_untouched(self, grid1d):
        # combined bandwidth 5+7 = 12 <= 128/3: dealias must be a no-op
        (x,) = grid1d.coords()
        prod = Field(grid1d, np.sin(5 * x) * np.cos(7 * x))
        out = dealias(prod)
        assert np.max(np.abs(out.values - prod.values)) < 1e-12

    def test_high_modes_removed(self, grid1d):
        (x,) = grid1d.coords()
        f = Field(grid1d, np.sin(60 * x))
        assert np.max(np.abs(dealias(f).values)) < 1e-12

    def test_shift_matches_exact_translation(self, grid1d):
        (x,) = grid1d.coords()
        f = Field(grid1d, np.sin(x))
        out = shift(f, (4,))
        assert np.max(np.abs(out.values - np.sin(x - 4 * grid1d.spacing))) < 1e-12


class TestMinImage:
    def test_distance_symmetry_1d(self, grid1d):
        dist = grid1d.torus_distance()
        assert dist[0] == 0.0
        assert np.max(dist) <= np.pi

    def test_distance_symmetry_2d(self, grid2d):
        dist = grid2d.torus_distance()
        assert dist[0, 0] == 0.0
        assert np.max(dist) <= np.pi * np.sqrt(2) + 1e-12


@settings(max_examples=25, deadline=None)
@given(
    k1=st.integers(min_value=-10, max_value=10),
    k2=st.integers(min_value=-10, max_value=10),
    a=st.floats(min_value=-3, max_value=3, allow_nan=False),
    b=st.floats(min_value=-3, max_value=3, allow_nan=False),
)
def test_grad_linearity(k1, k2, a, b):
    g = Grid(1, 64)
    (x,) = g.coords()
    f1 = Field(g, np.sin(k1 * x))
    f2 = Field(g, np.cos(k2 * x))
    combo = Field(g, a * f1.values + b * f2.values)
    lhs = grad(combo).components[0].values
    rhs = a * grad(f1).components[0].values + b * grad(f2).components[0].values
    assert np.max(np.abs(lhs - rhs)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_parseval_random_fields(seed):
    g = Grid(1, 64)
    r = np.random.default_rng(seed)
    f = band_limited_field(g, 12, r)
    f_hat = np.fft.fft(f.values)
    spec = np.sqrt((np.abs(f_hat) ** 2).sum() * g.cell_volume / f.values.size)
    assert abs(l2_norm(f) - spec) < 1e-10
