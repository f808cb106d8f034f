import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from npnslab.spectral import (
    ChargeNeutralityError,
    Grid,
    SpectralField,
    SymmetryError,
    VectorField,
    dealias,
    divergence,
    gradient,
    inner,
    laplacian,
    leray_project,
    norm_l2,
    norm_lp,
    product,
    seminorm_h1,
    solve_poisson,
    to_physical,
    to_spectral,
    vector_to_spectral,
)


def random_field(grid, rng, mean_free=False):
    return to_spectral(grid, rng.standard_normal((grid.n, grid.n)), mean_free)


class TestGrid:
    def test_shapes_and_cutoff(self):
        g = Grid(32)
        assert g.m == 17
        assert g.spectral_shape == (32, 17)
        assert g.dealias_cutoff == 10
        assert g.h == pytest.approx(2 * math.pi / 32)

    @pytest.mark.parametrize("n", [7, 6, 15, 0])
    def test_rejects_bad_sizes(self, n):
        with pytest.raises(ValueError):
            Grid(n)

    def test_dealias_mask_keeps_products_clean(self):
        g = Grid(16)
        K = g.dealias_cutoff
        assert 3 * K < g.n
        assert g.dealias_mask[K, K] and not g.dealias_mask[K + 1, 0]


class TestTransforms:
    def test_matches_brute_force_dft(self, rng):
        g = Grid(8)
        values = rng.standard_normal((8, 8))
        full = oracles.brute_dft(values)
        f = to_spectral(g, values)
        np.testing.assert_allclose(f.full_coeffs(), full, atol=1e-14)
        np.testing.assert_allclose(oracles.brute_synthesis(full), to_physical(f), atol=1e-13)

    def test_round_trip(self, grid16, rng):
        values = rng.standard_normal((16, 16))
        np.testing.assert_allclose(to_physical(to_spectral(grid16, values)), values, atol=1e-14)

    def test_single_mode_coefficient(self, grid16):
        x, y = grid16.coordinates
        f = to_spectral(grid16, np.cos(2 * x + 3 * y))
        assert f.coeff(2, 3) == pytest.approx(0.5)
        assert f.coeff(-2, -3) == pytest.approx(0.5)
        assert abs(f.coeff(2, -3)) < 1e-15

    def test_non_hermitian_rejected(self, grid16):
        full = np.zeros((16, 16), dtype=complex)
        full[1, 2] = 1.0
        with pytest.raises(SymmetryError):
            SpectralField.from_full(grid16, full)
        bad = SpectralField(grid16, np.zeros(grid16.spectral_shape, dtype=complex))
        bad.coeffs[0, 0] = 1j
        with pytest.raises(SymmetryError):
            to_physical(bad)

    def test_mean_free_flag(self, grid16, rng):
        f = random_field(grid16, rng, mean_free=True)
        assert f.coeffs[0, 0] == 0
        with pytest.raises(ValueError):
            SpectralField(grid16, np.ones(grid16.spectral_shape, dtype=complex), mean_free=True)

    def test_batch_axes(self, grid16, rng):
        values = rng.standard_normal((3, 16, 16))
        f = to_spectral(grid16, values)
        assert f.coeffs.shape == (3, 16, 9)
        np.testing.assert_allclose(norm_l2(f)[1], norm_l2(to_spectral(grid16, values[1])), rtol=1e-14)


class TestOperators:
    def test_gradient_matches_finite_differences(self, grid32):
        x, y = grid32.coordinates
        values = np.sin(x) * np.cos(2 * y) + 0.3 * np.cos(3 * x - y)
        g = to_physical(gradient(to_spectral(grid32, values)))
        # sixth-order differences carry an O((kh)^6) error of about 1e-3 here
        np.testing.assert_allclose(g[0], oracles.central_difference(values, 0), atol=2e-3)
        np.testing.assert_allclose(g[1], oracles.central_difference(values, 1), atol=2e-3)
        exact_x = np.cos(x) * np.cos(2 * y) - 0.9 * np.sin(3 * x - y)
        np.testing.assert_allclose(g[0], exact_x, atol=1e-13)

    def test_laplacian_single_mode(self, grid16):
        x, y = grid16.coordinates
        lap = to_physical(laplacian(to_spectral(grid16, np.sin(2 * x + y))))
        np.testing.assert_allclose(lap, -5 * np.sin(2 * x + y), atol=1e-13)

    def test_divergence_of_gradient_is_laplacian(self, grid16, rng):
        f = random_field(grid16, rng)
        f = SpectralField(grid16, f.coeffs * grid16.dealias_mask)
        np.testing.assert_allclose(divergence(gradient(f)).coeffs, laplacian(f).coeffs, atol=1e-13)

    def test_leray_matches_helmholtz_oracle(self, grid16, rng):
        v = vector_to_spectral(grid16, rng.standard_normal((2, 16, 16)))
        p = leray_project(v)
        n = grid16.n
        kx = np.fft.fftfreq(n, 1 / n)[:, None] * np.ones((1, n))
        ky = kx.T.copy()
        kx[n // 2, :] = 0
        ky[:, n // 2] = 0
        (sx, sy), _ = oracles.helmholtz_split(kx, ky, v.x.full_coeffs(), v.y.full_coeffs())
        np.testing.assert_allclose(p.x.full_coeffs(), sx, atol=1e-14)
        np.testing.assert_allclose(p.y.full_coeffs(), sy, atol=1e-14)

    def test_leray_idempotent_and_orthogonal(self, grid16, rng):
        v = vector_to_spectral(grid16, rng.standard_normal((2, 16, 16)))
        p = leray_project(v)
        np.testing.assert_allclose(leray_project(p).coeffs, p.coeffs, atol=1e-15)
        assert abs(inner(p, v - p)) < 1e-12 * float(norm_l2(v)) ** 2

    def test_poisson_oracle(self, grid16):
        x, y = grid16.coordinates
        rho_fn, phi_fn = oracles.poisson_single_mode(2, 3, eps0=0.5, phase=0.4)
        phi = to_physical(solve_poisson(to_spectral(grid16, rho_fn(x, y)), 0.5))
        np.testing.assert_allclose(phi, phi_fn(x, y), rtol=1e-12, atol=1e-15)

    def test_poisson_rejects_non_neutral(self, grid16):
        x, _ = grid16.coordinates
        with pytest.raises(ChargeNeutralityError, match="charge not neutral"):
            solve_poisson(to_spectral(grid16, 1.0 + np.cos(x)), 1.0)

    def test_product_dealiased(self, grid16):
        x, y = grid16.coordinates
        a = to_spectral(grid16, np.cos(2 * x))
        b = to_spectral(grid16, np.cos(3 * y))
        ab = product(a, b)
        np.testing.assert_allclose(to_physical(ab), np.cos(2 * x) * np.cos(3 * y), atol=1e-14)
        high = product(to_spectral(grid16, np.cos(4 * x)), to_spectral(grid16, np.cos(4 * x)))
        assert abs(high.coeff(8 % 16, 0)) == 0.0  # k=8 exceeds the cutoff
        assert high.coeff(0, 0) == pytest.approx(0.5)

    def test_dealias_zeroes_high_modes(self, grid16, rng):
        f = dealias(random_field(grid16, rng))
        assert np.all(f.coeffs[~grid16.dealias_mask] == 0)


class TestNorms:
    def test_parseval(self, grid16, rng):
        values = rng.standard_normal((16, 16))
        f = to_spectral(grid16, values)
        assert norm_l2(f) ** 2 == pytest.approx(oracles.quadrature(values**2), rel=1e-12)

    def test_h1_seminorm_single_mode(self, grid16):
        x, y = grid16.coordinates
        f = to_spectral(grid16, np.sin(x + 2 * y))
        assert seminorm_h1(f) ** 2 == pytest.approx(5 * 2 * math.pi**2, rel=1e-12)

    def test_lp_norms(self, grid16):
        x, _ = grid16.coordinates
        f = to_spectral(grid16, np.cos(x))
        expected4 = oracles.refined_quadrature(lambda s: np.cos(s) ** 4, 0, 2 * math.pi) * 2 * math.pi
        assert norm_lp(f, 4) ** 4 == pytest.approx(expected4, rel=1e-9)
        with pytest.raises(ValueError):
            norm_lp(f, 5)

    def test_vector_norm(self, grid16):
        v = VectorField.zeros(grid16)
        assert norm_l2(v) == 0.0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 32]))
def test_parseval_property(seed, n):
    g = Grid(n)
    values = np.random.default_rng(seed).standard_normal((n, n))
    f = to_spectral(g, values)
    assert norm_l2(f) ** 2 == pytest.approx(oracles.quadrature(values**2), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_projection_is_divergence_free_property(seed):
    g = Grid(16)
    v = vector_to_spectral(g, np.random.default_rng(seed).standard_normal((2, 16, 16)))
    assert np.max(np.abs(divergence(leray_project(v)).coeffs)) <= 1e-12
