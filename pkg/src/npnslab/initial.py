"""Initial data: analytic flows and seeded random ensembles with positive concentrations."""

from __future__ import annotations

import numpy as np

from .npns import SIGMA, Gauge, NpnsState, h_norm
from .spectral import AREA, Grid, SpectralField, VectorField, forward, inverse, to_spectral


def taylor_green(grid: Grid, amplitude: float = 1.0, sigma_mean: float = 0.0) -> NpnsState:
    """``u = A (sin x cos y, -cos x sin y)``, a Stokes eigenfield with ``|k|^2 = 2``."""
    x, y = grid.coordinates
    u = np.stack([amplitude * np.sin(x) * np.cos(y), -amplitude * np.cos(x) * np.sin(y)])
    data = np.zeros((4,) + grid.spectral_shape, dtype=complex)
    data[:2] = forward(u)
    data[SIGMA, 0, 0] = sigma_mean
    return NpnsState(grid, data)


def single_mode_sigma(grid: Grid, amplitude: float = 1.0, mean: float = 0.0) -> NpnsState:
    """Fluid at rest, no charge, ``sigma = mean + amplitude * cos x``."""
    x, _ = grid.coordinates
    data = np.zeros((4,) + grid.spectral_shape, dtype=complex)
    data[SIGMA] = forward(mean + amplitude * np.cos(x))
    return NpnsState(grid, data)


def _band_field(grid: Grid, rng: np.random.Generator, kmax: int) -> np.ndarray:
    """Random real mean-free coefficients supported on ``1 <= |k|_inf <= kmax``."""
    c = forward(rng.standard_normal((grid.n, grid.n)))
    band = (np.abs(grid.kx) <= kmax) & (np.abs(grid.ky) <= kmax)
    c = c * band
    c[0, 0] = 0.0
    return c


def random_velocity(grid: Grid, rng: np.random.Generator, norm: float = 1.0, kmax: int = 3) -> VectorField:
    """Divergence-free, mean-free velocity from a random stream function, scaled to ``norm`` in L2."""
    kmax = min(kmax, grid.dealias_cutoff)
    psi = _band_field(grid, rng, kmax)
    c = np.stack([1j * grid.ky * psi, -1j * grid.kx * psi])
    sq = AREA * np.sum(np.abs(c) ** 2 * grid.weights)
    return VectorField(grid, c * (norm / np.sqrt(sq)) if sq > 0 else c)


def random_scalar(grid: Grid, rng: np.random.Generator, kmax: int = 3) -> SpectralField:
    """Random mean-free real field, normalized so its minimum on the grid is -1."""
    kmax = min(kmax, grid.dealias_cutoff)
    c = _band_field(grid, rng, kmax)
    lo = inverse(c, grid.n).min()
    return SpectralField(grid, c / -lo, mean_free=True)


def positive_concentrations(
    grid: Grid, rng: np.random.Generator, mass: float = 1.0, alpha: float = 0.9, kmax: int = 3
) -> tuple[SpectralField, SpectralField]:
    """``(sigma, rho)`` from ``c_i = mass * (1 + alpha * psi_i)`` with ``min psi_i = -1``.

    Both species have mean ``mass``, so the charge is neutral, and both stay
    at least ``mass * (1 - alpha)`` on the collocation grid.
    """
    if not 0 <= alpha < 1:
        raise ValueError("alpha must lie in [0, 1) to keep concentrations positive")
    p1 = random_scalar(grid, rng, kmax).coeffs
    p2 = random_scalar(grid, rng, kmax).coeffs
    c1 = mass * alpha * p1
    c2 = mass * alpha * p2
    sigma = c1 + c2
    sigma[0, 0] = 2 * mass
    return SpectralField(grid, sigma), SpectralField(grid, c1 - c2, mean_free=True)


def random_state(
    grid: Grid,
    rng: np.random.Generator,
    velocity_norm: float = 1.0,
    mass: float = 1.0,
    alpha: float = 0.9,
    kmax: int = 3,
) -> NpnsState:
    sigma, rho = positive_concentrations(grid, rng, mass, alpha, kmax)
    return NpnsState.from_fields(random_velocity(grid, rng, velocity_norm, kmax), sigma, rho)


def sample_ball(
    grid: Grid,
    rng: np.random.Generator,
    radius: float,
    count: int,
    mass: float | None = None,
    alpha: float = 0.9,
    kmax: int = 2,
    fill: tuple[float, float] = (0.5, 0.99),
) -> NpnsState:
    """Batch of ``count`` states whose distance to the rest state ``(0, mean sigma, 0)`` is below ``radius``.

    Each member draws a norm ``r = radius * U(fill)`` and splits ``r^2``
    randomly between velocity and concentration fluctuations.  With
    ``mass=None`` the background mass is chosen so that the fluctuation fits
    with ``alpha`` positivity margin; a fixed ``mass`` caps the concentration
    share instead.
    """
    members = []
    for _ in range(count):
        r = radius * rng.uniform(*fill)
        share = rng.uniform()
        u = random_velocity(grid, rng, r * np.sqrt(share), kmax)
        p1 = random_scalar(grid, rng, kmax).coeffs
        p2 = random_scalar(grid, rng, kmax).coeffs
        unit = np.stack([alpha * (p1 + p2), alpha * (p1 - p2)])
        unit_norm = np.sqrt(AREA * np.sum(np.abs(unit) ** 2 * grid.weights))
        target = r * np.sqrt(1 - share)
        if mass is None:
            m = max(target / unit_norm, 1e-3)
            scale = m
        else:
            m = mass
            scale = min(target / unit_norm, mass)
        fluct = scale * unit
        data = np.zeros((4,) + grid.spectral_shape, dtype=complex)
        data[:2] = u.coeffs
        data[2:] = fluct
        data[SIGMA, 0, 0] = 2 * m
        members.append(data)
    return NpnsState(grid, np.stack(members), 0.0, Gauge.PHYSICAL)


def ball_norms(state: NpnsState) -> np.ndarray:
    return h_norm(state.data, state.grid, about_background=True)


def from_physical(grid: Grid, u: np.ndarray, sigma: np.ndarray, rho: np.ndarray) -> NpnsState:
    """Pack real-space samples into a physical-gauge state."""
    return NpnsState.from_fields(
        VectorField(grid, forward(np.asarray(u, dtype=float))),
        to_spectral(grid, sigma),
        to_spectral(grid, rho),
    )
