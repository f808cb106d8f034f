"""Right-hand sides of the Nernst-Planck-Navier-Stokes system.

States are packed as one complex array ``data[..., 4, n, m]`` holding the two
velocity components, the total concentration ``sigma = c1 + c2`` and the charge
density ``rho = c1 - c2``.  In the transformed gauge the velocity slot holds
``v = z u`` with ``z = exp(-eps * omega(t))``.

The explicit part of the dynamics (advection, migration, Coulomb force, body
force) is evaluated by :func:`explicit_terms`, a fused pseudo-spectral kernel
that works on any number of leading batch axes.  The typed helpers
(:func:`trilinear_b`, :func:`nonlinear_term`, :func:`migration_term`) follow
the textbook formulas and serve as independent cross-checks.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .spectral import (
    AREA,
    Grid,
    SpectralField,
    VectorField,
    divergence,
    forward,
    gradient,
    inner,
    inverse,
    laplacian,
    leray_project,
    norm_l2,
    product,
    project_coeffs,
    solve_poisson,
    to_physical,
)

UX, UY, SIGMA, RHO = range(4)


class Gauge(str, enum.Enum):
    PHYSICAL = "physical"
    TRANSFORMED = "transformed"


@dataclass(frozen=True, eq=False)
class PhysicalParams:
    """Viscosity ``nu``, ionic diffusivity ``dcoef``, Debye parameter ``eps0`` and body force."""

    nu: float
    dcoef: float
    eps0: float
    force: VectorField

    def __post_init__(self):
        for name in ("nu", "dcoef", "eps0"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v}")
        f = self.force.coeffs
        scale = max(1.0, float(np.max(np.abs(f), initial=0.0)))
        if np.max(np.abs(f[..., 0, 0]), initial=0.0) > 1e-12 * scale:
            raise ValueError("force must be mean-free")
        defect = np.max(np.abs(project_coeffs(f, self.force.grid) - f), initial=0.0)
        if defect > 1e-10 * scale:
            raise ValueError(f"force must be divergence-free (projection defect {defect:.2e})")

    @property
    def grid(self) -> Grid:
        return self.force.grid

    @classmethod
    def kolmogorov(
        cls,
        grid: Grid,
        amplitude: float = 1.0,
        mode: int = 1,
        nu: float = 1.0,
        dcoef: float = 1.0,
        eps0: float = 1.0,
    ) -> "PhysicalParams":
        """Shear forcing ``f = (amplitude * sin(mode * y), 0)``."""
        return cls(nu, dcoef, eps0, shear_force(grid, amplitude, mode))

    @classmethod
    def unforced(cls, grid: Grid, nu=1.0, dcoef=1.0, eps0=1.0) -> "PhysicalParams":
        return cls(nu, dcoef, eps0, VectorField.zeros(grid))

    def with_force(self, force: VectorField) -> "PhysicalParams":
        return replace(self, force=force)

    @property
    def force_norm_sq(self) -> float:
        return float(norm_l2(self.force)) ** 2

    @property
    def linear_rates(self) -> np.ndarray:
        """Decay rates of the linear part per packed component, shape ``(4, n, m)``."""
        k2 = self.grid.k2
        return np.stack([self.nu * k2, self.nu * k2, self.dcoef * k2, self.dcoef * k2])


def shear_force(grid: Grid, amplitude: float = 1.0, mode: int = 1) -> VectorField:
    if not 1 <= mode <= grid.dealias_cutoff:
        raise ValueError(f"force mode {mode} outside the resolved band 1..{grid.dealias_cutoff}")
    c = np.zeros((2,) + grid.spectral_shape, dtype=complex)
    # sin(m y) = (e^{imy} - e^{-imy}) / 2i; only ky = +m is stored
    c[0, 0, mode] = amplitude / 2j
    return VectorField(grid, c)


@dataclass(frozen=True, eq=False)
class NpnsState:
    """Velocity, total concentration and charge density at one time instant."""

    grid: Grid
    data: np.ndarray
    time: float = 0.0
    gauge: Gauge = Gauge.PHYSICAL

    def __post_init__(self):
        if self.data.shape[-3:] != (4,) + self.grid.spectral_shape:
            raise ValueError(f"packed state shape {self.data.shape} invalid for n={self.grid.n}")
        object.__setattr__(self, "gauge", Gauge(self.gauge))

    @classmethod
    def from_fields(
        cls,
        velocity: VectorField,
        sigma: SpectralField,
        rho: SpectralField,
        time: float = 0.0,
        gauge: Gauge = Gauge.PHYSICAL,
    ) -> "NpnsState":
        grid = velocity.grid
        if sigma.grid != grid or rho.grid != grid:
            raise ValueError("state components live on different grids")
        data = np.concatenate(
            [velocity.coeffs, sigma.coeffs[..., None, :, :], rho.coeffs[..., None, :, :]], axis=-3
        ).astype(complex)
        return cls(grid, data, float(time), gauge)

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.data.shape[:-3]

    @property
    def velocity(self) -> VectorField:
        return VectorField(self.grid, self.data[..., UX : UY + 1, :, :])

    @property
    def sigma(self) -> SpectralField:
        return SpectralField(self.grid, self.data[..., SIGMA, :, :])

    @property
    def rho(self) -> SpectralField:
        return SpectralField(self.grid, self.data[..., RHO, :, :])

    def member(self, index) -> "NpnsState":
        return NpnsState(self.grid, self.data[index], self.time, self.gauge)

    def with_data(self, data: np.ndarray, time: float | None = None, gauge: Gauge | None = None):
        return NpnsState(
            self.grid, data, self.time if time is None else time, self.gauge if gauge is None else gauge
        )

    def concentrations(self) -> tuple[np.ndarray, np.ndarray]:
        """Real-space ``c1 = (sigma + rho) / 2`` and ``c2 = (sigma - rho) / 2``."""
        s = to_physical(self.sigma)
        r = to_physical(self.rho)
        return 0.5 * (s + r), 0.5 * (s - r)

    def divergence_max(self) -> float:
        return float(np.max(np.abs(divergence(self.velocity).coeffs), initial=0.0))

    def means(self) -> tuple[np.ndarray, np.ndarray]:
        """Spatial means of sigma and rho."""
        return self.data[..., SIGMA, 0, 0].real, self.data[..., RHO, 0, 0].real


@dataclass(frozen=True, eq=False)
class Tendency:
    """Time derivative of a state, component by component."""

    velocity: VectorField
    sigma: SpectralField
    rho: SpectralField
    packed: np.ndarray = field(repr=False, default=None)


# -- fused kernel -------------------------------------------------------------------


def explicit_terms(
    data: np.ndarray, z, grid: Grid, params: PhysicalParams
) -> tuple[np.ndarray, np.ndarray]:
    """Explicit (non-diffusive) tendency of a packed transformed-gauge state.

    ``z`` is a scalar or an array broadcastable to the batch shape.  Returns the
    tendency with the same shape as ``data`` and the maximum advecting speed
    ``|v / z|`` per batch member.
    """
    n = grid.n
    kx, ky = grid.kx_d, grid.ky_d
    z = np.asarray(z, dtype=float)
    zf = z[..., None, None]
    inv_zf = 1.0 / zf

    phi = data[..., RHO, :, :] * (grid.inv_k2 / params.eps0)
    spec = np.concatenate(
        [data, (1j * kx * phi)[..., None, :, :], (1j * ky * phi)[..., None, :, :]], axis=-3
    )
    vx, vy, s, r, px, py = np.moveaxis(inverse(spec, n), -3, 0)
    ax = vx * inv_zf
    ay = vy * inv_zf
    dc = params.dcoef
    prods = np.stack(
        [
            ax * vx,
            ax * vy,
            ay * vy,
            zf * r * px,
            zf * r * py,
            dc * r * px - ax * s,
            dc * r * py - ay * s,
            dc * s * px - ax * r,
            dc * s * py - ay * r,
        ],
        axis=-3,
    )
    F = forward(prods) * grid.dealias_mask
    ikx = 1j * kx
    iky = 1j * ky
    f = params.force.coeffs * grid.dealias_mask
    mom = np.stack(
        [
            -(ikx * F[..., 0, :, :] + iky * F[..., 1, :, :]) - F[..., 3, :, :] + zf * f[0],
            -(ikx * F[..., 1, :, :] + iky * F[..., 2, :, :]) - F[..., 4, :, :] + zf * f[1],
        ],
        axis=-3,
    )
    mom = project_coeffs(mom, grid)
    mom[..., 0, 0] = 0.0
    dsig = ikx * F[..., 5, :, :] + iky * F[..., 6, :, :]
    drho = ikx * F[..., 7, :, :] + iky * F[..., 8, :, :]
    out = np.concatenate([mom, dsig[..., None, :, :], drho[..., None, :, :]], axis=-3)
    speed = np.sqrt(np.max(ax * ax + ay * ay, axis=(-2, -1)))
    return out, speed


def _validate_z(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)) or np.any(z <= 0):
        raise ValueError(f"z must be positive and finite, got {z}")
    return z


def _full_rhs(state: NpnsState, params: PhysicalParams, z) -> Tendency:
    if state.grid != params.grid:
        raise ValueError(f"grid mismatch: state n={state.grid.n}, params n={params.grid.n}")
    solve_poisson(state.rho, params.eps0)  # raises on non-neutral charge
    expl, _ = explicit_terms(state.data, z, state.grid, params)
    packed = expl - params.linear_rates * state.data
    g = state.grid
    return Tendency(
        VectorField(g, packed[..., UX : UY + 1, :, :]),
        SpectralField(g, packed[..., SIGMA, :, :]),
        SpectralField(g, packed[..., RHO, :, :]),
        packed,
    )


def rhs_deterministic(state: NpnsState, params: PhysicalParams) -> Tendency:
    """Time derivative in the physical gauge with no noise."""
    if state.gauge is not Gauge.PHYSICAL:
        raise ValueError("rhs_deterministic expects a physical-gauge state")
    return _full_rhs(state, params, 1.0)


def rhs_transformed(state: NpnsState, params: PhysicalParams, z) -> Tendency:
    """Time derivative of ``(v, sigma, rho)`` for a frozen value of ``z``."""
    if state.gauge is not Gauge.TRANSFORMED:
        raise ValueError("rhs_transformed expects a transformed-gauge state")
    return _full_rhs(state, params, _validate_z(z))


# -- reference operators ---------------------------------------------------------------


def advect(u: VectorField, v: VectorField) -> VectorField:
    """Dealiased ``(u . grad) v`` in advective form."""
    gx = gradient(v.x)
    gy = gradient(v.y)
    cx = product(u.x, gx.x).coeffs + product(u.y, gx.y).coeffs
    cy = product(u.x, gy.x).coeffs + product(u.y, gy.y).coeffs
    return VectorField(u.grid, np.stack([cx, cy], axis=-3))


def trilinear_b(u: VectorField, v: VectorField, w: VectorField):
    """``b(u, v, w) = integral of (u . grad v) . w``."""
    if not (u.grid == v.grid == w.grid):
        raise ValueError("trilinear_b: grid mismatch")
    return inner(advect(u, v), w)


def nonlinear_term(u: VectorField) -> VectorField:
    """``B(u) = P[(u . grad) u]``."""
    return leray_project(advect(u, u))


def migration_term(c: SpectralField, phi: SpectralField, sign: int = 1) -> SpectralField:
    """``sign * div(c grad phi)`` with dealiased products."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    g = gradient(phi)
    flux = VectorField(c.grid, np.stack([product(c, g.x).coeffs, product(c, g.y).coeffs], axis=-3))
    return divergence(flux).scaled(sign)


def coulomb_force(rho: SpectralField, eps0: float) -> VectorField:
    """``P[rho grad phi]`` for the potential of ``rho``."""
    g = gradient(solve_poisson(rho, eps0))
    return leray_project(
        VectorField(rho.grid, np.stack([product(rho, g.x).coeffs, product(rho, g.y).coeffs], axis=-3))
    )


def charge_sigma_integral(rho: SpectralField, sigma: SpectralField):
    """``integral of rho^2 sigma`` by grid quadrature (exact for dealiased inputs)."""
    r = to_physical(rho)
    s = to_physical(sigma)
    return rho.grid.h**2 * np.sum(r * r * s, axis=(-2, -1))


def potential_charge_sigma_integral(rho: SpectralField, sigma: SpectralField, eps0: float):
    """``integral of rho * lap(phi) * sigma``."""
    lap_phi = to_physical(laplacian(solve_poisson(rho, eps0)))
    return rho.grid.h**2 * np.sum(to_physical(rho) * lap_phi * to_physical(sigma), axis=(-2, -1))


# -- packed-state norms ------------------------------------------------------------------


def component_sq_norms(data: np.ndarray, grid: Grid) -> np.ndarray:
    """Squared L2 norms of the four packed components, shape ``(..., 4)``."""
    return AREA * np.sum(np.abs(data) ** 2 * grid.weights, axis=(-2, -1))


def component_sq_h1(data: np.ndarray, grid: Grid) -> np.ndarray:
    return AREA * np.sum(grid.k2 * np.abs(data) ** 2 * grid.weights, axis=(-2, -1))


def fluctuation(data: np.ndarray) -> np.ndarray:
    """Copy of a packed state with the mean of sigma removed."""
    out = np.array(data, copy=True)
    out[..., SIGMA, 0, 0] = 0.0
    return out


def h_norm(data: np.ndarray, grid: Grid, about_background: bool = False) -> np.ndarray:
    """Product norm ``(|u|^2 + |sigma|^2 + |rho|^2)^(1/2)``.

    With ``about_background`` the constant part of sigma is excluded, which
    measures the distance to the rest state carrying the same total mass.
    """
    d = fluctuation(data) if about_background else data
    return np.sqrt(np.sum(component_sq_norms(d, grid), axis=-1))


def v_norm(data: np.ndarray, grid: Grid) -> np.ndarray:
    """Product of H1 seminorms; constants are invisible to it."""
    return np.sqrt(np.sum(component_sq_h1(data, grid), axis=-1))
