"""Fourier representation of scalar and vector fields on the periodic square [0, 2pi]^2.

Coefficients are stored in the non-redundant half-spectrum layout produced by a
real 2D FFT: shape ``(..., n, n // 2 + 1)`` with the first axis carrying the full
x-wavenumber range and the last axis carrying ``ky = 0 .. n/2``.  They are
normalized so that ``f(x) = sum_k c_k exp(i k.x)``.  Any leading axes are batch
axes and are carried through every operation.

Real-space samples use ``values[..., ix, iy]`` with ``x = ix * h``, ``y = iy * h``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

TWO_PI = 2.0 * math.pi
AREA = TWO_PI**2


class SymmetryError(ValueError):
    """Coefficients do not describe a real-valued field."""


class ChargeNeutralityError(ValueError):
    """A Poisson source with nonzero mean has no periodic solution."""


@dataclass(frozen=True)
class Grid:
    """Collocation grid with ``n`` points (and modes) per dimension."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"grid size n must be even and >= 8, got {self.n}")

    @property
    def m(self) -> int:
        return self.n // 2 + 1

    @property
    def dealias_cutoff(self) -> int:
        # largest K with 3K < n: quadratic products of modes |k| <= K alias only above K
        return (self.n - 1) // 3

    @property
    def domain_length(self) -> float:
        return TWO_PI

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def spectral_shape(self) -> tuple[int, int]:
        return (self.n, self.m)

    @cached_property
    def kx(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, 1.0 / self.n).reshape(self.n, 1)

    @cached_property
    def ky(self) -> np.ndarray:
        return np.arange(self.m, dtype=float).reshape(1, self.m)

    @cached_property
    def kx_d(self) -> np.ndarray:
        """x-wavenumbers used for differentiation (Nyquist row zeroed)."""
        k = self.kx.copy()
        k[self.n // 2, 0] = 0.0
        return k

    @cached_property
    def ky_d(self) -> np.ndarray:
        k = self.ky.copy()
        k[0, -1] = 0.0
        return k

    @cached_property
    def k2(self) -> np.ndarray:
        return self.kx**2 + self.ky**2

    @cached_property
    def inv_k2(self) -> np.ndarray:
        out = np.zeros(self.spectral_shape)
        nz = self.k2 > 0
        out[nz] = 1.0 / self.k2[nz]
        return out

    @cached_property
    def kd2(self) -> np.ndarray:
        return self.kx_d**2 + self.ky_d**2

    @cached_property
    def inv_kd2(self) -> np.ndarray:
        out = np.zeros(self.spectral_shape)
        nz = self.kd2 > 0
        out[nz] = 1.0 / self.kd2[nz]
        return out

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        K = self.dealias_cutoff
        return (np.abs(self.kx) <= K) & (np.abs(self.ky) <= K)

    @cached_property
    def weights(self) -> np.ndarray:
        """Multiplicity of each half-spectrum column in the full spectrum."""
        w = np.full((1, self.m), 2.0)
        w[0, 0] = 1.0
        w[0, -1] = 1.0
        return w

    @cached_property
    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")


# -- raw array transforms -------------------------------------------------------


def forward(values: np.ndarray) -> np.ndarray:
    """Real samples ``(..., n, n)`` to normalized half-spectrum coefficients."""
    return sfft.rfft2(values, axes=(-2, -1), norm="forward")


def inverse(coeffs: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfft2(coeffs, s=(n, n), axes=(-2, -1), norm="forward")


def hermitian_defect(coeffs: np.ndarray, n: int) -> float:
    """Largest violation of c(-k) = conj(c(k)) in the self-conjugate columns."""
    idx = (-np.arange(n)) % n
    worst = 0.0
    for j in (0, n // 2):
        col = coeffs[..., :, j]
        worst = max(worst, float(np.max(np.abs(col[..., idx] - np.conj(col)), initial=0.0)))
    return worst


def half_to_full(coeffs: np.ndarray, n: int) -> np.ndarray:
    """Expand half-spectrum coefficients to the full ``(..., n, n)`` FFT-ordered array."""
    m = n // 2 + 1
    full = np.zeros(coeffs.shape[:-2] + (n, n), dtype=complex)
    full[..., :, :m] = coeffs
    k1 = (-np.arange(n)) % n
    for j in range(m, n):
        full[..., :, j] = np.conj(coeffs[..., k1, n - j])
    return full


def full_hermitian_defect(full: np.ndarray) -> float:
    n = full.shape[-1]
    idx = (-np.arange(n)) % n
    mirrored = np.conj(full[..., idx, :][..., :, idx])
    return float(np.max(np.abs(full - mirrored), initial=0.0))


# -- typed fields -----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SpectralField:
    """A real periodic scalar field held as truncated Fourier coefficients."""

    grid: Grid
    coeffs: np.ndarray
    mean_free: bool = False

    def __post_init__(self):
        if self.coeffs.shape[-2:] != self.grid.spectral_shape:
            raise ValueError(
                f"coefficient shape {self.coeffs.shape} does not match grid n={self.grid.n}"
            )
        if self.mean_free and np.any(self.coeffs[..., 0, 0] != 0):
            raise ValueError("mean_free field has a nonzero (0, 0) coefficient")

    @classmethod
    def zeros(cls, grid: Grid, mean_free: bool = False) -> "SpectralField":
        return cls(grid, np.zeros(grid.spectral_shape, dtype=complex), mean_free)

    @classmethod
    def from_full(cls, grid: Grid, full: np.ndarray, mean_free: bool = False, tol: float = 1e-12):
        """Build from a full FFT-ordered ``n x n`` coefficient array; rejects non-real fields."""
        full = np.asarray(full, dtype=complex)
        scale = max(1.0, float(np.max(np.abs(full), initial=0.0)))
        if full_hermitian_defect(full) > tol * scale:
            raise SymmetryError("coefficients violate Hermitian symmetry c(-k) = conj(c(k))")
        half = full[..., :, : grid.m].copy()
        if mean_free:
            half[..., 0, 0] = 0.0
        return cls(grid, half, mean_free)

    def full_coeffs(self) -> np.ndarray:
        return half_to_full(self.coeffs, self.grid.n)

    def coeff(self, k1: int, k2: int) -> complex:
        """Coefficient of the wavevector (k1, k2), with k in [-n/2, n/2)."""
        n = self.grid.n
        return complex(self.full_coeffs()[..., k1 % n, k2 % n])

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs + other.coeffs, self.mean_free and other.mean_free)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs - other.coeffs, self.mean_free and other.mean_free)

    def scaled(self, a: float) -> "SpectralField":
        return SpectralField(self.grid, a * self.coeffs, self.mean_free)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Two scalar components on one grid; ``coeffs`` has shape ``(..., 2, n, m)``."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape[-3:] != (2,) + self.grid.spectral_shape:
            raise ValueError(f"vector coefficient shape {self.coeffs.shape} invalid for n={self.grid.n}")

    @classmethod
    def from_components(cls, fx: SpectralField, fy: SpectralField) -> "VectorField":
        if fx.grid != fy.grid:
            raise ValueError("components live on different grids")
        return cls(fx.grid, np.stack([fx.coeffs, fy.coeffs], axis=-3))

    @classmethod
    def zeros(cls, grid: Grid) -> "VectorField":
        return cls(grid, np.zeros((2,) + grid.spectral_shape, dtype=complex))

    @property
    def x(self) -> SpectralField:
        return SpectralField(self.grid, self.coeffs[..., 0, :, :])

    @property
    def y(self) -> SpectralField:
        return SpectralField(self.grid, self.coeffs[..., 1, :, :])

    def __add__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "VectorField") -> "VectorField":
        return VectorField(self.grid, self.coeffs - other.coeffs)

    def scaled(self, a: float) -> "VectorField":
        return VectorField(self.grid, a * self.coeffs)


Field = SpectralField | VectorField


def _same_grid(*fields: Field) -> Grid:
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise ValueError(f"grid mismatch: n={grid.n} vs n={f.grid.n}")
    return grid


# -- transforms --------------------------------------------------------------------


def to_physical(field: Field, tol: float = 1e-12) -> np.ndarray:
    """Real-space samples on the n x n collocation grid."""
    n = field.grid.n
    scale = max(1.0, float(np.max(np.abs(field.coeffs), initial=0.0)))
    if hermitian_defect(field.coeffs, n) > tol * scale:
        raise SymmetryError("coefficients violate Hermitian symmetry c(-k) = conj(c(k))")
    return inverse(field.coeffs, n)


def to_spectral(grid: Grid, values: np.ndarray, mean_free: bool = False) -> SpectralField:
    values = np.asarray(values, dtype=float)
    if values.shape[-2:] != (grid.n, grid.n):
        raise ValueError(f"sample shape {values.shape} does not match grid n={grid.n}")
    c = forward(values)
    if mean_free:
        c[..., 0, 0] = 0.0
    return SpectralField(grid, c, mean_free)


def vector_to_spectral(grid: Grid, values: np.ndarray) -> VectorField:
    values = np.asarray(values, dtype=float)
    return VectorField(grid, forward(values))


def dealias(field: Field) -> Field:
    """Zero every mode with |k1| or |k2| above the 2/3-rule cutoff."""
    c = field.coeffs * field.grid.dealias_mask
    if isinstance(field, VectorField):
        return VectorField(field.grid, c)
    return SpectralField(field.grid, c, field.mean_free)


def product(a: SpectralField, b: SpectralField) -> SpectralField:
    """Pseudo-spectral product a*b, dealiased."""
    grid = _same_grid(a, b)
    n = grid.n
    c = forward(inverse(a.coeffs, n) * inverse(b.coeffs, n)) * grid.dealias_mask
    return SpectralField(grid, c)


# -- differential operators ---------------------------------------------------------


def gradient(field: SpectralField) -> VectorField:
    g = field.grid
    c = field.coeffs
    return VectorField(g, np.stack([1j * g.kx_d * c, 1j * g.ky_d * c], axis=-3))


def laplacian(field: SpectralField) -> SpectralField:
    return SpectralField(field.grid, -field.grid.k2 * field.coeffs, field.mean_free)


def divergence(vf: VectorField) -> SpectralField:
    g = vf.grid
    c = 1j * g.kx_d * vf.coeffs[..., 0, :, :] + 1j * g.ky_d * vf.coeffs[..., 1, :, :]
    return SpectralField(g, c, mean_free=True)


def project_coeffs(c: np.ndarray, grid: Grid) -> np.ndarray:
    """Leray projection on raw ``(..., 2, n, m)`` coefficients."""
    kx, ky = grid.kx_d, grid.ky_d
    cx = c[..., 0, :, :]
    cy = c[..., 1, :, :]
    q = (kx * cx + ky * cy) * grid.inv_kd2
    return np.stack([cx - kx * q, cy - ky * q], axis=-3)


def leray_project(vf: VectorField) -> VectorField:
    """Orthogonal projection onto divergence-free fields: v - grad(lap^-1 div v)."""
    return VectorField(vf.grid, project_coeffs(vf.coeffs, vf.grid))


def solve_poisson(rho: SpectralField, eps0: float, neutral_tol: float = 1e-10) -> SpectralField:
    """Potential phi with -eps0 * lap(phi) = rho and zero mean."""
    if not eps0 > 0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    mean = np.abs(rho.coeffs[..., 0, 0])
    if np.any(mean > neutral_tol):
        raise ChargeNeutralityError(f"charge not neutral: mean(rho) = {float(np.max(mean)):.3e}")
    g = rho.grid
    return SpectralField(g, rho.coeffs * g.inv_k2 / eps0, mean_free=True)


# -- norms -----------------------------------------------------------------------


def _sum_modes(a: np.ndarray, grid: Grid, components: bool) -> np.ndarray | float:
    s = np.sum(a * grid.weights, axis=(-2, -1))
    if components:
        s = np.sum(s, axis=-1)
    return s if np.ndim(s) else float(s)


def inner(a: Field, b: Field):
    """L2 inner product (a, b) over the torus."""
    grid = _same_grid(a, b)
    prod = (a.coeffs * np.conj(b.coeffs)).real
    return AREA * _sum_modes(prod, grid, isinstance(a, VectorField))


def norm_l2(field: Field):
    """L2 norm by Parseval."""
    vec = isinstance(field, VectorField)
    return np.sqrt(AREA * _sum_modes(np.abs(field.coeffs) ** 2, field.grid, vec))


def seminorm_h1(field: Field):
    """L2 norm of the gradient by Parseval."""
    vec = isinstance(field, VectorField)
    g = field.grid
    return np.sqrt(AREA * _sum_modes(g.kd2 * np.abs(field.coeffs) ** 2, g, vec))


def norm_lp(field: Field, p: float):
    """L^p norm by quadrature on the collocation grid (|u| Euclidean for vectors)."""
    if p not in (3, 4):
        raise ValueError(f"only p in {{3, 4}} supported, got {p}")
    vals = inverse(field.coeffs, field.grid.n)
    if isinstance(field, VectorField):
        mag = np.sqrt(np.sum(vals**2, axis=-3))
    else:
        mag = np.abs(vals)
    h2 = field.grid.h**2
    return (h2 * np.sum(mag**p, axis=(-2, -1))) ** (1.0 / p)
