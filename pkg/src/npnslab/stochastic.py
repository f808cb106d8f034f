"""Two-sided Wiener paths, the shift flow and the conversion factor ``z = exp(-eps * omega)``.

A :class:`WienerPath` is a pure function of ``(seed, dt_w, level, shift)``.
Grid values are generated lazily in fixed-size blocks, each block drawn from
its own ``SeedSequence`` child, so any window of the path can be evaluated in
any order and always gives the same bits.  Refinement inserts Brownian-bridge
midpoints and never touches existing grid values.  Shifts compose
symbolically: ``theta_a(theta_b(w))`` stores the offset ``a + b``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .checkpoint import atomic_write, csv_text

BLOCK = 1024
EXPONENT_LIMIT = 700.0

_POSITIVE, _NEGATIVE = 0, 1
_cache: dict[tuple, np.ndarray] = {}


class PathExcursion(RuntimeError):
    """``z`` left the representable or configured range along a path."""


def _normals(seed: int, side: int, level: int, block: int) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(side, level, block))
    return np.random.Generator(np.random.PCG64(ss)).standard_normal(BLOCK)


def _draws(seed: int, side: int, level: int, count: int) -> np.ndarray:
    nblocks = -(-count // BLOCK)
    return np.concatenate([_normals(seed, side, level, b) for b in range(nblocks)])[:count]


def _side_values(seed: int, side: int, level: int, dt_w: float, count: int) -> np.ndarray:
    """Values at ``|t| = j * dt_w / 2**level`` for ``j = 0 .. count-1`` on one side."""
    key = (seed, side, level, dt_w)
    cached = _cache.get(key)
    if cached is not None and len(cached) >= count:
        return cached
    # grow geometrically, in whole blocks
    size = max(count, 2 * len(cached) if cached is not None else 0)
    size = -(-(size - 1) // BLOCK) * BLOCK + 1
    if level == 0:
        inc = math.sqrt(dt_w) * _draws(seed, side, 0, size - 1)
        vals = np.concatenate([[0.0], np.cumsum(inc)])
    else:
        coarse = _side_values(seed, side, level - 1, dt_w, (size - 1) // 2 + 1)
        coarse = coarse[: (size - 1) // 2 + 1]
        coarse_dt = dt_w / 2 ** (level - 1)
        noise = _draws(seed, side, level, len(coarse) - 1)
        vals = np.empty(size)
        vals[0::2] = coarse
        vals[1::2] = 0.5 * (coarse[:-1] + coarse[1:]) + 0.5 * math.sqrt(coarse_dt) * noise
    _cache[key] = vals
    return vals


def _raw_eval(seed: int, dt_w: float, level: int, t: np.ndarray) -> np.ndarray:
    """Unshifted piecewise-linear path at arbitrary times."""
    h = dt_w / 2**level
    out = np.empty(t.shape)
    for side, mask in ((_POSITIVE, t >= 0), (_NEGATIVE, t < 0)):
        if not np.any(mask):
            continue
        u = np.abs(t[mask]) / h
        j = np.floor(u).astype(np.int64)
        frac = u - j
        vals = _side_values(seed, side, level, dt_w, int(j.max()) + 2)
        out[mask] = vals[j] * (1.0 - frac) + vals[j + 1] * frac
    return out


class _PathBase:
    """Shared behaviour of sampled and synthetic paths."""

    shift: float

    def _raw(self, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def omega(self, t):
        """Path value; ``omega(0) == 0`` exactly."""
        tt = np.asarray(t, dtype=float)
        base = self._raw(np.array([self.shift]))[0]
        vals = self._raw(np.atleast_1d(tt + self.shift)) - base
        return vals.reshape(tt.shape) if tt.ndim else float(vals[0])

    def shift_theta(self, s: float):
        """``(theta_s w)(t) = w(t + s) - w(s)``."""
        return replace(self, shift=self.shift + float(s))

    def nodes(self, a: float, b: float) -> np.ndarray:
        """Breakpoints of the piecewise-linear interpolant within ``[a, b]``, endpoints included."""
        h = self.resolution
        lo = math.ceil((a + self.shift) / h)
        hi = math.floor((b + self.shift) / h)
        inner = np.arange(lo, hi + 1) * h - self.shift
        inner = inner[(inner > a) & (inner < b)]
        return np.concatenate([[a], inner, [b]])


@dataclass(frozen=True)
class WienerPath(_PathBase):
    """Seeded two-sided Brownian path, linear between grid points of spacing ``dt_w / 2**level``."""

    seed: int
    dt_w: float
    t_min: float = -1.0
    t_max: float = 1.0
    level: int = 0
    shift: float = 0.0

    def __post_init__(self):
        if not (self.dt_w > 0 and math.isfinite(self.dt_w)):
            raise ValueError(f"dt_w must be positive, got {self.dt_w}")
        if not self.t_min <= 0 <= self.t_max:
            raise ValueError(f"need t_min <= 0 <= t_max, got [{self.t_min}, {self.t_max}]")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def resolution(self) -> float:
        return self.dt_w / 2**self.level

    def _raw(self, t: np.ndarray) -> np.ndarray:
        return _raw_eval(self.seed, self.dt_w, self.level, t)

    def refine(self) -> "WienerPath":
        """Halve the resolution by Brownian-bridge midpoints."""
        return replace(self, level=self.level + 1)

    def grid_times(self, a: float | None = None, b: float | None = None) -> np.ndarray:
        a = self.t_min if a is None else a
        b = self.t_max if b is None else b
        h = self.resolution
        return np.arange(math.ceil(a / h - 1e-9), math.floor(b / h + 1e-9) + 1) * h


@dataclass(frozen=True)
class FunctionPath(_PathBase):
    """Deterministic stand-in path ``t -> fn(t)``; must vanish at 0."""

    fn: Callable[[np.ndarray], np.ndarray]
    resolution: float = 0.01
    shift: float = 0.0
    t_min: float = -math.inf
    t_max: float = math.inf

    def _raw(self, t: np.ndarray) -> np.ndarray:
        return np.asarray(self.fn(t), dtype=float) * np.ones_like(t)

    def refine(self) -> "FunctionPath":
        return replace(self, resolution=self.resolution / 2)

    def grid_times(self, a: float | None = None, b: float | None = None) -> np.ndarray:
        h = self.resolution
        return np.arange(math.ceil(a / h - 1e-9), math.floor(b / h + 1e-9) + 1) * h


def zero_path() -> FunctionPath:
    return FunctionPath(np.zeros_like)


def linear_path(rate: float = 1.0) -> FunctionPath:
    return FunctionPath(lambda t: rate * t)


def sample_path(seed: int, t_min: float, t_max: float, dt_w: float) -> WienerPath:
    """Two-sided path on ``[t_min, t_max]``; windows outside extend deterministically on demand."""
    if not t_min <= 0 <= t_max:
        raise ValueError(f"bad interval [{t_min}, {t_max}]: need t_min <= 0 <= t_max")
    path = WienerPath(int(seed), float(dt_w), float(t_min), float(t_max))
    path.omega(np.array([t_min, t_max]))  # materialize the window
    return path


def shift_theta(path, s: float):
    return path.shift_theta(s)


def refine(path):
    return path.refine()


def z_of(path, t, epsilon: float):
    """``exp(-epsilon * omega(t))``; raises :class:`PathExcursion` instead of overflowing."""
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0:
        return np.ones(np.shape(t)) if np.ndim(t) else 1.0
    expo = -epsilon * np.asarray(path.omega(t))
    worst = float(np.max(np.abs(expo), initial=0.0))
    if worst > EXPONENT_LIMIT:
        raise PathExcursion(f"|eps * omega| = {worst:.1f} exceeds {EXPONENT_LIMIT} in z_of")
    z = np.exp(expo)
    return z if np.ndim(z) else float(z)


def integrate_exp_linear(times: np.ndarray, logs: np.ndarray) -> float:
    """Exact integral of ``exp(g)`` for ``g`` linear between the given breakpoints."""
    dt = np.diff(times)
    g0 = logs[:-1]
    dg = np.diff(logs)
    small = np.abs(dg) < 1e-8
    safe = np.where(small, 1.0, dg)
    factor = np.where(small, 1.0 + dg / 2 + dg * dg / 6, np.expm1(dg) / safe)
    return float(np.sum(dt * np.exp(g0) * factor))


def integral_z_power_exp(path, epsilon: float, power: float, rate: float, a: float, b: float) -> float:
    """``integral_a^b z(s)^power * exp(rate * s) ds`` along the piecewise-linear path."""
    s = path.nodes(a, b)
    logs = -power * epsilon * np.asarray(path.omega(s)) + rate * s
    return integrate_exp_linear(s, logs)


@dataclass(frozen=True)
class SublinearityReport:
    """``M(T0) = max_{T0 <= |t| <= H} |omega(t) / t|`` at dyadic ``T0``."""

    t0_values: np.ndarray
    sup_ratio: np.ndarray
    end_ratio: float
    passed: bool

    @property
    def status(self) -> str:
        return "pass" if self.passed else "fail"


def sublinearity_check(path, horizon: float = 1000.0, end_threshold: float = 0.2) -> SublinearityReport:
    """Flag paths whose ``|omega(t)/t|`` does not shrink with ``|t|``.

    Passes when the sup ratio over the outermost dyadic window is below half of
    that over the innermost one and the ratio at the horizon is below
    ``end_threshold``.  Identically zero paths pass.
    """
    if horizon < 100:
        raise ValueError("sublinearity needs a horizon of at least 100")
    h = path.resolution
    t = np.arange(1, int(round(horizon / h)) + 1) * h
    t = np.concatenate([-t[::-1], t])
    ratio = np.abs(np.asarray(path.omega(t)) / t)
    levels = []
    T0 = 1.0
    while T0 <= horizon / 2:
        levels.append(T0)
        T0 *= 2
    levels = np.array(levels)
    sup = np.array([ratio[np.abs(t) >= T].max() for T in levels])
    end = float(max(ratio[0], ratio[-1]))
    if np.all(sup == 0):
        ok = True
    else:
        ok = bool(sup[-1] < 0.5 * sup[0] and end <= end_threshold)
    return SublinearityReport(levels, sup, end, ok)


def export_path_csv(path, a: float, b: float, filename: str | os.PathLike) -> None:
    t = path.grid_times(a, b)
    atomic_write(filename, csv_text(["t", "omega"], zip(t, np.asarray(path.omega(t)))))
