"""Integrating-factor time stepping and the cocycle built on it.

Diffusion (``nu * A`` on the velocity, ``D * lap`` on the concentrations) is
integrated exactly through the factor ``exp(-rate * dt)``; everything else is
explicit.  ``if_rk2`` is the exponential midpoint rule, ``if_euler`` the
first-order Lawson-Euler step.  The conversion factor ``z`` is frozen at each
substep time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .diagnostics import DiagnosticsTable, compute_diagnostics
from .npns import (
    UX,
    UY,
    Gauge,
    NpnsState,
    PhysicalParams,
    explicit_terms,
    rhs_deterministic,
)
from .spectral import project_coeffs
from .stochastic import EXPONENT_LIMIT, PathExcursion

SCHEMES = ("if_rk2", "if_euler")


class CFLViolation(RuntimeError):
    """The advective CFL number exceeded the configured limit."""

    def __init__(self, message: str, advisory_dt: float):
        super().__init__(message)
        self.advisory_dt = advisory_dt


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    scheme: str = "if_rk2"
    cfl_limit: float = 0.5
    max_z_ratio: float = 1e6
    snapshot_stride: int = 0
    diag_stride: int = 1

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not 0 < self.cfl_limit <= 1:
            raise ValueError(f"cfl_limit must lie in (0, 1], got {self.cfl_limit}")
        if not self.max_z_ratio > 1:
            raise ValueError("max_z_ratio must exceed 1")
        if self.snapshot_stride < 0 or self.diag_stride < 1:
            raise ValueError("strides must be non-negative (snapshots) and positive (diagnostics)")

    def halved(self) -> "IntegratorConfig":
        return IntegratorConfig(
            self.dt / 2,
            self.scheme,
            self.cfl_limit,
            self.max_z_ratio,
            2 * self.snapshot_stride,
            2 * self.diag_stride,
        )


@dataclass
class Trajectory:
    """Snapshots at a fixed stride plus per-step diagnostics, all in one gauge."""

    grid: object
    params: PhysicalParams
    gauge: Gauge
    dt: float
    times: np.ndarray
    snapshots: list[np.ndarray]
    diagnostics: DiagnosticsTable
    epsilon: object = 0.0
    final: NpnsState = field(default=None)

    def member(self, index) -> "Trajectory":
        eps = np.asarray(self.epsilon)
        return Trajectory(
            self.grid,
            self.params,
            self.gauge,
            self.dt,
            self.times,
            [s[index] for s in self.snapshots],
            self.diagnostics.member(index),
            eps[index] if eps.ndim else self.epsilon,
            self.final.member(index),
        )

    def state(self, i: int) -> NpnsState:
        return NpnsState(self.grid, self.snapshots[i], float(self.times[i]), self.gauge)


# -- helpers ------------------------------------------------------------------------


def decay_factors(params: PhysicalParams, dt: float) -> tuple[np.ndarray, np.ndarray]:
    rates = params.linear_rates
    return np.exp(-rates * dt), np.exp(-rates * (dt / 2))


def admissible(data: np.ndarray, grid) -> np.ndarray:
    """Restrict to resolved modes with a divergence-free, mean-free velocity."""
    out = data * grid.dealias_mask
    out[..., UX : UY + 1, :, :] = project_coeffs(out[..., UX : UY + 1, :, :], grid)
    out[..., UX : UY + 1, 0, 0] = 0.0
    return out


def cfl_dt(speed: float, grid, cfl_limit: float = 0.5) -> float:
    """Largest step with ``dt * speed / h <= cfl_limit``."""
    return math.inf if speed <= 0 else cfl_limit * grid.h / speed


def _advance(data, z0, zm, E, Eh, dt, scheme, grid, params, cfl_limit):
    n1, speed = explicit_terms(data, z0, grid, params)
    top = float(np.max(speed, initial=0.0))
    if dt * top / grid.h > cfl_limit:
        raise CFLViolation(
            f"CFL number {dt * top / grid.h:.3f} exceeds {cfl_limit} at dt={dt:g}",
            0.9 * cfl_dt(top, grid, cfl_limit),
        )
    if scheme == "if_euler":
        return E * (data + dt * n1)
    mid = Eh * (data + (0.5 * dt) * n1)
    n2, _ = explicit_terms(mid, zm, grid, params)
    return E * data + dt * (Eh * n2)


def step(state: NpnsState, params: PhysicalParams, z_value, dt: float, scheme: str = "if_rk2",
         cfl_limit: float = 0.5) -> NpnsState:
    """Advance one step; ``z_value`` is a number or a ``(z_start, z_mid)`` pair."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if isinstance(z_value, tuple):
        z0, zm = z_value
    else:
        z0 = zm = z_value
    if state.gauge is Gauge.PHYSICAL and not (np.all(np.asarray(z0) == 1) and np.all(np.asarray(zm) == 1)):
        raise ValueError("physical-gauge states only step with z = 1")
    E, Eh = decay_factors(params, dt)
    out = _advance(state.data, z0, zm, E, Eh, dt, scheme, state.grid, params, cfl_limit)
    return state.with_data(out, time=state.time + dt)


def _as_member_paths(path, batch_shape):
    if path is None or not isinstance(path, (list, tuple)):
        return path
    if (len(path),) != tuple(batch_shape):
        raise ValueError(f"{len(path)} paths for batch shape {batch_shape}")
    return list(path)


def z_series(path, epsilon, times: np.ndarray, batch_shape=(), max_z_ratio: float = math.inf) -> np.ndarray:
    """``z`` at the given times, shape ``(len(times), *batch_shape)``.

    ``path`` may be a single path, a list with one path per batch member, or
    ``None`` when every ``epsilon`` is zero.
    """
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), batch_shape)
    if np.any(eps < 0):
        raise ValueError("epsilon must be non-negative")
    if not np.any(eps):
        return np.ones((len(times),) + tuple(batch_shape))
    if path is None:
        raise ValueError("a path is required when epsilon > 0")
    paths = _as_member_paths(path, batch_shape)
    if isinstance(paths, list):
        omega = np.stack([np.asarray(p.omega(times)) for p in paths], axis=-1)
    else:
        omega = np.asarray(path.omega(times)).reshape((len(times),) + (1,) * len(batch_shape))
    expo = -eps * omega
    worst = float(np.max(np.abs(expo), initial=0.0))
    if worst > EXPONENT_LIMIT:
        raise PathExcursion(f"|eps * omega| reached {worst:.1f} (limit {EXPONENT_LIMIT})")
    if worst > math.log(max_z_ratio):
        raise PathExcursion(f"z left [1/{max_z_ratio:g}, {max_z_ratio:g}]: |eps * omega| = {worst:.2f}")
    return np.exp(expo)


def _step_count(t0: float, t_end: float, dt: float) -> int:
    span = t_end - t0
    if span < 0:
        raise ValueError(f"t_end={t_end} precedes the state time {t0}")
    k = int(round(span / dt))
    if abs(k * dt - span) > 1e-9 * max(1.0, abs(span)):
        raise ValueError(f"dt={dt} does not divide the interval length {span}")
    return k


def integrate(
    state: NpnsState,
    params: PhysicalParams,
    path,
    t_end: float,
    config: IntegratorConfig,
    epsilon=0.0,
    diagnostics: bool = True,
) -> Trajectory:
    """Advance ``state`` to ``t_end`` with fixed steps, recording diagnostics.

    Physical-gauge states are advanced with ``z = 1`` and require
    ``epsilon == 0``; stochastic runs take transformed-gauge states.  The
    initial state is first restricted to the resolved (dealiased) modes.
    """
    grid = state.grid
    if grid != params.grid:
        raise ValueError(f"grid mismatch: state n={grid.n}, params n={params.grid.n}")
    batch = state.batch_shape
    physical = state.gauge is Gauge.PHYSICAL
    if physical and np.any(np.asarray(epsilon)):
        raise ValueError("stochastic runs need a transformed-gauge state; see cocycle_S")
    dt = config.dt
    k_total = _step_count(state.time, t_end, dt)
    times = state.time + dt * np.arange(k_total + 1)
    mids = state.time + dt * (np.arange(k_total) + 0.5)
    if physical:
        z_nodes = z_mid = None
    else:
        z_nodes = z_series(path, epsilon, times, batch, config.max_z_ratio)
        z_mid = z_series(path, epsilon, mids, batch, config.max_z_ratio)

    E, Eh = decay_factors(params, dt)
    data = admissible(state.data, grid)
    stride = config.snapshot_stride
    snap_times, snaps, rows = [], [], []

    def record(k, X):
        last = k == k_total
        if stride and (k % stride == 0 or last) or (not stride and (k == 0 or last)):
            snap_times.append(times[k])
            snaps.append(X)
        if diagnostics and (k % config.diag_stride == 0 or last):
            z = 1.0 if physical else z_nodes[k]
            rows.append(compute_diagnostics(X, z, times[k], grid, params))

    record(0, data)
    for k in range(k_total):
        if physical:
            z0 = zm = 1.0
        else:
            z0, zm = z_nodes[k], z_mid[k]
        data = _advance(data, z0, zm, E, Eh, dt, config.scheme, grid, params, config.cfl_limit)
        record(k + 1, data)

    table = DiagnosticsTable.from_rows(rows) if rows else None
    final = NpnsState(grid, data, float(times[-1]), state.gauge)
    return Trajectory(grid, params, state.gauge, dt, np.array(snap_times), snaps, table, epsilon, final)


# -- cocycle ------------------------------------------------------------------------


def to_transformed(state: NpnsState, z) -> NpnsState:
    if state.gauge is not Gauge.PHYSICAL:
        raise ValueError("state is already transformed")
    data = np.array(state.data, copy=True)
    zf = np.asarray(z, dtype=float)[..., None, None, None]
    data[..., UX : UY + 1, :, :] *= zf
    return state.with_data(data, gauge=Gauge.TRANSFORMED)


def to_physical_gauge(state: NpnsState, z) -> NpnsState:
    if state.gauge is not Gauge.TRANSFORMED:
        raise ValueError("state is already physical")
    data = np.array(state.data, copy=True)
    zf = np.asarray(z, dtype=float)[..., None, None, None]
    data[..., UX : UY + 1, :, :] /= zf
    return state.with_data(data, gauge=Gauge.PHYSICAL)


def cocycle_S(t: float, path, x0: NpnsState, params: PhysicalParams, config: IntegratorConfig,
              epsilon=0.0) -> NpnsState:
    """``S(t, w) x0``: integrate the transformed system from 0 to ``t``, return in the physical gauge."""
    if x0.gauge is not Gauge.PHYSICAL:
        raise ValueError("cocycle_S takes a physical-gauge initial state")
    if t < 0:
        raise ValueError("cocycle time must be non-negative")
    start = NpnsState(x0.grid, x0.data, 0.0, Gauge.TRANSFORMED)  # z(0) = 1
    traj = integrate(start, params, path, t, config, epsilon, diagnostics=False)
    zt = z_series(path, epsilon, np.array([t]), x0.batch_shape)[0]
    return to_physical_gauge(traj.final, zt)


def pullback_evaluate(t0: float, path, x0: NpnsState, params: PhysicalParams, config: IntegratorConfig,
                      epsilon=0.0, route: str = "cocycle") -> NpnsState:
    """State at time 0 of the solution started from ``x0`` at time ``t0 < 0``.

    The ``cocycle`` route evaluates ``S(-t0, theta_t0 w) x0``; the ``direct``
    route integrates the original path segment ``[t0, 0]``.
    """
    if not t0 < 0:
        raise ValueError(f"pullback time must be negative, got {t0}")
    if route == "cocycle":
        shifted = None if path is None else (
            [p.shift_theta(t0) for p in path] if isinstance(path, (list, tuple)) else path.shift_theta(t0)
        )
        out = cocycle_S(-t0, shifted, x0, params, config, epsilon)
        return out.with_data(out.data, time=0.0)
    if route == "direct":
        z0 = z_series(path, epsilon, np.array([t0]), x0.batch_shape)[0]
        start = to_transformed(NpnsState(x0.grid, x0.data, t0, Gauge.PHYSICAL), z0)
        traj = integrate(start, params, path, 0.0, config, epsilon, diagnostics=False)
        return to_physical_gauge(traj.final, 1.0)
    raise ValueError(f"unknown route {route!r}")


def integrate_physical_heun(state: NpnsState, params: PhysicalParams, path, t_end: float, dt: float,
                            epsilon: float) -> NpnsState:
    """Stochastic Heun scheme for the physical-gauge equations with noise ``eps * u o dW``.

    Fully explicit (diffusion included), so ``dt`` must resolve the fastest
    viscous mode.  Used as an independent cross-check of the transformed route.
    """
    if state.gauge is not Gauge.PHYSICAL:
        raise ValueError("Heun route integrates physical-gauge states")
    k_total = _step_count(state.time, t_end, dt)
    times = state.time + dt * np.arange(k_total + 1)
    omega = np.asarray(path.omega(times)) if epsilon else np.zeros(len(times))
    data = admissible(state.data, state.grid)

    def drift(X):
        return rhs_deterministic(NpnsState(state.grid, X), params).packed

    def noise(X):
        out = np.zeros_like(X)
        out[..., UX : UY + 1, :, :] = epsilon * X[..., UX : UY + 1, :, :]
        return out

    for k in range(k_total):
        dw = omega[k + 1] - omega[k]
        f0, g0 = drift(data), noise(data)
        pred = data + dt * f0 + dw * g0
        data = data + 0.5 * dt * (f0 + drift(pred)) + 0.5 * dw * (g0 + noise(pred))
    return NpnsState(state.grid, data, float(times[-1]), Gauge.PHYSICAL)
