"""Finite point-cloud surrogates of pullback attractors and their comparison.

A cloud is the image at time 0 of an initial ensemble pulled back from the
deepest of several start times ``t0``.  The largest displacement between the
two deepest levels is the convergence gauge reported with every distance.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .checkpoint import atomic_write, decode_state, encode_state
from .estimates import pullback_batch
from .integrator import IntegratorConfig, integrate, to_physical_gauge, to_transformed, z_series
from .npns import UX, UY, Gauge, NpnsState, PhysicalParams, component_sq_h1, component_sq_norms
from .spectral import AREA, Grid

METRICS = ("H", "V")


@dataclass(frozen=True, eq=False)
class AttractorCloud:
    epsilon: float
    seed: int | None
    t0: float
    points: NpnsState
    gauge: float
    displacements: tuple[float, ...] = ()
    levels: tuple[float, ...] = ()
    converged: bool = True
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.points.data.shape[0]

    @property
    def grid(self) -> Grid:
        return self.points.grid


@dataclass(frozen=True)
class SemiDistanceResult:
    value: float
    witness: tuple[int, int]
    metric: str


def pairwise_distances(a: np.ndarray, b: np.ndarray, grid: Grid, metric: str = "H") -> np.ndarray:
    """Matrix of product-norm distances between packed states ``a[i]`` and ``b[j]``."""
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    diff = a[:, None] - b[None, :]
    sq = component_sq_norms(diff, grid) if metric == "H" else component_sq_h1(diff, grid)
    return np.sqrt(np.sum(sq, axis=-1))


def semi_distance(a: AttractorCloud | NpnsState, b: AttractorCloud | NpnsState, metric: str = "H") -> SemiDistanceResult:
    """``sup_{x in a} inf_{y in b} |x - y|`` over the finite clouds."""
    pa = a.points if isinstance(a, AttractorCloud) else a
    pb = b.points if isinstance(b, AttractorCloud) else b
    if pa.grid != pb.grid:
        raise ValueError("clouds live on different grids")
    if pa.data.ndim != 4 or pb.data.ndim != 4 or not len(pa.data) or not len(pb.data):
        raise ValueError("semi_distance needs two non-empty clouds")
    d = pairwise_distances(pa.data, pb.data, pa.grid, metric)
    nearest = d.argmin(axis=1)
    mins = d[np.arange(len(d)), nearest]
    worst = int(mins.argmax())
    return SemiDistanceResult(float(mins[worst]), (worst, int(nearest[worst])), metric)


def hausdorff(a, b, metric: str = "H") -> float:
    return max(semi_distance(a, b, metric).value, semi_distance(b, a, metric).value)


def pullback_level(t0: float, path, ensemble: NpnsState, params: PhysicalParams, config: IntegratorConfig,
                   epsilon: float) -> np.ndarray:
    """Time-0 images of the whole ensemble started at ``t0``."""
    out, _ = pullback_batch(t0, path, ensemble, params, config, epsilon)
    return out.data


def assemble_cloud(epsilon: float, seed, levels, finals: list[np.ndarray], grid: Grid,
                   provenance: dict | None = None, floor: float = 1e-12) -> AttractorCloud:
    """Build the cloud from per-level images ordered by ``levels`` (negative, decreasing)."""
    disp = tuple(
        float(np.max(np.sqrt(np.sum(component_sq_norms(finals[j + 1] - finals[j], grid), axis=-1))))
        for j in range(len(finals) - 1)
    )
    gauge = disp[-1] if disp else math.inf
    scale = float(np.max(np.sqrt(np.sum(component_sq_norms(finals[-1], grid), axis=-1))))
    converged = bool(disp) and (len(disp) < 2 or disp[-1] < disp[-2] or gauge <= floor * max(scale, 1.0))
    return AttractorCloud(
        float(epsilon),
        seed,
        float(levels[-1]),
        NpnsState(grid, finals[-1], 0.0, Gauge.PHYSICAL),
        gauge,
        disp,
        tuple(float(t) for t in levels),
        converged,
        dict(provenance or {}),
    )


def build_cloud(epsilon: float, path, params: PhysicalParams, t0_list, init_ensemble: NpnsState,
                config: IntegratorConfig, seed=None) -> AttractorCloud:
    """Pull the ensemble back from every ``t0`` and keep the deepest images.

    Clouds whose displacement fails to shrink over the last three levels are
    marked ``converged=False``.
    """
    levels = sorted((float(t) for t in t0_list), reverse=True)
    if not levels or levels[0] >= 0:
        raise ValueError("t0_list must hold negative times")
    if init_ensemble.data.ndim != 4 or len(init_ensemble.data) == 0:
        raise ValueError("init_ensemble must be a non-empty batch of states")
    finals = [pullback_level(t0, path, init_ensemble, params, config, epsilon) for t0 in levels]
    return assemble_cloud(epsilon, seed, levels, finals, init_ensemble.grid,
                          {"members": len(init_ensemble.data)})


# -- epsilon limits --------------------------------------------------------------------


@dataclass
class ConvergenceTable:
    epsilon: np.ndarray
    error: np.ndarray
    slope: float
    monotone: bool
    passed: bool

    def rows(self):
        return list(zip(self.epsilon, self.error))


def loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return math.nan
    return float(stats.linregress(np.log(x[keep]), np.log(y[keep])).slope)


def pathwise_convergence_check(epsilon_list, path, params: PhysicalParams, x0: NpnsState, t_final: float,
                               config: IntegratorConfig, slope_range=(0.7, 1.3)) -> ConvergenceTable:
    """``e(eps) = |v_eps(t_final) - u(t_final)|`` from one shared start, path, grid and step.

    All runs share one batched integration; the deterministic reference is
    batch member 0.
    """
    eps = np.array([0.0] + [float(e) for e in epsilon_list])
    data = np.broadcast_to(x0.data, (len(eps),) + x0.data.shape).copy()
    start = NpnsState(x0.grid, data, 0.0, Gauge.TRANSFORMED)
    traj = integrate(start, params, path, t_final, config, eps, diagnostics=False)
    vel = traj.final.data[:, UX : UY + 1]
    diff = vel[1:] - vel[0]
    err = np.sqrt(AREA * np.sum(np.abs(diff) ** 2 * x0.grid.weights, axis=(-3, -2, -1)))
    e_arr = eps[1:]
    order = np.argsort(-e_arr)
    e_sorted, err_sorted = e_arr[order], err[order]
    positive = e_sorted > 0
    monotone = bool(np.all(np.diff(err_sorted[positive]) < 0)) if positive.sum() > 1 else True
    slope = loglog_slope(e_sorted, err_sorted)
    if np.all(err_sorted == 0):
        passed = True
    else:
        passed = monotone and slope_range[0] <= slope <= slope_range[1]
    return ConvergenceTable(e_arr, err, slope, monotone, bool(passed))


@dataclass
class SweepTable:
    epsilon: np.ndarray
    distance: np.ndarray
    gauge: np.ndarray
    converged: np.ndarray
    fraction: float
    passed: bool
    status: str

    def rows(self):
        return list(zip(self.epsilon, self.distance, self.gauge, self.converged))


def sweep_verdict(epsilons, distances, gauges, converged, fraction: float = 0.25) -> tuple[bool, str]:
    e = np.asarray(epsilons, dtype=float)
    d = np.asarray(distances, dtype=float)
    if len(e) == 0:
        return True, "pass"
    lo, hi = int(e.argmin()), int(e.argmax())
    passed = bool(d[lo] <= fraction * d[hi]) if lo != hi else bool(d[lo] <= np.asarray(gauges)[lo] or e[lo] == 0)
    if not np.all(converged):
        return passed, "indicative"
    return passed, "pass" if passed else "fail"


def upper_semicontinuity_sweep(epsilon_list, path, params: PhysicalParams, init_ensemble: NpnsState, t0_list,
                               config: IntegratorConfig, fraction: float = 0.25,
                               reference: AttractorCloud | None = None) -> tuple[SweepTable, dict]:
    """Semi-distance from each noisy cloud to the deterministic cloud built the same way."""
    ref = reference or build_cloud(0.0, None, params, t0_list, init_ensemble, config)
    clouds = {0.0: ref}
    dist, gauges, conv = [], [], []
    for eps in epsilon_list:
        c = ref if eps == 0 else build_cloud(float(eps), path, params, t0_list, init_ensemble, config)
        clouds[float(eps)] = c
        dist.append(semi_distance(c, ref, "H").value)
        gauges.append(c.gauge + ref.gauge)
        conv.append(c.converged and ref.converged)
    passed, status = sweep_verdict(epsilon_list, dist, gauges, conv, fraction)
    table = SweepTable(np.array(epsilon_list, dtype=float), np.array(dist), np.array(gauges), np.array(conv),
                       fraction, passed, status)
    return table, clouds


def invariance_defect(cloud: AttractorCloud, path, params: PhysicalParams, tau: float, init_ensemble: NpnsState,
                      config: IntegratorConfig) -> tuple[float, float]:
    """Distance between ``S(tau, w)`` applied to the cloud and the cloud built for ``theta_tau w``.

    Returns ``(distance, combined gauge)``.
    """
    start = to_transformed(cloud.points, np.ones(len(cloud)))
    moved = integrate(start, params, path, tau, config, cloud.epsilon, diagnostics=False).final
    z_tau = z_series(path, cloud.epsilon, np.array([tau]), moved.batch_shape)[0] if cloud.epsilon else 1.0
    moved = to_physical_gauge(moved, z_tau)
    shifted = None if path is None else path.shift_theta(tau)
    target = build_cloud(cloud.epsilon, shifted, params, cloud.levels, init_ensemble, config)
    d = semi_distance(NpnsState(cloud.grid, moved.data), target, "H").value
    return d, cloud.gauge + target.gauge


# -- persistence -----------------------------------------------------------------------------


def save_cloud(directory: str | os.PathLike, cloud: AttractorCloud) -> list[Path]:
    """Write one checkpoint per point plus ``index.json``; returns the written paths."""
    directory = Path(directory)
    n = cloud.grid.n
    written = []
    names = []
    for i, point in enumerate(cloud.points.data):
        name = f"point_{i:03d}.npns"
        atomic_write(directory / name, encode_state(point, n))
        names.append(name)
        written.append(directory / name)
    index = {
        "epsilon": cloud.epsilon,
        "seed": cloud.seed,
        "t0": cloud.t0,
        "levels": list(cloud.levels),
        "gauge": cloud.gauge,
        "displacements": list(cloud.displacements),
        "converged": cloud.converged,
        "n": n,
        "points": names,
        "provenance": cloud.provenance,
    }
    atomic_write(directory / "index.json", json.dumps(index, indent=2, sort_keys=True) + "\n")
    written.append(directory / "index.json")
    return written


def load_cloud(directory: str | os.PathLike) -> AttractorCloud:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    pts = []
    for name in index["points"]:
        data, n = decode_state((directory / name).read_bytes())
        if n != index["n"]:
            raise ValueError(f"{name}: grid n={n} disagrees with index n={index['n']}")
        pts.append(data)
    grid = Grid(index["n"])
    return AttractorCloud(
        index["epsilon"],
        index["seed"],
        index["t0"],
        NpnsState(grid, np.stack(pts), 0.0, Gauge.PHYSICAL),
        index["gauge"],
        tuple(index["displacements"]),
        tuple(index["levels"]),
        index["converged"],
        index.get("provenance", {}),
    )
