"""Run configuration, job orchestration and on-disk results for the command line."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import plotting
from .attractor import assemble_cloud, pathwise_convergence_check, pullback_level, save_cloud, semi_distance, sweep_verdict
from .checkpoint import atomic_write, csv_text, encode_state, sha256_file
from .diagnostics import DiagnosticsTable
from .estimates import (
    calibrate_tolerance,
    check_decay_H,
    check_gradient_decay_V,
    check_mass_dissipation,
    check_time_averaged_bound,
    check_velocity_energy,
    compute_absorbing_radii,
    mass_dissipation_terms,
    velocity_energy_terms,
)
from .initial import random_state, sample_ball, taylor_green
from .integrator import IntegratorConfig, Trajectory, cfl_dt, integrate
from .npns import Gauge, NpnsState, PhysicalParams, h_norm, shear_force
from .spectral import Grid, VectorField, inverse
from .stochastic import export_path_csv, sample_path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2
COMMANDS = ("simulate", "verify", "pullback", "sweep", "convergence")

# TOML section -> {toml key: RunConfig field}
LAYOUT = {
    "physical": {k: k for k in ("nu", "dcoef", "eps0", "force", "force_amplitude", "force_mode", "force_modes")},
    "noise": {"epsilon": "epsilon", "seed": "seed", "dt_w": "dt_w"},
    "grid": {"n": "n"},
    "integrator": {"dt": "dt", "scheme": "scheme", "cfl_limit": "cfl_limit"},
    "initial": {"kind": "init_kind", "seed": "init_seed", "velocity_norm": "velocity_norm", "mass": "mass",
                "alpha": "alpha", "kmax": "kmax"},
    "experiment": {k: k for k in ("kind", "t_end", "snapshot_stride", "calibrate", "window", "t0_list",
                                  "n_samples", "ball_radius", "epsilons", "fraction", "t_final")},
    "output": {"directory": "directory"},
}


class ConfigError(ValueError):
    """One or more configuration invariants failed; ``errors`` lists them all."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class RunConfig:
    """Every parameter of a run.  Defaults form the order-one reference regime."""

    nu: float = 1.0
    dcoef: float = 1.0
    eps0: float = 1.0
    force: str = "kolmogorov"
    force_amplitude: float = 1.0
    force_mode: int = 1
    force_modes: tuple = ()
    epsilon: float = 0.0
    seed: int = 0
    dt_w: float = 0.01
    n: int = 32
    dt: float = 1e-3
    scheme: str = "if_rk2"
    cfl_limit: float = 0.5
    init_kind: str = "random"
    init_seed: int = 0
    velocity_norm: float = 1.0
    mass: float = 1.0
    alpha: float = 0.9
    kmax: int = 2
    kind: str = "simulate"
    t_end: float = 1.0
    snapshot_stride: int = 0
    calibrate: bool = True
    window: float = 1.0
    t0_list: tuple = (-2.0, -4.0, -8.0, -16.0)
    n_samples: int = 8
    ball_radius: float = 2.0
    epsilons: tuple = (0.5, 0.25, 0.1, 0.05)
    fraction: float = 0.25
    t_final: float = 1.0
    directory: str = "run"

    # -- loading ----------------------------------------------------------------

    @classmethod
    def from_mapping(cls, doc: dict) -> "RunConfig":
        errors, values = [], {}
        for section, body in doc.items():
            if section not in LAYOUT:
                errors.append(f"unknown section [{section}]")
                continue
            if not isinstance(body, dict):
                errors.append(f"[{section}] must be a table")
                continue
            for key, value in body.items():
                if key not in LAYOUT[section]:
                    errors.append(f"unknown key {section}.{key}")
                    continue
                values[LAYOUT[section][key]] = tuple(
                    tuple(v) if isinstance(v, list) else v for v in value
                ) if isinstance(value, list) else value
        cfg = cls(**values)
        errors.extend(cfg.validate())
        if errors:
            raise ConfigError(errors)
        return cfg

    @classmethod
    def from_toml(cls, path) -> "RunConfig":
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError([f"config file not found: {path}"]) from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError([f"invalid TOML: {exc}"]) from exc
        return cls.from_mapping(doc)

    def to_mapping(self) -> dict:
        out: dict = {}
        for section, keys in LAYOUT.items():
            out[section] = {k: _plain(getattr(self, f)) for k, f in keys.items()}
        return out

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def config_hash(self) -> str:
        body = self.to_mapping()
        body.pop("output")
        text = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    # -- validation -------------------------------------------------------------

    def validate(self) -> list[str]:
        """Every violated invariant, not just the first."""
        e = []

        def positive(name):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not (math.isfinite(v) and v > 0):
                e.append(f"{name} must be a positive number, got {v!r}")
                return False
            return True

        for name in ("nu", "dcoef", "eps0", "dt", "dt_w", "t_end", "window", "ball_radius", "t_final"):
            positive(name)
        if not isinstance(self.n, int) or isinstance(self.n, bool) or self.n < 8 or self.n % 2:
            e.append(f"grid n must be an even integer >= 8, got {self.n!r}")
        if self.scheme not in ("if_rk2", "if_euler"):
            e.append(f"scheme must be if_rk2 or if_euler, got {self.scheme!r}")
        if not (isinstance(self.cfl_limit, (int, float)) and 0 < self.cfl_limit <= 1):
            e.append(f"cfl_limit must lie in (0, 1], got {self.cfl_limit!r}")
        if not (isinstance(self.epsilon, (int, float)) and self.epsilon >= 0):
            e.append(f"epsilon must be >= 0, got {self.epsilon!r}")
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            e.append(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not (isinstance(self.init_seed, int) and self.init_seed >= 0):
            e.append(f"initial.seed must be a non-negative integer, got {self.init_seed!r}")
        if self.init_kind not in ("random", "taylor_green", "rest"):
            e.append(f"initial.kind must be random, taylor_green or rest, got {self.init_kind!r}")
        if not (isinstance(self.alpha, (int, float)) and 0 <= self.alpha < 1):
            e.append(f"alpha must lie in [0, 1) so concentrations start positive, got {self.alpha!r}")
        if not (isinstance(self.mass, (int, float)) and self.mass >= 0):
            e.append(f"mass must be >= 0 (non-negative mean of sigma), got {self.mass!r}")
        if not (isinstance(self.velocity_norm, (int, float)) and self.velocity_norm >= 0):
            e.append(f"velocity_norm must be >= 0, got {self.velocity_norm!r}")
        if self.kind not in COMMANDS:
            e.append(f"experiment.kind must be one of {COMMANDS}, got {self.kind!r}")
        if not (isinstance(self.snapshot_stride, int) and self.snapshot_stride >= 0):
            e.append("snapshot_stride must be a non-negative integer")
        if not (isinstance(self.n_samples, int) and self.n_samples >= 1):
            e.append("n_samples must be a positive integer")
        if not (isinstance(self.fraction, (int, float)) and 0 < self.fraction <= 1):
            e.append("fraction must lie in (0, 1]")
        if not self.t0_list or any(not isinstance(t, (int, float)) or t >= 0 for t in self.t0_list):
            e.append(f"t0_list must be non-empty and strictly negative, got {self.t0_list!r}")
        if any(not isinstance(x, (int, float)) or x < 0 for x in self.epsilons):
            e.append(f"epsilons must be non-negative, got {self.epsilons!r}")
        grid_ok = isinstance(self.n, int) and not isinstance(self.n, bool) and self.n >= 8 and self.n % 2 == 0
        if grid_ok:
            cutoff = (self.n - 1) // 3
            if not (isinstance(self.kmax, int) and 1 <= self.kmax <= cutoff):
                e.append(f"kmax must lie in 1..{cutoff} (resolved band for n={self.n}), got {self.kmax!r}")
            e.extend(self._force_errors(cutoff))
            if self.dt > 0 and math.isfinite(self.dt):
                for name in ("t_end", "t_final", "window"):
                    v = getattr(self, name)
                    if isinstance(v, (int, float)) and v > 0:
                        k = round(v / self.dt)
                        if abs(k * self.dt - v) > 1e-9 * max(1.0, v):
                            e.append(f"dt={self.dt} must divide {name}={v}")
                for t0 in self.t0_list:
                    if isinstance(t0, (int, float)) and t0 < 0:
                        k = round(-t0 / self.dt)
                        if abs(k * self.dt + t0) > 1e-9 * max(1.0, -t0):
                            e.append(f"dt={self.dt} must divide |t0|={-t0}")
                if not e:
                    speed = self._initial_speed()
                    if self.dt * speed / (2 * math.pi / self.n) > self.cfl_limit:
                        e.append(
                            f"dt={self.dt} violates CFL for the initial data "
                            f"(max dt {cfl_dt(speed, Grid(self.n), self.cfl_limit):.3g})"
                        )
        return e

    def _force_errors(self, cutoff: int) -> list[str]:
        e = []
        if self.force not in ("kolmogorov", "none", "modes"):
            e.append(f"force must be kolmogorov, none or modes, got {self.force!r}")
        if self.force == "kolmogorov" and not (isinstance(self.force_mode, int) and 1 <= self.force_mode <= cutoff):
            e.append(f"force_mode must lie in 1..{cutoff}, got {self.force_mode!r}")
        if self.force == "modes":
            if not self.force_modes:
                e.append("force = 'modes' needs a non-empty force_modes list")
            for m in self.force_modes:
                if len(m) != 4:
                    e.append(f"force mode {m!r} must be [kx, ky, a, b]")
                    continue
                kx, ky = m[0], m[1]
                if kx == 0 and ky == 0:
                    e.append("force modes must be mean-free: (0, 0) is not allowed")
                elif max(abs(kx), abs(ky)) > cutoff:
                    e.append(f"force mode ({kx}, {ky}) lies outside the resolved band |k| <= {cutoff}")
        return e

    def check(self) -> None:
        errors = self.validate()
        if errors:
            raise ConfigError(errors)

    # -- builders -----------------------------------------------------------------

    @property
    def grid(self) -> Grid:
        return Grid(self.n)

    def force_field(self) -> VectorField:
        grid = self.grid
        if self.force == "none":
            return VectorField.zeros(grid)
        if self.force == "kolmogorov":
            return shear_force(grid, self.force_amplitude, self.force_mode)
        # stream function psi = sum a cos(k.x) + b sin(k.x); f = (d_y psi, -d_x psi)
        x, y = grid.coordinates
        psi = np.zeros_like(x)
        for kx, ky, a, b in self.force_modes:
            phase = kx * x + ky * y
            psi += a * np.cos(phase) + b * np.sin(phase)
        c = np.fft.rfft2(psi) / grid.n**2
        return VectorField(grid, np.stack([1j * grid.ky * c, -1j * grid.kx * c]))

    def params(self) -> PhysicalParams:
        return PhysicalParams(self.nu, self.dcoef, self.eps0, self.force_field())

    def initial_state(self) -> NpnsState:
        grid = self.grid
        if self.init_kind == "taylor_green":
            return taylor_green(grid, self.velocity_norm, 2 * self.mass)
        if self.init_kind == "rest":
            data = np.zeros((4,) + grid.spectral_shape, dtype=complex)
            data[2, 0, 0] = 2 * self.mass
            return NpnsState(grid, data)
        rng = np.random.default_rng(self.init_seed)
        return random_state(grid, rng, self.velocity_norm, self.mass, self.alpha, self.kmax)

    def ensemble(self) -> NpnsState:
        rng = np.random.default_rng(self.init_seed)
        return sample_ball(self.grid, rng, self.ball_radius, self.n_samples, mass=self.mass, alpha=self.alpha,
                           kmax=self.kmax)

    def path(self, t_min: float = -1.0, t_max: float = 1.0):
        return sample_path(self.seed, min(t_min, 0.0), max(t_max, 0.0), self.dt_w)

    def integrator(self, dt: float | None = None) -> IntegratorConfig:
        return IntegratorConfig(self.dt if dt is None else dt, self.scheme, self.cfl_limit,
                                snapshot_stride=self.snapshot_stride)

    def _initial_speed(self) -> float:
        try:
            s = self.initial_state()
        except Exception:  # reported by the other invariants
            return 0.0
        v = inverse(s.data[..., :2, :, :], self.n)
        return float(np.sqrt(np.max(v[0] ** 2 + v[1] ** 2)))


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


# -- manifest -------------------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    code_version: str = __version__
    wall_clock: float = 0.0
    checks: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    incomplete: bool = False
    jobs_computed: list = field(default_factory=list)

    def write(self, out_dir: Path) -> None:
        atomic_write(out_dir / "manifest.json", json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, out_dir: Path) -> "RunManifest":
        return cls(**json.loads((out_dir / "manifest.json").read_text()))


EXCLUDED_FROM_INDEX = {"manifest.json", "timings.csv"}


def file_index(out_dir: Path) -> dict[str, str]:
    index = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name not in EXCLUDED_FROM_INDEX and not p.name.startswith("."):
            index[p.relative_to(out_dir).as_posix()] = sha256_file(p)
    return index


# -- jobs -------------------------------------------------------------------------------


def _job_pullback(cfg_map: dict, epsilon: float, t0: float, target: str) -> float:
    """Worker: pull the configured ensemble back from ``t0`` and store the time-0 images."""
    start = time.perf_counter()
    cfg = RunConfig.from_mapping(cfg_map)
    path = cfg.path(min(cfg.t0_list) - 1.0, 1.0) if epsilon else None
    data = pullback_level(t0, path, cfg.ensemble(), cfg.params(), cfg.integrator(), epsilon)
    target = Path(target)
    tmp = target.with_name(f".{target.name}.tmp")
    with open(tmp, "wb") as fh:
        np.save(fh, data)
    tmp.replace(target)
    atomic_write(target.with_suffix(".done"), "ok\n")
    return time.perf_counter() - start


@dataclass
class JobSpec:
    job_id: str
    epsilon: float
    t0: float

    def target(self, out_dir: Path) -> Path:
        return out_dir / "jobs" / f"{self.job_id}.npy"


def run_jobs(jobs: list[JobSpec], cfg: RunConfig, out_dir: Path, workers: int, resume: bool):
    """Run pending jobs, at most ``workers`` at a time; returns (computed ids, timings, failures)."""
    (out_dir / "jobs").mkdir(parents=True, exist_ok=True)
    cfg_map = cfg.to_mapping()
    pending = []
    for job in jobs:
        done = job.target(out_dir).with_suffix(".done")
        if resume and done.exists() and job.target(out_dir).exists():
            continue
        done.unlink(missing_ok=True)
        pending.append(job)
    timings, failures = {}, {}
    if workers <= 1:
        for job in pending:
            try:
                timings[job.job_id] = _job_pullback(cfg_map, job.epsilon, job.t0, str(job.target(out_dir)))
            except Exception as exc:  # keep partial results
                failures[job.job_id] = repr(exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                job.job_id: pool.submit(_job_pullback, cfg_map, job.epsilon, job.t0, str(job.target(out_dir)))
                for job in pending
            }
            for job_id in sorted(futures):
                try:
                    timings[job_id] = futures[job_id].result()
                except Exception as exc:
                    failures[job_id] = repr(exc)
    return [j.job_id for j in pending if j.job_id not in failures], timings, failures


def _level_jobs(cfg: RunConfig, epsilons) -> list[JobSpec]:
    levels = sorted((float(t) for t in cfg.t0_list), reverse=True)
    return [
        JobSpec(f"eps{j:02d}_level{i:02d}", float(eps), t0)
        for j, eps in enumerate(epsilons)
        for i, t0 in enumerate(levels)
    ]


# -- commands ------------------------------------------------------------------------------


class RunError(RuntimeError):
    """A run could not proceed; ``code`` is the exit status."""

    def __init__(self, message: str, code: int = EXIT_CHECK_FAILED):
        super().__init__(message)
        self.code = code


def _prepare(out_dir: Path, resume: bool) -> None:
    if out_dir.exists() and not resume:
        for name in ("manifest.json",):
            (out_dir / name).unlink(missing_ok=True)
    out_dir.mkdir(parents=True, exist_ok=True)


def _simulate_into(cfg: RunConfig, out_dir: Path, dt: float, suffix: str = "") -> Trajectory:
    params = cfg.params()
    start = NpnsState(cfg.grid, cfg.initial_state().data, 0.0, Gauge.TRANSFORMED)
    path = cfg.path(0.0, cfg.t_end) if cfg.epsilon else None
    conf = cfg.integrator(dt)
    if suffix:
        conf = dataclasses.replace(conf, snapshot_stride=0)
    traj = integrate(start, params, path, cfg.t_end, conf, cfg.epsilon)
    atomic_write(out_dir / f"diagnostics{suffix}.csv", traj.diagnostics.to_csv())
    if not suffix:
        snap_dir = out_dir / "snapshots"
        if snap_dir.exists():
            shutil.rmtree(snap_dir)
        names = []
        for k, (t, snap) in enumerate(zip(traj.times, traj.snapshots)):
            name = f"snap_{k:06d}.npns"
            atomic_write(snap_dir / name, encode_state(snap, cfg.n))
            names.append({"file": name, "time": float(t), "gauge": "transformed"})
        atomic_write(snap_dir / "index.json", json.dumps(names, indent=2) + "\n")
        if path is not None:
            export_path_csv(path, 0.0, cfg.t_end, out_dir / "path.csv")
        plotting.plot_diagnostics(traj.diagnostics, out_dir / "diagnostics.png")
    return traj


def _trajectory_from_csv(cfg: RunConfig, csv_path: Path, dt: float) -> Trajectory:
    table = DiagnosticsTable.from_csv(csv_path.read_text())
    return Trajectory(cfg.grid, cfg.params(), Gauge.TRANSFORMED, dt, table["time"], [], table, cfg.epsilon, None)


def cmd_simulate(cfg: RunConfig, out_dir: Path, workers: int = 1, resume: bool = False) -> tuple[int, dict]:
    _simulate_into(cfg, out_dir, cfg.dt)
    return EXIT_OK, {"simulate": "pass"}


def cmd_verify(cfg: RunConfig, out_dir: Path, workers: int = 1, resume: bool = False) -> tuple[int, dict]:
    """Run every check on a fresh or stored trajectory (stored when resuming)."""
    main_csv = out_dir / "diagnostics.csv"
    half_csv = out_dir / "diagnostics_half.csv"
    if resume:
        if not main_csv.exists():
            raise RunError(f"missing trajectory: {main_csv} not found", EXIT_USAGE)
        _check_integrity(out_dir, [main_csv] + ([half_csv] if cfg.calibrate else []))
    else:
        _simulate_into(cfg, out_dir, cfg.dt)
        if cfg.calibrate:
            _simulate_into(cfg, out_dir, cfg.dt / 2, suffix="_half")
    traj = _trajectory_from_csv(cfg, main_csv, cfg.dt)
    tol_mass = tol_vel = None
    calib = {}
    if cfg.calibrate:
        half = _trajectory_from_csv(cfg, half_csv, cfg.dt / 2)
        cm = calibrate_tolerance([traj], [half], mass_dissipation_terms)
        cv = calibrate_tolerance([traj], [half], velocity_energy_terms)
        tol_mass, tol_vel = cm.tol(), cv.tol()
        calib = {
            "mass_dissipation": dataclasses.asdict(cm) | {"tol_ineq": tol_mass},
            "velocity_energy": dataclasses.asdict(cv) | {"tol_ineq": tol_vel},
        }
        atomic_write(out_dir / "calibration.json", json.dumps(_finite(calib), indent=2, sort_keys=True) + "\n")
    reports = [
        check_mass_dissipation(traj, tol_mass),
        check_decay_H(traj),
        check_velocity_energy(traj, tol_vel),
        check_gradient_decay_V(traj),
        check_time_averaged_bound(traj, cfg.window),
    ]
    summary = {}
    for rep in reports:
        atomic_write(out_dir / f"check_{rep.name}.csv", rep.to_csv())
        rep.summary.pop("gronwall_bound", None)
        summary[rep.name] = json.loads(rep.summary_json())
    atomic_write(out_dir / "checks.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    plotting.plot_checks(reports, out_dir / "checks.png")
    failed = any(r.status == "fail" for r in reports)
    return (EXIT_CHECK_FAILED if failed else EXIT_OK), {r.name: r.status for r in reports}


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _check_integrity(out_dir: Path, needed: list[Path]) -> None:
    mpath = out_dir / "manifest.json"
    if not mpath.exists():
        raise RunError(f"missing manifest in {out_dir}", EXIT_USAGE)
    manifest = RunManifest.read(out_dir)
    for p in needed:
        rel = p.relative_to(out_dir).as_posix()
        if rel not in manifest.files:
            raise RunError(f"{rel} is not listed in the manifest", EXIT_CHECK_FAILED)
        if not p.exists() or sha256_file(p) != manifest.files[rel]:
            raise RunError(f"checksum mismatch for {rel}: stored trajectory was modified", EXIT_CHECK_FAILED)


def _load_levels(jobs: list[JobSpec], out_dir: Path) -> list[np.ndarray]:
    return [np.load(j.target(out_dir)) for j in jobs]


def cmd_pullback(cfg: RunConfig, out_dir: Path, workers: int = 1, resume: bool = False) -> tuple[int, dict]:
    jobs = _level_jobs(cfg, [cfg.epsilon])
    computed, timings, failures = run_jobs(jobs, cfg, out_dir, workers, resume)
    _write_timings(out_dir, timings)
    if failures:
        return EXIT_CHECK_FAILED, {"incomplete": True, "failures": failures, "computed": computed}
    levels = [j.t0 for j in jobs]
    finals = _load_levels(jobs, out_dir)
    grid = cfg.grid
    cloud = assemble_cloud(cfg.epsilon, cfg.seed, levels, finals, grid, {"members": cfg.n_samples})
    save_cloud(out_dir / "cloud", cloud)
    path = cfg.path(min(levels) - 1.0, 1.0) if cfg.epsilon else None
    radii = compute_absorbing_radii(path, cfg.params(), cfg.epsilon)
    norms = [float(np.max(h_norm(f, grid, about_background=True))) for f in finals]
    inside = bool(max(norms[-1], 0.0) <= radii.h_radius + cloud.gauge)
    rows = [(t, nrm, d) for t, nrm, d in zip(levels, norms, (math.nan,) + cloud.displacements)]
    atomic_write(out_dir / "levels.csv", csv_text(["t0", "max_norm", "displacement"], rows))
    atomic_write(
        out_dir / "radii.json",
        json.dumps(_finite({k: v for k, v in dataclasses.asdict(radii).items()} | {"h_radius": radii.h_radius}),
                   indent=2, sort_keys=True) + "\n",
    )
    plotting.plot_levels(levels, norms, cloud.displacements, radii.h_radius, out_dir / "levels.png")
    return EXIT_OK, {"cloud_converged": cloud.converged, "cloud_inside_ball": inside, "computed": computed}


def cmd_sweep(cfg: RunConfig, out_dir: Path, workers: int = 1, resume: bool = False) -> tuple[int, dict]:
    eps_all = [0.0] + [float(e) for e in cfg.epsilons if e != 0]
    jobs = _level_jobs(cfg, eps_all)
    computed, timings, failures = run_jobs(jobs, cfg, out_dir, workers, resume)
    _write_timings(out_dir, timings)
    if failures:
        return EXIT_CHECK_FAILED, {"incomplete": True, "failures": failures, "computed": computed}
    levels = sorted((float(t) for t in cfg.t0_list), reverse=True)
    nlev = len(levels)
    clouds = {}
    for j, eps in enumerate(eps_all):
        finals = _load_levels(jobs[j * nlev : (j + 1) * nlev], out_dir)
        clouds[eps] = assemble_cloud(eps, cfg.seed, levels, finals, cfg.grid, {"members": cfg.n_samples})
        save_cloud(out_dir / "clouds" / f"eps_{j:02d}", clouds[eps])
    ref = clouds[0.0]
    rows, dist, gauge, conv = [], [], [], []
    for eps in [float(e) for e in cfg.epsilons]:
        c = clouds[eps] if eps else ref
        d = semi_distance(c, ref, "H").value
        g = c.gauge + ref.gauge
        ok = c.converged and ref.converged
        rows.append((eps, d, g, ok))
        dist.append(d)
        gauge.append(g)
        conv.append(ok)
    passed, status = sweep_verdict(cfg.epsilons, dist, gauge, conv, cfg.fraction)
    atomic_write(out_dir / "sweep.csv", csv_text(["epsilon", "distance", "gauge", "converged"], rows))
    plotting.plot_sweep(cfg.epsilons, dist, gauge, out_dir / "sweep.png")
    code = EXIT_CHECK_FAILED if status == "fail" else EXIT_OK
    return code, {"sweep": status, "computed": computed}


def cmd_convergence(cfg: RunConfig, out_dir: Path, workers: int = 1, resume: bool = False) -> tuple[int, dict]:
    path = cfg.path(0.0, cfg.t_final)
    table = pathwise_convergence_check(cfg.epsilons, path, cfg.params(), cfg.initial_state(), cfg.t_final,
                                       cfg.integrator())
    atomic_write(out_dir / "convergence.csv", csv_text(["epsilon", "error"], table.rows()))
    atomic_write(
        out_dir / "convergence.json",
        json.dumps(_finite({"slope": table.slope, "monotone": table.monotone, "passed": table.passed}),
                   indent=2, sort_keys=True) + "\n",
    )
    plotting.plot_convergence(table.epsilon, table.error, out_dir / "convergence.png")
    return (EXIT_OK if table.passed else EXIT_CHECK_FAILED), {"convergence": "pass" if table.passed else "fail"}


def _write_timings(out_dir: Path, timings: dict) -> None:
    rows = [(k, timings[k]) for k in sorted(timings)]
    atomic_write(out_dir / "timings.csv", csv_text(["job", "runtime_seconds"], rows, fmt="{:.3f}"))


HANDLERS = {
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "pullback": cmd_pullback,
    "sweep": cmd_sweep,
    "convergence": cmd_convergence,
}


def execute(command: str, cfg: RunConfig, out_dir: Path, workers: int = 1, resume: bool = False) -> int:
    """Run one command end to end and write the manifest; returns the exit status."""
    out_dir = Path(out_dir)
    _prepare(out_dir, resume)
    atomic_write(out_dir / "config.json", json.dumps(cfg.to_mapping(), indent=2, sort_keys=True) + "\n")
    started = time.perf_counter()
    previous = RunManifest.read(out_dir) if resume and (out_dir / "manifest.json").exists() else None
    try:
        code, checks = HANDLERS[command](cfg, out_dir, workers, resume)
    except RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if previous is None and exc.code == EXIT_USAGE:
            return exc.code
        return exc.code
    computed = checks.pop("computed", [])
    manifest = RunManifest(
        command,
        cfg.config_hash,
        cfg.seed,
        wall_clock=round(time.perf_counter() - started, 3),
        checks=checks,
        files=file_index(out_dir),
        incomplete=bool(checks.get("incomplete", False)),
        jobs_computed=computed,
    )
    manifest.write(out_dir)
    return code
