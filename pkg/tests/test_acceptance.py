"""End-to-end acceptance criteria at their stated tolerances.

Each test carries a ``criterion`` marker; the terminal summary prints one
pass/fail line per criterion.
"""

from __future__ import annotations

import json
import math

import numpy as np
import pytest

import oracles
from npnslab.attractor import pathwise_convergence_check, upper_semicontinuity_sweep
from npnslab.cli import main
from npnslab.estimates import (
    absorption_experiment,
    calibrate_tolerance,
    check_decay_H,
    check_mass_dissipation,
    check_velocity_energy,
    compute_absorbing_radii,
    velocity_energy_terms,
)
from npnslab.initial import random_state, random_velocity, sample_ball, taylor_green
from npnslab.integrator import IntegratorConfig, cocycle_S, integrate
from npnslab.npns import Gauge, NpnsState, PhysicalParams, h_norm, trilinear_b
from npnslab.spectral import (
    Grid,
    divergence,
    leray_project,
    norm_l2,
    seminorm_h1,
    solve_poisson,
    to_physical,
    to_spectral,
    vector_to_spectral,
)
from npnslab.stochastic import sample_path

pytestmark = pytest.mark.acceptance


def batch_of(states: list[NpnsState], gauge=Gauge.TRANSFORMED) -> NpnsState:
    return NpnsState(states[0].grid, np.stack([s.data for s in states]), 0.0, gauge)


@pytest.mark.criterion(1, "spectral exactness: Poisson, Leray divergence, Parseval to 1e-12")
class TestSpectralExactness:
    @pytest.mark.parametrize("n", [16, 32, 64])
    def test_poisson_single_modes(self, n):
        g = Grid(n)
        x, y = g.coordinates
        for k1, k2 in [(1, 0), (2, 3), (-4, 1), (5, -5)]:
            rho_fn, phi_fn = oracles.poisson_single_mode(k1, k2, eps0=0.7, phase=0.3)
            phi = to_physical(solve_poisson(to_spectral(g, rho_fn(x, y)), 0.7))
            exact = phi_fn(x, y)
            assert np.max(np.abs(phi - exact)) <= 1e-12 * np.max(np.abs(exact))

    @pytest.mark.parametrize("n", [16, 32, 64])
    def test_leray_divergence(self, n):
        g = Grid(n)
        rng = np.random.default_rng(n)
        v = vector_to_spectral(g, rng.standard_normal((2, n, n)))
        div = to_physical(divergence(leray_project(v)))
        assert np.max(np.abs(div)) <= 1e-12

    @pytest.mark.parametrize("n", [16, 32, 64])
    def test_parseval(self, n):
        g = Grid(n)
        values = np.random.default_rng(n + 1).standard_normal((n, n))
        assert float(norm_l2(to_spectral(g, values))) ** 2 == pytest.approx(oracles.quadrature(values**2), rel=1e-12)


@pytest.mark.criterion(2, "operator identities for b on 100 random divergence-free triples to 1e-10")
class TestOperatorIdentities:
    def test_trilinear_identities(self):
        g = Grid(16)
        rng = np.random.default_rng(2)
        worst_skew = worst_anti = 0.0
        for _ in range(100):
            u, v, w = (random_velocity(g, rng, 1.0, g.dealias_cutoff) for _ in range(3))
            uinf = float(np.max(np.sqrt(np.sum(to_physical(u) ** 2, axis=0))))
            scale_vv = uinf * float(seminorm_h1(v)) * float(norm_l2(v))
            scale_vw = uinf * float(seminorm_h1(v)) * float(norm_l2(w))
            worst_skew = max(worst_skew, abs(trilinear_b(u, v, v)) / scale_vv)
            worst_anti = max(worst_anti, abs(trilinear_b(u, v, w) + trilinear_b(u, w, v)) / scale_vw)
        assert worst_skew <= 1e-10
        assert worst_anti <= 1e-10


@pytest.mark.criterion(3, "Taylor-Green decay to 1e-6 and self-convergence slope 2.0 +- 0.3")
class TestAnalyticFlow:
    def test_taylor_green_terminal_error(self):
        g = Grid(32)
        traj = integrate(taylor_green(g), PhysicalParams.unforced(g), None, 1.0, IntegratorConfig(1e-3, "if_rk2"),
                         diagnostics=False)
        x, y = g.coordinates
        err = np.max(np.abs(to_physical(traj.final.velocity) - oracles.taylor_green_velocity(x, y, 1.0, 1.0)))
        assert err <= 1e-6

    def test_self_convergence_slope(self):
        g = Grid(32)
        p = PhysicalParams.kolmogorov(g)
        s = random_state(g, np.random.default_rng(3), velocity_norm=2.0, kmax=4)
        run = lambda dt: integrate(s, p, None, 1.0, IntegratorConfig(dt), diagnostics=False).final.data  # noqa: E731
        ref = run(0.000625)
        dts = np.array([0.02, 0.01, 0.005])
        errs = np.array([float(h_norm(run(dt) - ref, g)) for dt in dts])
        slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        assert abs(slope - 2.0) <= 0.3


@pytest.mark.criterion(4, "means of sigma and rho drift <= 1e-10 over 1e4 steps")
class TestMassConservation:
    def test_mean_drift(self):
        g = Grid(16)
        p = PhysicalParams.kolmogorov(g)
        s = random_state(g, np.random.default_rng(4), velocity_norm=2.0, mass=1.0, kmax=4)
        start = NpnsState(g, s.data, 0.0, Gauge.TRANSFORMED)
        traj = integrate(start, p, sample_path(4, -1, 11, 0.01), 10.0, IntegratorConfig(1e-3), 0.2)
        d = traj.diagnostics
        assert len(d) == 10_001
        assert np.max(np.abs(d["sigma_mean"] - d["sigma_mean"][0])) <= 1e-10
        assert np.max(np.abs(d["rho_mean"])) <= 1e-10


def ensemble_runs(eps_values, seeds, t_end, dt, grid_n=16):
    """Batched runs over seeded initial data and paths, at ``dt`` and ``dt / 2``."""
    g = Grid(grid_n)
    p = PhysicalParams.kolmogorov(g)
    states = [random_state(g, np.random.default_rng(s), velocity_norm=1.5, mass=1.0, alpha=0.9, kmax=4)
              for s in seeds]
    paths = [sample_path(s, -1, t_end + 1, 0.005) for s in seeds]
    start = batch_of(states)
    out = []
    for step in (dt, dt / 2):
        traj = integrate(start, p, paths, t_end, IntegratorConfig(step), np.asarray(eps_values, dtype=float))
        out.append([traj.member(i) for i in range(len(seeds))])
    return out


@pytest.fixture(scope="module")
def dissipation_runs():
    return ensemble_runs([0.1] * 10, list(range(500, 510)), 5.0, 0.005)


@pytest.mark.criterion(5, "concentration dissipation and decay bounds on 10 random runs")
class TestDissipation:
    @pytest.fixture
    def runs(self, dissipation_runs):
        return dissipation_runs

    def test_nonnegative_initial_concentrations(self, runs):
        for tr in runs[0]:
            assert min(tr.diagnostics["min_c1"][0], tr.diagnostics["min_c2"][0]) >= 0

    def test_dissipation_inequality(self, runs):
        coarse, fine = runs
        cal = calibrate_tolerance(coarse, fine)
        assert cal.order_ok(2.0)
        for tr in coarse:
            rep = check_mass_dissipation(tr, cal.tol())
            assert rep.status == "pass", rep.summary
            assert rep.summary["violations"] == 0

    def test_decay_bound(self, runs):
        for tr in runs[0]:
            rep = check_decay_H(tr)
            assert rep.summary["delta_tol"] == pytest.approx(1e-3 + tr.dt)
            assert rep.status == "pass", rep.summary


@pytest.mark.criterion(6, "velocity energy bound in Gronwall form on 10 stochastic runs per epsilon")
class TestVelocityEnergy:
    @pytest.mark.parametrize("eps", [0.05, 0.2])
    def test_gronwall_bound(self, eps):
        seeds = list(range(600, 610))
        coarse, fine = ensemble_runs([eps] * 10, seeds, 5.0, 0.005)
        cal = calibrate_tolerance(coarse, fine, velocity_energy_terms)
        for tr in coarse:
            rep = check_velocity_energy(tr, cal.tol())
            assert rep.summary["gronwall_pass"], rep.summary["gronwall_max_ratio"]
            assert rep.status == "pass"


@pytest.mark.criterion(7, "cocycle two-route error <= C dt with C stable under dt-halving")
class TestCocycle:
    def test_two_routes(self):
        g = Grid(16)
        p = PhysicalParams.kolmogorov(g)
        x0 = random_state(g, np.random.default_rng(7), kmax=4)
        path = sample_path(7, -1, 2, 0.005)
        eps, t, s = 0.3, 0.5, 0.5
        errs = {}
        for dt in (0.01, 0.005):
            cfg = IntegratorConfig(dt)
            direct = cocycle_S(t + s, path, x0, p, cfg, eps)
            mid = cocycle_S(s, path, x0, p, cfg, eps)
            composed = cocycle_S(t, path.shift_theta(s), NpnsState(g, mid.data), p, cfg, eps)
            errs[dt] = float(h_norm(direct.data - composed.data, g)) / float(h_norm(direct.data, g))
        c_coarse = errs[0.01] / 0.01
        c_fine = errs[0.005] / 0.005
        floor = 1e-12
        if max(errs.values()) > floor:
            # order >= 1: halving dt must not increase C
            assert c_fine <= c_coarse * 1.1
        assert errs[0.005] <= max(c_coarse, floor / 0.005) * 0.005


@pytest.mark.criterion(8, "absorption into B(0, 2R0 + R1 + gauge) with finite entry time across 8 seeds")
class TestAbsorption:
    def test_absorption_over_seeds(self):
        g = Grid(16)
        p = PhysicalParams.kolmogorov(g, amplitude=0.25)
        entries = []
        for seed in range(8):
            path = sample_path(seed, -10, 1, 0.01)
            report, radii = absorption_experiment(path, p, 0.2, np.random.default_rng(seed), n_samples=8, r0=1.0,
                                                  factor=10.0, t0_levels=(-1.0, -2.0, -4.0))
            base = compute_absorbing_radii(path, p, 0.2, r0=1.0)
            assert report.summary["ball_e"] == pytest.approx(10 * base.h_radius)
            assert radii.h_radius >= base.h_radius
            assert report.summary["initial_norm_max"] < report.summary["ball_e"]
            assert report.status == "pass", report.summary
            entries.append(report.summary["t_entry"])
        assert all(math.isfinite(e) for e in entries)


@pytest.mark.criterion(9, "pathwise convergence: strictly decreasing error with log-log slope in [0.7, 1.3]")
class TestPathwiseConvergence:
    def test_slope(self):
        g = Grid(32)
        p = PhysicalParams.kolmogorov(g)
        x0 = random_state(g, np.random.default_rng(9), velocity_norm=2.0, kmax=4)
        path = sample_path(9, -1, 2, 0.001)
        table = pathwise_convergence_check([0.4, 0.2, 0.1, 0.05], path, p, x0, 1.0, IntegratorConfig(1e-3))
        order = np.argsort(-table.epsilon)
        assert np.all(np.diff(table.error[order]) < 0)
        assert 0.7 <= table.slope <= 1.3
        assert table.passed


@pytest.mark.criterion(10, "upper semicontinuity sweep with converged clouds and an f = 0 control")
class TestUpperSemicontinuity:
    T0 = (-2.0, -4.0, -8.0, -16.0)

    def test_sweep(self):
        g = Grid(16)
        p = PhysicalParams.kolmogorov(g, amplitude=1.0)
        ens = sample_ball(g, np.random.default_rng(10), 2.0, 8, mass=1.0)
        path = sample_path(10, -20, 1, 0.01)
        table, _ = upper_semicontinuity_sweep([0.5, 0.2, 0.05], path, p, ens, self.T0, IntegratorConfig(0.01))
        d = dict(zip(table.epsilon, table.distance))
        assert d[0.05] <= 0.25 * d[0.5]
        assert np.all(table.converged)
        assert np.all(table.gauge <= 0.1 * table.distance)
        assert table.status == "pass"

    def test_unforced_control(self):
        g = Grid(16)
        p = PhysicalParams.unforced(g)
        ens = sample_ball(g, np.random.default_rng(11), 2.0, 8, mass=1.0)
        path = sample_path(11, -20, 1, 0.01)
        table, _ = upper_semicontinuity_sweep([0.5, 0.05], path, p, ens, self.T0, IntegratorConfig(0.01))
        assert np.all(table.distance <= table.gauge)


SWEEP_CONFIG = """
[grid]
n = 16
[integrator]
dt = 0.01
[noise]
epsilon = 0.2
seed = 11
[initial]
seed = 3
[experiment]
t0_list = [-1.0, -2.0]
n_samples = 3
ball_radius = 2.0
epsilons = [0.5, 0.1]
"""


def result_bytes(root):
    skip = {"manifest.json", "timings.csv"}
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name not in skip}


@pytest.mark.criterion(11, "byte-identical outputs across reruns and worker counts 1 vs 8")
class TestReproducibility:
    def test_workers_and_reruns(self, tmp_path):
        cfg = tmp_path / "sweep.toml"
        cfg.write_text(SWEEP_CONFIG)
        outs = {}
        for name, workers in (("w1", 1), ("w8", 8), ("w1_again", 1)):
            assert main(["sweep", "--config", str(cfg), "--output", str(tmp_path / name),
                         "--workers", str(workers)]) == 0
            outs[name] = result_bytes(tmp_path / name)
        assert outs["w1"] == outs["w8"] == outs["w1_again"]
        assert any(k.endswith(".png") for k in outs["w1"]) and "sweep.csv" in outs["w1"]
        manifests = [json.loads((tmp_path / n / "manifest.json").read_text()) for n in outs]
        assert all(m["files"] == manifests[0]["files"] for m in manifests)
        assert len({m["config_hash"] for m in manifests}) == 1

    def test_simulate_rerun(self, tmp_path):
        cfg = tmp_path / "sim.toml"
        cfg.write_text(SWEEP_CONFIG.replace("[experiment]", "[experiment]\nt_end = 0.5\nsnapshot_stride = 10"))
        for name in ("a", "b"):
            assert main(["simulate", "--config", str(cfg), "--output", str(tmp_path / name)]) == 0
        assert result_bytes(tmp_path / "a") == result_bytes(tmp_path / "b")
