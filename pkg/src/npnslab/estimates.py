"""Machine checks of the energy inequalities, decay laws and absorbing radii.

Every check consumes a :class:`~npnslab.integrator.Trajectory` (one batch
member) and returns a :class:`CheckReport` whose rows are
``(time, lhs, rhs, residual, pass)``.  Statuses are ``pass``, ``fail``,
``hypothesis-void`` (the inequality failed while its positivity hypothesis
was already broken), ``inconclusive`` and ``report`` (informational only).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.integrate import trapezoid

from .checkpoint import csv_text
from .initial import sample_ball
from .integrator import (
    CFLViolation,
    IntegratorConfig,
    Trajectory,
    cfl_dt,
    integrate,
    pullback_evaluate,
    to_transformed,
    z_series,
)
from .npns import Gauge, NpnsState, PhysicalParams, h_norm
from .spectral import inverse
from .stochastic import integral_z_power_exp

TRUNCATION_DECADES = math.log(1e12)


@dataclass
class CheckReport:
    name: str
    status: str
    time: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    passed: np.ndarray
    summary: dict = field(default_factory=dict)
    header: str = ""

    @property
    def ok(self) -> bool:
        """True unless the check failed outright."""
        return self.status != "fail"

    def to_csv(self) -> str:
        head = "".join(f"# {line}\n" for line in self.header.splitlines()) if self.header else ""
        return head + csv_text(
            ["time", "lhs", "rhs", "residual", "pass"],
            zip(self.time, self.lhs, self.rhs, self.residual, self.passed),
        )

    def summary_json(self) -> str:
        return json.dumps({"name": self.name, "status": self.status, **_jsonable(self.summary)},
                          indent=2, sort_keys=True)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _table(traj: Trajectory):
    d = traj.diagnostics
    if d is None or len(d) < 2:
        raise ValueError("check needs a trajectory with at least two diagnostics records")
    if d.batch_shape:
        raise ValueError("select one batch member with Trajectory.member() first")
    return d


def _positivity_lost(d, tol_rel: float = 1e-6) -> np.ndarray:
    tol = tol_rel * np.maximum(d["max_sigma"], 0.0)
    return np.minimum(d["min_c1"], d["min_c2"]) < -tol


# -- concentration energy ---------------------------------------------------------


def mass_dissipation_terms(traj: Trajectory) -> dict:
    """Interval quantities for the concentration energy balance.

    ``residual = dE/dt + 2D (|grad sigma|^2 + |grad rho|^2)`` with the time
    derivative taken as a difference quotient and the dissipation at the
    interval midpoint (trapezoid).  The exact balance says this equals
    ``-(2D / eps0) * integral rho^2 sigma``; ``defect`` is the difference.
    """
    d = _table(traj)
    p = traj.params
    t = d["time"]
    dt = np.diff(t)
    energy = d["l2_sigma"] ** 2 + d["l2_rho"] ** 2
    diss = d["h1_sigma"] ** 2 + d["h1_rho"] ** 2
    mid = lambda a: 0.5 * (a[1:] + a[:-1])  # noqa: E731
    residual = np.diff(energy) / dt + 2 * p.dcoef * mid(diss)
    exact = -(2 * p.dcoef / p.eps0) * mid(d["rho2_sigma"])
    return {"time": mid(t), "residual": residual, "exact": exact, "defect": residual - exact}


def check_mass_dissipation(traj: Trajectory, tol_ineq: float | None = None) -> CheckReport:
    """Pointwise-in-time dissipation inequality for ``|sigma|^2 + |rho|^2``.

    Without a calibrated ``tol_ineq`` the tolerance falls back to twice the
    largest discretization defect of this very trajectory.
    """
    terms = mass_dissipation_terms(traj)
    worst_defect = float(np.max(np.abs(terms["defect"]), initial=0.0))
    calibrated = tol_ineq is not None
    tol = tol_ineq if calibrated else max(1e-8, 2 * worst_defect)
    res = terms["residual"]
    ok = res <= tol
    status = "pass" if ok.all() else ("hypothesis-void" if _positivity_lost(traj.diagnostics).any() else "fail")
    return CheckReport(
        "mass_dissipation",
        status,
        terms["time"],
        res,
        np.full_like(res, tol),
        res - tol,
        ok,
        {
            "tol_ineq": tol,
            "tol_calibrated": calibrated,
            "worst_residual": float(res.max()),
            "worst_defect": worst_defect,
            "violations": int((~ok).sum()),
        },
    )


def check_decay_H(traj: Trajectory, delta_tol: float | None = None) -> CheckReport:
    """Exponential decay of the concentration fluctuation energy.

    Compares ``|sigma - mean sigma|^2 + |rho|^2`` with its initial value times
    ``exp(-2 D (t - t0))``.  The mean of sigma is conserved and does not decay,
    so it is excluded.
    """
    d = _table(traj)
    D = traj.params.dcoef
    delta = 1e-3 + traj.dt if delta_tol is None else delta_tol
    t = d["time"]
    e = d["l2_sigma_fluct"] ** 2 + d["l2_rho"] ** 2
    bound = (1 + delta) * e[0] * np.exp(-2 * D * (t - t[0])) + 1e-13
    ok = e <= bound
    lost = _positivity_lost(d)
    if ok.all():
        status = "pass"
    else:
        status = "hypothesis-void" if lost.any() else "fail"
    return CheckReport(
        "decay_H",
        status,
        t,
        e,
        bound,
        e - bound,
        ok,
        {
            "delta_tol": delta,
            "max_ratio": float(np.max(e / bound)),
            "positivity_lost": bool(lost.any()),
            "min_concentration": float(min(d["min_c1"].min(), d["min_c2"].min())),
        },
    )


# -- velocity energy ----------------------------------------------------------------


def velocity_energy_terms(traj: Trajectory) -> dict:
    d = _table(traj)
    p = traj.params
    t = d["time"]
    dt = np.diff(t)
    z = d["z"]
    mid = lambda a: 0.5 * (a[1:] + a[:-1])  # noqa: E731
    energy = d["l2_v"] ** 2
    source = (2 / p.nu) * z**2 * (d["l2_rho"] ** 3 * d["h1_rho"] + p.force_norm_sq)
    lhs = np.diff(energy) / dt + p.nu * mid(d["h1_v"] ** 2)
    rhs = mid(source)
    exact_rate = -2 * p.nu * d["h1_v"] ** 2 - 2 * z * d["work_rho"] + 2 * z * d["work_f"]
    defect = np.diff(energy) / dt - mid(exact_rate)
    return {"time": mid(t), "lhs": lhs, "rhs": rhs, "defect": defect, "source": source, "energy": energy}


def gronwall_bound(t: np.ndarray, energy0: float, source: np.ndarray, nu: float) -> np.ndarray:
    """``e^{-nu (t - t0)} E0 + integral_{t0}^t e^{-nu (t - s)} g(s) ds`` by the trapezoid rule."""
    out = np.empty_like(t)
    out[0] = energy0
    for j in range(1, len(t)):
        h = t[j] - t[j - 1]
        decay = math.exp(-nu * h)
        out[j] = decay * out[j - 1] + 0.5 * h * (decay * source[j - 1] + source[j])
    return out


def check_velocity_energy(traj: Trajectory, tol_ineq: float | None = None, rel_tol: float = 1e-3) -> CheckReport:
    """Velocity energy inequality per interval and its integrated (Gronwall) form.

    Rows hold the differential residual; the summary carries the worst ratio
    of ``|v(t)|^2`` to the integrated bound.
    """
    terms = velocity_energy_terms(traj)
    d = traj.diagnostics
    worst_defect = float(np.max(np.abs(terms["defect"]), initial=0.0))
    calibrated = tol_ineq is not None
    tol = tol_ineq if calibrated else max(1e-8, 2 * worst_defect)
    res = terms["lhs"] - terms["rhs"]
    ok = res <= tol
    bound = gronwall_bound(d["time"], terms["energy"][0], terms["source"], traj.params.nu)
    g_ok = terms["energy"] <= (1 + rel_tol) * bound + 1e-10
    status = "pass" if ok.all() and g_ok.all() else "fail"
    return CheckReport(
        "velocity_energy",
        status,
        terms["time"],
        terms["lhs"],
        terms["rhs"],
        res,
        ok,
        {
            "tol_ineq": tol,
            "tol_calibrated": calibrated,
            "worst_residual": float(res.max()),
            "worst_defect": worst_defect,
            "gronwall_pass": bool(g_ok.all()),
            "gronwall_max_ratio": float(np.max(terms["energy"] / np.maximum(bound, 1e-300))),
            "gronwall_bound": bound,
        },
    )


# -- gradient decay and time averages -------------------------------------------------


def check_gradient_decay_V(traj: Trajectory, min_efolds: float = 10.0, floor: float = 1e-300) -> CheckReport:
    """Fit ``log(|grad rho|^2 + |grad sigma|^2)`` over the second half of the run.

    Reports the fitted rate ``a`` with a 95% interval, the fitted amplitude
    and the envelope amplitude ``A = max G(t) e^{a (t - t0)}``.
    """
    d = _table(traj)
    t = d["time"]
    g = d["h1_sigma"] ** 2 + d["h1_rho"] ** 2
    if np.all(g <= floor):
        return CheckReport("gradient_decay_V", "pass", t, g, g, g, g <= floor, {"fit": "skipped"})
    tail = t >= t[0] + 0.5 * (t[-1] - t[0])
    fit = stats.linregress(t[tail], np.log(np.maximum(g[tail], floor)))
    dof = int(tail.sum()) - 2
    half = stats.t.ppf(0.975, dof) * fit.stderr if dof > 0 else math.inf
    rate = -fit.slope
    amp_fit = math.exp(fit.intercept + fit.slope * t[0])
    amp_env = float(np.max(g * np.exp(rate * (t - t[0]))))
    efolds = rate * (t[-1] - t[0])
    model = amp_env * np.exp(-rate * (t - t[0]))
    if fit.slope + half >= 0:
        status = "fail"
    elif efolds < min_efolds:
        status = "inconclusive"
    else:
        status = "pass"
    return CheckReport(
        "gradient_decay_V",
        status,
        t,
        g,
        model,
        g - model,
        g <= model * (1 + 1e-12),
        {
            "rate": rate,
            "rate_ci95": (rate - half, rate + half),
            "amplitude_fit": amp_fit,
            "amplitude_envelope": amp_env,
            "efolds": efolds,
            "dcoef": traj.params.dcoef,
            "eps0": traj.params.eps0,
            "nu": traj.params.nu,
        },
    )


def check_time_averaged_bound(traj: Trajectory, window: float) -> CheckReport:
    """Windowed integrals of ``|grad rho|^2 + |grad sigma|^2 + |grad rho|_{L3}^3 / eps0``.

    Report only.  The fitted constant ``K`` makes ``K * T * exp(-2 D t)`` an
    envelope of every window.
    """
    d = _table(traj)
    p = traj.params
    t = d["time"]
    q = d["h1_rho"] ** 2 + d["h1_sigma"] ** 2 + d["l3_grad_rho"] ** 3 / p.eps0
    starts, values = [], []
    a = t[0]
    while a + window <= t[-1] + 1e-9:
        sel = (t >= a - 1e-9) & (t <= a + window + 1e-9)
        starts.append(a)
        values.append(float(trapezoid(q[sel], t[sel])))
        a += window
    starts = np.array(starts)
    values = np.array(values)
    shape = window * np.exp(-2 * p.dcoef * (starts - t[0]))
    const = float(np.max(values / shape)) if len(values) else 0.0
    env = const * shape
    later = values[len(values) // 2 :]
    monotone = bool(np.all(np.diff(later) <= 0))
    return CheckReport(
        "time_averaged_bound",
        "report",
        starts,
        values,
        env,
        values - env,
        values <= env * (1 + 1e-12),
        {"window": window, "envelope_constant": const, "late_windows_decreasing": monotone},
        header="cubic term divided by the Debye parameter eps0 (not the noise intensity)",
    )


# -- calibration ------------------------------------------------------------------------


@dataclass(frozen=True)
class Calibration:
    """Tolerance ``tol = max(1e-8, C * dt)`` from a dt / dt/2 pair of runs."""

    dt: float
    defect_dt: float
    defect_half: float
    c_check: float
    order: float

    def tol(self, dt: float | None = None) -> float:
        return max(1e-8, self.c_check * (self.dt if dt is None else dt))

    def order_ok(self, expected: float, window: float = 0.3) -> bool:
        return abs(self.order - expected) <= window


def calibrate_tolerance(coarse: list[Trajectory], fine: list[Trajectory], terms=mass_dissipation_terms,
                        safety: float = 4.0) -> Calibration:
    """Calibrate ``C_check`` from the worst defects of matched runs at ``dt`` and ``dt / 2``."""
    d1 = max(float(np.max(np.abs(terms(tr)["defect"]))) for tr in coarse)
    d2 = max(float(np.max(np.abs(terms(tr)["defect"]))) for tr in fine)
    dt = coarse[0].dt
    order = math.log2(d1 / d2) if d1 > 0 and d2 > 0 else math.nan
    return Calibration(dt, d1, d2, safety * d1 / dt, order)


# -- absorbing radii ---------------------------------------------------------------------


@dataclass(frozen=True)
class AbsorbingRadii:
    r0: float
    r1: float
    r2: float
    r3: float
    r4: float
    r5: float
    truncation_tail_bound: float
    integrals: dict = field(default_factory=dict)

    @property
    def h_radius(self) -> float:
        """Radius ``2 R0 + R1`` of the absorbing ball in H."""
        return 2 * self.r0 + self.r1

    @property
    def v_radius(self) -> float:
        return self.r4 + 2 * self.r5


def _safe_exp(x: float) -> float:
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def compute_absorbing_radii(path, params: PhysicalParams, epsilon: float, t_truncate: float | None = None,
                            r0: float = 1.0, amplitude: float = 0.0, c_generic: float = 1.0,
                            c_force: float | None = None) -> AbsorbingRadii:
    """Radii of the random absorbing balls in H and V along one path.

    Improper integrals over ``(-inf, 0]`` are cut at ``t_truncate`` (default
    twice the 1e-12 decay horizon, so both exponential weights are below
    1e-12 there) and integrated exactly on the piecewise-linear path.  The
    generic constants default to ``C = 1`` and ``C_f = |f|^2``.
    """
    nu, D = params.nu, params.dcoef
    horizon = TRUNCATION_DECADES / nu
    if t_truncate is None:
        t_truncate = -2 * horizon
    if t_truncate > -horizon:
        raise ValueError(f"insufficient window: t_truncate={t_truncate} must be <= {-horizon:.3f}")
    fsq = params.force_norm_sq
    c_f = fsq if c_force is None else c_force
    if epsilon == 0 or path is None:
        i_full = -math.expm1(nu * t_truncate) / nu
        i_half = -2 * math.expm1(nu * t_truncate / 2) / nu
        i_z4 = 1.0
        sup_z4 = sup_zinv2 = 1.0
        z2_tail = 1.0
    else:
        i_full = integral_z_power_exp(path, epsilon, 2, nu, t_truncate, 0.0)
        i_half = integral_z_power_exp(path, epsilon, 2, nu / 2, t_truncate, 0.0)
        i_z4 = integral_z_power_exp(path, epsilon, 4, 0.0, -1.0, 0.0)
        s = path.nodes(-1.0, 0.0)
        w = np.asarray(path.omega(s))
        sup_z4 = float(np.max(np.exp(-4 * epsilon * w)))
        sup_zinv2 = float(np.max(np.exp(2 * epsilon * w)))
        tail_nodes = path.nodes(t_truncate - 1.0, t_truncate)
        z2_tail = float(np.max(np.exp(-2 * epsilon * np.asarray(path.omega(tail_nodes)))))
    tail = z2_tail * (math.exp(nu * t_truncate) / nu + 2 * math.exp(nu * t_truncate / 2) / nu)

    r1_term = math.sqrt(amplitude) * r0**3 * i_full
    r_f = fsq * i_full
    R1 = math.exp(nu) * (1 + (2 / nu) * (r1_term + i_half + r_f))
    R2 = r0**2 / (2 * D)
    R3 = R1**2 / nu + (r0**3 / nu**2) * (i_z4 + R2 + c_f)
    r3 = c_generic * R3 * sup_zinv2
    r4 = r0**6 * sup_z4
    r5 = c_f + c_generic * i_z4
    R4 = _safe_exp(r3) * (R3**2 + 0.5 * D * R2 + r4 + r5)
    R5 = _safe_exp(c_generic * amplitude * R3 * sup_zinv2) * R2
    return AbsorbingRadii(
        r0, R1, R2, R3, R4, R5, tail,
        {"z2_exp_nu": i_full, "z2_exp_half_nu": i_half, "z4_last_unit": i_z4, "t_truncate": t_truncate},
    )


# -- absorption experiment ----------------------------------------------------------------


def choose_dt(state: NpnsState, params: PhysicalParams, base_dt: float, cfl_limit: float = 0.5,
              epsilon: float = 0.0, z_range: float = 1.0) -> float:
    """Largest ``1/k <= base_dt`` that respects the advective CFL limit (with a factor-2 margin)
    and keeps the explicit Debye relaxation ``D * max sigma / eps0`` resolved."""
    vals = inverse(state.data, state.grid.n)
    speed = float(np.max(np.sqrt(vals[..., 0, :, :] ** 2 + vals[..., 1, :, :] ** 2))) * z_range
    sig = float(np.max(vals[..., 2, :, :]))
    limit = min(base_dt, 0.5 * cfl_dt(speed, state.grid, cfl_limit))
    if sig > 0:
        limit = min(limit, params.eps0 / (params.dcoef * sig))
    return 1.0 / math.ceil(1.0 / limit - 1e-12)


def pullback_batch(t0: float, path, x0: NpnsState, params: PhysicalParams, config: IntegratorConfig,
                   epsilon: float, max_retries: int = 4) -> tuple[NpnsState, float]:
    """Pullback to time 0, halving ``dt`` after a CFL rejection (deterministic restart)."""
    cfg = config
    for _ in range(max_retries + 1):
        try:
            return pullback_evaluate(t0, path, x0, params, cfg, epsilon), cfg.dt
        except CFLViolation:
            cfg = IntegratorConfig(cfg.dt / 2, cfg.scheme, cfg.cfl_limit, cfg.max_z_ratio)
    raise CFLViolation(f"no stable step found down to dt={cfg.dt:g}", cfg.dt / 2)


def verify_absorption(path, params: PhysicalParams, epsilon: float, radii: AbsorbingRadii, ball_e: float,
                      samples: NpnsState, t0_levels=(-1.0, -2.0, -4.0, -8.0), config: IntegratorConfig | None = None,
                      ) -> CheckReport:
    """Pull an ensemble back from each ``t0`` and test membership of the H ball at time 0.

    Distances are measured to the rest state with the same total mass, i.e.
    the conserved mean of sigma is excluded.  The entry time is the smallest
    ``|t0|`` from which every deeper level is inside ``2 R0 + R1 + gauge``,
    where the gauge is the largest displacement between the two deepest levels.
    """
    norms0 = h_norm(samples.data, samples.grid, about_background=True)
    if np.any(norms0 >= ball_e):
        raise ValueError("initial samples must lie strictly inside the ball of radius ball_e")
    levels = sorted(t0_levels, reverse=True)
    cfg = config or IntegratorConfig(choose_dt(samples, params, 0.01, epsilon=epsilon))
    finals, dts = [], []
    for t0 in levels:
        out, used = pullback_batch(t0, path, samples, params, cfg, epsilon)
        finals.append(out.data)
        dts.append(used)
    norms = np.array([h_norm(f, samples.grid, about_background=True) for f in finals])
    gauge = float(np.max(h_norm(finals[-1] - finals[-2], samples.grid))) if len(finals) > 1 else 0.0
    radius = radii.h_radius + gauge
    inside = np.all(norms <= radius, axis=1)
    entry = math.inf
    for i in range(len(levels) - 1, -1, -1):
        if not inside[i]:
            break
        entry = -levels[i]
    worst = norms.max(axis=1)
    return CheckReport(
        "absorption",
        "pass" if math.isfinite(entry) else "fail",
        np.array(levels),
        worst,
        np.full(len(levels), radius),
        worst - radius,
        inside,
        {
            "t_entry": entry,
            "radius": radius,
            "gauge": gauge,
            "ball_e": ball_e,
            "initial_norm_max": float(norms0.max()),
            "dt": dts,
            "r0": radii.r0,
            "r1": radii.r1,
        },
    )


def absorption_experiment(path, params: PhysicalParams, epsilon: float, rng: np.random.Generator,
                          n_samples: int = 8, r0: float = 1.0, factor: float = 10.0,
                          t0_levels=(-1.0, -2.0, -4.0, -8.0), base_dt: float = 0.01) -> tuple[CheckReport, AbsorbingRadii]:
    """Full absorption test with the ball size and amplitude ``A`` estimated on the fly.

    Stage one sizes the ensemble with ``A = 0`` (the smallest possible ball);
    a probe pullback from the deepest level then yields the decay amplitude of
    ``|grad rho|^2`` at ``t0 / 2`` for ``t0 = -1``, which enters ``R1``.
    Enlarging ``A`` only enlarges the ball, so the ensemble stays within
    ``factor * (2 R0 + R1)``.
    """
    grid = params.grid
    base = compute_absorbing_radii(path, params, epsilon, r0=r0)
    ball_e = factor * base.h_radius
    samples = sample_ball(grid, rng, ball_e, n_samples)
    z_lo = z_hi = 1.0
    if epsilon:
        s = path.nodes(min(t0_levels), 0.0)
        w = np.asarray(path.omega(s))
        z_hi = float(np.max(np.exp(np.abs(epsilon * w))))
    dt = choose_dt(samples, params, base_dt, epsilon=epsilon, z_range=z_hi * z_lo)
    cfg = IntegratorConfig(dt)

    # probe: gradient decay of the concentrations from the deepest level
    t_deep = min(t0_levels)
    z0 = 1.0
    if epsilon:
        z0 = z_series(path, epsilon, np.array([t_deep]), samples.batch_shape)[0]
    start = to_transformed(NpnsState(grid, samples.data, t_deep, Gauge.PHYSICAL), z0)
    probe = integrate(start, params, path, t_deep + 1.0, cfg, epsilon)
    amp = 0.0
    for i in range(n_samples):
        rep = check_gradient_decay_V(probe.member(i), min_efolds=0.0)
        if rep.summary.get("fit") == "skipped":
            continue
        g_rho = probe.diagnostics["h1_rho"][:, i] ** 2
        t = probe.diagnostics["time"][:, i]
        rate = max(rep.summary["rate"], 0.0)
        a_env = float(np.max(g_rho * np.exp(rate * (t - t[0]))))
        amp = max(amp, a_env * math.exp(-rate * 0.5))
    radii = compute_absorbing_radii(path, params, epsilon, r0=r0, amplitude=amp)
    report = verify_absorption(path, params, epsilon, radii, ball_e, samples, t0_levels, cfg)
    report.summary["amplitude"] = amp
    return report, radii
