"""Report figures.  Everything renders off-screen to PNG with byte-stable metadata."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

PNG_METADATA = {"Software": None}


def _save(fig, path: str | os.PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_METADATA)
    plt.close(fig)


def plot_diagnostics(table, path) -> None:
    """Norm histories on a log scale plus the positivity monitor."""
    t = table["time"]
    fig, (ax, bx) = plt.subplots(1, 2, figsize=(10, 4))
    for name, label in (
        ("l2_u", r"$\|u\|$"),
        ("l2_sigma_fluct", r"$\|\sigma-\bar\sigma\|$"),
        ("l2_rho", r"$\|\rho\|$"),
        ("h1_sigma", r"$\|\nabla\sigma\|$"),
        ("h1_rho", r"$\|\nabla\rho\|$"),
    ):
        y = np.asarray(table[name])
        if np.any(y > 0):
            ax.semilogy(t, np.where(y > 0, y, np.nan), label=label)
    ax.set_xlabel("t")
    ax.set_title("norms")
    ax.legend(fontsize=8)
    bx.plot(t, table["min_c1"], label=r"min $c_1$")
    bx.plot(t, table["min_c2"], label=r"min $c_2$")
    bx.axhline(0.0, color="k", lw=0.5)
    bx.set_xlabel("t")
    bx.set_title("positivity")
    bx.legend(fontsize=8)
    _save(fig, path)


def plot_checks(reports, path) -> None:
    """One panel per check: lhs against rhs."""
    fig, axes = plt.subplots(1, len(reports), figsize=(4 * len(reports), 3.5), squeeze=False)
    for ax, rep in zip(axes[0], reports):
        ax.plot(rep.time, rep.lhs, label="lhs")
        ax.plot(rep.time, rep.rhs, "--", label="rhs")
        ax.set_title(f"{rep.name} [{rep.status}]", fontsize=9)
        ax.set_xlabel("t")
        ax.legend(fontsize=7)
    _save(fig, path)


def plot_levels(levels, norms, displacements, radius, path) -> None:
    """Ensemble norms at time 0 against pullback depth."""
    depth = -np.asarray(levels, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.semilogy(depth, norms, "o-", label="max |x(0)|")
    if len(displacements):
        ax.semilogy(depth[1:], displacements, "s--", label="displacement")
    if radius is not None and np.isfinite(radius):
        ax.axhline(radius, color="k", lw=0.8, label="ball radius")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("-t0")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_sweep(eps, dist, gauge, path) -> None:
    eps = np.asarray(eps, dtype=float)
    keep = eps > 0
    fig, ax = plt.subplots(figsize=(5, 4))
    if keep.any():
        ax.loglog(eps[keep], np.maximum(np.asarray(dist)[keep], 1e-300), "o-", label="semi-distance")
        ax.loglog(eps[keep], np.maximum(np.asarray(gauge)[keep], 1e-300), "x:", label="gauge")
    ax.set_xlabel("epsilon")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_convergence(eps, err, path) -> None:
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = (eps > 0) & (err > 0)
    fig, ax = plt.subplots(figsize=(5, 4))
    if keep.any():
        ax.loglog(eps[keep], err[keep], "o-", label="e(eps)")
        ax.loglog(eps[keep], err[keep][0] * eps[keep] / eps[keep][0], "k:", label="slope 1")
    ax.set_xlabel("epsilon")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_path(t, omega, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(t, omega, lw=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("omega")
    _save(fig, path)
