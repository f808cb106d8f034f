"""Per-step norms, positivity monitors and energy-budget terms of a trajectory."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import csv_text
from .npns import RHO, SIGMA, UX, UY, PhysicalParams, component_sq_h1, component_sq_norms
from .spectral import AREA, Grid, inverse

COLUMNS = (
    "time",
    "z",
    "l2_v",
    "h1_v",
    "l2_u",
    "l2_sigma",
    "l2_sigma_fluct",
    "l2_rho",
    "h1_sigma",
    "h1_rho",
    "l3_grad_rho",
    "min_c1",
    "min_c2",
    "max_sigma",
    "sigma_mean",
    "rho_mean",
    "rho2_sigma",
    "work_rho",
    "work_f",
)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Diagnostics of one state at one time; field names match :data:`COLUMNS`."""

    time: float
    z: float
    l2_v: float
    h1_v: float
    l2_u: float
    l2_sigma: float
    l2_sigma_fluct: float
    l2_rho: float
    h1_sigma: float
    h1_rho: float
    l3_grad_rho: float
    min_c1: float
    min_c2: float
    max_sigma: float
    sigma_mean: float
    rho_mean: float
    rho2_sigma: float
    work_rho: float
    work_f: float


def compute_diagnostics(data: np.ndarray, z, time: float, grid: Grid, params: PhysicalParams) -> dict:
    """Diagnostics for a packed transformed-gauge state (any batch shape).

    ``work_rho`` is ``(rho grad phi, v)`` and ``work_f`` is ``(f, v)``.  All
    integrals of triple products are evaluated on the collocation grid, which
    is exact for dealiased inputs.
    """
    z = np.broadcast_to(np.asarray(z, dtype=float), data.shape[:-3])
    sq = component_sq_norms(data, grid)
    h1 = component_sq_h1(data, grid)
    mean_s = data[..., SIGMA, 0, 0].real
    mean_r = data[..., RHO, 0, 0].real

    rho_hat = data[..., RHO, :, :]
    phi = rho_hat * (grid.inv_k2 / params.eps0)
    spec = np.stack(
        [
            data[..., UX, :, :],
            data[..., UY, :, :],
            data[..., SIGMA, :, :],
            rho_hat,
            1j * grid.kx_d * rho_hat,
            1j * grid.ky_d * rho_hat,
            1j * grid.kx_d * phi,
            1j * grid.ky_d * phi,
        ],
        axis=-3,
    )
    vx, vy, s, r, rx, ry, px, py = np.moveaxis(inverse(spec, grid.n), -3, 0)
    w = grid.h**2
    f = params.force.coeffs
    work_f = AREA * np.sum(
        ((data[..., UX : UY + 1, :, :] * np.conj(f)).real * grid.weights), axis=(-3, -2, -1)
    )
    c1 = 0.5 * (s + r)
    c2 = 0.5 * (s - r)
    spatial = (-2, -1)
    return {
        "time": np.full(z.shape, float(time)),
        "z": np.array(z),
        "l2_v": np.sqrt(sq[..., UX] + sq[..., UY]),
        "h1_v": np.sqrt(h1[..., UX] + h1[..., UY]),
        "l2_u": np.sqrt(sq[..., UX] + sq[..., UY]) / z,
        "l2_sigma": np.sqrt(sq[..., SIGMA]),
        "l2_sigma_fluct": np.sqrt(np.maximum(sq[..., SIGMA] - AREA * mean_s**2, 0.0)),
        "l2_rho": np.sqrt(sq[..., RHO]),
        "h1_sigma": np.sqrt(h1[..., SIGMA]),
        "h1_rho": np.sqrt(h1[..., RHO]),
        "l3_grad_rho": (w * np.sum((rx * rx + ry * ry) ** 1.5, axis=spatial)) ** (1 / 3),
        "min_c1": c1.min(axis=spatial),
        "min_c2": c2.min(axis=spatial),
        "max_sigma": s.max(axis=spatial),
        "sigma_mean": mean_s,
        "rho_mean": mean_r,
        "rho2_sigma": w * np.sum(r * r * s, axis=spatial),
        "work_rho": w * np.sum(r * (px * vx + py * vy), axis=spatial),
        "work_f": work_f,
    }


class DiagnosticsTable:
    """Columnar diagnostics; each column has shape ``(steps, *batch)``."""

    def __init__(self, columns: dict[str, np.ndarray]):
        missing = [c for c in COLUMNS if c not in columns]
        if missing:
            raise ValueError(f"missing diagnostics columns: {missing}")
        self.columns = {c: np.asarray(columns[c]) for c in COLUMNS}

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "DiagnosticsTable":
        return cls({c: np.stack([r[c] for r in rows]) for c in COLUMNS})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def __len__(self) -> int:
        return len(self.columns["time"])

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.columns["time"].shape[1:]

    def member(self, index) -> "DiagnosticsTable":
        return DiagnosticsTable({c: v[(slice(None),) + np.index_exp[index]] for c, v in self.columns.items()})

    def record(self, i: int) -> DiagnosticsRecord:
        if self.batch_shape:
            raise ValueError("select a batch member before extracting records")
        return DiagnosticsRecord(**{c: float(self.columns[c][i]) for c in COLUMNS})

    def to_csv(self) -> str:
        if self.batch_shape:
            raise ValueError("select a batch member before exporting")
        return csv_text(list(COLUMNS), zip(*(self.columns[c] for c in COLUMNS)))

    @classmethod
    def from_csv(cls, text: str) -> "DiagnosticsTable":
        lines = text.strip().splitlines()
        header = lines[0].split(",")
        body = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(header))
        return cls({h: body[:, i] for i, h in enumerate(header)})
