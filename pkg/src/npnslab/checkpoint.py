"""Binary checkpoint format for single fields and full states.

One field record is a 16-byte little-endian header followed by ``n * n``
complex64 coefficients::

    magic   4s   b"NPNS"
    version u32  1
    n       u32  modes per dimension
    flags   u32  bit 0: mean_free; bits 8-15: role code

Coefficients are written row-major over the wavevector ``(k1, k2)`` with both
indices running from ``-n/2`` to ``n/2 - 1`` (FFT-shifted order).  A state file
is four consecutive records with roles ux, uy, sigma, rho.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from pathlib import Path

import numpy as np

from .spectral import Grid, SpectralField, half_to_full

MAGIC = b"NPNS"
VERSION = 1
HEADER = struct.Struct("<4sIII")

ROLE_NONE = 0
ROLE_UX = 1
ROLE_UY = 2
ROLE_SIGMA = 3
ROLE_RHO = 4
STATE_ROLES = (ROLE_UX, ROLE_UY, ROLE_SIGMA, ROLE_RHO)


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint data."""


def encode_field(coeffs: np.ndarray, n: int, mean_free: bool = False, role: int = ROLE_NONE) -> bytes:
    """Serialize half-spectrum coefficients of one field."""
    full = np.fft.fftshift(half_to_full(coeffs, n))
    flags = (1 if mean_free else 0) | ((role & 0xFF) << 8)
    return HEADER.pack(MAGIC, VERSION, n, flags) + full.astype("<c8").tobytes()


def decode_field(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int, bool, int, int]:
    """Parse one record; returns ``(half_coeffs, n, mean_free, role, next_offset)``."""
    if len(buf) - offset < HEADER.size:
        raise CheckpointError("truncated header")
    magic, version, n, flags = HEADER.unpack_from(buf, offset)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version}")
    start = offset + HEADER.size
    end = start + 8 * n * n
    if len(buf) < end:
        raise CheckpointError("truncated coefficient block")
    full = np.frombuffer(buf, dtype="<c8", count=n * n, offset=start).reshape(n, n)
    full = np.fft.ifftshift(full).astype(complex)
    half = full[:, : n // 2 + 1].copy()
    mean_free = bool(flags & 1)
    if mean_free:
        half[0, 0] = 0.0
    return half, n, mean_free, (flags >> 8) & 0xFF, end


def save_field(path: str | os.PathLike, field: SpectralField, role: int = ROLE_NONE) -> None:
    atomic_write(path, encode_field(field.coeffs, field.grid.n, field.mean_free, role))


def load_field(path: str | os.PathLike) -> SpectralField:
    half, n, mean_free, _, _ = decode_field(Path(path).read_bytes())
    return SpectralField(Grid(n), half, mean_free)


def encode_state(packed: np.ndarray, n: int) -> bytes:
    """Serialize a packed ``(4, n, m)`` state array (ux, uy, sigma, rho)."""
    if packed.shape != (4, n, n // 2 + 1):
        raise CheckpointError(f"packed state has shape {packed.shape}")
    parts = [
        encode_field(packed[i], n, mean_free=(role != ROLE_SIGMA), role=role)
        for i, role in enumerate(STATE_ROLES)
    ]
    return b"".join(parts)


def decode_state(buf: bytes) -> tuple[np.ndarray, int]:
    offset = 0
    comps = []
    size = None
    for expected in STATE_ROLES:
        half, n, _, role, offset = decode_field(buf, offset)
        if role != expected:
            raise CheckpointError(f"expected role {expected}, found {role}")
        if size is not None and n != size:
            raise CheckpointError("records disagree on n")
        size = n
        comps.append(half)
    if offset != len(buf):
        raise CheckpointError("trailing bytes after state records")
    return np.stack(comps), size


def atomic_write(path: str | os.PathLike, data: bytes | str) -> None:
    """Write via a temporary sibling and rename, so readers never see partial files."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    if isinstance(data, str):
        data = data.encode()
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def csv_text(header: list[str], rows, fmt: str = "{:.17g}") -> str:
    """Render rows as CSV with a fixed float format, so output bytes are reproducible."""
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, (bool, np.bool_)):
                cells.append("true" if v else "false")
            elif isinstance(v, (float, np.floating)):
                cells.append(fmt.format(float(v)))
            else:
                cells.append(str(v))
        out.write(",".join(cells) + "\n")
    return out.getvalue()
