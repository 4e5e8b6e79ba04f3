"""Snapshot files and diagnostics tables.

Snapshot layout (little-endian throughout)::

    bytes 0-7   magic b"FNSVORT1"
    u32         version (= 1)
    u32 x 3     nx, ny, nz
    f64 x 5     lx, ly, lz, beta, time
    u32         ncomp (1 or 3)
    f64 ...     ncomp arrays of nx*ny*nz samples, x fastest
"""
from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .spectral import Grid

MAGIC = b"FNSVORT1"
VERSION = 1
_HEADER = struct.Struct("<8sIIIIdddddI")

DIAGNOSTICS_COLUMNS = (
    "t",
    "lp_p",
    "lp_embed",
    "hybrid",
    "hybrid_cum",
    "gronwall_fit_c",
    "alpha_pairing",
    "diffusion_lhs",
    "diffusion_rhs",
    "chen_margin",
)


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotMeta:
    grid: Grid
    beta: float
    time: float


def write_snapshot(path: str | os.PathLike, field: np.ndarray, meta: SnapshotMeta) -> None:
    grid = meta.grid
    if field.shape == grid.shape:
        comps = field[np.newaxis]
    elif field.shape == (3,) + grid.shape:
        comps = field
    else:
        raise SnapshotError(f"field shape {field.shape} does not match grid {grid.shape}")
    header = _HEADER.pack(
        MAGIC, VERSION, grid.nx, grid.ny, grid.nz,
        grid.lx, grid.ly, grid.lz, meta.beta, meta.time, comps.shape[0],
    )
    # x fastest == Fortran order over (i, j, k)
    payload = b"".join(
        np.asarray(c, dtype="<f8").ravel(order="F").tobytes() for c in comps
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_snapshot(path: str | os.PathLike) -> tuple[np.ndarray, SnapshotMeta]:
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_snapshot(raw)


def decode_snapshot(raw: bytes) -> tuple[np.ndarray, SnapshotMeta]:
    if len(raw) < _HEADER.size:
        raise SnapshotError(
            f"truncated header: expected {_HEADER.size} bytes, got {len(raw)}"
        )
    magic, version, nx, ny, nz, lx, ly, lz, beta, time, ncomp = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise SnapshotError(f"unsupported snapshot version {version}, expected {VERSION}")
    if ncomp not in (1, 3):
        raise SnapshotError(f"ncomp must be 1 or 3, got {ncomp}")
    try:
        grid = Grid(nx, ny, nz, lx, ly, lz)
    except (TypeError, ValueError) as exc:
        raise SnapshotError(f"invalid grid in header: {exc}") from None
    expected = ncomp * grid.size * 8
    actual = len(raw) - _HEADER.size
    if actual != expected:
        raise SnapshotError(
            f"payload length mismatch: expected {expected} bytes, got {actual}"
        )
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    data = data.reshape(ncomp, nz, ny, nx).transpose(0, 3, 2, 1).astype(np.float64)
    field = data[0].copy() if ncomp == 1 else np.ascontiguousarray(data)
    return field, SnapshotMeta(grid, beta, time)


def format_float(x: float) -> str:
    """Shortest decimal that round-trips to the same double."""
    return repr(float(x))


def write_diagnostics(rows: Iterable, out: str | os.PathLike | io.TextIOBase) -> None:
    """Write rows (objects or mappings carrying ``DIAGNOSTICS_COLUMNS``) as CSV."""
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w", newline="") as fh:
            _write_rows(rows, fh)
    else:
        _write_rows(rows, out)


def _write_rows(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(DIAGNOSTICS_COLUMNS)
    for row in rows:
        get = row.get if isinstance(row, dict) else lambda name: getattr(row, name)
        writer.writerow([format_float(get(name)) for name in DIAGNOSTICS_COLUMNS])


def read_diagnostics(path: str | os.PathLike) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != DIAGNOSTICS_COLUMNS:
            raise ValueError(f"unexpected diagnostics header {header}")
        return [dict(zip(header, map(float, line))) for line in reader]


def write_table(rows: list[dict], out: io.TextIOBase | str | os.PathLike) -> None:
    """Generic CSV table with floats in shortest round-trip form."""
    if isinstance(out, (str, os.PathLike)):
        with open(out, "w", newline="") as fh:
            write_table(rows, fh)
        return
    writer = csv.writer(out, lineterminator="\n")
    if not rows:
        return
    header = list(rows[0])
    writer.writerow(header)
    for row in rows:
        writer.writerow(
            [format_float(v) if isinstance(v, float) else v for v in (row[h] for h in header)]
        )
