"""Serialization of per-cell/per-step arrays.

Cube CSV layout: optional ``# key=value`` metadata comment lines, a header
row ``cell_ix,cell_iy,year_step,<name>``, then one row per masked cell and
year step in grid order.  Floats are written with ``repr`` so a read/write
round trip reproduces arrays bit-for-bit.

Latent draws use a compact binary block (see FORMATS.md): an 8-byte magic
``COXLATF1``, three little-endian uint64 dimensions (samples, cells, steps),
then row-major little-endian float64 draws, acceptance rates (cells,) and
step sizes (cells,).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .errors import InputError
from .grid import SpatialGrid

_DRAWS_MAGIC = b"COXLATF1"


def _format_value(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_cube(
    path: str | Path,
    grid: SpatialGrid,
    cube: np.ndarray,
    value_name: str = "value",
    meta: dict | None = None,
) -> None:
    cube = np.asarray(cube)
    if cube.ndim != 2 or cube.shape[0] != grid.n_cells:
        raise InputError(f"cube shape {cube.shape} does not match grid with {grid.n_cells} cells")
    idx = grid.cell_indices
    with open(path, "w", newline="") as fh:
        for key, val in (meta or {}).items():
            fh.write(f"# {key}={val}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cell_ix", "cell_iy", "year_step", value_name])
        for c in range(grid.n_cells):
            ix, iy = int(idx[c, 0]), int(idx[c, 1])
            for k in range(cube.shape[1]):
                writer.writerow([ix, iy, k, _format_value(cube[c, k])])


def read_cube(
    path: str | Path, grid: SpatialGrid, dtype=float
) -> tuple[np.ndarray, dict[str, str]]:
    """Read a cube CSV back to an (n_cells, n_steps) array plus its metadata."""
    meta: dict[str, str] = {}
    rows: list[tuple[int, int, int, str]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = None
        for lineno, row in enumerate(reader, start=1):
            if not row:
                continue
            if row[0].startswith("#"):
                text = ",".join(row).lstrip("#").strip()
                if "=" in text:
                    key, _, val = text.partition("=")
                    meta[key.strip()] = val.strip()
                continue
            if header is None:
                header = row
                if [h.strip() for h in row[:3]] != ["cell_ix", "cell_iy", "year_step"]:
                    raise InputError(f"{path}: unexpected cube header {row!r}")
                continue
            try:
                rows.append((int(row[0]), int(row[1]), int(row[2]), row[3]))
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: unparseable cube row {row!r}") from exc
    if not rows:
        raise InputError(f"{path}: cube file has no data rows")
    n_steps = max(r[2] for r in rows) + 1
    cube = np.full((grid.n_cells, n_steps), np.nan)
    seen = np.zeros((grid.n_cells, n_steps), dtype=bool)
    for ix, iy, k, raw in rows:
        if not (0 <= ix < grid.nx and 0 <= iy < grid.ny) or grid._flat_of_cell[iy, ix] < 0:
            raise InputError(f"{path}: cell ({ix}, {iy}) is not a masked grid cell")
        c = int(grid._flat_of_cell[iy, ix])
        cube[c, k] = float(raw)
        seen[c, k] = True
    if not seen.all():
        missing = int((~seen).sum())
        raise InputError(f"{path}: cube is missing {missing} cell/step entries")
    return cube.astype(dtype), meta


def write_matrix(path: str | Path, grid: SpatialGrid, per_cell: np.ndarray) -> None:
    """Write one value per cell as a gnuplot-ready (ny x nx) matrix; nan outside."""
    per_cell = np.asarray(per_cell, dtype=float)
    if per_cell.shape != (grid.n_cells,):
        raise InputError(f"expected {grid.n_cells} per-cell values, got shape {per_cell.shape}")
    full = np.full((grid.ny, grid.nx), np.nan)
    idx = grid.cell_indices
    full[idx[:, 1], idx[:, 0]] = per_cell
    with open(path, "w") as fh:
        for iy in range(grid.ny):
            fh.write(" ".join(repr(v) for v in full[iy]) + "\n")


def write_draws(
    path: str | Path,
    draws: np.ndarray,
    acceptance_rate: np.ndarray,
    step_size: np.ndarray,
) -> None:
    draws = np.ascontiguousarray(draws, dtype="<f8")
    if draws.ndim != 3:
        raise InputError(f"draws must be (samples, cells, steps), got shape {draws.shape}")
    n_s, n_c, n_k = draws.shape
    acc = np.ascontiguousarray(acceptance_rate, dtype="<f8")
    step = np.ascontiguousarray(step_size, dtype="<f8")
    if acc.shape != (n_c,) or step.shape != (n_c,):
        raise InputError("acceptance_rate and step_size must have one entry per cell")
    with open(path, "wb") as fh:
        fh.write(_DRAWS_MAGIC)
        fh.write(struct.pack("<QQQ", n_s, n_c, n_k))
        fh.write(draws.tobytes())
        fh.write(acc.tobytes())
        fh.write(step.tobytes())


def read_draws(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _DRAWS_MAGIC:
            raise InputError(f"{path}: not a latent-draws block (bad magic {magic!r})")
        n_s, n_c, n_k = struct.unpack("<QQQ", fh.read(24))
        draws = np.frombuffer(fh.read(8 * n_s * n_c * n_k), dtype="<f8").reshape(n_s, n_c, n_k)
        acc = np.frombuffer(fh.read(8 * n_c), dtype="<f8")
        step = np.frombuffer(fh.read(8 * n_c), dtype="<f8")
    if acc.size != n_c or step.size != n_c or draws.size != n_s * n_c * n_k:
        raise InputError(f"{path}: truncated latent-draws block")
    return draws.copy(), acc.copy(), step.copy()
