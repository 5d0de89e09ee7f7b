"""Spatial grid and annual time axis.

The study region is a rectangular tessellation of the gas field in UTM-31
kilometre coordinates.  Cells are square, enumerated row-major (northing
outer, easting inner), and only cells whose centre falls inside the field
boundary polygon are "masked in".  All cubes elsewhere in the package are
arrays of shape ``(n_cells, n_steps)`` over the masked cells in this order.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import InputError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeAxis:
    """Annual time discretisation starting in January of ``t0``.

    Step ``k`` corresponds to calendar year ``t0 + k``.  The step length is
    fixed at one year.
    """

    n_steps: int
    t0: int = 1995
    dt: float = 1.0

    def __post_init__(self):
        if self.n_steps < 1:
            raise InputError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.dt != 1.0:
            raise InputError("the time axis is annual; dt must be 1.0")

    @property
    def years(self) -> np.ndarray:
        return np.arange(self.t0, self.t0 + self.n_steps)

    def step_of(self, decimal_year: float) -> int:
        """Step index containing ``decimal_year`` (may be out of range)."""
        return int(np.floor(decimal_year - self.t0))


@dataclass(frozen=True)
class SpatialGrid:
    """Square-cell grid with a field-membership mask.

    ``mask`` has shape ``(ny, nx)``; ``mask[iy, ix]`` is True when the centre
    of cell ``(ix, iy)`` lies inside the gas field.
    """

    origin_e: float
    origin_n: float
    cell_km: float
    nx: int
    ny: int
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise InputError(f"grid extents must be >= 1, got {self.nx}x{self.ny}")
        if self.cell_km <= 0:
            raise InputError(f"cell size must be positive, got {self.cell_km}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.ny, self.nx):
            raise InputError(
                f"mask shape {mask.shape} does not match extents ({self.ny}, {self.nx})"
            )
        if not mask.any():
            raise InputError("zero cells inside the field mask")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def cell_area(self) -> float:
        """Cell area in km^2 (constant across the grid)."""
        return self.cell_km * self.cell_km

    @cached_property
    def cell_indices(self) -> np.ndarray:
        """(n_cells, 2) int array of (ix, iy) for masked cells, row-major."""
        iy, ix = np.nonzero(self.mask)
        return np.column_stack([ix, iy]).astype(np.int64)

    @cached_property
    def n_cells(self) -> int:
        return int(self.mask.sum())

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """(n_cells, 2) array of (easting_km, northing_km) cell centres."""
        idx = self.cell_indices
        e = self.origin_e + (idx[:, 0] + 0.5) * self.cell_km
        n = self.origin_n + (idx[:, 1] + 0.5) * self.cell_km
        return np.column_stack([e, n])

    @cached_property
    def _flat_of_cell(self) -> np.ndarray:
        """(ny, nx) lookup of masked-cell index, -1 outside the mask."""
        flat = np.full((self.ny, self.nx), -1, dtype=np.int64)
        idx = self.cell_indices
        flat[idx[:, 1], idx[:, 0]] = np.arange(self.n_cells)
        return flat

    def locate(self, easting_km: float, northing_km: float) -> int:
        """Masked-cell index containing a point, or -1.

        Cells are half-open, ``[edge, edge + cell_km)`` on both axes, so a
        point exactly on a shared edge belongs to the cell on its upper side.
        """
        ix = int(np.floor((easting_km - self.origin_e) / self.cell_km))
        iy = int(np.floor((northing_km - self.origin_n) / self.cell_km))
        if ix < 0 or ix >= self.nx or iy < 0 or iy >= self.ny:
            return -1
        return int(self._flat_of_cell[iy, ix])

    def nearest_cell(self, easting_km: float, northing_km: float) -> int:
        """Masked cell whose centre is closest to a point (ties: lowest index)."""
        d = self.cell_centers - np.array([easting_km, northing_km])
        return int(np.argmin(np.einsum("ij,ij->i", d, d)))


def points_in_polygon(points: np.ndarray, ring: np.ndarray) -> np.ndarray:
    """Even-odd (ray casting) point-in-polygon test.

    ``ring`` is a closed ring: first vertex repeated as the last.  Points on
    an edge follow the crossing rule and are resolved deterministically.
    """
    points = np.asarray(points, dtype=float)
    ring = np.asarray(ring, dtype=float)
    px, py = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    for (x1, y1), (x2, y2) in zip(ring[:-1], ring[1:]):
        crosses = (y1 > py) != (y2 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = (x2 - x1) * (py - y1) / (y2 - y1) + x1
        inside ^= crosses & (px < xint)
    return inside


def _validate_ring(polygon: np.ndarray) -> np.ndarray:
    ring = np.asarray(polygon, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InputError("polygon must be an (m, 2) array of vertices")
    if len(ring) < 4:
        raise InputError(f"polygon ring needs at least 3 distinct vertices, got {len(ring)} rows")
    if not np.array_equal(ring[0], ring[-1]):
        raise InputError("polygon ring is not closed (first vertex must equal last)")
    if len(np.unique(ring[:-1], axis=0)) < 3:
        raise InputError("degenerate polygon: fewer than 3 distinct vertices")
    return ring


@dataclass(frozen=True)
class GridSpec:
    """Recipe for building a :class:`SpatialGrid`.

    Exactly one of ``polygon`` (closed ring of UTM-31 km vertices) or
    ``mask_path`` (explicit mask CSV) must be given.
    """

    origin_e: float
    origin_n: float
    nx: int
    ny: int
    cell_km: float = 1.0
    polygon: np.ndarray | None = None
    mask_path: str | Path | None = None


def read_mask_csv(path: str | Path, nx: int, ny: int) -> np.ndarray:
    """Read an explicit mask file with columns (cell_ix, cell_iy, inside)."""
    mask = np.zeros((ny, nx), dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["cell_ix", "cell_iy", "inside"]:
            raise InputError(f"{path}: expected header cell_ix,cell_iy,inside")
        for lineno, row in enumerate(reader, start=2):
            try:
                ix, iy, flag = int(row[0]), int(row[1]), int(row[2])
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: unparseable mask row {row!r}") from exc
            if not (0 <= ix < nx and 0 <= iy < ny):
                raise InputError(f"{path}:{lineno}: cell ({ix}, {iy}) outside grid extents")
            mask[iy, ix] = bool(flag)
    return mask


def load_grid(spec: GridSpec) -> SpatialGrid:
    """Build the grid, masking cells whose centre lies inside the field."""
    if (spec.polygon is None) == (spec.mask_path is None):
        raise InputError("grid spec needs exactly one of a boundary polygon or a mask file")
    if spec.nx < 1 or spec.ny < 1 or spec.cell_km <= 0:
        raise InputError("grid extents must be >= 1 and cell size positive")
    if spec.mask_path is not None:
        mask = read_mask_csv(spec.mask_path, spec.nx, spec.ny)
    else:
        ring = _validate_ring(spec.polygon)
        ix, iy = np.meshgrid(np.arange(spec.nx), np.arange(spec.ny))
        centers = np.column_stack(
            [
                spec.origin_e + (ix.ravel() + 0.5) * spec.cell_km,
                spec.origin_n + (iy.ravel() + 0.5) * spec.cell_km,
            ]
        )
        mask = points_in_polygon(centers, ring).reshape(spec.ny, spec.nx)
    if not mask.any():
        raise InputError("zero cells inside the field mask")
    grid = SpatialGrid(spec.origin_e, spec.origin_n, spec.cell_km, spec.nx, spec.ny, mask)
    log.info("grid %dx%d at %.3g km: %d cells inside the field", spec.nx, spec.ny, spec.cell_km, grid.n_cells)
    return grid
