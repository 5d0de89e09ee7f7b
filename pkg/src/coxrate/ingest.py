"""Catalog and production ingestion.

Earthquake events are filtered (magnitude threshold, study window, field
mask) and binned to per-cell annual counts.  Monthly well volumes are
converted from normal cubic metres to bcm, totalled per calendar year, and
spread over the masked cells with a mass-conserving Gaussian kernel.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .grid import SpatialGrid, TimeAxis

log = logging.getLogger(__name__)

NCM_PER_BCM = 1e9

CATALOG_COLUMNS = ["easting_km", "northing_km", "decimal_year", "magnitude"]
PRODUCTION_COLUMNS = ["well_id", "easting_km", "northing_km", "year", "month", "volume_ncm"]


@dataclass(frozen=True)
class Catalog:
    """Filtered earthquake events: columns (easting_km, northing_km, decimal_year, magnitude)."""

    events: np.ndarray
    dropped: dict[str, int] = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        return len(self.events)


def _read_rows(path: str | Path, columns: list[str]) -> list[tuple[int, list[str]]]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != columns:
            raise InputError(f"{path}: expected header {','.join(columns)}, got {header}")
        return [(lineno, row) for lineno, row in enumerate(reader, start=2) if row]


def ingest_catalog(
    path: str | Path,
    grid: SpatialGrid,
    axis: TimeAxis,
    min_mag: float = 1.5,
) -> tuple[Catalog, np.ndarray]:
    """Read, filter and bin an event catalog.

    Returns the retained events and the counts cube ``N`` of shape
    ``(n_cells, n_steps)``.  Events below ``min_mag``, before the study
    window, after its last year, or outside the field mask are dropped with
    a counted warning.  An unparseable row is a hard error.
    """
    dropped = {"below_threshold": 0, "before_start": 0, "after_window": 0, "outside_mask": 0}
    kept = []
    counts = np.zeros((grid.n_cells, axis.n_steps), dtype=np.int64)
    for lineno, row in _read_rows(path, CATALOG_COLUMNS):
        try:
            e, n, year, mag = (float(v) for v in row[:4])
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: unparseable catalog row {row!r}") from exc
        if mag < min_mag:
            dropped["below_threshold"] += 1
            continue
        if year < axis.t0:
            dropped["before_start"] += 1
            continue
        k = axis.step_of(year)
        if k >= axis.n_steps:
            dropped["after_window"] += 1
            continue
        cell = grid.locate(e, n)
        if cell < 0:
            dropped["outside_mask"] += 1
            continue
        counts[cell, k] += 1
        kept.append((e, n, year, mag))
    n_dropped = sum(dropped.values())
    if n_dropped:
        log.warning("catalog %s: dropped %d events (%s)", path, n_dropped, dropped)
    events = np.array(kept, dtype=float).reshape(len(kept), 4)
    return Catalog(events=events, dropped=dropped), counts


def _kernel_weights(grid: SpatialGrid, easting: float, northing: float, bandwidth_km: float) -> np.ndarray:
    """Masked-cell weights of a Gaussian kernel centred at a point, summing to 1."""
    d = grid.cell_centers - np.array([easting, northing])
    d2 = np.einsum("ij,ij->i", d, d)
    if bandwidth_km == 0.0:
        w = np.zeros(grid.n_cells)
        cell = grid.locate(easting, northing)
        w[cell if cell >= 0 else grid.nearest_cell(easting, northing)] = 1.0
        return w
    # shift by the minimum squared distance so the nearest cell never underflows
    expo = -(d2 - d2.min()) / (2.0 * bandwidth_km**2)
    w = np.exp(expo)
    return w / w.sum()


def ingest_production(
    path: str | Path,
    grid: SpatialGrid,
    axis: TimeAxis,
    bandwidth_km: float = 5.0,
) -> np.ndarray:
    """Read monthly well volumes and build the production cube ``V`` (bcm).

    ``V[s, k]`` is the trailing-twelve-month volume of calendar year
    ``t0 + k`` attributed to cell ``s``: each well's annual total is spread
    over the masked cells with a Gaussian kernel of standard deviation
    ``bandwidth_km``, renormalized over the mask so yearly totals are
    conserved.  A well outside the mask is attributed to the nearest masked
    cell with a warning; a negative volume is a hard error.
    """
    if bandwidth_km < 0:
        raise InputError(f"bandwidth must be >= 0, got {bandwidth_km}")
    wells: dict[str, tuple[float, float]] = {}
    annual: dict[str, np.ndarray] = {}
    n_outside_window = 0
    for lineno, row in _read_rows(path, PRODUCTION_COLUMNS):
        try:
            well_id = row[0].strip()
            e, n = float(row[1]), float(row[2])
            year, month = int(row[3]), int(row[4])
            volume_ncm = float(row[5])
        except (ValueError, IndexError) as exc:
            raise InputError(f"{path}:{lineno}: unparseable production row {row!r}") from exc
        if volume_ncm < 0:
            raise InputError(f"{path}:{lineno}: negative volume {volume_ncm} for well {well_id}")
        if not 1 <= month <= 12:
            raise InputError(f"{path}:{lineno}: month {month} outside 1..12")
        if well_id in wells and wells[well_id] != (e, n):
            raise InputError(f"{path}:{lineno}: well {well_id} has inconsistent coordinates")
        wells.setdefault(well_id, (e, n))
        annual.setdefault(well_id, np.zeros(axis.n_steps))
        k = year - axis.t0
        if 0 <= k < axis.n_steps:
            annual[well_id][k] += volume_ncm / NCM_PER_BCM
        else:
            n_outside_window += 1
    if n_outside_window:
        log.warning("production %s: %d monthly records outside the study window", path, n_outside_window)

    cube = np.zeros((grid.n_cells, axis.n_steps))
    for well_id in sorted(wells):
        e, n = wells[well_id]
        if grid.locate(e, n) < 0:
            nearest = grid.nearest_cell(e, n)
            e, n = grid.cell_centers[nearest]
            log.warning("well %s lies outside the field mask; attributed to nearest cell %d", well_id, nearest)
        weights = _kernel_weights(grid, e, n, bandwidth_km)
        cube += weights[:, None] * annual[well_id][None, :]
    return cube
