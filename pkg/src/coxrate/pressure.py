"""Mean pore-pressure field construction.

The deterministic mean m(s, t) comes either from reservoir-model output on a
500 m grid, downscaled to the 1 km study grid by arithmetic mean, or from a
fourth-order polynomial fitted to scattered pressure observations.  The
random error field around the mean is Gaussian with a single variance: for
downscaled reservoir output the per-cell variance is RMSE^2 / 4 (RMSE 2.3
gives 1.3225), kept constant for all cells including boundary cells with
fewer than four fine values.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from itertools import combinations_with_replacement
from pathlib import Path

import numpy as np

from .errors import InputError
from .grid import SpatialGrid, TimeAxis

log = logging.getLogger(__name__)

FINE_CELL_KM = 0.5
DEFAULT_RMSE = 2.3
PRESSURE_WARN_BARA = 354.0
POLY_DEGREE = 4
N_POLY_TERMS = 35  # trivariate monomials of total degree <= 4

FINE_COLUMNS = ["easting_km", "northing_km", "year", "pressure_barA"]


@dataclass(frozen=True)
class FinePressureGrid:
    """Reservoir-model pressures at 500 m cell centres, one column per year."""

    points: np.ndarray  # (n_pts, 2) easting/northing km
    values: np.ndarray  # (n_pts, n_years) barA, NaN where missing
    years: np.ndarray  # (n_years,) consecutive calendar years

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[1] != 2:
            raise InputError("fine-grid points must be (n, 2)")
        if self.values.shape != (len(self.points), len(self.years)):
            raise InputError("fine-grid values shape does not match points/years")
        if np.nanmin(self.values) < 0:
            raise InputError("fine-grid pressures must be >= 0 barA")
        n_implausible = int((self.values > PRESSURE_WARN_BARA).sum())
        if n_implausible:
            log.warning(
                "%d fine-grid pressures exceed the %.0f barA plausibility threshold",
                n_implausible,
                PRESSURE_WARN_BARA,
            )


def read_fine_pressure(path: str | Path) -> FinePressureGrid:
    """Read a fine-grid pressure CSV (easting_km, northing_km, year, pressure_barA)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"input file not found: {path}")
    records: dict[tuple[float, float], dict[int, float]] = {}
    years: set[int] = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != FINE_COLUMNS:
            raise InputError(f"{path}: expected header {','.join(FINE_COLUMNS)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                e, n = float(row[0]), float(row[1])
                year = int(row[2])
                p = float(row[3])
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: unparseable pressure row {row!r}") from exc
            records.setdefault((e, n), {})[year] = p
            years.add(year)
    if not records:
        raise InputError(f"{path}: no pressure rows")
    year_list = np.array(sorted(years))
    points = np.array(sorted(records), dtype=float)
    values = np.full((len(points), len(year_list)), np.nan)
    col = {y: j for j, y in enumerate(year_list)}
    for i, pt in enumerate(map(tuple, points)):
        for year, p in records[pt].items():
            values[i, col[year]] = p
    return FinePressureGrid(points=points, values=values, years=year_list)


@dataclass(frozen=True)
class PressureField:
    """Per-cell annual mean pressure plus the error-field variance.

    Column ``j`` of ``m`` is calendar year ``t0 + j``; the field may cover
    more years than the study window so forecasts can reach reservoir
    forecast years.
    """

    m: np.ndarray  # (n_cells, n_years) barA
    sigma2: float  # barA^2
    source: str  # "reservoir" | "polynomial"
    t0: int

    def __post_init__(self):
        if self.sigma2 <= 0:
            raise InputError(f"error-field variance must be > 0, got {self.sigma2}")
        if self.source not in ("reservoir", "polynomial"):
            raise InputError(f"unknown pressure source {self.source!r}")

    @property
    def n_years(self) -> int:
        return self.m.shape[1]

    def mean_at(self, cell: int, year_step: int) -> float:
        """m(s, t0 + k) for one cell; indices must be in range."""
        if not 0 <= cell < self.m.shape[0]:
            raise InputError(f"cell index {cell} out of range")
        if not 0 <= year_step < self.n_years:
            raise InputError(f"year step {year_step} out of range (0..{self.n_years - 1})")
        return float(self.m[cell, year_step])

    def slice_axis(self, axis: TimeAxis) -> np.ndarray:
        """The (n_cells, n_steps) mean block covering a study time axis."""
        if axis.t0 != self.t0:
            raise InputError(f"pressure field starts in {self.t0}, axis in {axis.t0}")
        if axis.n_steps > self.n_years:
            raise InputError(
                f"pressure field covers {self.n_years} years, axis needs {axis.n_steps}"
            )
        return self.m[:, : axis.n_steps]

    def extended_to(self, last_year: int) -> "PressureField":
        """Field extended to ``last_year``, holding the final column flat.

        Used when the reservoir forecast does not reach the requested
        horizon; the hold is a neutral default, not a physical claim.
        """
        n_extra = last_year - (self.t0 + self.n_years - 1)
        if n_extra <= 0:
            return self
        log.warning(
            "pressure field ends in %d; holding it flat through %d",
            self.t0 + self.n_years - 1,
            last_year,
        )
        pad = np.repeat(self.m[:, -1:], n_extra, axis=1)
        return PressureField(np.hstack([self.m, pad]), self.sigma2, self.source, self.t0)


def downscale(fine: FinePressureGrid, grid: SpatialGrid, rmse: float = DEFAULT_RMSE) -> PressureField:
    """Arithmetic-mean downscaling of 500 m pressures to the 1 km grid.

    Each coarse cell averages the fine values whose centres lie within l1
    distance 0.5 km of its centre (up to four; the divisor is the available
    count).  The error variance is RMSE^2 / 4 for every cell regardless of
    how many fine values were present.
    """
    if grid.cell_km != 1.0:
        raise InputError("downscaling assumes a 1 km study grid")
    if rmse <= 0:
        raise InputError(f"RMSE must be positive, got {rmse}")
    n_years = len(fine.years)
    m = np.zeros((grid.n_cells, n_years))
    for c, (ce, cn) in enumerate(grid.cell_centers):
        l1 = np.abs(fine.points[:, 0] - ce) + np.abs(fine.points[:, 1] - cn)
        sel = l1 <= 0.5 + 1e-9
        ix, iy = grid.cell_indices[c]
        if not sel.any():
            raise InputError(f"coarse cell ({ix}, {iy}) has no fine pressure values")
        block = fine.values[sel]
        available = ~np.isnan(block)
        if not available.any(axis=0).all():
            raise InputError(f"coarse cell ({ix}, {iy}) has a year with no fine pressure values")
        m[c] = np.nanmean(block, axis=0)
    sigma2 = rmse**2 / 4.0
    return PressureField(m=m, sigma2=sigma2, source="reservoir", t0=int(fine.years[0]))


def _monomial_powers() -> np.ndarray:
    """Exponent triples (a, b, c) with a + b + c <= 4, in deterministic order."""
    powers = []
    for total in range(POLY_DEGREE + 1):
        for combo in combinations_with_replacement(range(3), total):
            p = [0, 0, 0]
            for var in combo:
                p[var] += 1
            powers.append(p)
    return np.array(powers, dtype=np.int64)


@dataclass(frozen=True)
class PolynomialModel:
    """Degree-4 trivariate polynomial in (easting, northing, year).

    Fitted on standardized covariates; ``predict`` undoes the
    standardization, so callers work in raw UTM-31 km and calendar years.
    """

    powers: np.ndarray  # (35, 3)
    coef: np.ndarray  # (35,)
    center: np.ndarray  # (3,)
    scale: np.ndarray  # (3,)
    resid_var: float
    n_obs: int

    def design(self, e, n, year) -> np.ndarray:
        e, n, year = np.broadcast_arrays(
            np.asarray(e, dtype=float), np.asarray(n, dtype=float), np.asarray(year, dtype=float)
        )
        x = (np.column_stack([e.ravel(), n.ravel(), year.ravel()]) - self.center) / self.scale
        return np.prod(x[:, None, :] ** self.powers[None, :, :], axis=2)

    def predict(self, e, n, year):
        shape = np.broadcast(np.asarray(e), np.asarray(n), np.asarray(year)).shape
        out = self.design(e, n, year) @ self.coef
        return float(out[0]) if shape == () else out.reshape(shape)


def fit_polynomial(observations: np.ndarray) -> PolynomialModel:
    """Least-squares fit of the degree-4 polynomial to pressure observations.

    ``observations`` has rows (easting_km, northing_km, year, pressure_barA);
    at least 35 rows spanning at least two distinct years are required.
    Covariates are centred and scaled before solving because raw degree-4
    monomials in UTM coordinates are severely ill-conditioned.
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != 4:
        raise InputError("observations must be rows of (easting, northing, year, pressure)")
    n = len(obs)
    if n < N_POLY_TERMS:
        raise InputError(f"need at least {N_POLY_TERMS} observations for a degree-4 fit, got {n}")
    if len(np.unique(obs[:, 2])) < 2:
        raise InputError("observations must span at least two distinct years")
    xyz = obs[:, :3]
    center = xyz.mean(axis=0)
    scale = xyz.std(axis=0)
    scale[scale == 0] = 1.0
    z = (xyz - center) / scale
    powers = _monomial_powers()
    design = np.prod(z[:, None, :] ** powers[None, :, :], axis=2)
    coef, _, rank, _ = np.linalg.lstsq(design, obs[:, 3], rcond=None)
    if rank < N_POLY_TERMS:
        raise InputError(
            f"rank-deficient design (rank {rank} < {N_POLY_TERMS}): covariates are collinear"
        )
    resid = obs[:, 3] - design @ coef
    rss = float(resid @ resid)
    resid_var = rss / (n - N_POLY_TERMS) if n > N_POLY_TERMS else 0.0
    return PolynomialModel(
        powers=powers, coef=coef, center=center, scale=scale, resid_var=resid_var, n_obs=n
    )


def field_from_polynomial(
    model: PolynomialModel,
    grid: SpatialGrid,
    t0: int,
    n_years: int,
    sigma2: float | None = None,
) -> PressureField:
    """Evaluate a fitted polynomial at cell centres to build a mean field.

    ``sigma2`` defaults to the fit's residual variance and must be positive;
    pass it explicitly when the fit is (near-)exact.
    """
    if sigma2 is None:
        sigma2 = model.resid_var
    years = np.arange(t0, t0 + n_years)
    e = grid.cell_centers[:, 0][:, None]
    n = grid.cell_centers[:, 1][:, None]
    m = model.predict(np.broadcast_to(e, (grid.n_cells, n_years)),
                      np.broadcast_to(n, (grid.n_cells, n_years)),
                      np.broadcast_to(years[None, :], (grid.n_cells, n_years)))
    return PressureField(m=np.asarray(m, dtype=float), sigma2=float(sigma2), source="polynomial", t0=t0)
