"""Predictive intensity maps and the synthetic count simulator.

Forecasts average intensity over retained latent-field draws: each draw
fixes the pressure-error history inside the data window, horizon errors are
set to zero, and the production scenario supplies horizon volumes (zero
after field closure).  The simulator draws a fresh Gaussian error field and
Poisson counts from the resulting intensity, and doubles as the estimation
and MCMC test oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .grid import SpatialGrid, TimeAxis
from .mcmc import LatentField
from .pressure import PressureField
from .ratestate import ModelParams, log_intensity_path

log = logging.getLogger(__name__)

DEFAULT_FORECAST_SAMPLES = 100


@dataclass(frozen=True)
class ForecastSpec:
    """Forecast request: horizon calendar years, draw count, production scenario.

    ``production_scenario`` is (n_cells, len(horizon_years)) in bcm; None
    means zero production over the horizon (closed field).
    """

    horizon_years: tuple[int, ...]
    n_samples: int = DEFAULT_FORECAST_SAMPLES
    production_scenario: np.ndarray | None = None

    def __post_init__(self):
        if len(self.horizon_years) < 1:
            raise InputError("forecast needs at least one horizon year")
        if list(self.horizon_years) != sorted(set(self.horizon_years)):
            raise InputError("horizon years must be strictly increasing")
        if self.n_samples < 1:
            raise InputError(f"n_samples must be >= 1, got {self.n_samples}")


@dataclass(frozen=True)
class ForecastResult:
    """Per horizon year and cell: mean intensity, 5%/95% quantiles, event probability."""

    years: tuple[int, ...]
    mean: np.ndarray  # (n_years, n_cells)
    q05: np.ndarray
    q95: np.ndarray
    p_event: np.ndarray


def event_probability(lam, dt: float = 1.0, cell_area: float = 1.0):
    """Probability of one or more events in a cell-year: 1 - exp(-lambda dt dS)."""
    lam = np.asarray(lam, dtype=float)
    if (lam < 0).any():
        raise InputError("intensity must be >= 0")
    out = -np.expm1(-lam * dt * cell_area)
    return float(out) if out.ndim == 0 else out


def _select_draws(latent: LatentField | None, n_samples: int, n_cells: int, n_steps: int) -> np.ndarray:
    """Evenly spaced retained draws (deterministic); zero field when latent is None."""
    if latent is None:
        return np.zeros((1, n_cells, n_steps))
    if latent.draws.shape[1] != n_cells or latent.draws.shape[2] != n_steps:
        raise InputError(
            f"latent draws shape {latent.draws.shape} does not match data window "
            f"({n_cells} cells, {n_steps} steps)"
        )
    available = latent.n_samples
    if n_samples >= available:
        return latent.draws
    idx = np.unique(np.round(np.linspace(0, available - 1, n_samples)).astype(int))
    return latent.draws[idx]


def predict_intensity(
    spec: ForecastSpec,
    params: ModelParams,
    field: PressureField,
    production: np.ndarray,
    grid: SpatialGrid,
    axis: TimeAxis,
    latent: LatentField | None = None,
) -> ForecastResult:
    """Monte Carlo forecast of the intensity over future year steps.

    The pressure mean must extend over the horizon (reservoir forecast
    years); if it does not, the final year is held flat with a warning.
    Quantiles are empirical with linear (type-7) interpolation.
    """
    last_data_year = axis.t0 + axis.n_steps - 1
    if min(spec.horizon_years) <= last_data_year:
        raise InputError(
            f"horizon years must lie after the data window (last data year {last_data_year})"
        )
    production = np.asarray(production, dtype=float)
    if production.shape != (grid.n_cells, axis.n_steps):
        raise InputError(f"production shape {production.shape} does not match data window")
    scenario = spec.production_scenario
    if scenario is None:
        scenario = np.zeros((grid.n_cells, len(spec.horizon_years)))
    scenario = np.asarray(scenario, dtype=float)
    if scenario.shape != (grid.n_cells, len(spec.horizon_years)):
        raise InputError(
            f"production scenario shape {scenario.shape} != (n_cells, n_horizon_years)"
        )

    horizon_end = max(spec.horizon_years)
    field = field.extended_to(horizon_end)
    n_total = horizon_end - axis.t0 + 1
    m_full = field.m[:, :n_total]
    v_full = np.zeros((grid.n_cells, n_total))
    v_full[:, : axis.n_steps] = production
    year_cols = {y: y - axis.t0 for y in spec.horizon_years}
    for j, y in enumerate(spec.horizon_years):
        v_full[:, year_cols[y]] = scenario[:, j]

    draws = _select_draws(latent, spec.n_samples, grid.n_cells, axis.n_steps)
    n_draws = draws.shape[0]
    horizon_idx = np.array([year_cols[y] for y in spec.horizon_years])
    lam = np.empty((n_draws, len(spec.horizon_years), grid.n_cells))
    for d in range(n_draws):
        e_full = np.zeros((grid.n_cells, n_total))
        e_full[:, : axis.n_steps] = draws[d]
        log_lam = log_intensity_path(m_full + e_full, v_full, params, axis.dt)
        lam[d] = np.exp(log_lam[:, horizon_idx]).T
    prob = event_probability(lam, axis.dt, grid.cell_area)
    return ForecastResult(
        years=tuple(spec.horizon_years),
        mean=lam.mean(axis=0),
        q05=np.quantile(lam, 0.05, axis=0),
        q95=np.quantile(lam, 0.95, axis=0),
        p_event=prob.mean(axis=0),
    )


def simulate(
    params: ModelParams,
    field: PressureField,
    production: np.ndarray,
    grid: SpatialGrid,
    axis: TimeAxis,
    seed: int,
    sigma2: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a synthetic catalog cube from the model.

    E(s, k) ~ N(0, sigma2) independently, then N(s, k) ~ Poisson(lambda dt
    dS) through the full state normalizer.  Returns (counts, true error
    field); deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    if sigma2 is None:
        sigma2 = field.sigma2
    if sigma2 < 0:
        raise InputError(f"sigma2 must be >= 0, got {sigma2}")
    production = np.asarray(production, dtype=float)
    m = field.slice_axis(axis)
    if production.shape != m.shape:
        raise InputError(f"production shape {production.shape} does not match pressure {m.shape}")
    e_true = rng.normal(0.0, np.sqrt(sigma2), size=m.shape)
    log_lam = log_intensity_path(m + e_true, production, params, axis.dt, force_full=True)
    mean = np.exp(log_lam) * axis.dt * grid.cell_area
    counts = rng.poisson(mean)
    return counts.astype(np.int64), e_true
