"""Spatio-temporal Cox rate-and-state modelling of extraction-induced earthquakes.

The package fits seismicity intensities driven by gridded reservoir
pressure, samples the latent pressure-error field by MALA, forecasts
intensity maps, and ships the reservoir forward relations with a miniature
RMSE history-matching loop.  See README.md for a tour and demos/ for
narrative scripts.
"""

from .errors import CoxRateError, InputError, NumericError
from .grid import GridSpec, SpatialGrid, TimeAxis, load_grid, points_in_polygon
from .ingest import Catalog, ingest_catalog, ingest_production
from .pressure import (
    FinePressureGrid,
    PolynomialModel,
    PressureField,
    downscale,
    field_from_polynomial,
    fit_polynomial,
    read_fine_pressure,
)
from .ratestate import (
    ModelParams,
    intensity,
    intensity_cube,
    intensity_simplified,
    log_intensity_path,
    log_state_normalizer_path,
    state_normalizer,
)
from .estimation import (
    Dataset,
    FitResult,
    composite_loglik,
    composite_score,
    default_init,
    fit,
    godambe_ci,
    sandwich_covariance,
)
from .mcmc import (
    ChainConfig,
    ChainDiagnostics,
    LatentField,
    diagnostics,
    log_posterior,
    mala_chain,
    sample_latent_field,
)
from .forecast import (
    ForecastResult,
    ForecastSpec,
    event_probability,
    predict_intensity,
    simulate,
)
from .reservoir import (
    CompactionBlock,
    GasPVT,
    HistoryMatchProblem,
    HistoryMatchResult,
    OfftakeSeries,
    RegionObservations,
    SubsidenceObservations,
    cgr_cumulative,
    cgr_instantaneous,
    cgr_instantaneous_series,
    history_match,
    pressure_match,
    subsidence,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
