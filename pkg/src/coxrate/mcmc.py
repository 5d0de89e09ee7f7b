"""Latent pressure-error sampling by Metropolis-adjusted Langevin.

Each cell's error path E(s, .) has an independent Gaussian prior
N(0, sigma2 I) and a Poisson count likelihood whose intensity runs through
the full (non-simplified) state normalizer, so a proposal at step k shifts
every later normalizer too.  Chains run per cell with RNG streams derived
from (seed, cell index), which makes results independent of cell processing
order and thread count.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError
from .estimation import Dataset
from .ratestate import ModelParams, log_state_normalizer_path

log = logging.getLogger(__name__)

DEFAULT_BURN_IN = 5000
DEFAULT_SAMPLES = 5000
STEP_SIZE_PRIOR_FRACTION = 0.4
MIN_BURN_IN_ACCEPTANCE = 0.2
MAX_STEP_HALVINGS = 8
LOW_ACCEPTANCE_WARNING = 0.01


@dataclass(frozen=True)
class ChainConfig:
    """MALA chain settings; burn-in and sampling default to 5000 iterations each."""

    seed: int
    burn_in: int = DEFAULT_BURN_IN
    samples: int = DEFAULT_SAMPLES
    step_size: float | None = None
    thinning: int = 1

    def __post_init__(self):
        if self.burn_in < 1 or self.samples < 1:
            raise InputError("burn_in and samples must be >= 1")
        if self.step_size is not None and self.step_size <= 0:
            raise InputError(f"step_size must be positive, got {self.step_size}")
        if self.thinning < 1:
            raise InputError(f"thinning must be >= 1, got {self.thinning}")


@dataclass(frozen=True)
class LatentField:
    """Retained draws of the latent error field plus chain bookkeeping.

    ``draws`` is (n_samples, n_cells, n_steps); ``trace_means`` holds the
    running mean of the per-iteration time-averaged state over the final
    burn-in plus sampling iterations.
    """

    draws: np.ndarray
    acceptance_rate: np.ndarray
    trace_means: np.ndarray
    step_size: np.ndarray
    burn_in: int
    thinning: int

    def __post_init__(self):
        if self.draws.ndim != 3:
            raise InputError("draws must be (n_samples, n_cells, n_steps)")
        if not np.isfinite(self.draws).all():
            raise InputError("latent draws must be finite")
        if ((self.acceptance_rate < 0) | (self.acceptance_rate > 1)).any():
            raise InputError("acceptance rates must lie in [0, 1]")

    @property
    def n_samples(self) -> int:
        return self.draws.shape[0]

    @property
    def n_cells(self) -> int:
        return self.draws.shape[1]


def log_posterior(
    e: np.ndarray,
    counts: np.ndarray,
    volumes: np.ndarray,
    mean_pressure: np.ndarray,
    params: ModelParams,
    sigma2: float,
    dt: float = 1.0,
    cell_area: float = 1.0,
) -> tuple[float, np.ndarray]:
    """Unnormalized log posterior of one cell's error path, with gradient.

    The gradient accounts for the dependence of every later state
    normalizer on E_k.  A proposal in a region where the Poisson mean
    overflows gets value -inf (zero posterior mass); NaN raises.
    """
    e = np.asarray(e, dtype=float)
    k_steps = e.shape[0]
    if counts.shape != e.shape or volumes.shape != e.shape or mean_pressure.shape != e.shape:
        raise InputError("per-cell arrays must all have shape (n_steps,)")
    if sigma2 <= 0:
        raise InputError(f"sigma2 must be positive, got {sigma2}")
    p = mean_pressure + e
    a = params.alpha * p
    log_s = log_state_normalizer_path(p, params, dt)
    log_mean = params.theta1 + params.theta2 * volumes - log_s + np.log(dt * cell_area)
    with np.errstate(over="ignore"):
        mean = np.exp(log_mean)
    terms = counts * log_mean - mean
    if np.isnan(terms).any():
        bad = int(np.flatnonzero(np.isnan(terms))[0])
        raise NumericError(f"log posterior overflow at year step {bad}")
    value = float(terms.sum() - (e @ e) / (2.0 * sigma2))

    w = counts - mean
    # rho[k, k'] = share of the k' normalizer contributed by the term with P_k;
    # every kept exponent is <= 0 because each term is a summand of S_{k'}.
    diff = a[None, :] - a[:, None]
    upper = np.tri(k_steps, k_steps, -1, dtype=bool).T  # strictly k < k'
    expo = np.where(upper, params.beta + np.log(dt) + diff - log_s[None, :], -np.inf)
    rho = np.exp(expo)
    rho[0, :] += np.where(upper[0, :], np.exp(diff[0, :] - log_s), 0.0)
    # S_0 is identically 1, so the k = 0 normalizer has no own-step derivative
    own = np.full(k_steps, params.alpha)
    own[0] = 0.0
    grad = -own * w + params.alpha * (rho @ w) - e / sigma2
    return value, grad


@dataclass(frozen=True)
class CellChain:
    draws: np.ndarray  # (n_samples, n_steps)
    acceptance_rate: float
    trace_means: np.ndarray  # running mean over final burn-in + sampling
    step_size: float
    n_halvings: int


def mala_chain(
    counts: np.ndarray,
    volumes: np.ndarray,
    mean_pressure: np.ndarray,
    params: ModelParams,
    sigma2: float,
    config: ChainConfig,
    cell_index: int = 0,
    dt: float = 1.0,
    cell_area: float = 1.0,
) -> CellChain:
    """Run one cell's MALA chain; deterministic given (config.seed, cell_index).

    Proposals are E' = E + (eps^2 / 2) grad log pi(E) + eps xi with the exact
    asymmetric Metropolis-Hastings correction.  If burn-in acceptance falls
    below 0.2 the step size is halved and burn-in repeats (at most 8 times).
    """
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, cell_index)))
    k_steps = counts.shape[0]
    eps = config.step_size if config.step_size is not None else STEP_SIZE_PRIOR_FRACTION * np.sqrt(sigma2)

    def logpost(state):
        return log_posterior(state, counts, volumes, mean_pressure, params, sigma2, dt, cell_area)

    e = np.zeros(k_steps)
    lp, grad = logpost(e)

    def run_phase(n_iter, eps, e, lp, grad, collect=None, trace=None):
        accepted = 0
        half_step = 0.5 * eps * eps
        for it in range(n_iter):
            noise = rng.standard_normal(k_steps)
            mean_fwd = e + half_step * grad
            prop = mean_fwd + eps * noise
            lp_prop, grad_prop = logpost(prop)
            if np.isfinite(lp_prop):
                mean_rev = prop + half_step * grad_prop
                log_q_fwd = -float((prop - mean_fwd) @ (prop - mean_fwd)) / (2 * eps * eps)
                log_q_rev = -float((e - mean_rev) @ (e - mean_rev)) / (2 * eps * eps)
                log_acc = lp_prop - lp + log_q_rev - log_q_fwd
                if np.log(rng.uniform()) < log_acc:
                    e, lp, grad = prop, lp_prop, grad_prop
                    accepted += 1
            if trace is not None:
                trace.append(e.mean())
            if collect is not None and (it + 1) % config.thinning == 0:
                collect.append(e.copy())
        return accepted / n_iter, e, lp, grad

    n_halvings = 0
    trace: list[float] = []
    while True:
        trace.clear()
        acc, e, lp, grad = run_phase(config.burn_in, eps, e, lp, grad, trace=trace)
        if acc >= MIN_BURN_IN_ACCEPTANCE or n_halvings >= MAX_STEP_HALVINGS:
            break
        eps *= 0.5
        n_halvings += 1
        log.info("cell %d: burn-in acceptance %.3f, halving step to %.4g", cell_index, acc, eps)

    kept: list[np.ndarray] = []
    acc, e, lp, grad = run_phase(
        config.samples * config.thinning, eps, e, lp, grad, collect=kept, trace=trace
    )
    if acc < LOW_ACCEPTANCE_WARNING:
        log.warning(
            "cell %d: acceptance rate %.4f after burn-in; adjust the step size", cell_index, acc
        )
    series = np.asarray(trace)
    running_mean = np.cumsum(series) / np.arange(1, len(series) + 1)
    return CellChain(
        draws=np.asarray(kept),
        acceptance_rate=acc,
        trace_means=running_mean,
        step_size=eps,
        n_halvings=n_halvings,
    )


def sample_latent_field(
    ds: Dataset,
    params: ModelParams,
    sigma2: float,
    config: ChainConfig,
    threads: int = 1,
) -> LatentField:
    """Sample every cell's posterior error path; cells are independent chains."""

    def one_cell(c: int) -> CellChain:
        return mala_chain(
            ds.counts[c].astype(float),
            ds.volumes[c],
            ds.pressure[c],
            params,
            sigma2,
            config,
            cell_index=c,
            dt=ds.dt,
            cell_area=ds.cell_area,
        )

    cells = range(ds.n_cells)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chains = list(pool.map(one_cell, cells))
    else:
        chains = [one_cell(c) for c in cells]
    return LatentField(
        draws=np.stack([ch.draws for ch in chains], axis=1),
        acceptance_rate=np.array([ch.acceptance_rate for ch in chains]),
        trace_means=np.stack([ch.trace_means for ch in chains]),
        step_size=np.array([ch.step_size for ch in chains]),
        burn_in=config.burn_in,
        thinning=config.thinning,
    )


@dataclass(frozen=True)
class ChainDiagnostics:
    """Per-cell mixing report: acceptance, Geweke-style z, stationarity flag."""

    acceptance_rate: np.ndarray
    geweke_z: np.ndarray
    stationary: np.ndarray
    posterior_mean: np.ndarray  # (n_cells, n_steps)
    trace_means: np.ndarray = field(repr=False)


def _geweke_z(series: np.ndarray) -> float:
    n = len(series)
    head = series[: max(1, int(0.1 * n))]
    tail = series[-max(1, int(0.5 * n)):]
    v = head.var(ddof=1) / len(head) + tail.var(ddof=1) / len(tail)
    if v == 0:
        return 0.0 if head.mean() == tail.mean() else np.inf
    return float((head.mean() - tail.mean()) / np.sqrt(v))


def diagnostics(latent: LatentField) -> ChainDiagnostics:
    """Stationarity screen on the retained draws.

    The Geweke-style z compares the first 10% against the last 50% of each
    cell's per-draw time-averaged series; |z| < 2 passes.  Needs at least
    100 retained samples.
    """
    if latent.n_samples < 100:
        raise InputError(f"diagnostics needs >= 100 retained samples, got {latent.n_samples}")
    per_draw = latent.draws.mean(axis=2)  # (n_samples, n_cells)
    z = np.array([_geweke_z(per_draw[:, c]) for c in range(latent.n_cells)])
    return ChainDiagnostics(
        acceptance_rate=latent.acceptance_rate,
        geweke_z=z,
        stationary=np.abs(z) < 2.0,
        posterior_mean=latent.draws.mean(axis=0),
        trace_means=latent.trace_means,
    )
