"""Composite-likelihood parameter estimation.

The plug-in Poisson composite likelihood treats each cell-step count as
Poisson with mean lambda * dt * cell_area, with the latent pressure error
set to its mean (zero):

    l(theta) = sum_{s,k} [ N log(lambda dt dS) - lambda dt dS ]

(the N! constant is dropped).  The gradient is analytic; alpha >= 0 is
enforced through an internal log parameterization; standard errors come
from the Godambe sandwich with cells as independent replication units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from .errors import InputError, NumericError
from .grid import SpatialGrid, TimeAxis
from .pressure import PressureField
from .ratestate import ModelParams

log = logging.getLogger(__name__)

PARAM_NAMES = ("theta1", "theta2", "alpha", "beta")
DEFAULT_GRAD_TOL = 1e-6
DEFAULT_MAX_ITER = 500
_LOG_MEAN_CAP = 300.0  # caps exp() so a wild line-search iterate stays finite
_MAX_COND = 1e12


@dataclass(frozen=True)
class Dataset:
    """Aligned per-cell, per-step arrays the likelihood needs."""

    counts: np.ndarray  # (n_cells, n_steps) int
    volumes: np.ndarray  # (n_cells, n_steps) bcm
    pressure: np.ndarray  # (n_cells, n_steps) mean pressure, barA
    dt: float = 1.0
    cell_area: float = 1.0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        volumes = np.asarray(self.volumes, dtype=float)
        pressure = np.asarray(self.pressure, dtype=float)
        if counts.shape != volumes.shape or counts.shape != pressure.shape:
            raise InputError(
                f"shape mismatch: counts {counts.shape}, volumes {volumes.shape}, "
                f"pressure {pressure.shape}"
            )
        if counts.ndim != 2:
            raise InputError("cubes must be (n_cells, n_steps)")
        if (counts < 0).any():
            raise InputError("counts must be >= 0")
        if (volumes < 0).any():
            raise InputError("volumes must be >= 0")
        if not np.isfinite(pressure).all():
            raise InputError("pressure must be finite")
        object.__setattr__(self, "counts", counts.astype(np.int64))
        object.__setattr__(self, "volumes", volumes)
        object.__setattr__(self, "pressure", pressure)

    @classmethod
    def assemble(
        cls,
        counts: np.ndarray,
        production: np.ndarray,
        pressure_field: PressureField,
        grid: SpatialGrid,
        axis: TimeAxis,
    ) -> "Dataset":
        return cls(
            counts=counts,
            volumes=production,
            pressure=pressure_field.slice_axis(axis),
            dt=axis.dt,
            cell_area=grid.cell_area,
        )

    @property
    def n_cells(self) -> int:
        return self.counts.shape[0]

    @property
    def n_steps(self) -> int:
        return self.counts.shape[1]

    @property
    def exposure(self) -> float:
        """Total dt * cell_area over all cell-steps."""
        return self.n_cells * self.n_steps * self.dt * self.cell_area


def _loglik_terms(theta: np.ndarray, ds: Dataset, per_cell: bool = False):
    """Log-likelihood, 4-gradient, and optionally per-cell score rows.

    All exponentials that enter ratios are shifted so every factor stays
    bounded regardless of alpha * dP; the full (non-simplified) state
    normalizer is used so the beta gradient is exact.
    """
    t1, t2, alpha, beta = theta
    p = ds.pressure
    v = ds.volumes
    n = ds.counts
    k_steps = ds.n_steps
    a = alpha * p
    first = a - a[:, :1]
    log_s = np.zeros_like(p)
    ldt = np.log(ds.dt)
    if k_steps > 1:
        cum = np.logaddexp.accumulate(-a, axis=1)
        hist = beta + ldt + a[:, 1:] + cum[:, :-1]
        log_s[:, 1:] = np.logaddexp(first[:, 1:], hist)
    log_lam = t1 + t2 * v - log_s
    log_mean = np.minimum(log_lam + np.log(ds.dt * ds.cell_area), _LOG_MEAN_CAP)
    mean = np.exp(log_mean)
    loglik = float((n * log_mean).sum() - mean.sum())
    w = n - mean

    # d log S / d beta: total weight of the history term.
    # d log S / d alpha: sum of (P_k - P_i) weighted by each term's share.
    shift = (-a).max(axis=1, keepdims=True)
    decay = np.exp(-a - shift)  # <= 1 by construction
    g_prev = np.zeros_like(p)
    h_prev = np.zeros_like(p)
    if k_steps > 1:
        g_prev[:, 1:] = np.cumsum(decay, axis=1)[:, :-1]
        h_prev[:, 1:] = np.cumsum(p * decay, axis=1)[:, :-1]
    phi = np.exp(np.minimum(beta + ldt + a + shift - log_s, _LOG_MEAN_CAP))
    dlogs_dbeta = phi * g_prev
    dlogs_dalpha = (p - p[:, :1]) * np.exp(first - log_s) + phi * (p * g_prev - h_prev)

    rows = np.stack(
        [w, w * v, -w * dlogs_dalpha, -w * dlogs_dbeta], axis=-1
    )  # (n_cells, n_steps, 4)
    per_cell_scores = rows.sum(axis=1)
    grad = per_cell_scores.sum(axis=0)
    return loglik, grad, (per_cell_scores if per_cell else None)


def composite_loglik(params: ModelParams, ds: Dataset) -> float:
    """Plug-in Poisson composite log-likelihood (N! constant omitted)."""
    loglik, _, _ = _loglik_terms(params.as_array(), ds)
    return loglik


def composite_score(params: ModelParams, ds: Dataset) -> np.ndarray:
    """Analytic gradient of the composite log-likelihood, order (theta1, theta2, alpha, beta)."""
    _, grad, _ = _loglik_terms(params.as_array(), ds)
    return grad


@dataclass(frozen=True)
class FitResult:
    """Fit output: point estimates plus (after godambe_ci) sandwich uncertainty."""

    params: ModelParams
    loglik: float
    converged: bool
    n_iter: int
    grad_sup: float
    fixed: dict[str, float] = field(default_factory=dict)
    objective_trace: list[float] = field(default_factory=list)
    std_errors: np.ndarray = field(default_factory=lambda: np.full(4, np.nan))
    ci95: np.ndarray = field(default_factory=lambda: np.full((4, 2), np.nan))

    @property
    def free_names(self) -> list[str]:
        return [name for name in PARAM_NAMES if name not in self.fixed]


def default_init(ds: Dataset) -> ModelParams:
    """Intercept-matched start: theta1 = log(total counts / total exposure)."""
    total = ds.counts.sum()
    if total <= 0:
        raise InputError("fit needs at least one positive count")
    return ModelParams(float(np.log(total / ds.exposure)), 0.0, 0.01, -16.0)


def _theta_to_u(theta: np.ndarray, free: list[int]) -> np.ndarray:
    u = theta.copy()
    if theta[2] > 0:
        u[2] = np.log(theta[2])
    else:
        u[2] = -np.inf
    return u[free]


def _u_to_theta(u: np.ndarray, free: list[int], base: np.ndarray) -> np.ndarray:
    theta = base.copy()
    theta[free] = u
    if 2 in free:
        theta[2] = np.exp(u[free.index(2)])
    return theta


def fit(
    ds: Dataset,
    init: ModelParams | None = None,
    fixed: dict[str, float] | None = None,
    grad_tol: float = DEFAULT_GRAD_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FitResult:
    """Maximize the composite likelihood by quasi-Newton ascent.

    ``fixed`` pins parameters by name.  alpha is optimized on the log scale
    so it stays nonnegative.  After L-BFGS a short Newton polish pushes the
    gradient sup-norm below ``grad_tol``; if the iteration cap is exceeded
    the best iterate is returned with ``converged=False``.
    """
    fixed = dict(fixed or {})
    for name in fixed:
        if name not in PARAM_NAMES:
            raise InputError(f"unknown parameter {name!r}; expected one of {PARAM_NAMES}")
    if init is None:
        init = default_init(ds)
    base = init.as_array()
    for name, value in fixed.items():
        base[PARAM_NAMES.index(name)] = value
    if base[2] < 0:
        raise InputError(f"alpha must be >= 0, got {base[2]}")
    free = [i for i, name in enumerate(PARAM_NAMES) if name not in fixed]
    if not free:
        ll, grad, _ = _loglik_terms(base, ds)
        return FitResult(ModelParams.from_array(base), ll, True, 0, 0.0, fixed, [ll])
    if not np.isfinite(_loglik_terms(base, ds)[0]):
        raise NumericError("composite likelihood is not finite at the initial point")

    trace: list[float] = []

    def negative(u: np.ndarray):
        theta = _u_to_theta(u, free, base)
        ll, grad, _ = _loglik_terms(theta, ds)
        trace.append(ll)
        g = grad.copy()
        g[2] *= theta[2]  # chain rule for the log-alpha coordinate
        return -ll, -g[free]

    u0 = _theta_to_u(base, free)
    if not np.isfinite(u0).all():
        raise InputError("alpha must be strictly positive at the start unless fixed")
    res = scipy.optimize.minimize(
        negative,
        u0,
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "ftol": 1e-13, "gtol": grad_tol / 10},
    )
    u = res.x
    n_iter = int(res.nit)

    # Newton polish on the working coordinates until the score is tight.
    for _ in range(40):
        f, g = negative(u)
        if np.abs(g).max() <= grad_tol or n_iter >= max_iter:
            break
        h = _fd_hessian(lambda uu: negative(uu)[1], u, rel_step=1e-4)
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        for _ in range(20):
            f_new, g_new = negative(u - scale * step)
            if np.abs(g_new).max() < np.abs(g).max() or f_new < f:
                u = u - scale * step
                break
            scale *= 0.5
        else:
            break
        n_iter += 1

    f_final, g_final = negative(u)
    grad_sup = float(np.abs(g_final).max())
    converged = grad_sup <= grad_tol
    if not converged:
        log.warning("fit stopped with gradient sup-norm %.3g > %.3g", grad_sup, grad_tol)
    theta = _u_to_theta(u, free, base)
    return FitResult(
        params=ModelParams.from_array(theta),
        loglik=-f_final,
        converged=converged,
        n_iter=n_iter,
        grad_sup=grad_sup,
        fixed=fixed,
        objective_trace=trace,
    )


def _fd_hessian(grad_fn, x: np.ndarray, rel_step: float = 1e-5) -> np.ndarray:
    """Central finite differences of a gradient function; symmetrized."""
    p = len(x)
    h = np.empty((p, p))
    for j in range(p):
        step = rel_step * max(abs(x[j]), 1.0)
        e = np.zeros(p)
        e[j] = step
        h[:, j] = (grad_fn(x + e) - grad_fn(x - e)) / (2 * step)
    return 0.5 * (h + h.T)


def sandwich_covariance(h: np.ndarray, j: np.ndarray) -> np.ndarray:
    """Godambe covariance H^-1 J H^-1 for sensitivity H and variability J.

    H is equilibrated (symmetric diagonal scaling) before the condition
    check and solve, so wildly different parameter scales do not masquerade
    as singularity; a genuinely flat direction still fails the check.
    """
    h = np.asarray(h, dtype=float)
    j = np.asarray(j, dtype=float)
    if h.shape != j.shape or h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InputError(f"H and J must be equal square matrices, got {h.shape} and {j.shape}")
    diag = np.diag(h)
    if (diag <= 0).any() or not np.isfinite(diag).all():
        raise NumericError("sensitivity matrix has nonpositive diagonal (not at a maximum)")
    d = 1.0 / np.sqrt(diag)
    hs = h * d[:, None] * d[None, :]
    cond = np.linalg.cond(hs)
    if not np.isfinite(cond) or cond > _MAX_COND:
        raise NumericError(f"sensitivity matrix is singular (condition number {cond:.3g})")
    js = j * d[:, None] * d[None, :]
    hinv_j = np.linalg.solve(hs, js)
    cov_s = np.linalg.solve(hs, hinv_j.T).T
    return cov_s * d[:, None] * d[None, :]


def godambe_ci(fit_result: FitResult, ds: Dataset, require_convergence: bool = True) -> FitResult:
    """Fill sandwich standard errors and 95% intervals on a converged fit.

    H is the negative Hessian of the composite likelihood at the fit
    (central differences of the analytic score); J sums outer products of
    per-cell scores, cells being the independent replication units.
    Entries for pinned parameters stay NaN.
    """
    if require_convergence and not fit_result.converged:
        raise InputError("godambe_ci needs a converged fit (or require_convergence=False)")
    theta_hat = fit_result.params.as_array()
    free = [i for i, name in enumerate(PARAM_NAMES) if name not in fit_result.fixed]
    if not free:
        return fit_result

    def score_free(theta_free: np.ndarray) -> np.ndarray:
        theta = theta_hat.copy()
        theta[free] = theta_free
        return _loglik_terms(theta, ds)[1][free]

    h = -_fd_hessian(score_free, theta_hat[free])
    _, _, per_cell = _loglik_terms(theta_hat, ds, per_cell=True)
    scores = per_cell[:, free]
    j = scores.T @ scores
    cov = sandwich_covariance(h, j)
    diag = np.diag(cov)
    if (diag < 0).any():
        raise NumericError("sandwich covariance has negative diagonal entries")
    std = np.full(4, np.nan)
    ci = np.full((4, 2), np.nan)
    std[free] = np.sqrt(diag)
    ci[free, 0] = theta_hat[free] - 1.96 * std[free]
    ci[free, 1] = theta_hat[free] + 1.96 * std[free]
    return replace(fit_result, std_errors=std, ci95=ci)
