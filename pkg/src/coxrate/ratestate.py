"""Discretized rate-state quantities.

The seismicity intensity at cell s and step k is

    lambda(s, k) = exp(theta1 + theta2 * V(s, k)) / S_P(s, k)

where the state normalizer accumulates the pressure history,

    S_P(s, k) = exp(alpha * (P_k - P_0))
              + exp(beta) * dt * sum_{i<k} exp(alpha * (P_k - P_i)),

and P = m + E.  When exp(beta) is negligible the normalizer collapses to
its first term and the intensity has the closed form
exp(theta1 + theta2 V + alpha (P_0 - P_k)); both code paths are kept so
they can be cross-checked.  Sums of exponentials are evaluated in log
space to stay finite at large alpha * dP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError
from .grid import TimeAxis
from .pressure import PressureField

SIMPLIFY_THRESHOLD = 1e-6


@dataclass(frozen=True)
class ModelParams:
    """Model parameters (theta1, theta2, alpha, beta).

    theta1 is the intercept, theta2 the per-bcm production effect, alpha the
    per-barA pressure sensitivity and beta the log ratio of alpha to the
    initial state, so exp(beta) weights the pressure-history sum.
    """

    theta1: float
    theta2: float
    alpha: float
    beta: float
    simplify_threshold: float = SIMPLIFY_THRESHOLD

    def __post_init__(self):
        if not np.isfinite([self.theta1, self.theta2, self.alpha, self.beta]).all():
            raise InputError("model parameters must be finite")
        if self.alpha < 0:
            raise InputError(f"alpha must be >= 0, got {self.alpha}")

    @property
    def exp_beta(self) -> float:
        return float(np.exp(self.beta))

    @property
    def simplified(self) -> bool:
        """True when exp(beta) is below the simplification threshold."""
        return self.exp_beta < self.simplify_threshold

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2, self.alpha, self.beta])

    @classmethod
    def from_array(cls, values, simplify_threshold: float = SIMPLIFY_THRESHOLD) -> "ModelParams":
        t1, t2, a, b = (float(v) for v in values)
        return cls(t1, t2, a, b, simplify_threshold)


def log_state_normalizer_path(pressure, params: ModelParams, dt: float = 1.0) -> np.ndarray:
    """log S_P at every step along pressure paths.

    ``pressure`` has shape (..., K) with step 0 first; the result has the
    same shape.  Uses a running log-sum-exp along the time axis, so large
    alpha * dP cannot overflow.
    """
    p = np.asarray(pressure, dtype=float)
    if p.ndim < 1 or p.shape[-1] < 1:
        raise InputError("pressure path must have at least one step")
    a = params.alpha * p
    first = a - a[..., :1]
    out = np.zeros_like(p)
    if p.shape[-1] == 1:
        return out
    # running logsumexp of exp(-a_i) over i <= k, shifted to i <= k-1
    cum = np.logaddexp.accumulate(-a, axis=-1)
    hist = params.beta + np.log(dt) + a[..., 1:] + cum[..., :-1]
    out[..., 1:] = np.logaddexp(first[..., 1:], hist)
    return out


def state_normalizer(pressure_path, params: ModelParams, dt: float = 1.0) -> float:
    """S_P at the final step of a single-cell pressure path (steps 0..k)."""
    p = np.asarray(pressure_path, dtype=float)
    if p.ndim != 1 or p.size < 1:
        raise InputError("pressure path must be a non-empty 1-d sequence")
    return float(np.exp(log_state_normalizer_path(p, params, dt)[-1]))


def intensity(volume: float, s_p: float, params: ModelParams) -> float:
    """Intensity exp(theta1 + theta2 V) / S_P for one cell-step."""
    if volume < 0:
        raise InputError(f"production volume must be >= 0, got {volume}")
    if s_p <= 0:
        raise InputError(f"state normalizer must be positive, got {s_p}")
    return float(np.exp(params.theta1 + params.theta2 * volume) / s_p)


def intensity_simplified(volume, p_start, p_now, params: ModelParams):
    """Closed-form intensity exp(theta1 + theta2 V + alpha (P_0 - P_t)).

    Valid when exp(beta) is negligible so the history sum drops out.
    """
    return np.exp(params.theta1 + params.theta2 * np.asarray(volume)
                  + params.alpha * (np.asarray(p_start) - np.asarray(p_now)))


def log_intensity_path(
    pressure, volumes, params: ModelParams, dt: float = 1.0, force_full: bool = False
) -> np.ndarray:
    """log lambda along (..., K) pressure/volume paths.

    Uses the simplified closed form when ``params.simplified`` (unless
    ``force_full``); the two paths agree to within exp(beta)-sized relative
    error by construction.
    """
    p = np.asarray(pressure, dtype=float)
    v = np.asarray(volumes, dtype=float)
    if p.shape != v.shape:
        raise InputError(f"pressure shape {p.shape} != volume shape {v.shape}")
    if (v < 0).any():
        raise InputError("production volumes must be >= 0")
    base = params.theta1 + params.theta2 * v
    if params.simplified and not force_full:
        return base + params.alpha * (p[..., :1] - p)
    return base - log_state_normalizer_path(p, params, dt)


def intensity_cube(
    field: PressureField,
    production: np.ndarray,
    params: ModelParams,
    axis: TimeAxis,
    latent: np.ndarray | None = None,
    force_full: bool = False,
) -> np.ndarray:
    """Per-cell, per-step intensity with P = m + E.

    ``production`` and the optional latent error field ``latent`` are
    (n_cells, n_steps) over the study axis; the latent field defaults to
    zero.  Cells are independent, so the computation is a vectorized batch
    of the scalar pipeline.
    """
    v = np.asarray(production, dtype=float)
    m = field.slice_axis(axis)
    if v.shape != m.shape:
        raise InputError(f"production shape {v.shape} does not match pressure {m.shape}")
    if latent is None:
        p = m
    else:
        e = np.asarray(latent, dtype=float)
        if e.shape != m.shape:
            raise InputError(f"latent shape {e.shape} does not match pressure {m.shape}")
        p = m + e
    return np.exp(log_intensity_path(p, v, params, axis.dt, force_full=force_full))
