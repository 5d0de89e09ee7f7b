"""Dynamic reservoir forward relations and a miniature history-matching loop.

The pressure match inverts the condensate-gas-ratio trend
CGR = c1 * P / z(P, T) + c2 through a tabulated gas deviation factor; the
subsidence kernel superposes compacting grid blocks under a surface point.
History matching samples uncertain parameters uniformly, scores each draw
by RMSE against observed pressures (and optionally subsidence), ranks the
draws, and reports parameter/RMSE correlations to flag candidates for
manual pinning.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError, NumericError

log = logging.getLogger(__name__)

M_PER_KM = 1000.0
PVT_COLUMNS = ["pressure_barA", "temperature_C", "z"]


@dataclass(frozen=True)
class OfftakeSeries:
    """Cumulative condensate (N_P) and gas (G_P) offtake at increasing times."""

    times: np.ndarray
    n_p: np.ndarray
    g_p: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        n_p = np.asarray(self.n_p, dtype=float)
        g_p = np.asarray(self.g_p, dtype=float)
        if not (times.shape == n_p.shape == g_p.shape) or times.ndim != 1:
            raise InputError("offtake series needs equal-length 1-d times, n_p, g_p")
        if len(times) < 2:
            raise InputError("offtake series needs at least two time points")
        if (np.diff(times) <= 0).any():
            raise InputError("offtake times must be strictly increasing")
        if (np.diff(n_p) < 0).any() or (np.diff(g_p) < 0).any():
            raise InputError("cumulative offtake must be nondecreasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "n_p", n_p)
        object.__setattr__(self, "g_p", g_p)


def cgr_cumulative(n_p, g_p):
    """Cumulative condensate-gas ratio N_P / G_P."""
    n_p = np.asarray(n_p, dtype=float)
    g_p = np.asarray(g_p, dtype=float)
    if (g_p <= 0).any():
        raise InputError("cumulative gas production must be positive")
    out = n_p / g_p
    return float(out) if out.ndim == 0 else out


def cgr_instantaneous(n_p_now, n_p_prev, g_p_now, g_p_prev):
    """Instantaneous condensate-gas ratio over one time step."""
    dn = np.asarray(n_p_now, dtype=float) - np.asarray(n_p_prev, dtype=float)
    dg = np.asarray(g_p_now, dtype=float) - np.asarray(g_p_prev, dtype=float)
    if (dg <= 0).any():
        raise InputError("gas increment must be positive for the instantaneous ratio")
    out = dn / dg
    return float(out) if out.ndim == 0 else out


def cgr_instantaneous_series(series: OfftakeSeries) -> np.ndarray:
    """Instantaneous ratios at times[1:]."""
    return cgr_instantaneous(series.n_p[1:], series.n_p[:-1], series.g_p[1:], series.g_p[:-1])


@dataclass(frozen=True)
class GasPVT:
    """Tabulated gas deviation factor z(P, T) plus the CGR-trend constants."""

    p_knots: np.ndarray
    t_knots: np.ndarray
    z: np.ndarray  # (len(p_knots), len(t_knots))
    c1: float
    c2: float

    def __post_init__(self):
        p = np.asarray(self.p_knots, dtype=float)
        t = np.asarray(self.t_knots, dtype=float)
        z = np.asarray(self.z, dtype=float)
        if z.shape != (len(p), len(t)):
            raise InputError(f"z table shape {z.shape} != ({len(p)}, {len(t)})")
        if len(p) < 1 or len(t) < 1:
            raise InputError("z table needs at least one knot per axis")
        if (np.diff(p) <= 0).any() or (np.diff(t) <= 0).any():
            raise InputError("z table knots must be strictly increasing")
        if (z <= 0).any():
            raise InputError("gas deviation factor must be positive over the table")
        object.__setattr__(self, "p_knots", p)
        object.__setattr__(self, "t_knots", t)
        object.__setattr__(self, "z", z)

    def z_at(self, pressure: float, temperature: float) -> float:
        """Bilinear interpolation, exact at the knots; errors outside the table."""
        p, t = self.p_knots, self.t_knots
        if not (p[0] <= pressure <= p[-1]):
            raise NumericError(
                f"pressure {pressure:.6g} outside z-table range [{p[0]:.6g}, {p[-1]:.6g}]"
            )
        if not (t[0] <= temperature <= t[-1]):
            raise NumericError(
                f"temperature {temperature:.6g} outside z-table range [{t[0]:.6g}, {t[-1]:.6g}]"
            )
        i = min(int(np.searchsorted(p, pressure, side="right")) - 1, len(p) - 2) if len(p) > 1 else 0
        j = min(int(np.searchsorted(t, temperature, side="right")) - 1, len(t) - 2) if len(t) > 1 else 0
        if len(p) == 1 and len(t) == 1:
            return float(self.z[0, 0])
        fp = 0.0 if len(p) == 1 else (pressure - p[i]) / (p[i + 1] - p[i])
        ft = 0.0 if len(t) == 1 else (temperature - t[j]) / (t[j + 1] - t[j])
        i2 = i if len(p) == 1 else i + 1
        j2 = j if len(t) == 1 else j + 1
        return float(
            self.z[i, j] * (1 - fp) * (1 - ft)
            + self.z[i2, j] * fp * (1 - ft)
            + self.z[i, j2] * (1 - fp) * ft
            + self.z[i2, j2] * fp * ft
        )

    def cgr_forward(self, pressure: float, temperature: float) -> float:
        """The trend c1 * P / z(P, T) + c2 (generates synthetic ratios)."""
        return self.c1 * pressure / self.z_at(pressure, temperature) + self.c2

    @classmethod
    def from_csv(cls, path: str | Path, c1: float, c2: float) -> "GasPVT":
        path = Path(path)
        if not path.exists():
            raise InputError(f"input file not found: {path}")
        rows = []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header] != PVT_COLUMNS:
                raise InputError(f"{path}: expected header {','.join(PVT_COLUMNS)}, got {header}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    rows.append((float(row[0]), float(row[1]), float(row[2])))
                except (ValueError, IndexError) as exc:
                    raise InputError(f"{path}:{lineno}: unparseable PVT row {row!r}") from exc
        p_knots = np.unique([r[0] for r in rows])
        t_knots = np.unique([r[1] for r in rows])
        z = np.full((len(p_knots), len(t_knots)), np.nan)
        pi = {v: i for i, v in enumerate(p_knots)}
        tj = {v: j for j, v in enumerate(t_knots)}
        for pv, tv, zv in rows:
            z[pi[pv], tj[tv]] = zv
        if np.isnan(z).any():
            raise InputError(f"{path}: PVT table is not a complete (P, T) grid")
        return cls(p_knots, t_knots, z, c1, c2)


def pressure_match(
    cgr_inst: float,
    pvt: GasPVT,
    temperature: float,
    tol: float = 1e-8,
    max_iter: int = 200,
    damping: float = 0.5,
) -> float:
    """Solve P = (z(P, T) / c1) (CGR - c2) for the pressure.

    Fixed-point iteration: the first update is a full step (so a constant z
    table solves in one step), later updates are damped.  Converges when
    successive pressures differ by less than ``tol``; the solution must lie
    inside the z-table range.
    """
    if pvt.c1 <= 0:
        raise InputError(f"c1 must be positive, got {pvt.c1}")
    excess = cgr_inst - pvt.c2
    if excess < 0:
        raise NumericError(
            f"instantaneous CGR {cgr_inst:.6g} below c2={pvt.c2:.6g}; no nonnegative solution"
        )
    lo, hi = float(pvt.p_knots[0]), float(pvt.p_knots[-1])
    p = 0.5 * (lo + hi)
    for it in range(max_iter):
        target = pvt.z_at(min(max(p, lo), hi), temperature) / pvt.c1 * excess
        p_next = target if it == 0 else (1 - damping) * p + damping * target
        if abs(p_next - p) < tol:
            p = p_next
            break
        p = p_next
    else:
        raise NumericError(f"pressure match did not converge within {max_iter} iterations")
    if not (lo - 1e-9 <= p <= hi + 1e-9):
        raise NumericError(f"pressure solution {p:.6g} outside z-table range [{lo:.6g}, {hi:.6g}]")
    return float(min(max(p, lo), hi))


@dataclass(frozen=True)
class CompactionBlock:
    """One compacting grid block: position/dimensions in km, c_m in 1/barA."""

    c_m: float
    dp: float  # pressure change, barA
    center_e: float  # block centre easting, km
    center_n: float  # block centre northing, km
    depth: float  # L_z, km
    l_x: float
    l_y: float
    l_z: float

    def __post_init__(self):
        if self.l_x <= 0 or self.l_y <= 0 or self.l_z <= 0:
            raise InputError("block dimensions must be positive")
        if self.depth <= 0:
            raise InputError(f"block depth must be positive, got {self.depth}")


def subsidence(surface_e: float, surface_n: float, blocks, nu: float) -> float:
    """Surface subsidence (metres) above a set of compacting blocks.

    u_z = (1 - nu) / pi * sum c_m dP L_z l_x l_y l_z / r^3 with
    r^2 = (x - L_x)^2 + (y - L_y)^2 + L_z^2; distances are given in km and
    converted to metres internally.
    """
    if not 0 < nu < 0.5:
        raise InputError(f"Poisson ratio must lie in (0, 0.5), got {nu}")
    total = 0.0
    for b in blocks:
        dx = (surface_e - b.center_e) * M_PER_KM
        dy = (surface_n - b.center_n) * M_PER_KM
        lz = b.depth * M_PER_KM
        r2 = dx * dx + dy * dy + lz * lz
        total += (
            b.c_m * b.dp * lz * (b.l_x * M_PER_KM) * (b.l_y * M_PER_KM) * (b.l_z * M_PER_KM)
            / r2**1.5
        )
    return (1.0 - nu) / np.pi * total


@dataclass(frozen=True)
class RegionObservations:
    """One named region: offtake history plus observed pressures at times[1:]."""

    name: str
    temperature: float
    offtake: OfftakeSeries
    observed_pressure: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observed_pressure, dtype=float)
        if obs.shape != (len(self.offtake.times) - 1,):
            raise InputError(
                f"region {self.name}: need one observed pressure per offtake step "
                f"({len(self.offtake.times) - 1}), got {obs.shape}"
            )
        object.__setattr__(self, "observed_pressure", obs)


@dataclass(frozen=True)
class SubsidenceObservations:
    """Levelling/satellite subsidence points with the block geometry beneath them."""

    points: np.ndarray  # (n_obs, 2) easting/northing km
    observed_uz: np.ndarray  # metres
    blocks: tuple[CompactionBlock, ...] = ()

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        obs = np.asarray(self.observed_uz, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(obs) != len(pts):
            raise InputError("subsidence observations need (n, 2) points and n values")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "observed_uz", obs)


@dataclass(frozen=True)
class HistoryMatchProblem:
    """Observed data plus base parameter values for the matching loop.

    Sampled parameters are applied by name: ``c1`` and ``c2`` override the
    trend constants, ``c_m`` rescales every block's compressibility, ``nu``
    sets the Poisson ratio.  Unknown names are allowed and simply have no
    effect (useful for screening zero-influence parameters).
    """

    pvt: GasPVT
    regions: tuple[RegionObservations, ...]
    subsidence_obs: SubsidenceObservations | None = None
    nu: float = 0.25

    def __post_init__(self):
        if not self.regions and self.subsidence_obs is None:
            raise InputError("history matching needs at least one observation set")


@dataclass(frozen=True)
class RankedModel:
    rank: int
    rmse_global: float
    rmse_regions: dict[str, float]
    params: dict[str, float]


@dataclass(frozen=True)
class HistoryMatchResult:
    models: tuple[RankedModel, ...]
    correlations: dict[str, dict[str, float]]  # param -> region -> Pearson r
    n_failures: int


def _forward_residuals(problem: HistoryMatchProblem, params: dict[str, float]):
    """Per-region residual arrays for one parameter draw."""
    pvt = GasPVT(
        problem.pvt.p_knots,
        problem.pvt.t_knots,
        problem.pvt.z,
        params.get("c1", problem.pvt.c1),
        params.get("c2", problem.pvt.c2),
    )
    residuals: dict[str, np.ndarray] = {}
    for region in problem.regions:
        ratios = cgr_instantaneous_series(region.offtake)
        pred = np.array([pressure_match(r, pvt, region.temperature) for r in ratios])
        residuals[region.name] = pred - region.observed_pressure
    if problem.subsidence_obs is not None:
        sub = problem.subsidence_obs
        scale = params.get("c_m", 1.0)
        nu = params.get("nu", problem.nu)
        blocks = [
            CompactionBlock(
                b.c_m * scale, b.dp, b.center_e, b.center_n, b.depth, b.l_x, b.l_y, b.l_z
            )
            for b in sub.blocks
        ]
        pred = np.array([subsidence(e, n, blocks, nu) for e, n in sub.points])
        residuals["subsidence"] = pred - sub.observed_uz
    return residuals


def _rmse(values: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(values))))


def history_match(
    problem: HistoryMatchProblem,
    param_ranges: dict[str, tuple[float, float]],
    n_simulations: int,
    seed: int,
    fixed: dict[str, float] | None = None,
    threads: int = 1,
) -> HistoryMatchResult:
    """Uniform parameter sweep ranked by global RMSE.

    Global RMSE pools every residual (scale observation sets comparably if
    they mix units); per-region RMSEs and parameter/RMSE Pearson
    correlations support manual pinning via ``fixed``.  Draws whose forward
    model fails rank last; more than 50% failures is an error.
    """
    if n_simulations < 1:
        raise InputError(f"n_simulations must be >= 1, got {n_simulations}")
    if not param_ranges:
        raise InputError("history matching needs at least one parameter range")
    for name, (lo, hi) in param_ranges.items():
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise InputError(f"parameter {name!r}: range must be finite with low < high")
    fixed = dict(fixed or {})
    names = sorted(param_ranges)
    rng = np.random.default_rng(seed)
    lows = np.array([param_ranges[n][0] for n in names])
    highs = np.array([param_ranges[n][1] for n in names])
    samples = rng.uniform(lows, highs, size=(n_simulations, len(names)))
    for name, value in fixed.items():
        if name in names:
            samples[:, names.index(name)] = value

    def evaluate(i: int):
        params = {name: float(v) for name, v in zip(names, samples[i])}
        params.update(fixed)
        try:
            residuals = _forward_residuals(problem, params)
        except (NumericError, InputError) as exc:
            return params, None, str(exc)
        region_rmse = {name: _rmse(res) for name, res in residuals.items()}
        pooled = np.concatenate([np.ravel(r) for r in residuals.values()])
        return params, (region_rmse, _rmse(pooled)), None

    indices = range(n_simulations)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(evaluate, indices))
    else:
        outcomes = [evaluate(i) for i in indices]

    n_failures = sum(1 for _, ok, _ in outcomes if ok is None)
    if n_failures > 0.5 * n_simulations:
        raise NumericError(
            f"forward model failed for {n_failures}/{n_simulations} draws; "
            "check ranges against the z-table coverage"
        )
    region_names = sorted({r for _, ok, _ in outcomes if ok for r in ok[0]})
    records = []
    for params, ok, _ in outcomes:
        if ok is None:
            records.append((np.inf, {r: np.inf for r in region_names}, params))
        else:
            records.append((ok[1], ok[0], params))
    order = sorted(range(n_simulations), key=lambda i: (records[i][0], i))
    models = tuple(
        RankedModel(rank + 1, records[i][0], records[i][1], records[i][2])
        for rank, i in enumerate(order)
    )

    correlations: dict[str, dict[str, float]] = {}
    finite = np.array([np.isfinite(rec[0]) for rec in records])
    for j, name in enumerate(names):
        correlations[name] = {}
        x = samples[finite, j]
        for region in list(region_names) + ["global"]:
            y = np.array(
                [rec[1].get(region, rec[0]) if region != "global" else rec[0] for rec in records]
            )[finite]
            if len(x) < 3 or x.std() == 0 or y.std() == 0:
                r = 0.0
            else:
                r = float(np.corrcoef(x, y)[0, 1])
            correlations[name][region] = r
    if n_failures:
        log.warning("history match: %d/%d forward-model failures", n_failures, n_simulations)
    return HistoryMatchResult(models=models, correlations=correlations, n_failures=n_failures)
