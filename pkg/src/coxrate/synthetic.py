"""Bundled synthetic dataset.

The real field data are proprietary, so demos, CLI smoke runs and the
acceptance suite work on a generated look-alike: a polygonal field on a
12 x 12 km grid, declining fine-grid pressures, a handful of producing
wells with monthly volumes, an event catalog simulated from the model
itself, and a small reservoir history-matching problem with a known truth.
Everything is deterministic given the seed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .forecast import simulate
from .grid import GridSpec, TimeAxis, load_grid
from .ingest import ingest_production
from .pressure import downscale, read_fine_pressure
from .ratestate import ModelParams
from .reservoir import CompactionBlock, GasPVT, subsidence

DEMO_PARAMS = ModelParams(-4.6, 13.0, 0.013, -16.0)
DEMO_POLYGON = "1,1; 9,1; 11,4; 11,11; 4,11; 1,7; 1,1"
DEMO_PVT_C1 = 0.0008
DEMO_PVT_C2 = 0.01
DEMO_NU = 0.25
DEMO_CM = 6e-6  # 1/barA


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _demo_pressure(e, n, year):
    """Smooth declining pressure surface, barA (vectorized)."""
    t = np.asarray(year) - 1995
    south = 1.0 + 0.35 * (1.0 - np.asarray(n) / 12.0)
    ridge = 6.0 * np.sin(0.35 * np.asarray(e)) * np.cos(0.25 * np.asarray(n))
    return 340.0 - 13.5 * t * south + ridge


def _z_table(p, t):
    return 0.9 + 0.3 * ((p - 200.0) / 400.0) ** 2 + 0.0005 * (t - 100.0)


def make_demo_dataset(target_dir: str | Path, seed: int = 20240801) -> Path:
    """Write the full synthetic dataset plus a run config; returns the config path."""
    target = Path(target_dir)
    target.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    t0, n_steps = 1995, 15
    horizon_years = (2010, 2011, 2012)
    pressure_years = range(t0, max(horizon_years) + 1)

    # fine 500 m pressure grid covering the whole bounding box
    fine_rows = []
    for iy in range(24):
        for ix in range(24):
            e = (ix + 0.5) * 0.5
            n = (iy + 0.5) * 0.5
            for year in pressure_years:
                fine_rows.append((e, n, year, round(float(_demo_pressure(e, n, year)), 6)))
    _write_csv(
        target / "pressure_fine.csv",
        ["easting_km", "northing_km", "year", "pressure_barA"],
        fine_rows,
    )

    # four wells, concentrated in the south, annual volumes tapering to zero
    wells = [("POS-1", 3.2, 2.4), ("POS-2", 5.8, 2.1), ("POS-3", 7.9, 3.6), ("ZWD-1", 4.6, 5.2)]
    production_rows = []
    for well_id, e, n in wells:
        for k in range(n_steps):
            year = t0 + k
            taper = max(0.0, 1.0 - k / (n_steps - 3))  # production stops before the window ends
            annual_bcm = 0.9 * taper
            monthly_ncm = annual_bcm * 1e9 / 12.0
            for month in range(1, 13):
                production_rows.append((well_id, e, n, year, month, round(monthly_ncm, 3)))
    _write_csv(
        target / "production.csv",
        ["well_id", "easting_km", "northing_km", "year", "month", "volume_ncm"],
        production_rows,
    )

    # simulate an event catalog from the model on the same inputs
    polygon = np.array(
        [[float(v) for v in chunk.split(",")] for chunk in DEMO_POLYGON.split(";")]
    )
    grid = load_grid(GridSpec(0.0, 0.0, 12, 12, 1.0, polygon=polygon))
    axis = TimeAxis(n_steps=n_steps, t0=t0)
    production = ingest_production(target / "production.csv", grid, axis, bandwidth_km=2.0)
    field = downscale(read_fine_pressure(target / "pressure_fine.csv"), grid)
    counts, _ = simulate(DEMO_PARAMS, field, production, grid, axis, seed=seed + 1)

    catalog_rows = []
    for c in range(grid.n_cells):
        ce, cn = grid.cell_centers[c]
        for k in range(n_steps):
            for _ in range(int(counts[c, k])):
                e = ce + rng.uniform(-0.5, 0.5)
                n = cn + rng.uniform(-0.5, 0.5)
                year = t0 + k + rng.uniform(0.0, 1.0)
                mag = 1.5 + rng.exponential(1.0 / np.log(10.0))
                catalog_rows.append((round(e, 4), round(n, 4), round(year, 4), round(mag, 2)))
    # below-threshold and out-of-window events exercise the ingest filters
    for _ in range(25):
        catalog_rows.append(
            (
                round(rng.uniform(1.5, 10.5), 4),
                round(rng.uniform(1.5, 10.5), 4),
                round(rng.uniform(t0, t0 + n_steps), 4),
                round(rng.uniform(0.5, 1.45), 2),
            )
        )
    for _ in range(5):
        catalog_rows.append(
            (round(rng.uniform(2, 9), 4), round(rng.uniform(2, 9), 4),
             round(rng.uniform(t0 - 4, t0), 4), round(rng.uniform(1.5, 2.5), 2))
        )
    catalog_rows.sort()
    _write_csv(
        target / "catalog.csv",
        ["easting_km", "northing_km", "decimal_year", "magnitude"],
        catalog_rows,
    )

    # PVT table for the reservoir equations
    pvt_rows = [
        (float(p), float(t), round(float(_z_table(p, t)), 6))
        for p in np.arange(0.0, 801.0, 25.0)
        for t in (80.0, 100.0, 120.0)
    ]
    _write_csv(target / "pvt.csv", ["pressure_barA", "temperature_C", "z"], pvt_rows)
    pvt = GasPVT.from_csv(target / "pvt.csv", DEMO_PVT_C1, DEMO_PVT_C2)

    # two offtake regions generated from the CGR trend at known constants
    for name, temp, p_start, p_end in (("north", 100.0, 330.0, 190.0), ("south", 100.0, 320.0, 140.0)):
        times = np.arange(0.0, 13.0)
        p_true = np.linspace(p_start, p_end, len(times) - 1)
        g_p = np.cumsum(np.full(len(times), 12.0))  # steady gas offtake
        n_p = np.zeros(len(times))
        for j, p_star in enumerate(p_true):
            ratio = pvt.cgr_forward(float(p_star), temp)
            n_p[j + 1] = n_p[j] + ratio * (g_p[j + 1] - g_p[j])
        _write_csv(
            target / f"offtake_{name}.csv",
            ["time", "n_p", "g_p"],
            [(float(t), repr(float(npv)), repr(float(gpv))) for t, npv, gpv in zip(times, n_p, g_p)],
        )
        noisy = p_true + rng.normal(0.0, 0.4, len(p_true))
        _write_csv(
            target / f"pressure_obs_{name}.csv",
            ["time", "pressure_barA"],
            [(float(t), repr(float(p))) for t, p in zip(times[1:], noisy)],
        )

    # compacting blocks under the southern region plus levelling observations
    blocks = [
        CompactionBlock(DEMO_CM, 150.0 + 10.0 * i, 3.0 + 2.0 * i, 3.0 + j, 3.0, 2.0, 2.0, 0.2)
        for i in range(3)
        for j in range(2)
    ]
    _write_csv(
        target / "blocks.csv",
        ["c_m", "dp_barA", "center_e_km", "center_n_km", "depth_km", "l_x_km", "l_y_km", "l_z_km"],
        [(b.c_m, b.dp, b.center_e, b.center_n, b.depth, b.l_x, b.l_y, b.l_z) for b in blocks],
    )
    points = [(3.5, 3.2), (5.5, 3.8), (7.5, 3.4), (5.0, 5.0)]
    sub_rows = [
        (e, n, repr(subsidence(e, n, blocks, DEMO_NU) + float(rng.normal(0.0, 0.002))))
        for e, n in points
    ]
    _write_csv(target / "subsidence_obs.csv", ["easting_km", "northing_km", "u_z_m"], sub_rows)

    config_text = f"""# synthetic demo configuration
seed = {seed}
output_dir = out
threads = 1

grid.origin_e = 0.0
grid.origin_n = 0.0
grid.nx = 12
grid.ny = 12
grid.cell_km = 1.0
grid.polygon = {DEMO_POLYGON}

time.t0 = {t0}
time.n_steps = {n_steps}

catalog.path = catalog.csv
catalog.min_mag = 1.5

production.path = production.csv
production.bandwidth_km = 2.0

pressure.mode = reservoir
pressure.path = pressure_fine.csv
pressure.rmse = 2.3

fit.max_iter = 500
fit.grad_tol = 1e-6
fit.fix = beta=-16.0    # the history weight is not identifiable at demo scale

chain.burn_in = 250
chain.samples = 250
chain.thinning = 1

forecast.horizon_years = {", ".join(str(y) for y in horizon_years)}
forecast.n_samples = 60
forecast.write_matrices = false

simulate.theta1 = {DEMO_PARAMS.theta1}
simulate.theta2 = {DEMO_PARAMS.theta2}
simulate.alpha = {DEMO_PARAMS.alpha}
simulate.beta = {DEMO_PARAMS.beta}

hm.pvt_path = pvt.csv
hm.c1 = {DEMO_PVT_C1}
hm.c2 = {DEMO_PVT_C2}
hm.nu = {DEMO_NU}
hm.n_simulations = 400
hm.regions = north, south
hm.region.north.offtake_path = offtake_north.csv
hm.region.north.pressure_path = pressure_obs_north.csv
hm.region.north.temperature = 100.0
hm.region.south.offtake_path = offtake_south.csv
hm.region.south.pressure_path = pressure_obs_south.csv
hm.region.south.temperature = 100.0
hm.subsidence.blocks_path = blocks.csv
hm.subsidence.observations_path = subsidence_obs.csv
hm.range.c1 = 0.0004, 0.0012
hm.range.c2 = 0.0, 0.02
hm.range.c_m = 0.5, 2.0
"""
    config_path = target / "run.cfg"
    config_path.write_text(config_text)
    return config_path
