"""Command-line pipeline: ingest -> fit -> sample -> forecast, plus
simulate, history-match and report.

Every command reads one plain-text config (CLI ``--set`` overrides win over
the file, which wins over defaults), writes its artifacts into the output
directory together with a JSON manifest carrying the config hash, the seed
and content hashes.  Downstream commands refuse artifacts whose config hash
differs from the current config.  Exit codes: 0 success, 1 input error,
2 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig
from .cubes import read_cube, read_draws, write_cube, write_draws, write_matrix
from .errors import InputError, NumericError
from .estimation import PARAM_NAMES, Dataset, FitResult, fit, godambe_ci
from .forecast import ForecastSpec, predict_intensity, simulate
from .grid import SpatialGrid, TimeAxis
from .ingest import ingest_catalog, ingest_production
from .mcmc import ChainConfig, LatentField, diagnostics, sample_latent_field
from .pressure import (
    PressureField,
    downscale,
    field_from_polynomial,
    fit_polynomial,
    read_fine_pressure,
)
from .ratestate import ModelParams
from .reservoir import (
    CompactionBlock,
    GasPVT,
    HistoryMatchProblem,
    OfftakeSeries,
    RegionObservations,
    SubsidenceObservations,
    history_match,
)

log = logging.getLogger(__name__)


# --- manifest plumbing ------------------------------------------------------


def _r(x) -> str:
    """repr of a value as a plain Python float (shortest round-trip form)."""
    return repr(float(x))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(
    out_dir: Path,
    command: str,
    cfg: RunConfig,
    overrides: dict[str, str],
    inputs: list[Path],
    outputs: list[Path],
) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.file_hash,
        "seed": cfg.seed(),
        "overrides": overrides,
        "versions": {
            "coxrate": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
        "inputs": {p.name: _sha256(p) for p in inputs},
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path = out_dir / f"manifest_{command.replace('-', '_')}.json"
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    return path


def _require_manifest(out_dir: Path, command: str, cfg: RunConfig, needed_by: str) -> dict:
    path = out_dir / f"manifest_{command.replace('-', '_')}.json"
    if not path.exists():
        raise InputError(
            f"{needed_by} needs the {command} artifacts; run `coxrate {command}` first"
        )
    manifest = json.loads(path.read_text())
    if manifest.get("config_hash") != cfg.file_hash:
        raise InputError(
            f"{command} artifacts were produced with a different config "
            f"(hash {manifest.get('config_hash', '?')[:12]} != {cfg.file_hash[:12]}); re-run it"
        )
    return manifest


def _meta(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.file_hash, "seed": cfg.seed()}


# --- shared loaders ---------------------------------------------------------


def _build_grid_axis(cfg: RunConfig) -> tuple[SpatialGrid, TimeAxis]:
    from .grid import load_grid

    return load_grid(cfg.grid_spec()), cfg.time_axis()


def _pressure_field(cfg: RunConfig, grid: SpatialGrid, axis: TimeAxis) -> PressureField:
    mode = cfg.get_str("pressure.mode", "reservoir")
    if mode == "reservoir":
        fine = read_fine_pressure(cfg.get_path("pressure.path"))
        return downscale(fine, grid, rmse=cfg.get_float("pressure.rmse", 2.3))
    if mode == "polynomial":
        obs_path = cfg.get_path("pressure.obs_path")
        obs = np.loadtxt(obs_path, delimiter=",", skiprows=1)
        model = fit_polynomial(obs)
        sigma2 = cfg.get_float("pressure.sigma2", model.resid_var)
        last_year = axis.t0 + axis.n_steps - 1
        if cfg.has("forecast.horizon_years"):
            last_year = max(last_year, max(cfg.get_int_list("forecast.horizon_years")))
        return field_from_polynomial(model, grid, axis.t0, last_year - axis.t0 + 1, sigma2)
    raise InputError(f"pressure.mode must be 'reservoir' or 'polynomial', got {mode!r}")


def _load_ingested(cfg: RunConfig, out_dir: Path, needed_by: str):
    _require_manifest(out_dir, "ingest", cfg, needed_by)
    grid, axis = _build_grid_axis(cfg)
    counts, _ = read_cube(out_dir / "counts.csv", grid, dtype=np.int64)
    volumes, _ = read_cube(out_dir / "volumes.csv", grid)
    mean, meta = read_cube(out_dir / "pressure_mean.csv", grid)
    field = PressureField(
        m=mean, sigma2=float(meta["sigma2"]), source=meta["source"], t0=int(meta["t0"])
    )
    return grid, axis, counts, volumes, field


def _load_fit(out_dir: Path) -> ModelParams:
    path = out_dir / "fit_report.txt"
    if not path.exists():
        raise InputError("fit report not found; run `coxrate fit` first")
    values: dict[str, str] = {}
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if "=" in line:
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
    try:
        return ModelParams(*(float(values[name]) for name in PARAM_NAMES))
    except KeyError as exc:
        raise InputError(f"fit report {path} is missing parameter {exc}") from exc


def _fit_report_text(cfg: RunConfig, result: FitResult, n_events: int) -> str:
    lines = [f"# config_hash={cfg.file_hash}", f"# seed={cfg.seed()}"]
    theta = result.params.as_array()
    for i, name in enumerate(PARAM_NAMES):
        lines.append(f"{name} = {_r(theta[i])}")
        lines.append(f"{name}_se = {_r(result.std_errors[i])}")
        lines.append(f"{name}_ci_low = {_r(result.ci95[i, 0])}")
        lines.append(f"{name}_ci_high = {_r(result.ci95[i, 1])}")
        lines.append(f"{name}_fixed = {'true' if name in result.fixed else 'false'}")
    lines.append(f"converged = {'true' if result.converged else 'false'}")
    lines.append(f"n_iter = {result.n_iter}")
    lines.append(f"grad_sup = {_r(result.grad_sup)}")
    lines.append(f"loglik = {_r(result.loglik)}")
    lines.append(f"n_events = {n_events}")
    return "\n".join(lines) + "\n"


# --- commands ---------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, overrides: dict[str, str]) -> None:
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    grid, axis = _build_grid_axis(cfg)
    catalog_path = cfg.get_path("catalog.path")
    production_path = cfg.get_path("production.path")
    catalog, counts = ingest_catalog(
        catalog_path, grid, axis, min_mag=cfg.get_float("catalog.min_mag", 1.5)
    )
    volumes = ingest_production(
        production_path, grid, axis, bandwidth_km=cfg.get_float("production.bandwidth_km", 5.0)
    )
    field = _pressure_field(cfg, grid, axis)

    meta = _meta(cfg)
    write_cube(out_dir / "counts.csv", grid, counts, "n_events", meta)
    write_cube(out_dir / "volumes.csv", grid, volumes, "volume_bcm", meta)
    write_cube(
        out_dir / "pressure_mean.csv",
        grid,
        field.m,
        "pressure_barA",
        {**meta, "sigma2": repr(field.sigma2), "source": field.source, "t0": field.t0},
    )
    report_lines = [
        f"# config_hash={cfg.file_hash}",
        f"events_retained = {catalog.n_events}",
    ]
    report_lines += [f"events_dropped_{k} = {v}" for k, v in sorted(catalog.dropped.items())]
    report_lines.append(f"cells_in_field = {grid.n_cells}")
    for k in range(axis.n_steps):
        report_lines.append(f"volume_total_{axis.t0 + k} = {_r(volumes[:, k].sum())}")
    (out_dir / "ingest_report.txt").write_text("\n".join(report_lines) + "\n")
    _write_manifest(
        out_dir,
        "ingest",
        cfg,
        overrides,
        [catalog_path, production_path, cfg.get_path("pressure.path")],
        [
            out_dir / "counts.csv",
            out_dir / "volumes.csv",
            out_dir / "pressure_mean.csv",
            out_dir / "ingest_report.txt",
        ],
    )


def _parse_fix(items: list[str]) -> dict[str, float]:
    fixed = {}
    for item in items or []:
        if "=" not in item:
            raise InputError(f"--fix {item!r} must look like name=value")
        name, _, value = item.partition("=")
        try:
            fixed[name.strip()] = float(value)
        except ValueError as exc:
            raise InputError(f"--fix {item!r}: value must be a number") from exc
    return fixed


def cmd_fit(cfg: RunConfig, overrides: dict[str, str], fix: list[str]) -> None:
    out_dir = cfg.output_dir()
    grid, axis, counts, volumes, field = _load_ingested(cfg, out_dir, "fit")
    ds = Dataset.assemble(counts, volumes, field, grid, axis)
    config_fix = cfg.get_str_list("fit.fix") if cfg.has("fit.fix") else []
    fixed = {**_parse_fix(config_fix), **_parse_fix(fix)}  # CLI pins win over the file
    result = fit(
        ds,
        fixed=fixed,
        grad_tol=cfg.get_float("fit.grad_tol", 1e-6),
        max_iter=cfg.get_int("fit.max_iter", 500),
    )
    if not result.converged:
        raise NumericError(
            f"fit did not converge within {cfg.get_int('fit.max_iter', 500)} iterations "
            f"(gradient sup-norm {result.grad_sup:.3g})"
        )
    result = godambe_ci(result, ds)
    (out_dir / "fit_report.txt").write_text(_fit_report_text(cfg, result, int(counts.sum())))
    _write_manifest(
        out_dir,
        "fit",
        cfg,
        {**overrides, **{f"fix.{k}": repr(v) for k, v in fixed.items()}},
        [out_dir / "counts.csv", out_dir / "volumes.csv", out_dir / "pressure_mean.csv"],
        [out_dir / "fit_report.txt"],
    )


def cmd_sample(cfg: RunConfig, overrides: dict[str, str], threads: int) -> None:
    out_dir = cfg.output_dir()
    grid, axis, counts, volumes, field = _load_ingested(cfg, out_dir, "sample")
    _require_manifest(out_dir, "fit", cfg, "sample")
    params = _load_fit(out_dir)
    ds = Dataset.assemble(counts, volumes, field, grid, axis)
    config = ChainConfig(
        seed=cfg.seed(),
        burn_in=cfg.get_int("chain.burn_in", 5000),
        samples=cfg.get_int("chain.samples", 5000),
        step_size=cfg.get_float("chain.step_size") if cfg.has("chain.step_size") else None,
        thinning=cfg.get_int("chain.thinning", 1),
    )
    latent = sample_latent_field(ds, params, field.sigma2, config, threads=threads)
    write_draws(
        out_dir / "latent_draws.bin", latent.draws, latent.acceptance_rate, latent.step_size
    )
    with open(out_dir / "trace_running_mean.csv", "w") as fh:
        fh.write(f"# config_hash={cfg.file_hash}\n")
        fh.write("cell,iteration,running_mean\n")
        for c in range(latent.n_cells):
            for it, val in enumerate(latent.trace_means[c]):
                fh.write(f"{c},{it},{_r(val)}\n")
    report = diagnostics(latent) if latent.n_samples >= 100 else None
    lines = [f"# config_hash={cfg.file_hash}", f"n_samples = {latent.n_samples}"]
    lines.append(f"acceptance_mean = {_r(latent.acceptance_rate.mean())}")
    lines.append(f"acceptance_min = {_r(latent.acceptance_rate.min())}")
    if report is not None:
        lines.append(f"stationary_cells = {int(report.stationary.sum())} of {latent.n_cells}")
    (out_dir / "chain_report.txt").write_text("\n".join(lines) + "\n")
    _write_manifest(
        out_dir,
        "sample",
        cfg,
        overrides,
        [out_dir / "counts.csv", out_dir / "fit_report.txt"],
        [out_dir / "latent_draws.bin", out_dir / "trace_running_mean.csv", out_dir / "chain_report.txt"],
    )


def cmd_forecast(cfg: RunConfig, overrides: dict[str, str], plugin: bool) -> None:
    out_dir = cfg.output_dir()
    grid, axis, counts, volumes, field = _load_ingested(cfg, out_dir, "forecast")
    _require_manifest(out_dir, "fit", cfg, "forecast")
    params = _load_fit(out_dir)
    latent = None
    if not plugin:
        _require_manifest(out_dir, "sample", cfg, "forecast (or pass --plugin)")
        draws, acc, step = read_draws(out_dir / "latent_draws.bin")
        latent = LatentField(
            draws=draws,
            acceptance_rate=acc,
            trace_means=np.zeros((draws.shape[1], 1)),
            step_size=step,
            burn_in=cfg.get_int("chain.burn_in", 5000),
            thinning=cfg.get_int("chain.thinning", 1),
        )
    horizon = cfg.get_int_list("forecast.horizon_years")
    scenario = None
    if cfg.has("forecast.scenario_path"):
        scenario, _ = read_cube(cfg.get_path("forecast.scenario_path"), grid)
    spec = ForecastSpec(
        horizon_years=tuple(horizon),
        n_samples=cfg.get_int("forecast.n_samples", 100),
        production_scenario=scenario,
    )
    result = predict_intensity(spec, params, field, volumes, grid, axis, latent)
    idx = grid.cell_indices
    with open(out_dir / "forecast.csv", "w") as fh:
        fh.write(f"# config_hash={cfg.file_hash}\n# seed={cfg.seed()}\n")
        fh.write("cell_ix,cell_iy,year,mean_lambda,q05,q95,p_event\n")
        for j, year in enumerate(result.years):
            for c in range(grid.n_cells):
                fh.write(
                    f"{idx[c, 0]},{idx[c, 1]},{year},{_r(result.mean[j, c])},"
                    f"{_r(result.q05[j, c])},{_r(result.q95[j, c])},{_r(result.p_event[j, c])}\n"
                )
    outputs = [out_dir / "forecast.csv"]
    if cfg.get_bool("forecast.write_matrices", False):
        for j, year in enumerate(result.years):
            path = out_dir / f"forecast_matrix_{year}.txt"
            write_matrix(path, grid, result.mean[j])
            outputs.append(path)
    inputs = [out_dir / "fit_report.txt"]
    if not plugin:
        inputs.append(out_dir / "latent_draws.bin")
    _write_manifest(out_dir, "forecast", cfg, {**overrides, "plugin": str(plugin)}, inputs, outputs)


def cmd_simulate(cfg: RunConfig, overrides: dict[str, str]) -> None:
    out_dir = cfg.output_dir()
    grid, axis, counts, volumes, field = _load_ingested(cfg, out_dir, "simulate")
    params = ModelParams(
        cfg.get_float("simulate.theta1"),
        cfg.get_float("simulate.theta2"),
        cfg.get_float("simulate.alpha"),
        cfg.get_float("simulate.beta"),
    )
    sim_counts, e_true = simulate(params, field, volumes, grid, axis, seed=cfg.seed())
    meta = _meta(cfg)
    write_cube(out_dir / "sim_counts.csv", grid, sim_counts, "n_events", meta)
    write_cube(out_dir / "sim_latent_true.csv", grid, e_true, "e_barA", meta)
    _write_manifest(
        out_dir,
        "simulate",
        cfg,
        overrides,
        [out_dir / "volumes.csv", out_dir / "pressure_mean.csv"],
        [out_dir / "sim_counts.csv", out_dir / "sim_latent_true.csv"],
    )


def _load_history_problem(cfg: RunConfig) -> HistoryMatchProblem:
    pvt = GasPVT.from_csv(
        cfg.get_path("hm.pvt_path"), cfg.get_float("hm.c1"), cfg.get_float("hm.c2")
    )
    regions = []
    for name in cfg.get_str_list("hm.regions"):
        offtake = np.loadtxt(cfg.get_path(f"hm.region.{name}.offtake_path"), delimiter=",", skiprows=1)
        observed = np.loadtxt(cfg.get_path(f"hm.region.{name}.pressure_path"), delimiter=",", skiprows=1)
        regions.append(
            RegionObservations(
                name=name,
                temperature=cfg.get_float(f"hm.region.{name}.temperature"),
                offtake=OfftakeSeries(offtake[:, 0], offtake[:, 1], offtake[:, 2]),
                observed_pressure=observed[:, 1],
            )
        )
    sub = None
    if cfg.has("hm.subsidence.blocks_path"):
        raw = np.loadtxt(cfg.get_path("hm.subsidence.blocks_path"), delimiter=",", skiprows=1)
        raw = np.atleast_2d(raw)
        blocks = tuple(CompactionBlock(*row) for row in raw)
        obs = np.atleast_2d(
            np.loadtxt(cfg.get_path("hm.subsidence.observations_path"), delimiter=",", skiprows=1)
        )
        sub = SubsidenceObservations(points=obs[:, :2], observed_uz=obs[:, 2], blocks=blocks)
    return HistoryMatchProblem(
        pvt=pvt, regions=tuple(regions), subsidence_obs=sub, nu=cfg.get_float("hm.nu", 0.25)
    )


def cmd_history_match(cfg: RunConfig, overrides: dict[str, str], fix: list[str], threads: int) -> None:
    out_dir = cfg.output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    problem = _load_history_problem(cfg)
    ranges = {
        key.split(".", 2)[2]: cfg.get_float_pair(key)
        for key in cfg.values
        if key.startswith("hm.range.")
    }
    fixed = _parse_fix(fix)
    result = history_match(
        problem,
        ranges,
        n_simulations=cfg.get_int("hm.n_simulations", 200),
        seed=cfg.seed(),
        fixed=fixed,
        threads=threads,
    )
    param_names = sorted(ranges)
    region_names = sorted(result.models[0].rmse_regions) if result.models else []
    with open(out_dir / "ranked_models.csv", "w") as fh:
        fh.write(f"# config_hash={cfg.file_hash}\n# seed={cfg.seed()}\n")
        fh.write(
            "rank,rmse_global,"
            + ",".join(f"rmse_{r}" for r in region_names)
            + ","
            + ",".join(param_names)
            + "\n"
        )
        for model in result.models:
            fh.write(
                f"{model.rank},{_r(model.rmse_global)},"
                + ",".join(_r(model.rmse_regions.get(r, float("inf"))) for r in region_names)
                + ","
                + ",".join(_r(model.params[p]) for p in param_names)
                + "\n"
            )
    with open(out_dir / "rmse_correlations.csv", "w") as fh:
        fh.write(f"# config_hash={cfg.file_hash}\n")
        fh.write("parameter,region,pearson_r\n")
        for p in param_names:
            for region, r in sorted(result.correlations[p].items()):
                fh.write(f"{p},{region},{_r(r)}\n")
    _write_manifest(
        out_dir,
        "history-match",
        cfg,
        {**overrides, **{f"fix.{k}": repr(v) for k, v in fixed.items()}},
        [cfg.get_path("hm.pvt_path")],
        [out_dir / "ranked_models.csv", out_dir / "rmse_correlations.csv"],
    )


def cmd_report(cfg: RunConfig, overrides: dict[str, str]) -> None:
    out_dir = cfg.output_dir()
    lines = [f"# config_hash={cfg.file_hash}"]
    for name in ("ingest_report.txt", "fit_report.txt", "chain_report.txt"):
        path = out_dir / name
        if path.exists():
            lines.append(f"--- {name} ---")
            lines.append(path.read_text().rstrip())
    manifests = sorted(out_dir.glob("manifest_*.json"))
    lines.append("--- manifests ---")
    for path in manifests:
        manifest = json.loads(path.read_text())
        chained = "ok" if manifest.get("config_hash") == cfg.file_hash else "MIXED CONFIG"
        lines.append(f"{path.name}: {manifest['command']} [{chained}]")
    text = "\n".join(lines) + "\n"
    (out_dir / "report.txt").write_text(text)
    print(text, end="")


# --- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 on usage errors (input errors)
        raise InputError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coxrate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("ingest", "fit", "sample", "forecast", "simulate", "history-match", "report"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the run config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value (repeatable)")
        p.add_argument("--threads", type=int, default=None, help="worker thread cap")
        if name in ("fit", "history-match"):
            p.add_argument("--fix", action="append", default=[], metavar="NAME=VALUE",
                           help="pin a parameter (repeatable)")
        if name == "forecast":
            p.add_argument("--plugin", action="store_true",
                           help="forecast with the latent error fixed at zero (no sample step)")
    return parser


def run(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    cfg = RunConfig.load(args.config, args.set)
    overrides = dict(item.partition("=")[::2] for item in args.set)
    threads = args.threads if args.threads is not None else cfg.get_int("threads", 1)
    if threads < 1:
        raise InputError(f"--threads must be >= 1, got {threads}")
    if args.command == "ingest":
        cmd_ingest(cfg, overrides)
    elif args.command == "fit":
        cmd_fit(cfg, overrides, args.fix)
    elif args.command == "sample":
        cmd_sample(cfg, overrides, threads)
    elif args.command == "forecast":
        cmd_forecast(cfg, overrides, args.plugin)
    elif args.command == "simulate":
        cmd_simulate(cfg, overrides)
    elif args.command == "history-match":
        cmd_history_match(cfg, overrides, args.fix, threads)
    elif args.command == "report":
        cmd_report(cfg, overrides)


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(argv)
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
