"""Command-line entry point: ``risplan <command> --config run.cfg``.

The config file is INI-style (``key = value`` under ``[section]`` headers).
Relative paths resolve against the config file's directory.  Exit codes:

    0  success
    2  usage error (unknown command or bad flags)
    3  unreadable or invalid config
    4  missing input file
    5  invalid scene, network or measurement data
    6  a pipeline invariant failed
    7  output could not be written
"""
from __future__ import annotations

import os

_threads = os.environ.get("RISPLAN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import configparser  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import platform  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from dataclasses import asdict, dataclass, field, replace  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402
import scipy  # noqa: E402

from . import __version__  # noqa: E402
from .arrays import get_system, load_network  # noqa: E402
from .calibration import Calibrator, load_measurements, validation_metrics  # noqa: E402
from .coverage import CoverageEngine, rsrp_cdf  # noqa: E402
from .placement import PipelineConfig, Planner, RisSpec, cluster_outage, topn_curve  # noqa: E402
from .raytrace import TraceConfig  # noqa: E402
from .reports import (pipeline_report, write_cdf_csv, write_clusters, write_coverage_csv,  # noqa: E402
                      write_deployments, write_json, write_rows)
from .scene import SceneError, TileGrid, load_scene, save_scene  # noqa: E402

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_DATA, EXIT_INVARIANT, EXIT_OUTPUT = 0, 2, 3, 4, 5, 6, 7
COMMANDS = ("coverage", "cluster", "place", "calibrate", "validate", "sweep-density", "sweep-aperture")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class RunConfig:
    scene_path: Path
    network_path: Path
    system: str = "5G"
    trace: TraceConfig = field(default_factory=TraceConfig)
    tile_size: float = 2.0
    ue_height: float = 1.5
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    measurements_path: Path | None = None
    iterations: int = 600
    lr: float = 0.05
    seed: int = 0
    output_dir: Path = Path("out")
    source: Path | None = None

    def echo(self) -> dict:
        d = {
            "scene_path": str(self.scene_path), "network_path": str(self.network_path), "system": self.system,
            "trace": asdict(self.trace), "grid": {"tile_size": self.tile_size, "ue_height": self.ue_height},
            "pipeline": asdict(self.pipeline),
            "calibration": {"measurements_path": None if self.measurements_path is None else str(self.measurements_path),
                            "iterations": self.iterations, "lr": self.lr, "seed": self.seed},
            "output_dir": str(self.output_dir),
        }
        return d


def _get(cp, section, key, conv, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key).strip().strip('"').strip("'")
    try:
        return conv(raw)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config [{section}] {key} = {raw!r}: {exc}") from None


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def load_config(path) -> RunConfig:
    path = Path(path)
    cp = configparser.ConfigParser()
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"config file not found: {path}") from None
    except OSError as exc:
        raise CliError(EXIT_CONFIG, f"cannot read config {path}: {exc}") from None
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise CliError(EXIT_CONFIG, f"malformed config {path}: {str(exc).splitlines()[0]}") from None
    base = path.parent

    def p(section, key, required=True):
        v = _get(cp, section, key, str, None)
        if v is None:
            if required:
                raise CliError(EXIT_CONFIG, f"config is missing [{section}] {key}")
            return None
        q = Path(v)
        return q if q.is_absolute() else base / q

    t = TraceConfig()
    try:
        trace = TraceConfig(
            ray_count=_get(cp, "trace", "ray_count", lambda s: int(float(s)), t.ray_count),
            max_bounces=_get(cp, "trace", "max_bounces", int, t.max_bounces),
            capture_scale=_get(cp, "trace", "capture_scale", float, t.capture_scale),
            scatter_ray_count=_get(cp, "trace", "scatter_ray_count", lambda s: int(float(s)), None),
            diffuse=_get(cp, "trace", "diffuse", _bool, False),
            tile_samples=_get(cp, "trace", "tile_samples", int, 1),
        )
        pd = PipelineConfig()
        size = _get(cp, "pipeline", "ris_size", float, None)
        ris = RisSpec(
            width=_get(cp, "pipeline", "ris_width", float, size or pd.ris.width),
            height=_get(cp, "pipeline", "ris_height", float, size or pd.ris.height),
            eta=_get(cp, "pipeline", "eta", float, pd.ris.eta),
            r=_get(cp, "pipeline", "r", float, pd.ris.r),
        )
        pipe = PipelineConfig(
            threshold_dbm=_get(cp, "pipeline", "threshold_dbm", float, pd.threshold_dbm),
            t1=_get(cp, "pipeline", "t1", float, pd.t1),
            t2=_get(cp, "pipeline", "t2", float, pd.t2),
            effective_fraction=_get(cp, "pipeline", "effective_fraction", float, pd.effective_fraction),
            strategy=_get(cp, "pipeline", "strategy", str, pd.strategy),
            nearby_range_m=_get(cp, "pipeline", "nearby_range_m", float, pd.nearby_range_m),
            max_candidates=_get(cp, "pipeline", "max_candidates", int, pd.max_candidates),
            ris=ris,
        )
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"invalid config value: {exc}") from None
    if trace.tile_samples not in (1, 5):
        raise CliError(EXIT_CONFIG, "config [trace] tile_samples must be 1 or 5")
    out = p("output", "dir", required=False) or base / "out"
    return RunConfig(
        scene_path=p("scene", "path"),
        network_path=p("network", "path"),
        system=_get(cp, "network", "system", str, "5G"),
        trace=trace,
        tile_size=_get(cp, "grid", "tile_size", float, 2.0),
        ue_height=_get(cp, "grid", "ue_height", float, 1.5),
        pipeline=pipe,
        measurements_path=p("calibration", "measurements_path", required=False),
        iterations=_get(cp, "calibration", "iterations", int, 600),
        lr=_get(cp, "calibration", "lr", float, 0.05),
        seed=_get(cp, "calibration", "seed", int, 0),
        output_dir=out,
        source=path,
    )


# ----------------------------------------------------------------------
# stage helpers

class Run:
    def __init__(self, cfg: RunConfig, scene_override: Path | None = None):
        self.cfg = cfg
        self.files: list[Path] = []
        try:
            self.system = get_system(cfg.system)
        except ValueError as exc:
            raise CliError(EXIT_CONFIG, str(exc)) from None
        scene_path = scene_override or cfg.scene_path
        self.scene = _load(scene_path, load_scene)
        self.network = _load(cfg.network_path, lambda q: load_network(q, self.system))
        self.trace = replace(cfg.trace, frequency=self.system.frequency)
        self.grid = TileGrid.covering(self.scene.bounds, cfg.tile_size, cfg.ue_height)
        try:
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CliError(EXIT_OUTPUT, f"cannot create output directory {cfg.output_dir}: {exc}") from None
        self._engine = None
        self._cmap = None

    def out(self, name: str) -> Path:
        return self.cfg.output_dir / name

    def emit(self, writer, *args):
        try:
            res = writer(*args)
        except OSError as exc:
            raise CliError(EXIT_OUTPUT, f"cannot write output: {exc}") from None
        for r in res if isinstance(res, tuple) else (res,):
            self.files.append(Path(r))
        return res

    def coverage(self):
        if self._cmap is None:
            self._engine = CoverageEngine(self.scene, self.network, self.system, self.trace)
            self._cmap = self._engine.coverage_map(self.grid, threshold_dbm=self.cfg.pipeline.threshold_dbm)
        return self._engine, self._cmap

    def pipeline(self, pcfg: PipelineConfig | None = None):
        eng, cmap = self.coverage()
        planner = Planner(eng, cmap, pcfg or self.cfg.pipeline)
        result = planner.run()
        stages = [set(result.stage_recovered[k]) for k in ("placement", "reclustering", "reassociation")]
        if not (stages[0] <= stages[1] <= stages[2]):
            raise CliError(EXIT_INVARIANT, "pipeline stages are not nested")
        curve = topn_curve(result)
        if any(b[1] < a[1] for a, b in zip(curve, curve[1:])):
            raise CliError(EXIT_INVARIANT, "top-N recovery curve decreased")
        return planner, result, curve


def _load(path: Path, loader):
    try:
        return loader(path)
    except FileNotFoundError:
        raise CliError(EXIT_MISSING, f"input file not found: {path}") from None
    except (SceneError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise CliError(EXIT_DATA, f"invalid input {path}: {exc}") from None


def cmd_coverage(run: Run, args):
    _, cmap = run.coverage()
    run.emit(write_coverage_csv, cmap, run.out("coverage.csv"))
    run.emit(write_cdf_csv, rsrp_cdf(cmap), run.out("coverage_cdf.csv"))


def cmd_cluster(run: Run, args):
    eng, cmap = run.coverage()
    tiles = [int(i) for i in np.flatnonzero(cmap.outage.ravel())]
    clusters = cluster_outage(run.grid.centers(), tiles, args.threshold or run.cfg.pipeline.t1)
    cmd_coverage(run, args)
    run.emit(write_clusters, clusters, run.grid, run.out("clusters.csv"), run.out("cluster_members.csv"))


def cmd_place(run: Run, args):
    cmd_coverage(run, args)
    planner, result, curve = run.pipeline()
    extended = planner.extend_nearby(result.deployments, result.outage_tiles,
                                     result.stage_recovered["reassociation"])
    if len(extended) < len(result.stage_recovered["reassociation"]):
        raise CliError(EXIT_INVARIANT, "nearby extension reduced recovery")
    run.emit(write_clusters, result.all_clusters, run.grid, run.out("clusters.csv"), run.out("cluster_members.csv"))
    run.emit(write_deployments, result.deployments, run.out("deployments.json"))
    run.emit(write_json, pipeline_report(result, curve, extended), run.out("pipeline_report.json"))
    run.emit(write_rows, run.out("topn_curve.csv"), ["n", "recovered_fraction"], curve)


def cmd_sweep_density(run: Run, args):
    _, result, curve = run.pipeline()
    run.emit(write_rows, run.out("density_sweep.csv"), ["n", "recovered_fraction"], curve)


def cmd_sweep_aperture(run: Run, args):
    try:
        sizes = [float(s) for s in args.sizes.split(",") if s.strip()]
    except ValueError:
        raise CliError(EXIT_USAGE, f"--sizes must be a comma-separated list of numbers, got {args.sizes!r}") from None
    if not sizes or any(s <= 0 for s in sizes):
        raise CliError(EXIT_USAGE, "--sizes needs positive aperture sizes")
    rows = []
    for s in sizes:
        pc = replace(run.cfg.pipeline, ris=replace(run.cfg.pipeline.ris, width=s, height=s))
        _, result, _ = run.pipeline(pc)
        rows.append([s, result.fraction("reassociation")])
    run.emit(write_rows, run.out("aperture_sweep.csv"), ["aperture_m", "recovered_fraction"], rows)


def _samples(run: Run):
    if run.cfg.measurements_path is None:
        raise CliError(EXIT_CONFIG, "config is missing [calibration] measurements_path")
    return _load(run.cfg.measurements_path, lambda q: load_measurements(q, run.scene.geo_origin))


def cmd_calibrate(run: Run, args):
    samples = _samples(run)
    cal = Calibrator(run.scene, run.network, run.system, run.trace, samples)
    res = cal.run(run.cfg.iterations, run.cfg.seed, run.cfg.lr)
    try:
        save_scene(res.scene, run.out("calibrated_scene.json"))
    except OSError as exc:
        raise CliError(EXIT_OUTPUT, f"cannot write output: {exc}") from None
    run.files.append(run.out("calibrated_scene.json"))
    e0, e1 = res.region_errors("initial"), res.region_errors("final")
    report = {
        "loss": "squared dB difference of region averages",
        "gradient": "central finite differences, step 1e-2 of each parameter range",
        "seed": run.cfg.seed, "iterations_per_cell": run.cfg.iterations, "lr": run.cfg.lr,
        "cells": res.cells,
        "parameters": {g: {"eps_r": v[0], "sigma": v[1], "scatter_s": v[2]}
                       for g, v in zip(res.params.groups, res.params.values)},
        "regions": [{"region": r.key, "samples": len(r.samples), "measured_dbm": r.avg_measured_dbm,
                     "initial_sim_dbm": res.initial_sim[r.key], "final_sim_dbm": res.final_sim[r.key],
                     "groups": r.groups, "cell": r.cell, "excluded": r.excluded, "reason": r.reason}
                    for r in res.regions],
        "exclusions": res.exclusion_log(),
        "mean_abs_region_error": {"initial": float(np.mean(np.abs(e0))) if len(e0) else None,
                                  "final": float(np.mean(np.abs(e1))) if len(e1) else None},
        "warnings": res.warnings,
    }
    run.emit(write_json, report, run.out("calibration_report.json"))


def cmd_validate(run: Run, args):
    samples = _samples(run)
    from .calibration import build_target_regions
    regions = build_target_regions(samples, run.scene)
    excluded = set(args.exclude.split(",")) if args.exclude else set()
    for r in regions:
        if r.key in excluded:
            r.excluded, r.reason = True, "excluded-by-request"
    rep = validation_metrics(run.scene, run.network, run.system, samples, run.trace, regions, run.cfg.ue_height)
    run.emit(write_json, {k: rep[k] for k in ("sample_stats", "region_stats", "non_finite_samples")} |
             {"excluded_regions": sorted(excluded)}, run.out("validation_report.json"))
    run.emit(write_rows, run.out("validation_scatter.csv"), ["region", "simulated_dbm", "measured_dbm"],
             ([p["region"], p["simulated_dbm"], p["measured_dbm"]] for p in rep["region_pairs"]))
    err = np.asarray(rep["sample_errors"])
    edges = np.arange(np.floor(err.min()) if len(err) else 0, (np.ceil(err.max()) if len(err) else 0) + 1.0, 1.0)
    counts = np.histogram(err, bins=edges)[0] if len(edges) > 1 else np.zeros(0, int)
    run.emit(write_rows, run.out("validation_error_hist.csv"), ["bin_lo_db", "bin_hi_db", "count"],
             ([float(a), float(b), int(c)] for a, b, c in zip(edges[:-1], edges[1:], counts)))
    run.emit(write_rows, run.out("validation_cdf_simulated.csv"), ["rsrp_dbm", "cdf"], rep["cdf_simulated"])
    run.emit(write_rows, run.out("validation_cdf_measured.csv"), ["rsrp_dbm", "cdf"], rep["cdf_measured"])


HANDLERS = {"coverage": cmd_coverage, "cluster": cmd_cluster, "place": cmd_place, "calibrate": cmd_calibrate,
            "validate": cmd_validate, "sweep-density": cmd_sweep_density, "sweep-aperture": cmd_sweep_aperture}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="risplan", description="Coverage analysis and RIS placement planning.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="{" + ",".join(COMMANDS) + "}")
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI-style run configuration")
        sp.add_argument("--output", help="override the output directory")
        if name == "cluster":
            sp.add_argument("--threshold", type=float, help="BIRCH threshold T in meters")
        if name == "sweep-aperture":
            sp.add_argument("--sizes", default="2,4,8", help="comma-separated aperture sides in meters")
        if name == "validate":
            sp.add_argument("--scene", help="scene to validate (e.g. a calibrated scene)")
            sp.add_argument("--exclude", help="comma-separated region keys to leave out")
    return ap


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_command(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    t0 = time.perf_counter()
    try:
        cfg = load_config(args.config)
        if args.output:
            cfg.output_dir = Path(args.output)
        scene_override = Path(args.scene) if getattr(args, "scene", None) else None
        run = Run(cfg, scene_override)
        HANDLERS[args.command](run, args)
        manifest = {
            "command": args.command,
            "argv": list(argv if argv is not None else sys.argv[1:]),
            "config": cfg.echo(),
            "seed": cfg.seed,
            "versions": {"risplan": __version__, "python": platform.python_version(), "numpy": np.__version__,
                         "scipy": scipy.__version__},
            "wall_time_s": round(time.perf_counter() - t0, 3),
            "files": [{"path": f.name, "sha256": _sha256(f)} for f in run.files],
        }
        try:
            write_json(manifest, cfg.output_dir / "run_manifest.json")
        except OSError as exc:
            raise CliError(EXIT_OUTPUT, f"cannot write manifest: {exc}") from None
    except CliError as exc:
        print(f"risplan: error: {exc}", file=sys.stderr)
        return exc.code
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
