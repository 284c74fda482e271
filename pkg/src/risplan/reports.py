"""CSV and JSON exports with stable field order and float formatting."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .clustering import Cluster
from .coverage import Cdf, CoverageMap
from .placement import PipelineResult, RisDeployment
from .scene import TileGrid


def fmt(x) -> str:
    """Round-trippable text for a float (``repr``), with inf/nan spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "-inf" if x < 0 else "inf"
    return repr(x)


def clean(obj):
    """JSON-safe copy: numpy scalars/arrays converted, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(obj, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(clean(obj), indent=2, sort_keys=False) + "\n")
    return path


def write_rows(path, header: list[str], rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])
    return path


def write_coverage_csv(cmap: CoverageMap, path) -> Path:
    g = cmap.grid
    out = cmap.outage

    def rows():
        for r in range(g.rows):
            for c in range(g.cols):
                x, y, _ = g.center(r, c)
                yield [r, c, float(x), float(y), float(cmap.rsrp_dbm[r, c]), int(cmap.bs[r, c]),
                       int(cmap.sector[r, c]), int(cmap.beam[r, c]), int(out[r, c])]

    return write_rows(path, ["row", "col", "x", "y", "rsrp_dbm", "bs", "sector", "beam", "outage"], rows())


def write_cdf_csv(cdf: Cdf, path) -> Path:
    return write_rows(path, ["rsrp_dbm", "cdf"], ([float(v), float(f)] for v, f in zip(cdf.rsrp_dbm, cdf.fraction)))


def write_clusters(clusters: list[Cluster], grid: TileGrid, path_clusters, path_members) -> tuple[Path, Path]:
    a = write_rows(path_clusters, ["cluster_id", "centroid_x", "centroid_y", "size"],
                   ([c.id, float(c.centroid[0]), float(c.centroid[1]), c.size] for c in clusters))
    members = []
    for c in clusters:
        for t in c.members:
            r, col = divmod(int(t), grid.cols)
            members.append((r, col, c.id))
    b = write_rows(path_members, ["tile_row", "tile_col", "cluster_id"], sorted(members))
    return a, b


def write_deployments(deps: list[RisDeployment], path) -> Path:
    return write_json([d.to_dict() for d in sorted(deps, key=lambda d: d.ris_id)], path)


def pipeline_report(result: PipelineResult, curve: list[tuple[int, float]], extended: list[int] | None = None,
                    grid: TileGrid | None = None) -> dict:
    n = len(result.outage_tiles)
    rep = {
        "outage_tiles": n,
        "stage_recovery": {k: (len(v) / n if n else 0.0) for k, v in result.stage_recovered.items()},
        "stage_recovered_tiles": {k: list(v) for k, v in result.stage_recovered.items()},
        "clusters": [o.to_dict() | {"size": c.size, "stage": "placement" if c in result.clusters else "reclustering"}
                     for c, o in zip(result.all_clusters, result.all_outcomes)],
        "reassociations": [{"tile": r.tile, "ris_id": r.ris_id, "bs": r.bs, "sector": r.sector, "beam": r.beam,
                            "rsrp_dbm": r.rsrp_dbm, "recovered": r.recovered} for r in result.reassociations],
        "deployments": [d.to_dict() for d in result.deployments],
        "topn_curve": [{"n": k, "recovered_fraction": f} for k, f in curve],
    }
    if extended is not None:
        rep["nearby_extension"] = {"recovered_fraction": len(extended) / n if n else 0.0,
                                   "recovered_tiles": list(extended)}
    return rep
