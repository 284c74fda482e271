"""Coverage, outage clustering and RIS placement on the blocked-courtyard scene."""
import time

from risplan.arrays import get_system
from risplan.coverage import CoverageEngine
from risplan.placement import Planner, topn_curve
from risplan.raytrace import TraceConfig
from risplan.scene import TileGrid
from risplan.synthetic import blocked_courtyard


def main():
    t0 = time.perf_counter()
    scene, network = blocked_courtyard()
    eng = CoverageEngine(scene, network, get_system("4G"), TraceConfig(ray_count=100_000))
    cmap = eng.coverage_map(TileGrid.covering(scene.bounds))
    planner = Planner(eng, cmap)
    res = planner.run()
    print(f"outage tiles: {len(res.outage_tiles)} of {cmap.rsrp_dbm.size}")
    for stage in ("placement", "reclustering", "reassociation"):
        print(f"  recovered after {stage:>13}: {res.fraction(stage):.3f}")
    for d in res.deployments:
        c = d.unit.center
        print(f"  RIS {d.ris_id}: center ({c[0]:.1f}, {c[1]:.1f}, {c[2]:.1f}) m, cluster {d.target_cluster_id}, "
              f"beam {d.serving_beam}")
    ext = planner.extend_nearby(res.deployments, res.outage_tiles, res.stage_recovered["reassociation"])
    print(f"with nearby extension: {len(ext) / len(res.outage_tiles):.3f}")
    print("top-N curve:", [round(f, 3) for _, f in topn_curve(res)])
    print(f"{time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
