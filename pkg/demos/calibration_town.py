"""Material calibration against synthetic drive-test samples with a hidden ground truth."""
import numpy as np

from risplan.arrays import get_system
from risplan.calibration import calibrate_scene, validation_metrics
from risplan.raytrace import TraceConfig
from risplan.synthetic import CAL_TRUTH, calibration_measurements, calibration_network, calibration_town


def main():
    system = get_system("5G")
    cfg = TraceConfig(ray_count=100_000, diffuse=True, scatter_ray_count=30_000)
    net = calibration_network(system)
    samples = calibration_measurements(system, cfg)
    res = calibrate_scene(calibration_town(), net, system, samples, cfg, iterations_per_cell=600, seed=0)
    e0, e1 = res.region_errors("initial"), res.region_errors("final")
    print(f"regions: {len(res.regions)}, excluded: {res.exclusion_log()}")
    print(f"mean |region error| {np.mean(np.abs(e0)):.2f} -> {np.mean(np.abs(e1)):.3f} dB")
    truth = {"west": CAL_TRUTH["t_west"], "east": CAL_TRUTH["t_east"]}
    for g, v in zip(res.params.groups, res.params.values):
        t = truth[g]
        print(f"  {g}: fitted (eps {v[0]:.2f}, sigma {v[1]:.3f}, S {v[2]:.3f}), "
              f"truth (eps {t.eps_r}, sigma {t.sigma}, S {t.scatter_s})")
    m = validation_metrics(res.scene, net, system, samples, cfg, res.regions)
    st = m["sample_stats"]
    print(f"validation: mean {st['mean']:+.2f} dB, std {st['std']:.2f} dB over {st['count']} samples")


if __name__ == "__main__":
    main()
