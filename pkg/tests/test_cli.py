import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from risplan.arrays import SectorArray, get_system, network_to_dict
from risplan.calibration import save_measurements
from risplan.cli import (EXIT_CONFIG, EXIT_DATA, EXIT_MISSING, EXIT_OK, EXIT_USAGE, load_config, run_command)
from risplan.raytrace import TraceConfig
from risplan.scene import save_scene
from risplan.synthetic import (blocked_courtyard, calibration_measurements, calibration_network, calibration_town,
                               canyon)

BASE_CFG = """[scene]
path = scene.json
[network]
path = net.json
system = 4G
[trace]
ray_count = 5000
[grid]
tile_size = 20
[output]
dir = out
"""


def _write_case(tmp_path, scene, network, cfg=BASE_CFG):
    save_scene(scene, tmp_path / "scene.json")
    (tmp_path / "net.json").write_text(json.dumps(network_to_dict(network)))
    (tmp_path / "run.cfg").write_text(cfg)
    return tmp_path / "run.cfg"


@pytest.fixture
def canyon_case(tmp_path):
    net = [SectorArray(np.array([0.0, -50.0, 10.0]), 0.0, 0.0, 2, 2)]
    return _write_case(tmp_path, canyon(), net)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_coverage_smoke(canyon_case):
    assert run_command(["coverage", "--config", str(canyon_case)]) == EXIT_OK
    out = canyon_case.parent / "out"
    rows = _rows(out / "coverage.csv")
    assert len(rows) == 1 + 10 * 10
    cdf = _rows(out / "coverage_cdf.csv")
    vals = [float(r[1]) for r in cdf[1:]]
    assert vals == sorted(vals) and vals[-1] == pytest.approx(1.0)


def test_manifest_lists_written_files(canyon_case):
    assert run_command(["coverage", "--config", str(canyon_case)]) == EXIT_OK
    out = canyon_case.parent / "out"
    man = json.loads((out / "run_manifest.json").read_text())
    assert man["command"] == "coverage"
    assert {f["path"] for f in man["files"]} == {"coverage.csv", "coverage_cdf.csv"}
    for f in man["files"]:
        assert f["sha256"] == hashlib.sha256((out / f["path"]).read_bytes()).hexdigest()
    assert man["config"]["trace"]["ray_count"] == 5000
    assert "numpy" in man["versions"]


def test_cluster_threshold_flag(canyon_case):
    assert run_command(["cluster", "--config", str(canyon_case), "--threshold", "30"]) == EXIT_OK
    out = canyon_case.parent / "out"
    assert (out / "clusters.csv").exists() and (out / "cluster_members.csv").exists()


def test_place_without_deployments_writes_empty_list(tmp_path):
    net = [SectorArray(np.array([0.0, -50.0, 10.0]), 0.0, 0.0, 2, 2)]
    cfg = _write_case(tmp_path, canyon(), net, BASE_CFG + "[pipeline]\nthreshold_dbm = -200\n")
    assert run_command(["place", "--config", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    assert json.loads((out / "deployments.json").read_text()) == []
    rep = json.loads((out / "pipeline_report.json").read_text())
    # only tiles with no path at all (-inf) are left in outage, and no surface can reach them
    rows = _rows(out / "coverage.csv")
    col = rows[0].index("rsrp_dbm")
    assert rep["outage_tiles"] == sum(r[col] == "-inf" for r in rows[1:])
    assert rep["deployments"] == []


def test_sweep_aperture_rows(tmp_path):
    scene, net = blocked_courtyard()
    cfg = _write_case(tmp_path, scene, net, BASE_CFG.replace("tile_size = 20", "tile_size = 10"))
    assert run_command(["sweep-aperture", "--config", str(cfg), "--sizes", "2,6"]) == EXIT_OK
    rows = _rows(tmp_path / "out" / "aperture_sweep.csv")
    assert rows[0] == ["aperture_m", "recovered_fraction"]
    assert [float(r[0]) for r in rows[1:]] == [2.0, 6.0]
    assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])


def test_calibrate_and_validate(tmp_path):
    system = get_system("5G")
    scene = calibration_town()
    trace = TraceConfig(ray_count=20_000, diffuse=True, scatter_ray_count=10_000)
    save_measurements(calibration_measurements(system, trace), tmp_path / "meas.csv", scene.geo_origin)
    cfg = BASE_CFG.replace("4G", "5G").replace(
        "ray_count = 5000", "ray_count = 20000\ndiffuse = true\nscatter_ray_count = 10000") + \
        "[calibration]\nmeasurements_path = meas.csv\niterations = 30\nseed = 0\n"
    cfg = _write_case(tmp_path, scene, calibration_network(system), cfg)
    assert run_command(["calibrate", "--config", str(cfg)]) == EXIT_OK
    out = tmp_path / "out"
    rep = json.loads((out / "calibration_report.json").read_text())
    assert rep["exclusions"] == [{"region": "5_10", "reason": "initial-gap-over-25dB"}]
    assert rep["mean_abs_region_error"]["final"] < rep["mean_abs_region_error"]["initial"]
    assert run_command(["validate", "--config", str(cfg), "--scene", str(out / "calibrated_scene.json"),
                        "--exclude", "5_10"]) == EXIT_OK
    val = json.loads((out / "validation_report.json").read_text())
    assert val["excluded_regions"] == ["5_10"]
    assert (out / "validation_cdf_measured.csv").exists()


def test_unknown_command_is_usage_error(canyon_case):
    assert run_command(["teleport", "--config", str(canyon_case)]) == EXIT_USAGE
    assert run_command(["coverage"]) == EXIT_USAGE


def test_bad_sizes_is_usage_error(canyon_case):
    assert run_command(["sweep-aperture", "--config", str(canyon_case), "--sizes", "2,x"]) == EXIT_USAGE


def test_missing_config_file(tmp_path):
    assert run_command(["coverage", "--config", str(tmp_path / "nope.cfg")]) == EXIT_CONFIG


def test_invalid_config_value(canyon_case):
    canyon_case.write_text(BASE_CFG.replace("ray_count = 5000", "ray_count = lots"))
    assert run_command(["coverage", "--config", str(canyon_case)]) == EXIT_CONFIG


def test_tile_samples_must_be_one_or_five(canyon_case):
    canyon_case.write_text(BASE_CFG.replace("[grid]", "tile_samples = 3\n[grid]"))
    assert run_command(["coverage", "--config", str(canyon_case)]) == EXIT_CONFIG


def test_missing_scene_names_the_path(canyon_case, capsys):
    (canyon_case.parent / "scene.json").unlink()
    assert run_command(["coverage", "--config", str(canyon_case)]) == EXIT_MISSING
    assert "scene.json" in capsys.readouterr().err


def test_broken_scene_is_data_error(canyon_case):
    (canyon_case.parent / "scene.json").write_text("{not json")
    assert run_command(["coverage", "--config", str(canyon_case)]) == EXIT_DATA


def test_config_paths_relative_to_file(canyon_case):
    cfg = load_config(canyon_case)
    assert cfg.scene_path == canyon_case.parent / "scene.json"
    assert cfg.output_dir == canyon_case.parent / "out"
    assert cfg.trace.ray_count == 5000 and cfg.tile_size == 20.0


def test_module_entry_point(canyon_case):
    proc = subprocess.run([sys.executable, "-m", "risplan", "coverage", "--config", str(canyon_case)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
