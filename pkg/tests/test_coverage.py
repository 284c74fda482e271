import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from risplan.arrays import SectorArray, beam_gains, channel_vector, get_system
from risplan.coverage import CoverageEngine, CoverageMap, outage_set, rsrp, rsrp_cdf, tile_gain
from risplan.raytrace import C0, TraceConfig, trace_paths
from risplan.scene import Building, Scene, TileGrid
from risplan.synthetic import CONCRETE, GROUND, box, canyon, open_scene

SYS4 = get_system("4G")
SYS5 = get_system("5G")


def synthetic_map(values, threshold=-100.0):
    v = np.asarray(values, dtype=float).reshape(1, -1)
    grid = TileGrid((0.0, 0.0), 1, v.shape[1])
    z = np.zeros(v.shape, int)
    return CoverageMap(grid, SYS4, v, z, z, z, np.zeros(v.shape, bool), threshold)


def test_rsrp_examples():
    assert rsrp(1e-10, SYS4) == pytest.approx(-87.8)
    assert rsrp(0.0, SYS4) == -np.inf
    assert rsrp(1e-12, SYS5) == pytest.approx(-106.15)
    with pytest.raises(ValueError):
        rsrp(-1.0, SYS4)


def test_outage_examples():
    assert outage_set(synthetic_map([-90, -90, -90])) == []
    assert outage_set(synthetic_map([-90, -100.1, -100.0])) == [(0, 1)]
    m = synthetic_map([-np.inf, -95])
    assert m.outage[0, 0]


def test_outage_count_matches_cdf(rng):
    v = rng.uniform(-130, -60, 200)
    m = synthetic_map(v)
    cdf = rsrp_cdf(m)
    below = np.searchsorted(cdf.rsrp_dbm, -80.0, side="left")
    frac = cdf.fraction[below - 1] if below else 0.0
    assert len(outage_set(m, -80.0)) == round(frac * 200)


def test_cdf_examples():
    c = rsrp_cdf(synthetic_map([-90, -90, -90]))
    assert c.pairs() == [(-90.0, 1.0)]
    c = rsrp_cdf(synthetic_map([-90, -80, -90, -80]))
    assert c.pairs() == [(-90.0, 0.5), (-80.0, 1.0)]
    c = rsrp_cdf(synthetic_map([-np.inf, -80, -90, -np.inf]))
    assert c.outage_inf_fraction == 0.5
    assert c.pairs() == [(-90.0, 0.5), (-80.0, 1.0)]


@given(st.lists(st.floats(-150, -40), min_size=1, max_size=60))
def test_cdf_monotone_to_one(vals):
    c = rsrp_cdf(synthetic_map(vals))
    assert np.all(np.diff(c.rsrp_dbm) > 0)
    assert np.all(np.diff(c.fraction) > 0)
    assert c.fraction[-1] == pytest.approx(1.0)


@given(st.lists(st.floats(-150, -40), min_size=1, max_size=60), st.floats(-140, -50), st.floats(0, 30))
def test_outage_nested_in_threshold(vals, t2, delta):
    m = synthetic_map(vals)
    assert set(outage_set(m, t2)) <= set(outage_set(m, t2 + delta))


def boresight_setup(d=100.0, system=SYS5):
    s = SectorArray(np.array([0.0, 0.0, 10.0]), 0.0, 0.0, system.m_h, system.m_v)
    grid = TileGrid((d - 1.0, -1.0), 1, 1, ue_height=10.0)
    return s, grid


def test_tile_gain_free_space_boresight():
    s, grid = boresight_setup()
    cfg = TraceConfig(frequency=SYS5.frequency)
    lam = C0 / SYS5.frequency
    scene = Scene([], {"g": GROUND}, ((-10, -10), (200, 10)), "g")
    # the ground bounce interferes, so compare the LoS part alone
    paths = [p for p in trace_paths(scene, s.position, grid.center(0, 0), cfg) if p.bounces == 0]
    g = beam_gains(channel_vector(paths, s), s)
    expected = (lam / (4 * np.pi * 100.0)) ** 2 * 32 * 10 ** 0.8
    assert g[2 * 8 + 4] == pytest.approx(expected, rel=1e-9)
    assert int(np.argmax(g)) == 2 * 8 + 4
    full = tile_gain(scene, s, (2, 4), (0, 0), cfg, grid)
    assert full > 0


def test_tile_gain_enclosed_tile_is_zero():
    b = Building("blk", box(90, 110, -10, 10), 20.0, "concrete")
    scene = Scene([b], {"concrete": CONCRETE, "ground": GROUND}, ((-10, -20), (200, 20)), "ground")
    s, grid = boresight_setup()
    assert tile_gain(scene, s, (2, 4), (0, 0), TraceConfig(frequency=SYS5.frequency), grid) == 0.0


def test_tile_gain_five_point_smooth():
    s, _ = boresight_setup()
    grid = TileGrid((199.0, -1.0), 1, 1, ue_height=10.0)
    scene = open_scene(400)
    cfg = TraceConfig(frequency=SYS5.frequency, max_bounces=1, ray_count=20_000)
    g1 = tile_gain(scene, s, (2, 4), (0, 0), cfg, grid, samples=1)
    g5 = tile_gain(scene, s, (2, 4), (0, 0), cfg, grid, samples=5)
    assert abs(10 * np.log10(g5 / g1)) < 0.2


def test_best_server_scan_and_tie_break():
    scene = open_scene(300)
    a = SectorArray(np.array([0.0, 0.0, 10.0]), 0.0, 0.0, 2, 2, bs=0)
    b = SectorArray(np.array([0.0, 0.0, 10.0]), 0.0, 0.0, 2, 2, bs=1)
    grid = TileGrid((99.0, -1.0), 1, 1, ue_height=10.0)
    cfg = TraceConfig(ray_count=20_000)
    eng = CoverageEngine(scene, [b, a], SYS4, cfg)
    m = eng.coverage_map(grid)
    assert m.bs[0, 0] == 0
    H = eng.channels(grid.centers())
    assert m.beam[0, 0] == int(np.argmax(beam_gains(H[0][0], a)))
    m2 = CoverageEngine(scene, [a, b], SYS4, cfg).coverage_map(grid)
    assert np.array_equal(m.rsrp_dbm, m2.rsrp_dbm) and np.array_equal(m.bs, m2.bs)


def test_blocked_tile_is_minus_inf():
    # a closed courtyard with no opening toward the base station
    walls = [Building(f"w{i}", fp, 40.0, "concrete") for i, fp in
             enumerate([box(50, 70, 50, 52), box(50, 70, 68, 70), box(50, 52, 52, 68), box(68, 70, 52, 68)])]
    scene = Scene(walls, {"concrete": CONCRETE, "ground": GROUND}, ((-10, -10), (100, 100)), "ground")
    s = SectorArray(np.array([0.0, 0.0, 10.0]), 45.0, 0.0, 2, 2)
    grid = TileGrid((59.0, 59.0), 1, 1)
    m = CoverageEngine(scene, [s], SYS4, TraceConfig(ray_count=20_000)).coverage_map(grid)
    assert m.rsrp_dbm[0, 0] == -np.inf and m.outage[0, 0]


def test_indoor_tiles_excluded():
    scene = canyon()
    s = SectorArray(np.array([0.0, -95.0, 12.0]), 90.0, 0.0, 2, 2)
    grid = TileGrid.covering(scene.bounds, 10.0)
    m = CoverageEngine(scene, [s], SYS4, TraceConfig(ray_count=20_000)).coverage_map(grid)
    assert np.all(np.isnan(m.rsrp_dbm[m.indoor]))
    assert not np.any(m.outage[m.indoor])
    assert np.all(~np.isnan(m.rsrp_dbm[~m.indoor]))
    rec = m.record(0, 0)
    assert rec.in_outage == bool(rec.rsrp_dbm < -100)


def test_permutation_invariance_canyon():
    scene = canyon()
    net = [SectorArray(np.array([0.0, -95.0, 12.0]), b, 0.0, 2, 2, bs=0, sector=i)
           for i, b in enumerate((30.0, 90.0, 150.0))]
    grid = TileGrid.covering(scene.bounds, 10.0)
    cfg = TraceConfig(ray_count=20_000)
    m1 = CoverageEngine(scene, net, SYS4, cfg).coverage_map(grid)
    m2 = CoverageEngine(scene, net[::-1], SYS4, cfg).coverage_map(grid)
    for f in ("rsrp_dbm", "bs", "sector", "beam"):
        assert np.array_equal(getattr(m1, f), getattr(m2, f), equal_nan=f == "rsrp_dbm")


def test_extra_path_never_lowers_best_server():
    scene = canyon()
    net = [SectorArray(np.array([0.0, -95.0, 12.0]), 90.0, 0.0, 2, 2)]
    eng = CoverageEngine(scene, net, SYS4, TraceConfig(ray_count=20_000))
    pts = TileGrid.covering(scene.bounds, 20.0).centers()
    pts = pts[~scene.inside_building(pts)]
    H = eng.channels(pts)
    base = eng.best_server(eng.gains(H))[0]
    rng = np.random.default_rng(3)
    extra = rng.normal(size=H[0].shape) + 1j * rng.normal(size=H[0].shape)
    # the surface term is co-phased per beam, which is what the planner evaluates
    w = eng.W[0]
    a, b = np.abs(H[0] @ w), np.abs(1e-6 * extra @ w)
    boosted = ((a + b) ** 2).max(axis=1)
    assert np.all(boosted >= base)
