"""Material calibration against measured RSRP.

Per building group the triple (eps_r, sigma, scatter_s) is fitted so the
simulated region-average RSRP matches measured averages over 10 m squares.
Gradients are central finite differences; updates use Adam followed by
projection onto the parameter box.  Geometry is traced once per region and
only the material-dependent amplitudes are recomputed per evaluation.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import sparse

from .arrays import SectorArray, SystemConfig, codebook
from .coverage import CoverageEngine, rsrp
from .raytrace import PathSet, TraceConfig, Tracer, free_space_factor, material_arrays
from .scene import Material, Scene, with_materials

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8
PARAM_LO = np.array([1.0, 0.0, 0.0])
PARAM_HI = np.array([20.0, 15.0, 1.0])
PARAM_INIT = np.array([5.0, 5.0, 0.5])
FREE_SPACE = PARAM_LO.copy()
MAX_REFLECT = PARAM_HI.copy()
# without traced diffuse paths S only removes specular power, so the strongest setting keeps it at 0
MAX_REFLECT_SPECULAR = np.array([PARAM_HI[0], PARAM_HI[1], 0.0])
GAP_LIMIT_DB = 25.0
EXTREME_LIMIT_DB = 12.0


# ----------------------------------------------------------------------
# measurements

@dataclass(frozen=True)
class MeasurementSample:
    x: float
    y: float
    rsrp_dbm: float
    outdoor: bool = True
    sinr_db: float = float("nan")


def latlon_to_local(lat, lon, origin) -> tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection about ``origin = (lat0, lon0)`` in degrees."""
    lat0, lon0 = origin
    x = EARTH_RADIUS_M * np.radians(np.asarray(lon) - lon0) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * np.radians(np.asarray(lat) - lat0)
    return x, y


def local_to_latlon(x, y, origin) -> tuple[np.ndarray, np.ndarray]:
    lat0, lon0 = origin
    lat = lat0 + np.degrees(np.asarray(y) / EARTH_RADIUS_M)
    lon = lon0 + np.degrees(np.asarray(x) / (EARTH_RADIUS_M * math.cos(math.radians(lat0))))
    return lat, lon


def _truthy(v: str) -> bool:
    return v.strip().lower() in ("1", "true", "yes", "y", "t")


def load_measurements(path, origin, keep_indoor: bool = False) -> list[MeasurementSample]:
    """Read ``lat,lon,rsrp_dbm,sinr_db,indoor`` rows; indoor rows are dropped."""
    if origin is None:
        raise ValueError("scene has no geo_origin; cannot convert latitude/longitude")
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            x, y = latlon_to_local(float(row["lat"]), float(row["lon"]), origin)
            sinr = row.get("sinr_db") or ""
            indoor = _truthy(row.get("indoor") or "0")
            s = MeasurementSample(float(x), float(y), float(row["rsrp_dbm"]), not indoor,
                                  float(sinr) if sinr.strip() else float("nan"))
            if not math.isfinite(s.rsrp_dbm) or not (math.isfinite(s.x) and math.isfinite(s.y)):
                continue
            if s.outdoor or keep_indoor:
                out.append(s)
    return out


def save_measurements(samples: list[MeasurementSample], path, origin) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lat", "lon", "rsrp_dbm", "sinr_db", "indoor"])
        for s in samples:
            lat, lon = local_to_latlon(s.x, s.y, origin)
            sinr = "" if math.isnan(s.sinr_db) else repr(s.sinr_db)
            w.writerow([repr(float(lat)), repr(float(lon)), repr(s.rsrp_dbm), sinr, 0 if s.outdoor else 1])


# ----------------------------------------------------------------------
# regions

@dataclass(eq=False)
class TargetRegion:
    ix: int
    iy: int
    size: float
    samples: list[int]
    avg_measured_dbm: float
    groups: list[str]
    excluded: bool = False
    reason: str | None = None
    cell: int = -1

    @property
    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (self.ix * self.size, self.iy * self.size), ((self.ix + 1) * self.size, (self.iy + 1) * self.size)

    @property
    def center(self) -> np.ndarray:
        return np.array([(self.ix + 0.5) * self.size, (self.iy + 0.5) * self.size])

    @property
    def key(self) -> str:
        return f"{self.ix}_{self.iy}"


def _polygon_distance(p: np.ndarray, poly: np.ndarray) -> float:
    from .scene import points_in_polygon
    if points_in_polygon(np.array([p[0]]), np.array([p[1]]), poly)[0]:
        return 0.0
    a = poly
    b = np.roll(poly, -1, axis=0)
    e = b - a
    t = np.clip(np.einsum("ij,ij->i", p[None] - a, e) / np.einsum("ij,ij->i", e, e), 0, 1)
    return float(np.min(np.linalg.norm(a + t[:, None] * e - p[None], axis=1)))


def groups_near(scene: Scene, point, radius: float) -> list[str]:
    """Building groups with any footprint point within ``radius`` of ``point``."""
    out = {b.group for b in scene.buildings if _polygon_distance(np.asarray(point, float), b.footprint) <= radius}
    return sorted(out)


def build_target_regions(samples: list[MeasurementSample], scene: Scene, min_count: int = 20,
                         region_size: float = 10.0, group_radius: float = 100.0) -> list[TargetRegion]:
    cells: dict[tuple[int, int], list[int]] = {}
    for i, s in enumerate(samples):
        if not s.outdoor:
            continue
        cells.setdefault((int(math.floor(s.x / region_size)), int(math.floor(s.y / region_size))), []).append(i)
    out = []
    for (ix, iy) in sorted(cells):
        idx = cells[(ix, iy)]
        if len(idx) < min_count:
            continue
        avg = float(np.mean([samples[i].rsrp_dbm for i in idx]))
        center = np.array([(ix + 0.5) * region_size, (iy + 0.5) * region_size])
        out.append(TargetRegion(ix, iy, region_size, idx, avg, groups_near(scene, center, group_radius)))
    return out


# ----------------------------------------------------------------------
# parameters

@dataclass(eq=False)
class LearnableParams:
    groups: list[str]
    values: np.ndarray
    frozen: set[str] = field(default_factory=set)

    @classmethod
    def initial(cls, groups, init=PARAM_INIT) -> "LearnableParams":
        g = sorted(groups)
        return cls(g, np.tile(np.asarray(init, dtype=float), (len(g), 1)))

    def index(self, group: str) -> int:
        return self.groups.index(group)

    def get(self, group: str) -> np.ndarray:
        return self.values[self.index(group)].copy()

    def copy(self) -> "LearnableParams":
        return LearnableParams(list(self.groups), self.values.copy(), set(self.frozen))

    def project(self) -> None:
        np.clip(self.values, PARAM_LO, PARAM_HI, out=self.values)

    def materials(self, frequency: float | None = None) -> dict[str, Material]:
        return {f"cal:{g}": Material(f"cal:{g}", *map(float, v)) for g, v in zip(self.groups, self.values)}


def face_groups(scene: Scene) -> list[str | None]:
    return [scene.buildings[b].group if b >= 0 else None for b in scene.face_building]


def face_arrays(scene: Scene, params: LearnableParams, base=None):
    """Per-face (eps, sigma, S) with learnable groups overridden by ``params``."""
    eps, sig, s = (a.copy() for a in (base if base is not None else material_arrays(scene)))
    fg = face_groups(scene)
    lookup = {g: i for i, g in enumerate(params.groups)}
    for f, g in enumerate(fg):
        if g in lookup:
            eps[f], sig[f], s[f] = params.values[lookup[g]]
    return eps, sig, s


def calibrated_scene(scene: Scene, params: LearnableParams) -> Scene:
    assign = {b.id: f"cal:{b.group}" for b in scene.buildings if b.group in params.groups}
    return with_materials(scene, params.materials(), assign)


# ----------------------------------------------------------------------
# fast region simulation

class RegionModel:
    """Best-server RSRP at fixed points as a function of per-face material arrays.

    Specular geometry is cached as a PathSet; diffuse paths are pre-summed
    per face because their field is linear in sqrt(scatter_s).
    """

    def __init__(self, tracer: Tracer, network: list[SectorArray], site_of: list[int], sites: list[np.ndarray],
                 system: SystemConfig, points: np.ndarray, diffuse_mask: np.ndarray | None):
        self.system = system
        self.points = np.atleast_2d(points)
        self.network = network
        self.freq = tracer.cfg.frequency
        n = len(self.points)
        nf = tracer.scene.n_faces
        self.spec: list[tuple[PathSet, list[np.ndarray], sparse.csr_matrix]] = []
        self.diff: list[np.ndarray] = []
        self.W = [codebook(s.m_h, s.m_v).conj() for s in network]
        site_cache = {}
        for i, sec in enumerate(network):
            s = site_of[i]
            if s not in site_cache:
                ps = tracer.specular(sites[s], self.points)
                dps = None
                if diffuse_mask is not None and diffuse_mask.any():
                    dps = tracer.diffuse(sites[s], self.points, face_mask=diffuse_mask)
                site_cache[s] = (ps, dps)
            ps, dps = site_cache[s]
            B = np.sqrt(sec.gain_linear(ps.dep))[:, None] * sec.steering(ps.dep)
            S = sparse.csr_matrix((np.ones(len(ps)), (ps.rx, np.arange(len(ps)))), shape=(n, len(ps)))
            self.spec.append((ps, B, S))
            D = np.zeros((nf, n, sec.size), dtype=complex)
            if dps is not None and len(dps):
                fs = free_space_factor(dps.length, tracer.cfg.wavelength) * dps.diffuse_geom
                contrib = (fs * np.sqrt(sec.gain_linear(dps.dep)))[:, None] * sec.steering(dps.dep)
                key = dps.faces[:, 0] * n + dps.rx
                Sd = sparse.csr_matrix((np.ones(len(dps)), (key, np.arange(len(dps)))), shape=(nf * n, len(dps)))
                D = (Sd @ contrib).reshape(nf, n, sec.size)
            used = np.flatnonzero(np.abs(D).reshape(nf, -1).max(axis=1) > 0)
            self.diff.append((used, D[used]))

    def rsrp_points(self, eps, sig, s) -> np.ndarray:
        best = np.zeros(len(self.points))
        for i, (ps, B, S) in enumerate(self.spec):
            h = np.zeros((len(self.points), B.shape[1]), dtype=complex)
            if len(ps):
                amp = ps.amplitudes(eps, sig, s, self.freq)
                h += S @ (amp[:, None] * B)
            used, D = self.diff[i]
            if len(used):
                h += np.einsum("f,fnm->nm", np.sqrt(s[used]), D)
            g = np.abs(h @ self.W[i]) ** 2
            best = np.maximum(best, g.max(axis=1))
        return rsrp(best, self.system)

    def region_average(self, eps, sig, s) -> float:
        r = self.rsrp_points(eps, sig, s)
        r = r[np.isfinite(r)]
        return float(np.mean(r)) if len(r) else float("nan")


def region_points(region: TargetRegion, scene: Scene, tile_size: float = 2.0, ue_height: float = 1.5) -> np.ndarray:
    (x0, y0), _ = region.bounds
    n = int(round(region.size / tile_size))
    c = (np.arange(n) + 0.5) * tile_size
    X, Y = np.meshgrid(x0 + c, y0 + c, indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, ue_height)], axis=1)
    return pts[~scene.inside_building(pts)]


def region_loss_value(sim_dbm: float, measured_dbm: float) -> float:
    return (sim_dbm - measured_dbm) ** 2


# ----------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape))


def fd_gradient(loss, x: np.ndarray, lo: np.ndarray, hi: np.ndarray, rel_step: float = 1e-2,
                active: np.ndarray | None = None) -> np.ndarray:
    """Central differences with step ``rel_step * (hi - lo)``, one-sided at the box faces."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    step = rel_step * (hi - lo)
    flat = x.ravel()
    for k in range(flat.size):
        if active is not None and not active.ravel()[k]:
            continue
        hk = step.ravel()[k]
        up = min(flat[k] + hk, hi.ravel()[k])
        dn = max(flat[k] - hk, lo.ravel()[k])
        if up == dn:
            continue
        xp, xm = flat.copy(), flat.copy()
        xp[k], xm[k] = up, dn
        g.ravel()[k] = (loss(xp.reshape(x.shape)) - loss(xm.reshape(x.shape))) / (up - dn)
    return g


def adam_update(x: np.ndarray, grad: np.ndarray, state: AdamState, lr: float, lo, hi) -> np.ndarray:
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad**2
    mhat = state.m / (1 - state.beta1**state.t)
    vhat = state.v / (1 - state.beta2**state.t)
    return np.clip(x - lr * mhat / (np.sqrt(vhat) + state.eps), lo, hi)


def adam_fd_step(x: np.ndarray, loss, state: AdamState, lr: float = 0.05, lo=None, hi=None,
                 rel_step: float = 1e-2, active: np.ndarray | None = None) -> np.ndarray:
    """One projected Adam step on ``loss(x)`` using finite-difference gradients."""
    x = np.asarray(x, dtype=float)
    lo = np.broadcast_to(PARAM_LO if lo is None else lo, x.shape)
    hi = np.broadcast_to(PARAM_HI if hi is None else hi, x.shape)
    g = fd_gradient(loss, x, lo, hi, rel_step, active)
    return adam_update(x, g, state, lr, lo, hi)


# ----------------------------------------------------------------------
# calibration driver

@dataclass(eq=False)
class CalibrationResult:
    scene: Scene
    params: LearnableParams
    regions: list[TargetRegion]
    initial_sim: dict[str, float]
    final_sim: dict[str, float]
    cells: list[int]
    history: list[tuple[int, str, float]]
    warnings: list[str] = field(default_factory=list)

    def region_errors(self, which: str = "final") -> np.ndarray:
        sim = self.final_sim if which == "final" else self.initial_sim
        return np.array([sim[r.key] - r.avg_measured_dbm for r in self.regions if not r.excluded])

    def exclusion_log(self) -> list[dict]:
        return [{"region": r.key, "reason": r.reason} for r in self.regions if r.excluded]


class Calibrator:
    def __init__(self, scene: Scene, network: list[SectorArray], system: SystemConfig, cfg: TraceConfig,
                 samples: list[MeasurementSample], min_count: int = 20, region_size: float = 10.0,
                 group_radius: float = 100.0, tile_size: float = 2.0, ue_height: float = 1.5,
                 diffuse: bool | None = None):
        self.scene = scene
        self.system = system
        self.cfg = replace(cfg, frequency=system.frequency)
        self.samples = samples
        self.regions = build_target_regions(samples, scene, min_count, region_size, group_radius)
        groups = sorted({g for r in self.regions for g in r.groups})
        self.params = LearnableParams.initial(groups)
        self.engine = CoverageEngine(scene, network, system, self.cfg)
        self.base = material_arrays(scene)
        fg = face_groups(scene)
        self.learnable_faces = np.array([g in groups for g in fg])
        mask = None
        self.diffuse = bool(self.cfg.diffuse if diffuse is None else diffuse)
        if self.diffuse:
            mask = self.learnable_faces | (self.base[2] > 0)
        sites = [self.engine.site_position(s) for s in range(len(self.engine.sites))]
        self.models: dict[str, RegionModel] = {}
        for r in self.regions:
            pts = region_points(r, scene, tile_size, ue_height)
            self.models[r.key] = RegionModel(self.engine.tracer, self.engine.network, self.engine.site_of, sites,
                                             system, pts, mask)

    def simulate(self, region: TargetRegion, params: LearnableParams) -> float:
        return self.models[region.key].region_average(*face_arrays(self.scene, params, self.base))

    def region_loss(self, region: TargetRegion, params: LearnableParams | None = None) -> float:
        sim = self.simulate(region, params or self.params)
        return region_loss_value(sim, region.avg_measured_dbm) if math.isfinite(sim) else float("inf")

    def _with_groups(self, params: LearnableParams, groups, value) -> LearnableParams:
        p = params.copy()
        for g in groups:
            if g not in p.frozen:
                p.values[p.index(g)] = value
        return p

    def screen(self, region: TargetRegion) -> str | None:
        sim0 = self.simulate(region, self.params)
        meas = region.avg_measured_dbm
        if not math.isfinite(sim0):
            return "no-finite-simulation"
        if abs(sim0 - meas) > GAP_LIMIT_DB:
            return "initial-gap-over-25dB"
        # each extreme is only probed in the direction the optimizer would push
        if sim0 > meas:
            lo = self.simulate(region, self._with_groups(self.params, region.groups, FREE_SPACE))
            if math.isfinite(lo) and lo - meas > EXTREME_LIMIT_DB:
                return "loss-high-at-free-space-extreme"
        elif meas > sim0:
            top = MAX_REFLECT if self.diffuse else MAX_REFLECT_SPECULAR
            hi = self.simulate(region, self._with_groups(self.params, region.groups, top))
            if not math.isfinite(hi) or meas - hi > EXTREME_LIMIT_DB:
                return "loss-high-at-max-reflectivity-extreme"
        return None

    def assign_cells(self) -> None:
        if not self.regions:
            return
        centers = np.array([[*r.center, 1.5] for r in self.regions])
        H = self.engine.channels(centers)
        _, bs, sec, _ = self.engine.best_server(self.engine.gains(H))
        for r, b, s in zip(self.regions, bs, sec):
            r.cell = -1 if b < 0 else self.engine.sector_index(int(b), int(s))

    def run(self, iterations_per_cell: int = 600, seed: int = 0, lr: float = 0.05,
            rel_step: float = 1e-2) -> CalibrationResult:
        rng = np.random.default_rng(seed)
        warnings: list[str] = []
        initial = {r.key: self.simulate(r, self.params) for r in self.regions}
        for r in self.regions:
            reason = self.screen(r)
            if reason:
                r.excluded, r.reason = True, reason
        self.assign_cells()
        active_regions = [r for r in self.regions if not r.excluded]
        if not active_regions:
            warnings.append("no eligible target regions; scene left unchanged")
            log.warning(warnings[-1])
            return CalibrationResult(self.scene, self.params, self.regions, initial, dict(initial), [], [], warnings)
        counts: dict[int, int] = {}
        for r in active_regions:
            counts[r.cell] = counts.get(r.cell, 0) + len(r.samples)
        cells = sorted(counts, key=lambda c: (-counts[c], c))
        history = []
        for cell in cells:
            regs = [r for r in active_regions if r.cell == cell]
            groups = sorted({g for r in regs for g in r.groups} - self.params.frozen)
            if not groups:
                continue
            gi = np.array([self.params.index(g) for g in groups])
            state = AdamState.zeros((len(gi), 3))
            for it in range(iterations_per_cell):
                reg = regs[int(rng.integers(len(regs)))]
                active = np.array([g in reg.groups for g in groups])[:, None] & np.ones(3, bool)

                def loss(x, reg=reg):
                    p = self.params.copy()
                    p.values[gi] = x
                    return self.region_loss(reg, p)

                x = adam_fd_step(self.params.values[gi], loss, state, lr, PARAM_LO, PARAM_HI, rel_step, active)
                self.params.values[gi] = x
                history.append((cell, reg.key, loss(x)))
            self.params.frozen |= set(groups)
        final = {r.key: self.simulate(r, self.params) for r in self.regions}
        return CalibrationResult(calibrated_scene(self.scene, self.params), self.params.copy(), self.regions,
                                 initial, final, cells, history, warnings)


def calibrate_scene(scene, network, system, samples, cfg: TraceConfig | None = None,
                    iterations_per_cell: int = 600, seed: int = 0, lr: float = 0.05) -> CalibrationResult:
    cal = Calibrator(scene, network, system, cfg or TraceConfig(frequency=system.frequency), samples)
    return cal.run(iterations_per_cell, seed, lr)


# ----------------------------------------------------------------------
# validation

def _stats(err: np.ndarray) -> dict[str, float]:
    if len(err) == 0:
        return {"mean": float("nan"), "median": float("nan"), "std": float("nan"), "count": 0}
    return {"mean": float(np.mean(err)), "median": float(np.median(err)), "std": float(np.std(err)),
            "count": int(len(err))}


def empirical_cdf(values) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=float))
    v = v[np.isfinite(v)]
    return [(float(x), (i + 1) / len(v)) for i, x in enumerate(v)]


def validation_metrics(scene: Scene, network, system: SystemConfig, samples: list[MeasurementSample],
                       cfg: TraceConfig | None = None, regions: list[TargetRegion] | None = None,
                       ue_height: float = 1.5) -> dict:
    """Simulated-vs-measured comparison; samples in excluded regions are left out."""
    cfg = replace(cfg or TraceConfig(), frequency=system.frequency)
    excluded = set()
    region_of: dict[int, str] = {}
    if regions is not None:
        for r in regions:
            for i in r.samples:
                region_of[i] = r.key
            if r.excluded:
                excluded |= set(r.samples)
    keep = [i for i, s in enumerate(samples) if s.outdoor and i not in excluded]
    pts = np.array([[samples[i].x, samples[i].y, ue_height] for i in keep]).reshape(-1, 3)
    sim = np.full(len(keep), -np.inf)
    if len(keep):
        eng = CoverageEngine(scene, network, system, cfg)
        best, *_ = eng.best_server(eng.gains(eng.channels(pts)))
        sim = rsrp(best, system)
        sim = np.atleast_1d(sim)
    meas = np.array([samples[i].rsrp_dbm for i in keep])
    fin = np.isfinite(sim)
    err = (sim - meas)[fin]
    pairs = []
    region_err = []
    if regions is not None:
        pos = {i: k for k, i in enumerate(keep)}
        for r in regions:
            if r.excluded:
                continue
            idx = [pos[i] for i in r.samples if i in pos and fin[pos[i]]]
            if not idx:
                continue
            s_avg, m_avg = float(np.mean(sim[idx])), float(np.mean(meas[idx]))
            pairs.append({"region": r.key, "simulated_dbm": s_avg, "measured_dbm": m_avg})
            region_err.append(s_avg - m_avg)
    return {
        "sample_errors": [float(e) for e in err],
        "sample_stats": _stats(err),
        "region_pairs": pairs,
        "region_stats": _stats(np.array(region_err)),
        "cdf_simulated": empirical_cdf(sim[fin]),
        "cdf_measured": empirical_cdf(meas),
        "non_finite_samples": int((~fin).sum()),
    }


def synthetic_measurements(scene: Scene, network, system: SystemConfig, cfg: TraceConfig, region_keys,
                           noise_db: float = 2.0, seed: int = 0, region_size: float = 10.0,
                           tile_size: float = 2.0, ue_height: float = 1.5) -> list[MeasurementSample]:
    """One noisy sample per outdoor tile center inside each requested region."""
    rng = np.random.default_rng(seed)
    pts = []
    for ix, iy in region_keys:
        r = TargetRegion(ix, iy, region_size, [], 0.0, [])
        pts.append(region_points(r, scene, tile_size, ue_height))
    P = np.concatenate(pts) if pts else np.zeros((0, 3))
    eng = CoverageEngine(scene, network, system, replace(cfg, frequency=system.frequency))
    best, *_ = eng.best_server(eng.gains(eng.channels(P)))
    r = np.atleast_1d(rsrp(best, system))
    noise = rng.normal(0.0, noise_db, len(P))
    return [MeasurementSample(float(p[0]), float(p[1]), float(v + n)) for p, v, n in zip(P, r, noise)
            if np.isfinite(v)]
