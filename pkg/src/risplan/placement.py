"""RIS deployment pipeline for outage clusters.

Stages: cluster the outage tiles, place one surface per cluster from
ray-derived candidates, re-cluster what is left at a tighter threshold and
place again, then re-associate the remaining tiles to already deployed
surfaces.  Tiles are addressed by their flat row-major grid index.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .arrays import codebook
from .clustering import Cluster, birch_cluster
from .coverage import CoverageEngine, CoverageMap, rsrp
from .rismodel import (IncidentField, RisGeometryError, RisUnit, combined_gain, configure_for,
                       incident_from_paths, make_ris, ris_channel)
from .scene import WALL, InvalidCandidate, snap_to_facade

SURFACE_OFFSET = 0.01


class Unservable(RuntimeError):
    """No sector reaches the surface location."""


class SourceKind(enum.Enum):
    STRONGEST_RAY_BOUNCE = "StrongestRayBounce"
    FIRST_BOUNCE = "FirstBounce"
    SECOND_BOUNCE = "SecondBounce"
    SCATTER_POINT = "ScatterPoint"


class Status(enum.Enum):
    RIS_EFFECTIVE = "RisEffective"
    DEFERRED = "Deferred"
    REASSOCIATED = "Reassociated"
    UNSERVED = "Unserved"


@dataclass(frozen=True)
class RisSpec:
    width: float = 11.24
    height: float = 11.24
    eta: float = 1.0
    r: float = 1.0


@dataclass(frozen=True)
class PipelineConfig:
    threshold_dbm: float = -100.0
    t1: float = 15.0
    t2: float = 10.0
    effective_fraction: float = 0.4
    strategy: str = "reflection"
    nearby_range_m: float = 60.0
    dedup_m: float = 0.5
    max_candidates: int = 40
    ris: RisSpec = field(default_factory=RisSpec)

    def __post_init__(self):
        if self.strategy not in ("reflection", "scattering"):
            raise ValueError("strategy must be 'reflection' or 'scattering'")


@dataclass(frozen=True, eq=False)
class Candidate:
    location: np.ndarray
    source_kind: SourceKind
    source_path_id: int
    distance_to_centroid_3d: float


@dataclass(eq=False)
class RisDeployment:
    ris_id: int
    unit: RisUnit
    serving_bs: int
    serving_sector: int
    serving_beam: int
    target_cluster_id: int
    sector_index: int
    incident: IncidentField
    candidate: Candidate | None = None
    ue_targets: dict[int, np.ndarray] = field(default_factory=dict)

    def phase_for(self, tile: int) -> np.ndarray:
        """Phase profile used while serving ``tile`` (per-user reconfiguration)."""
        return configure_for(self.unit, self.incident, self.ue_targets[tile])

    def to_dict(self) -> dict:
        u = self.unit
        return {"ris_id": self.ris_id, "center": [float(v) for v in u.center],
                "normal": [float(v) for v in u.outward_normal], "width": u.width, "height": u.height,
                "eta": u.efficiency_eta, "r": u.roughness_r, "serving_bs": self.serving_bs,
                "serving_sector": self.serving_sector, "serving_beam": self.serving_beam,
                "cluster_id": self.target_cluster_id}


@dataclass(eq=False)
class ClusterOutcome:
    cluster_id: int
    status: Status
    deployment: RisDeployment | None = None
    improved_fraction: float = 0.0
    recovered_tiles: list[int] = field(default_factory=list)
    improved_tiles: list[int] = field(default_factory=list)
    non_improved_tiles: list[int] = field(default_factory=list)
    centroid_baseline_dbm: float = float("-inf")
    centroid_ris_dbm: float = float("-inf")
    candidates_tried: int = 0
    flags: list[str] = field(default_factory=list)

    @property
    def centroid_improved(self) -> bool:
        return self.centroid_ris_dbm > self.centroid_baseline_dbm

    def to_dict(self) -> dict:
        d = self.deployment
        return {"cluster_id": self.cluster_id, "status": self.status.value,
                "ris_id": None if d is None else d.ris_id,
                "source_kind": None if d is None or d.candidate is None else d.candidate.source_kind.value,
                "improved_fraction": self.improved_fraction, "recovered_tiles": list(self.recovered_tiles),
                "centroid_baseline_dbm": _num(self.centroid_baseline_dbm),
                "centroid_ris_dbm": _num(self.centroid_ris_dbm), "candidates_tried": self.candidates_tried,
                "flags": list(self.flags)}


def _unique(flags: list[str]) -> list[str]:
    return list(dict.fromkeys(flags))


def _num(x: float):
    return None if not np.isfinite(x) else float(x)


@dataclass(eq=False)
class Reassociation:
    tile: int
    ris_id: int
    bs: int
    sector: int
    beam: int
    rsrp_dbm: float
    recovered: bool


@dataclass(eq=False)
class PipelineResult:
    outage_tiles: list[int]
    clusters: list[Cluster]
    outcomes: list[ClusterOutcome]
    recluster: list[Cluster]
    recluster_outcomes: list[ClusterOutcome]
    reassociations: list[Reassociation]
    stage_recovered: dict[str, list[int]]
    deployments: list[RisDeployment]
    cluster_tiles: dict[int, list[int]]

    def fraction(self, stage: str) -> float:
        n = len(self.outage_tiles)
        return len(self.stage_recovered[stage]) / n if n else 0.0

    @property
    def all_clusters(self) -> list[Cluster]:
        return self.clusters + self.recluster

    @property
    def all_outcomes(self) -> list[ClusterOutcome]:
        return self.outcomes + self.recluster_outcomes


class Planner:
    """Evaluates surface candidates against a fixed network and its coverage map."""

    def __init__(self, engine: CoverageEngine, cmap: CoverageMap, pcfg: PipelineConfig | None = None):
        self.engine = engine
        self.scene = engine.scene
        self.cmap = cmap
        self.grid = cmap.grid
        self.pcfg = pcfg or PipelineConfig()
        self.baseline = cmap.rsrp_dbm.ravel()
        self.centers = self.grid.centers()
        self.codebooks = [codebook(s.m_h, s.m_v) for s in engine.network]
        self._incident_cache: dict = {}
        self._next_ris = 0

    # ------------------------------------------------------------------
    # ray-derived candidates
    def centroid_point(self, cluster: Cluster) -> tuple[np.ndarray, list[str]]:
        c = np.array([*cluster.centroid, self.grid.ue_height])
        if self.scene.inside_building(c[None])[0]:
            m = np.array(cluster.members)
            pts = self.centers[m]
            k = int(np.argmin(np.linalg.norm(pts[:, :2] - c[None, :2], axis=1)))
            return pts[k], ["centroid_indoor_used_nearest_member"]
        return c, []

    def _site_paths(self, point):
        eng = self.engine
        out = []
        for s in range(len(eng.sites)):
            ps = eng.tracer.specular(eng.site_position(s), point[None])
            out.append((ps, ps.amplitudes(*eng.materials, eng.cfg.frequency)))
        return out

    def _site_gain_max(self, site: int, dirs: np.ndarray) -> np.ndarray:
        g = np.zeros(len(dirs))
        for i, sec in enumerate(self.engine.network):
            if self.engine.site_of[i] == site:
                g = np.maximum(g, sec.gain_linear(dirs))
        return g

    def strongest_ray_candidates(self, centroid) -> tuple[list[Candidate], list[str]]:
        best = None
        for s, (ps, amp) in enumerate(self._site_paths(centroid)):
            if len(ps) == 0:
                continue
            power = np.abs(amp) ** 2 * self._site_gain_max(s, ps.dep)
            i = int(np.argmax(power))
            if best is None or power[i] > best[0]:
                best = (power[i], ps, i, s)
        if best is None:
            return [], ["no-rays"]
        _, ps, i, s = best
        out = []
        for j in range(ps.faces.shape[1]):
            if ps.faces[i, j] < 0:
                break
            if self.scene.face_kind[ps.faces[i, j]] != WALL:
                continue
            p = ps.points[i, j]
            out.append(Candidate(p.copy(), SourceKind.STRONGEST_RAY_BOUNCE, s * 1_000_000 + i,
                                 float(np.linalg.norm(p - centroid))))
        return out, ([] if out else ["los-only"])

    def all_ray_candidates(self, centroid) -> tuple[list[Candidate], list[str]]:
        pts, kinds, ids = [], [], []
        any_path = False
        for s, (ps, amp) in enumerate(self._site_paths(centroid)):
            any_path |= len(ps) > 0
            for j, kind in ((0, SourceKind.FIRST_BOUNCE), (1, SourceKind.SECOND_BOUNCE)):
                if ps.faces.shape[1] <= j:
                    continue
                f = ps.faces[:, j]
                sel = np.flatnonzero(f >= 0)
                sel = sel[self.scene.face_kind[f[sel]] == WALL]
                pts.extend(ps.points[sel, j])
                kinds.extend([kind] * len(sel))
                ids.extend((s * 1_000_000 + sel).tolist())
        if not pts:
            return [], (["los-only"] if any_path else ["no-rays"])
        return self._dedup_sorted(np.array(pts), kinds, ids, centroid), []

    def scattering_candidates(self, centroid) -> tuple[list[Candidate], list[str]]:
        eng = self.engine
        _, _, s_face = eng.materials
        mask = (s_face > 0) & (self.scene.face_kind == WALL)
        pts, ids = [], []
        for s in range(len(eng.sites)):
            ps = eng.tracer.diffuse(eng.site_position(s), centroid[None], face_mask=mask)
            if ps is None:
                continue
            pts.extend(ps.points[:, 0])
            ids.extend((s * 1_000_000 + np.arange(len(ps))).tolist())
        if not pts:
            return [], ["no-scatter"]
        return self._dedup_sorted(np.array(pts), [SourceKind.SCATTER_POINT] * len(pts), ids, centroid), []

    def _dedup_sorted(self, pts, kinds, ids, centroid) -> list[Candidate]:
        d = np.linalg.norm(pts - centroid[None], axis=1)
        order = np.lexsort((np.array(ids), d))
        kept: list[Candidate] = []
        kept_pts = np.zeros((0, 3))
        for i in order:
            if len(kept_pts) and np.min(np.linalg.norm(kept_pts - pts[i], axis=1)) <= self.pcfg.dedup_m:
                continue
            kept.append(Candidate(pts[i].copy(), kinds[i], int(ids[i]), float(d[i])))
            kept_pts = np.vstack([kept_pts, pts[i]])
        return kept

    # ------------------------------------------------------------------
    # mounting and serving
    def mount(self, location) -> RisUnit:
        """Snap to the nearest facade and fit the aperture inside that wall where possible."""
        snap = snap_to_facade(self.scene, location)
        sc, w = self.scene, snap.wall
        spec = self.pcfg.ris
        a, e, length, h = sc.wall_a[w], sc.wall_e[w], sc.wall_len[w], sc.wall_h[w]
        u = float(np.dot(snap.center[:2] - a, e) / length)
        u = float(np.clip(u, spec.width / 2, length - spec.width / 2)) if length >= spec.width else length / 2
        z = snap.center[2]
        z = float(np.clip(z, spec.height / 2, h - spec.height / 2)) if h >= spec.height else h / 2
        center = np.array([*(a + u * e / length), z])
        return make_ris(center, snap.outward_normal, spec.width, spec.height, self.engine.system.frequency,
                        eta=spec.eta, r=spec.r)

    def front(self, unit: RisUnit) -> np.ndarray:
        return unit.center + SURFACE_OFFSET * unit.outward_normal

    def incident(self, unit: RisUnit, site: int) -> IncidentField:
        key = (tuple(np.round(unit.center, 9)), tuple(np.round(unit.outward_normal, 9)), site)
        if key not in self._incident_cache:
            eng = self.engine
            ps = eng.tracer.specular(eng.site_position(site), self.front(unit)[None])
            amp = ps.amplitudes(*eng.materials, eng.cfg.frequency)
            self._incident_cache[key] = incident_from_paths(unit, ps, amp).top()
        return self._incident_cache[key]

    def bs_beam_for_ris(self, unit: RisUnit, sites: list[int] | None = None) -> tuple[int, int, float]:
        """(sector index, beam, RSRP dBm) maximizing RSRP at the surface center."""
        eng = self.engine
        H = eng.channels(self.front(unit)[None])
        G = eng.gains(H)
        if sites is not None:
            G = [g if eng.site_of[i] in sites else np.zeros_like(g) for i, g in enumerate(G)]
        best, _, _, beam = eng.best_server(G)
        if best[0] <= 0:
            raise Unservable("no sector reaches the surface")
        idx = next(i for i, g in enumerate(G) if g[0, beam[0]] == best[0])
        return idx, int(beam[0]), float(rsrp(best[0], eng.system))

    def deploy(self, unit: RisUnit, cluster_id: int, candidate: Candidate | None = None,
               sites: list[int] | None = None) -> RisDeployment:
        idx, beam, _ = self.bs_beam_for_ris(unit, sites)
        sec = self.engine.network[idx]
        inc = self.incident(unit, self.engine.site_of[idx])
        if len(inc) == 0:
            raise Unservable("no incident path reaches the surface")
        dep = RisDeployment(-1, unit, sec.bs, sec.sector, beam, cluster_id, idx, inc, candidate)
        return dep

    def _register(self, dep: RisDeployment) -> RisDeployment:
        dep.ris_id = self._next_ris
        self._next_ris += 1
        return dep

    # ------------------------------------------------------------------
    # gains with a surface
    def visible(self, dep: RisDeployment, points) -> np.ndarray:
        P = np.atleast_2d(points)
        front = dep.unit.side(P) > SURFACE_OFFSET
        ok = np.zeros(len(P), dtype=bool)
        if front.any():
            src = np.repeat(self.front(dep.unit)[None], int(front.sum()), axis=0)
            ok[front] = self.scene.segments_clear(src, P[front])
        return ok

    def point_gain(self, dep: RisDeployment, point, h_direct, target=None) -> float:
        """Serving-beam gain at ``point`` with the surface steered toward ``target``."""
        w = self.codebooks[dep.sector_index][:, dep.serving_beam]
        target = point if target is None else target
        if not self.visible(dep, np.asarray(point)[None])[0] or dep.unit.efficiency_eta == 0:
            return float(abs(np.vdot(w, h_direct)) ** 2)
        try:
            phase = configure_for(dep.unit, dep.incident, target)
        except RisGeometryError:
            return float(abs(np.vdot(w, h_direct)) ** 2)
        sec = self.engine.network[dep.sector_index]
        h_r = ris_channel(dep.unit, dep.incident, sec, point, phase)
        return combined_gain(h_direct, h_r, w)

    def tile_rsrp_with(self, dep: RisDeployment, tile: int) -> float:
        """RSRP at a tile served through the surface, reconfigured toward its center."""
        eng = self.engine
        H = eng.tile_channels([tile])[dep.sector_index]
        ok = eng.tile_sample_ok([tile])
        pts = eng.grid_points[tile * eng.grid_samples:(tile + 1) * eng.grid_samples]
        target = self.centers[tile]
        g = [self.point_gain(dep, pts[i], H[i], target) for i in range(len(pts)) if ok[i]]
        return float(rsrp(np.mean(g), eng.system)) if g else float("-inf")

    def point_baseline(self, point) -> tuple[float, list[np.ndarray]]:
        eng = self.engine
        H = eng.channels(np.asarray(point)[None])
        best, *_ = eng.best_server(eng.gains(H))
        return float(rsrp(best[0], eng.system)), [h[0] for h in H]

    # ------------------------------------------------------------------
    # Alg. 1 evaluation
    def evaluate_candidate(self, cluster: Cluster, candidate: Candidate, tiles: list[int] | None = None,
                           centroid=None) -> ClusterOutcome:
        tiles = cluster_tiles(cluster, tiles)
        centroid, flags = (self.centroid_point(cluster) if centroid is None else (centroid, []))
        out = ClusterOutcome(cluster.id, Status.DEFERRED, flags=list(flags), non_improved_tiles=list(tiles))
        try:
            unit = self.mount(candidate.location)
            dep = self.deploy(unit, cluster.id, candidate)
        except (InvalidCandidate, Unservable) as exc:
            out.flags.append(f"candidate-rejected: {exc}")
            return out
        base_c, Hc = self.point_baseline(centroid)
        with_c = float(rsrp(self.point_gain(dep, centroid, Hc[dep.sector_index]), self.engine.system))
        out.centroid_baseline_dbm = base_c
        out.centroid_ris_dbm = max(with_c, base_c)
        if not with_c > base_c:
            return out
        improved, recovered, worse = [], [], []
        for t in tiles:
            r = self.tile_rsrp_with(dep, t)
            if r > self.baseline[t]:
                improved.append(t)
                dep.ue_targets[t] = self.centers[t]
                if r >= self.pcfg.threshold_dbm:
                    recovered.append(t)
            else:
                worse.append(t)
        out.deployment = dep
        out.improved_tiles = improved
        out.recovered_tiles = recovered
        out.non_improved_tiles = worse
        out.improved_fraction = len(improved) / len(tiles) if tiles else 0.0
        if out.improved_fraction > self.pcfg.effective_fraction:
            out.status = Status.RIS_EFFECTIVE
        return out

    def place_for_cluster(self, cluster: Cluster, strategy: str | None = None,
                          tiles: list[int] | None = None) -> ClusterOutcome:
        strategy = strategy or self.pcfg.strategy
        centroid, flags = self.centroid_point(cluster)
        tried = 0
        best = None
        if strategy == "reflection":
            strongest, f1 = self.strongest_ray_candidates(centroid)
            flags = flags + f1
            for cand in strongest:
                o = self.evaluate_candidate(cluster, cand, tiles, centroid)
                tried += 1
                if o.deployment is not None and (best is None or o.centroid_ris_dbm > best.centroid_ris_dbm):
                    best = o
            if best is None:
                cands, f2 = self.all_ray_candidates(centroid)
                flags = flags + f2
                best = self._first_improving(cluster, cands, tiles, centroid)
                tried += best[1]
                best = best[0]
        else:
            cands, f2 = self.scattering_candidates(centroid)
            flags = flags + f2
            best, n = self._first_improving(cluster, cands, tiles, centroid)
            tried += n
        if best is None:
            return ClusterOutcome(cluster.id, Status.UNSERVED, non_improved_tiles=cluster_tiles(cluster, tiles),
                                  candidates_tried=tried, flags=_unique(flags + ["no-improving-candidate"]))
        best.candidates_tried = tried
        best.flags = _unique(flags + best.flags)
        self._register(best.deployment)
        return best

    def _first_improving(self, cluster, cands, tiles, centroid):
        n = 0
        for cand in cands[: self.pcfg.max_candidates]:
            o = self.evaluate_candidate(cluster, cand, tiles, centroid)
            n += 1
            if o.deployment is not None:
                return o, n
        return None, n

    # ------------------------------------------------------------------
    # later stages
    def recluster_leftovers(self, leftover_tiles: list[int], threshold_t2: float | None = None,
                            first_id: int = 0) -> list[Cluster]:
        return cluster_outage(self.centers, leftover_tiles, threshold_t2 or self.pcfg.t2, first_id)

    def reassociate(self, tiles: list[int], deployments: list[RisDeployment]) -> list[Reassociation]:
        """Nearest line-of-sight surface, fed by its nearest line-of-sight base station."""
        eng = self.engine
        out = []
        if not deployments:
            return out
        site_pos = np.array([eng.site_position(s) for s in range(len(eng.sites))])
        feeders: dict[int, RisDeployment | None] = {}
        for dep in deployments:
            front = self.front(dep.unit)
            clear = self.scene.segments_clear(site_pos, np.repeat(front[None], len(site_pos), axis=0))
            clear &= dep.unit.side(site_pos) > 0
            if not clear.any():
                feeders[dep.ris_id] = None
                continue
            cand = np.flatnonzero(clear)
            d = np.linalg.norm(site_pos[cand] - front[None], axis=1)
            site = int(cand[np.lexsort((cand, d))[0]])
            try:
                feeders[dep.ris_id] = self.deploy(dep.unit, dep.target_cluster_id, dep.candidate, sites=[site])
                feeders[dep.ris_id].ris_id = dep.ris_id
            except Unservable:
                feeders[dep.ris_id] = None
        for t in tiles:
            p = self.centers[t]
            vis = [d for d in deployments if feeders[d.ris_id] is not None and self.visible(d, p[None])[0]]
            if not vis:
                continue
            dist = [float(np.linalg.norm(d.unit.center - p)) for d in vis]
            dep = vis[int(np.lexsort(([d.ris_id for d in vis], dist))[0])]
            fed = feeders[dep.ris_id]
            r = self.tile_rsrp_with(fed, t)
            if r > self.baseline[t]:
                sec = eng.network[fed.sector_index]
                out.append(Reassociation(t, dep.ris_id, sec.bs, sec.sector, fed.serving_beam, r,
                                         r >= self.pcfg.threshold_dbm))
        return out

    def run(self) -> PipelineResult:
        pc = self.pcfg
        outage = [int(i) for i in np.flatnonzero(self.cmap.outage.ravel())]
        clusters = cluster_outage(self.centers, outage, pc.t1, 0)
        outcomes = [self.place_for_cluster(c) for c in clusters]
        stage1 = sorted({t for o in outcomes for t in o.recovered_tiles})
        left = sorted(set(outage) - set(stage1))
        reclusters = self.recluster_leftovers(left, pc.t2, first_id=len(clusters))
        re_out = [self.place_for_cluster(c) for c in reclusters]
        stage2 = sorted(set(stage1) | {t for o in re_out for t in o.recovered_tiles})
        deployments = [o.deployment for o in outcomes + re_out if o.deployment is not None]
        left = sorted(set(outage) - set(stage2))
        reassoc = self.reassociate(left, deployments)
        stage3 = sorted(set(stage2) | {r.tile for r in reassoc if r.recovered})
        ctiles = {c.id: cluster_tiles(c) for c in clusters + reclusters}
        return PipelineResult(outage, clusters, outcomes, reclusters, re_out, reassoc,
                              {"placement": stage1, "reclustering": stage2, "reassociation": stage3},
                              deployments, ctiles)

    def extend_nearby(self, deployments: list[RisDeployment], outage_tiles: list[int], recovered: list[int],
                      range_m: float | None = None) -> list[int]:
        """Recovered set after letting every surface also serve outage tiles within range."""
        rng = self.pcfg.nearby_range_m if range_m is None else range_m
        done = set(recovered)
        for dep in deployments:
            for t in outage_tiles:
                if t in done:
                    continue
                p = self.centers[t]
                if np.linalg.norm(p - dep.unit.center) > rng or not self.visible(dep, p[None])[0]:
                    continue
                if self.tile_rsrp_with(dep, t) >= self.pcfg.threshold_dbm:
                    done.add(t)
        return sorted(done)


def cluster_tiles(cluster: Cluster, tiles: list[int] | None = None) -> list[int]:
    """Flat tile indices of a cluster whose members index ``tiles`` (or are tiles)."""
    if tiles is None:
        tiles = getattr(cluster, "tiles", None)
    if tiles is None:
        return list(cluster.members)
    return [int(tiles[m]) for m in cluster.members]


def cluster_outage(centers: np.ndarray, tiles: list[int], threshold: float, first_id: int = 0) -> list[Cluster]:
    """BIRCH over tile centers; cluster ids offset by ``first_id`` and members mapped to tiles."""
    if not tiles:
        return []
    tiles = list(tiles)
    cl = birch_cluster(centers[tiles, :2], threshold)
    for c in cl:
        c.id += first_id
        c.members = sorted(int(tiles[m]) for m in c.members)
    return cl


def prioritize_topn(result: PipelineResult, n: int) -> tuple[list[RisDeployment], float]:
    """Deployments of the ``n`` largest clusters and the outage fraction they recover."""
    outcomes = {o.cluster_id: o for o in result.all_outcomes}
    order = sorted(result.all_clusters, key=lambda c: (-c.size, c.id))[: max(0, n)]
    by_ris: dict[int, set[int]] = {}
    for r in result.reassociations:
        if r.recovered:
            by_ris.setdefault(r.ris_id, set()).add(r.tile)
    chosen, tiles = [], set()
    for c in order:
        o = outcomes.get(c.id)
        if o is None or o.deployment is None:
            continue
        chosen.append(o.deployment)
        tiles |= set(o.recovered_tiles) | by_ris.get(o.deployment.ris_id, set())
    total = len(result.outage_tiles)
    return chosen, (len(tiles) / total if total else 0.0)


def topn_curve(result: PipelineResult) -> list[tuple[int, float]]:
    return [(n, prioritize_topn(result, n)[1]) for n in range(len(result.all_clusters) + 1)]
