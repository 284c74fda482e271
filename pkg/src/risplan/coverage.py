"""Tile gains, best-server RSRP maps, outage sets and RSRP CDFs."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse

from .arrays import SectorArray, SystemConfig, codebook
from .raytrace import PathSet, TraceConfig, Tracer, material_arrays
from .scene import Scene, TileGrid

OUTAGE_DBM = -100.0


def rsrp(gain, system: SystemConfig):
    """RSRP in dBm for a linear power gain; zero gain maps to -inf."""
    g = np.asarray(gain, dtype=float)
    if np.any(g < 0):
        raise ValueError("gain must be nonnegative")
    with np.errstate(divide="ignore"):
        out = system.tx_power_subcarrier_dbm + 10.0 * np.log10(g)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class TileRecord:
    row: int
    col: int
    center: np.ndarray
    best_bs: int
    best_sector: int
    best_beam: int
    rsrp_dbm: float
    in_outage: bool
    indoor: bool = False


@dataclass(eq=False)
class CoverageMap:
    """Dense best-server map.  Indoor tiles carry NaN RSRP and are never in outage."""

    grid: TileGrid
    system: SystemConfig
    rsrp_dbm: np.ndarray
    bs: np.ndarray
    sector: np.ndarray
    beam: np.ndarray
    indoor: np.ndarray
    threshold_dbm: float = OUTAGE_DBM
    samples: int = 1

    @property
    def outage(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return (self.rsrp_dbm < self.threshold_dbm) & ~self.indoor

    def record(self, row: int, col: int) -> TileRecord:
        return TileRecord(row, col, self.grid.center(row, col), int(self.bs[row, col]), int(self.sector[row, col]),
                          int(self.beam[row, col]), float(self.rsrp_dbm[row, col]), bool(self.outage[row, col]),
                          bool(self.indoor[row, col]))

    @property
    def records(self) -> list[TileRecord]:
        return [self.record(r, c) for r in range(self.grid.rows) for c in range(self.grid.cols)]


def outage_set(cmap: CoverageMap, threshold_dbm: float = OUTAGE_DBM) -> list[tuple[int, int]]:
    with np.errstate(invalid="ignore"):
        mask = (cmap.rsrp_dbm < threshold_dbm) & ~cmap.indoor
    return [tuple(map(int, rc)) for rc in np.argwhere(mask)]


@dataclass(frozen=True)
class Cdf:
    rsrp_dbm: np.ndarray
    fraction: np.ndarray
    outage_inf_fraction: float

    def pairs(self) -> list[tuple[float, float]]:
        return list(zip(self.rsrp_dbm.tolist(), self.fraction.tolist()))


def rsrp_cdf(cmap: CoverageMap | np.ndarray) -> Cdf:
    """Empirical CDF over finite-RSRP outdoor tiles; -inf tiles reported separately."""
    vals = cmap.rsrp_dbm[~cmap.indoor] if isinstance(cmap, CoverageMap) else np.asarray(cmap, dtype=float).ravel()
    vals = vals[~np.isnan(vals)]
    finite = np.sort(vals[np.isfinite(vals)])
    n_inf = int(np.sum(np.isneginf(vals)))
    if len(finite) == 0:
        return Cdf(np.zeros(0), np.zeros(0), 1.0 if n_inf else 0.0)
    uniq, last = np.unique(finite, return_counts=True)
    frac = np.cumsum(last) / len(finite)
    return Cdf(uniq, frac, n_inf / len(vals))


class CoverageEngine:
    """Traces every base-station site once and evaluates sector/beam gains anywhere.

    Co-located sectors share one site trace.  Channel vectors for the
    coverage grid are kept so later stages can reuse the direct channels.
    """

    def __init__(self, scene: Scene, network: list[SectorArray], system: SystemConfig, cfg: TraceConfig,
                 materials=None):
        if not network:
            raise ValueError("network must contain at least one sector")
        self.scene = scene
        self.system = system
        self.cfg = replace(cfg, frequency=system.frequency)
        self.tracer = Tracer(scene, self.cfg)
        order = sorted(range(len(network)), key=lambda i: (network[i].bs, network[i].sector, i))
        self.network = [network[i] for i in order]
        keys = [tuple(np.round(s.position, 9)) for s in self.network]
        self.sites = list(dict.fromkeys(keys))
        self.site_of = [self.sites.index(k) for k in keys]
        self.materials = material_arrays(scene, materials)
        self.W = [codebook(s.m_h, s.m_v).conj() for s in self.network]
        self.p_mw = 10 ** (system.tx_power_subcarrier_dbm / 10)
        self.grid_channels = None
        self.grid_points = None

    def site_position(self, site: int) -> np.ndarray:
        return np.array(self.sites[site], dtype=float)

    def site_paths(self, site: int, points) -> tuple[PathSet, np.ndarray]:
        """Specular paths (with amplitudes) from a site to ``points``."""
        ps = self.tracer.specular(self.site_position(site), points)
        return ps, ps.amplitudes(*self.materials, self.cfg.frequency)

    def _diffuse_channels(self, site: int, sectors: list[int], P: np.ndarray, chunk: int = 32) -> dict:
        """Diffuse contributions summed receiver-chunk by chunk to bound memory."""
        s_face = self.materials[2]
        mask = s_face > 0
        out = {i: np.zeros((len(P), self.network[i].size), dtype=complex) for i in sectors}
        if not mask.any():
            return out
        for c0 in range(0, len(P), chunk):
            dps = self.tracer.diffuse(self.site_position(site), P[c0:c0 + chunk], face_mask=mask)
            if dps is None:
                continue
            amp = dps.amplitudes(*self.materials, self.cfg.frequency)
            for i in sectors:
                out[i][c0:c0 + chunk] += assemble_channels(dps, amp, self.network[i], min(chunk, len(P) - c0))
        return out

    def channels(self, points, site_paths=None) -> list[np.ndarray]:
        """Channel matrices (N, M) for every sector at ``points``."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        cache = {}
        out = []
        for i, sec in enumerate(self.network):
            s = self.site_of[i]
            if s not in cache:
                cache[s] = site_paths[s] if site_paths is not None else self.site_paths(s, P)
            ps, amp = cache[s]
            out.append(assemble_channels(ps, amp, sec, len(P)))
        if self.cfg.diffuse:
            for s in sorted(set(self.site_of)):
                secs = [i for i in range(len(self.network)) if self.site_of[i] == s]
                for i, h in self._diffuse_channels(s, secs, P).items():
                    out[i] = out[i] + h
        return out

    def gains(self, H: list[np.ndarray]) -> list[np.ndarray]:
        """Per-sector |w^H h|^2 for every beam, (N, M)."""
        return [np.abs(h @ w) ** 2 for h, w in zip(H, self.W)]

    def best_server(self, beam_gain: list[np.ndarray]):
        """Strict-max selection over (bs, sector, beam) in canonical order."""
        n = beam_gain[0].shape[0]
        best = np.zeros(n)
        bs = np.full(n, -1)
        sec = np.full(n, -1)
        beam = np.full(n, -1)
        for i, g in enumerate(beam_gain):
            b = np.argmax(g, axis=1)
            v = g[np.arange(n), b]
            better = v > best
            best[better] = v[better]
            bs[better] = self.network[i].bs
            sec[better] = self.network[i].sector
            beam[better] = b[better]
        return best, bs, sec, beam

    def sector_index(self, bs: int, sector: int) -> int:
        for i, s in enumerate(self.network):
            if s.bs == bs and s.sector == sector:
                return i
        raise KeyError((bs, sector))

    def coverage_map(self, grid: TileGrid, samples: int | None = None, threshold_dbm: float = OUTAGE_DBM) -> CoverageMap:
        k = samples or self.cfg.tile_samples
        centers = grid.centers()
        indoor = self.scene.inside_building(centers)
        offs = grid.sample_offsets(k)
        pts = (centers[:, None, :] + offs[None]).reshape(-1, 3)
        ok_sample = ~self.scene.inside_building(pts) & np.repeat(~indoor, k)
        H = self.channels(pts[ok_sample])
        full = []
        for h in H:
            f = np.zeros((len(pts), h.shape[1]), dtype=complex)
            f[ok_sample] = h
            full.append(f)
        self.grid_points = pts
        self.grid_sample_ok = ok_sample
        self.grid_channels = full
        self.grid_samples = k
        g = [tile_average(np.abs(h @ w) ** 2, ok_sample, k) for h, w in zip(full, self.W)]
        best, bs, sec, beam = self.best_server(g)
        r = rsrp(best, self.system)
        r = np.where(indoor, np.nan, r)
        shape = grid.shape
        return CoverageMap(grid, self.system, r.reshape(shape), bs.reshape(shape), sec.reshape(shape),
                           beam.reshape(shape), indoor.reshape(shape), threshold_dbm, k)

    def tile_channels(self, flat_tiles) -> list[np.ndarray]:
        """Cached direct channels of tile sample points, (len * k, M) per sector."""
        k = self.grid_samples
        idx = (np.asarray(flat_tiles)[:, None] * k + np.arange(k)[None]).ravel()
        return [h[idx] for h in self.grid_channels]

    def tile_sample_ok(self, flat_tiles) -> np.ndarray:
        k = self.grid_samples
        idx = (np.asarray(flat_tiles)[:, None] * k + np.arange(k)[None]).ravel()
        return self.grid_sample_ok[idx]


def tile_average(values: np.ndarray, ok: np.ndarray, k: int) -> np.ndarray:
    """Average per-sample rows over groups of ``k`` using only valid samples."""
    v = np.where(ok[:, None], values, 0.0).reshape(-1, k, values.shape[1])
    cnt = ok.reshape(-1, k).sum(axis=1)
    return v.sum(axis=1) / np.maximum(cnt, 1)[:, None]


def assemble_channels(ps: PathSet, amp: np.ndarray, sec: SectorArray, n_points: int, chunk: int = 50_000):
    H = np.zeros((n_points, sec.size), dtype=complex)
    for c0 in range(0, len(ps), chunk):
        sl = slice(c0, c0 + chunk)
        dep = ps.dep[sl]
        coef = amp[sl] * np.sqrt(sec.gain_linear(dep))
        A = coef[:, None] * sec.steering(dep)
        n = len(coef)
        S = sparse.csr_matrix((np.ones(n), (ps.rx[sl], np.arange(n))), shape=(n_points, n))
        H += S @ A
    return H


def coverage_map(scene: Scene, network: list[SectorArray], system: SystemConfig, grid: TileGrid, cfg: TraceConfig,
                 samples: int | None = None) -> CoverageMap:
    return CoverageEngine(scene, network, system, cfg).coverage_map(grid, samples)


def tile_gain(scene: Scene, tx_array: SectorArray, beam: tuple[int, int], tile: tuple[int, int], cfg: TraceConfig,
              grid: TileGrid, samples: int = 1, frequency: float | None = None) -> float:
    """|h^H w|^2 averaged over ``samples`` points of one tile for a fixed beam."""
    f = frequency or cfg.frequency
    tracer = Tracer(scene, replace(cfg, frequency=f))
    center = grid.center(*tile)
    pts = center[None] + grid.sample_offsets(samples)
    ok = ~scene.inside_building(pts)
    if not ok.any():
        return 0.0
    pts = pts[ok]
    ps = tracer.paths(tx_array.position, pts)
    amp = ps.amplitudes(*material_arrays(scene), f)
    H = assemble_channels(ps, amp, tx_array, len(pts))
    w = codebook(tx_array.m_h, tx_array.m_v)[:, beam[0] * tx_array.m_v + beam[1]]
    return float(np.mean(np.abs(H @ w.conj()) ** 2))
