"""Shoot-and-bounce ray tracing with image-method path refinement.

Rays launched on a Fibonacci lattice only *discover* which ordered surface
sequences connect a transmitter and a receiver (reception-sphere capture).
Every discovered sequence is then rebuilt exactly with the mirror-image
construction and validated against the finite faces, so path geometry and
amplitudes carry no capture-radius bias.

Complex permittivity uses ``eps_c = eps_r - j * sigma / (omega * eps0)`` and
fields carry the ``exp(-j k r)`` phase convention throughout.
"""
from __future__ import annotations

import enum
from collections import OrderedDict
from dataclasses import dataclass, field, replace

import numpy as np

from .scene import GROUND, ROOF, WALL, Material, Scene

C0 = 299_792_458.0
EPS0 = 8.8541878128e-12

TE, TM = "TE", "TM"


class TraceError(ValueError):
    """Raised for invalid trace endpoints (inside a building or below ground)."""


@dataclass(frozen=True)
class TraceConfig:
    frequency: float = 3.5e9
    ray_count: int = 100_000
    max_bounces: int = 4
    capture_scale: float = 1.5
    rx_capture_radius: float | None = None
    scatter_ray_count: int | None = None
    diffuse: bool = False
    tile_samples: int = 1

    def __post_init__(self):
        if self.ray_count < 1 or self.max_bounces < 1 or self.frequency <= 0:
            raise ValueError("ray_count >= 1, max_bounces >= 1 and frequency > 0 are required")

    @property
    def wavelength(self) -> float:
        return C0 / self.frequency

    @property
    def scatter_rays(self) -> int:
        return self.scatter_ray_count if self.scatter_ray_count else 3 * self.ray_count


class Kind(enum.Enum):
    LAUNCH = "launch"
    SPECULAR = "specular"
    DIFFUSE = "diffuse"
    ARRIVAL = "arrival"


@dataclass(frozen=True, eq=False)
class Interaction:
    kind: Kind
    point: np.ndarray
    normal: np.ndarray | None = None
    material_id: str | None = None
    face: int = -1


@dataclass(eq=False)
class RayPath:
    interactions: list[Interaction]
    departure_dir: np.ndarray
    arrival_dir: np.ndarray
    amplitude: complex
    length: float
    tube_solid_angle: float | None = None

    @property
    def faces(self) -> tuple[int, ...]:
        return tuple(i.face for i in self.interactions[1:-1])

    @property
    def bounces(self) -> int:
        return len(self.interactions) - 2

    @property
    def reflection_points(self) -> list[np.ndarray]:
        return [i.point for i in self.interactions if i.kind is Kind.SPECULAR]

    @property
    def is_diffuse(self) -> bool:
        return any(i.kind is Kind.DIFFUSE for i in self.interactions)


# ----------------------------------------------------------------------
# elementary operations

def fibonacci_directions(n: int) -> np.ndarray:
    """Near-uniform unit vectors on the sphere (Fibonacci lattice), shape (n, 3)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    i = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def lattice_spacing(n: int) -> float:
    """Mean angular spacing (rad) of an n-point spherical lattice."""
    return float(np.sqrt(4.0 * np.pi / n))


def reflect_dir(incident, normal) -> np.ndarray:
    d = np.asarray(incident, dtype=float)
    n = np.asarray(normal, dtype=float)
    return d - 2.0 * np.sum(d * n, axis=-1, keepdims=True) * n


def complex_permittivity(eps_r, sigma, frequency):
    return np.asarray(eps_r) - 1j * np.asarray(sigma) / (2 * np.pi * frequency * EPS0)


def fresnel_te_tm(eps_c, cos_i):
    """TE and TM reflection coefficients (ITU-R P.2040 form), broadcasting."""
    cos_i = np.asarray(cos_i, dtype=float)
    sin2 = 1.0 - cos_i**2
    root = np.sqrt(eps_c - sin2 + 0j)
    # principal branch keeps Re(root) >= 0, which bounds |gamma| by one
    te = (cos_i - root) / (cos_i + root)
    tm = (eps_c * cos_i - root) / (eps_c * cos_i + root)
    return te, tm


def fresnel_coefficient(material: Material, frequency: float, cos_incidence: float, polarization: str = TE) -> complex:
    if not (0.0 < cos_incidence <= 1.0):
        raise ValueError("cos_incidence must lie in (0, 1]")
    eps_c = complex_permittivity(material.eps_r, material.sigma, frequency)
    te, tm = fresnel_te_tm(eps_c, cos_incidence)
    if polarization == TE:
        return complex(te)
    if polarization == TM:
        return complex(tm)
    raise ValueError(f"unknown polarization {polarization!r}")


def te_weight(k_in: np.ndarray, normal: np.ndarray, horizontal_face: np.ndarray) -> np.ndarray:
    """1.0 where a vertically polarized field is treated as TE at a surface, else 0.0 (TM).

    The incident field is vertical projected orthogonal to ``k_in``; the
    polarization whose power share is larger is selected.  Coefficients are
    never blended, since TE and TM have opposite signs near a conductor.
    """
    k = np.atleast_2d(k_in)
    n = np.atleast_2d(normal)
    s = np.cross(k, n)
    s_norm = np.linalg.norm(s, axis=1)
    e = np.array([0.0, 0.0, 1.0]) - k[:, 2:3] * k
    e_norm = np.linalg.norm(e, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        share = (s[:, 2] / s_norm) ** 2 / e_norm**2 * (1 - k[:, 2] ** 2)
    share = np.nan_to_num(share, nan=0.0)
    w = (share >= 0.5).astype(float)
    degenerate = (s_norm < 1e-12) | (e_norm < 1e-12)
    w[degenerate] = np.where(np.asarray(horizontal_face)[degenerate], 0.0, 1.0)
    return w


def free_space_factor(length, wavelength):
    k = 2 * np.pi / wavelength
    return wavelength / (4 * np.pi * np.asarray(length)) * np.exp(-1j * k * np.asarray(length))


# ----------------------------------------------------------------------
# bulk path storage

@dataclass(eq=False)
class PathSet:
    """Structure-of-arrays path store for many receivers.

    ``faces``/``points``/``cos_inc``/``te_w`` are padded to the widest path
    with ``-1`` faces.  ``diffuse_geom`` is nonzero only for diffuse paths and
    holds the Lambertian factor without the material term.
    """

    rx: np.ndarray
    faces: np.ndarray
    points: np.ndarray
    cos_inc: np.ndarray
    te_w: np.ndarray
    length: np.ndarray
    dep: np.ndarray
    arr: np.ndarray
    diffuse: np.ndarray
    diffuse_geom: np.ndarray
    tube: np.ndarray

    @classmethod
    def empty(cls, depth: int = 1) -> "PathSet":
        return cls(np.zeros(0, int), np.full((0, depth), -1), np.zeros((0, depth, 3)), np.ones((0, depth)),
                   np.zeros((0, depth)), np.zeros(0), np.zeros((0, 3)), np.zeros((0, 3)),
                   np.zeros(0, bool), np.zeros(0), np.zeros(0))

    def __len__(self):
        return len(self.rx)

    @property
    def n_interactions(self) -> np.ndarray:
        return (self.faces >= 0).sum(axis=1)

    def subset(self, mask) -> "PathSet":
        return PathSet(*(getattr(self, f)[mask] for f in _PATHSET_FIELDS))

    def padded(self, depth: int) -> "PathSet":
        cur = self.faces.shape[1]
        if cur >= depth:
            return self
        extra = depth - cur
        n = len(self)
        return replace(
            self,
            faces=np.concatenate([self.faces, np.full((n, extra), -1)], axis=1),
            points=np.concatenate([self.points, np.zeros((n, extra, 3))], axis=1),
            cos_inc=np.concatenate([self.cos_inc, np.ones((n, extra))], axis=1),
            te_w=np.concatenate([self.te_w, np.zeros((n, extra))], axis=1),
        )

    @staticmethod
    def concat(sets: list["PathSet"]) -> "PathSet":
        sets = [s for s in sets if s is not None]
        if not sets:
            return PathSet.empty()
        depth = max(s.faces.shape[1] for s in sets)
        sets = [s.padded(depth) for s in sets]
        return PathSet(*(np.concatenate([getattr(s, f) for s in sets]) for f in _PATHSET_FIELDS))

    def sorted(self) -> "PathSet":
        """Canonical order: receiver, then diffuse flag, bounce count, face sequence, length."""
        keys = [self.length, *(self.faces[:, i] for i in reversed(range(self.faces.shape[1]))),
                self.n_interactions, self.diffuse, self.rx]
        return self.subset(np.lexsort(keys))

    def interaction_coefficients(self, eps_face, sigma_face, s_face, frequency):
        """Per-interaction complex factors, shape (P, depth); padding gives 1."""
        f = self.faces
        valid = f >= 0
        fi = np.where(valid, f, 0)
        eps_c = complex_permittivity(np.asarray(eps_face)[fi], np.asarray(sigma_face)[fi], frequency)
        te, tm = fresnel_te_tm(eps_c, np.clip(self.cos_inc, 1e-12, 1.0))
        gamma = self.te_w * te + (1 - self.te_w) * tm
        s = np.asarray(s_face, dtype=float)[fi]
        coef = np.sqrt(1 - s) * gamma
        dif = self.diffuse[:, None] & valid
        coef = np.where(dif, np.sqrt(s) * self.diffuse_geom[:, None], coef)
        return np.where(valid, coef, 1.0 + 0j)

    def amplitudes(self, eps_face, sigma_face, s_face, frequency) -> np.ndarray:
        wl = C0 / frequency
        coef = self.interaction_coefficients(eps_face, sigma_face, s_face, frequency)
        return free_space_factor(self.length, wl) * np.prod(coef, axis=1)


_PATHSET_FIELDS = ("rx", "faces", "points", "cos_inc", "te_w", "length", "dep", "arr", "diffuse",
                   "diffuse_geom", "tube")


def material_arrays(scene: Scene, overrides: dict[str, Material] | None = None):
    """Per-face (eps_r, sigma, scatter_s) arrays."""
    mats = dict(scene.materials)
    if overrides:
        mats.update(overrides)
    eps = np.array([mats[m].eps_r for m in scene.face_material])
    sig = np.array([mats[m].sigma for m in scene.face_material])
    s = np.array([mats[m].scatter_s for m in scene.face_material])
    return eps, sig, s


def pathset_to_raypaths(scene: Scene, ps: PathSet, tx: np.ndarray, receivers: np.ndarray,
                        amplitudes: np.ndarray) -> list[RayPath]:
    out = []
    for p in range(len(ps)):
        rx = receivers[ps.rx[p]]
        inter = [Interaction(Kind.LAUNCH, np.asarray(tx, dtype=float).copy())]
        prev = np.asarray(tx, dtype=float)
        kind = Kind.DIFFUSE if ps.diffuse[p] else Kind.SPECULAR
        for j in range(ps.faces.shape[1]):
            f = ps.faces[p, j]
            if f < 0:
                break
            pt = ps.points[p, j].copy()
            k_in = pt - prev
            n = scene.oriented_normals(np.array([f]), k_in[None])[0]
            inter.append(Interaction(kind, pt, n, scene.face_material[f], int(f)))
            prev = pt
        inter.append(Interaction(Kind.ARRIVAL, np.asarray(rx, dtype=float).copy()))
        out.append(RayPath(inter, ps.dep[p].copy(), ps.arr[p].copy(), complex(amplitudes[p]),
                           float(ps.length[p]), float(ps.tube[p]) if ps.diffuse[p] else None))
    return out


# ----------------------------------------------------------------------
# ray bundles and capture

@dataclass(eq=False)
class RayBundle:
    """All segments of a shot ray lattice beyond the first (LoS) leg."""

    origin: np.ndarray
    direction: np.ndarray
    t: np.ndarray
    start_len: np.ndarray
    key: np.ndarray
    spacing: float
    base: int


def _lambertian_geom(tube, cos_s, d1, d2):
    # field factor relative to the free-space term over the full length d1 + d2
    g = np.sqrt(tube * np.clip(cos_s, 0.0, None) / np.pi) * (d1 + d2) / d2
    return np.minimum(g, 1.0)


class Tracer:
    """Shoot-and-bounce tracer bound to one scene and configuration.

    Ray bundles are cached per transmitter position so many receivers can be
    served from one launch.
    """

    def __init__(self, scene: Scene, cfg: TraceConfig, cache_size: int = 8):
        self.scene = scene
        self.cfg = cfg
        self._bundles: OrderedDict = OrderedDict()
        self._scatter: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        (x0, y0), (x1, y1) = scene.bounds
        top = max([b.height for b in scene.buildings], default=0.0)
        self.max_range = 4.0 * float(np.hypot(x1 - x0, y1 - y0)) + 2.0 * top + 100.0

    # -- validation ---------------------------------------------------
    def check_endpoint(self, p, name="point"):
        p = np.asarray(p, dtype=float)
        if p[2] < 0:
            raise TraceError(f"{name} {p.tolist()} is below ground")
        if self.scene.inside_building(p[None])[0]:
            raise TraceError(f"{name} {p.tolist()} is inside a building")

    # -- launching ----------------------------------------------------
    def _cached(self, cache, key, make):
        if key in cache:
            cache.move_to_end(key)
            return cache[key]
        val = make()
        cache[key] = val
        while len(cache) > self._cache_size:
            cache.popitem(last=False)
        return val

    def bundle(self, tx) -> RayBundle:
        tx = np.asarray(tx, dtype=float)
        return self._cached(self._bundles, tuple(np.round(tx, 9)), lambda: self._shoot(tx))

    def _shoot(self, tx) -> RayBundle:
        sc, cfg = self.scene, self.cfg
        n = cfg.ray_count
        base = sc.n_faces + 1
        if base ** cfg.max_bounces >= 2**62:
            raise ValueError("scene has too many faces for the sequence key encoding")
        d = fibonacci_directions(n)
        o = np.repeat(tx[None], n, axis=0)
        key = np.zeros(n, dtype=np.int64)
        length = np.zeros(n)
        ignore = np.full(n, -1)
        alive = np.arange(n)
        segs = []
        for depth in range(cfg.max_bounces + 1):
            t, f = sc.intersect(o, d, self.max_range, ignore)
            if depth > 0:
                segs.append((o, d, np.minimum(t, self.max_range), length, key))
            if depth == cfg.max_bounces:
                break
            hit = f >= 0
            o, d, t, f = o[hit], d[hit], t[hit], f[hit]
            length, key, alive = length[hit] + t, key[hit] * base + (f + 1), alive[hit]
            o = o + t[:, None] * d
            n_face = sc.face_normal[f]
            d = reflect_dir(d, n_face)
            d /= np.linalg.norm(d, axis=1, keepdims=True)
            ignore = f
            if len(o) == 0:
                break
        cat = [np.concatenate(x) for x in zip(*segs)] if segs else [np.zeros((0, 3))] * 2 + [np.zeros(0)] * 3
        return RayBundle(cat[0], cat[1], cat[2], cat[3], cat[4].astype(np.int64), lattice_spacing(n), base)

    def _radius(self, dist):
        if self.cfg.rx_capture_radius is not None:
            return np.full(np.shape(dist), float(self.cfg.rx_capture_radius))
        return self.cfg.capture_scale * dist * self._spacing / 2.0

    # -- discovery ----------------------------------------------------
    def discover(self, tx, receivers) -> tuple[np.ndarray, np.ndarray]:
        """Unique (receiver index, sequence key) pairs captured by the bundle."""
        b = self.bundle(tx)
        self._spacing = b.spacing
        R = np.atleast_2d(np.asarray(receivers, dtype=float))
        if len(b.t) == 0 or len(R) == 0:
            return np.zeros(0, int), np.zeros(0, np.int64)
        if len(R) <= 16:
            pairs = self._capture_brute(b, R)
        else:
            pairs = self._capture_binned(b, R)
        if not pairs:
            return np.zeros(0, int), np.zeros(0, np.int64)
        rx = np.concatenate([p[0] for p in pairs])
        key = np.concatenate([p[1] for p in pairs])
        both = np.unique(np.stack([rx.astype(np.int64), key], axis=1), axis=0)
        return both[:, 0].astype(int), both[:, 1]

    def _capture_brute(self, b: RayBundle, R):
        out = []
        for i, r in enumerate(R):
            v = r[None] - b.origin
            s = np.einsum("ij,ij->i", v, b.direction)
            perp = np.linalg.norm(v - s[:, None] * b.direction, axis=1)
            hit = (s > 0) & (s <= b.t) & (perp <= self._radius(b.start_len + s))
            if hit.any():
                out.append((np.full(hit.sum(), i), b.key[hit]))
        return out

    def _capture_binned(self, b: RayBundle, R, chunk=40_000):
        cell = 4.0
        lo = R[:, :2].min(axis=0) - cell
        nbx, nby = (np.floor((R[:, :2].max(axis=0) - lo) / cell).astype(int) + 2)
        rb = np.floor((R[:, :2] - lo) / cell).astype(int)
        rbin = rb[:, 1] * nbx + rb[:, 0]
        order = np.argsort(rbin, kind="stable")
        counts = np.bincount(rbin, minlength=nbx * nby)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        zlo, zhi = R[:, 2].min(), R[:, 2].max()
        out = []
        for c0 in range(0, len(b.t), chunk):
            sl = slice(c0, c0 + chunk)
            o, d, t, L0, key = b.origin[sl], b.direction[sl], b.t[sl], b.start_len[sl], b.key[sl]
            r_end = self._radius(L0 + t)
            dz = d[:, 2]
            with np.errstate(divide="ignore", invalid="ignore"):
                sa = (zlo - r_end - o[:, 2]) / dz
                sb = (zhi + r_end - o[:, 2]) / dz
            flat = np.abs(dz) < 1e-12
            s0 = np.where(flat, 0.0, np.minimum(sa, sb))
            s1 = np.where(flat, t, np.maximum(sa, sb))
            inz = (o[:, 2] >= zlo - r_end) & (o[:, 2] <= zhi + r_end)
            s0 = np.clip(s0, 0.0, t)
            s1 = np.clip(s1, 0.0, t)
            keep = np.flatnonzero((s1 > s0) & (~flat | inz))
            if len(keep) == 0:
                continue
            s0, s1 = s0[keep], s1[keep]
            npc = np.maximum(1, np.ceil((s1 - s0) / cell).astype(int))
            seg = np.repeat(keep, npc)
            first = np.repeat(np.cumsum(npc) - npc, npc)
            j = np.arange(len(seg)) - first
            step = np.repeat((s1 - s0) / npc, npc)
            pa = np.repeat(s0, npc) + j * step
            pb = pa + step
            xa = o[seg, :2] + pa[:, None] * d[seg, :2]
            xb = o[seg, :2] + pb[:, None] * d[seg, :2]
            rr = r_end[seg][:, None]
            bmin = np.floor((np.minimum(xa, xb) - rr - lo) / cell).astype(int)
            bmax = np.floor((np.maximum(xa, xb) + rr - lo) / cell).astype(int)
            bmin = np.clip(bmin, 0, [nbx - 1, nby - 1])
            bmax = np.clip(bmax, 0, [nbx - 1, nby - 1])
            wx = bmax[:, 0] - bmin[:, 0] + 1
            wy = bmax[:, 1] - bmin[:, 1] + 1
            nb = wx * wy
            piece = np.repeat(np.arange(len(seg)), nb)
            k = np.arange(len(piece)) - np.repeat(np.cumsum(nb) - nb, nb)
            bx = bmin[piece, 0] + k % wx[piece]
            by = bmin[piece, 1] + k // wx[piece]
            bins = by * nbx + bx
            cnt = counts[bins]
            nz = cnt > 0
            piece, bins, cnt = piece[nz], bins[nz], cnt[nz]
            if len(piece) == 0:
                continue
            # pieces of one segment may share bins; dedupe (segment, bin)
            sb_pairs = np.unique(np.stack([seg[piece], bins], axis=1), axis=0)
            sg, bins = sb_pairs[:, 0], sb_pairs[:, 1]
            cnt = counts[bins]
            rsg = np.repeat(sg, cnt)
            kk = np.arange(len(rsg)) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            rix = order[np.repeat(starts[bins], cnt) + kk]
            v = R[rix] - o[rsg]
            s = np.einsum("ij,ij->i", v, d[rsg])
            perp = np.linalg.norm(v - s[:, None] * d[rsg], axis=1)
            hit = (s > 0) & (s <= t[rsg]) & (perp <= self._radius(L0[rsg] + s))
            if hit.any():
                out.append((rix[hit], key[rsg[hit]]))
        return out

    def decode(self, key: int) -> tuple[int, ...]:
        base = self.scene.n_faces + 1
        faces = []
        key = int(key)
        while key:
            key, f = divmod(key, base)
            faces.append(f - 1)
        return tuple(reversed(faces))

    # -- exact paths --------------------------------------------------
    def refine(self, tx, receivers, faces: tuple[int, ...]) -> PathSet:
        """Image-method paths for one face sequence to many receivers."""
        sc = self.scene
        tx = np.asarray(tx, dtype=float)
        R = np.atleast_2d(receivers)
        K, m = len(R), len(faces)
        q = sc.face_point[list(faces)]
        n = sc.face_normal[list(faces)]
        images = [tx]
        for i in range(m):
            p = images[-1]
            images.append(p - 2.0 * np.dot(p - q[i], n[i]) * n[i])
        valid = np.ones(K, dtype=bool)
        pts = np.zeros((K, m, 3))
        nxt = R.copy()
        for i in reversed(range(m)):
            img = images[i + 1]
            dv = img[None] - nxt
            denom = dv @ n[i]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = ((q[i][None] - nxt) @ n[i]) / denom
            valid &= np.isfinite(s) & (s > 1e-9) & (s < 1 - 1e-9)
            Q = nxt + np.nan_to_num(s)[:, None] * dv
            pts[:, i] = Q
            nxt = Q
        if not valid.any():
            return None
        idx = np.flatnonzero(valid)
        R, pts = R[idx], pts[idx]
        chain = [np.repeat(tx[None], len(idx), axis=0)] + [pts[:, i] for i in range(m)] + [R]
        ok = np.ones(len(idx), dtype=bool)
        for i in range(m):
            f = faces[i]
            ok &= sc.face_contains(np.full(len(idx), f), pts[:, i])
            ok &= (chain[i] - q[i]) @ n[i] > 1e-9
            ok &= (chain[i + 2] - q[i]) @ n[i] > 1e-9
        for i in range(m + 1):
            if not ok.any():
                break
            sel = np.flatnonzero(ok)
            ok[sel] &= sc.segments_clear(chain[i][sel], chain[i + 1][sel])
        if not ok.any():
            return None
        sel = np.flatnonzero(ok)
        chain = [c[sel] for c in chain]
        seglens = [np.linalg.norm(chain[i + 1] - chain[i], axis=1) for i in range(m + 1)]
        cos_inc = np.zeros((len(sel), m))
        tew = np.zeros((len(sel), m))
        for i in range(m):
            k_in = (chain[i + 1] - chain[i]) / seglens[i][:, None]
            cos_inc[:, i] = np.abs(k_in @ n[i])
            horiz = np.full(len(sel), sc.face_kind[faces[i]] != WALL)
            tew[:, i] = te_weight(k_in, np.repeat(n[i][None], len(sel), axis=0), horiz)
        length = np.sum(seglens, axis=0)
        P = len(sel)
        return PathSet(
            rx=idx[sel],
            faces=np.repeat(np.array(faces)[None], P, axis=0),
            points=np.stack(chain[1:m + 1], axis=1),
            cos_inc=cos_inc,
            te_w=tew,
            length=length,
            dep=(chain[1] - chain[0]) / seglens[0][:, None],
            arr=(chain[-1] - chain[-2]) / seglens[-1][:, None],
            diffuse=np.zeros(P, bool),
            diffuse_geom=np.zeros(P),
            tube=np.zeros(P),
        )

    def los(self, tx, receivers) -> PathSet:
        tx = np.asarray(tx, dtype=float)
        R = np.atleast_2d(receivers)
        vec = R - tx[None]
        dist = np.linalg.norm(vec, axis=1)
        vis = (dist > 0) & self.scene.segments_clear(np.repeat(tx[None], len(R), axis=0), R)
        idx = np.flatnonzero(vis)
        P = len(idx)
        u = vec[idx] / dist[idx, None]
        return PathSet(idx, np.full((P, 1), -1), np.zeros((P, 1, 3)), np.ones((P, 1)), np.zeros((P, 1)),
                       dist[idx], u, u.copy(), np.zeros(P, bool), np.zeros(P), np.zeros(P))

    def specular(self, tx, receivers) -> PathSet:
        """LoS plus refined specular paths from ``tx`` to every receiver."""
        R = np.atleast_2d(np.asarray(receivers, dtype=float))
        parts = [self.los(tx, R)]
        rx, keys = self.discover(tx, R)
        if len(keys):
            order = np.lexsort((rx, keys))
            rx, keys = rx[order], keys[order]
            ukeys, first = np.unique(keys, return_index=True)
            bounds = list(first[1:]) + [len(keys)]
            for key, a, b in zip(ukeys, first, bounds):
                sub = rx[a:b]
                ps = self.refine(tx, R[sub], self.decode(key))
                if ps is not None:
                    ps.rx = sub[ps.rx]
                    parts.append(ps)
        return PathSet.concat(parts).sorted()

    # -- diffuse ------------------------------------------------------
    def scatter_hits(self, tx):
        """First hits of the scatter lattice: points, faces, tube solid angle."""
        tx = np.asarray(tx, dtype=float)

        def make():
            n = self.cfg.scatter_rays
            d = fibonacci_directions(n)
            t, f = self.scene.intersect(np.repeat(tx[None], n, axis=0), d, self.max_range)
            hit = f >= 0
            return tx[None] + t[hit, None] * d[hit], f[hit], d[hit], 4 * np.pi / n

        return self._cached(self._scatter, tuple(np.round(tx, 9)), make)

    def diffuse(self, tx, receivers, face_mask=None, chunk=200_000) -> PathSet:
        """Single-bounce diffuse paths through every visible lattice hit point."""
        sc = self.scene
        tx = np.asarray(tx, dtype=float)
        R = np.atleast_2d(np.asarray(receivers, dtype=float))
        pts, faces, dirs, tube = self.scatter_hits(tx)
        if face_mask is not None:
            keep = np.asarray(face_mask)[faces]
            pts, faces, dirs = pts[keep], faces[keep], dirs[keep]
        if len(pts) == 0:
            return None
        n_out = sc.face_normal[faces]
        flip = np.einsum("ij,ij->i", n_out, dirs) > 0
        n_out[flip] *= -1
        parts = []
        H = len(pts)
        for r_i in range(len(R)):
            for h0 in range(0, H, chunk):
                hs = slice(h0, h0 + chunk)
                v = R[r_i][None] - pts[hs]
                d2 = np.linalg.norm(v, axis=1)
                cos_s = np.einsum("ij,ij->i", v, n_out[hs]) / np.maximum(d2, 1e-12)
                cand = np.flatnonzero((cos_s > 1e-9) & (d2 > 1e-6))
                if len(cand) == 0:
                    continue
                clear = sc.segments_clear(pts[hs][cand], np.repeat(R[r_i][None], len(cand), axis=0))
                cand = cand[clear]
                if len(cand) == 0:
                    continue
                gi = cand + h0
                p = pts[gi]
                d1 = np.linalg.norm(p - tx[None], axis=1)
                dd2 = d2[cand]
                P = len(gi)
                cos_i = np.abs(np.einsum("ij,ij->i", dirs[gi], n_out[gi]))
                parts.append(PathSet(
                    rx=np.full(P, r_i),
                    faces=faces[gi][:, None],
                    points=p[:, None, :],
                    cos_inc=cos_i[:, None],
                    te_w=np.zeros((P, 1)),
                    length=d1 + dd2,
                    dep=dirs[gi].copy(),
                    arr=v[cand] / dd2[:, None],
                    diffuse=np.ones(P, bool),
                    diffuse_geom=_lambertian_geom(tube, cos_s[cand], d1, dd2),
                    tube=np.full(P, tube),
                ))
        if not parts:
            return None
        return PathSet.concat(parts)

    def paths(self, tx, receivers, diffuse: bool | None = None, face_mask=None) -> PathSet:
        ps = self.specular(tx, receivers)
        if self.cfg.diffuse if diffuse is None else diffuse:
            dps = self.diffuse(tx, receivers, face_mask)
            ps = PathSet.concat([ps, dps]).sorted()
        return ps


# ----------------------------------------------------------------------
# single-link API

def _scene_material_arrays(scene, materials=None):
    return material_arrays(scene, materials)


def trace_paths(scene: Scene, tx, rx, cfg: TraceConfig, tracer: Tracer | None = None) -> list[RayPath]:
    """LoS and specular multi-bounce paths between two points."""
    tracer = tracer or Tracer(scene, cfg)
    tracer.check_endpoint(tx, "tx")
    tracer.check_endpoint(rx, "rx")
    R = np.asarray(rx, dtype=float)[None]
    ps = tracer.specular(tx, R)
    amps = ps.amplitudes(*material_arrays(scene), cfg.frequency)
    return pathset_to_raypaths(scene, ps, np.asarray(tx, float), R, amps)


def trace_scatter_single(scene: Scene, tx, rx, cfg: TraceConfig, tracer: Tracer | None = None) -> list[RayPath]:
    """Single-bounce diffuse paths via surfaces with a nonzero scattering coefficient."""
    tracer = tracer or Tracer(scene, cfg)
    tracer.check_endpoint(tx, "tx")
    tracer.check_endpoint(rx, "rx")
    eps, sig, s = material_arrays(scene)
    R = np.asarray(rx, dtype=float)[None]
    ps = tracer.diffuse(tx, R, face_mask=s > 0)
    if ps is None:
        return []
    ps = ps.sorted()
    amps = ps.amplitudes(eps, sig, s, cfg.frequency)
    return pathset_to_raypaths(scene, ps, np.asarray(tx, float), R, amps)


def path_amplitude(path: RayPath, frequency: float, materials: dict[str, Material]) -> complex:
    """Field transfer of a path: free-space term times every interaction factor."""
    wl = C0 / frequency
    amp = complex(free_space_factor(path.length, wl))
    pts = path.interactions
    for j in range(1, len(pts) - 1):
        it = pts[j]
        if it.material_id not in materials:
            raise KeyError(f"unresolved material {it.material_id!r}")
        mat = materials[it.material_id]
        if it.kind is Kind.SPECULAR:
            k_in = it.point - pts[j - 1].point
            k_in = k_in / np.linalg.norm(k_in)
            cos_i = min(abs(float(k_in @ it.normal)), 1.0)
            horizontal = abs(it.normal[2]) > 0.5
            w = te_weight(k_in[None], it.normal[None], np.array([horizontal]))[0]
            eps_c = complex_permittivity(mat.eps_r, mat.sigma, frequency)
            te, tm = fresnel_te_tm(eps_c, max(cos_i, 1e-12))
            amp *= np.sqrt(1 - mat.scatter_s) * complex(w * te + (1 - w) * tm)
        elif it.kind is Kind.DIFFUSE:
            if path.tube_solid_angle is None:
                raise ValueError("diffuse path without a tube solid angle")
            out = pts[j + 1].point - it.point
            d2 = float(np.linalg.norm(out))
            d1 = float(np.linalg.norm(it.point - pts[j - 1].point))
            cos_s = float(out @ it.normal) / d2
            amp *= np.sqrt(mat.scatter_s) * float(_lambertian_geom(path.tube_solid_angle, cos_s, d1, d2))
    return amp
