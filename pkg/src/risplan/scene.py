"""Urban scene model: extruded building footprints, materials, tile grid, geometric queries.

Faces are indexed in one flat space so ray interactions can be recorded as
integers: walls first, then one roof per building, then the ground plane.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Segments passing within this distance of geometry are treated as blocked.
GRAZE_TOL = 1e-6
SNAP_TOL = 0.5

WALL, ROOF, GROUND = 0, 1, 2


class SceneError(ValueError):
    """Raised when a scene file is malformed or violates an invariant."""


class InvalidCandidate(ValueError):
    """Raised when a point cannot be snapped onto a building facade."""


@dataclass(frozen=True)
class Material:
    id: str
    eps_r: float
    sigma: float
    scatter_s: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.eps_r) and self.eps_r >= 1.0):
            raise SceneError(f"material {self.id!r}: eps_r must be >= 1, got {self.eps_r}")
        if not (np.isfinite(self.sigma) and self.sigma >= 0.0):
            raise SceneError(f"material {self.id!r}: sigma must be >= 0, got {self.sigma}")
        if not (0.0 <= self.scatter_s <= 1.0):
            raise SceneError(f"material {self.id!r}: scatter_s must lie in [0, 1], got {self.scatter_s}")


@dataclass(eq=False)
class Building:
    id: str
    footprint: np.ndarray
    height: float
    material_id: str
    group_id: str | None = None

    def __post_init__(self):
        fp = np.asarray(self.footprint, dtype=float)
        if fp.ndim != 2 or fp.shape[1] != 2 or len(fp) < 3:
            raise SceneError(f"building {self.id!r}: footprint needs >= 3 [x, y] vertices")
        if np.allclose(fp[0], fp[-1]) and len(fp) > 3:
            fp = fp[:-1]
        if not np.all(np.isfinite(fp)):
            raise SceneError(f"building {self.id!r}: non-finite footprint coordinates")
        if not (np.isfinite(self.height) and self.height > 0):
            raise SceneError(f"building {self.id!r}: height must be > 0, got {self.height}")
        area = polygon_area(fp)
        if abs(area) < 1e-9:
            raise SceneError(f"building {self.id!r}: degenerate footprint")
        if not polygon_is_simple(fp):
            raise SceneError(f"building {self.id!r}: footprint is self-intersecting")
        if area < 0:
            fp = fp[::-1].copy()
        self.footprint = fp
        self.height = float(self.height)

    @property
    def group(self) -> str:
        """Calibration group label; buildings without one form their own group."""
        return self.group_id if self.group_id is not None else self.id


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _segments_cross(p, q, r, s) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    o1, o2, o3, o4 = orient(p, q, r), orient(p, q, s), orient(r, s, p), orient(r, s, q)
    if o1 != o2 and o3 != o4:
        return True
    # colinear overlap
    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (o1 == 0 and on_seg(p, q, r)) or (o2 == 0 and on_seg(p, q, s)) or \
        (o3 == 0 and on_seg(r, s, p)) or (o4 == 0 and on_seg(r, s, q))


def polygon_is_simple(poly: np.ndarray) -> bool:
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_cross(a, b, poly[j], poly[(j + 1) % n]):
                return False
    return True


def points_in_polygon(x: np.ndarray, y: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Crossing-number test, vectorized over points."""
    inside = np.zeros(np.shape(x), dtype=bool)
    px, py = poly[:, 0], poly[:, 1]
    qx, qy = np.roll(px, -1), np.roll(py, -1)
    for x0, y0, x1, y1 in zip(px, py, qx, qy):
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xc)
    return inside


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    normal: np.ndarray
    material_id: str
    building_id: str | None
    face: int
    distance: float


@dataclass(frozen=True)
class FacadeSnap:
    center: np.ndarray
    outward_normal: np.ndarray
    building_id: str
    wall: int


@dataclass(eq=False)
class Scene:
    """Immutable-after-construction urban scene.

    ``bounds`` is ``((xmin, ymin), (xmax, ymax))``.  Construction validates
    material references and builds the flat face tables used by every query.
    """

    buildings: list[Building]
    materials: dict[str, Material]
    bounds: tuple[tuple[float, float], tuple[float, float]]
    ground_material_id: str
    geo_origin: tuple[float, float] | None = None
    _faces: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        (x0, y0), (x1, y1) = self.bounds
        if not (x1 > x0 and y1 > y0):
            raise SceneError(f"invalid bounds {self.bounds}")
        self.bounds = ((float(x0), float(y0)), (float(x1), float(y1)))
        if self.ground_material_id not in self.materials:
            raise SceneError(f"ground material {self.ground_material_id!r} is not defined")
        seen = set()
        for b in self.buildings:
            if b.id in seen:
                raise SceneError(f"building {b.id!r}: duplicate id")
            seen.add(b.id)
            if b.material_id not in self.materials:
                raise SceneError(f"building {b.id!r}: unknown material {b.material_id!r}")
            fp = b.footprint
            if fp[:, 0].min() < x0 - 1e-9 or fp[:, 0].max() > x1 + 1e-9 or \
                    fp[:, 1].min() < y0 - 1e-9 or fp[:, 1].max() > y1 + 1e-9:
                raise SceneError(f"building {b.id!r}: footprint outside scene bounds")
        self._build_faces()

    # ------------------------------------------------------------------
    # face tables
    def _build_faces(self):
        a, b, h, bid = [], [], [], []
        for i, bld in enumerate(self.buildings):
            fp = bld.footprint
            for k in range(len(fp)):
                a.append(fp[k])
                b.append(fp[(k + 1) % len(fp)])
                h.append(bld.height)
                bid.append(i)
        a = np.array(a, dtype=float).reshape(-1, 2)
        b = np.array(b, dtype=float).reshape(-1, 2)
        e = b - a
        length = np.hypot(e[:, 0], e[:, 1])
        # CCW footprint: the outward normal is the edge direction rotated clockwise
        n2 = np.stack([e[:, 1], -e[:, 0]], axis=1) / length[:, None]
        nb = len(self.buildings)
        self.n_walls = len(a)
        self.n_faces = self.n_walls + nb + 1
        self.ground_face = self.n_walls + nb
        self.wall_a, self.wall_b, self.wall_e = a, b, e
        self.wall_len = length
        self.wall_h = np.array(h, dtype=float)
        self.wall_n = n2
        self.wall_building = np.array(bid, dtype=int)
        self.building_height = np.array([bl.height for bl in self.buildings], dtype=float)
        lo = [bl.footprint.min(axis=0) for bl in self.buildings]
        hi = [bl.footprint.max(axis=0) for bl in self.buildings]
        self.building_lo = np.array(lo).reshape(-1, 2)
        self.building_hi = np.array(hi).reshape(-1, 2)

        kind = np.full(self.n_faces, WALL)
        kind[self.n_walls:self.ground_face] = ROOF
        kind[self.ground_face] = GROUND
        self.face_kind = kind
        fb = np.concatenate([self.wall_building, np.arange(nb), [-1]])
        self.face_building = fb
        mats = [self.buildings[i].material_id if i >= 0 else self.ground_material_id for i in fb]
        self.face_material = mats
        # plane of every face: point and outward unit normal
        normals = np.zeros((self.n_faces, 3))
        normals[:self.n_walls, :2] = n2
        normals[self.n_walls:, 2] = 1.0
        points = np.zeros((self.n_faces, 3))
        points[:self.n_walls, :2] = a
        points[self.n_walls:self.ground_face, 2] = self.building_height
        if nb:
            points[self.n_walls:self.ground_face, :2] = [bl.footprint[0] for bl in self.buildings]
        self.face_normal = normals
        self.face_point = points

    def face_material_index(self, order: list[str] | None = None) -> np.ndarray:
        """Per-face index into ``order`` (defaults to sorted material ids)."""
        order = sorted(self.materials) if order is None else order
        lookup = {m: i for i, m in enumerate(order)}
        return np.array([lookup[m] for m in self.face_material], dtype=int)

    def face_label(self, face: int) -> str:
        k = self.face_kind[face]
        if k == GROUND:
            return "ground"
        if k == ROOF:
            return f"roof:{self.buildings[face - self.n_walls].id}"
        bi = self.wall_building[face]
        first = np.flatnonzero(self.wall_building == bi)[0]
        return f"wall:{self.buildings[bi].id}:{face - first}"

    def building_of_face(self, face: int) -> str | None:
        bi = self.face_building[face]
        return None if bi < 0 else self.buildings[bi].id

    # ------------------------------------------------------------------
    # batched geometric kernels
    def inside_building(self, points: np.ndarray) -> np.ndarray:
        """True for points strictly inside some building volume."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros(len(p), dtype=bool)
        for i, bl in enumerate(self.buildings):
            lo, hi = self.building_lo[i], self.building_hi[i]
            cand = (p[:, 0] > lo[0]) & (p[:, 0] < hi[0]) & (p[:, 1] > lo[1]) & (p[:, 1] < hi[1]) \
                & (p[:, 2] < bl.height) & (p[:, 2] >= 0)
            if cand.any():
                idx = np.flatnonzero(cand)
                out[idx] |= points_in_polygon(p[idx, 0], p[idx, 1], bl.footprint)
        return out

    def footprint_contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        out = np.zeros(len(xy), dtype=bool)
        for i, bl in enumerate(self.buildings):
            lo, hi = self.building_lo[i], self.building_hi[i]
            cand = (xy[:, 0] > lo[0]) & (xy[:, 0] < hi[0]) & (xy[:, 1] > lo[1]) & (xy[:, 1] < hi[1])
            if cand.any():
                idx = np.flatnonzero(cand)
                out[idx] |= points_in_polygon(xy[idx, 0], xy[idx, 1], bl.footprint)
        return out

    def intersect(self, origins, dirs, max_range=np.inf, ignore_face=None, chunk=4096):
        """Nearest face hit for a batch of rays.

        Returns ``(t, face)`` with ``t = inf`` and ``face = -1`` for misses.
        ``ignore_face`` (per ray, -1 for none) skips the face a ray just left.
        """
        o = np.atleast_2d(np.asarray(origins, dtype=float))
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        n = len(o)
        if ignore_face is None:
            ignore_face = np.full(n, -1)
        t_out = np.full(n, np.inf)
        f_out = np.full(n, -1)
        step = max(1, chunk * 64 // max(self.n_walls, 64))
        for s in range(0, n, step):
            sl = slice(s, s + step)
            t, f = self._intersect_chunk(o[sl], d[sl], max_range, ignore_face[sl])
            t_out[sl], f_out[sl] = t, f
        return t_out, f_out

    def _intersect_chunk(self, o, d, max_range, ignore):
        n = len(o)
        best_t = np.full(n, float(max_range))
        best_f = np.full(n, -1)
        eps = 1e-7
        if self.n_walls:
            e = self.wall_e[None, :, :]
            ao = self.wall_a[None, :, :] - o[:, None, :2]
            dx, dy = d[:, 0:1], d[:, 1:2]
            denom = dx * e[..., 1] - dy * e[..., 0]
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                t = (ao[..., 0] * e[..., 1] - ao[..., 1] * e[..., 0]) / denom
                u = (ao[..., 0] * dy - ao[..., 1] * dx) / denom
                z = o[:, 2:3] + t * d[:, 2:3]
            ok = (np.abs(denom) > 1e-12) & (t > eps) & (u >= 0) & (u <= 1) & (z >= 0) & (z <= self.wall_h[None, :])
            ok &= np.arange(self.n_walls)[None, :] != ignore[:, None]
            t = np.where(ok, t, np.inf)
            j = np.argmin(t, axis=1)
            tj = t[np.arange(n), j]
            upd = tj < best_t
            best_t[upd], best_f[upd] = tj[upd], j[upd]
        dz = d[:, 2]
        for i, bl in enumerate(self.buildings):
            face = self.n_walls + i
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (bl.height - o[:, 2]) / dz
                x = o[:, 0] + t * d[:, 0]
                y = o[:, 1] + t * d[:, 1]
            lo, hi = self.building_lo[i], self.building_hi[i]
            cand = (np.abs(dz) > 1e-12) & (t > eps) & (t < best_t) & (ignore != face) & \
                (x >= lo[0]) & (x <= hi[0]) & (y >= lo[1]) & (y <= hi[1])
            if cand.any():
                idx = np.flatnonzero(cand)
                hit = points_in_polygon(x[idx], y[idx], bl.footprint)
                idx = idx[hit]
                best_t[idx], best_f[idx] = t[idx], face
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -o[:, 2] / dz
        cand = (dz < -1e-12) & (t > eps) & (t < best_t) & (ignore != self.ground_face)
        best_t[cand], best_f[cand] = t[cand], self.ground_face
        best_t[best_f < 0] = np.inf
        return best_t, best_f

    def oriented_normals(self, faces: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Face normals flipped to face against the incoming direction."""
        n = self.face_normal[faces]
        flip = np.einsum("ij,ij->i", n, dirs) > 0
        n[flip] *= -1
        return n

    def segments_clear(self, p0, p1, chunk=4096) -> np.ndarray:
        """Visibility of open segments p0->p1 (vectorized)."""
        p0 = np.atleast_2d(np.asarray(p0, dtype=float))
        p1 = np.atleast_2d(np.asarray(p1, dtype=float))
        out = np.ones(len(p0), dtype=bool)
        step = max(1, chunk * 64 // max(self.n_walls, 64))
        for s in range(0, len(p0), step):
            sl = slice(s, s + step)
            out[sl] = self._clear_chunk(p0[sl], p1[sl])
        return out

    def _clear_chunk(self, p0, p1):
        n = len(p0)
        seg = p1 - p0
        seg_len = np.linalg.norm(seg, axis=1)
        clear = (p0[:, 2] >= -GRAZE_TOL) & (p1[:, 2] >= -GRAZE_TOL)
        s_lo = GRAZE_TOL / np.maximum(seg_len, GRAZE_TOL)
        if self.n_walls:
            e = self.wall_e[None, :, :]
            ao = self.wall_a[None, :, :] - p0[:, None, :2]
            dx, dy = seg[:, 0:1], seg[:, 1:2]
            denom = dx * e[..., 1] - dy * e[..., 0]
            L = self.wall_len[None, :]
            scale = seg_len[:, None] * L
            par = np.abs(denom) <= 1e-12 * np.maximum(scale, 1e-300)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                s = (ao[..., 0] * e[..., 1] - ao[..., 1] * e[..., 0]) / denom
                u = (ao[..., 0] * dy - ao[..., 1] * dx) / denom
                z = p0[:, 2:3] + s * seg[:, 2:3]
            u_tol = GRAZE_TOL / L
            hit = ~par & (s > s_lo[:, None]) & (s < 1 - s_lo[:, None]) & (u >= -u_tol) & (u <= 1 + u_tol) & \
                (z >= -GRAZE_TOL) & (z <= self.wall_h[None, :] + GRAZE_TOL)
            if par.any():
                hit |= par & self._parallel_touch(p0, p1, seg_len)
            clear &= ~hit.any(axis=1)
        dz = seg[:, 2]
        for i, bl in enumerate(self.buildings):
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (bl.height - p0[:, 2]) / dz
                x = p0[:, 0] + s * seg[:, 0]
                y = p0[:, 1] + s * seg[:, 1]
            lo, hi = self.building_lo[i], self.building_hi[i]
            cand = clear & (np.abs(dz) > 1e-12) & (s > s_lo) & (s < 1 - s_lo) & \
                (x > lo[0]) & (x < hi[0]) & (y > lo[1]) & (y < hi[1])
            if cand.any():
                idx = np.flatnonzero(cand)
                clear[idx] &= ~points_in_polygon(x[idx], y[idx], bl.footprint)
        return clear

    def _parallel_touch(self, p0, p1, seg_len):
        # segment running along a wall plane within tolerance and overlapping it
        a = self.wall_a[None, :, :]
        e = self.wall_e[None, :, :]
        L = self.wall_len[None, :]
        n2 = self.wall_n[None, :, :]
        d0 = np.einsum("kwj,kwj->kw", p0[:, None, :2] - a, n2)
        d1 = np.einsum("kwj,kwj->kw", p1[:, None, :2] - a, n2)
        near = (np.abs(d0) <= GRAZE_TOL) & (np.abs(d1) <= GRAZE_TOL)
        u0 = np.einsum("kwj,kwj->kw", p0[:, None, :2] - a, e) / L**2
        u1 = np.einsum("kwj,kwj->kw", p1[:, None, :2] - a, e) / L**2
        overlap = (np.maximum(u0, u1) >= 0) & (np.minimum(u0, u1) <= 1)
        low = np.minimum(p0[:, 2], p1[:, 2])[:, None]
        return near & overlap & (low <= self.wall_h[None, :])

    def wall_distance(self, points: np.ndarray):
        """Distance from each point to each wall rectangle and the closest point on it."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ap = p[:, None, :2] - self.wall_a[None, :, :]
        u = np.clip(np.einsum("kwj,wj->kw", ap, self.wall_e) / self.wall_len**2, 0, 1)
        cxy = self.wall_a[None] + u[..., None] * self.wall_e[None]
        cz = np.clip(p[:, None, 2], 0, self.wall_h[None, :])
        c = np.concatenate([cxy, cz[..., None]], axis=2)
        return np.linalg.norm(p[:, None, :] - c, axis=2), c

    def face_contains(self, faces: np.ndarray, points: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        """Whether in-plane points lie on the finite extent of their faces."""
        faces = np.asarray(faces)
        p = np.atleast_2d(points)
        ok = np.zeros(len(p), dtype=bool)
        kind = self.face_kind[faces]
        w = kind == WALL
        if w.any():
            fw = faces[w]
            ap = p[w, :2] - self.wall_a[fw]
            u = np.einsum("ij,ij->i", ap, self.wall_e[fw]) / self.wall_len[fw]
            ok[w] = (u >= -tol) & (u <= self.wall_len[fw] + tol) & (p[w, 2] >= -tol) & \
                (p[w, 2] <= self.wall_h[fw] + tol)
        r = kind == ROOF
        if r.any():
            idx = np.flatnonzero(r)
            for face in np.unique(faces[r]):
                sel = idx[faces[idx] == face]
                poly = self.buildings[face - self.n_walls].footprint
                ok[sel] = points_in_polygon(p[sel, 0], p[sel, 1], poly)
        g = kind == GROUND
        if g.any():
            ok[g] = ~self.footprint_contains(p[g, :2])
        return ok


# ----------------------------------------------------------------------
# scene file IO

def scene_from_dict(data: dict) -> Scene:
    try:
        materials = {}
        for m in data["materials"]:
            mat = Material(str(m["id"]), float(m["eps_r"]), float(m["sigma"]), float(m.get("scatter_s", 0.0)))
            materials[mat.id] = mat
        buildings = [
            Building(str(b["id"]), np.asarray(b["footprint"], dtype=float), float(b["height"]),
                     str(b["material_id"]), b.get("group_id"))
            for b in data["buildings"]
        ]
        bounds = (tuple(data["bounds"]["min"]), tuple(data["bounds"]["max"]))
        ground = str(data["ground_material_id"])
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SceneError):
            raise
        raise SceneError(f"malformed scene: {exc!r}") from exc
    origin = data.get("geo_origin")
    origin = (float(origin["lat"]), float(origin["lon"])) if origin else None
    return Scene(buildings, materials, bounds, ground, geo_origin=origin)


def scene_to_dict(scene: Scene) -> dict:
    out = {
        "materials": [
            {"id": m.id, "eps_r": m.eps_r, "sigma": m.sigma, "scatter_s": m.scatter_s}
            for m in scene.materials.values()
        ],
        "buildings": [],
        "bounds": {"min": list(scene.bounds[0]), "max": list(scene.bounds[1])},
        "ground_material_id": scene.ground_material_id,
    }
    for b in scene.buildings:
        rec = {"id": b.id, "footprint": b.footprint.tolist(), "height": b.height, "material_id": b.material_id}
        if b.group_id is not None:
            rec["group_id"] = b.group_id
        out["buildings"].append(rec)
    if scene.geo_origin is not None:
        out["geo_origin"] = {"lat": scene.geo_origin[0], "lon": scene.geo_origin[1]}
    return out


def load_scene(path) -> Scene:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: not valid JSON ({exc})") from exc
    return scene_from_dict(data)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=2))


def with_materials(scene: Scene, materials: dict[str, Material], assignment: dict[str, str]) -> Scene:
    """Copy of ``scene`` with extra materials and building -> material reassignments."""
    mats = dict(scene.materials)
    mats.update(materials)
    blds = [
        Building(b.id, b.footprint.copy(), b.height, assignment.get(b.id, b.material_id), b.group_id)
        for b in scene.buildings
    ]
    return Scene(blds, mats, scene.bounds, scene.ground_material_id, geo_origin=scene.geo_origin)


# ----------------------------------------------------------------------
# single-query API

def intersect_first(scene: Scene, origin, direction, max_range: float = np.inf) -> Hit | None:
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(d) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    t, f = scene.intersect(o[None], d[None], max_range)
    if f[0] < 0:
        return None
    point = o + t[0] * d
    normal = scene.oriented_normals(f, d[None])[0]
    face = int(f[0])
    return Hit(point, normal, scene.face_material[face], scene.building_of_face(face), face, float(t[0]))


def los_visible(scene: Scene, a, b) -> bool:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(scene.segments_clear(a[None], b[None])[0])


def snap_to_facade(scene: Scene, point, tol: float = SNAP_TOL) -> FacadeSnap:
    p = np.asarray(point, dtype=float)
    if scene.n_walls == 0:
        raise InvalidCandidate("scene has no facades")
    dist, closest = scene.wall_distance(p[None])
    w = int(np.argmin(dist[0]))
    if dist[0, w] > tol:
        raise InvalidCandidate(f"no facade within {tol} m of {p.tolist()} (nearest {dist[0, w]:.3f} m)")
    normal = np.array([scene.wall_n[w, 0], scene.wall_n[w, 1], 0.0])
    return FacadeSnap(closest[0, w], normal, scene.buildings[scene.wall_building[w]].id, w)


# ----------------------------------------------------------------------
# tile grid

@dataclass(frozen=True)
class TileGrid:
    origin: tuple[float, float]
    rows: int
    cols: int
    tile_size: float = 2.0
    ue_height: float = 1.5

    def __post_init__(self):
        if self.tile_size <= 0 or self.rows < 1 or self.cols < 1:
            raise ValueError("tile grid needs positive size and counts")

    @classmethod
    def covering(cls, bounds, tile_size: float = 2.0, ue_height: float = 1.5) -> "TileGrid":
        (x0, y0), (x1, y1) = bounds
        cols = int(np.ceil((x1 - x0) / tile_size - 1e-9))
        rows = int(np.ceil((y1 - y0) / tile_size - 1e-9))
        return cls((float(x0), float(y0)), rows, cols, tile_size, ue_height)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def center(self, row: int, col: int) -> np.ndarray:
        return np.array([self.origin[0] + (col + 0.5) * self.tile_size,
                         self.origin[1] + (row + 0.5) * self.tile_size, self.ue_height])

    def centers(self) -> np.ndarray:
        """All tile centers, row-major, shape (rows * cols, 3)."""
        r, c = np.divmod(np.arange(self.rows * self.cols), self.cols)
        return np.stack([self.origin[0] + (c + 0.5) * self.tile_size,
                         self.origin[1] + (r + 0.5) * self.tile_size,
                         np.full(r.shape, self.ue_height)], axis=1)

    def sample_offsets(self, k: int) -> np.ndarray:
        """Sample offsets from the tile center, shape (k, 3): center or a 5-point cross."""
        if k == 1:
            return np.zeros((1, 3))
        if k == 5:
            q = self.tile_size / 4
            return np.array([[0, 0, 0], [q, 0, 0], [-q, 0, 0], [0, q, 0], [0, -q, 0]], dtype=float)
        raise ValueError("tile sampling supports k = 1 or k = 5")

    def tile_of(self, xy) -> tuple[int, int]:
        x, y = float(xy[0]), float(xy[1])
        col = int(np.floor((x - self.origin[0]) / self.tile_size))
        row = int(np.floor((y - self.origin[1]) / self.tile_size))
        return min(max(row, 0), self.rows - 1), min(max(col, 0), self.cols - 1)

    def flat(self, row: int, col: int) -> int:
        return row * self.cols + col
