"""BIRCH clustering of outage tiles on a clustering-feature (CF) tree.

Points are inserted in lexicographic (x, y) order.  A leaf entry absorbs a
point when the merged entry's radius stays within ``T / 2``; otherwise the
point starts a new entry.  Overfull nodes split around their farthest pair of
entries.  The final clusters are the leaf entries, numbered by creation order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class ClusteringFeature:
    n: int
    ls: np.ndarray
    ss: float

    @classmethod
    def of_point(cls, p) -> "ClusteringFeature":
        p = np.asarray(p, dtype=float)
        return cls(1, p.copy(), float(p @ p))

    @classmethod
    def of_points(cls, pts) -> "ClusteringFeature":
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return cls(len(pts), pts.sum(axis=0), float(np.sum(pts * pts)))

    def __add__(self, other: "ClusteringFeature") -> "ClusteringFeature":
        return cf_merge(self, other)

    @property
    def centroid(self) -> np.ndarray:
        return self.ls / self.n

    @property
    def radius(self) -> float:
        c = self.centroid
        return float(np.sqrt(max(self.ss / self.n - c @ c, 0.0)))


def cf_merge(a: ClusteringFeature, b: ClusteringFeature) -> ClusteringFeature:
    return ClusteringFeature(a.n + b.n, a.ls + b.ls, a.ss + b.ss)


@dataclass(eq=False)
class Cluster:
    id: int
    cf: ClusteringFeature
    members: list[int]

    @property
    def centroid(self) -> np.ndarray:
        return self.cf.centroid

    @property
    def size(self) -> int:
        return self.cf.n


def cluster_centroid(c: Cluster, ue_height: float | None = None) -> np.ndarray:
    xy = c.cf.centroid
    return xy if ue_height is None else np.array([xy[0], xy[1], ue_height])


@dataclass(eq=False)
class _Entry:
    cf: ClusteringFeature
    order: int
    child: "_Node | None" = None
    members: list[int] = field(default_factory=list)


@dataclass(eq=False)
class _Node:
    leaf: bool
    entries: list[_Entry] = field(default_factory=list)


def _closest(entries: list[_Entry], p: np.ndarray) -> int:
    best, best_d, best_o = -1, np.inf, None
    for i, e in enumerate(entries):
        c = e.cf.centroid
        d = float((c[0] - p[0]) ** 2 + (c[1] - p[1]) ** 2)
        if d < best_d or (d == best_d and e.order < best_o):
            best, best_d, best_o = i, d, e.order
    return best


class CFTree:
    def __init__(self, threshold: float, branching: int = 50):
        if threshold <= 0:
            raise ValueError("threshold must be positive")
        if branching < 2:
            raise ValueError("branching factor must be at least 2")
        self.limit = threshold / 2.0
        self.branching = branching
        self.root = _Node(leaf=True)
        self._count = 0

    def _new_order(self) -> int:
        self._count += 1
        return self._count - 1

    def insert(self, p: np.ndarray, index: int) -> None:
        split = self._insert(self.root, p, index)
        if split is not None:
            a, b = split
            self.root = _Node(False, [self._summary(a), self._summary(b)])

    def _summary(self, node: _Node) -> _Entry:
        cf = node.entries[0].cf
        for e in node.entries[1:]:
            cf = cf + e.cf
        return _Entry(cf, min(e.order for e in node.entries), child=node)

    def _insert(self, node: _Node, p, index):
        pcf = ClusteringFeature.of_point(p)
        if node.leaf:
            i = _closest(node.entries, p) if node.entries else -1
            if i >= 0:
                merged = node.entries[i].cf + pcf
                if merged.radius <= self.limit + 1e-12:
                    node.entries[i].cf = merged
                    node.entries[i].members.append(index)
                    return None
            node.entries.append(_Entry(pcf, self._new_order(), members=[index]))
        else:
            i = _closest(node.entries, p)
            ent = node.entries[i]
            split = self._insert(ent.child, p, index)
            if split is None:
                ent.cf = ent.cf + pcf
            else:
                a, b = split
                node.entries[i:i + 1] = [self._summary(a), self._summary(b)]
        if len(node.entries) > self.branching:
            return self._split(node)
        return None

    def _split(self, node: _Node):
        cents = np.array([e.cf.centroid for e in node.entries])
        d = np.sum((cents[:, None] - cents[None]) ** 2, axis=2)
        i, j = np.unravel_index(np.argmax(d), d.shape)
        a, b = _Node(node.leaf), _Node(node.leaf)
        for k, e in enumerate(node.entries):
            (a if d[k, i] <= d[k, j] else b).entries.append(e)
        return a, b

    def leaves(self) -> list[_Entry]:
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            if n.leaf:
                out.extend(n.entries)
            else:
                stack.extend(e.child for e in n.entries)
        return sorted(out, key=lambda e: e.order)


def canonical_order(points: np.ndarray) -> np.ndarray:
    return np.lexsort((points[:, 1], points[:, 0]))


def birch_cluster(points, threshold_t: float = 15.0, branching: int = 50) -> list[Cluster]:
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        return []
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    tree = CFTree(threshold_t, branching)
    for idx in canonical_order(pts):
        tree.insert(pts[idx], int(idx))
    return [Cluster(k, e.cf, sorted(e.members)) for k, e in enumerate(tree.leaves())]


def greedy_absorption(points, threshold_t: float) -> list[list[int]]:
    """Flat reference clustering: every point joins the globally closest cluster if it fits."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    groups: list[list[int]] = []
    n, ls, ss = [], [], []
    for idx in canonical_order(pts):
        p = pts[idx]
        best = -1
        if groups:
            c = np.array(ls) / np.array(n)[:, None]
            dist = np.sum((c - p) ** 2, axis=1)
            best = int(np.argmin(dist))
            n2, ls2, ss2 = n[best] + 1, ls[best] + p, ss[best] + p @ p
            cen = ls2 / n2
            if np.sqrt(max(ss2 / n2 - cen @ cen, 0.0)) <= threshold_t / 2 + 1e-12:
                n[best], ls[best], ss[best] = n2, ls2, ss2
                groups[best].append(int(idx))
                continue
        groups.append([int(idx)])
        n.append(1)
        ls.append(p.copy())
        ss.append(float(p @ p))
    return [sorted(g) for g in groups]
