"""Point-cloud data model: k-NN search, boundary detection, local PCA charts,
and quasi-uniformity diagnostics.

Planar clouds carry (N, 2) coordinates, surface clouds (N, 3). All downstream
modules consume the per-point chart coordinates produced here, so every chart
is centered at its own point and oriented consistently with a propagated
normal field.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import (
    BoundaryError,
    DegenerateNeighborhoodError,
    DuplicatePointError,
    TeichpcError,
)

__all__ = [
    "PointCloud",
    "Neighborhood",
    "LocalChart",
    "ChartSet",
    "UniformityReport",
    "build_knn",
    "detect_boundary",
    "build_charts",
    "pca_chart",
    "uniformity_report",
]


@dataclass(frozen=True)
class PointCloud:
    """Immutable cloud with optional boundary cycle, corners and landmarks.

    points    : (N, 2) or (N, 3) float64
    boundary  : ordered index cycle (each index once) or None
    corners   : 4 boundary indices in cyclic order along the boundary, or None
    landmarks : tuple of (index, payload); payload is a 2D target tuple or
                None for a bare feature point
    """

    points: np.ndarray
    boundary: np.ndarray | None = None
    corners: np.ndarray | None = None
    landmarks: tuple = ()

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.float64))
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise TeichpcError(f"points must be (N,2) or (N,3), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise TeichpcError("points contain non-finite values")
        n = pts.shape[0]
        if n < 1:
            raise TeichpcError("empty point cloud")
        if np.unique(pts, axis=0).shape[0] != n:
            raise DuplicatePointError("cloud contains exactly coincident points")
        object.__setattr__(self, "points", pts)

        bnd = self.boundary
        if bnd is not None:
            bnd = np.asarray(bnd, dtype=np.int64).ravel()
            self._check_indices(bnd, n, "boundary")
            if bnd.size < 3:
                raise TeichpcError("boundary cycle needs at least 3 points")
            object.__setattr__(self, "boundary", bnd)

        cor = self.corners
        if cor is not None:
            cor = np.asarray(cor, dtype=np.int64).ravel()
            if cor.size != 4:
                raise TeichpcError("corners must be exactly 4 indices")
            self._check_indices(cor, n, "corners")
            if bnd is not None:
                pos = []
                lookup = {int(b): j for j, b in enumerate(bnd)}
                for c in cor:
                    if int(c) not in lookup:
                        raise TeichpcError(f"corner {c} is not on the boundary cycle")
                    pos.append(lookup[int(c)])
                rel = [(p - pos[0]) % bnd.size for p in pos]
                if sorted(rel) != rel:
                    raise TeichpcError("corners are not in cyclic order along the boundary")
            object.__setattr__(self, "corners", cor)

        lm = tuple((int(i), None if t is None else (float(t[0]), float(t[1])))
                   for i, t in self.landmarks)
        idxs = [i for i, _ in lm]
        if idxs:
            self._check_indices(np.asarray(idxs, dtype=np.int64), n, "landmarks")
        object.__setattr__(self, "landmarks", lm)

    @staticmethod
    def _check_indices(arr, n, what):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise TeichpcError(f"{what} indices out of range")
        if np.unique(arr).size != arr.size:
            raise TeichpcError(f"{what} indices must be distinct")

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_planar(self) -> bool:
        return self.points.shape[1] == 2

    def with_(self, **kw) -> "PointCloud":
        return replace(self, **kw)


@dataclass(frozen=True)
class Neighborhood:
    """Exact k-nearest neighborhoods; row j lists point j first (distance 0),
    remaining entries ordered by (distance, index)."""

    idx: np.ndarray   # (N, K) int64
    dist: np.ndarray  # (N, K) float64

    @property
    def k(self) -> int:
        return self.idx.shape[1]

    @property
    def radius(self) -> np.ndarray:
        """Per-point maximal neighbor distance (the weight-support scale)."""
        return self.dist[:, -1]


@dataclass(frozen=True)
class LocalChart:
    """Per-point orthonormal frame and projected neighbor coordinates.

    frame  : (3, 3) rows = (tangent e1, tangent e2, normal)
    coords : (K, 2) neighbors projected into the tangent plane; row 0 is the
             center and projects to the origin
    """

    center: int
    frame: np.ndarray
    coords: np.ndarray


@dataclass(frozen=True)
class ChartSet:
    """All per-point charts of a cloud, with consistently propagated normals."""

    frames: np.ndarray  # (N, 3, 3)
    coords: np.ndarray  # (N, K, 2)

    @property
    def normals(self) -> np.ndarray:
        return self.frames[:, 2, :]

    def chart(self, i: int) -> LocalChart:
        return LocalChart(center=i, frame=self.frames[i], coords=self.coords[i])


@dataclass(frozen=True)
class UniformityReport:
    """Separation/fill diagnostics of a planar cloud (model units)."""

    q: float
    h: float
    ratio: float
    threshold: float
    ok: bool


def build_knn(cloud: PointCloud, k: int) -> Neighborhood:
    """Exact k-nearest neighborhoods (self included as first entry).

    Ties are broken deterministically by (distance, index), so identical
    inputs give identical neighborhoods irrespective of tree layout.
    """
    n = cloud.n
    if not 2 <= k < n:
        raise TeichpcError(f"k out of range: need 2 <= k < {n}, got {k}")
    pts = cloud.points
    tree = cKDTree(pts)
    dist, idx = tree.query(pts, k=min(k + 1, n))

    # lexicographic (distance, index) within each row
    rows = np.empty(idx.shape, dtype=[("d", np.float64), ("i", np.int64)])
    rows["d"] = dist
    rows["i"] = idx
    order = np.argsort(rows, axis=1, order=("d", "i"), kind="stable")
    dist = np.take_along_axis(dist, order, axis=1)
    idx = np.take_along_axis(idx, order, axis=1)

    if idx.shape[1] > k:
        # a tie straddling the k-th slot may have been truncated arbitrarily
        # by the tree; re-resolve those rows from the full tied candidate set
        tied = np.nonzero(dist[:, k] <= dist[:, k - 1] * (1 + 1e-12))[0]
        dist, idx = dist[:, :k].copy(), idx[:, :k].copy()
        for i in tied:
            cand = tree.query_ball_point(pts[i], r=dist[i, -1] * (1 + 1e-12))
            cand = np.asarray(sorted(cand), dtype=np.int64)
            d = np.linalg.norm(pts[cand] - pts[i], axis=1)
            take = np.lexsort((cand, d))[:k]
            dist[i], idx[i] = d[take], cand[take]

    return Neighborhood(idx=np.ascontiguousarray(idx, dtype=np.int64),
                        dist=np.ascontiguousarray(dist))


def _propagated_normals(idx: np.ndarray, raw_normals: np.ndarray) -> np.ndarray:
    """Flip raw PCA normals so neighboring normals agree (BFS per component)."""
    n = idx.shape[0]
    normals = raw_normals.copy()
    seen = np.zeros(n, dtype=bool)
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            i = queue.popleft()
            for j in idx[i, 1:]:
                if seen[j]:
                    continue
                seen[j] = True
                if normals[j] @ normals[i] < 0.0:
                    normals[j] = -normals[j]
                queue.append(j)
    return normals


def build_charts(cloud: PointCloud, nbrs: Neighborhood) -> ChartSet:
    """PCA tangent-plane charts for every point, consistently oriented.

    For planar clouds the chart is the trivial translation to the point.
    """
    pts = cloud.points
    n, k = nbrs.idx.shape
    if cloud.is_planar:
        coords = pts[nbrs.idx] - pts[:, None, :]
        frames = np.broadcast_to(np.eye(3), (n, 3, 3)).copy()
        return ChartSet(frames=frames, coords=np.ascontiguousarray(coords))

    nb = pts[nbrs.idx]                           # (N, K, 3)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    evals, evecs = np.linalg.eigh(cov)           # ascending eigenvalues

    bad = np.nonzero(evals[:, 1] <= 1e-12 * np.maximum(evals[:, 2], 1e-300))[0]
    if bad.size:
        raise DegenerateNeighborhoodError(
            f"rank-deficient neighborhoods at points {bad[:10].tolist()}"
        )

    raw_n = evecs[:, :, 0]
    normals = _propagated_normals(nbrs.idx, raw_n)

    e1 = evecs[:, :, 2]                          # principal tangent direction
    # deterministic sign: largest-magnitude component made positive
    lead = np.take_along_axis(e1, np.abs(e1).argmax(axis=1)[:, None], axis=1)[:, 0]
    e1 = e1 * np.where(lead < 0, -1.0, 1.0)[:, None]
    # re-orthogonalize against the propagated normal and complete the frame
    e1 = e1 - (np.sum(e1 * normals, axis=1))[:, None] * normals
    e1 /= np.linalg.norm(e1, axis=1)[:, None]
    e2 = np.cross(normals, e1)

    rel = nb - pts[:, None, :]
    coords = np.stack([np.einsum("nkj,nj->nk", rel, e1),
                       np.einsum("nkj,nj->nk", rel, e2)], axis=-1)
    frames = np.stack([e1, e2, normals], axis=1)
    return ChartSet(frames=frames, coords=np.ascontiguousarray(coords))


def pca_chart(cloud: PointCloud, nbrs: Neighborhood, i: int,
              charts: ChartSet | None = None) -> LocalChart:
    """Chart of a single point. Builds the full (propagated) chart set unless
    one is supplied, since orientation consistency is a global property."""
    if charts is None:
        charts = build_charts(cloud, nbrs)
    return charts.chart(int(i))


def _angular_gaps(coords: np.ndarray) -> np.ndarray:
    """Largest angular gap between consecutive projected neighbors, per point."""
    ang = np.arctan2(coords[:, 1:, 1], coords[:, 1:, 0])
    ang = np.sort(ang, axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = 2.0 * np.pi - (ang[:, -1] - ang[:, 0])
    return np.maximum(gaps.max(axis=1), wrap)


def detect_boundary(cloud: PointCloud, nbrs: Neighborhood,
                    charts: ChartSet | None = None,
                    gap_threshold: float = math.pi / 2.0) -> np.ndarray:
    """Detect and order the boundary cycle of a disk-type cloud.

    A point is boundary when the angular gap between consecutive projected
    neighbors in its chart exceeds ``gap_threshold``. The detected set is
    ordered by greedy nearest-neighbor chaining and returned counterclockwise
    with respect to the chart orientation. Pass-through if the cloud already
    carries a boundary annotation.
    """
    if cloud.boundary is not None:
        return cloud.boundary
    if charts is None:
        charts = build_charts(cloud, nbrs)

    gaps = _angular_gaps(charts.coords)
    bset = np.nonzero(gaps > gap_threshold)[0]
    if bset.size < 3:
        raise BoundaryError(f"only {bset.size} boundary points detected")

    pts = cloud.points
    hop = 4.0 * float(np.median(nbrs.dist[bset, 1]))
    tree = cKDTree(pts[bset])
    visited = np.zeros(bset.size, dtype=bool)
    cycle = [0]
    visited[0] = True
    for _ in range(bset.size - 1):
        cur = cycle[-1]
        cand = tree.query_ball_point(pts[bset[cur]], r=hop)
        cand = [c for c in sorted(cand) if not visited[c]]
        if not cand:
            raise BoundaryError("boundary chaining stalled before visiting all points")
        d = np.linalg.norm(pts[bset[cand]] - pts[bset[cur]], axis=1)
        nxt = cand[int(np.lexsort((cand, d))[0])]
        cycle.append(nxt)
        visited[nxt] = True
    if np.linalg.norm(pts[bset[cycle[-1]]] - pts[bset[cycle[0]]]) > hop:
        raise BoundaryError("boundary chain does not close into a cycle")

    cycle = bset[np.asarray(cycle)]

    # counterclockwise w.r.t. chart orientation: interior lies left of travel
    pos = {int(b): j for j, b in enumerate(cycle)}
    vote = 0.0
    for b in cycle:
        nxt = cycle[(pos[int(b)] + 1) % cycle.size]
        where = np.nonzero(nbrs.idx[b] == nxt)[0]
        c = charts.coords[b]
        if where.size == 0:
            continue
        t = c[where[0]]
        m = c[1:].mean(axis=0)  # interior side of the one-sided neighborhood
        vote += t[0] * m[1] - t[1] * m[0]
    if vote < 0.0:
        cycle = np.roll(cycle[::-1], 1)
    return np.ascontiguousarray(cycle)


def uniformity_report(cloud: PointCloud, nbrs: Neighborhood | None = None,
                      threshold: float = 3.0) -> UniformityReport:
    """Separation distance q, probe-grid fill distance h, and their ratio.

    The fill distance is certified from below by probing a grid of spacing
    <= q over the bounding box, which requires a planar cloud.
    """
    if cloud.n < 2:
        raise TeichpcError("uniformity report needs at least 2 points")
    if not cloud.is_planar:
        raise TeichpcError("fill-distance probing is defined for planar clouds only")
    if cloud.n == 2:
        q = 0.5 * float(np.linalg.norm(cloud.points[1] - cloud.points[0]))
    else:
        if nbrs is None:
            nbrs = build_knn(cloud, k=2)
        q = 0.5 * float(nbrs.dist[:, 1].min())

    pts = cloud.points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    step = max(q, 1e-12)
    nx = max(int(math.ceil(span[0] / step)) + 1, 2)
    ny = max(int(math.ceil(span[1] / step)) + 1, 2)
    gx = np.linspace(lo[0], hi[0], nx)
    gy = np.linspace(lo[1], hi[1], ny)
    probes = np.stack(np.meshgrid(gx, gy, indexing="ij"), axis=-1).reshape(-1, 2)
    d, _ = cKDTree(pts).query(probes)
    h = float(d.max())
    h = max(h, q)  # the probe estimate is a lower bound; q is always <= h
    ratio = h / q
    return UniformityReport(q=q, h=h, ratio=ratio, threshold=threshold,
                            ok=ratio <= threshold)
