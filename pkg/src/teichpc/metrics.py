"""Cloud-to-cloud registration and the induced shape metric.

A registration composes three maps: source surface -> rectangle (conformal),
rectangle -> rectangle (landmark-matching extremal map), rectangle -> target
surface (inverse of the target's conformal map, evaluated by barycentric
interpolation). The extremal map's average coefficient norm k gives the
distance 0.5 * log((1+k)/(1-k)); pairwise distances feed classical MDS and a
leave-one-out nearest-neighbor classifier.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .beltrami import teich_distance
from .cloud import PointCloud
from .errors import RegistrationError, TeichpcError
from .parameterize import (
    Mapping,
    RectDomain,
    conformal_parameterize,
    teichmuller_parameterize,
)

__all__ = [
    "Registration",
    "DistanceMatrix",
    "register",
    "distance_matrix",
    "classical_mds",
    "loocv_nn",
    "triangle_violations",
]


@dataclass(frozen=True)
class Registration:
    """Composed source-to-target map and its planar extremal stage."""

    src_id: str
    dst_id: str
    mapped: np.ndarray        # (N_src, dst dim) positions on the target
    planar: Mapping           # rectangle-to-rectangle landmark map
    src_rect: RectDomain
    dst_rect: RectDomain
    k: float                  # representative coefficient norm of the planar map
    hull_misses: int = 0
    dropped_correspondences: int = 0

    @property
    def distance(self) -> float:
        return float(teich_distance(self.k))

    def save(self, path) -> None:
        cols = "xyz"[: self.mapped.shape[1]]
        with open(path, "w") as fh:
            fh.write("index," + ",".join(cols) + "\n")
            for i, row in enumerate(self.mapped):
                fh.write(str(i) + "," + ",".join(f"{x:.17g}" for x in row) + "\n")


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric pairwise-distance matrix with labels."""

    d: np.ndarray
    labels: tuple
    asym_max: float = 0.0

    def __post_init__(self):
        d = np.asarray(self.d, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise TeichpcError(f"distance matrix must be square, got {d.shape}")
        if not np.isfinite(d).all():
            raise TeichpcError("distance matrix has non-finite entries")
        if not np.array_equal(d, d.T):
            raise TeichpcError("distance matrix must be exactly symmetric")
        if d.min() < 0:
            raise TeichpcError("distances must be nonnegative")
        if len(self.labels) != d.shape[0]:
            raise TeichpcError("label count does not match matrix size")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def m(self) -> int:
        return self.d.shape[0]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("label," + ",".join(self.labels) + "\n")
            for lab, row in zip(self.labels, self.d):
                fh.write(lab + "," + ",".join(f"{x:.17g}" for x in row) + "\n")


def representative_k(mu: np.ndarray) -> float:
    """Average coefficient norm over the feasible set {|mu| < 1}."""
    mag = np.abs(np.asarray(mu))
    feas = np.isfinite(mag) & (mag < 1.0)
    if not feas.any():
        raise TeichpcError("no feasible coefficient estimates")
    return float(mag[feas].mean())


def _rect_cloud(cloud: PointCloud, param: Mapping) -> PointCloud:
    """The source cloud transported to its rectangle image (same indexing)."""
    return PointCloud(param.uv, boundary=cloud.boundary, corners=cloud.corners)


def _with_boundary(cloud: PointCloud, k: int) -> PointCloud:
    if cloud.boundary is not None:
        return cloud
    from .cloud import build_knn, detect_boundary
    nbrs = build_knn(cloud, k)
    return cloud.with_(boundary=detect_boundary(cloud, nbrs))


def _barycentric_pullback(planar_pts: np.ndarray, values: np.ndarray,
                          queries: np.ndarray):
    """Interpolate values (per planar point) at query positions via Delaunay
    barycentric weights; nearest-neighbor fallback outside the hull."""
    tri = Delaunay(planar_pts)
    simp = tri.find_simplex(queries)
    out = np.empty((queries.shape[0], values.shape[1]))
    inside = simp >= 0
    if inside.any():
        t = tri.transform[simp[inside]]
        r = queries[inside] - t[:, 2]
        b = np.einsum("nij,nj->ni", t[:, :2], r)
        w = np.concatenate([b, 1.0 - b.sum(axis=1, keepdims=True)], axis=1)
        verts = tri.simplices[simp[inside]]
        out[inside] = np.einsum("nk,nkd->nd", w, values[verts])
    misses = int((~inside).sum())
    if misses:
        _, nn = cKDTree(planar_pts).query(queries[~inside])
        out[~inside] = values[np.atleast_1d(nn)]
    return out, misses


def register(src: PointCloud, dst: PointCloud, correspondences, *,
             k: int = 16, gamma: float = 0.5, eps: float = 1e-6,
             max_iter: int = 200, src_id: str = "src", dst_id: str = "dst",
             src_param=None, dst_param=None) -> Registration:
    """Register src onto dst through their rectangle parameterizations.

    correspondences: (i, j) index pairs; pair i on src must match point j on
    dst. Pairs touching either boundary are dropped (the boundary is already
    matched by the rectangle alignment). Precomputed (Mapping, RectDomain)
    tuples may be passed to skip the conformal stages.
    """
    pairs = [(int(i), int(j)) for i, j in correspondences]
    if not pairs:
        raise TeichpcError("at least one correspondence is required")
    src = _with_boundary(src, k)
    dst = _with_boundary(dst, k)

    g1, r1 = conformal_parameterize(src, k=k) if src_param is None else src_param
    g2, r2 = conformal_parameterize(dst, k=k) if dst_param is None else dst_param

    on_src = np.zeros(src.n, dtype=bool)
    on_src[src.boundary] = True
    on_dst = np.zeros(dst.n, dtype=bool)
    on_dst[dst.boundary] = True
    landmarks, dropped, seen = [], 0, set()
    for i, j in pairs:
        if on_src[i] or on_dst[j]:
            dropped += 1
            continue
        if i in seen:
            raise TeichpcError(f"duplicate source index {i} in correspondences")
        seen.add(i)
        landmarks.append((i, (float(g2.uv[j, 0]), float(g2.uv[j, 1]))))
    if dropped:
        warnings.warn(f"dropped {dropped} boundary correspondences "
                      "(boundary is matched by the rectangle alignment)",
                      stacklevel=2)

    h = teichmuller_parameterize(_rect_cloud(src, g1), rect=r2,
                                 landmarks=landmarks, gamma=gamma, eps=eps,
                                 max_iter=max_iter, k=k)
    mapped, misses = _barycentric_pullback(g2.uv, dst.points, h.uv)
    return Registration(src_id=src_id, dst_id=dst_id, mapped=mapped, planar=h,
                        src_rect=r1, dst_rect=r2, k=representative_k(h.mu),
                        hull_misses=misses, dropped_correspondences=dropped)


def _feature_correspondences(clouds) -> dict:
    feats = []
    for c in clouds:
        f = [i for i, _ in c.landmarks]
        feats.append(f)
    counts = {len(f) for f in feats}
    if len(counts) != 1:
        raise TeichpcError(f"clouds carry differing feature counts {sorted(counts)}; "
                           "pairwise correspondences cannot be derived")
    return {(i, j): list(zip(feats[i], feats[j]))
            for i in range(len(clouds)) for j in range(len(clouds))}


def _pair_job(args):
    (i, j, pts, bnd, cor, rect_w, rect_h, lms, k, gamma, eps, max_iter) = args
    cloud = PointCloud(pts, boundary=bnd, corners=cor)
    h = teichmuller_parameterize(cloud, rect=RectDomain(height=rect_h, width=rect_w),
                                 landmarks=lms, gamma=gamma, eps=eps,
                                 max_iter=max_iter, k=k)
    return i, j, representative_k(h.mu)


def distance_matrix(clouds, correspondences=None, *, labels=None, k: int = 16,
                    gamma: float = 0.5, eps: float = 1e-6, max_iter: int = 200,
                    threads=None) -> DistanceMatrix:
    """All-pairs distances d_ij = 0.5 log((1+k_ij)/(1-k_ij)), symmetrized
    as (D + D^T)/2. Diagonal entries are computed honestly from self
    registrations (small but nonzero discretization values).

    correspondences: dict keyed by ordered cloud-index pair -> (i, j) lists,
    or None to zip each cloud's feature landmarks positionally.
    """
    clouds = [_with_boundary(c, k) for c in clouds]
    m = len(clouds)
    if m < 2:
        raise TeichpcError("need at least 2 clouds")
    if labels is None:
        labels = [f"cloud{i}" for i in range(m)]
    if correspondences is None:
        correspondences = _feature_correspondences(clouds)

    params = [conformal_parameterize(c, k=k) for c in clouds]

    jobs = []
    for i in range(m):
        gi, _ = params[i]
        rect_i = _rect_cloud(clouds[i], gi)
        on_src = np.zeros(clouds[i].n, dtype=bool)
        on_src[clouds[i].boundary] = True
        for j in range(m):
            gj, rj = params[j]
            try:
                pairs = correspondences[(i, j)]
            except KeyError:
                raise TeichpcError(f"missing correspondences for pair ({i},{j})") from None
            on_dst = np.zeros(clouds[j].n, dtype=bool)
            on_dst[clouds[j].boundary] = True
            lms = [(int(p), (float(gj.uv[q, 0]), float(gj.uv[q, 1])))
                   for p, q in pairs if not (on_src[int(p)] or on_dst[int(q)])]
            jobs.append((i, j, rect_i.points, rect_i.boundary, rect_i.corners,
                         rj.width, rj.height, lms, k, gamma, eps, max_iter))

    results, failures = {}, []
    if threads and int(threads) > 1:
        with ProcessPoolExecutor(max_workers=int(threads)) as pool:
            futures = {pool.submit(_pair_job, job): (job[0], job[1]) for job in jobs}
            for fut, key in futures.items():
                try:
                    i, j, kij = fut.result()
                    results[(i, j)] = kij
                except TeichpcError as exc:
                    failures.append((key[0], key[1], str(exc)))
    else:
        for job in jobs:
            try:
                i, j, kij = _pair_job(job)
                results[(i, j)] = kij
            except TeichpcError as exc:
                failures.append((job[0], job[1], str(exc)))

    if failures:
        listing = "; ".join(f"({i},{j}): {msg}" for i, j, msg in failures[:5])
        raise RegistrationError(
            f"{len(failures)} pairwise registrations failed: {listing}",
            failures=failures)

    raw = np.zeros((m, m))
    for (i, j), kij in results.items():
        raw[i, j] = teich_distance(kij)
    asym = float(np.abs(raw - raw.T).max())
    if asym > 0.05:
        warnings.warn(f"directional distance asymmetry {asym:.3g} exceeds 0.05",
                      stacklevel=2)
    return DistanceMatrix(d=(raw + raw.T) / 2.0, labels=tuple(labels),
                          asym_max=asym)


def classical_mds(dist, dims: int = 2) -> np.ndarray:
    """Classical scaling: eigendecomposition of the double-centered squared
    distances; top `dims` nonnegative eigenpairs, deterministic column signs."""
    d = dist.d if isinstance(dist, DistanceMatrix) else np.asarray(dist, dtype=np.float64)
    if dims not in (2, 3):
        raise TeichpcError("dims must be 2 or 3")
    m = d.shape[0]
    d = d.copy()
    np.fill_diagonal(d, 0.0)
    j = np.eye(m) - np.ones((m, m)) / m
    b = -0.5 * j @ (d * d) @ j
    lam, vec = np.linalg.eigh((b + b.T) / 2.0)
    lam, vec = lam[::-1], vec[:, ::-1]

    scale = max(float(np.abs(lam).max()), 1e-300)
    tol = 1e-12 * scale
    if lam[0] < -tol:
        raise TeichpcError("double-centered matrix has an all-negative spectrum")
    coords = np.zeros((m, dims))
    for a in range(min(dims, m)):
        if lam[a] > tol:
            coords[:, a] = vec[:, a] * np.sqrt(lam[a])
    for a in range(dims):
        col = coords[:, a]
        nz = np.nonzero(np.abs(col) > 1e-12)[0]
        if nz.size and col[nz[0]] < 0:
            coords[:, a] = -col
    return coords


def loocv_nn(dist: DistanceMatrix, labels, return_predictions: bool = False):
    """Leave-one-out nearest-neighbor accuracy under the distance matrix."""
    labels = [str(x) for x in labels]
    m = dist.m
    if len(labels) != m:
        raise TeichpcError("label count does not match matrix size")
    counts = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    if len(counts) < 2 or min(counts.values()) < 2:
        raise TeichpcError("need >= 2 classes with >= 2 members each")

    preds = []
    for i in range(m):
        row = dist.d[i].copy()
        row[i] = np.inf
        preds.append(labels[int(np.argmin(row))])
    acc = float(np.mean([p == t for p, t in zip(preds, labels)]))
    return (acc, preds) if return_predictions else acc


def triangle_violations(dist: DistanceMatrix, tol: float = 1e-9):
    """Count of (i, j, k) triples violating d_ij <= d_ik + d_kj + tol,
    plus the worst excess."""
    d = dist.d
    m = dist.m
    count, worst = 0, 0.0
    for i in range(m):
        for j in range(i + 1, m):
            for kk in range(m):
                if kk in (i, j):
                    continue
                excess = d[i, j] - d[i, kk] - d[kk, j]
                if excess > tol:
                    count += 1
                    worst = max(worst, float(excess))
    return count, worst
