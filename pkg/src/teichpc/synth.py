"""Synthetic fixtures: quasi-uniform rectangle sampling, analytic test maps,
bump-surface families, noise injection, and the operator-accuracy benchmark.

The benchmark reconstructs known planar positions by solving the
divergence-form system on a mapped cloud with exact boundary values, under
three interior-row schemes: per-point Delaunay rings everywhere, MLS rows
with the reciprocal-count special weight, and this package's default
(MLS rows with Gaussian weights; rings only at the boundary, which the
Dirichlet data makes inert here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .beltrami import alpha_coeffs, inverse_coefficient
from .cloud import PointCloud, build_charts, build_knn
from .errors import SingularStencilError, SingularSystemError, TeichpcError
from .mls import WeightSpec, build_stencils
from .operators import (
    SparseOperator,
    build_rings,
    glap_row_values,
    ring_row,
    solve_constrained,
)

__all__ = [
    "BenchRecord",
    "sample_quasi_uniform",
    "map_stereographic",
    "map_log_arcsin",
    "log_arcsin_derivatives",
    "add_noise",
    "sample_bump_surface",
    "bump_family",
    "bench_operators",
    "save_bench_records",
    "BENCH_SCHEMES",
]

BENCH_SCHEMES = ("local-mesh", "mls-special", "combined")
_PACK = 0.57  # empirical Poisson-disk packing density per unit area


def _boundary_loop(width: float, height: float, r: float):
    """Equally spaced boundary points per edge, counterclockwise from the
    origin corner; returns (points, corner positions in the cycle)."""
    def edge(p0, p1):
        length = math.hypot(p1[0] - p0[0], p1[1] - p0[1])
        m = max(1, round(length / r))
        t = np.arange(m) / m
        return np.outer(1.0 - t, p0) + np.outer(t, p1)

    c = [(0.0, 0.0), (width, 0.0), (width, height), (0.0, height)]
    segs = [edge(c[a], c[(a + 1) % 4]) for a in range(4)]
    corners = np.cumsum([0] + [s.shape[0] for s in segs[:3]])
    return np.vstack(segs), corners.astype(np.int64)


def _poisson_disk(width, height, r, rng, obstacles):
    """Bridson-style rejection sampling keeping distance >= r from previous
    samples and from the obstacle set."""
    cell = r / math.sqrt(2.0)
    grid = {}
    pts = []

    def key(p):
        return (int(p[0] / cell), int(p[1] / cell))

    def admissible(p):
        kx, ky = key(p)
        for ix in range(kx - 2, kx + 3):
            for iy in range(ky - 2, ky + 3):
                for q in grid.get((ix, iy), ()):
                    if (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 < r * r:
                        return False
        return True

    def insert(p, record):
        grid.setdefault(key(p), []).append(p)
        if record:
            pts.append(p)

    for p in obstacles:
        insert((float(p[0]), float(p[1])), record=False)

    seed_pt = None
    for _ in range(2000):
        cand = (rng.uniform(0.0, width), rng.uniform(0.0, height))
        if admissible(cand):
            seed_pt = cand
            break
    if seed_pt is None:
        return np.zeros((0, 2))
    insert(seed_pt, record=True)
    active = [seed_pt]

    while active:
        pick = int(rng.integers(len(active)))
        base = active[pick]
        placed = False
        for _ in range(30):
            rad = rng.uniform(r, 2.0 * r)
            ang = rng.uniform(0.0, 2.0 * math.pi)
            cand = (base[0] + rad * math.cos(ang), base[1] + rad * math.sin(ang))
            if not (0.0 < cand[0] < width and 0.0 < cand[1] < height):
                continue
            if admissible(cand):
                insert(cand, record=True)
                active.append(cand)
                placed = True
                break
        if not placed:
            active[pick] = active[-1]
            active.pop()
    return np.asarray(pts)


def sample_quasi_uniform(width: float, height: float, n: int,
                         seed: int) -> PointCloud:
    """Quasi-uniform cloud on a width x height rectangle, deterministic per
    seed: equally spaced boundary (corners included) plus Poisson-disk
    interior. The actual count approximates n."""
    if n < 100:
        raise TeichpcError(f"need n >= 100, got {n}")
    if width <= 0 or height <= 0:
        raise TeichpcError("rectangle sides must be positive")
    area = width * height
    perim = 2.0 * (width + height)
    # n ~ pack*area/r^2 + perim/r resolves to a quadratic in 1/r
    u = (-perim + math.sqrt(perim * perim + 4.0 * _PACK * area * (n - 4))) \
        / (2.0 * _PACK * area)
    r = 1.0 / u

    rng = np.random.default_rng(seed)
    bpts, corners = _boundary_loop(width, height, r)
    ipts = _poisson_disk(width, height, r, rng, bpts)
    pts = np.vstack([bpts, ipts]) if ipts.size else bpts
    boundary = np.arange(bpts.shape[0], dtype=np.int64)
    return PointCloud(pts, boundary=boundary, corners=corners)


def map_stereographic(cloud: PointCloud) -> PointCloud:
    """Planar cloud onto the unit sphere:
    (x, y) -> (2x, 2y, x^2 + y^2 - 1) / (x^2 + y^2 + 1)."""
    if not cloud.is_planar:
        raise TeichpcError("expected a planar cloud")
    x, y = cloud.points[:, 0], cloud.points[:, 1]
    s = x * x + y * y
    out = np.column_stack([2.0 * x, 2.0 * y, s - 1.0]) / (s + 1.0)[:, None]
    return cloud.with_(points=out)


def map_log_arcsin(cloud: PointCloud) -> PointCloud:
    """Planar distortion (x, y) -> (log(x+1), arcsin(y / (2 + log^2(x+1))));
    defined wherever the arcsine argument stays in [-1, 1]."""
    if not cloud.is_planar:
        raise TeichpcError("expected a planar cloud")
    x, y = cloud.points[:, 0], cloud.points[:, 1]
    u = np.log1p(x)
    s = y / (2.0 + u * u)
    if np.any(np.abs(s) > 1.0):
        raise TeichpcError("arcsine argument leaves [-1, 1]")
    return cloud.with_(points=np.column_stack([u, np.arcsin(s)]))


def log_arcsin_derivatives(points: np.ndarray):
    """Analytic coefficient and complex derivative of the log/arcsin map at
    planar source points. Returns (mu, fz)."""
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    u = np.log1p(x)
    w = 2.0 + u * u
    s = y / w
    ux = 1.0 / (1.0 + x)
    wx = 2.0 * u / (1.0 + x)
    sx = -y * wx / (w * w)
    sy = 1.0 / w
    root = np.sqrt(1.0 - s * s)
    vx, vy = sx / root, sy / root
    fz = 0.5 * ((ux + vy) + 1j * vx)
    fzbar = 0.5 * ((ux - vy) + 1j * vx)
    return fzbar / fz, fz


def add_noise(cloud: PointCloud, amplitude: float, seed: int) -> PointCloud:
    """Uniform per-coordinate noise in [-a, a] with a = amplitude times the
    cloud's fill-distance proxy (largest nearest-neighbor gap)."""
    if amplitude < 0:
        raise TeichpcError("amplitude must be >= 0")
    if amplitude == 0:
        return cloud
    d, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    a = amplitude * float(d[:, 1].max())
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-a, a, size=cloud.points.shape)
    return cloud.with_(points=cloud.points + noise)


def sample_bump_surface(n: int, seed: int, centers, amps, sigma: float = 0.15,
                        noise: float = 0.0, noise_seed=None) -> PointCloud:
    """Gaussian-bump height field over a quasi-uniform unit square, with one
    feature landmark at the interior point nearest each bump center."""
    base = sample_quasi_uniform(1.0, 1.0, n, seed)
    pts = base.points
    z = np.zeros(base.n)
    centers = np.asarray(centers, dtype=np.float64)
    amps = np.asarray(amps, dtype=np.float64)
    if centers.shape[0] != amps.shape[0]:
        raise TeichpcError("centers and amps must pair up")
    for c, a in zip(centers, amps):
        z += a * np.exp(-((pts - c) ** 2).sum(axis=1) / (2.0 * sigma * sigma))

    on_bnd = np.zeros(base.n, dtype=bool)
    on_bnd[base.boundary] = True
    feats = []
    for c in centers:
        d = np.linalg.norm(pts - c, axis=1)
        d[on_bnd] = np.inf
        feats.append((int(np.argmin(d)), None))

    cloud = PointCloud(np.column_stack([pts, z]), boundary=base.boundary,
                       corners=base.corners, landmarks=tuple(feats))
    if noise > 0:
        cloud = add_noise(cloud, noise,
                          seed + 1 if noise_seed is None else noise_seed)
    return cloud


def bump_family(family: int, n: int, seed: int, noise: float = 0.0) -> PointCloud:
    """Two canonical bump layouts sharing the feature count (4), so pairwise
    correspondences across families come from positional zipping."""
    if family == 0:
        centers = [(0.3, 0.3), (0.7, 0.3), (0.7, 0.7), (0.3, 0.7)]
        amps = [0.35, 0.35, 0.35, 0.35]
        sigma = 0.16
    elif family == 1:
        centers = [(0.5, 0.22), (0.78, 0.5), (0.5, 0.78), (0.22, 0.5)]
        amps = [0.45, 0.15, 0.45, 0.15]
        sigma = 0.12
    else:
        raise TeichpcError("family must be 0 or 1")
    return sample_bump_surface(n, seed, centers, amps, sigma=sigma, noise=noise)


@dataclass(frozen=True)
class BenchRecord:
    """One scheme's reconstruction errors against analytic ground truth."""

    scheme: str
    n: int
    h: float
    seed: int
    max_err: float
    avg_l1: float
    avg_l2: float

    def __post_init__(self):
        for v in (self.max_err, self.avg_l1, self.avg_l2):
            if not (v >= 0 or math.isinf(v)):
                raise TeichpcError("errors must be nonnegative")


def save_bench_records(records, path) -> None:
    with open(path, "w") as fh:
        fh.write("scheme,n,h,seed,max_err,avg_l1,avg_l2\n")
        for r in records:
            fh.write(f"{r.scheme},{r.n},{r.h:.6g},{r.seed},"
                     f"{r.max_err:.10g},{r.avg_l1:.10g},{r.avg_l2:.10g}\n")


def _interior_rows_operator(scheme, charts, nbrs, mu, interior, n):
    if scheme in ("mls-special", "combined"):
        spec = WeightSpec(kind="special") if scheme == "mls-special" else None
        sten = build_stencils(charts.coords, nbrs.idx, spec=spec)
        vals = glap_row_values(sten, mu)
        return SparseOperator(shape=(n, n),
                              rows=np.repeat(interior, sten.k),
                              cols=sten.idx[interior].ravel(),
                              vals=vals[interior].ravel())
    if scheme == "local-mesh":
        rings = build_rings(charts.coords, nbrs.idx, interior)
        amats = alpha_coeffs(mu).matrices
        rows, cols, vals = [], [], []
        for i in interior:
            c, v = ring_row(rings[int(i)], amats)
            rows.append(np.full(c.size, i, dtype=np.int64))
            cols.append(c)
            vals.append(v)
        return SparseOperator(shape=(n, n), rows=np.concatenate(rows),
                              cols=np.concatenate(cols),
                              vals=np.concatenate(vals))
    raise TeichpcError(f"unknown scheme {scheme!r} (want one of {BENCH_SCHEMES})")


def bench_operators(map_name: str, n: int, seed: int,
                    schemes=BENCH_SCHEMES, *, k: int = 16) -> list:
    """Forward-map a sampled rectangle, then rebuild the planar positions per
    scheme by solving the divergence-form system with exact boundary values.
    Failures surface as infinite errors rather than aborting the sweep."""
    bad = [s for s in schemes if s not in BENCH_SCHEMES]
    if bad:
        raise TeichpcError(f"unknown schemes {bad} (want subset of {BENCH_SCHEMES})")

    base = sample_quasi_uniform(1.0, 1.0, n, seed)
    truth = base.points
    if map_name == "stereographic":
        domain = map_stereographic(base)
        mu = np.zeros(base.n, dtype=np.complex128)
    elif map_name in ("log_arcsin", "log-arcsin"):
        domain = map_log_arcsin(base)
        mu_fwd, fz = log_arcsin_derivatives(truth)
        mu = inverse_coefficient(mu_fwd, fz)
    else:
        raise TeichpcError(f"unknown map {map_name!r}")

    nbrs = build_knn(domain, k)
    charts = build_charts(domain, nbrs)
    h_est = float(nbrs.dist[:, 1].max())
    bnd = base.boundary
    interior = np.setdiff1d(np.arange(base.n, dtype=np.int64), bnd)
    cons_u = [(int(b), float(truth[b, 0])) for b in bnd]
    cons_v = [(int(b), float(truth[b, 1])) for b in bnd]

    records = []
    for scheme in schemes:
        try:
            op = _interior_rows_operator(scheme, charts, nbrs, mu, interior,
                                         base.n)
            u = solve_constrained(op, None, cons_u)
            v = solve_constrained(op, None, cons_v)
            du = u[interior] - truth[interior, 0]
            dv = v[interior] - truth[interior, 1]
            max_err = float(np.sqrt(du * du + dv * dv).max())
            avg_l1 = float((np.abs(du) + np.abs(dv)).mean())
            avg_l2 = float((du * du + dv * dv).mean())
        except (TeichpcError, SingularSystemError, SingularStencilError):
            max_err = avg_l1 = avg_l2 = float("inf")
        records.append(BenchRecord(scheme=scheme, n=base.n, h=h_est, seed=seed,
                                   max_err=max_err, avg_l1=avg_l1,
                                   avg_l2=avg_l2))
    return records
