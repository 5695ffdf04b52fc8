"""Parameterization pipelines.

Conformal pipeline (disk-type cloud -> rectangle):
  1. harmonic map onto the unit disk (arc-length boundary angles),
  2. estimate the coefficient of the inverse disk map,
  3. quasi-conformal map of the disk onto the unit square (corner pinning,
     edge-wise one-coordinate boundary constraints),
  4. pick the rectangle height minimizing the residual non-conformality.

Landmark pipeline (planar rectangle cloud -> rectangle):
  iterate coefficient estimation, norm averaging, argument smoothing, and a
  hybrid first/second-order solve under hard landmark + boundary constraints
  until the iterate stalls. The fixed point has near-constant coefficient
  norm, which is the discrete extremality certificate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .beltrami import (
    alpha_coeffs,
    diffuse_pcbc,
    feasibility_clamp,
    field_derivatives,
    pcbc_from_values,
)
from .cloud import (
    ChartSet,
    Neighborhood,
    PointCloud,
    build_charts,
    build_knn,
    detect_boundary,
)
from .errors import (
    InfeasibleCoefficientError,
    SingularSystemError,
    TeichpcError,
)
from .mls import StencilSet, WeightSpec, build_stencils
from .operators import (
    SparseOperator,
    assemble_M1,
    assemble_M3,
    assemble_hybrid,
    build_rings,
    solve_constrained,
)

__all__ = [
    "Mapping",
    "RectDomain",
    "harmonic_to_disk",
    "disk_to_square_qc",
    "optimize_height",
    "conformal_parameterize",
    "teichmuller_parameterize",
    "pct_certificate",
]

HEIGHT_BRACKET = (0.05, 20.0)
SIGMA_CAP = 0.999


@dataclass(frozen=True)
class RectDomain:
    """Unit-width rectangle; the height is the conformal module."""

    height: float
    width: float = 1.0

    def __post_init__(self):
        if not (self.height > 0 and math.isfinite(self.height)):
            raise TeichpcError(f"rectangle height must be positive, got {self.height}")


@dataclass(frozen=True)
class Mapping:
    """Planar image of a cloud plus per-iteration diagnostics.

    uv           : (N, 2) target coordinates
    kind         : conformal | teichmuller | composed
    mu           : final per-point coefficient estimate (may hold inf at
                   degenerate points; consumers filter by magnitude)
    k_history    : norm average per iteration
    var_history  : Var(|coefficient|) per iteration
    step_history : l2 distance between consecutive iterates
    """

    uv: np.ndarray
    kind: str
    converged: bool = True
    iterations: int = 0
    k_history: tuple = ()
    var_history: tuple = ()
    step_history: tuple = ()
    mu: np.ndarray | None = None
    clamped: int = 0

    def __post_init__(self):
        uv = np.ascontiguousarray(np.asarray(self.uv, dtype=np.float64))
        if uv.ndim != 2 or uv.shape[1] != 2:
            raise TeichpcError(f"mapping needs (N,2) coordinates, got {uv.shape}")
        object.__setattr__(self, "uv", uv)
        if self.kind not in ("conformal", "teichmuller", "composed"):
            raise TeichpcError(f"unknown mapping kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.uv.shape[0]

    @property
    def complex(self) -> np.ndarray:
        return self.uv[:, 0] + 1j * self.uv[:, 1]

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("index,u,v\n")
            for i, (u, v) in enumerate(self.uv):
                fh.write(f"{i},{u:.17g},{v:.17g}\n")

    def diagnostics(self) -> dict:
        return {
            "kind": self.kind,
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "k_history": [float(x) for x in self.k_history],
            "var_history": [float(x) for x in self.var_history],
            "step_history": [float(x) for x in self.step_history],
            "clamped": int(self.clamped),
        }


def _chart_stencils(cloud: PointCloud, nbrs: Neighborhood,
                    charts: ChartSet, spec: WeightSpec | None = None) -> StencilSet:
    return build_stencils(charts.coords, nbrs.idx, spec=spec)


def _boundary_angles(points: np.ndarray, cycle: np.ndarray) -> np.ndarray:
    seg = points[np.roll(cycle, -1)] - points[cycle]
    ell = np.linalg.norm(seg, axis=1)
    total = ell.sum()
    if total <= 0:
        raise TeichpcError("degenerate boundary cycle (zero length)")
    cum = np.concatenate([[0.0], np.cumsum(ell[:-1])])
    return 2.0 * np.pi * cum / total


def harmonic_to_disk(cloud: PointCloud, nbrs: Neighborhood,
                     charts: ChartSet | None = None,
                     boundary: np.ndarray | None = None) -> Mapping:
    """Harmonic map onto the unit disk with arc-length boundary angles.

    Interior rows are chart Laplacians (the local tangent-plane projection has
    an identity first-order expansion at its base point, so plain planar rows
    apply); boundary points are pinned to the circle.
    """
    if charts is None:
        charts = build_charts(cloud, nbrs)
    cycle = detect_boundary(cloud, nbrs, charts) if boundary is None else boundary
    sten = _chart_stencils(cloud, nbrs, charts)

    n, k = sten.n, sten.k
    lap = 2.0 * sten.a[:, 3, :] + 2.0 * sten.a[:, 5, :]
    interior = np.setdiff1d(np.arange(n), cycle)
    op = SparseOperator(shape=(n, n),
                        rows=np.repeat(interior, k),
                        cols=sten.idx[interior].ravel(),
                        vals=lap[interior].ravel())

    theta = _boundary_angles(cloud.points, cycle)
    u = solve_constrained(op, None, list(zip(cycle.tolist(), np.cos(theta))))
    v = solve_constrained(op, None, list(zip(cycle.tolist(), np.sin(theta))))
    return Mapping(uv=np.column_stack([u, v]), kind="conformal")


def _corner_positions(cycle: np.ndarray, corners: np.ndarray) -> list:
    lookup = {int(b): j for j, b in enumerate(cycle)}
    pos = []
    for c in corners:
        if int(c) not in lookup:
            raise TeichpcError(f"corner {c} is not on the boundary cycle")
        pos.append(lookup[int(c)])
    return pos


def _boundary_arcs(cycle: np.ndarray, corners: np.ndarray) -> list:
    """Split the cycle into 4 corner-to-corner arcs (both endpoints included),
    in corner order."""
    pos = _corner_positions(cycle, corners)
    rel = [(p - pos[0]) % cycle.size for p in pos]
    if sorted(rel) != rel:
        raise TeichpcError("corners are not in cyclic order along the boundary")
    arcs = []
    m = cycle.size
    for a in range(4):
        i, j = pos[a], pos[(a + 1) % 4]
        span = (j - i) % m
        if span == 0:
            raise TeichpcError("coincident corners")
        arcs.append(cycle[(i + np.arange(span + 1)) % m])
    return arcs


def disk_to_square_qc(disk_map: Mapping, corners, mu_inv: np.ndarray,
                      boundary: np.ndarray, *,
                      nbrs: Neighborhood | None = None,
                      stencils: StencilSet | None = None,
                      k: int = 16) -> Mapping:
    """Map the disk image onto the unit square by solving the generalized
    Laplace system of the prescribed coefficient, with the four corners pinned
    and each boundary arc constrained in one coordinate only."""
    corners = np.asarray(corners, dtype=np.int64).ravel()
    if corners.size != 4:
        raise TeichpcError("need exactly 4 corner indices")
    pts = disk_map.uv
    dcloud = PointCloud(pts)
    if nbrs is None:
        nbrs = build_knn(dcloud, k)
    coords = pts[nbrs.idx] - pts[:, None, :]
    if stencils is None:
        stencils = build_stencils(coords, nbrs.idx)

    rings = build_rings(coords, nbrs.idx, boundary)
    op = assemble_M3(stencils, rings, mu_inv, boundary)

    bottom, right, top, left = _boundary_arcs(boundary, corners)
    cons_u = [(int(i), 0.0) for i in left] + [(int(i), 1.0) for i in right]
    cons_v = [(int(i), 0.0) for i in bottom] + [(int(i), 1.0) for i in top]
    u = solve_constrained(op, None, cons_u)
    v = solve_constrained(op, None, cons_v)
    return Mapping(uv=np.column_stack([u, v]), kind="conformal")


def _sigma_of_height(h, ux, uy, vx, vy):
    num = (ux - h * vy) + 1j * (uy + h * vx)
    den = (ux + h * vy) + 1j * (h * vx - uy)
    with np.errstate(divide="ignore", invalid="ignore"):
        return num / den


def optimize_height(square_map: Mapping, mu_inv: np.ndarray,
                    stencils: StencilSet) -> RectDomain:
    """Golden-section search for the rectangle height minimizing the gap
    between the scaled map's coefficient and the inverse-map coefficient.

    Derivative rows are evaluated once; each height probe is O(N).
    """
    u1, v1 = square_map.uv[:, 0], square_map.uv[:, 1]
    ux, uy, vx, vy = field_derivatives(stencils, u1, v1)
    mu = np.asarray(mu_inv, dtype=np.complex128)
    usable = np.isfinite(mu)

    def energy(h):
        sig = _sigma_of_height(h, ux, uy, vx, vy)
        good = usable & np.isfinite(sig)
        if not good.any():
            return float("inf")
        return float((np.abs(sig[good] - mu[good]) ** 2).sum())

    a, b = HEIGHT_BRACKET
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = energy(c), energy(d)
    while b - a > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = energy(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = energy(d)
    h = 0.5 * (a + b)
    lo, hi = HEIGHT_BRACKET
    if h - lo < 1e-5 or hi - h < 1e-5:
        warnings.warn(f"height optimum at bracket edge (h={h:.6g}); "
                      "result may be truncated", stacklevel=2)
    return RectDomain(height=float(h))


def _surface_chart_values(cloud: PointCloud, charts: ChartSet,
                          idx: np.ndarray) -> tuple:
    """Per-stencil chart coordinates of arbitrary neighbor sets: for stencil i
    the rows are the chart-i coordinates of cloud points idx[i]."""
    rel = cloud.points[idx] - cloud.points[:, None, :]
    if cloud.is_planar:
        return np.ascontiguousarray(rel[..., 0]), np.ascontiguousarray(rel[..., 1])
    e1, e2 = charts.frames[:, 0, :], charts.frames[:, 1, :]
    u = np.einsum("nkj,nj->nk", rel, e1)
    v = np.einsum("nkj,nj->nk", rel, e2)
    return np.ascontiguousarray(u), np.ascontiguousarray(v)


def _disk_stage(cloud, nbrs, charts, cycle, k, flip):
    """Disk map plus disk-domain neighborhoods/stencils and the inverse-map
    coefficient estimate. flip mirrors the disk (second attempt when the
    first orientation turns out reversed)."""
    disk = harmonic_to_disk(cloud, nbrs, charts, boundary=cycle)
    uv = disk.uv.copy()
    if flip:
        uv[:, 1] = -uv[:, 1]
        disk = Mapping(uv=uv, kind="conformal")
    dnbrs = build_knn(PointCloud(disk.uv), k)
    dcoords = disk.uv[dnbrs.idx] - disk.uv[:, None, :]
    dsten = build_stencils(dcoords, dnbrs.idx)
    su, sv = _surface_chart_values(cloud, charts, dnbrs.idx)
    mu_inv = pcbc_from_values(dsten, su, sv, strict=False)
    return disk, dnbrs, dsten, mu_inv


def conformal_parameterize(cloud: PointCloud, *, k: int = 16) -> tuple:
    """Full conformal pipeline: returns (Mapping onto the rectangle,
    RectDomain). The cloud must carry (or admit detection of) a boundary
    cycle and 4 corner indices."""
    if cloud.corners is None:
        raise TeichpcError("corners required: conformal parameterization "
                           "needs 4 corner indices on the boundary")
    nbrs = build_knn(cloud, k)
    charts = build_charts(cloud, nbrs)
    cycle = detect_boundary(cloud, nbrs, charts)

    disk, dnbrs, dsten, mu_inv = _disk_stage(cloud, nbrs, charts, cycle, k, False)
    mag = np.abs(mu_inv[np.isfinite(mu_inv)])
    if mag.size and np.median(mag) > 1.0:
        # boundary cycle ran clockwise for these charts: mirror the disk
        disk, dnbrs, dsten, mu_inv = _disk_stage(cloud, nbrs, charts, cycle, k, True)

    mu_feas, nclamped = feasibility_clamp(mu_inv, cap=SIGMA_CAP)
    square = disk_to_square_qc(disk, cloud.corners, mu_feas, cycle,
                               nbrs=dnbrs, stencils=dsten)
    rect = optimize_height(square, mu_inv, dsten)

    uv = np.column_stack([square.uv[:, 0], rect.height * square.uv[:, 1]])
    ssten = _chart_stencils(cloud, nbrs, charts)
    u_nb, v_nb = uv[:, 0][nbrs.idx], uv[:, 1][nbrs.idx]
    mu_final = pcbc_from_values(ssten, np.ascontiguousarray(u_nb),
                                np.ascontiguousarray(v_nb), strict=False)
    return (Mapping(uv=uv, kind="conformal", mu=mu_final, clamped=nclamped),
            rect)


def _unit_argument(mu: np.ndarray) -> np.ndarray:
    mag = np.abs(mu)
    good = np.isfinite(mag) & (mag > 0)
    nu = np.ones_like(mu, dtype=np.complex128)
    nu[good] = mu[good] / mag[good]
    return nu


def _smooth_argument(l0_csr, nu: np.ndarray) -> np.ndarray:
    """One diffusion pass over the unit argument field, re-normalized.

    A Jacobi relaxation step of the zero-coefficient divergence operator
    replaces each value with a weighted average over its stencil; constant
    fields are fixed points exactly. A single pass is deliberate: deeper
    smoothing biases the fixed point of the outer iteration and stalls it.
    Points where the averaged value vanishes keep their input argument."""
    diag = l0_csr.diagonal()
    scale = np.where(np.abs(diag) > 0, np.abs(diag), 1.0)
    w = nu + (l0_csr @ nu) / scale
    mag = np.abs(w)
    # Near zeros of the coefficient field the argument winds and the stencil
    # average nearly cancels; renormalizing such a residual amplifies its
    # noise by 1/|w|. Blend back toward the raw argument there, with a smooth
    # ramp (a hard threshold makes the iteration chatter between branches).
    lam = np.clip((mag - 0.15) / 0.30, 0.0, 1.0)
    lam = lam * lam * (3.0 - 2.0 * lam)
    d = lam * (w / np.maximum(mag, 1e-300)) + (1.0 - lam) * nu
    dmag = np.abs(d)
    tau = nu.copy()
    keep = dmag > 1e-12
    tau[keep] = d[keep] / dmag[keep]
    return tau


def _infer_source_box(pts: np.ndarray, cycle: np.ndarray) -> tuple:
    lo = pts[cycle].min(axis=0)
    hi = pts[cycle].max(axis=0)
    if np.any(hi - lo <= 0):
        raise TeichpcError("degenerate source rectangle")
    return lo, hi


def teichmuller_parameterize(cloud: PointCloud, rect: RectDomain | None = None,
                             landmarks=None, gamma: float = 0.5,
                             eps: float = 1e-6, max_iter: int = 200,
                             *, k: int = 16) -> Mapping:
    """Landmark-matching extremal map of a planar rectangle cloud onto a
    target rectangle (the cloud's own bounding rectangle when rect is None).

    The boundary is fixed pointwise by the axis-aligned affine map between
    the two rectangles; landmark targets must lie strictly inside the target.
    Each iteration: estimate the coefficient of the current map, average its
    norm over the feasible set, smooth its argument, then solve the hybrid
    system under the hard constraints. Stops when the iterate moves less
    than eps in l2; hitting max_iter returns the last iterate unconverged.
    """
    if not cloud.is_planar:
        raise TeichpcError("landmark parameterization expects a planar cloud")
    if gamma < 0 or math.isnan(gamma):
        raise TeichpcError("gamma must be >= 0 (or inf)")
    pts = cloud.points
    n = cloud.n
    nbrs = build_knn(cloud, k)
    charts = build_charts(cloud, nbrs)
    cycle = detect_boundary(cloud, nbrs, charts)

    lo, hi = _infer_source_box(pts, cycle)
    if rect is None:
        rect = RectDomain(height=float(hi[1] - lo[1]), width=float(hi[0] - lo[0]))
    scale = np.array([rect.width, rect.height]) / (hi - lo)
    affine = (pts - lo) * scale  # boundary target positions (and the initial map)

    cons = []
    on_boundary = np.zeros(n, dtype=bool)
    on_boundary[cycle] = True
    for b in cycle:
        cons.append((int(b), float(affine[b, 0])))
        cons.append((int(b) + n, float(affine[b, 1])))
    for item in (landmarks if landmarks is not None else list(cloud.landmarks)):
        i, target = item
        if target is None:
            raise TeichpcError(f"landmark {i} has no target coordinates")
        tu, tv = float(target[0]), float(target[1])
        if on_boundary[int(i)]:
            if abs(tu - affine[int(i), 0]) > 1e-9 or abs(tv - affine[int(i), 1]) > 1e-9:
                raise TeichpcError(
                    f"landmark {i} lies on the fixed boundary but its target "
                    "disagrees with the boundary map")
            continue  # redundant with the boundary constraint
        if not (0.0 < tu < rect.width and 0.0 < tv < rect.height):
            raise TeichpcError(f"landmark target {(tu, tv)} outside the "
                               f"{rect.width} x {rect.height} rectangle")
        cons.append((int(i), tu))
        cons.append((int(i) + n, tv))
    dofs = [c[0] for c in cons]
    if len(set(dofs)) != len(dofs):
        raise TeichpcError("duplicate landmark indices")

    sten = _chart_stencils(cloud, nbrs, charts)
    rings = build_rings(charts.coords, nbrs.idx, cycle)
    l0 = assemble_M3(sten, rings, np.zeros(n, dtype=np.complex128),
                     cycle).tocsr()

    f = affine.copy()
    k_hist, var_hist, step_hist = [], [], []
    converged = False
    clamped_total = 0
    it = 0
    solver_cache: dict = {}
    for it in range(1, max_iter + 1):
        mu = diffuse_pcbc(sten, f[:, 0] + 1j * f[:, 1], strict=False)
        mag = np.abs(mu)
        feas = np.isfinite(mag) & (mag < 1.0)
        if feas.sum() < 0.5 * n:
            k_hist.append(float("nan"))
            var_hist.append(float("nan"))
            step_hist.append(float("nan"))
            warnings.warn("iteration diverged: most coefficient estimates are "
                          "infeasible", stacklevel=2)
            break
        k_n = float(mag[feas].mean())
        var_n = float(np.var(mag[feas]))
        nu = _unit_argument(np.where(np.isfinite(mu), mu, 0.0))
        tau = _smooth_argument(l0, nu)
        sigma = np.minimum(k_n, SIGMA_CAP) * tau
        sigma, nclamp = feasibility_clamp(sigma, cap=SIGMA_CAP)
        clamped_total += nclamp

        try:
            m1 = assemble_M1(sten, sigma)
            m3 = assemble_M3(sten, rings, sigma, cycle)
            hyb = assemble_hybrid(m1, m3, gamma)
            w = solve_constrained(hyb, None, cons, cache=solver_cache)
        except (SingularSystemError, InfeasibleCoefficientError, TeichpcError):
            k_hist.append(float("nan"))
            var_hist.append(float("nan"))
            step_hist.append(float("nan"))
            warnings.warn("hybrid solve failed; returning last iterate",
                          stacklevel=2)
            break
        f_new = np.column_stack([w[:n], w[n:]])
        step = float(np.linalg.norm(f_new - f))
        k_hist.append(k_n)
        var_hist.append(var_n)
        step_hist.append(step)
        f = f_new
        if step < eps:
            converged = True
            break

    mu_final = diffuse_pcbc(sten, f[:, 0] + 1j * f[:, 1], strict=False)
    return Mapping(uv=f, kind="teichmuller", converged=converged,
                   iterations=it, k_history=tuple(k_hist),
                   var_history=tuple(var_hist), step_history=tuple(step_hist),
                   mu=mu_final, clamped=clamped_total)


def pct_certificate(mu: np.ndarray, l0_csr, interior: np.ndarray) -> dict:
    """Discrete extremal-map certificate.

    (i) coefficient-norm uniformity: sd/mean of |mu| (when mean >= 0.05);
    (ii) at interior points, (L mu) * conj(mu) should be essentially real:
    fraction with relative imaginary part <= 0.1 must reach 0.9.
    """
    mu = np.asarray(mu, dtype=np.complex128)
    good = np.isfinite(mu)
    mag = np.abs(mu[good])
    mean = float(mag.mean()) if mag.size else 0.0
    uniformity = float(mag.std() / mean) if mean >= 0.05 else None

    w = l0_csr @ np.where(good, mu, 0.0)
    prod = w[interior] * np.conj(mu[interior])
    denom = np.abs(w[interior]) * np.abs(mu[interior])
    ok = denom > 1e-14
    ratio = np.abs(prod.imag[ok]) / denom[ok]
    frac = float((ratio <= 0.1).mean()) if ratio.size else 1.0

    passed = frac >= 0.9 and (uniformity is None or uniformity <= 0.15)
    return {"uniformity": uniformity, "holomorphic_frac": frac,
            "mean_norm": mean, "is_pct": bool(passed)}
