"""Sparse operator assembly and constrained solves.

Three operators act on a cloud of N points (through per-point planar charts):

M1 (2N x 2N)  first-order system coupling the two coordinate functions; with
              coefficients (a1, a2, a3) from a field mu, rows i / i+N read
                  (a1 Dx + a2 Dy) u - Dy v = 0
                  (a2 Dx + a3 Dy) u + Dx v = 0
              which at mu = 0 reduce to the Cauchy-Riemann equations. The
              rows vanish on (u, v) exactly when mu is the per-point
              coefficient estimate of the map.

M3 (N x N)    divergence-form operator rows. Interior points use the MLS
              expansion (second derivatives plus coefficient-gradient terms);
              boundary points use finite-element rows over a per-point
              Delaunay 1-ring with the coefficient matrix averaged over each
              triangle's vertices. Off-diagonals scale like 2(cot a + cot b)
              in the flat case; diagonals close each row to zero sum.

hybrid        entrywise sum M1 + gamma * blockdiag(M3, M3); no per-row
              rescaling (equalized row scales make the pencil numerically
              singular for gamma <= 1). gamma = inf returns the second-order
              block alone, gamma = 0 the first-order system alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, bicgstab, splu
from scipy.spatial import Delaunay, QhullError

from . import kernels
from .beltrami import alpha_coeffs
from .errors import SingularSystemError, TeichpcError
from .mls import StencilSet

__all__ = [
    "SparseOperator",
    "LocalRing",
    "build_rings",
    "ring_row",
    "glap_row_values",
    "assemble_M1",
    "assemble_M3",
    "assemble_hybrid",
    "solve_constrained",
]


@dataclass(frozen=True)
class SparseOperator:
    """Coordinate-triple sparse matrix; duplicate entries sum."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    constraints: tuple = ()

    def __post_init__(self):
        vals = np.asarray(self.vals, dtype=np.float64)
        if not np.isfinite(vals).all():
            raise TeichpcError("operator entries contain NaN/Inf")
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=np.int64))
        object.__setattr__(self, "cols", np.asarray(self.cols, dtype=np.int64))
        object.__setattr__(self, "vals", vals)

    @classmethod
    def from_csr(cls, m, constraints=()) -> "SparseOperator":
        coo = m.tocoo()
        return cls(shape=m.shape, rows=coo.row, cols=coo.col, vals=coo.data,
                   constraints=tuple(constraints))

    def tocsr(self):
        m = sp.coo_matrix((self.vals, (self.rows, self.cols)), shape=self.shape)
        return m.tocsr()

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("row,col,value\n")
            for r, c, v in zip(self.rows, self.cols, self.vals):
                fh.write(f"{r},{c},{v:.17g}\n")


@dataclass(frozen=True)
class LocalRing:
    """Delaunay 1-ring around one point, in that point's chart coordinates.

    tri_slots  : (T, 3) indices into the chart patch (slot 0 = the center);
                 every triangle contains slot 0
    tri_global : (T, 3) matching global point indices
    coords     : (K, 2) chart coordinates of the patch
    areas      : (T,) unsigned triangle areas
    """

    center: int
    tri_slots: np.ndarray
    tri_global: np.ndarray
    coords: np.ndarray
    areas: np.ndarray


def build_rings(coords: np.ndarray, idx: np.ndarray, which) -> dict:
    """Per-point 1-rings from the Delaunay triangulation of each chart patch.

    coords : (N, K, 2) chart-local neighbor coordinates (row 0 = origin)
    idx    : (N, K) matching global indices
    which  : point indices needing rings
    """
    coords = np.asarray(coords, dtype=np.float64)
    rings = {}
    for i in np.asarray(which, dtype=np.int64):
        local = coords[i]
        try:
            tri = Delaunay(local)
        except QhullError as exc:
            raise TeichpcError(f"degenerate ring at point {i}: {exc}") from None
        keep = tri.simplices[(tri.simplices == 0).any(axis=1)]
        if keep.size == 0:
            raise TeichpcError(f"no incident triangles at point {i}")
        # rotate each triangle so the center occupies the first slot
        where = np.argmax(keep == 0, axis=1)
        keep = np.stack([keep[np.arange(keep.shape[0]), (where + s) % 3]
                         for s in range(3)], axis=1)
        v0, v1, v2 = local[keep[:, 0]], local[keep[:, 1]], local[keep[:, 2]]
        area = 0.5 * np.abs((v1[:, 0] - v0[:, 0]) * (v2[:, 1] - v0[:, 1])
                            - (v1[:, 1] - v0[:, 1]) * (v2[:, 0] - v0[:, 0]))
        scale = np.linalg.norm(local, axis=1).max()
        if np.any(area <= 1e-14 * scale * scale):
            raise TeichpcError(f"zero-area ring triangle at point {i}")
        rings[int(i)] = LocalRing(center=int(i), tri_slots=keep,
                                  tri_global=idx[i][keep],
                                  coords=local, areas=area)
    return rings


def _hat_gradients(v0, v1, v2, signed2):
    """Gradients of the three linear hat functions on a triangle;
    signed2 is twice the signed area."""
    def rot(e):
        return np.array([-e[1], e[0]])
    return (rot(v2 - v1) / signed2, rot(v0 - v2) / signed2, rot(v1 - v0) / signed2)


def ring_row(ring: LocalRing, amats: np.ndarray):
    """Finite-element row of the divergence-form operator at a ring center.

    amats holds the per-point 2x2 coefficient matrices (global field).
    Returns (global cols, values) with the diagonal closing the row to zero
    sum; in the flat case the off-diagonal for a shared edge is
    2(cot a + cot b)."""
    acc = {}
    for slots, tri, area in zip(ring.tri_slots, ring.tri_global, ring.areas):
        v = ring.coords[slots]
        signed2 = ((v[1, 0] - v[0, 0]) * (v[2, 1] - v[0, 1])
                   - (v[1, 1] - v[0, 1]) * (v[2, 0] - v[0, 0]))
        g0, g1, g2 = _hat_gradients(v[0], v[1], v[2], signed2)
        at = (amats[tri[0]] + amats[tri[1]] + amats[tri[2]]) / 3.0
        w1 = -4.0 * area * float(g0 @ at @ g1)
        w2 = -4.0 * area * float(g0 @ at @ g2)
        acc[int(tri[1])] = acc.get(int(tri[1]), 0.0) + w1
        acc[int(tri[2])] = acc.get(int(tri[2]), 0.0) + w2
    cols = np.fromiter(acc.keys(), dtype=np.int64, count=len(acc))
    vals = np.fromiter(acc.values(), dtype=np.float64, count=len(acc))
    cols = np.append(cols, ring.center)
    vals = np.append(vals, -vals.sum())
    return cols, vals


def glap_row_values(stencils: StencilSet, mu: np.ndarray) -> np.ndarray:
    """MLS divergence-form row values, (N, K): per-point second-derivative
    combination weighted by the coefficient triple plus first-derivative
    terms from the triple's spatial gradient."""
    cf = alpha_coeffs(mu)
    triples = np.ascontiguousarray(cf.triples)
    anb = np.ascontiguousarray(triples[stencils.idx])
    return kernels.glap_rows(stencils.a, triples, anb)


def assemble_M1(stencils: StencilSet, mu: np.ndarray) -> SparseOperator:
    """First-order coupled system (2N x 2N); feasible mu required."""
    cf = alpha_coeffs(mu)
    n, k = stencils.n, stencils.k
    g1, g2 = stencils.a[:, 1, :], stencils.a[:, 2, :]
    idx = stencils.idx

    row_u_u = cf.a1[:, None] * g1 + cf.a2[:, None] * g2
    row_v_u = cf.a2[:, None] * g1 + cf.a3[:, None] * g2

    base = np.repeat(np.arange(n, dtype=np.int64), k)
    rows = np.concatenate([base, base, base + n, base + n])
    cols = np.concatenate([idx.ravel(), idx.ravel() + n,
                           idx.ravel(), idx.ravel() + n])
    vals = np.concatenate([row_u_u.ravel(), (-g2).ravel(),
                           row_v_u.ravel(), g1.ravel()])
    return SparseOperator(shape=(2 * n, 2 * n), rows=rows, cols=cols, vals=vals)


def assemble_M3(stencils: StencilSet, rings: dict, mu: np.ndarray,
                boundary) -> SparseOperator:
    """Divergence-form operator (N x N): MLS rows at interior points,
    ring rows at boundary points."""
    n, k = stencils.n, stencils.k
    boundary = np.asarray(boundary, dtype=np.int64)
    missing = [int(b) for b in boundary if int(b) not in rings]
    if missing:
        raise TeichpcError(f"missing rings for boundary points {missing[:10]}")
    interior = np.setdiff1d(np.arange(n, dtype=np.int64), boundary)

    vals_all = glap_row_values(stencils, mu)
    rows = [np.repeat(interior, k)]
    cols = [stencils.idx[interior].ravel()]
    vals = [vals_all[interior].ravel()]

    amats = alpha_coeffs(mu).matrices
    for b in boundary:
        c, v = ring_row(rings[int(b)], amats)
        rows.append(np.full(c.size, b, dtype=np.int64))
        cols.append(c)
        vals.append(v)
    return SparseOperator(shape=(n, n),
                          rows=np.concatenate(rows),
                          cols=np.concatenate(cols),
                          vals=np.concatenate(vals))


def assemble_hybrid(m1: SparseOperator, m2: SparseOperator,
                    gamma: float) -> SparseOperator:
    """Entrywise sum of the first- and second-order systems, m1 + gamma * m2.

    m2 may be the N x N divergence operator (it is block-duplicated onto both
    coordinates) or a ready 2N x 2N operator. gamma = inf returns the
    second-order block alone; gamma = 0 the first-order system alone. The
    second-order rows carry a larger grid-dependent scale than the first-order
    rows, so for moderate gamma the sum behaves like an elliptic system with a
    first-order correction; equalizing the row scales instead makes the pencil
    of the two operators numerically singular for gamma <= 1.
    """
    if gamma < 0 or math.isnan(gamma):
        raise TeichpcError("gamma must be >= 0 (or inf)")
    a = m1.tocsr()
    b = m2.tocsr()
    if b.shape[0] * 2 == a.shape[0]:
        b = sp.block_diag([b, b], format="csr")
    if b.shape != a.shape:
        raise TeichpcError(f"operator dimensions differ: {a.shape} vs {b.shape}")
    if math.isinf(gamma):
        return SparseOperator.from_csr(b)
    if gamma == 0.0:
        return SparseOperator.from_csr(a)
    return SparseOperator.from_csr((a + gamma * b).tocsr())


def _krylov_with_frozen_lu(aff, bf, cache):
    """One BiCGstab solve of aff x = bf preconditioned by the cached (stale)
    factorization, warm-started from the cached solution. Returns None when
    the inner iteration fails to reach roundoff-level residual quickly, which
    signals the caller to refactorize."""
    lu = cache["lu"]
    if lu.shape[0] != aff.shape[0]:
        return None
    x0 = cache.get("xf")
    if x0 is not None and x0.shape != bf.shape:
        x0 = None
    precond = LinearOperator(aff.shape, matvec=lu.solve)
    bnorm = float(np.linalg.norm(bf))
    try:
        cand, status = bicgstab(aff, bf, x0=x0, M=precond, maxiter=24,
                                rtol=1e-12, atol=1e-14 * (1.0 + bnorm))
    except TypeError:  # older scipy spells rtol as tol
        cand, status = bicgstab(aff, bf, x0=x0, M=precond, maxiter=24,
                                tol=1e-12, atol=1e-14 * (1.0 + bnorm))
    if status != 0 or not np.isfinite(cand).all():
        return None
    return cand


def solve_constrained(op: SparseOperator, rhs, constraints, *,
                      return_info: bool = False, cache: dict | None = None):
    """Solve op @ x = rhs with Dirichlet constraints eliminated.

    constraints: iterable of (dof, value). Rows of constrained dofs are
    dropped, their columns moved to the right-hand side. A direct sparse
    factorization is attempted first; on breakdown or a bad residual the
    ridge-regularized normal equations are used instead.

    cache: caller-owned dict for sequences of solves whose matrix drifts
    slowly (the extremal-map iteration re-solves a slightly different system
    every pass). The factorization of an earlier matrix preconditions a
    Krylov solve of the current one, with the previous solution as the
    starting guess; the factorization refreshes whenever the inner solve
    stops converging quickly. Validity is keyed on the constraint pattern.
    """
    cons = list(constraints) + list(op.constraints)
    n = op.shape[0]
    rhs = np.zeros(n) if rhs is None else np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (n,):
        raise TeichpcError(f"rhs must have shape ({n},)")
    if cons:
        dofs = np.asarray([c[0] for c in cons], dtype=np.int64)
        vals = np.asarray([c[1] for c in cons], dtype=np.float64)
        if np.unique(dofs).size != dofs.size:
            raise TeichpcError("constraint dofs must be distinct")
        if dofs.min() < 0 or dofs.max() >= n:
            raise TeichpcError("constraint dof out of range")
    else:
        dofs = np.empty(0, dtype=np.int64)
        vals = np.empty(0)

    x = np.zeros(n)
    x[dofs] = vals
    free = np.ones(n, dtype=bool)
    free[dofs] = False
    info = {"method": "direct", "fallback": False, "residual": 0.0}
    if not free.any():
        return (x, info) if return_info else x

    a = op.tocsr()
    b = rhs - a[:, dofs] @ vals if dofs.size else rhs.copy()
    aff = a[free][:, free].tocsc()
    bf = b[free]

    def _residual(xf):
        # Scaled by the data norm only: scaling by |x| as well would hide
        # the huge spurious solutions a direct factorization returns for
        # effectively singular systems.
        r = aff @ xf - bf
        return float(np.linalg.norm(r) / (np.linalg.norm(bf) + 1e-30))

    xf = None
    if cache is not None and cache.get("lu") is not None \
            and np.array_equal(cache["dofs"], dofs):
        cand = _krylov_with_frozen_lu(aff, bf, cache)
        if cand is not None:
            res = _residual(cand)
            if res <= 1e-8:
                xf, info["residual"] = cand, res
                info["method"] = "krylov-cached-lu"
                cache["xf"] = cand
    if xf is None:
        try:
            lu = splu(aff, permc_spec="MMD_AT_PLUS_A")
            cand = lu.solve(bf)
            if np.isfinite(cand).all():
                res = _residual(cand)
                if res <= 1e-6:
                    xf, info["residual"] = cand, res
                    if cache is not None:
                        cache.update(lu=lu, dofs=dofs, xf=cand)
        except (RuntimeError, ValueError):
            pass

    if xf is None:
        # rank-deficient or unstable square system: least squares with ridge
        info["method"], info["fallback"] = "normal-equations", True
        gram = (aff.T @ aff).tocsc()
        ridge = 1e-12 * (1.0 + float(abs(gram.diagonal()).max()))
        gram = (gram + ridge * sp.identity(gram.shape[0], format="csc")).tocsc()
        try:
            lu = splu(gram)
            cand = lu.solve(aff.T @ bf)
        except (RuntimeError, ValueError) as exc:
            raise SingularSystemError(f"normal-equation factorization failed: {exc}",
                                      condition=float("inf")) from None
        if not np.isfinite(cand).all():
            raise SingularSystemError("solution is non-finite even with ridge",
                                      condition=float("inf"))
        res = _residual(cand)
        if res > 1e-3:
            raise SingularSystemError(
                f"system is inconsistent or rank-deficient "
                f"(least-squares residual {res:.3g})", condition=float("inf"))
        xf, info["residual"] = cand, res

    x[free] = xf
    return (x, info) if return_info else x
