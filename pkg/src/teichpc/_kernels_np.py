"""Pure numpy implementations of the hot per-point kernels.

Shapes: N stencils of K neighbors each. ``xy`` holds center-local neighbor
coordinates, row 0 the center itself (origin). The polynomial basis is
[1, x, y, x^2, x*y, y^2].
"""

import numpy as np

BACKEND = "numpy"


def mls_system(xy, w):
    """Weighted normal equations of every stencil.

    Returns (gram, rhs) with gram = Q^T W Q (N,6,6) and rhs = Q^T W (N,6,K).
    """
    x, y = xy[..., 0], xy[..., 1]
    q = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1)  # (N,K,6)
    qw = q * w[..., None]
    gram = np.einsum("nki,nkj->nij", qw, q)
    rhs = np.ascontiguousarray(np.swapaxes(qw, 1, 2))
    return gram, rhs


def solve_stencils(gram, rhs, ok):
    """Solve gram @ A = rhs per stencil; rows with ok=0 are left as NaN."""
    ok = ok.astype(bool)
    a = np.full(rhs.shape, np.nan)
    if ok.any():
        a[ok] = np.linalg.solve(gram[ok], rhs[ok])
    return a


def glap_rows(a, ac, anb):
    """Interior generalized-Laplacian row values (N,K).

    a   : (N,6,K) stencil matrices
    ac  : (N,3) coefficient triple (a1,a2,a3) at each center
    anb : (N,K,3) coefficient triples at the neighbors

    Row = a1*Dxx + 2*a2*Dxy + a3*Dyy + (d1.a1nb + d2.a2nb)*Dx
          + (d1.a2nb + d2.a3nb)*Dy with MLS derivative rows D*.
    """
    g1 = a[:, 1, :]
    g2 = a[:, 2, :]
    da1x = np.einsum("nk,nk->n", g1, anb[..., 0])
    da2x = np.einsum("nk,nk->n", g1, anb[..., 1])
    da2y = np.einsum("nk,nk->n", g2, anb[..., 1])
    da3y = np.einsum("nk,nk->n", g2, anb[..., 2])
    return (2.0 * ac[:, 0, None] * a[:, 3, :]
            + 2.0 * ac[:, 1, None] * a[:, 4, :]
            + 2.0 * ac[:, 2, None] * a[:, 5, :]
            + (da1x + da2y)[:, None] * g1
            + (da2x + da3y)[:, None] * g2)


def pcbc_derivs(a, u, v):
    """First derivatives of a sampled map at every stencil center.

    u, v: (N,K) samples over each stencil's neighbors.
    Returns (ux, uy, vx, vy), each (N,).
    """
    g1 = a[:, 1, :]
    g2 = a[:, 2, :]
    ux = np.einsum("nk,nk->n", g1, u)
    uy = np.einsum("nk,nk->n", g2, u)
    vx = np.einsum("nk,nk->n", g1, v)
    vy = np.einsum("nk,nk->n", g2, v)
    return ux, uy, vx, vy
