"""Second-order moving-least-squares engine.

Each stencil fits a quadratic through a point's neighborhood in local 2D
coordinates (center at the origin) and exposes derivative-extraction rows.
With basis q = [1, x, y, x^2, xy, y^2] and A = (Q^T W Q)^{-1} Q^T W, the rows
of A evaluated at the center give directly:

    d/dx   -> row 1          d/dy   -> row 2
    d2/dx2 -> 2 * row 3      d2/dxdy -> row 4      d2/dy2 -> 2 * row 5

(0-based rows). A reproduces all quadratics exactly on unisolvent stencils.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import SingularStencilError, TeichpcError

__all__ = [
    "WeightSpec",
    "MlsStencil",
    "StencilSet",
    "basis_q",
    "basis_q1",
    "basis_q2",
    "weight",
    "build_stencil",
    "build_stencils",
    "derivative_row",
]

WEIGHT_KINDS = ("constant", "exponential", "inverse-squared", "wendland",
                "special", "gaussian")
COND_CAP = 1e12

_ROW_SPECS = {
    "dx": ((1,), (1.0,)),
    "dy": ((2,), (1.0,)),
    "dxx": ((3,), (2.0,)),
    "dxy": ((4,), (1.0,)),
    "dyy": ((5,), (2.0,)),
    "lap": ((3, 5), (2.0, 2.0)),
}


@dataclass(frozen=True)
class WeightSpec:
    """Distance-weight family for the local least squares.

    K and D (neighbor count and maximal neighborhood distance) may be left
    None, in which case each stencil binds its own values.
    """

    kind: str = "gaussian"
    K: int | None = None
    D: float | None = None
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise TeichpcError(f"unknown weight kind {self.kind!r}")


def basis_q(x) -> np.ndarray:
    """Quadratic basis [1, x1, x2, x1^2, x1*x2, x2^2] at a 2D point."""
    x1, x2 = float(x[0]), float(x[1])
    return np.array([1.0, x1, x2, x1 * x1, x1 * x2, x2 * x2])


def basis_q1(x) -> np.ndarray:
    """d(basis)/dx1."""
    x1, x2 = float(x[0]), float(x[1])
    return np.array([0.0, 1.0, 0.0, 2.0 * x1, x2, 0.0])


def basis_q2(x) -> np.ndarray:
    """d(basis)/dx2."""
    x1, x2 = float(x[0]), float(x[1])
    return np.array([0.0, 0.0, 1.0, 0.0, x1, 2.0 * x2])


def _weight_values(kind, d, K, D, eps):
    d = np.asarray(d, dtype=np.float64)
    if kind == "constant":
        return np.ones_like(d)
    if kind == "inverse-squared":
        return 1.0 / (d * d + eps * eps)
    if kind in ("exponential", "wendland", "gaussian") and np.any(D <= 0):
        raise TeichpcError(f"{kind} weight needs a positive support radius D")
    if kind == "exponential":
        return np.exp(-(d * d) / (D * D))
    if kind == "wendland":
        t = np.clip(d / D, 0.0, 1.0)
        return (1.0 - t) ** 4 * (4.0 * t + 1.0)
    if kind == "special":
        return np.where(d == 0.0, 1.0, 1.0 / K)
    # gaussian: 1 at the center, (1/K) exp(-sqrt(K) d^2 / D^2) elsewhere
    return np.where(d == 0.0, 1.0,
                    (1.0 / K) * np.exp(-np.sqrt(K) * (d * d) / (D * D)))


def weight(spec: WeightSpec, d):
    """Evaluate the weight at distance(s) d >= 0."""
    d = np.asarray(d, dtype=np.float64)
    if np.any(d < 0):
        raise TeichpcError("weight distance must be >= 0")
    needs_k = spec.kind in ("special", "gaussian")
    needs_d = spec.kind in ("exponential", "wendland", "gaussian")
    if needs_k and spec.K is None:
        raise TeichpcError(f"{spec.kind} weight needs K bound in the spec")
    if needs_d and spec.D is None:
        raise TeichpcError(f"{spec.kind} weight needs D bound in the spec")
    out = _weight_values(spec.kind, d, spec.K, spec.D, spec.eps)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class MlsStencil:
    """A single least-squares stencil in center-local coordinates."""

    center: int
    indices: np.ndarray       # (K,) global column indices
    a: np.ndarray             # (6, K)
    q0: np.ndarray            # basis at the center
    q10: np.ndarray           # d/dx1 basis at the center
    q20: np.ndarray           # d/dx2 basis at the center
    q110: np.ndarray          # d2/dx1^2 basis row
    q120: np.ndarray          # d2/dx1dx2 basis row
    q220: np.ndarray          # d2/dx2^2 basis row
    condition: float = 0.0


@dataclass(frozen=True)
class StencilSet:
    """Batched stencils for a whole cloud (shared K)."""

    idx: np.ndarray           # (N, K) global neighbor indices, self first
    a: np.ndarray             # (N, 6, K)
    condition: np.ndarray     # (N,)

    @property
    def n(self) -> int:
        return self.idx.shape[0]

    @property
    def k(self) -> int:
        return self.idx.shape[1]

    def stencil(self, i: int) -> MlsStencil:
        z = np.zeros(2)
        return MlsStencil(center=int(self.idx[i, 0]), indices=self.idx[i],
                          a=self.a[i], q0=basis_q(z), q10=basis_q1(z),
                          q20=basis_q2(z),
                          q110=np.array([0, 0, 0, 2.0, 0, 0]),
                          q120=np.array([0, 0, 0, 0, 1.0, 0]),
                          q220=np.array([0, 0, 0, 0, 0, 2.0]),
                          condition=float(self.condition[i]))


def _gram_condition(gram):
    lam = np.linalg.eigvalsh(gram)
    lo, hi = lam[:, 0], lam[:, -1]
    with np.errstate(divide="ignore", invalid="ignore"):
        cond = np.where(lo > 0.0, hi / np.maximum(lo, 1e-300), np.inf)
    return cond


def build_stencils(coords: np.ndarray, indices: np.ndarray,
                   spec: WeightSpec | None = None,
                   cond_cap: float = COND_CAP) -> StencilSet:
    """Build all stencils of a cloud at once.

    coords  : (N, K, 2) center-local neighbor coordinates (row 0 = origin)
    indices : (N, K) matching global indices
    """
    if spec is None:
        spec = WeightSpec()
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    n, k = coords.shape[0], coords.shape[1]
    if k < 6:
        raise TeichpcError(f"second-order MLS needs K >= 6 samples, got {k}")
    d = np.linalg.norm(coords, axis=2)
    bigd = spec.D if spec.D is not None else np.maximum(d.max(axis=1), 1e-300)[:, None]
    kk = spec.K if spec.K is not None else k
    w = _weight_values(spec.kind, d, kk, bigd, spec.eps)

    gram, rhs = kernels.mls_system(coords, np.ascontiguousarray(w))
    cond = _gram_condition(gram)
    ok = np.ascontiguousarray((cond < cond_cap).astype(np.uint8))
    a = kernels.solve_stencils(gram, rhs, ok)
    if not ok.all():
        bad = np.nonzero(ok == 0)[0]
        raise SingularStencilError(
            f"{bad.size} stencils exceed the condition cap {cond_cap:g} "
            f"(worst {cond[bad].max():.3g} at point {bad[cond[bad].argmax()]})",
            indices=bad, condition=float(cond[bad].max()))
    return StencilSet(idx=np.ascontiguousarray(indices, dtype=np.int64),
                      a=a, condition=cond)


def build_stencil(points2d: np.ndarray, spec: WeightSpec | None = None,
                  indices: np.ndarray | None = None,
                  cond_cap: float = COND_CAP) -> MlsStencil:
    """Build one stencil. Row 0 of points2d is the center; coordinates are
    shifted so the center sits at the origin before fitting."""
    pts = np.asarray(points2d, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise TeichpcError("points2d must be (K, 2)")
    local = pts - pts[0]
    if indices is None:
        indices = np.arange(pts.shape[0])
    sset = build_stencils(local[None], np.asarray(indices, dtype=np.int64)[None],
                          spec=spec, cond_cap=cond_cap)
    return sset.stencil(0)


def derivative_row(stencil: MlsStencil, which: str):
    """Sparse derivative row at the stencil center.

    Returns (global_indices, values) so that values @ f[global_indices]
    estimates the requested derivative.
    """
    try:
        rows, scales = _ROW_SPECS[which]
    except KeyError:
        raise TeichpcError(f"unknown derivative {which!r} "
                           f"(want one of {tuple(_ROW_SPECS)})") from None
    vals = sum(s * stencil.a[r] for r, s in zip(rows, scales))
    return stencil.indices, vals
