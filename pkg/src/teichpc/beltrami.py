"""Complex distortion-coefficient algebra.

A map f = u + iv has coefficient mu = f_zbar / f_z. Per-point estimates are
obtained from MLS derivative rows:

    numerator   (u_x - v_y) + i (u_y + v_x)      ( = 2 f_zbar )
    denominator (u_x + v_y) + i (v_x - u_y)      ( = 2 f_z )

The coefficient triple (a1, a2, a3) of the divergence-form operator is, with
mu = rho + i tau and den = 1 - rho^2 - tau^2:

    a1 = ((rho - 1)^2 + tau^2) / den
    a2 = -2 tau / den
    a3 = ((1 + rho)^2 + tau^2) / den

The symmetric matrix A = [[a1, a2], [a2, a3]] has det A = 1 identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import DegenerateJacobianError, InfeasibleCoefficientError, TeichpcError
from .mls import StencilSet

__all__ = [
    "CoeffField",
    "alpha_coeffs",
    "coeff_matrices",
    "field_derivatives",
    "diffuse_pcbc",
    "pcbc_from_values",
    "compose_beltrami",
    "inverse_coefficient",
    "dilation",
    "teich_distance",
    "feasibility_clamp",
    "save_complex_field",
    "load_complex_field",
]

FEAS_TOL = 1e-8


@dataclass(frozen=True)
class CoeffField:
    """Per-point (a1, a2, a3) coefficient triples."""

    a1: np.ndarray
    a2: np.ndarray
    a3: np.ndarray

    @property
    def triples(self) -> np.ndarray:
        """(N, 3) stacked view."""
        return np.stack([self.a1, self.a2, self.a3], axis=-1)

    @property
    def matrices(self) -> np.ndarray:
        """(N, 2, 2) symmetric positive-definite matrices, det = 1."""
        out = np.empty(self.a1.shape + (2, 2))
        out[..., 0, 0] = self.a1
        out[..., 0, 1] = self.a2
        out[..., 1, 0] = self.a2
        out[..., 1, 1] = self.a3
        return out


def alpha_coeffs(mu) -> CoeffField:
    """Divergence-form coefficients of a feasible field (|mu| < 1)."""
    mu = np.asarray(mu, dtype=np.complex128)
    rho, tau = mu.real, mu.imag
    sq = rho * rho + tau * tau
    if np.any(sq >= (1.0 - FEAS_TOL) ** 2):
        worst = float(np.sqrt(sq.max()))
        raise InfeasibleCoefficientError(
            f"|mu| reaches {worst:.6f}; need |mu| <= 1 - {FEAS_TOL:g}")
    den = 1.0 - sq
    a1 = ((rho - 1.0) ** 2 + tau * tau) / den
    a2 = -2.0 * tau / den
    a3 = ((1.0 + rho) ** 2 + tau * tau) / den
    return CoeffField(a1=a1, a2=a2, a3=a3)


def coeff_matrices(mu) -> np.ndarray:
    return alpha_coeffs(mu).matrices


def field_derivatives(stencils: StencilSet, u: np.ndarray, v: np.ndarray):
    """MLS first derivatives (ux, uy, vx, vy) of two global scalar fields."""
    un = np.ascontiguousarray(u[stencils.idx])
    vn = np.ascontiguousarray(v[stencils.idx])
    return kernels.pcbc_derivs(stencils.a, un, vn)


def _ratio(ux, uy, vx, vy, strict):
    num = (ux - vy) + 1j * (uy + vx)
    den = (ux + vy) + 1j * (vx - uy)
    small = np.abs(den) <= 1e-12
    if strict and np.any(small):
        bad = np.nonzero(small)[0]
        raise DegenerateJacobianError(
            f"complex derivative vanishes at {bad.size} points (first: {bad[:5].tolist()})")
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = num / den
    if not strict:
        mu = np.where(small, np.inf * (1.0 + 0.0j), mu)
    return mu


def diffuse_pcbc(stencils: StencilSet, f: np.ndarray, strict: bool = True) -> np.ndarray:
    """Per-point coefficient of a global complex-valued map sample.

    With strict=False degenerate points yield complex infinity instead of an
    error (iterations filter them out by magnitude).
    """
    f = np.asarray(f)
    if np.iscomplexobj(f):
        u, v = np.ascontiguousarray(f.real), np.ascontiguousarray(f.imag)
    else:
        u, v = np.ascontiguousarray(f[:, 0]), np.ascontiguousarray(f[:, 1])
    ux, uy, vx, vy = field_derivatives(stencils, u, v)
    return _ratio(ux, uy, vx, vy, strict)


def pcbc_from_values(stencils: StencilSet, u_nb: np.ndarray, v_nb: np.ndarray,
                     strict: bool = True) -> np.ndarray:
    """Same as diffuse_pcbc but with per-stencil local sample values (N, K),
    for maps only defined chart-by-chart."""
    ux, uy, vx, vy = kernels.pcbc_derivs(stencils.a,
                                         np.ascontiguousarray(u_nb),
                                         np.ascontiguousarray(v_nb))
    return _ratio(ux, uy, vx, vy, strict)


def compose_beltrami(mu_f, mu_g_at_fz, fz_phase):
    """Coefficient of g o f from mu_f, mu_g evaluated at f(z), and the unit
    factor conj(f_z)/f_z."""
    mu_f = np.asarray(mu_f, dtype=np.complex128)
    mu_g = np.asarray(mu_g_at_fz, dtype=np.complex128)
    ph = np.asarray(fz_phase, dtype=np.complex128)
    return (mu_f + ph * mu_g) / (1.0 + ph * np.conj(mu_f) * mu_g)


def inverse_coefficient(mu_f, fz):
    """Coefficient of the inverse map, evaluated at image points:
    mu_{f^-1}(f(z)) = -mu_f(z) * f_z(z) / conj(f_z(z))."""
    mu_f = np.asarray(mu_f, dtype=np.complex128)
    fz = np.asarray(fz, dtype=np.complex128)
    return -mu_f * fz / np.conj(fz)


def dilation(k):
    """Distortion K = (1 + k) / (1 - k) of a coefficient norm k in [0, 1)."""
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 0) or np.any(k >= 1):
        raise TeichpcError("dilation needs 0 <= k < 1")
    out = (1.0 + k) / (1.0 - k)
    return float(out) if out.ndim == 0 else out


def teich_distance(k):
    """Half the log-dilation, 0.5 * log((1+k)/(1-k)). The representative k is
    the mean of |mu| over the cloud, not the sup."""
    k = np.asarray(k, dtype=np.float64)
    if np.any(k < 0) or np.any(k >= 1):
        raise TeichpcError("distance needs 0 <= k < 1")
    out = 0.5 * np.log((1.0 + k) / (1.0 - k))
    return float(out) if out.ndim == 0 else out


def feasibility_clamp(mu, cap: float = 0.999):
    """Clamp |mu| to cap (keeping the argument). Returns (clamped, count)."""
    mu = np.asarray(mu, dtype=np.complex128)
    mag = np.abs(mu)
    finite = np.isfinite(mu.real) & np.isfinite(mu.imag) & np.isfinite(mag)
    over = ~finite | (mag > cap)
    out = mu.copy()
    out[~finite] = cap  # no usable argument; pin to a real cap value
    scale_idx = finite & (mag > cap)
    out[scale_idx] = mu[scale_idx] * (cap / mag[scale_idx])
    return out, int(np.count_nonzero(over))


def save_complex_field(path, mu) -> None:
    mu = np.asarray(mu, dtype=np.complex128)
    with open(Path(path), "w") as fh:
        fh.write("index,re,im\n")
        for i, z in enumerate(mu):
            fh.write(f"{i},{z.real:.17g},{z.imag:.17g}\n")


def load_complex_field(path) -> np.ndarray:
    data = np.genfromtxt(Path(path), delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    return data[:, 1] + 1j * data[:, 2]
