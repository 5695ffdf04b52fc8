# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twins of the numpy kernels (see _kernels_np for the contract)."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

BACKEND = "compiled"


def mls_system(const double[:, :, ::1] xy, const double[:, ::1] w):
    cdef Py_ssize_t n = xy.shape[0], k = xy.shape[1]
    gram_arr = np.zeros((n, 6, 6))
    rhs_arr = np.zeros((n, 6, k))
    cdef double[:, :, ::1] gram = gram_arr
    cdef double[:, :, ::1] rhs = rhs_arr
    cdef Py_ssize_t i, j, a, b
    cdef double q[6]
    cdef double x, y, wj, qa
    for i in range(n):
        for j in range(k):
            x = xy[i, j, 0]
            y = xy[i, j, 1]
            wj = w[i, j]
            q[0] = 1.0
            q[1] = x
            q[2] = y
            q[3] = x * x
            q[4] = x * y
            q[5] = y * y
            for a in range(6):
                qa = q[a] * wj
                rhs[i, a, j] = qa
                for b in range(a, 6):
                    gram[i, a, b] += qa * q[b]
        for a in range(6):
            for b in range(a):
                gram[i, a, b] = gram[i, b, a]
    return gram_arr, rhs_arr


def solve_stencils(const double[:, :, ::1] gram, const double[:, :, ::1] rhs,
                   const unsigned char[::1] ok):
    cdef Py_ssize_t n = gram.shape[0], k = rhs.shape[2]
    a_arr = np.full((n, 6, k), np.nan)
    cdef double[:, :, ::1] out = a_arr
    cdef double lo[6][6]
    cdef double col[6]
    cdef Py_ssize_t i, j, r, c, t
    cdef double s
    cdef bint fail
    for i in range(n):
        if not ok[i]:
            continue
        # Cholesky gram = L L^T (gram is SPD for validated stencils)
        fail = False
        for r in range(6):
            for c in range(r + 1):
                s = gram[i, r, c]
                for t in range(c):
                    s -= lo[r][t] * lo[c][t]
                if r == c:
                    if s <= 0.0:
                        fail = True
                        break
                    lo[r][r] = sqrt(s)
                else:
                    lo[r][c] = s / lo[c][c]
            if fail:
                break
        if fail:
            continue
        for j in range(k):
            for r in range(6):
                s = rhs[i, r, j]
                for t in range(r):
                    s -= lo[r][t] * col[t]
                col[r] = s / lo[r][r]
            for r in range(5, -1, -1):
                s = col[r]
                for t in range(r + 1, 6):
                    s -= lo[t][r] * out[i, t, j]
                out[i, r, j] = s / lo[r][r]
    return a_arr


def glap_rows(const double[:, :, ::1] a, const double[:, ::1] ac,
              const double[:, :, ::1] anb):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[2]
    vals_arr = np.empty((n, k))
    cdef double[:, ::1] vals = vals_arr
    cdef Py_ssize_t i, j
    cdef double da1x, da2x, da2y, da3y, g1, g2
    for i in range(n):
        da1x = 0.0
        da2x = 0.0
        da2y = 0.0
        da3y = 0.0
        for j in range(k):
            g1 = a[i, 1, j]
            g2 = a[i, 2, j]
            da1x += g1 * anb[i, j, 0]
            da2x += g1 * anb[i, j, 1]
            da2y += g2 * anb[i, j, 1]
            da3y += g2 * anb[i, j, 2]
        for j in range(k):
            vals[i, j] = (2.0 * ac[i, 0] * a[i, 3, j]
                          + 2.0 * ac[i, 1] * a[i, 4, j]
                          + 2.0 * ac[i, 2] * a[i, 5, j]
                          + (da1x + da2y) * a[i, 1, j]
                          + (da2x + da3y) * a[i, 2, j])
    return vals_arr


def pcbc_derivs(const double[:, :, ::1] a, const double[:, ::1] u,
                const double[:, ::1] v):
    cdef Py_ssize_t n = a.shape[0], k = a.shape[2]
    ux_arr = np.zeros(n)
    uy_arr = np.zeros(n)
    vx_arr = np.zeros(n)
    vy_arr = np.zeros(n)
    cdef double[::1] ux = ux_arr, uy = uy_arr, vx = vx_arr, vy = vy_arr
    cdef Py_ssize_t i, j
    cdef double g1, g2, su, sv
    for i in range(n):
        for j in range(k):
            g1 = a[i, 1, j]
            g2 = a[i, 2, j]
            su = u[i, j]
            sv = v[i, j]
            ux[i] += g1 * su
            uy[i] += g2 * su
            vx[i] += g1 * sv
            vy[i] += g2 * sv
    return ux_arr, uy_arr, vx_arr, vy_arr
