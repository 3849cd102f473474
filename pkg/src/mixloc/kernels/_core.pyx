# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel core: farthest point selection, neighborhood moment
accumulation, and fused activation loops. Matches mixloc.kernels.reference
semantics; fps_select is bit-identical to the fallback."""

import numpy as np

cimport numpy as cnp
from libc.math cimport erf as c_erf
from libc.math cimport erff as c_erff
from libc.math cimport exp as c_exp
from libc.math cimport expf as c_expf

cnp.import_array()

ctypedef fused floating:
    float
    double

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT2PI = 0.3989422804014327


def fps_select(double[:, ::1] points, int m, long first):
    cdef Py_ssize_t n = points.shape[0]
    if m > n:
        m = <int> n
    out_arr = np.empty(m, dtype=np.int64)
    best_arr = np.empty(n, dtype=np.float64)
    cdef long[::1] out = out_arr
    cdef double[::1] best = best_arr
    cdef Py_ssize_t i, j, nxt
    cdef double dx, dy, dz, d2, bmax
    cdef double px, py, pz

    out[0] = first
    px = points[first, 0]; py = points[first, 1]; pz = points[first, 2]
    for j in range(n):
        dx = points[j, 0] - px
        dy = points[j, 1] - py
        dz = points[j, 2] - pz
        best[j] = dx * dx + dy * dy + dz * dz

    for i in range(1, m):
        nxt = 0
        bmax = best[0]
        for j in range(1, n):
            if best[j] > bmax:
                bmax = best[j]
                nxt = j
        out[i] = nxt
        px = points[nxt, 0]; py = points[nxt, 1]; pz = points[nxt, 2]
        for j in range(n):
            dx = points[j, 0] - px
            dy = points[j, 1] - py
            dz = points[j, 2] - pz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 < best[j]:
                best[j] = d2
    return out_arr


def neighbor_moments(double[:, ::1] points, long[::1] queries, double radius):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t m = queries.shape[0]
    cdef double r2 = radius * radius
    counts_arr = np.zeros(m, dtype=np.int64)
    s1_arr = np.zeros((m, 3), dtype=np.float64)
    s2_arr = np.zeros((m, 3, 3), dtype=np.float64)
    cdef long[::1] counts = counts_arr
    cdef double[:, ::1] s1 = s1_arr
    cdef double[:, :, ::1] s2 = s2_arr
    cdef Py_ssize_t k, j, q
    cdef double qx, qy, qz, dx, dy, dz, d2
    cdef long c

    for k in range(m):
        q = queries[k]
        qx = points[q, 0]; qy = points[q, 1]; qz = points[q, 2]
        c = 0
        for j in range(n):
            if j == q:
                continue
            dx = points[j, 0] - qx
            dy = points[j, 1] - qy
            dz = points[j, 2] - qz
            d2 = dx * dx + dy * dy + dz * dz
            if d2 <= r2:
                c += 1
                s1[k, 0] += dx
                s1[k, 1] += dy
                s1[k, 2] += dz
                s2[k, 0, 0] += dx * dx
                s2[k, 0, 1] += dx * dy
                s2[k, 0, 2] += dx * dz
                s2[k, 1, 1] += dy * dy
                s2[k, 1, 2] += dy * dz
                s2[k, 2, 2] += dz * dz
        counts[k] = c
        s2[k, 1, 0] = s2[k, 0, 1]
        s2[k, 2, 0] = s2[k, 0, 2]
        s2[k, 2, 1] = s2[k, 1, 2]
    return counts_arr, s1_arr, s2_arr


def gelu(floating[::1] x):
    """Fused y = x * Phi(x) with Phi = 0.5 (1 + erf(x / sqrt(2)))."""
    cdef Py_ssize_t n = x.shape[0]
    if floating is float:
        y_arr = np.empty(n, dtype=np.float32)
        phi_arr = np.empty(n, dtype=np.float32)
    else:
        y_arr = np.empty(n, dtype=np.float64)
        phi_arr = np.empty(n, dtype=np.float64)
    cdef floating[::1] y = y_arr
    cdef floating[::1] phi = phi_arr
    cdef Py_ssize_t i
    cdef floating p
    for i in range(n):
        if floating is float:
            p = 0.5 * (1.0 + c_erff(x[i] * <float> INV_SQRT2))
        else:
            p = 0.5 * (1.0 + c_erf(x[i] * INV_SQRT2))
        phi[i] = p
        y[i] = x[i] * p
    return y_arr, phi_arr


def gelu_grad(floating[::1] x, floating[::1] phi, floating[::1] dy):
    """dx = dy * (Phi(x) + x * pdf(x))."""
    cdef Py_ssize_t n = x.shape[0]
    if floating is float:
        out_arr = np.empty(n, dtype=np.float32)
    else:
        out_arr = np.empty(n, dtype=np.float64)
    cdef floating[::1] out = out_arr
    cdef Py_ssize_t i
    cdef floating pdf
    for i in range(n):
        if floating is float:
            pdf = c_expf(-0.5 * x[i] * x[i]) * <float> INV_SQRT2PI
        else:
            pdf = c_exp(-0.5 * x[i] * x[i]) * INV_SQRT2PI
        out[i] = dy[i] * (phi[i] + x[i] * pdf)
    return out_arr


def relu_grad(floating[::1] x, floating[::1] dy):
    cdef Py_ssize_t n = x.shape[0]
    if floating is float:
        out_arr = np.empty(n, dtype=np.float32)
    else:
        out_arr = np.empty(n, dtype=np.float64)
    cdef floating[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = dy[i] if x[i] > 0 else 0.0
    return out_arr
