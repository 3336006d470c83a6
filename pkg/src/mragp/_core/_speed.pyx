# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled numerical core: pairwise kernels and sparse LDL' routines.

Mirrors mragp._core._pure; see that module for the reference semantics.
"""

import numpy as np

from libc.math cimport asin, cos, exp, sin, sqrt

from .exceptions import PivotError

EARTH_RADIUS_KM = 6371.0

cdef double _RADIUS = 6371.0
cdef double _DEG = 0.017453292519943295      # pi / 180
cdef double _SQRT3 = 1.7320508075688772


def haversine_matrix(lon_a, lat_a, lon_b, lat_b):
    cdef double[::1] ga = np.ascontiguousarray(lon_a, dtype=np.float64)
    cdef double[::1] la = np.ascontiguousarray(lat_a, dtype=np.float64)
    cdef double[::1] gb = np.ascontiguousarray(lon_b, dtype=np.float64)
    cdef double[::1] lb = np.ascontiguousarray(lat_b, dtype=np.float64)
    cdef Py_ssize_t na = ga.shape[0], nb = gb.shape[0], i, j
    out_arr = np.empty((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double lai, gai, cos_lai, s1, s2, h
    with nogil:
        for i in range(na):
            lai = la[i] * _DEG
            gai = ga[i] * _DEG
            cos_lai = cos(lai)
            for j in range(nb):
                s1 = sin((lb[j] * _DEG - lai) * 0.5)
                s2 = sin((gb[j] * _DEG - gai) * 0.5)
                h = s1 * s1 + cos_lai * cos(lb[j] * _DEG) * s2 * s2
                if h < 0.0:
                    h = 0.0
                elif h > 1.0:
                    h = 1.0
                out[i, j] = 2.0 * _RADIUS * asin(sqrt(h))
    return out_arr


def kernel_values(dist_km, gap_days, double sigma2, double rho, double phi,
                  double nugget, match_flat):
    cdef double[:, ::1] d = np.ascontiguousarray(dist_km, dtype=np.float64)
    cdef double[:, ::1] g = np.ascontiguousarray(gap_days, dtype=np.float64)
    cdef Py_ssize_t n = d.shape[0], m = d.shape[1], i, j
    out_arr = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double c = _SQRT3 / rho
    cdef double inv_phi = 1.0 / phi
    cdef double x
    with nogil:
        for i in range(n):
            for j in range(m):
                x = c * d[i, j]
                out[i, j] = sigma2 * (1.0 + x) * exp(-x - g[i, j] * inv_phi)
    if match_flat is not None and len(match_flat):
        out_arr.ravel()[match_flat] += sigma2 * nugget
    return out_arr


def ldl_symbolic(Py_ssize_t n, Up_in, Ui_in):
    cdef long long[::1] Up = np.ascontiguousarray(Up_in, dtype=np.int64)
    cdef long long[::1] Ui = np.ascontiguousarray(Ui_in, dtype=np.int64)
    parent_arr = np.full(n, -1, dtype=np.int64)
    flag_arr = np.zeros(n, dtype=np.int64)
    Lnz_arr = np.zeros(n, dtype=np.int64)
    cdef long long[::1] parent = parent_arr
    cdef long long[::1] flag = flag_arr
    cdef long long[::1] Lnz = Lnz_arr
    cdef Py_ssize_t k, p
    cdef long long i
    with nogil:
        for k in range(n):
            parent[k] = -1
            flag[k] = k
            for p in range(Up[k], Up[k + 1]):
                i = Ui[p]
                while i < k and flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    Lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    Lp_arr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(Lnz_arr, out=Lp_arr[1:])
    return parent_arr, Lnz_arr, Lp_arr


def ldl_numeric(Py_ssize_t n, Up_in, Ui_in, Ux_in, parent_in, Lp_in,
                double pivot_floor):
    cdef long long[::1] Up = np.ascontiguousarray(Up_in, dtype=np.int64)
    cdef long long[::1] Ui = np.ascontiguousarray(Ui_in, dtype=np.int64)
    cdef double[::1] Ux = np.ascontiguousarray(Ux_in, dtype=np.float64)
    cdef long long[::1] parent = np.ascontiguousarray(parent_in, dtype=np.int64)
    cdef long long[::1] Lp = np.ascontiguousarray(Lp_in, dtype=np.int64)
    Li_arr = np.zeros(Lp_in[n], dtype=np.int64)
    Lx_arr = np.zeros(Lp_in[n], dtype=np.float64)
    D_arr = np.zeros(n, dtype=np.float64)
    cdef long long[::1] Li = Li_arr
    cdef double[::1] Lx = Lx_arr
    cdef double[::1] D = D_arr
    Y_arr = np.zeros(n, dtype=np.float64)
    pattern_arr = np.zeros(n, dtype=np.int64)
    flag_arr = np.full(n, -1, dtype=np.int64)
    lnz_arr = np.zeros(n, dtype=np.int64)
    stack_arr = np.zeros(n, dtype=np.int64)
    cdef double[::1] Y = Y_arr
    cdef long long[::1] pattern = pattern_arr
    cdef long long[::1] flag = flag_arr
    cdef long long[::1] lnz = lnz_arr
    cdef long long[::1] stack = stack_arr
    cdef Py_ssize_t k, p, s, top, length
    cdef long long i, p2
    cdef double yi, lki
    cdef Py_ssize_t bad = -1
    with nogil:
        for k in range(n):
            Y[k] = 0.0
            top = n
            flag[k] = k
            for p in range(Up[k], Up[k + 1]):
                i = Ui[p]
                Y[i] += Ux[p]
                length = 0
                while flag[i] != k:
                    pattern[length] = i
                    length += 1
                    flag[i] = k
                    i = parent[i]
                while length > 0:
                    top -= 1
                    length -= 1
                    stack[top] = pattern[length]
            D[k] = Y[k]
            Y[k] = 0.0
            for s in range(top, n):
                i = stack[s]
                yi = Y[i]
                Y[i] = 0.0
                p2 = Lp[i] + lnz[i]
                for p in range(Lp[i], p2):
                    Y[Li[p]] -= Lx[p] * yi
                lki = yi / D[i]
                D[k] -= lki * yi
                Li[p2] = k
                Lx[p2] = lki
                lnz[i] += 1
            if not D[k] > pivot_floor:
                bad = k
                break
    if bad >= 0:
        raise PivotError(bad, D_arr[bad])
    return Li_arr, Lx_arr, D_arr


def ldl_solve(Py_ssize_t n, Lp_in, Li_in, Lx_in, D_in, B_in):
    cdef long long[::1] Lp = np.ascontiguousarray(Lp_in, dtype=np.int64)
    cdef long long[::1] Li = np.ascontiguousarray(Li_in, dtype=np.int64)
    cdef double[::1] Lx = np.ascontiguousarray(Lx_in, dtype=np.float64)
    cdef double[::1] D = np.ascontiguousarray(D_in, dtype=np.float64)
    cdef double[:, ::1] B = B_in
    cdef Py_ssize_t nrhs = B.shape[1], j, p, r
    cdef long long i
    cdef double lx, dj
    with nogil:
        for j in range(n):
            for p in range(Lp[j], Lp[j + 1]):
                i = Li[p]
                lx = Lx[p]
                for r in range(nrhs):
                    B[i, r] -= lx * B[j, r]
        for j in range(n):
            dj = D[j]
            for r in range(nrhs):
                B[j, r] /= dj
        for j in range(n - 1, -1, -1):
            for p in range(Lp[j], Lp[j + 1]):
                i = Li[p]
                lx = Lx[p]
                for r in range(nrhs):
                    B[j, r] -= lx * B[i, r]
    return B_in
