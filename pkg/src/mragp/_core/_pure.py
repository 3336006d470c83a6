"""NumPy fallback implementations of the numerical core.

The compiled extension (``mragp._core._speed``) provides the same functions.
This module is selected when the extension is unavailable or when the
environment variable ``MRAGP_BACKEND=pure`` forces it; results agree with the
compiled backend up to floating-point reassociation.
"""

from __future__ import annotations

import numpy as np

from .exceptions import PivotError

EARTH_RADIUS_KM = 6371.0

SQRT3 = np.sqrt(3.0)


def haversine_matrix(lon_a, lat_a, lon_b, lat_b):
    """Great-circle distances in km between two coordinate lists (degrees).

    Returns an (len(a), len(b)) matrix.
    """
    la = np.radians(np.asarray(lat_a, dtype=np.float64))[:, None]
    lb = np.radians(np.asarray(lat_b, dtype=np.float64))[None, :]
    ga = np.radians(np.asarray(lon_a, dtype=np.float64))[:, None]
    gb = np.radians(np.asarray(lon_b, dtype=np.float64))[None, :]
    s1 = np.sin((lb - la) / 2.0)
    s2 = np.sin((gb - ga) / 2.0)
    h = s1 * s1 + np.cos(la) * np.cos(lb) * s2 * s2
    # guard rounding excursions outside asin's domain
    np.clip(h, 0.0, 1.0, out=h)
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(h))


def kernel_values(dist_km, gap_days, sigma2, rho, phi, nugget, match_flat):
    """Separable space-time covariance evaluated on precomputed geometry.

    dist_km, gap_days : (n, m) arrays of spatial distances / temporal gaps.
    match_flat : flat indices (into the (n, m) result) of coincident
        coordinate pairs that receive the diagonal jitter, or None.
    Returns sigma2 * matern_3/2(dist) * exp(-gap/phi), plus sigma2*nugget at
    the matched positions.
    """
    x = (SQRT3 / rho) * dist_km
    out = np.exp(-x - np.asarray(gap_days, dtype=np.float64) / phi)
    out *= 1.0 + x
    out *= sigma2
    if match_flat is not None and len(match_flat):
        out.ravel()[match_flat] += sigma2 * nugget
    return out


def ldl_symbolic(n, Up, Ui):
    """Elimination tree and column counts for an upper-triangular CSC pattern.

    Up, Ui: CSC column pointers / row indices of the upper triangle of the
    (permuted) symmetric matrix, diagonal included.
    Returns (parent, Lnz, Lp): elimination-tree parents, per-column factor
    counts (strictly-below-diagonal), and column pointers for L.
    """
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.zeros(n, dtype=np.int64)
    Lnz = np.zeros(n, dtype=np.int64)
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
    Lp = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(Lnz, out=Lp[1:])
    return parent, Lnz, Lp


def ldl_numeric(n, Up, Ui, Ux, parent, Lp, pivot_floor):
    """Up-looking LDL' factorization. Pattern must match the symbolic pass.

    Returns (Li, Lx, D) where L is unit lower triangular (strict part stored
    column-wise at Lp offsets) and D is the pivot vector. Raises PivotError
    when a pivot is <= pivot_floor.
    """
    Li = np.zeros(Lp[n], dtype=np.int64)
    Lx = np.zeros(Lp[n], dtype=np.float64)
    D = np.zeros(n, dtype=np.float64)
    Y = np.zeros(n, dtype=np.float64)
    pattern = np.zeros(n, dtype=np.int64)
    flag = np.full(n, -1, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    stack = np.zeros(n, dtype=np.int64)
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
            raise PivotError(k, D[k])
    return Li, Lx, D


def ldl_solve(n, Lp, Li, Lx, D, B):
    """Solve L D L' X = B in place. B is (n, nrhs), C-contiguous."""
    for j in range(n):
        bj = B[j]
        for p in range(Lp[j], Lp[j + 1]):
            B[Li[p]] -= Lx[p] * bj
    B /= D[:, None]
    for j in range(n - 1, -1, -1):
        bj = B[j]
        for p in range(Lp[j], Lp[j + 1]):
            bj -= Lx[p] * B[Li[p]]
        B[j] = bj
    return B
