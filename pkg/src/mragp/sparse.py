"""Sparse symmetric LDL' factorization with reusable symbolic analysis.

Matrices are CSC with int64 indices. Symmetric matrices store the lower
triangle only, diagonal included, rows sorted within each column. analyze()
computes a fill-reducing permutation (approximate minimum degree via cvxopt)
plus the elimination structure; the result can be reused by factorize() for
any matrix with the identical pattern, which is what makes repeated
factorizations across hyperparameter draws cheap.

No pivoting: the inputs here are positive definite by construction, and a
pivot at or below PIVOT_FLOOR raises NotPositiveDefiniteError instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _core
from .errors import NotPositiveDefiniteError, PatternMismatchError, StructuralError

PIVOT_FLOOR = 1e-300


@dataclass
class SparseMatrix:
    """General CSC matrix (int64 indices, float64 data)."""

    n_rows: int
    n_cols: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_scipy(cls, m) -> "SparseMatrix":
        m = m.tocsc()
        m.sort_indices()
        return cls(
            m.shape[0],
            m.shape[1],
            m.indptr.astype(np.int64),
            m.indices.astype(np.int64),
            m.data.astype(np.float64),
        )

    def to_scipy(self):
        import scipy.sparse as sp

        return sp.csc_matrix(
            (self.data, self.indices, self.indptr), shape=(self.n_rows, self.n_cols)
        )

    def matvec(self, x):
        return self.to_scipy() @ x


class SparseSymMatrix:
    """Symmetric matrix stored as the lower triangle in CSC form."""

    __slots__ = ("n", "indptr", "indices", "data")

    def __init__(self, n, indptr, indices, data, check=True):
        self.n = int(n)
        self.indptr = np.ascontiguousarray(indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(indices, dtype=np.int64)
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if check:
            self._check_structure()

    def _check_structure(self):
        if self.indptr.shape != (self.n + 1,):
            raise StructuralError("indptr must have length n + 1")
        for j in range(self.n):
            lo, hi = self.indptr[j], self.indptr[j + 1]
            if hi <= lo or self.indices[lo] != j:
                raise StructuralError(f"missing diagonal entry in column {j}")
            col = self.indices[lo:hi]
            if (np.diff(col) <= 0).any():
                raise StructuralError(f"row indices in column {j} must be strictly increasing")
            if col[-1] >= self.n:
                raise StructuralError(f"row index out of range in column {j}")

    @property
    def nnz_lower(self) -> int:
        return int(self.indptr[-1])

    @property
    def nnz_full(self) -> int:
        return 2 * self.nnz_lower - self.n

    @classmethod
    def from_dense(cls, a) -> "SparseSymMatrix":
        a = np.asarray(a, dtype=np.float64)
        n = a.shape[0]
        rows, cols, vals = [], [], []
        for j in range(n):
            for i in range(j, n):
                v = a[i, j]
                if v != 0.0 or i == j:
                    rows.append(i)
                    cols.append(j)
                    vals.append(v)
        return cls.from_coo(n, rows, cols, vals)

    @classmethod
    def from_coo(cls, n, rows, cols, vals) -> "SparseSymMatrix":
        """Build from lower-triangle COO entries (duplicates not allowed)."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if (rows < cols).any():
            raise StructuralError("entries must lie in the lower triangle (row >= col)")
        order = np.lexsort((rows, cols))
        rows, cols, vals = rows[order], cols[order], vals[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, cols + 1, 1)
        np.cumsum(indptr, out=indptr)
        return cls(n, indptr, rows, vals)

    @classmethod
    def from_scipy_symmetric(cls, m) -> "SparseSymMatrix":
        import scipy.sparse as sp

        t = sp.tril(m, format="csc")
        t.sort_indices()
        return cls(m.shape[0], t.indptr, t.indices, t.data)

    def pattern_equal(self, other: "SparseSymMatrix") -> bool:
        return (
            self.n == other.n
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def to_scipy_full(self):
        """Expand to a full symmetric scipy CSC matrix (tests, matvec)."""
        import scipy.sparse as sp

        low = sp.csc_matrix((self.data, self.indices, self.indptr), shape=(self.n, self.n))
        diag = sp.diags(low.diagonal())
        return (low + low.T - diag).tocsc()

    def matvec(self, x):
        return self.to_scipy_full() @ x

    def write_pattern(self, path):
        """Dump the lower-triangle pattern as 'row col' lines (0-based)."""
        with open(path, "w") as fh:
            for j in range(self.n):
                for p in range(self.indptr[j], self.indptr[j + 1]):
                    fh.write(f"{self.indices[p]} {j}\n")


def amd_order(pattern: SparseSymMatrix) -> np.ndarray:
    """Approximate-minimum-degree permutation of the symmetric pattern.

    Returns perm with perm[k] = original index placed k-th. Deterministic
    for a given pattern.
    """
    from cvxopt import amd, spmatrix

    n = pattern.n
    rows = pattern.indices
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.indptr))
    off = rows != cols
    i = np.concatenate([rows, cols[off]])
    j = np.concatenate([cols, rows[off]])
    a = spmatrix(1.0, i.tolist(), j.tolist(), (n, n))
    p = amd.order(a)
    return np.fromiter(p, dtype=np.int64, count=n)


class SymbolicFactor:
    """Pattern-level analysis: permutation, elimination tree, factor sizes.

    Reusable across any SparseSymMatrix with the identical lower pattern.
    """

    __slots__ = (
        "n",
        "perm",
        "iperm",
        "parent",
        "Lnz",
        "Lp",
        "Up",
        "Ui",
        "upper_from_lower",
        "pattern_indptr",
        "pattern_indices",
    )

    @property
    def nnz_factor(self) -> int:
        """Strictly-below-diagonal nonzeros of L (the fill count)."""
        return int(self.Lp[-1])


def analyze(pattern: SparseSymMatrix, perm=None) -> SymbolicFactor:
    """Symbolic analysis of a symmetric lower-triangle pattern.

    perm overrides the fill-reducing ordering (mainly for tests); the
    default is AMD.
    """
    n = pattern.n
    if perm is None:
        perm = amd_order(pattern)
    else:
        perm = np.asarray(perm, dtype=np.int64)
        if sorted(perm.tolist()) != list(range(n)):
            raise ValueError("perm must be a permutation of 0..n-1")
    iperm = np.empty(n, dtype=np.int64)
    iperm[perm] = np.arange(n, dtype=np.int64)

    rows = pattern.indices
    cols = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.indptr))
    pi = iperm[rows]
    pj = iperm[cols]
    ur = np.minimum(pi, pj)
    uc = np.maximum(pi, pj)
    order = np.lexsort((ur, uc))
    Ui = ur[order]
    Up = np.zeros(n + 1, dtype=np.int64)
    np.add.at(Up, uc + 1, 1)
    np.cumsum(Up, out=Up)

    sym = SymbolicFactor()
    sym.n = n
    sym.perm = perm
    sym.iperm = iperm
    sym.Up = Up
    sym.Ui = Ui
    sym.upper_from_lower = order
    sym.parent, sym.Lnz, sym.Lp = _core.ldl_symbolic(n, Up, Ui)
    sym.pattern_indptr = pattern.indptr.copy()
    sym.pattern_indices = pattern.indices.copy()
    return sym


class NumericFactor:
    """LDL' factors tied to a SymbolicFactor."""

    __slots__ = ("sym", "Li", "Lx", "D")

    def __init__(self, sym, Li, Lx, D):
        self.sym = sym
        self.Li = Li
        self.Lx = Lx
        self.D = D

    def logdet(self) -> float:
        return float(np.sum(np.log(self.D)))

    def solve(self, rhs, batch=None) -> np.ndarray:
        """Solve A x = rhs; rhs may be a vector or a matrix of columns.

        batch bounds the number of right-hand sides processed per pass to
        cap workspace memory.
        """
        rhs = np.asarray(rhs, dtype=np.float64)
        one_d = rhs.ndim == 1
        if one_d:
            rhs = rhs[:, None]
        if rhs.shape[0] != self.sym.n:
            raise ValueError("rhs has wrong leading dimension")
        out = np.empty_like(rhs)
        step = rhs.shape[1] if batch is None else max(1, int(batch))
        for lo in range(0, rhs.shape[1], step):
            hi = min(lo + step, rhs.shape[1])
            work = np.ascontiguousarray(rhs[self.sym.perm, lo:hi])
            _core.ldl_solve(self.sym.n, self.sym.Lp, self.Li, self.Lx, self.D, work)
            out[self.sym.perm, lo:hi] = work
        return out[:, 0] if one_d else out


def factorize(sym: SymbolicFactor, matrix: SparseSymMatrix) -> NumericFactor:
    """Numeric LDL' of a matrix whose pattern matches the symbolic analysis."""
    if not (
        np.array_equal(sym.pattern_indptr, matrix.indptr)
        and np.array_equal(sym.pattern_indices, matrix.indices)
    ):
        raise PatternMismatchError(
            "matrix sparsity pattern differs from the analyzed pattern"
        )
    Ux = matrix.data[sym.upper_from_lower]
    try:
        Li, Lx, D = _core.ldl_numeric(
            sym.n, sym.Up, sym.Ui, Ux, sym.parent, sym.Lp, PIVOT_FLOOR
        )
    except _core.PivotError as e:
        raise NotPositiveDefiniteError(
            f"pivot {e.value!r} at column {sym.perm[e.index]} (permuted {e.index})",
            pivot_index=int(sym.perm[e.index]),
            pivot_value=e.value,
        ) from None
    return NumericFactor(sym, Li, Lx, D)


def solve(factor: NumericFactor, rhs, batch=None) -> np.ndarray:
    return factor.solve(rhs, batch=batch)


def logdet(factor: NumericFactor) -> float:
    return factor.logdet()
