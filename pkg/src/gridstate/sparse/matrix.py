"""Compressed sparse column storage used by the factorization kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


@dataclass
class SparseMatrix:
    """CSC matrix with sorted, duplicate-free row indices per column.

    Arithmetic is delegated to scipy.sparse (see :meth:`to_scipy`); this class
    only guarantees the layout invariants the factorization kernels rely on.
    """

    shape: tuple[int, int]
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        self.indptr = np.ascontiguousarray(self.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(self.data)
        self.validate()

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def validate(self):
        n_rows, n_cols = self.shape
        p = self.indptr
        if p.shape != (n_cols + 1,) or p[0] != 0:
            raise ValueError("column pointer array has the wrong shape or start")
        if np.any(np.diff(p) < 0):
            raise ValueError("column pointers must be nondecreasing")
        if len(self.indices) != p[-1] or len(self.data) != p[-1]:
            raise ValueError("index/value arrays do not match the pointer array")
        if p[-1]:
            if self.indices.min() < 0 or self.indices.max() >= n_rows:
                raise ValueError("row index out of range")
            col_of = np.repeat(np.arange(n_cols), np.diff(p))
            same_col = col_of[1:] == col_of[:-1]
            if np.any(np.diff(self.indices)[same_col] <= 0):
                raise ValueError("row indices must be strictly increasing per column")

    @classmethod
    def from_scipy(cls, A) -> "SparseMatrix":
        A = sp.csc_matrix(A, copy=True)
        A.sum_duplicates()
        A.sort_indices()
        return cls(A.shape, A.indptr, A.indices, A.data)

    @classmethod
    def from_dense(cls, A) -> "SparseMatrix":
        return cls.from_scipy(sp.csc_matrix(np.asarray(A)))

    @classmethod
    def from_triplets(cls, rows, cols, vals, shape, keep_zeros=True) -> "SparseMatrix":
        """Assemble from COO triplets, summing duplicates.

        Explicit zeros are kept by default so that a structural slot survives
        when its numeric value happens to vanish.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals)
        n_rows, n_cols = shape
        key = cols * n_rows + rows
        order = np.argsort(key, kind="stable")
        key = key[order]
        uniq, start = np.unique(key, return_index=True)
        data = np.add.reduceat(vals[order], start) if len(vals) else vals[:0]
        r = uniq % n_rows
        c = uniq // n_rows
        if not keep_zeros:
            nz = data != 0
            r, c, data = r[nz], c[nz], data[nz]
        indptr = np.zeros(n_cols + 1, dtype=np.int64)
        np.add.at(indptr, c + 1, 1)
        return cls(shape, np.cumsum(indptr), r, data)

    def to_scipy(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.data, self.indices, self.indptr), shape=self.shape)

    def todense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def copy(self) -> "SparseMatrix":
        return SparseMatrix(self.shape, self.indptr.copy(), self.indices.copy(), self.data.copy())

    def same_pattern(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def position(self, row: int, col: int) -> int:
        """Index into ``data`` of entry (row, col), or -1 if not stored."""
        lo, hi = self.indptr[col], self.indptr[col + 1]
        k = lo + np.searchsorted(self.indices[lo:hi], row)
        if k < hi and self.indices[k] == row:
            return int(k)
        return -1

    def positions(self, rows, cols) -> np.ndarray:
        """Vectorized :meth:`position`; returns -1 for missing entries."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        n_rows = self.shape[0]
        col_of = np.repeat(np.arange(self.shape[1], dtype=np.int64), np.diff(self.indptr))
        keys = col_of * n_rows + self.indices
        want = cols * n_rows + rows
        if len(keys) == 0:
            return np.full(len(want), -1, dtype=np.int64)
        k = np.minimum(np.searchsorted(keys, want), len(keys) - 1)
        return np.where(keys[k] == want, k, -1)

    def scatter_from(self, A) -> np.ndarray:
        """Values of scipy matrix ``A`` laid out on this pattern.

        Raises if ``A`` has a nonzero outside the pattern.
        """
        A = sp.coo_matrix(A)
        pos = self.positions(A.row, A.col)
        if np.any((pos < 0) & (A.data != 0)):
            raise ValueError("matrix has entries outside the fixed pattern")
        out = np.zeros(self.nnz, dtype=np.result_type(self.data.dtype, A.data.dtype))
        keep = pos >= 0
        np.add.at(out, pos[keep], A.data[keep])
        return out

    def submatrix_map(self, rows, cols) -> tuple["SparseMatrix", np.ndarray]:
        """Pattern of ``A[rows][:, cols]`` and, per stored entry, its source position.

        Explicit zeros are kept, so values can be refreshed with
        ``sub.data = values[src]`` without changing the pattern.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        rmap = np.full(self.shape[0], -1, dtype=np.int64)
        rmap[rows] = np.arange(len(rows))
        indptr = [0]
        indices, src = [], []
        for c in cols:
            lo, hi = self.indptr[c], self.indptr[c + 1]
            r = rmap[self.indices[lo:hi]]
            keep = r >= 0
            order = np.argsort(r[keep], kind="stable")
            indices.append(r[keep][order])
            src.append(np.arange(lo, hi, dtype=np.int64)[keep][order])
            indptr.append(indptr[-1] + int(keep.sum()))
        indices = np.concatenate(indices) if indices else np.zeros(0, dtype=np.int64)
        src = np.concatenate(src) if src else np.zeros(0, dtype=np.int64)
        sub = SparseMatrix((len(rows), len(cols)), np.array(indptr, dtype=np.int64),
                           indices, self.data[src].copy())
        return sub, src

    def transpose_map(self) -> np.ndarray:
        """For a structurally symmetric pattern, index of the mirrored entry."""
        col_of = np.repeat(np.arange(self.shape[1], dtype=np.int64), np.diff(self.indptr))
        m = self.positions(col_of, self.indices)
        if np.any(m < 0):
            raise ValueError("pattern is not structurally symmetric")
        return m


def as_sparse(A) -> SparseMatrix:
    if isinstance(A, SparseMatrix):
        return A
    if sp.issparse(A):
        return SparseMatrix.from_scipy(A)
    return SparseMatrix.from_dense(A)
