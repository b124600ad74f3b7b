"""Sparse LU factorization with symbolic reuse.

``P A Q = L U`` where Q is a fill-reducing column ordering chosen once and P
comes from threshold partial pivoting. A factorization can be refactored in
place for a matrix with the identical nonzero pattern, which keeps the
ordering, the pivot sequence and the L/U storage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .matrix import SparseMatrix, as_sparse
from .ordering import column_ordering

PIVOT_TOLERANCE = 1e-3


class SingularMatrixError(ArithmeticError):
    """No usable pivot was found in a column."""

    def __init__(self, column, message=None):
        self.column = int(column)
        super().__init__(message or f"matrix is singular at column {column}")


class PatternMismatchError(ValueError):
    pass


@dataclass
class FactorEvent:
    """One entry in a factorization's reuse log."""

    kind: str  # "factor" | "refactor" | "refactor_fallback"
    new_pattern_storage: int  # number of freshly allocated index arrays
    nnz_l: int
    nnz_u: int


@dataclass
class LuFactorization:
    shape: tuple[int, int]
    q: np.ndarray
    pinv: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray
    Up: np.ndarray
    Ui: np.ndarray
    Ux: np.ndarray
    pattern: SparseMatrix
    tol: float = PIVOT_TOLERANCE
    events: list = field(default_factory=list)

    @property
    def nnz_l(self) -> int:
        return int(self.Lp[-1])

    @property
    def nnz_u(self) -> int:
        return int(self.Up[-1])

    @property
    def symmetric_pivoting(self) -> bool:
        """True when every pivot was taken on the diagonal of A(q, q)."""
        n = self.shape[1]
        return self.shape[0] == n and bool(np.all(self.pinv[self.q] == np.arange(n)))

    def diagonal_u(self) -> np.ndarray:
        return self.Ux[self.Up[1:] - 1]

    def L(self):
        import scipy.sparse as sp
        n_rows, n_cols = self.shape
        return sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(n_rows, n_cols))

    def U(self):
        import scipy.sparse as sp
        n = self.shape[1]
        return sp.csc_matrix((self.Ux, self.Ui, self.Up), shape=(n, n))

    def solve(self, b) -> np.ndarray:
        return lu_solve(self, b)


def lu_factor(A, ordering: str = "mindegree", tol: float = PIVOT_TOLERANCE,
              q: np.ndarray | None = None) -> LuFactorization:
    """Factor a square (or tall) sparse matrix.

    Raises :class:`SingularMatrixError` with the offending column of A when
    elimination runs out of nonzero pivots.
    """
    A = as_sparse(A)
    if A.data.dtype.kind == "c":
        raise TypeError("complex matrices are not supported by the LU kernel")
    n_rows, n_cols = A.shape
    if n_rows < n_cols:
        raise ValueError("LU needs at least as many rows as columns")
    if q is None:
        q = column_ordering(A, ordering)
    q = np.ascontiguousarray(q, dtype=np.int64)
    status, Lp, Li, Lx, Up, Ui, Ux, pinv = _kernels.lu_numeric(
        n_rows, n_cols, A.indptr, A.indices, A.data.astype(np.float64), q, tol)
    if status >= 0:
        raise SingularMatrixError(q[status])
    fact = LuFactorization(A.shape, q, pinv, Lp, Li, Lx, Up, Ui, Ux,
                           SparseMatrix(A.shape, A.indptr.copy(), A.indices.copy(),
                                        np.zeros(A.nnz)), tol)
    fact.events.append(FactorEvent("factor", 1, fact.nnz_l, fact.nnz_u))
    return fact


def lu_refactor(fact: LuFactorization, A) -> FactorEvent:
    """Refactor in place for new values on the identical pattern.

    If a reused pivot turns out unusable, the handle is rebuilt with a fresh
    pivot search under the same column ordering (logged as a fallback).
    """
    A = as_sparse(A)
    if not A.same_pattern(fact.pattern):
        raise PatternMismatchError("nonzero pattern differs from the factored matrix")
    n_rows, n_cols = A.shape
    status = _kernels.lu_refactor(n_rows, n_cols, A.indptr, A.indices,
                                  A.data.astype(np.float64), fact.q, fact.pinv,
                                  fact.Lp, fact.Li, fact.Lx, fact.Up, fact.Ui, fact.Ux,
                                  fact.tol)
    if status < 0:
        event = FactorEvent("refactor", 0, fact.nnz_l, fact.nnz_u)
    else:
        fresh = lu_factor(A, q=fact.q, tol=fact.tol)
        for name in ("pinv", "Lp", "Li", "Lx", "Up", "Ui", "Ux"):
            setattr(fact, name, getattr(fresh, name))
        event = FactorEvent("refactor_fallback", 1, fact.nnz_l, fact.nnz_u)
    fact.events.append(event)
    return event


def lu_solve(fact: LuFactorization, b) -> np.ndarray:
    """Solve A x = b for square A; b may be a vector or a 2-D array."""
    n_rows, n_cols = fact.shape
    if n_rows != n_cols:
        raise ValueError("lu_solve needs a square factorization")
    b = np.asarray(b, dtype=np.float64)
    if b.ndim == 2:
        return np.column_stack([lu_solve(fact, b[:, j]) for j in range(b.shape[1])])
    y = np.empty(n_rows)
    y[fact.pinv] = b
    _kernels.lower_solve(fact.Lp, fact.Li, fact.Lx, y)
    _kernels.upper_solve(fact.Up, fact.Ui, fact.Ux, y)
    x = np.empty(n_cols)
    x[fact.q] = y
    return x


def lu_solve_transpose(fact: LuFactorization, b) -> np.ndarray:
    """Solve A^T x = b."""
    b = np.asarray(b, dtype=np.float64)
    y = b[fact.q].copy()
    _kernels.upper_transpose_solve(fact.Up, fact.Ui, fact.Ux, y)
    _kernels.lower_transpose_solve(fact.Lp, fact.Li, fact.Lx, y)
    return y[fact.pinv]
