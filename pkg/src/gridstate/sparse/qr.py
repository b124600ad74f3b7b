"""Householder QR for sparse least-squares problems.

Reflectors are kept as a sparse sequence and applied on demand; Q is never
formed. The active column is held in a dense work vector while reflectors
are applied, so fill in V follows the row ordering (rows sorted by their
leftmost nonzero column).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .matrix import as_sparse
from .ordering import column_ordering


class RankDeficientError(ArithmeticError):
    def __init__(self, column, r_value):
        self.column = int(column)
        self.r_value = float(r_value)
        super().__init__(f"rank deficient: |R_ii| = {r_value:.3e} at column {column}")


@dataclass
class QrFactorization:
    shape: tuple[int, int]
    q: np.ndarray  # column ordering
    rowpos: np.ndarray  # original row -> position in the reflector frame
    Vp: np.ndarray
    Vi: np.ndarray
    Vx: np.ndarray
    beta: np.ndarray
    Rp: np.ndarray
    Ri: np.ndarray
    Rx: np.ndarray

    @property
    def r_diagonal(self) -> np.ndarray:
        return self.Rx[self.Rp[1:] - 1]

    def R(self) -> sp.csc_matrix:
        n = self.shape[1]
        return sp.csc_matrix((self.Rx, self.Ri, self.Rp), shape=(n, n))

    def rank_tolerance(self) -> float:
        d = np.abs(self.r_diagonal)
        return max(self.shape) * np.finfo(float).eps * (d.max() if d.size else 0.0)

    def apply_qt(self, b) -> np.ndarray:
        """Q^T b in the reflector frame (row order given by ``rowpos``)."""
        x = np.zeros(self.shape[0])
        x[self.rowpos] = np.asarray(b, dtype=np.float64)
        _kernels.apply_reflectors(self.Vp, self.Vi, self.Vx, self.beta, x, False)
        return x

    def apply_q(self, y) -> np.ndarray:
        """Q y mapped back to the original row order."""
        x = np.asarray(y, dtype=np.float64).copy()
        _kernels.apply_reflectors(self.Vp, self.Vi, self.Vx, self.beta, x, True)
        return x[self.rowpos]


def _leftmost_row_order(A, q) -> np.ndarray:
    n_rows, n_cols = A.shape
    qinv = np.empty(n_cols, dtype=np.int64)
    qinv[q] = np.arange(n_cols)
    col_of = np.repeat(np.arange(n_cols), np.diff(A.indptr))
    leftmost = np.full(n_rows, n_cols, dtype=np.int64)
    np.minimum.at(leftmost, A.indices, qinv[col_of])
    order = np.argsort(leftmost, kind="stable")
    rowpos = np.empty(n_rows, dtype=np.int64)
    rowpos[order] = np.arange(n_rows)
    return rowpos


def qr_factor(A, ordering: str = "mindegree") -> QrFactorization:
    """Factor a tall matrix; rank deficiency is reported at solve time."""
    A = as_sparse(A)
    n_rows, n_cols = A.shape
    if n_rows < n_cols:
        raise ValueError("QR needs at least as many rows as columns")
    q = column_ordering(A, ordering)
    rowpos = _leftmost_row_order(A, q)
    Vp, Vi, Vx, beta, Rp, Ri, Rx = _kernels.qr_numeric(
        n_rows, n_cols, A.indptr, A.indices, A.data.astype(np.float64), q, rowpos)
    return QrFactorization(A.shape, q, rowpos, Vp, Vi, Vx, beta, Rp, Ri, Rx)


def first_zero_pivot(fact: QrFactorization, tol: float | None = None):
    tol = fact.rank_tolerance() if tol is None else tol
    d = np.abs(fact.r_diagonal)
    bad = np.flatnonzero(d <= tol)
    if bad.size:
        return int(fact.q[bad[0]]), float(d[bad[0]])
    return None


def qr_solve_ls(fact: QrFactorization, b, tol: float | None = None) -> np.ndarray:
    """Least-squares minimizer of ||A x - b||_2 for full column rank A."""
    zero = first_zero_pivot(fact, tol)
    if zero is not None:
        raise RankDeficientError(*zero)
    n = fact.shape[1]
    c = fact.apply_qt(b)[:n]
    _kernels.upper_solve(fact.Rp, fact.Ri, fact.Rx, c)
    x = np.empty(n)
    x[fact.q] = c
    return x
