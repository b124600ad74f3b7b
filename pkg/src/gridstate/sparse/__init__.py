"""Sparse matrices, LU/QR factorizations and selected inversion."""

from .lu import (
    FactorEvent,
    LuFactorization,
    PatternMismatchError,
    SingularMatrixError,
    lu_factor,
    lu_refactor,
    lu_solve,
    lu_solve_transpose,
)
from .matrix import SparseMatrix, as_sparse
from .ordering import column_ordering, minimum_degree
from .qr import QrFactorization, RankDeficientError, first_zero_pivot, qr_factor, qr_solve_ls
from .selinv import QuadformResult, selected_inverse, selected_inverse_diag_quadform

__all__ = [
    "FactorEvent",
    "LuFactorization",
    "PatternMismatchError",
    "QrFactorization",
    "QuadformResult",
    "RankDeficientError",
    "SingularMatrixError",
    "SparseMatrix",
    "as_sparse",
    "column_ordering",
    "first_zero_pivot",
    "lu_factor",
    "lu_refactor",
    "lu_solve",
    "lu_solve_transpose",
    "minimum_degree",
    "qr_factor",
    "qr_solve_ls",
    "selected_inverse",
    "selected_inverse_diag_quadform",
]
