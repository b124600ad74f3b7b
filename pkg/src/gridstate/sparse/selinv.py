"""Selected inverse of a factored symmetric matrix.

Only the entries of G^{-1} on the filled pattern of L are computed
(Takahashi recurrences). That is enough for diag(J G^{-1} J^T) whenever the
pattern of G contains the outer product pattern of every row of J, which is
always the case when G = J^T W J.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .lu import LuFactorization, lu_solve


@dataclass
class SelectedInverse:
    zdiag: np.ndarray  # diagonal of G^{-1} in pivot order
    zoff: np.ndarray  # aligned with the L factor entries
    qinv: np.ndarray  # original index -> pivot position


@dataclass
class QuadformResult:
    values: np.ndarray
    fallback_rows: np.ndarray  # rows evaluated by a sparse solve instead


def selected_inverse(fact: LuFactorization) -> SelectedInverse | None:
    """Takahashi recurrences on the LU factors; None if pivoting broke symmetry."""
    if not fact.symmetric_pivoting:
        return None
    zdiag, zoff, ok = _kernels.selected_inverse(fact.Lp, fact.Li, fact.Lx, fact.diagonal_u())
    if not ok:
        return None
    qinv = np.empty_like(fact.q)
    qinv[fact.q] = np.arange(len(fact.q))
    return SelectedInverse(zdiag, zoff, qinv)


def selected_inverse_diag_quadform(fact: LuFactorization, J, sigma_diag=None,
                                   selinv: SelectedInverse | None = None) -> QuadformResult:
    """Diagonal of J G^{-1} J^T without forming G^{-1}.

    If ``sigma_diag`` is given, the residual covariance diagonal
    ``sigma_diag - diag(J G^{-1} J^T)`` is returned instead.
    """
    J = sp.csr_matrix(J)
    J.sort_indices()
    k = J.shape[0]
    values = np.zeros(k)
    missing = np.ones(k, dtype=bool)
    if selinv is None:
        selinv = selected_inverse(fact)
    if selinv is not None:
        _kernels.row_quadforms(J.indptr.astype(np.int64), J.indices.astype(np.int64),
                               J.data.astype(np.float64), selinv.qinv, fact.Lp, fact.Li,
                               selinv.zdiag, selinv.zoff, values, missing)
    fallback = np.flatnonzero(missing)
    for i in fallback:
        row = J.getrow(i).toarray().ravel()
        values[i] = row @ lu_solve(fact, row)
    if sigma_diag is not None:
        values = np.asarray(sigma_diag, dtype=float) - values
    return QuadformResult(values, fallback)
