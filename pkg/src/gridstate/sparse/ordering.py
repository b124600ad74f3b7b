"""Fill-reducing column orderings."""

from __future__ import annotations

import heapq

import numpy as np
import scipy.sparse as sp

from .matrix import SparseMatrix, as_sparse


def _adjacency(S: sp.csc_matrix) -> list[set]:
    S = sp.csc_matrix(S)
    n = S.shape[0]
    adj = []
    for j in range(n):
        nbrs = set(S.indices[S.indptr[j]:S.indptr[j + 1]].tolist())
        nbrs.discard(j)
        adj.append(nbrs)
    return adj


def minimum_degree(pattern) -> np.ndarray:
    """Basic minimum-degree ordering of a structurally symmetric pattern.

    Works on the explicit elimination graph; ties go to the lowest index so
    the result is deterministic.
    """
    adj = _adjacency(pattern)
    n = len(adj)
    heap = [(len(a), i) for i, a in enumerate(adj)]
    heapq.heapify(heap)
    done = bytearray(n)
    order = []
    while heap:
        d, v = heapq.heappop(heap)
        if done[v] or d != len(adj[v]):
            continue
        done[v] = 1
        order.append(v)
        nbrs = adj[v]
        for u in nbrs:
            au = adj[u]
            au.discard(v)
            au |= nbrs
            au.discard(u)
            heapq.heappush(heap, (len(au), u))
        adj[v] = set()
    return np.asarray(order, dtype=np.int64)


def symmetric_pattern(A) -> sp.csc_matrix:
    """Pattern of A + A^T (square A)."""
    A = as_sparse(A).to_scipy()
    P = sp.csc_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)
    return (P + P.T).tocsc()


def gram_pattern(A) -> sp.csc_matrix:
    """Pattern of A^T A (column intersection graph)."""
    A = as_sparse(A).to_scipy()
    P = sp.csc_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)
    return (P.T @ P).tocsc()


def column_ordering(A: SparseMatrix, method: str = "mindegree") -> np.ndarray:
    n_rows, n_cols = A.shape
    if method == "natural":
        return np.arange(n_cols, dtype=np.int64)
    if method != "mindegree":
        raise ValueError(f"unknown ordering {method!r}")
    if n_rows == n_cols:
        return minimum_degree(symmetric_pattern(A))
    return minimum_degree(gram_pattern(A))
