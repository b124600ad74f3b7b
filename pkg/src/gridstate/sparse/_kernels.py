"""Compiled inner loops for the sparse factorizations.

All kernels operate on raw CSC arrays (int64 pointers/indices, float64
values) and never allocate per-entry Python objects.
"""

import numpy as np
from numba import njit

_CACHE = True


@njit(cache=_CACHE)
def _grow_int(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=_CACHE)
def _grow_float(a, need):
    if need <= a.shape[0]:
        return a
    b = np.empty(max(need, 2 * a.shape[0]), dtype=a.dtype)
    b[: a.shape[0]] = a
    return b


@njit(cache=_CACHE)
def _reach_dfs(j, Lp, Li, pinv, mark, stamp, stack, pstack, xi, top):
    head = 0
    stack[0] = j
    while head >= 0:
        j = stack[head]
        jnew = pinv[j]
        if mark[j] != stamp:
            mark[j] = stamp
            pstack[head] = 0 if jnew < 0 else Lp[jnew]
        done = True
        p2 = 0 if jnew < 0 else Lp[jnew + 1]
        for p in range(pstack[head], p2):
            i = Li[p]
            if mark[i] == stamp:
                continue
            pstack[head] = p
            head += 1
            stack[head] = i
            done = False
            break
        if done:
            head -= 1
            top -= 1
            xi[top] = j
    return top


@njit(cache=_CACHE)
def lu_numeric(n_rows, n_cols, Ap, Ai, Ax, q, tol):
    """Left-looking LU with threshold partial pivoting (Gilbert-Peierls).

    Returns (status, Lp, Li, Lx, Up, Ui, Ux, pinv). ``status`` is -1 on
    success, otherwise the (pivot-order) column that had no usable pivot.
    L row indices come back in pivot order; rows never chosen as a pivot
    (rectangular input) are numbered after the last column.
    """
    nnz_a = Ap[n_cols]
    cap_l = 4 * nnz_a + n_cols + 1
    cap_u = 4 * nnz_a + n_cols + 1
    Lp = np.zeros(n_cols + 1, np.int64)
    Up = np.zeros(n_cols + 1, np.int64)
    Li = np.empty(cap_l, np.int64)
    Lx = np.empty(cap_l, np.float64)
    Ui = np.empty(cap_u, np.int64)
    Ux = np.empty(cap_u, np.float64)
    pinv = -np.ones(n_rows, np.int64)
    x = np.zeros(n_rows, np.float64)
    xi = np.empty(n_rows, np.int64)
    stack = np.empty(n_rows, np.int64)
    pstack = np.empty(n_rows, np.int64)
    mark = np.zeros(n_rows, np.int64)
    lnz = 0
    unz = 0
    for k in range(n_cols):
        Lp[k] = lnz
        Up[k] = unz
        Li = _grow_int(Li, lnz + n_rows)
        Lx = _grow_float(Lx, lnz + n_rows)
        Ui = _grow_int(Ui, unz + n_rows)
        Ux = _grow_float(Ux, unz + n_rows)
        col = q[k]
        # x = L \ A(:, col) restricted to the reachable pattern
        stamp = k + 1
        top = n_rows
        for p in range(Ap[col], Ap[col + 1]):
            j = Ai[p]
            if mark[j] != stamp:
                top = _reach_dfs(j, Lp, Li, pinv, mark, stamp, stack, pstack, xi, top)
        for p in range(top, n_rows):
            x[xi[p]] = 0.0
        for p in range(Ap[col], Ap[col + 1]):
            x[Ai[p]] = Ax[p]
        for px in range(top, n_rows):
            j = xi[px]
            J = pinv[j]
            if J < 0:
                continue
            xj = x[j]
            for p in range(Lp[J] + 1, Lp[J + 1]):
                x[Li[p]] -= Lx[p] * xj
        ipiv = -1
        a = -1.0
        for px in range(top, n_rows):
            i = xi[px]
            if pinv[i] < 0:
                t = abs(x[i])
                if t > a:
                    a = t
                    ipiv = i
            else:
                Ui[unz] = pinv[i]
                Ux[unz] = x[i]
                unz += 1
        if ipiv == -1 or a <= 0.0 or not np.isfinite(a):
            return k, Lp, Li, Lx, Up, Ui, Ux, pinv
        if col < n_rows and pinv[col] < 0 and abs(x[col]) >= a * tol:
            ipiv = col
        pivot = x[ipiv]
        Ui[unz] = k
        Ux[unz] = pivot
        unz += 1
        pinv[ipiv] = k
        Li[lnz] = ipiv
        Lx[lnz] = 1.0
        lnz += 1
        for px in range(top, n_rows):
            i = xi[px]
            if pinv[i] < 0:
                Li[lnz] = i
                Lx[lnz] = x[i] / pivot
                lnz += 1
            x[i] = 0.0
    Lp[n_cols] = lnz
    Up[n_cols] = unz
    nxt = n_cols
    for i in range(n_rows):
        if pinv[i] < 0:
            pinv[i] = nxt
            nxt += 1
    for p in range(lnz):
        Li[p] = pinv[Li[p]]
    Li = Li[:lnz].copy()
    Lx = Lx[:lnz].copy()
    Ui = Ui[:unz].copy()
    Ux = Ux[:unz].copy()
    _sort_columns(Lp, Li, Lx)
    _sort_columns(Up, Ui, Ux)
    return -1, Lp, Li, Lx, Up, Ui, Ux, pinv


@njit(cache=_CACHE)
def _sort_columns(Ptr, Idx, Val):
    n = Ptr.shape[0] - 1
    for j in range(n):
        lo = Ptr[j]
        hi = Ptr[j + 1]
        if hi - lo > 1:
            order = np.argsort(Idx[lo:hi])
            Idx[lo:hi] = Idx[lo:hi][order]
            Val[lo:hi] = Val[lo:hi][order]


@njit(cache=_CACHE)
def lu_refactor(n_rows, n_cols, Ap, Ai, Ax, q, pinv, Lp, Li, Lx, Up, Ui, Ux, tol):
    """Numeric refactorization on a fixed pattern and pivot sequence.

    Overwrites Lx and Ux in place. Returns -1 on success or the column whose
    pivot became unusable (zero or below ``tol`` times the column maximum).
    """
    x = np.zeros(n_rows, np.float64)
    for k in range(n_cols):
        col = q[k]
        for p in range(Ap[col], Ap[col + 1]):
            x[pinv[Ai[p]]] = Ax[p]
        # U(:, k) rows are sorted, diagonal last
        for p in range(Up[k], Up[k + 1] - 1):
            J = Ui[p]
            xj = x[J]
            Ux[p] = xj
            for r in range(Lp[J] + 1, Lp[J + 1]):
                x[Li[r]] -= Lx[r] * xj
            x[J] = 0.0
        pivot = x[k]
        x[k] = 0.0
        a = abs(pivot)
        for r in range(Lp[k] + 1, Lp[k + 1]):
            t = abs(x[Li[r]])
            if t > a:
                a = t
        if pivot == 0.0 or not np.isfinite(pivot) or abs(pivot) < tol * a:
            return k
        Ux[Up[k + 1] - 1] = pivot
        Lx[Lp[k]] = 1.0
        for r in range(Lp[k] + 1, Lp[k + 1]):
            i = Li[r]
            Lx[r] = x[i] / pivot
            x[i] = 0.0
    return -1


@njit(cache=_CACHE)
def lower_solve(Lp, Li, Lx, x):
    """In-place unit lower-triangular solve (first ncols rows of L)."""
    n = Lp.shape[0] - 1
    for j in range(n):
        xj = x[j]
        if xj != 0.0:
            for p in range(Lp[j] + 1, Lp[j + 1]):
                x[Li[p]] -= Lx[p] * xj


@njit(cache=_CACHE)
def upper_solve(Up, Ui, Ux, x):
    """In-place upper-triangular solve; diagonal is last in each column."""
    n = Up.shape[0] - 1
    for j in range(n - 1, -1, -1):
        x[j] /= Ux[Up[j + 1] - 1]
        xj = x[j]
        if xj != 0.0:
            for p in range(Up[j], Up[j + 1] - 1):
                x[Ui[p]] -= Ux[p] * xj


@njit(cache=_CACHE)
def lower_transpose_solve(Lp, Li, Lx, x):
    """In-place solve with L^T for square unit lower L."""
    n = Lp.shape[0] - 1
    for j in range(n - 1, -1, -1):
        s = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            s -= Lx[p] * x[Li[p]]
        x[j] = s


@njit(cache=_CACHE)
def upper_transpose_solve(Up, Ui, Ux, x):
    n = Up.shape[0] - 1
    for j in range(n):
        s = x[j]
        for p in range(Up[j], Up[j + 1] - 1):
            s -= Ux[p] * x[Ui[p]]
        x[j] = s / Ux[Up[j + 1] - 1]


@njit(cache=_CACHE)
def qr_numeric(n_rows, n_cols, Ap, Ai, Ax, q, rowpos):
    """Left-looking Householder QR of A(:, q) with rows renumbered by rowpos.

    Returns (Vp, Vi, Vx, beta, Rp, Ri, Rx). Reflector j acts on rows >= j;
    column j of R has its diagonal last.
    """
    nnz_a = Ap[n_cols]
    Vp = np.zeros(n_cols + 1, np.int64)
    Rp = np.zeros(n_cols + 1, np.int64)
    Vi = np.empty(2 * nnz_a + n_cols + 1, np.int64)
    Vx = np.empty(2 * nnz_a + n_cols + 1, np.float64)
    Ri = np.empty(2 * nnz_a + n_cols + 1, np.int64)
    Rx = np.empty(2 * nnz_a + n_cols + 1, np.float64)
    beta = np.zeros(n_cols, np.float64)
    x = np.zeros(n_rows, np.float64)
    mark = -np.ones(n_rows, np.int64)
    pat = np.empty(n_rows, np.int64)
    vnz = 0
    rnz = 0
    for j in range(n_cols):
        col = q[j]
        Rp[j] = rnz
        Vp[j] = vnz
        npat = 0
        for p in range(Ap[col], Ap[col + 1]):
            r = rowpos[Ai[p]]
            x[r] = Ax[p]
            if mark[r] != j:
                mark[r] = j
                pat[npat] = r
                npat += 1
        for i in range(j):
            if beta[i] == 0.0:
                continue
            s = 0.0
            for p in range(Vp[i], Vp[i + 1]):
                s += Vx[p] * x[Vi[p]]
            if s != 0.0:
                s *= beta[i]
                for p in range(Vp[i], Vp[i + 1]):
                    r = Vi[p]
                    if mark[r] != j:
                        mark[r] = j
                        pat[npat] = r
                        npat += 1
                    x[r] -= s * Vx[p]
        Ri = _grow_int(Ri, rnz + npat + 1)
        Rx = _grow_float(Rx, rnz + npat + 1)
        Vi = _grow_int(Vi, vnz + npat + 1)
        Vx = _grow_float(Vx, vnz + npat + 1)
        sub = np.sort(pat[:npat])
        sigma = 0.0
        for t in range(npat):
            r = sub[t]
            if r < j:
                Ri[rnz] = r
                Rx[rnz] = x[r]
                rnz += 1
            elif r > j:
                sigma += x[r] * x[r]
        x0 = x[j]
        # H = I - beta v v^T maps x[j:] to |x[j:]| e_j
        if sigma == 0.0:
            s_norm = abs(x0)
            beta[j] = 2.0 if x0 < 0.0 else 0.0
            v0 = 1.0
        else:
            s_norm = np.sqrt(x0 * x0 + sigma)
            v0 = (x0 - s_norm) if x0 <= 0.0 else (-sigma / (x0 + s_norm))
            beta[j] = -1.0 / (s_norm * v0)
        diag = s_norm
        Vi[vnz] = j
        Vx[vnz] = v0
        vnz += 1
        for t in range(npat):
            r = sub[t]
            if r > j:
                Vi[vnz] = r
                Vx[vnz] = x[r]
                vnz += 1
        Ri[rnz] = j
        Rx[rnz] = diag
        rnz += 1
        for t in range(npat):
            x[sub[t]] = 0.0
    Vp[n_cols] = vnz
    Rp[n_cols] = rnz
    return Vp, Vi[:vnz].copy(), Vx[:vnz].copy(), beta, Rp, Ri[:rnz].copy(), Rx[:rnz].copy()


@njit(cache=_CACHE)
def apply_reflectors(Vp, Vi, Vx, beta, x, reverse):
    """Apply Q^T (reverse=False) or Q (reverse=True) to x in place."""
    m = Vp.shape[0] - 1
    for t in range(m):
        i = m - 1 - t if reverse else t
        if beta[i] == 0.0:
            continue
        s = 0.0
        for p in range(Vp[i], Vp[i + 1]):
            s += Vx[p] * x[Vi[p]]
        if s != 0.0:
            s *= beta[i]
            for p in range(Vp[i], Vp[i + 1]):
                x[Vi[p]] -= s * Vx[p]


@njit(cache=_CACHE)
def _lookup(Lp, Li, col, row):
    lo = Lp[col] + 1
    hi = Lp[col + 1]
    while lo < hi:
        mid = (lo + hi) // 2
        r = Li[mid]
        if r == row:
            return mid
        if r < row:
            lo = mid + 1
        else:
            hi = mid
    return -1


@njit(cache=_CACHE)
def selected_inverse(Lp, Li, Lx, d):
    """Entries of A^{-1} on the filled pattern of a symmetric A = L D L^T.

    Returns (zdiag, zoff, ok); ``zoff[p]`` pairs with L entry p (diagonal
    slots unused). ``ok`` is False if a needed entry is missing from the
    pattern, which cannot happen for a structurally exact elimination.
    """
    n = Lp.shape[0] - 1
    zdiag = np.zeros(n, np.float64)
    zoff = np.zeros(Li.shape[0], np.float64)
    for i in range(n - 1, -1, -1):
        p0 = Lp[i] + 1
        p1 = Lp[i + 1]
        for a in range(p0, p1):
            j = Li[a]
            s = 0.0
            for b in range(p0, p1):
                k = Li[b]
                if k == j:
                    zkj = zdiag[k]
                else:
                    c = k if k < j else j
                    r = j if k < j else k
                    pos = _lookup(Lp, Li, c, r)
                    if pos < 0:
                        return zdiag, zoff, False
                    zkj = zoff[pos]
                s += Lx[b] * zkj
            zoff[a] = -s
        s = 1.0 / d[i]
        for a in range(p0, p1):
            s -= Lx[a] * zoff[a]
        zdiag[i] = s
    return zdiag, zoff, True


@njit(cache=_CACHE)
def row_quadforms(Rp, Rc, Rv, perm, Lp, Li, zdiag, zoff, out, missing):
    """out[i] = J_i Z J_i^T for CSR rows of J, columns mapped through perm.

    Rows needing an entry outside the pattern get missing[i] = True.
    """
    n_rows = Rp.shape[0] - 1
    for i in range(n_rows):
        s = 0.0
        bad = False
        for a in range(Rp[i], Rp[i + 1]):
            ca = perm[Rc[a]]
            va = Rv[a]
            s += va * va * zdiag[ca]
            for b in range(a + 1, Rp[i + 1]):
                cb = perm[Rc[b]]
                c = ca if ca < cb else cb
                r = cb if ca < cb else ca
                pos = _lookup(Lp, Li, c, r)
                if pos < 0:
                    bad = True
                    break
                s += 2.0 * va * Rv[b] * zoff[pos]
            if bad:
                break
        out[i] = s
        missing[i] = bad
