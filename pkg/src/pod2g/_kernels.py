"""Compiled inner loops over raw CSR arrays.

Everything here works on ``(indptr, indices, data)`` triples with sorted
column indices and mutates its output arguments in place.
"""

import numba as nb
import numpy as np


@nb.njit(cache=True)
def gs_forward(indptr, indices, data, diag, f, u, sweeps):
    n = u.shape[0]
    for _ in range(sweeps):
        for i in range(n):
            s = f[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * u[j]
            u[i] = s / diag[i]


@nb.njit(cache=True)
def gs_backward(indptr, indices, data, diag, f, u, sweeps):
    n = u.shape[0]
    for _ in range(sweeps):
        for i in range(n - 1, -1, -1):
            s = f[i]
            for k in range(indptr[i], indptr[i + 1]):
                j = indices[k]
                if j != i:
                    s -= data[k] * u[j]
            u[i] = s / diag[i]


@nb.njit(cache=True)
def diag_positions(indptr, indices):
    n = indptr.shape[0] - 1
    pos = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            if indices[k] == i:
                pos[i] = k
                break
    return pos


@nb.njit(cache=True)
def ilu0_factor(indptr, indices, data):
    """IKJ ILU(0). Returns (combined LU values, zero-pivot row or -1)."""
    n = indptr.shape[0] - 1
    lu = data.copy()
    dpos = diag_positions(indptr, indices)
    # column -> position lookup for the current row
    where = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        if dpos[i] < 0:
            return lu, i
        for k in range(indptr[i], indptr[i + 1]):
            where[indices[k]] = k
        for kk in range(indptr[i], indptr[i + 1]):
            k = indices[kk]
            if k >= i:
                break
            pivot = lu[dpos[k]]
            if pivot == 0.0:
                return lu, k
            lu[kk] /= pivot
            lik = lu[kk]
            for jj in range(dpos[k] + 1, indptr[k + 1]):
                w = where[indices[jj]]
                if w >= 0:
                    lu[w] -= lik * lu[jj]
        for k in range(indptr[i], indptr[i + 1]):
            where[indices[k]] = -1
        if lu[dpos[i]] == 0.0:
            return lu, i
    return lu, -1


@nb.njit(cache=True)
def ilu0_apply(indptr, indices, lu, dpos, r, out):
    n = r.shape[0]
    # unit lower solve
    for i in range(n):
        s = r[i]
        for k in range(indptr[i], dpos[i]):
            s -= lu[k] * out[indices[k]]
        out[i] = s
    # upper solve
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(dpos[i] + 1, indptr[i + 1]):
            s -= lu[k] * out[indices[k]]
        out[i] = s / lu[dpos[i]]


@nb.njit(cache=True)
def ichol0_factor(indptr, indices, data, shift):
    """Row-oriented IC(0) on the lower triangle (diagonal stored last in each row).

    ``indptr/indices/data`` describe the lower triangle including the diagonal.
    Returns (L values, failing row or -1).
    """
    n = indptr.shape[0] - 1
    lv = data.copy()
    for i in range(n):
        lv[indptr[i + 1] - 1] += shift[i]
    for i in range(n):
        start = indptr[i]
        end = indptr[i + 1]
        for kk in range(start, end - 1):
            k = indices[kk]
            # dot of row i and row k over columns < k
            s = lv[kk]
            a = start
            b = indptr[k]
            bend = indptr[k + 1] - 1
            while a < kk and b < bend:
                ca = indices[a]
                cb = indices[b]
                if ca == cb:
                    s -= lv[a] * lv[b]
                    a += 1
                    b += 1
                elif ca < cb:
                    a += 1
                else:
                    b += 1
            lv[kk] = s / lv[bend]
        s = lv[end - 1]
        for kk in range(start, end - 1):
            s -= lv[kk] * lv[kk]
        if s <= 0.0:
            return lv, i
        lv[end - 1] = np.sqrt(s)
    return lv, -1


@nb.njit(cache=True)
def ichol0_apply(indptr, indices, lv, r, out):
    n = r.shape[0]
    y = np.empty(n)
    for i in range(n):
        s = r[i]
        end = indptr[i + 1] - 1
        for k in range(indptr[i], end):
            s -= lv[k] * y[indices[k]]
        y[i] = s / lv[end]
    # L^T solve, column-oriented over rows of L
    for i in range(n):
        out[i] = y[i]
    for i in range(n - 1, -1, -1):
        end = indptr[i + 1] - 1
        out[i] /= lv[end]
        xi = out[i]
        for k in range(indptr[i], end):
            out[indices[k]] -= lv[k] * xi


@nb.njit(cache=True)
def jacobi_eigh(a, tol):
    """Cyclic Jacobi rotations on a symmetric matrix (copied).

    Stops when the off-diagonal Frobenius norm drops below ``tol``.
    Returns (eigenvalues, eigenvectors as columns, sweeps used).
    """
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    sweeps = 0
    for sweep in range(100):
        off = 0.0
        for p in range(n):
            for q in range(p + 1, n):
                off += a[p, q] * a[p, q]
        off = np.sqrt(2.0 * off)
        if off <= tol:
            break
        sweeps += 1
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                app = a[p, p]
                aqq = a[q, q]
                theta = (aqq - app) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + np.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    w = np.empty(n)
    for i in range(n):
        w[i] = a[i, i]
    return w, v, sweeps
