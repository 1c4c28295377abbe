"""Hot inner loops, each with a numba-compiled and a pure-numpy version.

The numba versions are used when numba imports and ``S2QN_NUMBA`` is not
set to ``0``. Both paths are kept importable under explicit names so tests
and ``benchmarks/bench_kernels.py`` can compare them directly.
"""
import os

import numpy as np
import scipy.linalg

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("S2QN_NUMBA", "1") != "0"


# --------------------------------------------------------------------------
# symmetric-pivoted Cholesky:  M[piv][:, piv] = L L^T
# --------------------------------------------------------------------------

def _np_pivoted_cholesky(M, tol):
    A = np.array(M, dtype=np.float64, copy=True)
    n = A.shape[0]
    piv = np.arange(n)
    for k in range(n):
        j = k + int(np.argmax(np.diag(A)[k:]))
        if not A[j, j] > tol:
            return np.tril(A), piv, k
        if j != k:
            A[[k, j], :] = A[[j, k], :]
            A[:, [k, j]] = A[:, [j, k]]
            piv[[k, j]] = piv[[j, k]]
        A[k, k] = np.sqrt(A[k, k])
        A[k + 1:, k] /= A[k, k]
        col = A[k + 1:, k]
        A[k + 1:, k + 1:] -= np.outer(col, col)
    return np.tril(A), piv, -1


def _nb_pivoted_cholesky_impl(M, tol):
    n = M.shape[0]
    A = M.copy()
    piv = np.arange(n)
    for k in range(n):
        j = k
        best = A[k, k]
        for i in range(k + 1, n):
            if A[i, i] > best:
                best = A[i, i]
                j = i
        if not best > tol:
            for r in range(n):
                for c in range(r + 1, n):
                    A[r, c] = 0.0
            return A, piv, k
        if j != k:
            for c in range(n):
                tmp = A[k, c]
                A[k, c] = A[j, c]
                A[j, c] = tmp
            for r in range(n):
                tmp = A[r, k]
                A[r, k] = A[r, j]
                A[r, j] = tmp
            tp = piv[k]
            piv[k] = piv[j]
            piv[j] = tp
        d = np.sqrt(A[k, k])
        A[k, k] = d
        for i in range(k + 1, n):
            A[i, k] /= d
        for c in range(k + 1, n):
            lc = A[c, k]
            for r in range(c, n):
                A[r, c] -= A[r, k] * lc
            # keep the matrix symmetric so later row/column swaps stay valid
            for r in range(c + 1, n):
                A[c, r] = A[r, c]
    for r in range(n):
        for c in range(r + 1, n):
            A[r, c] = 0.0
    return A, piv, -1


def _np_tri_solve(L, B, lower):
    return scipy.linalg.solve_triangular(L, B, lower=lower, check_finite=False)


def _nb_forward_impl(L, B):
    n, m = B.shape
    X = B.copy()
    for c in range(m):
        for i in range(n):
            s = X[i, c]
            for k in range(i):
                s -= L[i, k] * X[k, c]
            X[i, c] = s / L[i, i]
    return X


def _nb_backward_lt_impl(L, B):
    # solves L^T X = B with L lower triangular
    n, m = B.shape
    X = B.copy()
    for c in range(m):
        for i in range(n - 1, -1, -1):
            s = X[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * X[k, c]
            X[i, c] = s / L[i, i]
    return X


# --------------------------------------------------------------------------
# im2col with padding K and stride 1
# rows: j * (2K+1)^2 + (dy+K)*(2K+1) + (dx+K); columns: y * W + x
# --------------------------------------------------------------------------

def _np_im2col(a, K):
    B, J, H, W = a.shape
    w = 2 * K + 1
    padded = np.pad(a, ((0, 0), (0, 0), (K, K), (K, K)))
    out = np.empty((B, J, w * w, H * W))
    for dy in range(w):
        for dx in range(w):
            out[:, :, dy * w + dx, :] = padded[:, :, dy:dy + H, dx:dx + W].reshape(B, J, H * W)
    return out.reshape(B, J * w * w, H * W)


def _nb_im2col_impl(a, K):
    B, J, H, W = a.shape
    w = 2 * K + 1
    D = w * w
    out = np.zeros((B, J * D, H * W))
    for b in range(B):
        for j in range(J):
            for dy in range(-K, K + 1):
                for dx in range(-K, K + 1):
                    row = j * D + (dy + K) * w + (dx + K)
                    for y in range(H):
                        yy = y + dy
                        if yy < 0 or yy >= H:
                            continue
                        for x in range(W):
                            xx = x + dx
                            if 0 <= xx < W:
                                out[b, row, y * W + x] = a[b, j, yy, xx]
    return out


if HAS_NUMBA:
    _nb_pivoted_cholesky = numba.njit(cache=True)(_nb_pivoted_cholesky_impl)
    _nb_forward = numba.njit(cache=True)(_nb_forward_impl)
    _nb_backward_lt = numba.njit(cache=True)(_nb_backward_lt_impl)
    _nb_im2col = numba.njit(cache=True)(_nb_im2col_impl)
else:  # pragma: no cover
    _nb_pivoted_cholesky = _nb_pivoted_cholesky_impl
    _nb_forward = _nb_forward_impl
    _nb_backward_lt = _nb_backward_lt_impl
    _nb_im2col = _nb_im2col_impl


def pivoted_cholesky(M, tol, use_numba=None):
    """Return ``(L, piv, fail)``; ``fail`` is -1 on success, else the failing step."""
    if use_numba is None:
        use_numba = USE_NUMBA
    M = np.ascontiguousarray(M, dtype=np.float64)
    if use_numba:
        return _nb_pivoted_cholesky(M, float(tol))
    return _np_pivoted_cholesky(M, tol)


def cholesky_solve(L, piv, B, use_numba=None):
    """Solve ``M X = B`` given the pivoted factor of ``M``."""
    if use_numba is None:
        use_numba = USE_NUMBA
    B = np.asarray(B, dtype=np.float64)
    vec = B.ndim == 1
    Bp = np.ascontiguousarray(B.reshape(B.shape[0], -1)[piv])
    if use_numba:
        Y = _nb_forward(L, Bp)
        Z = _nb_backward_lt(L, Y)
    else:
        Y = _np_tri_solve(L, Bp, lower=True)
        Z = _np_tri_solve(L.T, Y, lower=False)
    X = np.empty_like(Z)
    X[piv] = Z
    return X[:, 0] if vec else X


def im2col(a, K, use_numba=None):
    """Unroll a batch of ``(B, J, H, W)`` maps into ``(B, J*(2K+1)^2, H*W)`` patches."""
    if use_numba is None:
        use_numba = USE_NUMBA
    a = np.ascontiguousarray(a, dtype=np.float64)
    if use_numba:
        return _nb_im2col(a, int(K))
    return _np_im2col(a, int(K))
