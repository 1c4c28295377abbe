"""Dense, low-rank, Kronecker and block-diagonal primitives.

Dense matrices are plain float64 ``numpy`` arrays. Vectorization is
column-major throughout, so ``kron(A, G) @ vec(X) == vec(G @ X @ A.T)``
for ``X`` of shape ``(m_G, m_A)``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, NotPositiveDefinite, Singular

PIVOT_RTOL = 1e-13


def vec(X):
    """Stack the columns of ``X`` into one vector."""
    return np.asarray(X).ravel(order="F")


def mat(x, rows, cols):
    """Inverse of :func:`vec`."""
    x = np.asarray(x)
    if x.size != rows * cols:
        raise DimensionMismatch(f"cannot reshape {x.size} entries into {rows}x{cols}")
    return x.reshape(rows, cols, order="F")


def is_symmetric(M, rtol=1e-12):
    M = np.asarray(M)
    scale = np.max(np.abs(M)) if M.size else 0.0
    return M.shape[0] == M.shape[1] and np.max(np.abs(M - M.T), initial=0.0) <= rtol * scale


def symmetrize(M):
    return 0.5 * (M + M.T)


class CholeskyFactor:
    """Symmetric-pivoted Cholesky factor of an SPD matrix, reusable across solves."""

    def __init__(self, M):
        M = np.asarray(M, dtype=np.float64)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
        n = M.shape[0]
        self.n = n
        if n == 0:
            self.L, self.piv = np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
            return
        if not np.all(np.isfinite(M)):
            raise NotPositiveDefinite("matrix has non-finite entries")
        trace = float(np.trace(M))
        if not trace > 0:
            raise NotPositiveDefinite(f"trace {trace:.3e} is not positive")
        tol = PIVOT_RTOL * trace / n
        L, piv, fail = _kernels.pivoted_cholesky(M, tol)
        if fail >= 0:
            raise NotPositiveDefinite(f"pivot {fail} of {n} fell below {tol:.3e}")
        self.L, self.piv = L, piv

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f"rhs has {b.shape[0]} rows, matrix has {self.n}")
        if self.n == 0:
            return b.copy()
        return _kernels.cholesky_solve(self.L, self.piv, b)


def sym_solve(M, b):
    """Solve ``M x = b`` for symmetric positive definite ``M``.

    Raises :class:`NotPositiveDefinite` when a pivot drops below
    ``1e-13 * trace(M) / n``; callers treat that as a request for more damping.
    """
    return CholeskyFactor(M).solve(b)


def dense_inverse_oracle(M):
    """Invert ``M`` by Gauss-Jordan elimination with full pivoting.

    Test oracle only: it shares no code with :func:`sym_solve`.
    """
    M = np.array(M, dtype=np.float64, copy=True)
    n = M.shape[0]
    if M.shape != (n, n):
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    if n > 256:
        raise DimensionMismatch("oracle is limited to dimension 256")
    aug = np.hstack([M, np.eye(n)])
    colperm = np.arange(n)
    scale = np.max(np.abs(M)) if n else 0.0
    for k in range(n):
        sub = np.abs(aug[k:, k:n])
        i, j = np.unravel_index(np.argmax(sub), sub.shape)
        i += k
        j += k
        if not sub.size or aug[i, j] == 0 or abs(aug[i, j]) <= 1e-15 * n * scale:
            raise Singular(f"pivot {k} vanished")
        aug[[k, i]] = aug[[i, k]]
        aug[:, [k, j]] = aug[:, [j, k]]
        colperm[[k, j]] = colperm[[j, k]]
        aug[k] /= aug[k, k]
        others = np.arange(n) != k
        aug[others] -= np.outer(aug[others, k], aug[k])
    inv = np.empty((n, n))
    # column swaps on M permute the rows of the inverse
    inv[colperm] = aug[:, n:]
    return inv


@dataclass(frozen=True)
class LowRankFactor:
    """Represents the PSD matrix ``Q @ Q.T``."""

    Q: np.ndarray

    @property
    def dim(self):
        return self.Q.shape[0]

    @property
    def rank(self):
        return self.Q.shape[1]

    def apply(self, x):
        return self.Q @ (self.Q.T @ x)

    def materialize(self):
        return self.Q @ self.Q.T


@dataclass(frozen=True)
class KroneckerOperator:
    """``left ⊗ right`` where ``left`` is the activation side (m_A) and
    ``right`` the pre-activation side (m_G)."""

    left: np.ndarray
    right: np.ndarray

    @property
    def dim(self):
        return self.left.shape[0] * self.right.shape[0]

    def apply(self, x):
        return kron_apply(self, x)

    def materialize(self):
        return np.kron(self.left, self.right)


def kron_apply(K, x):
    """Return ``(K.left ⊗ K.right) x`` as ``vec(right @ X @ left.T)``."""
    x = np.asarray(x, dtype=np.float64)
    mA, mG = K.left.shape[0], K.right.shape[0]
    if x.shape[0] != mA * mG:
        raise DimensionMismatch(f"vector of length {x.shape[0]} vs operator dim {mA * mG}")
    X = mat(x, mG, mA)
    return vec(K.right @ X @ K.left.T)


@dataclass
class BlockDiagonal:
    blocks: list
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        sizes = [np.asarray(b).shape[0] for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)

    @property
    def dim(self):
        return int(self.offsets[-1])

    def block_slice(self, j):
        return slice(self.offsets[j], self.offsets[j + 1])

    def _check(self, x):
        if x.shape[0] != self.dim:
            raise DimensionMismatch(f"vector of length {x.shape[0]} vs dim {self.dim}")

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        return np.concatenate([b @ x[self.block_slice(j)] for j, b in enumerate(self.blocks)])

    def solve(self, b):
        b = np.asarray(b, dtype=np.float64)
        self._check(b)
        return np.concatenate([sym_solve(B, b[self.block_slice(j)]) for j, B in enumerate(self.blocks)])

    def materialize(self):
        M = np.zeros((self.dim, self.dim))
        for j, b in enumerate(self.blocks):
            s = self.block_slice(j)
            M[s, s] = b
        return M
