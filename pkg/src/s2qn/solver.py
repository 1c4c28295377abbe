"""Directions ``d = -(B + lam I)^{-1} g`` for each structural form of ``B``."""
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import _faults
from .curvature import BaseMatrix
from .errors import DimensionMismatch, NotPositiveDefinite, SolveFailed
from .linalg import CholeskyFactor, mat, symmetrize, vec
from .refinement import BlockRefinement

MAX_LAMBDA_RETRIES = 40


@dataclass
class RegularizedSystem:
    """``B + lam I`` with ``B = base + refinement``.

    ``refinement`` is ``None`` (no quasi-Newton part), a
    :class:`CompactLBFGS` or, for a ``kron`` base, a :class:`BlockRefinement`
    acting on the pre-activation factor.
    """

    base: BaseMatrix | None
    refinement: object = None
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")

    @property
    def dim(self):
        if self.base is not None:
            return self.base.dim
        return self.refinement.n

    def with_lam(self, lam):
        return RegularizedSystem(self.base, self.refinement, lam)

    def materialize(self):
        """Dense ``B + lam I``; for tests and oracles only."""
        n = self.dim
        M = self.lam * np.eye(n)
        if isinstance(self.refinement, BlockRefinement):
            K = self.base.payload
            M += np.kron(K.left, K.right + self.refinement.Lam) + self.base.shift * np.eye(n)
            return M
        if self.base is not None:
            M += self.base.materialize()
        if self.refinement is not None:
            M += self.refinement.materialize()
        return M


class _KronShiftedSolver:
    """Solves ``(A ⊗ G + c I) X = R`` through both factors' eigenbases."""

    def __init__(self, K, c):
        self.sA, self.EA = np.linalg.eigh(K.left)
        self.sG, self.EG = np.linalg.eigh(K.right)
        self.denom = np.outer(self.sG, self.sA) + c
        scale = max(np.max(np.abs(self.denom)), 1.0)
        if np.min(self.denom) <= 1e-13 * scale:
            raise NotPositiveDefinite(f"shifted Kronecker base has eigenvalue {np.min(self.denom):.3e}")
        self.mA, self.mG = len(self.sA), len(self.sG)

    def _one(self, r):
        X = mat(r, self.mG, self.mA)
        Y = self.EG.T @ X @ self.EA
        return vec(self.EG @ (Y / self.denom) @ self.EA.T)

    def solve(self, R):
        if R.ndim == 1:
            return self._one(R)
        return np.column_stack([self._one(R[:, j]) for j in range(R.shape[1])])


def _shifted_base_solver(base, c):
    if base is None:
        if not c > 0:
            raise NotPositiveDefinite(f"scalar shift {c:.3e} is not positive")
        return _ScalarSolver(c)
    c = c + base.shift
    if base.is_dense:
        return CholeskyFactor(base.payload + c * np.eye(base.dim))
    if base.kind == "kron":
        return _KronShiftedSolver(base.payload, c)
    raise ValueError(f"base kind {base.kind!r} has no direct shifted solver; use direction_lowrank")


class _ScalarSolver:
    def __init__(self, c):
        self.c = c

    def solve(self, R):
        return R / self.c


def _check_inertia(T, expected_neg, what):
    eig = np.linalg.eigvalsh(symmetrize(T))
    neg = int(np.sum(eig < 0))
    if neg != expected_neg or np.min(np.abs(eig)) == 0:
        raise NotPositiveDefinite(f"{what}: {neg} negative eigenvalues, expected {expected_neg}")


def _woodbury(solve, C, P, g):
    """``(Htil - C P^{-1} C^T)^{-1} g`` given a solver for the SPD ``Htil``.

    With ``Htil`` positive definite, ``Htil - C P^{-1} C^T`` is positive
    definite exactly when ``T = P - C^T Htil^{-1} C`` has as many negative
    eigenvalues as ``P`` (Haynsworth inertia additivity).
    """
    z = solve.solve(g)
    if C.shape[1] == 0:
        return z
    Y = solve.solve(C)
    T = P - C.T @ Y
    n_neg = int(np.sum(np.linalg.eigvalsh(symmetrize(P)) < 0))
    _check_inertia(T, n_neg, "Woodbury capacitance")
    lu = scipy.linalg.lu_factor(T, check_finite=False)
    return z + Y @ scipy.linalg.lu_solve(lu, C.T @ z, check_finite=False)


def _check_g(sys_dim, g):
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (sys_dim,):
        raise DimensionMismatch(f"gradient of shape {g.shape} for system of dim {sys_dim}")
    return g


def direction_smw(sys, g):
    """Direction for a dense (or Kronecker) base plus compact L-BFGS refinement.

    ``Htil = H + (gamma + lam) I`` is factored once, and
    ``(Htil - C P^{-1} C^T)^{-1} = Htil^{-1} + Htil^{-1} C T^{-1} C^T Htil^{-1}``
    with ``T = P - C^T Htil^{-1} C``. Raises :class:`NotPositiveDefinite` when
    ``Htil`` fails to factor or ``B + lam I`` is not positive definite
    (detected from the inertia of ``T``).
    """
    g = _check_g(sys.dim, g)
    ref = sys.refinement
    if isinstance(ref, BlockRefinement):
        raise ValueError("block refinements are solved by direction_kron")
    gamma = ref.gamma if ref is not None else 0.0
    solver = _shifted_base_solver(sys.base, gamma + sys.lam)
    if ref is None or ref.q == 0:
        d = -solver.solve(g)
    else:
        d = -_woodbury(solver, ref.C, ref.P, g)
    if _faults.active("smw"):
        d = d * (1.0 + 1e-3)
    return d


def direction_lowrank(sys, g):
    """Direction for a low-rank base ``Q Q^T`` plus compact L-BFGS refinement.

    Uses ``Ctil = [C, Q]``, ``Ptil = diag(P, -I)`` and the scalar
    ``Lamtil = gamma + lam (+ base shift)``, so the only solve is with the
    ``(2q + r)``-square ``That = Ptil - Ctil^T Ctil / Lamtil``.
    """
    g = _check_g(sys.dim, g)
    base, ref = sys.base, sys.refinement
    if base is None or base.kind != "efim-lowrank":
        raise ValueError("direction_lowrank needs a low-rank base")
    Q = base.payload.Q
    gamma = ref.gamma if ref is not None else 0.0
    c = gamma + sys.lam + base.shift
    if not c > 0:
        raise NotPositiveDefinite(f"diagonal part {c:.3e} is not positive")
    r = Q.shape[1]
    if ref is None or ref.q == 0:
        C_t, P_t = Q, -np.eye(r)
    else:
        C_t = np.hstack([ref.C, Q])
        P_t = scipy.linalg.block_diag(ref.P, -np.eye(r))
    d = -_woodbury(_ScalarSolver(c), C_t, P_t, g)
    if _faults.active("lowrank"):
        d = d * (1.0 + 1e-3)
    return d


def direction_kron(A_hat, G_tilde, Lam, lam, g, mode="exact"):
    """Solve ``(A ⊗ (G + Lam) + lam I) d = -g``.

    ``exact`` rotates into the eigenbasis of ``A = E diag(sigma) E^T`` and
    solves ``(sigma_j (G + Lam) + lam I) x_j = -r_j`` column by column.
    ``pi`` instead inverts ``(A + sqrt(lam) I) ⊗ (G + Lam + sqrt(lam) I)``,
    the cheaper factored damping.
    """
    A_hat = np.asarray(A_hat, dtype=np.float64)
    M = np.array(G_tilde, dtype=np.float64)
    if Lam is not None:
        M = M + (Lam.Lam if isinstance(Lam, BlockRefinement) else Lam)
    mA, mG = A_hat.shape[0], M.shape[0]
    g = _check_g(mA * mG, g)
    Gm = mat(g, mG, mA)
    if mode == "pi":
        r = np.sqrt(lam)
        X = CholeskyFactor(M + r * np.eye(mG)).solve(Gm)
        X = CholeskyFactor(A_hat + r * np.eye(mA)).solve(X.T).T
        return -vec(X)
    if mode != "exact":
        raise ValueError(f"unknown Kronecker damping mode {mode!r}")
    sigma, E = np.linalg.eigh(A_hat)
    R = Gm @ E
    X = np.empty_like(R)
    eye = np.eye(mG)
    for j in range(mA):
        X[:, j] = CholeskyFactor(sigma[j] * M + lam * eye).solve(R[:, j])
    d = -vec(X @ E.T)
    if _faults.active("kron"):
        d = d * (1.0 + 1e-3)
    return d


def direction(sys, g, kron_mode="exact"):
    """Dispatch on the structure of ``sys``."""
    if isinstance(sys.refinement, BlockRefinement) or (
            sys.base is not None and sys.base.kind == "kron" and sys.refinement is None and kron_mode == "pi"):
        K = sys.base.payload
        return direction_kron(K.left, K.right, sys.refinement, sys.lam + sys.base.shift, g, kron_mode)
    if sys.base is not None and sys.base.kind == "efim-lowrank":
        return direction_lowrank(sys, g)
    return direction_smw(sys, g)


def direction_block(blocks, g, kron_mode="exact"):
    """Concatenate per-block directions; ``blocks`` covers ``g`` in order."""
    g = np.asarray(g, dtype=np.float64)
    total = sum(b.dim for b in blocks)
    if total != g.shape[0]:
        raise DimensionMismatch(f"blocks cover {total} coordinates, gradient has {g.shape[0]}")
    out, off = [], 0
    for b in blocks:
        out.append(direction(b, g[off:off + b.dim], kron_mode))
        off += b.dim
    return np.concatenate(out) if out else np.zeros(0)


def solve_with_retry(solve, lam, max_retries=MAX_LAMBDA_RETRIES):
    """Call ``solve(lam)``, doubling ``lam`` after each :class:`NotPositiveDefinite`.

    Returns ``(d, lam_used, retries)``; raises :class:`SolveFailed` once the
    retry budget is spent.
    """
    last = None
    for attempt in range(max_retries + 1):
        try:
            return solve(lam), lam, attempt
        except NotPositiveDefinite as exc:
            last = exc
            lam *= 2.0
    raise SolveFailed(f"no positive definite system after {max_retries} doublings of lambda: {last}")
