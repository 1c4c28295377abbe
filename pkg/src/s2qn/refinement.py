"""Refinement matrices: curvature pairs, compact L-BFGS and (sketchy) block BFGS."""
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import RankDeficientU, SingularP, ZeroStep
from .linalg import symmetrize

EPS_B = 1e-8
POWELL = 0.2
ACCEPTED = "accepted"
REJECTED = "rejected"
DAMPED = "damped-accepted"


@dataclass
class CurvaturePair:
    u: np.ndarray
    v_hat: np.ndarray | None
    v: np.ndarray

    def refresh(self, base):
        """Recompute ``v = v_hat - H u`` against a new base matrix."""
        if self.v_hat is None:
            return self
        return CurvaturePair(self.u, self.v_hat, self.v_hat - base.apply(self.u))


def make_pair(theta_prev, theta_next, g_prev, g_next, base=None):
    """Structured secant pair: ``u`` the step, ``v_hat`` the same-sample
    gradient difference and ``v = v_hat - H u``.

    ``base`` may be ``None`` (treated as zero), a dense array, or anything
    with an ``apply`` method.
    """
    u = np.asarray(theta_next, dtype=np.float64) - theta_prev
    if not np.any(u):
        raise ZeroStep("parameter step is zero")
    v_hat = np.asarray(g_next, dtype=np.float64) - g_prev
    if base is None:
        Hu = 0.0
    elif isinstance(base, np.ndarray):
        Hu = base @ u
    else:
        Hu = base.apply(u)
    return CurvaturePair(u, v_hat, v_hat - Hu)


def make_structured_pair(problem, theta_prev, theta_next, S_H):
    """Pair whose ``v`` is ``mean_i (J_i(theta_next) - J_i(theta_prev)) grad_f l_i(theta_next)``
    over the Hessian sample set; ``v_hat`` is left unset."""
    u = np.asarray(theta_next, dtype=np.float64) - theta_prev
    if not np.any(u):
        raise ZeroStep("parameter step is zero")
    idx = S_H.indices if hasattr(S_H, "indices") else np.asarray(S_H)
    J1 = problem.output_jacobians(theta_next, idx)
    J0 = problem.output_jacobians(theta_prev, idx)
    r = problem.loss_output_grads(theta_next, idx)
    v = np.einsum("bnm,bm->n", J1 - J0, r) / len(idx)
    return CurvaturePair(u, None, v)


@dataclass
class PairBuffer:
    capacity: int = 5
    eps_b: float = EPS_B
    pairs: deque = field(default_factory=deque)

    def __len__(self):
        return len(self.pairs)

    def push(self, pair):
        if len(self.pairs) == self.capacity:
            self.pairs.popleft()
        self.pairs.append(pair)

    def drop_oldest(self):
        self.pairs.popleft()

    def clear(self):
        self.pairs.clear()

    def matrices(self):
        if not self.pairs:
            return None, None
        U = np.column_stack([p.u for p in self.pairs])
        V = np.column_stack([p.v for p in self.pairs])
        return U, V

    def refresh(self, base, newest_only=True):
        """Recompute stored residuals ``v`` against the current base matrix."""
        if not self.pairs:
            return
        if newest_only:
            self.pairs[-1] = self.pairs[-1].refresh(base)
        else:
            self.pairs = deque((p.refresh(base) for p in self.pairs))


def curvature_ok(u, v, eps_b=EPS_B):
    uv = float(u @ v)
    return uv > 0 and uv >= eps_b * np.linalg.norm(u) * np.linalg.norm(v)


def accept_pair(pair, buffer, apply_refinement=None, damping=True):
    """Test a pair against ``u^T v >= eps_B ||u|| ||v||`` and store it.

    When the test fails and ``damping`` is on, ``v`` is replaced by Powell's
    blend ``tau v + (1 - tau) Lam u`` with
    ``tau = 0.8 u^T Lam u / (u^T Lam u - u^T v)``, which gives
    ``u^T v' = 0.2 u^T Lam u``. ``apply_refinement`` applies the current
    ``Lam`` (identity when omitted). Returns ``(status, stored_pair)``.
    """
    u, v = pair.u, pair.v
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        return REJECTED, None
    if curvature_ok(u, v, buffer.eps_b):
        buffer.push(pair)
        return ACCEPTED, pair
    if not damping:
        return REJECTED, None
    Lu = apply_refinement(u) if apply_refinement is not None else u.copy()
    uLu = float(u @ Lu)
    uv = float(u @ v)
    if not uLu > 0 or uv >= POWELL * uLu:
        return REJECTED, None
    tau = (1.0 - POWELL) * uLu / (uLu - uv)
    damped = CurvaturePair(u, pair.v_hat, tau * v + (1.0 - tau) * Lu)
    if not curvature_ok(u, damped.v, buffer.eps_b):
        return REJECTED, None
    buffer.push(damped)
    return DAMPED, damped


GAMMA_RULES = ("vv/uv", "uv/uu")


def default_gamma(buffer, clip=(1e-4, 1e4), rule="vv/uv"):
    """Initial scale from the newest pair, clipped; 1 for an empty buffer.

    ``vv/uv`` (default) is ``v^T v / u^T v``; ``uv/uu`` is the smaller
    ``u^T v / u^T u``.
    """
    if not buffer.pairs:
        return 1.0
    p = buffer.pairs[-1]
    if rule == "vv/uv":
        gamma = (p.v @ p.v) / (p.u @ p.v)
    elif rule == "uv/uu":
        gamma = (p.u @ p.v) / (p.u @ p.u)
    else:
        raise ValueError(f"unknown gamma rule {rule!r}")
    return float(np.clip(gamma, *clip))


@dataclass
class CompactLBFGS:
    """``Lam = gamma I - C P^{-1} C^T`` with ``C = [gamma U, V]`` and
    ``P = [[gamma U^T U, L], [L^T, -D]]``."""

    gamma: float
    C: np.ndarray
    P: np.ndarray
    L: np.ndarray
    D: np.ndarray
    n: int

    @property
    def q(self):
        return self.L.shape[0]

    def _p_solve(self, R):
        return scipy.linalg.lu_solve(self._lu, R, check_finite=False)

    def __post_init__(self):
        self._lu = scipy.linalg.lu_factor(self.P, check_finite=False) if self.q else None

    def apply(self, x):
        x = np.asarray(x, dtype=np.float64)
        y = self.gamma * x
        if self.q:
            y = y - self.C @ self._p_solve(self.C.T @ x)
        return y

    def materialize(self):
        M = self.gamma * np.eye(self.n)
        if self.q:
            M -= self.C @ self._p_solve(self.C.T)
        return symmetrize(M)


def _assemble(U, V, gamma, n):
    q = U.shape[1]
    SY = U.T @ V
    L = np.tril(SY, -1)
    D = np.diag(np.diag(SY))
    P = np.block([[gamma * (U.T @ U), L], [L.T, -D]])
    C = np.hstack([gamma * U, V])
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularP(f"middle matrix condition {cond:.3e} with {q} pairs")
    return CompactLBFGS(gamma, C, P, L, D, n)


def build_compact(buffer, gamma, n=None, drop_on_singular=True):
    """Assemble the compact L-BFGS matrix from the buffered pairs.

    On :class:`SingularP` the oldest pair is dropped and assembly retried;
    with ``drop_on_singular=False`` the error propagates instead.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if n is None:
        if not buffer.pairs:
            raise ValueError("dimension needed for an empty buffer")
        n = buffer.pairs[0].u.shape[0]
    while buffer.pairs:
        U, V = buffer.matrices()
        try:
            return _assemble(U, V, gamma, n)
        except SingularP:
            if not drop_on_singular:
                raise
            buffer.drop_oldest()
    return CompactLBFGS(gamma, np.zeros((n, 0)), np.zeros((0, 0)), np.zeros((0, 0)), np.zeros((0, 0)), n)


def bfgs_update(B, u, v):
    """One dense BFGS update of a direct Hessian approximation."""
    Bu = B @ u
    return B - np.outer(Bu, Bu) / (u @ Bu) + np.outer(v, v) / (u @ v)


# --------------------------------------------------------------------------
# block BFGS on matrix pairs
# --------------------------------------------------------------------------

P_CHOICES = ("sym", "trace", "diag", "exact")


def _p_matrix(U, V, choice):
    VU = V.T @ U
    q = VU.shape[0]
    if choice == "sym":
        return symmetrize(VU)
    if choice == "trace":
        return np.trace(VU) * np.eye(q)
    if choice == "diag":
        return np.diag(np.diag(VU))
    if choice == "exact":
        return VU
    raise ValueError(f"unknown P choice {choice!r}")


def _min_rel_eig(Pv, Pl):
    """Smallest eigenvalue of ``sym(Pv)`` relative to the SPD ``Pl``."""
    return float(scipy.linalg.eigh(symmetrize(Pv), symmetrize(Pl), eigvals_only=True)[0])


@dataclass
class BlockRefinement:
    Lam: np.ndarray

    @classmethod
    def identity(cls, m, scale=1.0):
        return cls(scale * np.eye(m))

    def apply(self, X):
        return self.Lam @ X


def damp_block(Lam, U, V, choice="sym"):
    """Blend ``V <- tau V + (1 - tau) Lam U`` until ``P`` is SPD.

    ``P`` is linear in ``V``, so with ``mu`` the smallest eigenvalue of
    ``P(V)`` relative to ``P(Lam U)``, ``tau = 0.8 / (1 - mu)`` lifts that
    relative eigenvalue to exactly 0.2; this is Powell's rule on each
    generalized eigendirection. Returns ``(V', tau)``.
    """
    LU = Lam @ U
    Pl = _p_matrix(U, LU, choice)
    try:
        mu = _min_rel_eig(_p_matrix(U, V, choice), Pl)
    except np.linalg.LinAlgError as exc:
        raise RankDeficientU(str(exc)) from exc
    if mu >= POWELL:
        return V, 1.0
    tau = (1.0 - POWELL) / (1.0 - mu)
    return tau * V + (1.0 - tau) * LU, tau


def block_bfgs_update(Lam, U, V, choice="sym", damping=True):
    """``Lam + V P^{-1} V^T - Lam U (U^T Lam U)^{-1} U^T Lam``.

    Accepts a :class:`BlockRefinement` or a bare array and returns the same
    kind. With ``choice="exact"`` (``P = V^T U``) the result satisfies the
    multi-secant ``Lam' U = V``.
    """
    wrap = isinstance(Lam, BlockRefinement)
    M = Lam.Lam if wrap else np.asarray(Lam, dtype=np.float64)
    U = np.atleast_2d(np.asarray(U, dtype=np.float64).T).T
    V = np.atleast_2d(np.asarray(V, dtype=np.float64).T).T
    if U.shape != V.shape or U.shape[0] != M.shape[0]:
        raise ValueError(f"pair shapes {U.shape}, {V.shape} vs refinement {M.shape}")
    if damping:
        V, _ = damp_block(M, U, V, choice)
    LU = M @ U
    ULU = symmetrize(U.T @ LU)
    if np.linalg.cond(ULU) > 1e12:
        raise RankDeficientU("U^T Lam U is numerically singular")
    P = _p_matrix(U, V, choice)
    try:
        VPinv = np.linalg.solve(P.T, V.T).T
    except np.linalg.LinAlgError as exc:
        raise RankDeficientU(f"P is singular: {exc}") from exc
    new = M + VPinv @ V.T - LU @ np.linalg.solve(ULU, LU.T)
    if choice != "exact":
        new = symmetrize(new)
    return BlockRefinement(new) if wrap else new


def prune_columns(U, V, rtol=1e-8):
    """Keep a well-conditioned column subset of ``U`` (pivoted QR)."""
    _, R, perm = scipy.linalg.qr(U, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return U[:, :0], V[:, :0]
    keep = np.sort(perm[: int(np.sum(d > rtol * d[0]))])
    return U[:, keep], V[:, keep]


@dataclass(frozen=True)
class SketchConfig:
    dim: int
    distribution: str = "gaussian"
    seed: int = 0


def draw_sketch(n_cols, config, key=()):
    """Column sketch for a pair with ``n_cols`` columns.

    Returns an ``(n_cols, s)`` Gaussian matrix with ``N(0, 1/s)`` entries, or
    for ``row-subsample`` the sorted indices of ``s`` distinct columns.
    """
    s = int(config.dim)
    if not 1 <= s <= n_cols:
        raise ValueError(f"sketch dimension {s} outside [1, {n_cols}]")
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), *map(int, key)]))
    if config.distribution == "gaussian":
        return rng.standard_normal((n_cols, s)) / np.sqrt(s)
    if config.distribution == "row-subsample":
        if s == n_cols:
            return np.arange(n_cols)
        return np.sort(rng.choice(n_cols, size=s, replace=False))
    raise ValueError(f"unknown sketch distribution {config.distribution!r}")


def apply_sketch(X, sketch):
    if sketch.ndim == 1:
        return X[:, sketch]
    return X @ sketch


def sketchy_block_bfgs_update(Lam, U, V, sketch, choice="sym", damping=True, key=()):
    """Block BFGS on the sketched pair ``(U Xi, V Xi)``.

    ``sketch`` is a :class:`SketchConfig` (drawn here from ``key``) or an
    already-drawn sketch from :func:`draw_sketch`.
    """
    U = np.atleast_2d(np.asarray(U, dtype=np.float64).T).T
    V = np.atleast_2d(np.asarray(V, dtype=np.float64).T).T
    Xi = draw_sketch(U.shape[1], sketch, key) if isinstance(sketch, SketchConfig) else np.asarray(sketch)
    return block_bfgs_update(Lam, apply_sketch(U, Xi), apply_sketch(V, Xi), choice, damping)
