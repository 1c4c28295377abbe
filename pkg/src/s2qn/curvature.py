"""Base-matrix builders: subsampled Hessian, GGN, empirical Fisher, KFAC factors."""
from dataclasses import dataclass

import numpy as np

from .errors import LayerUnsupported
from .linalg import KroneckerOperator, LowRankFactor, symmetrize

GRADIENT_SET = "g"
HESSIAN_SET = "H"
_KIND_STREAM = {GRADIENT_SET: 1, HESSIAN_SET: 2}


@dataclass(frozen=True)
class SampleSet:
    indices: np.ndarray
    kind: str = GRADIENT_SET
    seed: tuple = ()

    def __len__(self):
        return len(self.indices)

    @property
    def is_full(self):
        return bool(self.seed == ("full",))


def full_sample_set(N, kind=GRADIENT_SET):
    return SampleSet(np.arange(N), kind, ("full",))


def draw_sample_set(N, size, run_seed, k, kind=GRADIENT_SET):
    """Uniform draw without replacement, a pure function of ``(run_seed, k, kind)``.

    Sizes at or above ``N`` return the full index range.
    """
    size = int(size)
    if size < 1:
        raise ValueError("a sample set needs at least one index")
    if size >= N:
        return full_sample_set(N, kind)
    ss = np.random.SeedSequence([int(run_seed), int(k), _KIND_STREAM[kind]])
    idx = np.sort(np.random.default_rng(ss).choice(N, size=size, replace=False))
    return SampleSet(idx, kind, (int(run_seed), int(k)))


def _indices(S):
    return S.indices if isinstance(S, SampleSet) else np.asarray(S)


@dataclass(frozen=True)
class BaseMatrix:
    """Tagged base curvature ``H_k``; the represented matrix is ``payload + shift * I``.

    ``kind`` is one of ``hessian``, ``ggn``, ``efim`` (dense payload),
    ``efim-lowrank`` (:class:`LowRankFactor`) or ``kron``
    (:class:`KroneckerOperator`).
    """

    kind: str
    payload: object
    shift: float = 0.0
    samples: SampleSet = None

    @property
    def is_dense(self):
        return self.kind in ("hessian", "ggn", "efim")

    @property
    def dim(self):
        if self.is_dense:
            return self.payload.shape[0]
        return self.payload.dim

    def apply(self, x):
        y = self.payload @ x if self.is_dense else self.payload.apply(x)
        return y + self.shift * x if self.shift else y

    def materialize(self):
        M = np.array(self.payload, dtype=np.float64) if self.is_dense else self.payload.materialize()
        if self.shift:
            M = M + self.shift * np.eye(M.shape[0])
        return M

    def with_shift(self, shift):
        return BaseMatrix(self.kind, self.payload, float(shift), self.samples)


def subsampled_hessian(problem, theta, S):
    """``(1/|S|) sum_{i in S} hess psi_i(theta)``."""
    H = problem.hessian(theta, _indices(S))
    return BaseMatrix("hessian", symmetrize(H), 0.0, S if isinstance(S, SampleSet) else None)


def ggn_dense(problem, theta, idx):
    J = problem.output_jacobians(theta, idx)
    Hl = problem.loss_output_hessians(theta, idx)
    G = np.einsum("bim,bmk,bjk->ij", J, Hl, J, optimize=True) / J.shape[0]
    return symmetrize(G)


def ggn_matrix(problem, theta, S):
    """``(1/|S|) sum J_i hess_f(l_i) J_i^T``, without the explicit l2 term."""
    return BaseMatrix("ggn", ggn_dense(problem, theta, _indices(S)), 0.0,
                      S if isinstance(S, SampleSet) else None)


def efim(problem, theta, S, low_rank=False):
    """Empirical Fisher ``(1/|S|) sum grad psi_i grad psi_i^T``.

    With ``low_rank`` the factor ``Q`` has columns ``grad psi_i / sqrt(|S|)``.
    """
    G = problem.per_sample_grads(theta, _indices(S))
    samples = S if isinstance(S, SampleSet) else None
    if low_rank:
        return BaseMatrix("efim-lowrank", LowRankFactor(G.T / np.sqrt(G.shape[0])), 0.0, samples)
    return BaseMatrix("efim", symmetrize(G.T @ G) / G.shape[0], 0.0, samples)


def kfac_empirical_factors(problem, theta, S, layer, cache=None, spatial_average=True):
    """Empirical Kronecker factors ``(A_hat, G_tilde)`` for one layer.

    ``A_hat = mean_i A_i A_i^T`` over im2col-expanded activations (divided
    by the number of spatial locations when ``spatial_average``) and
    ``G_tilde = mean_i G_i G_i^T`` over per-sample pre-activation gradients
    computed with the true labels.
    """
    layers = problem.layers
    if not 0 <= layer < len(layers) or layers[layer].kind not in ("fc", "conv"):
        raise LayerUnsupported(f"layer {layer} is not a fully-connected or conv layer")
    if cache is None:
        _, _, cache = problem.forward_backward(theta, _indices(S))
    A = cache.acts[layer]
    G = cache.dpre[layer]
    B, _, T = A.shape
    A_hat = np.einsum("bct,bdt->cd", A, A) / B
    if spatial_average:
        A_hat /= T
    G_tilde = np.einsum("bit,bjt->ij", G, G) / B
    return BaseMatrix("kron", KroneckerOperator(symmetrize(A_hat), symmetrize(G_tilde)), 0.0,
                      S if isinstance(S, SampleSet) else None)


BASE_KINDS = ("hessian", "ggn", "efim", "efim-lowrank", "kfac")


def build_base(kind, problem, theta, S, cache=None, spatial_average=True):
    """Base matrix for the engine, with any explicit l2 curvature folded in.

    ``kfac`` returns a list with one ``kron`` base per layer.
    """
    reg = problem.reg_curvature
    if kind == "hessian":
        return subsampled_hessian(problem, theta, S)
    if kind == "ggn":
        return ggn_matrix(problem, theta, S).with_shift(reg)
    if kind == "efim":
        return efim(problem, theta, S).with_shift(reg)
    if kind == "efim-lowrank":
        return efim(problem, theta, S, low_rank=True).with_shift(reg)
    if kind == "kfac":
        if cache is None:
            _, _, cache = problem.forward_backward(theta, _indices(S))
        return [kfac_empirical_factors(problem, theta, S, l, cache, spatial_average).with_shift(reg)
                for l in range(len(problem.layers))]
    raise ValueError(f"unknown base kind {kind!r}")
