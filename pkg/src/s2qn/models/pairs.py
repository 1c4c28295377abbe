"""Matrix-valued curvature pairs for the Kronecker-factored refinement."""
import numpy as np

from ..errors import EmptyCache
from ..linalg import mat

B1 = "B1"
B2 = "B2"


def batch_mean_by_location(cache, layer):
    """Average a layer's pre-activations and their gradients over the batch.

    Returns two ``(m_G, T)`` matrices: one column per spatial location.
    """
    if cache is None or cache.batch_size == 0 or layer >= len(cache.pre):
        raise EmptyCache(f"no cached pre-activations for layer {layer}")
    return cache.pre[layer].mean(axis=0), cache.dpre[layer].mean(axis=0)


def extract_kron_pairs(cache_prev, cache_next, mode, base, layer=0, u=None, v_hat=None):
    """Return ``(U, V)`` such that the layer refinement should satisfy ``Lam @ U = V``.

    ``base`` is the layer's :class:`~s2qn.linalg.KroneckerOperator`
    ``(A_hat, G_tilde)``.

    * ``B1``: ``u`` and ``v_hat`` are the layer slices of the parameter step
      and of the same-sample gradient difference. With ``U_hat = mat(u)``,
      the condition ``(A ⊗ (G + Lam)) u = v_hat`` reads
      ``Lam (U_hat A) = V_hat - G U_hat A``, so ``U = U_hat A``.
    * ``B2``: columns are per-location differences of batch-averaged
      pre-activations and of their gradients, ``V = dS_diff - G S_diff``.
    """
    A_hat, G_tilde = base.left, base.right
    m_A, m_G = A_hat.shape[0], G_tilde.shape[0]
    if mode == B1:
        if u is None or v_hat is None:
            raise EmptyCache("B1 pairs need the parameter step and gradient difference")
        U_hat = mat(u, m_G, m_A)
        V_hat = mat(v_hat, m_G, m_A)
        U = U_hat @ A_hat
        return U, V_hat - G_tilde @ U
    if mode == B2:
        s0, ds0 = batch_mean_by_location(cache_prev, layer)
        s1, ds1 = batch_mean_by_location(cache_next, layer)
        if not np.array_equal(cache_prev.indices, cache_next.indices):
            raise ValueError("B2 pairs need both caches on the same samples")
        U = s1 - s0
        return U, (ds1 - ds0) - G_tilde @ U
    raise ValueError(f"unknown pair mode {mode!r}")
