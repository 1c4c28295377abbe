"""A single bias-free convolutional layer (padding K, stride 1)."""
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..errors import ShapeMismatch
from .base import LOSSES, ForwardCache, LayerInfo, Problem


@dataclass(frozen=True)
class ConvLayerSpec:
    in_channels: int
    out_channels: int
    K: int
    height: int
    width: int

    @property
    def window(self):
        return (2 * self.K + 1) ** 2

    @property
    def m_A(self):
        return self.in_channels * self.window

    @property
    def m_G(self):
        return self.out_channels

    @property
    def n_locations(self):
        return self.height * self.width

    @property
    def n_params(self):
        return self.m_A * self.m_G


def kernel_to_matrix(spec, Theta):
    """``(I, J, 2K+1, 2K+1)`` kernel to its ``(I, J*(2K+1)^2)`` matrix form."""
    Theta = np.asarray(Theta, dtype=np.float64)
    expect = (spec.out_channels, spec.in_channels, 2 * spec.K + 1, 2 * spec.K + 1)
    if Theta.shape != expect:
        raise ShapeMismatch(f"kernel shape {Theta.shape}, expected {expect}")
    return Theta.reshape(spec.out_channels, spec.m_A)


def matrix_to_kernel(spec, Theta_mat):
    w = 2 * spec.K + 1
    return np.asarray(Theta_mat).reshape(spec.out_channels, spec.in_channels, w, w)


def _as_matrix(spec, Theta):
    Theta = np.asarray(Theta, dtype=np.float64)
    if Theta.ndim == 1:
        if Theta.size != spec.n_params:
            raise ShapeMismatch(f"{Theta.size} parameters, expected {spec.n_params}")
        return Theta.reshape(spec.m_G, spec.m_A, order="F")
    if Theta.ndim == 2:
        if Theta.shape != (spec.m_G, spec.m_A):
            raise ShapeMismatch(f"matrix shape {Theta.shape}, expected {(spec.m_G, spec.m_A)}")
        return Theta
    return kernel_to_matrix(spec, Theta)


def conv_forward_backward(spec, Theta, batch, loss="square"):
    """Forward and backward pass of one conv layer on ``batch = (inputs, targets)``.

    ``Theta`` may be the 4-d kernel, its matrix form, or the flat
    column-major parameter vector. Returns ``(outputs, dTheta, cache)`` where
    ``outputs`` is ``(B, I, H, W)`` and ``dTheta`` the per-sample gradients
    ``G_i A_i^T`` of shape ``(B, I, J*(2K+1)^2)``.
    """
    a, y = batch
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    B = a.shape[0]
    if a.shape[1:] != (spec.in_channels, spec.height, spec.width):
        raise ShapeMismatch(f"input shape {a.shape[1:]} does not match {spec}")
    if y.shape != (B, spec.out_channels, spec.height, spec.width):
        raise ShapeMismatch(f"target shape {y.shape} does not match outputs")
    Tm = _as_matrix(spec, Theta)
    A = _kernels.im2col(a, spec.K)
    s = np.einsum("ic,bct->bit", Tm, A)
    loss_fn = LOSSES[loss][0]
    losses, ds = loss_fn(s.reshape(B, -1), y.reshape(B, -1))
    ds = ds.reshape(s.shape)
    dTheta = np.einsum("bit,bct->bic", ds, A)
    cache = ForwardCache(indices=np.arange(B), acts=[A], pre=[s], dpre=[ds], losses=losses)
    return s.reshape(B, spec.out_channels, spec.height, spec.width), dTheta, cache


class ConvProblem(Problem):
    """One conv layer whose outputs are scored against target maps."""

    def __init__(self, spec, inputs, targets, loss="square"):
        self.spec = spec
        self.inputs = np.asarray(inputs, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        self.loss_name = loss
        self._loss_hess = LOSSES[loss][1]
        self.n_samples = self.inputs.shape[0]
        self.n_params = spec.n_params
        self._layers = [LayerInfo("conv", "conv", slice(0, spec.n_params), spec.m_A, spec.m_G, spec.n_locations)]

    @property
    def layers(self):
        return self._layers

    def init_params(self, seed=0):
        rng = np.random.default_rng(seed)
        return rng.standard_normal(self.n_params) / np.sqrt(self.spec.m_A)

    def _batch(self, idx):
        return self.inputs[idx], self.targets[idx]

    def forward_backward(self, theta, idx):
        idx = np.asarray(idx)
        _, dTheta, cache = conv_forward_backward(self.spec, theta, self._batch(idx), self.loss_name)
        cache.indices = idx
        grad = np.mean(dTheta, axis=0).ravel(order="F")
        return float(np.mean(cache.losses)), grad, cache

    def loss_grad(self, theta, idx):
        loss, grad, _ = self.forward_backward(theta, idx)
        return loss, grad

    def per_sample_grads(self, theta, idx):
        _, dTheta, _ = conv_forward_backward(self.spec, theta, self._batch(np.asarray(idx)), self.loss_name)
        return dTheta.transpose(0, 2, 1).reshape(dTheta.shape[0], -1)

    def output_jacobians(self, theta, idx):
        idx = np.asarray(idx)
        A = _kernels.im2col(self.inputs[idx], self.spec.K)
        B, mA, T = A.shape
        I = self.spec.m_G
        J = np.zeros((B, mA, I, I, T))
        for i in range(I):
            # d s_{i,t} / d Theta_{i,c} = A[c, t]; parameter index c * I + i
            J[:, :, i, i, :] = A
        return J.reshape(B, mA * I, I * T)

    def loss_output_grads(self, theta, idx):
        _, _, cache = conv_forward_backward(self.spec, theta, self._batch(np.asarray(idx)), self.loss_name)
        return cache.dpre[0].reshape(len(idx), -1)

    def loss_output_hessians(self, theta, idx):
        s, _, _ = conv_forward_backward(self.spec, theta, self._batch(np.asarray(idx)), self.loss_name)
        B = s.shape[0]
        return self._loss_hess(s.reshape(B, -1), self.targets[np.asarray(idx)].reshape(B, -1))

    def hessian(self, theta, idx):
        # outputs are linear in the weights, so the Gauss-Newton term is exact
        from ..curvature import ggn_dense

        return ggn_dense(self, theta, idx)

    def describe(self):
        sp = self.spec
        return {"kind": "conv", "in_channels": sp.in_channels, "out_channels": sp.out_channels,
                "K": sp.K, "grid": [sp.height, sp.width], "loss": self.loss_name,
                "n_params": self.n_params, "n_samples": self.n_samples}
