"""Problem protocol, output losses and the per-layer forward cache."""
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import UnsupportedModel


@dataclass(frozen=True)
class LayerInfo:
    """Where one layer's weights live in the flat parameter vector.

    The layer's weight matrix has shape ``(m_G, m_A)`` and is stored
    column-major in ``params[slice]``.
    """

    name: str
    kind: str
    slice: slice
    m_A: int
    m_G: int
    n_locations: int = 1

    @property
    def size(self):
        return self.m_A * self.m_G


@dataclass
class ForwardCache:
    """Per-layer quantities for one mini-batch at one parameter point.

    ``acts[l]`` is ``(B, m_A, T)`` (im2col-expanded, with the homogeneous
    coordinate for fully-connected layers), ``pre[l]`` and ``dpre[l]`` are
    ``(B, m_G, T)``; ``dpre`` holds per-sample derivatives of ``psi_i``.
    """

    indices: np.ndarray
    acts: list = field(default_factory=list)
    pre: list = field(default_factory=list)
    dpre: list = field(default_factory=list)
    losses: np.ndarray = None

    @property
    def batch_size(self):
        return len(self.indices)


# output losses: value, gradient and Hessian with respect to the model output f

def square_loss(f, y):
    r = f - y
    return 0.5 * np.sum(r * r, axis=1), r


def square_loss_hessian(f, y):
    B, m = f.shape
    return np.broadcast_to(np.eye(m), (B, m, m)).copy()


def bce_loss(f, y):
    """Sigmoid cross-entropy summed over outputs, targets in [0, 1]."""
    value = np.sum(np.logaddexp(0.0, f) - y * f, axis=1)
    return value, expit(f) - y


def bce_loss_hessian(f, y):
    p = expit(f)
    w = p * (1.0 - p)
    B, m = f.shape
    H = np.zeros((B, m, m))
    idx = np.arange(m)
    H[:, idx, idx] = w
    return H


LOSSES = {
    "square": (square_loss, square_loss_hessian),
    "cross-entropy": (bce_loss, bce_loss_hessian),
}


class Problem:
    """Finite-sum objective ``Psi(theta) = mean_i psi_i(theta)``.

    Subclasses implement the derivative hooks they can supply; the others
    raise :class:`UnsupportedModel`. ``reg_curvature`` is the constant
    multiple of the identity contributed by an explicit l2 term, which the
    curvature builders add to bases that leave it out (GGN, EFIM, KFAC).
    """

    n_params: int
    n_samples: int
    reg_curvature = 0.0

    def all_indices(self):
        return np.arange(self.n_samples)

    def loss_grad(self, theta, idx):
        raise NotImplementedError

    def loss(self, theta, idx):
        return self.loss_grad(theta, idx)[0]

    def per_sample_grads(self, theta, idx):
        raise UnsupportedModel(f"{type(self).__name__} has no per-sample gradients")

    def hessian(self, theta, idx):
        raise UnsupportedModel(f"{type(self).__name__} has no exact Hessian")

    def sample_hessian(self, theta, i):
        raise UnsupportedModel(f"{type(self).__name__} has no per-sample Hessians")

    def output_jacobians(self, theta, idx):
        raise UnsupportedModel(f"{type(self).__name__} has no output Jacobians")

    def loss_output_grads(self, theta, idx):
        raise UnsupportedModel(f"{type(self).__name__} has no loss output gradients")

    def loss_output_hessians(self, theta, idx):
        raise UnsupportedModel(f"{type(self).__name__} has no loss output Hessians")

    @property
    def layers(self):
        raise UnsupportedModel(f"{type(self).__name__} is not a layered model")

    def forward_backward(self, theta, idx):
        raise UnsupportedModel(f"{type(self).__name__} is not a layered model")

    def describe(self):
        return {"kind": type(self).__name__, "n_params": self.n_params, "n_samples": self.n_samples}
