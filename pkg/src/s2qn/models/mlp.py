"""Small fully-connected networks with hand-written reverse mode."""
import numpy as np
from scipy.special import expit

from ..errors import NonFiniteActivation
from .base import LOSSES, ForwardCache, LayerInfo, Problem


def _sigmoid(s):
    return expit(s)


def _sigmoid_prime(s, h):
    return h * (1.0 - h)


def _relu(s):
    return np.maximum(s, 0.0)


def _relu_prime(s, h):
    return (s > 0).astype(np.float64)


ACTIVATIONS = {
    "sigmoid": (_sigmoid, _sigmoid_prime),
    "relu": (_relu, _relu_prime),
}


class MLPProblem(Problem):
    """Network ``dims[0] -> ... -> dims[-1]`` with a linear output layer.

    Each layer's weight matrix is ``(d_out, d_in + 1)``; the last column is
    the bias, fed by a constant 1 appended to the layer input. Weights are
    flattened column-major, layer after layer.
    """

    def __init__(self, X, Y, dims, activation="sigmoid", loss="cross-entropy", weight_decay=0.0):
        self.X = np.asarray(X, dtype=np.float64)
        self.Y = np.asarray(Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        dims = [int(d) for d in dims]
        if dims[0] != self.X.shape[1] or dims[-1] != self.Y.shape[1]:
            raise ValueError(f"layer dims {dims} do not match data {self.X.shape[1]} -> {self.Y.shape[1]}")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        if loss not in LOSSES:
            raise ValueError(f"unknown loss {loss!r}")
        self.dims = dims
        self.activation = activation
        self.loss_name = loss
        self._act, self._act_prime = ACTIVATIONS[activation]
        self._loss, self._loss_hess = LOSSES[loss]
        self.weight_decay = float(weight_decay)
        self.reg_curvature = 2.0 * self.weight_decay
        self.n_samples = self.X.shape[0]
        layers, off = [], 0
        for l in range(1, len(dims)):
            m_A, m_G = dims[l - 1] + 1, dims[l]
            layers.append(LayerInfo(f"fc{l}", "fc", slice(off, off + m_A * m_G), m_A, m_G))
            off += m_A * m_G
        self._layers = layers
        self.n_params = off

    @property
    def layers(self):
        return self._layers

    def init_params(self, seed=0):
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.n_params)
        for L in self._layers:
            W = rng.standard_normal((L.m_G, L.m_A)) / np.sqrt(L.m_A - 1)
            W[:, -1] = 0.0
            theta[L.slice] = W.ravel(order="F")
        return theta

    def weights(self, theta):
        return [theta[L.slice].reshape(L.m_G, L.m_A, order="F") for L in self._layers]

    def _forward(self, theta, X):
        Ws = self.weights(theta)
        acts, pres, hs = [], [], []
        h = X
        for l, W in enumerate(Ws):
            a = np.hstack([h, np.ones((h.shape[0], 1))])
            s = a @ W.T
            acts.append(a)
            pres.append(s)
            if l < len(Ws) - 1:
                h = self._act(s)
                hs.append(h)
        if not all(np.all(np.isfinite(s)) for s in pres):
            raise NonFiniteActivation("forward pass produced non-finite pre-activations")
        return Ws, acts, pres, hs

    def _backward(self, Ws, pres, hs, ds_out):
        """Per-sample pre-activation derivatives for an output seed ``ds_out``."""
        ds = [None] * len(Ws)
        ds[-1] = ds_out
        for l in range(len(Ws) - 1, 0, -1):
            da = ds[l] @ Ws[l][:, :-1]
            ds[l - 1] = da * self._act_prime(pres[l - 1], hs[l - 1])
        return ds

    def forward(self, theta, X):
        return self._forward(theta, np.asarray(X, dtype=np.float64))[2][-1]

    def forward_backward(self, theta, idx):
        idx = np.asarray(idx)
        X, Y = self.X[idx], self.Y[idx]
        Ws, acts, pres, hs = self._forward(theta, X)
        losses, dout = self._loss(pres[-1], Y)
        ds = self._backward(Ws, pres, hs, dout)
        B = len(idx)
        grad = np.concatenate([(ds[l].T @ acts[l]).ravel(order="F") / B for l in range(len(Ws))])
        if self.weight_decay:
            losses = losses + self.weight_decay * theta @ theta
            grad = grad + 2.0 * self.weight_decay * theta
        cache = ForwardCache(
            indices=idx,
            acts=[a[:, :, None] for a in acts],
            pre=[s[:, :, None] for s in pres],
            dpre=[d[:, :, None] for d in ds],
            losses=losses,
        )
        return float(np.mean(losses)), grad, cache

    def loss_grad(self, theta, idx):
        loss, grad, _ = self.forward_backward(theta, idx)
        return loss, grad

    def _per_sample_from(self, acts, ds):
        B = acts[0].shape[0]
        out = np.empty((B, self.n_params))
        for l, L in enumerate(self._layers):
            # vec(g a^T) column-major == kron(a, g)
            out[:, L.slice] = (acts[l][:, :, None] * ds[l][:, None, :]).reshape(B, -1)
        return out

    def per_sample_grads(self, theta, idx):
        idx = np.asarray(idx)
        Ws, acts, pres, hs = self._forward(theta, self.X[idx])
        _, dout = self._loss(pres[-1], self.Y[idx])
        G = self._per_sample_from(acts, self._backward(Ws, pres, hs, dout))
        if self.weight_decay:
            G += 2.0 * self.weight_decay * theta
        return G

    def output_jacobians(self, theta, idx):
        idx = np.asarray(idx)
        Ws, acts, pres, hs = self._forward(theta, self.X[idx])
        B, m = len(idx), self.dims[-1]
        J = np.empty((B, self.n_params, m))
        for j in range(m):
            seed = np.zeros((B, m))
            seed[:, j] = 1.0
            J[:, :, j] = self._per_sample_from(acts, self._backward(Ws, pres, hs, seed))
        return J

    def loss_output_grads(self, theta, idx):
        idx = np.asarray(idx)
        f = self.forward(theta, self.X[idx])
        return self._loss(f, self.Y[idx])[1]

    def loss_output_hessians(self, theta, idx):
        idx = np.asarray(idx)
        f = self.forward(theta, self.X[idx])
        return self._loss_hess(f, self.Y[idx])

    def describe(self):
        return {"kind": "mlp", "dims": self.dims, "activation": self.activation,
                "loss": self.loss_name, "n_params": self.n_params, "n_samples": self.n_samples}


def mlp_forward_backward(problem, theta, idx):
    return problem.forward_backward(theta, idx)
