"""l2-regularized binary logistic regression with exact derivatives."""
import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .base import Problem


class LogisticRegressionProblem(Problem):
    """``psi_i(theta) = log(1 + exp(-y_i <x_i, theta>)) + mu ||theta||^2``.

    ``X`` may be a dense array or any scipy sparse matrix (stored as CSR);
    labels must be in {-1, +1}.
    """

    def __init__(self, X, y, mu=0.0, dense_limit=4096):
        y = np.asarray(y, dtype=np.float64)
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        if mu < 0:
            raise ValueError("mu must be non-negative")
        self.X = sp.csr_matrix(X, dtype=np.float64) if sp.issparse(X) else np.asarray(X, dtype=np.float64)
        self.y = y
        self.mu = float(mu)
        self.n_samples, self.n_params = self.X.shape
        self.dense_limit = dense_limit
        self.reg_curvature = 2.0 * self.mu

    def _rows(self, idx):
        Xs = self.X[idx]
        return Xs, self.y[idx]

    def _dense_rows(self, idx):
        Xs = self.X[idx]
        return Xs.toarray() if sp.issparse(Xs) else Xs

    def margins(self, theta, idx):
        Xs, ys = self._rows(idx)
        return ys * (Xs @ theta)

    def loss_grad(self, theta, idx):
        Xs, ys = self._rows(idx)
        z = ys * (Xs @ theta)
        loss = np.mean(np.logaddexp(0.0, -z)) + self.mu * theta @ theta
        coef = -ys * expit(-z) / len(ys)
        grad = Xs.T @ coef + 2.0 * self.mu * theta
        return float(loss), np.asarray(grad).ravel()

    def per_sample_grads(self, theta, idx):
        Xs, ys = self._rows(idx)
        z = ys * (Xs @ theta)
        coef = -ys * expit(-z)
        rows = self._dense_rows(idx)
        return coef[:, None] * rows + 2.0 * self.mu * theta[None, :]

    def _curv_weights(self, theta, idx):
        z = self.margins(theta, idx)
        return expit(z) * expit(-z)

    def data_hessian(self, theta, idx):
        """The Hessian without the ``2 mu I`` term."""
        if self.n_params > self.dense_limit:
            raise MemoryError(f"n={self.n_params} exceeds the dense limit {self.dense_limit}")
        w = self._curv_weights(theta, idx)
        Xs = self.X[idx]
        if sp.issparse(Xs):
            H = (Xs.T @ sp.diags(w) @ Xs).toarray()
        else:
            H = Xs.T @ (w[:, None] * Xs)
        H = H / len(idx)
        return 0.5 * (H + H.T)

    def hessian(self, theta, idx):
        return self.data_hessian(theta, idx) + 2.0 * self.mu * np.eye(self.n_params)

    def sample_hessian(self, theta, i):
        x = self._dense_rows([i])[0]
        z = self.y[i] * (x @ theta)
        w = expit(z) * expit(-z)
        return w * np.outer(x, x) + 2.0 * self.mu * np.eye(self.n_params)

    # f(x, theta) = <x, theta> with the label inside the loss

    def output_jacobians(self, theta, idx):
        return self._dense_rows(idx)[:, :, None]

    def loss_output_grads(self, theta, idx):
        ys = self.y[idx]
        z = ys * (self.X[idx] @ theta)
        return (-ys * expit(-z))[:, None]

    def loss_output_hessians(self, theta, idx):
        return self._curv_weights(theta, idx)[:, None, None]

    def describe(self):
        return {"kind": "logistic", "n_params": self.n_params, "n_samples": self.n_samples, "mu": self.mu}


def lr_value_grad(problem, theta, idx):
    return problem.loss_grad(theta, idx)


def lr_exact_hessian(problem, theta, idx):
    return problem.hessian(theta, idx)
