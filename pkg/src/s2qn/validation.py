"""Oracle suites run by ``s2qn validate``.

Each suite compares a production code path against an independent,
deliberately naive computation and returns ``(passed, worst_error)``.
"""
import numpy as np

from .curvature import BaseMatrix
from .linalg import KroneckerOperator, LowRankFactor, dense_inverse_oracle, kron_apply, sym_solve
from .models import ConvLayerSpec, LogisticRegressionProblem, MLPProblem, conv_forward_backward
from .models.conv import matrix_to_kernel
from .refinement import PairBuffer, accept_pair, bfgs_update, block_bfgs_update, build_compact, make_pair
from .schedule import lambda_k
from .solver import RegularizedSystem, direction_kron, direction_lowrank, direction_smw


def _rng(seed):
    return np.random.default_rng(seed)


def _spd(rng, n, shift=0.5):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + shift * np.eye(n)


def _accepted_buffer(rng, n, p):
    """Pairs from a random SPD curvature so every one passes the curvature test."""
    M = _spd(rng, n)
    buf = PairBuffer(capacity=p)
    for _ in range(p):
        u = rng.standard_normal(n)
        accept_pair(make_pair(np.zeros(n), u, np.zeros(n), M @ u), buf, damping=False)
    return buf


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def suite_dense_inverse(seed=0):
    rng, worst = _rng(seed), 0.0
    for n in (3, 8, 16, 40):
        M = _spd(rng, n)
        b = rng.standard_normal(n)
        worst = max(worst, _rel(sym_solve(M, b), dense_inverse_oracle(M) @ b))
    return worst <= 1e-9, worst


def suite_kron_materialize(seed=0):
    rng, worst = _rng(seed), 0.0
    for mA, mG in ((1, 1), (2, 3), (3, 3), (4, 2), (6, 5)):
        A, G = _spd(rng, mA), _spd(rng, mG)
        x = rng.standard_normal(mA * mG)
        worst = max(worst, _rel(kron_apply(KroneckerOperator(A, G), x), np.kron(A, G) @ x))
    return worst <= 1e-12, worst


def suite_smw_direction(seed=0):
    rng, worst = _rng(seed), 0.0
    for trial in range(10):
        n, p = int(rng.integers(4, 40)), int(rng.integers(1, 6))
        buf = _accepted_buffer(rng, n, p)
        ref = build_compact(buf, 0.5 + rng.random(), n)
        sys = RegularizedSystem(BaseMatrix("hessian", _spd(rng, n, 0.1)), ref, 0.1 + rng.random())
        g = rng.standard_normal(n)
        d = direction_smw(sys, g)
        worst = max(worst, _rel(d, -dense_inverse_oracle(sys.materialize()) @ g))
    return worst <= 1e-8, worst


def suite_lowrank_direction(seed=0):
    rng, worst = _rng(seed), 0.0
    for trial in range(10):
        n, p, r = int(rng.integers(6, 40)), int(rng.integers(1, 6)), int(rng.integers(1, 9))
        buf = _accepted_buffer(rng, n, p)
        ref = build_compact(buf, 0.5 + rng.random(), n)
        base = BaseMatrix("efim-lowrank", LowRankFactor(rng.standard_normal((n, r))))
        sys = RegularizedSystem(base, ref, 0.1 + rng.random())
        g = rng.standard_normal(n)
        worst = max(worst, _rel(direction_lowrank(sys, g), -dense_inverse_oracle(sys.materialize()) @ g))
    return worst <= 1e-8, worst


def suite_kron_direction(seed=0):
    rng, worst = _rng(seed), 0.0
    for mA in range(1, 5):
        for mG in range(1, 5):
            A, G, L = _spd(rng, mA), _spd(rng, mG), _spd(rng, mG, 0.1)
            lam = 0.05 + rng.random()
            g = rng.standard_normal(mA * mG)
            M = np.kron(A, G + L) + lam * np.eye(mA * mG)
            worst = max(worst, _rel(direction_kron(A, G, L, lam, g), -dense_inverse_oracle(M) @ g))
    return worst <= 1e-10, worst


def suite_secant_compact(seed=0):
    """Newest-pair secant residual and agreement with pair-by-pair BFGS."""
    rng, worst = _rng(seed), 0.0
    for trial in range(20):
        n, p = int(rng.integers(2, 17)), int(rng.integers(1, 6))
        buf = _accepted_buffer(rng, n, p)
        gamma = 0.2 + rng.random()
        Lam = build_compact(buf, gamma, n).materialize()
        B = gamma * np.eye(n)
        for pr in buf.pairs:
            B = bfgs_update(B, pr.u, pr.v)
        u, v = buf.pairs[-1].u, buf.pairs[-1].v
        sec = np.linalg.norm(Lam @ u - v) / (np.linalg.norm(Lam, 2) * np.linalg.norm(u) + np.linalg.norm(v))
        worst = max(worst, sec, np.max(np.abs(Lam - B)) / max(1.0, np.max(np.abs(B))))
    return worst <= 1e-9, worst


def suite_secant_block(seed=0):
    rng, worst = _rng(seed), 0.0
    for trial in range(20):
        m, q = int(rng.integers(3, 9)), int(rng.integers(1, 3))
        Lam = _spd(rng, m)
        U = rng.standard_normal((m, q))
        V = _spd(rng, m) @ U
        new = block_bfgs_update(Lam, U, V, choice="exact", damping=False)
        worst = max(worst, _rel(new @ U, V))
    return worst <= 1e-9, worst


def _fd_grad(f, x, h_rel=1e-5):
    g = np.empty_like(x)
    for i in range(x.size):
        h = h_rel * (1.0 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def suite_fd_logistic(seed=0):
    rng = _rng(seed)
    X = rng.standard_normal((30, 10))
    y = np.where(rng.random(30) < 0.5, -1.0, 1.0)
    P = LogisticRegressionProblem(X, y, mu=0.01)
    idx = np.arange(30)
    theta = rng.standard_normal(10)
    g = P.loss_grad(theta, idx)[1]
    err = _rel(g, _fd_grad(lambda t: P.loss(t, idx), theta))
    return err <= 1e-6, err


def suite_fd_mlp(seed=0):
    rng = _rng(seed)
    X, Y = rng.standard_normal((8, 3)), rng.random((8, 2))
    P = MLPProblem(X, Y, [3, 4, 2], "sigmoid", "cross-entropy", weight_decay=1e-3)
    idx = np.arange(8)
    theta = P.init_params(seed)
    g = P.loss_grad(theta, idx)[1]
    err = _rel(g, _fd_grad(lambda t: P.loss(t, idx), theta))
    return err <= 1e-5, err


def conv_loop_oracle(spec, kernel, a):
    """Direct nested-loop convolution with zero padding ``K`` and stride 1."""
    B = a.shape[0]
    K = spec.K
    out = np.zeros((B, spec.out_channels, spec.height, spec.width))
    for b in range(B):
        for i in range(spec.out_channels):
            for y in range(spec.height):
                for x in range(spec.width):
                    acc = 0.0
                    for j in range(spec.in_channels):
                        for dy in range(-K, K + 1):
                            for dx in range(-K, K + 1):
                                yy, xx = y + dy, x + dx
                                if 0 <= yy < spec.height and 0 <= xx < spec.width:
                                    acc += kernel[i, j, dy + K, dx + K] * a[b, j, yy, xx]
                    out[b, i, y, x] = acc
    return out


def suite_conv_oracle(seed=0):
    rng, worst = _rng(seed), 0.0
    for spec in (ConvLayerSpec(2, 3, 1, 4, 4), ConvLayerSpec(1, 2, 2, 5, 3), ConvLayerSpec(3, 1, 0, 2, 2)):
        a = rng.standard_normal((2, spec.in_channels, spec.height, spec.width))
        Tm = rng.standard_normal((spec.m_G, spec.m_A))
        zero = np.zeros((2, spec.out_channels, spec.height, spec.width))
        s, _, _ = conv_forward_backward(spec, Tm, (a, zero))
        worst = max(worst, float(np.max(np.abs(s - conv_loop_oracle(spec, matrix_to_kernel(spec, Tm), a)))))
    return worst <= 1e-12, worst


def suite_fd_conv(seed=0):
    rng = _rng(seed)
    spec = ConvLayerSpec(2, 2, 1, 3, 3)
    a = rng.standard_normal((3, 2, 3, 3))
    y = rng.standard_normal((3, 2, 3, 3))
    theta = rng.standard_normal(spec.n_params)

    def f(t):
        s, _, cache = conv_forward_backward(spec, t, (a, y))
        return float(np.mean(cache.losses))

    _, dTheta, _ = conv_forward_backward(spec, theta, (a, y))
    g = dTheta.mean(axis=0).ravel(order="F")
    err = _rel(g, _fd_grad(f, theta))
    return err <= 1e-5, err


def suite_lambda_rule(seed=0):
    checks = [
        (lambda_k(0.5, 0.1, 1.0, 10.0), 2.0 / 1.5 * 10.0),
        (lambda_k(3.0, 0.1, 1.0, 10.0), 10.0),
        (lambda_k(1.0, 0.1, 1.0, 10.0), 10.0),
        (lambda_k(1.0 - 1e-13, 0.1, 1.0, 10.0), 10.0),
        (lambda_k(10.0 + 1e-12, 0.1, 1.0, 10.0), 10.0),
    ]
    worst = max(abs(a - b) / b for a, b in checks)
    return worst <= 1e-12, worst


SUITES = {
    "dense-inverse": suite_dense_inverse,
    "kron-materialize": suite_kron_materialize,
    "smw-direction": suite_smw_direction,
    "lowrank-direction": suite_lowrank_direction,
    "kron-direction": suite_kron_direction,
    "secant-compact": suite_secant_compact,
    "secant-block": suite_secant_block,
    "fd-gradient-logistic": suite_fd_logistic,
    "fd-gradient-mlp": suite_fd_mlp,
    "fd-gradient-conv": suite_fd_conv,
    "conv-loop-oracle": suite_conv_oracle,
    "lambda-rule": suite_lambda_rule,
}


def run_suites(name_filter=None, seed=0):
    """Run every suite whose name contains ``name_filter``; returns ``[(name, passed, worst)]``."""
    results = []
    for name, fn in SUITES.items():
        if name_filter and name_filter not in name:
            continue
        try:
            ok, worst = fn(seed)
        except Exception as exc:  # a crash is a failure, reported not raised
            ok, worst = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), worst))
    return results
