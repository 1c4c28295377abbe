"""Regularization, step-size and batch-size sequences."""
import math
from dataclasses import dataclass


def lambda_k(gnorm_prev, alpha, r1, r2):
    """Gradient-norm-adaptive regularization.

    ``2 r1 / (|g| + r1) / alpha`` below ``r1``, ``2 |g| / (|g| + r2) / alpha``
    above ``r2`` and ``1 / alpha`` in between. ``gnorm_prev=None`` (the first
    iteration) takes the middle branch.
    """
    if not 0 < r1 < r2:
        raise ValueError(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    inv = 1.0 / alpha
    if gnorm_prev is None:
        return inv
    if gnorm_prev < r1:
        return 2.0 * r1 / (gnorm_prev + r1) * inv
    if gnorm_prev > r2:
        return 2.0 * gnorm_prev / (gnorm_prev + r2) * inv
    return inv


def theory_alpha_bound(L_psi, h, r1, r2):
    """Largest constant step parameter ``r1 / (4 r2 (L + h))`` allowed by the global theory."""
    if L_psi < 1:
        raise ValueError("the Lipschitz estimate must be at least 1")
    if h <= 0:
        raise ValueError("h must be positive")
    if not 0 < r1 < r2:
        raise ValueError(f"need 0 < r1 < r2, got r1={r1}, r2={r2}")
    return r1 / (4.0 * r2 * (L_psi + h))


@dataclass(frozen=True)
class BatchRule:
    kind: str = "constant"
    s0: int = 32
    ratio: float = 2.0

    def size(self, k, N):
        return batch_size_k(self, k, N)


def batch_size_k(rule, k, N):
    """Sample-set size at iteration ``k``: constant ``s0``, geometric
    ``ceil(s0 rho^k)`` or superlinear ``ceil(s0 rho^(k log(k+2)))``, capped at ``N``."""
    if k < 0:
        raise ValueError("iteration index must be non-negative")
    if rule.kind == "constant":
        size = rule.s0
    elif rule.kind in ("geometric", "superlinear"):
        expo = k if rule.kind == "geometric" else k * math.log(k + 2)
        logsize = math.log(rule.s0) + expo * math.log(rule.ratio)
        # avoid overflow long after saturation
        size = N if logsize >= math.log(N) else math.ceil(rule.s0 * rule.ratio ** expo)
    else:
        raise ValueError(f"unknown batch rule {rule.kind!r}")
    return int(max(1, min(N, size)))


@dataclass(frozen=True)
class AlphaRule:
    kind: str = "constant"
    value: float = 0.1
    power: float = 0.5

    def __call__(self, k):
        if self.kind == "constant":
            return self.value
        if self.kind == "polynomial":
            return self.value / (1.0 + k) ** self.power
        raise ValueError(f"unknown alpha rule {self.kind!r}")


@dataclass(frozen=True)
class ScheduleConfig:
    r1: float = 1e-3
    r2: float = 1.0
    alpha: AlphaRule = AlphaRule()
    beta: float = 1.0
    theory: bool = False
    L_psi: float = 1.0
    h: float = 1.0
    c: float = 1.0
    grad_batch: BatchRule = BatchRule()
    hess_batch: BatchRule = BatchRule()

    def __post_init__(self):
        if not 0 < self.r1 < self.r2:
            raise ValueError(f"need 0 < r1 < r2, got r1={self.r1}, r2={self.r2}")

    def alpha_k(self, k):
        a = self.alpha(k)
        if self.theory:
            # the linear-rate regime also needs alpha below 8 / c
            a = min(a, theory_alpha_bound(self.L_psi, self.h, self.r1, self.r2), 0.999 * 8.0 / self.c)
        if not a > 0:
            raise ValueError("alpha must be positive")
        return a

    def beta_k(self, k):
        return 1.0 if self.theory else self.beta

    def lambda_k(self, k, gnorm_prev):
        return lambda_k(gnorm_prev, self.alpha_k(k), self.r1, self.r2)
