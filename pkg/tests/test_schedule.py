import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from s2qn.curvature import HESSIAN_SET, draw_sample_set, full_sample_set
from s2qn.schedule import AlphaRule, BatchRule, ScheduleConfig, batch_size_k, lambda_k, theory_alpha_bound


def test_lambda_lower_branch():
    assert lambda_k(0.5, 0.1, 1.0, 10.0) == pytest.approx(2.0 / 1.5 * 10.0, rel=1e-15)


def test_lambda_middle_branch():
    for g in (1.0, 3.0, 10.0):
        assert lambda_k(g, 0.1, 1.0, 10.0) == pytest.approx(10.0, rel=1e-15)


def test_lambda_first_iteration_uses_middle_branch():
    assert lambda_k(None, 0.25, 1.0, 2.0) == 4.0


def test_lambda_upper_branch():
    assert lambda_k(30.0, 0.5, 1.0, 10.0) == pytest.approx(2 * 30 / 40 / 0.5)


@pytest.mark.parametrize("thr", ["r1", "r2"])
def test_lambda_continuous_at_thresholds(thr):
    r1, r2, a = 0.3, 7.0, 0.2
    x = r1 if thr == "r1" else r2
    for eps in (1e-9, 1e-12):
        below, above = lambda_k(x - eps, a, r1, r2), lambda_k(x + eps, a, r1, r2)
        assert abs(below - above) <= 1e-12 * (1 / a) + 4 * eps / a / x


def test_lambda_rejects_bad_thresholds():
    with pytest.raises(ValueError):
        lambda_k(1.0, 0.1, 2.0, 1.0)


@given(g=st.floats(1e-12, 1e12), a=st.floats(1e-6, 1e3), r1=st.floats(1e-6, 1.0), gap=st.floats(1e-6, 1e3))
def test_lambda_range_property(g, a, r1, gap):
    lam = lambda_k(g, a, r1, r1 + gap)
    # strict in exact arithmetic; rounding reaches 2/a once |g| >> r2
    assert 0 < lam <= 2.0 / a
    if g < 1e6 * (r1 + gap):
        assert lam < 2.0 / a


def test_theory_bound_examples():
    assert theory_alpha_bound(1.0, 1.0, 1.0, 2.0) == pytest.approx(1 / 16)
    assert theory_alpha_bound(4.0, 1.0, 0.1, 10.0) == pytest.approx(5e-4)
    with pytest.raises(ValueError):
        theory_alpha_bound(0.5, 1.0, 0.1, 1.0)


def test_theory_mode_clamps_alpha_and_fixes_beta():
    cfg = ScheduleConfig(r1=1.0, r2=2.0, alpha=AlphaRule("constant", 10.0), beta=0.5, theory=True, L_psi=1.0, h=1.0)
    assert cfg.alpha_k(0) == pytest.approx(1 / 16)
    assert cfg.beta_k(3) == 1.0
    free = ScheduleConfig(alpha=AlphaRule("constant", 10.0), beta=0.5)
    assert free.alpha_k(0) == 10.0 and free.beta_k(0) == 0.5


def test_theory_mode_respects_c():
    cfg = ScheduleConfig(r1=1.0, r2=1.5, alpha=AlphaRule("constant", 100.0), theory=True, L_psi=1.0, h=1e-9, c=1e3)
    assert cfg.alpha_k(0) == pytest.approx(0.999 * 8e-3)


def test_polynomial_alpha():
    assert AlphaRule("polynomial", 1.0, 0.5)(3) == pytest.approx(0.5)


def test_batch_examples():
    assert batch_size_k(BatchRule("geometric", 8, 2.0), 3, 1000) == 64
    assert batch_size_k(BatchRule("geometric", 8, 2.0), 3, 50) == 50
    assert batch_size_k(BatchRule("constant", 8), 100, 1000) == 8
    assert batch_size_k(BatchRule("superlinear", 2, 2.0), 1, 10**6) == math.ceil(2 * 2 ** math.log(3))
    assert batch_size_k(BatchRule("geometric", 8, 2.0), 10**6, 1000) == 1000


@pytest.mark.parametrize("rule", [BatchRule("geometric", 3, 1.3), BatchRule("superlinear", 3, 1.1)])
def test_batch_monotone_and_saturating(rule):
    sizes = [batch_size_k(rule, k, 5000) for k in range(200)]
    assert all(b >= a for a, b in zip(sizes, sizes[1:]))
    assert sizes[-1] == 5000 and min(sizes) >= 1


def test_superlinear_ratio_nondecreasing():
    # compare the unrounded sequence; ceil() adds jitter at small sizes
    rule = BatchRule("superlinear", 4, 1.05)
    raw = [rule.s0 * rule.ratio ** (k * math.log(k + 2)) for k in range(31)]
    ratios = [b / a for a, b in zip(raw, raw[1:])]
    assert all(r2 >= r1 for r1, r2 in zip(ratios, ratios[1:]))
    sizes = [batch_size_k(rule, k, 10**9) for k in range(31)]
    assert all(abs(s - math.ceil(r)) == 0 for s, r in zip(sizes, raw))


def test_sample_sets_are_pure_functions():
    a = draw_sample_set(100, 10, 7, 3)
    b = draw_sample_set(100, 10, 7, 3)
    np.testing.assert_array_equal(a.indices, b.indices)
    assert not np.array_equal(a.indices, draw_sample_set(100, 10, 7, 4).indices)
    assert not np.array_equal(a.indices, draw_sample_set(100, 10, 7, 3, HESSIAN_SET).indices)
    assert len(np.unique(a.indices)) == 10


def test_oversized_sample_is_full_set():
    S = draw_sample_set(20, 50, 0, 0)
    assert S.is_full and np.array_equal(S.indices, np.arange(20))
    assert full_sample_set(5).is_full
    with pytest.raises(ValueError):
        draw_sample_set(20, 0, 0, 0)
