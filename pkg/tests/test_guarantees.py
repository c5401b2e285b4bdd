import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from safeturn.guarantees import (BudgetError, SafetyBudget, admissible_pairs, chebyshev_tail,
                                 confidence_check, effective_noise_margin,
                                 empirical_tail_check, variance_decompose)
from safeturn.prediction import TrajectoryEnvelope


def test_chebyshev_examples():
    assert chebyshev_tail(2.0) == 0.25
    assert chebyshev_tail(2.0, one_sided=True) == 0.125
    assert chebyshev_tail(0.5) == 1.0
    assert chebyshev_tail(0.5, one_sided=True) == 1.0
    for bad in (0.0, -1.0):
        with pytest.raises(BudgetError):
            chebyshev_tail(bad)


def test_decompose_examples():
    assert variance_decompose(5.0, 4.0) == (3.0, 0.8, 0.6)
    assert variance_decompose(2.5, 0.0) == (2.5, 0.0, 1.0)
    assert variance_decompose(2.5, 2.5) == (0.0, 1.0, 0.0)
    with pytest.raises(BudgetError):
        variance_decompose(4.0, 5.0)
    with pytest.raises(BudgetError):
        variance_decompose(0.0, 0.0)


def test_noise_margin_examples():
    assert effective_noise_margin(3, 2, 0.8, 0.6) == pytest.approx(23 / 3)
    assert abs(effective_noise_margin(3, 2, 0.8, 0.6) - 7.6) <= 0.1
    assert effective_noise_margin(4.2, 0, 0, 1) == 4.2
    assert effective_noise_margin(4, 1, 0.6, 0.8) == pytest.approx(5.75)
    with pytest.raises(BudgetError):
        effective_noise_margin(3, 2, 1.0, 0.0)
    with pytest.raises(BudgetError):
        effective_noise_margin(1.0, 2.0, 0.6, 0.8)


def test_confidence_examples():
    bound, ok = confidence_check(1, 7.667, 0.01)
    assert bound == pytest.approx(0.00851, abs=1e-4) and ok
    bound, ok = confidence_check(6, 3.0, 0.05)
    assert bound == pytest.approx(1 / 3) and not ok
    bound, ok = confidence_check(2, 1.0, 1.0)
    assert bound == 1.0 and not ok  # strict inequality


def test_heterogeneous_union_bound():
    bound, ok = confidence_check(2, [2.0, 4.0], 0.2)
    assert bound == pytest.approx(1 / 8 + 1 / 32) and ok
    assert confidence_check(3, [5.0] * 3, 0.1)[0] == pytest.approx(confidence_check(3, 5.0, 0.1)[0])
    with pytest.raises(BudgetError):
        confidence_check(3, [1.0, 2.0], 0.1)
    with pytest.raises(BudgetError):
        confidence_check(0, 2.0, 0.1)


def test_budget_worked_example():
    b = SafetyBudget.evaluate(5, 4, 3, 2, 1, 0.01)
    assert (b.sigma_n, b.alpha_c, b.alpha_n) == (3.0, 0.8, 0.6)
    assert b.kappa_n == pytest.approx(7.67, abs=0.01)
    assert b.bound == pytest.approx(0.0085, abs=1e-4) and b.passes
    table = b.table()
    assert "kappa_n" in table and "pass" in table
    worse = SafetyBudget.evaluate(5, 4, 3, 2, 5, 0.01)
    assert worse.bound == pytest.approx(0.0425, abs=1e-4) and not worse.passes
    with pytest.raises(BudgetError):
        SafetyBudget.evaluate(5, 5, 3, 2, 1, 0.01)
    with pytest.raises(BudgetError):
        SafetyBudget.evaluate(5, 4, 3, 2, 1, 1.5)


def test_admissible_pairs():
    pairs = admissible_pairs(lambda k: effective_noise_margin(k, 2, 0.8, 0.6), [1.0, 3.0, 6.0],
                             [1, 5, 50], 0.01)
    assert (1, 3.0) in pairs and (5, 3.0) not in pairs and (5, 6.0) not in pairs
    assert (1, 6.0) in pairs
    assert (1, 1.0) not in pairs  # control deviation exceeds k=1 and is skipped


@settings(max_examples=300, deadline=None)
@given(sm=st.floats(1e-3, 1e3), frac=st.floats(0, 1))
def test_decomposition_round_trip(sm, frac):
    sc = sm * frac
    sn, ac, an = variance_decompose(sm, sc)
    assert math.isclose(ac * ac + an * an, 1.0, rel_tol=1e-9)
    assert math.isclose(sc * sc + sn * sn, sm * sm, rel_tol=1e-9)
    assert sn >= 0


@settings(max_examples=300, deadline=None)
@given(k=st.floats(0.5, 20), kc=st.floats(0, 5), ac=st.floats(0, 0.99), dk=st.floats(1e-3, 5))
def test_noise_margin_monotone(k, kc, ac, dk):
    an = math.sqrt(1 - ac * ac)
    assume(kc * ac + 1e-6 < k)
    base = effective_noise_margin(k, kc, ac, an)
    assert effective_noise_margin(k + dk, kc, ac, an) > base
    if ac > 1e-3 and (kc + dk) * ac < k:
        assert effective_noise_margin(k, kc + dk, ac, an) > base
    assert effective_noise_margin(k, kc, ac, an * 1.01) < base


@settings(max_examples=300, deadline=None)
@given(m=st.integers(1, 1000), kn=st.floats(0.1, 100), dk=st.floats(1e-3, 10))
def test_union_bound_linear_and_decreasing(m, kn, dk):
    one = confidence_check(1, kn, 0.5)[0]
    assert confidence_check(m, kn, 0.5)[0] == pytest.approx(m * one)
    assert confidence_check(m, kn + dk, 0.5)[0] < confidence_check(m, kn, 0.5)[0]


# ------------------------------------------------------------- empirical tails

def test_deterministic_rollouts_never_exceed():
    means = np.linspace(0, 10, 5)
    rollouts = np.tile(means, (1000, 1))
    assert empirical_tail_check(rollouts, means, np.ones(5), 0.1) == 0.0


def test_gaussian_three_sigma():
    x = np.random.default_rng(0).standard_normal((200_000, 1))
    freq = empirical_tail_check(x, np.zeros(1), np.ones(1), 3.0)
    assert freq == pytest.approx(0.0027, abs=5e-4)
    assert freq <= chebyshev_tail(3.0)


def test_envelope_argument_and_minimum_count():
    env = TrajectoryEnvelope(np.zeros(3), np.ones(3), "r")
    assert empirical_tail_check(np.zeros((1000, 3)), env, None, 1.0) == 0.0
    with pytest.raises(BudgetError):
        empirical_tail_check(np.zeros((10, 3)), env, None, 1.0)


def _sample(kind, rng, n):
    if kind == "uniform":
        return rng.uniform(-1, 1, n)
    if kind == "bimodal":
        return np.where(rng.random(n) < 0.5, -1.0, 1.0) + rng.normal(0, 0.1, n)
    if kind == "two-point":  # the Chebyshev-tight case
        return np.where(rng.random(n) < 0.02, 1.0, 0.0)
    return np.clip(rng.standard_t(2.5, n), -50, 50)


@pytest.mark.parametrize("kind", ["uniform", "bimodal", "two-point", "heavy"])
@pytest.mark.parametrize("k", [1.2, 2.0, 3.0, 5.0])
def test_chebyshev_dominates_sampled_distributions(kind, k):
    rng = np.random.default_rng([len(kind), int(k * 10)])
    n = 20_000
    ref = _sample(kind, rng, 200_000)
    mu, sd = ref.mean(), ref.std()
    x = _sample(kind, rng, n)[:, None]
    freq = empirical_tail_check(x, np.array([mu]), np.array([sd]), k)
    p = chebyshev_tail(k)
    assert freq <= p + 3 * math.sqrt(p * (1 - p) / n)
