import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from risksac.oracle import (
    TabularMDP,
    bellman_backward,
    brute_force_Q,
    check_bellman_exactness,
    check_gap_monotonicity,
    check_policy_improvement,
    check_taylor,
    entropic_risk,
    improve_policy,
    policy_improvement_check,
    random_mdp,
    random_policy,
    soft_optimal_policy,
    taylor_check,
    verification_report,
)


def _chain(horizon=4, gamma=0.9):
    """Deterministic two-state chain: action 0 stays, action 1 flips; reward = state + action."""
    p = np.zeros((2, 2, 2))
    p[0, 0, 0] = p[1, 0, 1] = 1.0
    p[0, 1, 1] = p[1, 1, 0] = 1.0
    r = np.array([[0.0, 1.0], [1.0, 2.0]])
    return TabularMDP(p, r, horizon, gamma)


# --- entropic risk ------------------------------------------------------------

def test_entropic_risk_examples():
    assert entropic_risk([(1.0, 3.0)], -2.0) == pytest.approx(3.0, abs=1e-15)
    assert entropic_risk([(0.5, 0.0), (0.5, 2.0)], 0.0) == 1.0
    expected = math.log(0.5 * (1 + math.exp(-2))) / -1.0
    assert entropic_risk([(0.5, 0.0), (0.5, 2.0)], -1.0) == pytest.approx(expected, rel=1e-14)


def test_entropic_risk_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        entropic_risk([(0.5, 1.0), (0.4, 2.0)], -1.0)
    with pytest.raises(ValueError):
        entropic_risk([(-0.5, 1.0), (1.5, 2.0)], -1.0)


dists = st.lists(st.tuples(st.floats(0.01, 1), st.floats(-20, 20)), min_size=1, max_size=6)


def _normalize(d):
    p = np.array([x for x, _ in d])
    return np.column_stack([p / p.sum(), [v for _, v in d]])


@settings(max_examples=150, deadline=None)
@given(d=dists, b1=st.floats(-3, 3), b2=st.floats(-3, 3))
def test_entropic_risk_jensen_monotone_bounded(d, b1, b2):
    out = _normalize(d)
    mean = float(out[:, 0] @ out[:, 1])
    lo_b, hi_b = sorted((b1, b2))
    lo, hi = entropic_risk(out, lo_b), entropic_risk(out, hi_b)
    assert lo <= hi + 1e-9
    for b, v in ((lo_b, lo), (hi_b, hi)):
        assert out[:, 1].min() - 1e-9 <= v <= out[:, 1].max() + 1e-9
        if b < 0:
            assert v <= mean + 1e-9
        elif b > 0:
            assert v >= mean - 1e-9


def test_taylor_examples():
    exact, approx, gap = taylor_check([(1.0, 4.0)], 0.5)
    assert (exact, approx, gap) == (4.0, 4.0, 0.0)
    exact, approx, _ = taylor_check([(0.5, 0.0), (0.5, 1.0)], -0.2)
    assert approx == pytest.approx(0.5 - 0.1 * 0.25)
    assert exact == pytest.approx(math.log(0.5 * (1 + math.exp(-0.2))) / -0.2, rel=1e-14)


def test_taylor_gap_scales_quadratically_for_two_point():
    # symmetric two-point: third cumulant vanishes, so the gap is O(beta^3)
    out = [(0.5, -1.0), (0.5, 1.0)]
    g1, g2 = abs(taylor_check(out, 0.1)[2]), abs(taylor_check(out, 0.05)[2])
    assert g1 / g2 == pytest.approx(8.0, rel=0.01)
    skew = [(0.8, 0.0), (0.2, 1.0)]
    g1, g2 = abs(taylor_check(skew, 0.1)[2]), abs(taylor_check(skew, 0.05)[2])
    assert g1 / g2 == pytest.approx(4.0, rel=0.05)


# --- Q evaluation -------------------------------------------------------------

def test_mdp_validation():
    with pytest.raises(ValueError):
        TabularMDP(np.full((2, 1, 2), 0.6), np.zeros((2, 1)), 2)
    with pytest.raises(ValueError):
        TabularMDP(np.full((2, 1, 2), 0.5), np.zeros((2, 2)), 2)
    with pytest.raises(ValueError):
        TabularMDP(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), 0)


def test_horizon_one_q_is_reward():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 3, 2, 1)
    pi = random_policy(rng, mdp)
    for beta in (-1.0, 0.0, 0.5):
        np.testing.assert_array_equal(brute_force_Q(mdp, pi, beta, 0.3)[0], mdp.rewards)
        np.testing.assert_array_equal(bellman_backward(mdp, pi, beta, 0.3)[0], mdp.rewards)


def test_deterministic_chain_is_discounted_sum():
    mdp = _chain()
    pi = np.zeros((4, 2, 2))
    pi[..., 0] = 1.0  # always stay
    for beta in (-2.0, 0.0, 1.0):
        q = brute_force_Q(mdp, pi, beta)
        # from state 1 taking "flip": 2 now, then stay in 0 earning 0
        assert q[0, 1, 1] == pytest.approx(2.0, abs=1e-12)
        # from state 1 staying: 1 every step
        assert q[0, 1, 0] == pytest.approx(sum(0.9**k for k in range(4)), abs=1e-12)
        np.testing.assert_allclose(bellman_backward(mdp, pi, beta), q, rtol=0, atol=1e-12)


def test_two_by_two_cross_oracle():
    rng = np.random.default_rng(11)
    mdp = random_mdp(rng, 2, 2, 3, gamma=1.0)
    pi = random_policy(rng, mdp)
    for alpha in (0.0, 0.7):
        np.testing.assert_allclose(bellman_backward(mdp, pi, -0.5, alpha),
                                   brute_force_Q(mdp, pi, -0.5, alpha), rtol=0, atol=1e-10)


def test_entropy_bonus_starts_at_next_step():
    mdp = _chain(horizon=2, gamma=1.0)
    pi = np.full((2, 2, 2), 0.5)
    q0 = brute_force_Q(mdp, pi, 0.0, 0.0)
    q1 = brute_force_Q(mdp, pi, 0.0, 1.0)
    np.testing.assert_allclose(q1[0] - q0[0], math.log(2), atol=1e-12)
    np.testing.assert_array_equal(q1[1], q0[1])


def test_discount_breaks_exactness_only_beyond_two_steps():
    rng = np.random.default_rng(5)
    mdp = random_mdp(rng, 3, 2, 2, gamma=0.9)
    pi = random_policy(rng, mdp)
    np.testing.assert_allclose(bellman_backward(mdp, pi, -1.0, 0.5),
                               brute_force_Q(mdp, pi, -1.0, 0.5), atol=1e-12)
    mdp3 = random_mdp(rng, 3, 2, 4, gamma=0.9)
    pi3 = random_policy(rng, mdp3)
    assert np.abs(bellman_backward(mdp3, pi3, -1.0, 0.5) - brute_force_Q(mdp3, pi3, -1.0, 0.5)).max() > 1e-6


def test_enumeration_limit():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 6, 3, 6)
    with pytest.raises(ValueError, match="enumeration"):
        brute_force_Q(mdp, random_policy(rng, mdp), -1.0)


# --- policy improvement -------------------------------------------------------

def test_improve_policy_examples():
    np.testing.assert_allclose(improve_policy(np.full((2, 4), 3.0), 0.5), 0.25)
    np.testing.assert_allclose(improve_policy(np.array([1.0, 0.0]), 1.0), [0.7311, 0.2689], atol=1e-4)
    sharp = improve_policy(np.array([1.0, 0.0]), 1e-3)
    assert sharp[0] == pytest.approx(1.0) and sharp[1] < 1e-12
    flat = improve_policy(np.array([1.0, 0.0]), 1e6)
    np.testing.assert_allclose(flat, 0.5, atol=1e-6)
    with pytest.raises(ValueError):
        improve_policy(np.zeros(3), 0.0)


@settings(max_examples=100, deadline=None)
@given(q=st.lists(st.floats(-30, 30), min_size=2, max_size=6), alpha=st.floats(0.05, 5),
       c=st.floats(0.1, 10))
def test_improve_policy_properties(q, alpha, c):
    q = np.array(q)
    pi = improve_policy(q, alpha)
    assert np.all(pi >= 0) and pi.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(improve_policy(c * q, c * alpha), pi, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(improve_policy(q + 7.0, alpha), pi, rtol=1e-9, atol=1e-12)


@pytest.mark.parametrize("beta", [0.0, -0.01, -0.5])
def test_soft_optimal_policy_is_fixed_point(beta):
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 3, 3, 4, gamma=1.0)
    pi = soft_optimal_policy(mdp, 0.5, beta)
    report = policy_improvement_check(mdp, pi, 0.5, beta)
    assert abs(report.min_margin) <= 1e-10


def test_improvement_from_uniform_is_nonnegative_risk_neutral():
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, 4, 3, 4)
    uniform = np.full((mdp.n_states, mdp.n_actions), 1 / mdp.n_actions)
    report = policy_improvement_check(mdp, uniform, 0.3, 0.0)
    assert report.min_margin >= -1e-10
    assert report.q_old.shape == (4, 4, 3) and report.gamma == 1.0


# --- check functions ----------------------------------------------------------

def test_checks_small_runs():
    assert check_bellman_exactness(n_mdps=10)["passed"]
    gaps = check_gap_monotonicity(n_mdps=5)
    assert gaps["passed"] and gaps["mean_gaps"][0] > gaps["mean_gaps"][-1] > 0
    assert check_policy_improvement(n_mdps=10, beta=0.0)["passed"]
    assert check_policy_improvement(n_mdps=10, beta=-0.01)["passed"]
    info = check_policy_improvement(n_mdps=5, beta=-2.0)
    assert info["passed"] is None and info["informational"]
    t = check_taylor()
    assert t["passed"] and t["n_below"] == 0


def test_taylor_check_reports_cancellation_failures():
    # this draw contains a distribution whose third and fourth cumulant
    # terms nearly cancel, so the ratio dips below 3.5
    t = check_taylor(seed=4)
    assert not t["passed"] and t["n_below"] >= 1 and t["min_ratio"] < 3.5


def test_verification_report_structure():
    rep = verification_report(n_mdps=10)
    names = [c["name"] for c in rep["checks"]]
    assert names.count("policy_improvement") == 2 and "taylor_expansion" in names
    assert rep["passed"]
