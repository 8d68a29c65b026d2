from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_distance
from overlap_ab.errors import CalibrationError
from overlap_ab.logio import write_trajectory_log
from overlap_ab.propensity import build_counterfactual_view
from overlap_ab.simulators import (
    DEFAULT_REWARD_PROFILE,
    BanditSpec,
    BoredomSpec,
    PolicyPairSpec,
    bandit_estimator_variance,
    boredom_policy,
    child_stream,
    epsilon_pair,
    make_policy_pair,
    policy_distance,
    simulate_bandit,
    simulate_boredom,
    simulate_boredom_ab,
    true_improvement_bandit,
    true_improvement_mc,
)
from overlap_ab.estimators import f_estimate
from overlap_ab.transforms import FStar, H1

simplex = st.integers(2, 8).flatmap(
    lambda k: st.lists(st.floats(0.0, 1.0).map(lambda v: v if v > 1e-6 else 0.0), min_size=k, max_size=k)
    .filter(lambda v: sum(v) > 1e-3)
).map(lambda v: np.asarray(v) / sum(v))


def test_policy_distance_examples():
    assert policy_distance([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert policy_distance([0.5, 0.5], [0.25, 0.75]) == pytest.approx(7 / 24)
    assert brute_force_distance([0.5, 0.5], [0.25, 0.75]) == pytest.approx(7 / 24)


def test_policy_distance_rejects_off_simplex():
    with pytest.raises(ValueError):
        policy_distance([0.5, 0.6], [0.5, 0.5])


def test_policy_distance_partial_flag():
    d, partial = policy_distance([1.0, 0.0], [0.5, 0.5], with_flag=True)
    assert partial and d == pytest.approx(brute_force_distance([1.0, 0.0], [0.5, 0.5]))


@settings(max_examples=80, deadline=None)
@given(simplex, st.integers(0, 10**6))
def test_policy_distance_properties(p, seed):
    q = np.random.default_rng(seed).dirichlet(np.ones(len(p)))
    d = policy_distance(p, q)
    assert d >= 0
    assert d == pytest.approx(policy_distance(q, p), rel=1e-12)
    assert d == pytest.approx(brute_force_distance(p, q), rel=1e-9, abs=1e-12)
    assert policy_distance(p, p) == 0.0


def test_pair_equal_temperatures():
    a, b, d = make_policy_pair(PolicyPairSpec(temp_A=0.7, temp_B=0.7), seed=3)
    assert d == 0.0 and np.array_equal(a.probs, b.probs)


@pytest.mark.parametrize("hint, lo, hi", [(0.27, 0.20, 0.34), (80.0, 60.0, 100.0)])
def test_pair_calibration(hint, lo, hi):
    for seed in (0, 8, 21):
        a, b, d = make_policy_pair(PolicyPairSpec(distance_hint=hint), seed=seed)
        assert lo <= d <= hi
        assert abs(a.probs.sum() - 1) < 1e-12 and abs(b.probs.sum() - 1) < 1e-12


def test_setting_one_like_pair():
    _, _, d = make_policy_pair(PolicyPairSpec(distance_hint=0.266), seed=8)
    assert 0.2 <= d <= 0.35


def test_pair_unreachable_hint():
    with pytest.raises(CalibrationError):
        # nearly flat scores cannot separate the pair that far
        make_policy_pair(PolicyPairSpec(distance_hint=1.0, base_scores=(0.0, 0.0, 1e-3)))


def test_pair_spec_round_trip():
    spec = PolicyPairSpec(temp_A=math.inf, temp_B=-0.5, base_scores=(0.1, 0.2, 0.3))
    assert PolicyPairSpec.from_dict(spec.to_dict()) == spec


def test_true_improvement_bandit_examples():
    assert true_improvement_bandit(BanditSpec([0.8, 0.3], [1, 0], [0, 1])) == pytest.approx(0.5)
    assert true_improvement_bandit(BanditSpec([0.8, 0.3], [0.4, 0.6], [0.4, 0.6])) == 0.0


def test_true_improvement_bandit_matches_mc():
    rng = np.random.default_rng(12)
    spec = BanditSpec(rng.random(5), rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(5)))
    data = simulate_bandit(spec, 10**6, 10**6, seed=4)
    sums = data.user_reward_sums()
    est = sums[~data.is_b].mean() - sums[data.is_b].mean()
    se = math.sqrt(sums[~data.is_b].var() / 1e6 + sums[data.is_b].var() / 1e6)
    assert abs(est - true_improvement_bandit(spec)) <= 4 * se


def test_bandit_spec_validation():
    with pytest.raises(ValueError):
        BanditSpec([1.2, 0.1], [0.5, 0.5], [0.5, 0.5])
    with pytest.raises(ValueError):
        BanditSpec([0.2, 0.1], [0.6, 0.5], [0.5, 0.5])


def test_simulate_bandit_examples():
    spec = BanditSpec([1.0, 1.0, 1.0], [0.2, 0.3, 0.5], [0.5, 0.5, 0.0])
    empty = simulate_bandit(spec, 0, 0, seed=1)
    assert empty.n_A == 0 and empty.n_B == 0
    data = simulate_bandit(spec, 50, 40, seed=1)
    assert np.all(data.rewards == 1.0)
    assert (data.n_A, data.n_B) == (50, 40)


def test_simulate_bandit_deterministic():
    spec = BanditSpec(DEFAULT_REWARD_PROFILE, np.full(10, 0.1), np.r_[np.full(9, 0.05), 0.55])
    a = write_trajectory_log(simulate_bandit(spec, 100, 100, seed=7))
    b = write_trajectory_log(simulate_bandit(spec, 100, 100, seed=7))
    c = write_trajectory_log(simulate_bandit(spec, 100, 100, seed=8))
    assert a == b and a != c


def test_arm_streams_are_independent_of_other_arm_size():
    spec = BanditSpec([0.3, 0.6], [0.5, 0.5], [0.2, 0.8])
    small = simulate_bandit(spec, 10, 5, seed=2)
    big = simulate_bandit(spec, 10, 500, seed=2)
    assert np.array_equal(small.arm("A").actions, big.arm("A").actions)
    assert np.array_equal(small.arm("B").actions, big.arm("B").actions[:5])


def test_child_stream_is_stateless():
    assert child_stream(3, 1).random() == child_stream(3, 1).random()
    assert child_stream(3, 1).random() != child_stream(3, 0).random()


def test_boredom_rho_one_resets_to_initial_state():
    spec = BoredomSpec.generate(d=3, seed=1, rho=1.0, horizon=4)
    data = simulate_boredom(spec, boredom_policy(spec, 5.0), 20, seed=0)
    s = data.states.reshape(20, 4, 3)
    assert np.allclose(s, s[:, :1, :])


def test_boredom_fixed_point():
    spec = BoredomSpec(np.zeros((3, 3)), rho=0.0, sigma_noise=0.0, horizon=5)
    data = simulate_boredom(spec, boredom_policy(spec, 1.0), 10, seed=0)
    s = data.states.reshape(10, 5, 3)
    assert np.array_equal(s, np.repeat(s[:, :1, :], 5, axis=1))


def test_boredom_invariants():
    spec = BoredomSpec.generate(d=5, seed=2, horizon=6, sigma_noise=0.5)
    pol = boredom_policy(spec, 8.0)
    data = simulate_boredom(spec, pol, 200, seed=9, arm="B")
    assert data.n_B == 200 and data.n_steps == 1200
    assert np.all((data.states >= 0) & (data.states <= 1))
    assert np.allclose(pol.propensities(data.states, data.actions), data.logged_propensities, atol=1e-12, rtol=0)
    assert set(np.unique(data.rewards)) <= {0.0, 1.0}


def test_boredom_deterministic():
    spec = BoredomSpec.generate(d=4, seed=0, horizon=3)
    pa, pb = boredom_policy(spec, 10), boredom_policy(spec, 5)
    assert write_trajectory_log(simulate_boredom_ab(spec, pa, pb, 30, 30, 1)) == write_trajectory_log(
        simulate_boredom_ab(spec, pa, pb, 30, 30, 1)
    )


def test_boredom_spec_round_trip():
    spec = BoredomSpec.generate(d=3, seed=5, horizon=2)
    back = BoredomSpec.from_dict(spec.to_dict())
    assert np.array_equal(back.beta, spec.beta) and back.horizon == 2


def test_true_improvement_mc_identical_policies():
    spec = BoredomSpec.generate(d=4, seed=1, horizon=3)
    pol = boredom_policy(spec, 5.0)
    est, se = true_improvement_mc(spec, pol, pol, 4000, seed=0)
    assert abs(est) <= 4 * se
    with pytest.raises(ValueError):
        true_improvement_mc(spec, pol, pol, 999, seed=0)


def test_true_improvement_mc_single_step_closed_form():
    spec = BoredomSpec.generate(d=4, seed=3, horizon=1)
    pa, pb = boredom_policy(spec, 10.0), boredom_policy(spec, 1.0)
    est, se = true_improvement_mc(spec, pa, pb, 20_000, seed=1)
    # independent quadrature of E_s[sum_a (pa - pb)(a|s) <beta_a, s> / d]
    s = np.random.default_rng(77).random((400_000, 4))
    y = np.clip(s @ spec.beta.T / 4, 0, 1)
    ref = float(np.mean(np.sum((pa.action_probabilities(s) - pb.action_probabilities(s)) * y, axis=1)))
    assert abs(est - ref) <= 4 * se


def test_true_improvement_mc_se_scaling():
    spec = BoredomSpec.generate(d=4, seed=3, horizon=2)
    pa, pb = boredom_policy(spec, 10.0), boredom_policy(spec, 1.0)
    _, se1 = true_improvement_mc(spec, pa, pb, 5_000, seed=1)
    _, se2 = true_improvement_mc(spec, pa, pb, 10_000, seed=2)
    _, se4 = true_improvement_mc(spec, pa, pb, 20_000, seed=3)
    assert se2 / se1 == pytest.approx(1 / math.sqrt(2), rel=0.2)
    assert se4 / se1 == pytest.approx(0.5, rel=0.2)


def test_epsilon_pair_examples():
    pa, pb, env = epsilon_pair(80, 0.05)
    assert env.horizon == 80
    assert pb.probs[0] ** 80 == pytest.approx(0.0165, abs=5e-5)
    data = env.simulate(pa, pb, 50, 50, seed=0)
    assert data.n_steps == 100 * 80
    view = build_counterfactual_view(data, pa, pb)
    last = data.offsets[1:] - 1
    a_last = last[~data.is_b]
    assert np.allclose(view.weight[a_last], 0.95**80, rtol=1e-12)


def test_epsilon_pair_distance_vanishes():
    ds = [policy_distance(epsilon_pair(5, e)[0].probs, epsilon_pair(5, e)[1].probs) for e in (0.1, 0.01, 1e-4)]
    assert ds[0] > ds[1] > ds[2] and ds[2] < 1e-3


def test_epsilon_pair_all_miss_probability():
    pa, pb, env = epsilon_pair(6, 0.2)
    data = env.simulate(pa, pb, 0, 100_000, seed=3)
    hit = data.actions.reshape(-1, 6).any(axis=1)
    assert np.mean(~hit) == pytest.approx(0.8**6, abs=4 * math.sqrt(0.8**6 * (1 - 0.8**6) / 1e5))


def test_epsilon_pair_true_improvement():
    pa, pb, env = epsilon_pair(20, 0.05)
    assert env.true_improvement(pa, pb) == pytest.approx(-0.8 * (1 - 0.95**20))


@pytest.mark.parametrize("f", [FStar(1.0), H1()], ids=lambda f: f.name)
def test_exact_variance_oracle_matches_simulation(f):
    spec = BanditSpec([0.1, 0.5, 0.2], [0.5, 0.3, 0.2], [0.2, 0.3, 0.5])
    ests = [f_estimate(simulate_bandit(spec, 50, 50, seed=s), spec.policy_A, spec.policy_B, f).point_estimate
            for s in range(3000)]
    exact = bandit_estimator_variance(spec, f, 50, 50)
    # chi-square relative sd for 3000 draws is about sqrt(2/3000) = 2.6%
    assert np.var(ests, ddof=1) == pytest.approx(exact, rel=0.1)
