from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlap_ab.core import SoftmaxLinearPolicy, TabularPolicy, policy_from_dict
from overlap_ab.errors import InsufficientDataError, SupportError
from overlap_ab.estimators import f_estimate
from overlap_ab.propensity import (
    FittedPolicy,
    PerturbationSpec,
    build_counterfactual_view,
    fit_arm,
    fit_softmax_mle,
    perturb_uniform_mix,
)
from overlap_ab.core import prefix_weight
from overlap_ab.simulators import BoredomSpec, boredom_policy, simulate_boredom_ab
from overlap_ab.transforms import FStar, NoiseModel


def _softmax_data(n, seed, d=3, k=4):
    rng = np.random.default_rng(seed)
    W = np.random.default_rng(99).normal(scale=1.5, size=(k, d + 1))
    pol = SoftmaxLinearPolicy(W)
    X = rng.normal(size=(n, d))
    a = pol.sample_many(X, rng.random(n))
    return pol, X, a


def test_fit_recovers_generating_policy():
    pol, X, a = _softmax_data(100_000, 0)
    fit = fit_softmax_mle(X, a, 4, reg=1e-4)
    Xh = np.random.default_rng(1).normal(size=(5_000, 3))
    err = np.abs(fit.action_probabilities(Xh) - pol.action_probabilities(Xh)).mean()
    assert err <= 0.02
    assert fit.diagnostics.converged
    assert fit.diagnostics.n_samples == 100_000


def test_fit_single_action_degenerate():
    X = np.random.default_rng(0).random((200, 2))
    fit = fit_softmax_mle(X, np.zeros(200, dtype=int), 3, reg=1e-2)
    probs = fit.action_probabilities(X)
    assert np.all(np.isfinite(probs))
    assert probs[:, 0].min() >= 0.95


def test_fit_zero_iterations_is_uniform():
    pol, X, a = _softmax_data(500, 2)
    fit = fit_softmax_mle(X, a, 4, max_iter=0)
    assert np.allclose(fit.action_probabilities(X), 0.25)
    assert fit.diagnostics.iterations == 0


def test_fit_errors():
    with pytest.raises(InsufficientDataError):
        fit_softmax_mle(np.zeros((0, 2)), np.zeros(0, dtype=int), 2)
    with pytest.raises(ValueError):
        fit_softmax_mle(np.array([[np.nan, 0.0]]), np.array([0]), 2)
    with pytest.raises(ValueError):
        fit_softmax_mle(np.zeros((2, 1)), np.array([0, 5]), 2)
    with pytest.raises(ValueError):
        fit_softmax_mle(np.zeros((2, 1)), np.array([0, 1]), 2, reg=-1.0)


def test_fit_invariant_to_duplication():
    _, X, a = _softmax_data(2_000, 3)
    one = fit_softmax_mle(X, a, 4, reg=1e-3, tol=1e-9)
    two = fit_softmax_mle(np.vstack([X, X]), np.r_[a, a], 4, reg=1e-3, tol=1e-9)
    assert np.allclose(one.weights, two.weights, atol=1e-4)


def test_fitted_policy_json_round_trip(tmp_path):
    _, X, a = _softmax_data(1_000, 4)
    fit = fit_softmax_mle(X, a, 4)
    obj = json.loads(json.dumps(fit.to_dict()))
    assert set(obj) == {"weights", "actions", "dim", "diagnostics"}
    back = FittedPolicy.from_dict(obj)
    assert np.array_equal(back.weights, fit.weights)
    assert np.allclose(policy_from_dict(obj).action_probabilities(X[:10]), fit.action_probabilities(X[:10]))


def test_fit_arm_uses_one_arm_only(boredom_case):
    data, _, _ = boredom_case
    fit = fit_arm(data, "B", 4)
    assert fit.diagnostics.n_samples == data.arm("B").n_steps


@pytest.mark.parametrize("sigma", [0.0, 0.3, 1.0])
def test_perturbation_examples(sigma):
    base = TabularPolicy([0.9] + [0.1 / 9] * 9)
    mixed = perturb_uniform_mix(base, PerturbationSpec(sigma))
    p = mixed.action_probabilities(np.zeros((1, 0)))[0]
    assert np.allclose(p, (1 - sigma) * base.probs + sigma / 10, atol=1e-15)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    if sigma == 0.0:
        assert np.array_equal(p, base.probs)
    if sigma == 1.0:
        assert np.allclose(p, 0.1)


def test_perturbation_half():
    base = TabularPolicy([0.9] + [0.1 / 9] * 9)
    assert perturb_uniform_mix(base, 0.5).propensities(np.zeros((1, 0)), [0])[0] == pytest.approx(0.5)


@pytest.mark.parametrize("sigma", [-0.1, 1.1])
def test_perturbation_range(sigma):
    with pytest.raises(ValueError):
        PerturbationSpec(sigma)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 1000))
def test_perturbation_affine(s1, s2, seed):
    base = TabularPolicy(np.random.default_rng(seed).dirichlet(np.ones(5)))
    mid = 0.5 * (s1 + s2)
    p = lambda s: perturb_uniform_mix(base, s).action_probabilities(np.zeros((1, 0)))[0]
    assert np.allclose(p(mid), 0.5 * (p(s1) + p(s2)), atol=1e-12)
    assert np.all(p(s1) >= 0) and p(s1).sum() == pytest.approx(1.0, abs=1e-12)


def test_view_weights_match_prefix_weight(boredom_case):
    data, pi_A, pi_B = boredom_case
    view = build_counterfactual_view(data, pi_A, pi_B)
    k = 0
    for tr in data:
        for t in range(1, len(tr) + 1):
            if tr.arm.value == "B":
                expect = prefix_weight(pi_A, pi_B, tr, t)
            else:
                expect = prefix_weight(pi_B, pi_A, tr, t)
            assert view.weight[k] == pytest.approx(expect, rel=1e-12)
            k += 1


def test_view_identical_models(boredom_case):
    data, pi_A, _ = boredom_case
    view = build_counterfactual_view(data, pi_A, pi_A, NoiseModel.parse("d3"))
    assert np.all(view.weight == 1.0)
    assert np.all(view.cum_noise == 0.0)


def test_view_cumulative_noise_nondecreasing(boredom_case):
    data, pi_A, pi_B = boredom_case
    view = build_counterfactual_view(data, pi_A, pi_B, NoiseModel.parse("d2"))
    for lo, hi in zip(data.offsets[:-1], data.offsets[1:]):
        assert np.all(np.diff(view.cum_noise[lo:hi]) >= 0)


def test_view_support_violation_names_record():
    pi = TabularPolicy([1.0, 0.0])
    from overlap_ab.simulators import BanditSpec, simulate_bandit
    spec = BanditSpec([0.5, 0.5], [0.5, 0.5], [0.5, 0.5])
    data = simulate_bandit(spec, 30, 30, seed=0)
    with pytest.raises(SupportError, match="user"):
        build_counterfactual_view(data, pi, pi)


def test_fitted_propensities_converge_to_exact():
    spec = BoredomSpec.generate(d=3, seed=4)
    pi_A, pi_B = boredom_policy(spec, 6.0), boredom_policy(spec, 2.0)
    f = FStar(1.0)
    devs = []
    for n in (200, 20_000):
        d = []
        for rep in range(3):
            data = simulate_boredom_ab(spec, pi_A, pi_B, n, n, seed=rep)
            exact = f_estimate(data, pi_A, pi_B, f).point_estimate
            fa, fb = fit_arm(data, "A", 3), fit_arm(data, "B", 3)
            d.append(abs(f_estimate(data, fa, fb, f).point_estimate - exact))
        devs.append(np.mean(d))
    assert devs[1] < devs[0]
