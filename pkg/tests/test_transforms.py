from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from overlap_ab.transforms import (
    DEFAULT_GRID,
    ConstantMinusOne,
    CustomTransform,
    FStar,
    FStarRobust,
    H1,
    HPlus,
    NoiseModel,
    TabulatedTransform,
    check_conditions,
    convex_combine,
    eval_noise,
    eval_transform,
    parse_transform_id,
    reverse_transform,
)

N_RS = [0.25, 0.5, 1.0, 2.0, 4.0]
NOISES = ["d1", "d2", "d3"]


def test_fstar_examples():
    assert eval_transform(FStar(1), 3.0) == pytest.approx(0.5)
    assert eval_transform(H1(), 0.5) == pytest.approx(-0.5)
    assert eval_transform(H1(), 3.0) == 1.0


@pytest.mark.parametrize("n_r", N_RS)
def test_fstar_identities(n_r):
    f = FStar(n_r)
    assert f(0.0) == -1.0
    assert f(1.0) == 0.0
    assert f(math.inf) == pytest.approx(1 / n_r)
    assert f(1e12) == pytest.approx(1 / n_r, rel=1e-9)


@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 5.0, 1e6])
def test_robust_constant_noise_curve(x):
    f = FStarRobust(1.0, 1.0, "d1")
    assert f.single_step(x) == pytest.approx(-1.0 / (2 * x + 1))
    assert f(x, 1.0) == pytest.approx(-1.0 / (2 * x + 1))


def test_robust_constant_noise_at_one():
    assert FStarRobust(1.0, 1.0, "d1").single_step(1.0) == pytest.approx(-1 / 3)


@pytest.mark.parametrize("n_r", N_RS)
@pytest.mark.parametrize("noise", NOISES)
def test_robust_lambda_zero_is_fstar(n_r, noise):
    rob, ref = FStarRobust(n_r, 0.0, noise), FStar(n_r)
    grid = DEFAULT_GRID
    d = np.full(grid.shape, 0.7)
    assert np.allclose(rob.evaluate(grid, d), ref.evaluate(grid), atol=1e-12, rtol=0)


def test_robust_huge_gamma_is_minus_one():
    f = FStarRobust(1.0, 1e9, "d1")
    x = DEFAULT_GRID[DEFAULT_GRID >= 1e-3]
    assert np.all(np.abs(f.evaluate(x, np.ones_like(x)) + 1.0) <= 1e-6)


def test_robust_infinite_noise_maps_to_minus_one():
    f = FStarRobust(1.0, 0.5, "d2")
    assert f(math.inf, math.inf) == -1.0
    assert f.single_step(math.inf) == -1.0


def test_robust_needs_noise():
    with pytest.raises(ValueError):
        FStarRobust(1.0, 0.5, "d3")(2.0)


def test_unabsorbed_scale():
    f = FStarRobust(1.0, 0.5, "d1", absorbed=False, horizon=4, n_A=10)
    assert f.scale == 20.0
    assert f(1.0, 1.0) == pytest.approx(-20 / 22)
    with pytest.raises(ValueError):
        FStarRobust(1.0, 0.5, "d1", absorbed=False)


@pytest.mark.parametrize(
    "f, expected",
    [
        (ConstantMinusOne(), (True, False, True)),
        (H1(), (True, True, True)),
        (HPlus(), (True, False, True)),
        (FStar(1.0), (True, True, True)),
        (FStar(4.0 / 3.0), (True, True, False)),
    ],
)
def test_check_conditions(f, expected):
    assert check_conditions(f) == expected
    assert f.flags == expected


@pytest.mark.parametrize("n_r", [0.25, 0.5])
def test_fstar_small_ratio_violates_c3(n_r):
    # the limit 1/n_r exceeds the upper bound 1
    assert check_conditions(FStar(n_r))[2] is False


@pytest.mark.parametrize("n_r", [2.0, 4.0])
def test_fstar_large_ratio_c3_fails_near_zero(n_r):
    # slope n_r + 1 at the origin exceeds the 2x - 1 edge
    f = FStar(n_r)
    assert f(0.1) > 2 * 0.1 - 1
    assert check_conditions(f)[2] is False


@pytest.mark.parametrize("noise", NOISES)
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_robust_stays_in_c3_region(noise, lam):
    assert check_conditions(FStarRobust(1.0, lam, noise))[2]


@pytest.mark.parametrize(
    "f",
    [ConstantMinusOne(), HPlus(), H1(), *[FStar(n) for n in N_RS],
     *[FStarRobust(1.0, 0.5, n) for n in NOISES]],
    ids=lambda f: f.name,
)
def test_boundedness(f):
    vals = f.single_step(DEFAULT_GRID)
    assert np.all(np.isfinite(vals))
    assert np.max(np.abs(vals)) <= f.bound + 1e-12
    assert abs(f.single_step(1e12) - f.single_step(math.inf)) <= 1e-6 * max(1.0, f.bound)


@pytest.mark.parametrize(
    "kind, x, expected",
    [("d1", 7.0, 1.0), ("d2", 0.0, 1.0), ("d2", 3.0, 2.0), ("d3", 1.0, 0.0),
     ("d3", math.e**3, 1.0), ("d3", 0.0, 1.0), ("d3", math.inf, 1.0), ("d2", math.inf, math.inf)],
)
def test_noise_models(kind, x, expected):
    assert eval_noise(NoiseModel.parse(kind), x) == pytest.approx(expected)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e9))
def test_noise_nonnegative(x):
    for kind in NOISES:
        assert NoiseModel.parse(kind)(x) >= 0
    assert NoiseModel.parse("d3")(x) <= 1


@pytest.mark.parametrize(
    "f_prime, expected",
    [
        (CustomTransform(lambda x: np.zeros_like(x), limit=0.0, name="zero"), lambda x: x - 1),
        (ConstantMinusOne(), lambda x: 2 * x - 1),
        (FStar(1.0), lambda x: (2 * x + 1) * (x - 1) / (x + 1)),
    ],
)
@pytest.mark.parametrize("x", [0.0, 0.2, 1.0, 3.0, 50.0])
def test_reverse_transform_examples(f_prime, expected, x):
    assert reverse_transform(f_prime)(x) == pytest.approx(expected(x), abs=1e-12)


def test_reverse_of_fstar_vanishes_at_one():
    assert reverse_transform(FStar(1.0))(1.0) == 0.0


def test_reverse_unbounded_unless_fprime_zero_is_one():
    assert reverse_transform(FStar(1.0)).bound == math.inf
    assert reverse_transform(FStar(1.0))(math.inf) == math.inf


def test_reverse_correction_limit_at_zero():
    z = reverse_transform(FStar(1.0))
    assert z.correction(0.0) == pytest.approx(-1.0)
    assert z.correction(np.array([0.0, 1.0]))[1] == pytest.approx(0.0)


def test_convex_combination_examples():
    h = ConstantMinusOne()
    for lam in (0.0, 0.3, 1.0):
        assert np.all(convex_combine(h, h, lam).evaluate(DEFAULT_GRID) == -1.0)
    f, g = FStar(1.0), H1()
    assert np.allclose(convex_combine(f, g, 1.0).evaluate(DEFAULT_GRID), f.evaluate(DEFAULT_GRID))
    assert convex_combine(ConstantMinusOne(), H1(), 0.5)(3.0) == 0.0


@pytest.mark.parametrize("lam", [-0.1, 1.5])
def test_convex_combination_rejects_lambda(lam):
    with pytest.raises(ValueError):
        convex_combine(H1(), H1(), lam)


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1))
def test_correction_matches_definition(wbar, lam):
    f = convex_combine(FStar(1.0), H1(), lam)
    c = float(f.correction(wbar))
    if wbar == 0:
        assert c == 1.0
    else:
        assert c == pytest.approx(1.0 - wbar * (1.0 + f(1.0 / wbar)), rel=1e-9, abs=1e-9)


def test_tabulated_transform():
    f = TabulatedTransform([0.0, 1.0, 2.0], [-1.0, 0.0, 0.5])
    assert f(0.5) == -0.5
    assert f(100.0) == 0.5 and f(math.inf) == 0.5
    assert f.flags[:2] == (True, True)
    with pytest.raises(ValueError):
        TabulatedTransform([1.0, 0.5], [0.0, 0.0])


def test_check_conditions_rejects_bad_grid():
    with pytest.raises(ValueError):
        check_conditions(H1(), np.linspace(0.5, 10, 20))


def test_negative_weight_rejected():
    with pytest.raises(ValueError):
        H1()(-0.1)


@pytest.mark.parametrize(
    "ident, cls",
    [("diff", ConstantMinusOne), ("hplus", HPlus), ("h1", H1), ("fstar", FStar),
     ("fstar:2", FStar), ("fstar_robust:d3:0.5", FStarRobust)],
)
def test_parse_transform_id(ident, cls):
    f = parse_transform_id(ident, 1.5)
    assert isinstance(f, cls)


def test_parse_transform_id_details():
    assert parse_transform_id("fstar", 1.5).n_r == 1.5
    assert parse_transform_id("fstar:2", 1.5).n_r == 2.0
    rob = parse_transform_id("fstar_robust:log:0.25", 1.0)
    assert rob.noise == NoiseModel.parse("d3") and rob.lambda_eff == 0.25
    with pytest.raises(ValueError):
        parse_transform_id("bogus", 1.0)
