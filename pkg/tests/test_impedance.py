import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rwdta.impedance import (ChoiceParams, logit_and_virtual_cost, mnl_probabilities, scaled_logit_probabilities,
                             virtual_travel_cost)


def hp_exp_ratio(a, b):
    """exp(a) / (exp(a) + exp(b)) in 50-digit decimal arithmetic."""
    import decimal
    decimal.getcontext().prec = 50
    ea, eb = decimal.Decimal(a).exp(), decimal.Decimal(b).exp()
    return float(ea / (ea + eb))


def test_mnl_single():
    assert mnl_probabilities([42.0], -0.1) == [1.0]


def test_mnl_symmetric():
    assert mnl_probabilities([100.0, 100.0], -3.0) == [0.5, 0.5]


def test_mnl_two_routes_oracle():
    p = mnl_probabilities([100.0, 200.0], -0.05)
    want = hp_exp_ratio(-0.05 * 100, -0.05 * 200)
    assert p[0] == pytest.approx(want, abs=1e-12)
    assert p[0] == pytest.approx(0.9933, abs=1e-4)
    assert p[1] == pytest.approx(0.0067, abs=1e-4)


def test_mnl_errors():
    with pytest.raises(ValueError):
        mnl_probabilities([], -1.0)
    with pytest.raises(ValueError):
        mnl_probabilities([1.0], 0.5)


def test_mnl_huge_costs_do_not_overflow():
    p = mnl_probabilities([1e6, 1e6 + 1], -50.0)
    assert math.isclose(sum(p), 1.0, abs_tol=1e-12)


def test_scaled_symmetric():
    assert scaled_logit_probabilities([37.0, 37.0], 37.0, -5.0) == [0.5, 0.5]


def test_scaled_two_routes_oracle():
    p = scaled_logit_probabilities([100.0, 200.0], 100.0, -5.0)
    want = hp_exp_ratio(-5.0, -10.0)
    assert p[0] == pytest.approx(want, abs=1e-12)
    assert p[0] == pytest.approx(0.99331, abs=1e-5)
    assert p[1] == pytest.approx(0.00669, abs=1e-5)
    assert scaled_logit_probabilities([1000.0, 2000.0], 1000.0, -5.0) == pytest.approx(p, abs=1e-15)


def test_scaled_pi_must_be_positive():
    with pytest.raises(ValueError, match="pi"):
        scaled_logit_probabilities([1.0, 2.0], 0.0, -5.0)
    with pytest.raises(ValueError, match="pi"):
        virtual_travel_cost([1.0, 2.0], -1.0, -5.0)


def test_virtual_single_exact():
    assert virtual_travel_cost([123.456], 123.456, -5.0) == 123.456
    assert virtual_travel_cost([0.1 + 0.2], 1.0, -5.0) == 0.1 + 0.2


def test_virtual_two_identical():
    assert virtual_travel_cost([100.0, 100.0], 100.0, -5.0) == pytest.approx(100 - 20 * math.log(2), abs=1e-9)
    assert virtual_travel_cost([100.0, 100.0], 100.0, -5.0) == pytest.approx(86.137, abs=1e-3)


def test_virtual_two_routes_oracle():
    import decimal
    decimal.getcontext().prec = 50
    s = decimal.Decimal(-5).exp() + decimal.Decimal(-10).exp()
    want = float(decimal.Decimal(100) / decimal.Decimal(-5) * s.ln())
    assert virtual_travel_cost([100.0, 200.0], 100.0, -5.0) == pytest.approx(want, abs=1e-9)
    assert virtual_travel_cost([100.0, 200.0], 100.0, -5.0) == pytest.approx(99.866, abs=1e-3)


def test_virtual_limit_is_min():
    assert virtual_travel_cost([50.0, 80.0, 120.0], 50.0, -1e3) == pytest.approx(50.0, abs=0.1)


def test_choice_params_validation():
    ChoiceParams(-1.0, 0.0)
    with pytest.raises(ValueError, match="gamma"):
        ChoiceParams(0.0, 0.1)
    with pytest.raises(ValueError, match="beta"):
        ChoiceParams(-5.0, 1.0)
    with pytest.raises(ValueError, match="beta"):
        ChoiceParams(-5.0, -0.1)


def test_logit_and_virtual_cost_agree_with_parts():
    costs = [30.0, 45.0, 31.0]
    p, vc = logit_and_virtual_cost(costs, -5.0)
    assert p == pytest.approx(scaled_logit_probabilities(costs, 30.0, -5.0), abs=1e-15)
    assert vc == pytest.approx(virtual_travel_cost(costs, 30.0, -5.0), abs=1e-12)


cost_lists = st.lists(st.floats(1e-3, 1e6, allow_nan=False), min_size=1, max_size=64)
gammas = st.floats(-50.0, -0.01)


@given(cost_lists, gammas)
def test_probabilities_sum_to_one(costs, gamma):
    pi = min(costs)
    assert math.isclose(math.fsum(scaled_logit_probabilities(costs, pi, gamma)), 1.0, abs_tol=1e-12)
    assert math.isclose(math.fsum(mnl_probabilities(costs, gamma / 1e3)), 1.0, abs_tol=1e-12)


@given(cost_lists, gammas, st.floats(1e-3, 1e3))
def test_scale_invariance(costs, gamma, c):
    pi = min(costs)
    a = scaled_logit_probabilities(costs, pi, gamma)
    b = scaled_logit_probabilities([c * x for x in costs], c * pi, gamma)
    assert all(abs(x - y) <= 1e-12 for x, y in zip(a, b))


@given(cost_lists, gammas, st.floats(1e-3, 1e6))
def test_virtual_is_soft_minimum_and_monotone(costs, gamma, extra):
    pi = min(costs)
    v = virtual_travel_cost(costs, pi, gamma)
    assert v <= min(costs) * (1 + 1e-12)
    # one more alternative never makes the virtual link dearer (same pi)
    bigger = costs + [max(extra, pi)]
    assert virtual_travel_cost(bigger, pi, gamma) <= v + 1e-9 * max(1.0, abs(v))


@given(st.lists(st.floats(1.0, 1e4), min_size=2, max_size=20), st.floats(-20.0, -0.1))
def test_probability_virtual_cost_identity(costs, gamma):
    pi = min(costs)
    p = scaled_logit_probabilities(costs, pi, gamma)
    v = virtual_travel_cost(costs, pi, gamma)
    for pk, c in zip(p, costs):
        assert pk == pytest.approx(math.exp(gamma * (c - v) / pi), rel=1e-9, abs=1e-300)


@pytest.mark.parametrize("n", range(1, 17))
@pytest.mark.parametrize("gamma", [-0.5, -5.0, -50.0])
def test_identical_parallel_links_closed_form(n, gamma):
    theta = 73.0
    got = virtual_travel_cost([theta] * n, theta, gamma)
    assert got == pytest.approx(theta + (theta / gamma) * math.log(n), abs=1e-9)
