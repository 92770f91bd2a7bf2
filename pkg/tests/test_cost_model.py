import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from agecast import (
    AgeCostModel,
    DegenerateCost,
    SystemParams,
    age_cost,
    avg_age_cost,
    binom_pmf,
    inverse_avg_age_cost,
    model_from_dict,
)
from agecast.cost_model import binom_pmf_vector
from oracles import exact_binom_pmf, explicit_expected_cost

LIN10 = AgeCostModel.linear(10)
QUAD1 = AgeCostModel.quadratic(1)


def test_age_cost_examples():
    assert age_cost(LIN10, 0) == 0
    assert age_cost(QUAD1, 3) == 9
    assert age_cost(LIN10, 7) == 70


def test_custom_table_extrapolates_last_slope():
    m = AgeCostModel.custom([0.0, 1.0, 3.0, 6.0])
    assert [age_cost(m, v) for v in range(7)] == [0, 1, 3, 6, 9, 12, 15]


@pytest.mark.parametrize(
    "table",
    [[0.0, 2.0, 3.0], [0.0, 1.0, 0.5], [-1.0, 0.0], [0.0, math.inf], []],
    ids=["concave", "decreasing", "negative", "infinite", "empty"],
)
def test_custom_table_rejected(table):
    with pytest.raises(ValueError):
        AgeCostModel.custom(table)


def test_negative_coefficient_rejected():
    with pytest.raises(ValueError):
        AgeCostModel.linear(-1.0)


def test_avg_age_cost_examples():
    assert avg_age_cost(LIN10, 0.2, 5) == pytest.approx(10.0, rel=1e-15)
    assert avg_age_cost(QUAD1, 0.5, 2) == pytest.approx(1.5, rel=1e-15)
    assert avg_age_cost(AgeCostModel.linear(0), 0.37, 1) == 0.0
    with pytest.raises(ValueError):
        avg_age_cost(LIN10, 0.2, 0)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5, 0.9])
@pytest.mark.parametrize("model", [LIN10, AgeCostModel.quadratic(2.5)], ids=["linear", "quadratic"])
def test_closed_forms_match_explicit_sum(model, p):
    for tau in range(1, 61):
        ref = explicit_expected_cost(lambda v: age_cost(model, v), p, tau)
        assert avg_age_cost(model, p, tau) == pytest.approx(ref, rel=1e-10)


@pytest.mark.parametrize("p", [0.05, 0.3, 0.9])
def test_custom_expectation_matches_explicit_sum(p):
    m = AgeCostModel.custom([0.0, 0.5, 2.0, 4.0, 7.5])
    for tau in range(1, 61):
        ref = explicit_expected_cost(lambda v: age_cost(m, v), p, tau)
        assert avg_age_cost(m, p, tau) == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_expected_is_vectorised():
    taus = np.arange(1, 40)
    m = AgeCostModel.custom([0.0, 1.0, 3.0])
    vec = m.expected(0.4, taus)
    assert np.allclose(vec, [avg_age_cost(m, 0.4, int(t)) for t in taus], rtol=1e-13)


@pytest.mark.parametrize(
    "model",
    [LIN10, AgeCostModel.quadratic(0.3), AgeCostModel.custom([0.0, 1.0, 3.0, 6.0]), AgeCostModel.custom([0.0, 0.0, 0.0, 2.0])],
    ids=["linear", "quadratic", "custom", "custom-flat-start"],
)
@pytest.mark.parametrize("p", [0.1, 0.6, 1.0])
def test_expected_cost_monotone_and_convex(model, p):
    c = model.expected(p, np.arange(1, 501))
    assert np.all(np.diff(c) >= -1e-12 * np.abs(c[1:]).max())
    assert np.all(np.diff(c, 2) >= -1e-12 * max(1.0, np.abs(c).max()))
    if model.kind != "custom":
        assert np.all(np.diff(c) > 0)


def test_inverse_examples():
    assert inverse_avg_age_cost(LIN10, 0.2, 10.0) == 5
    assert inverse_avg_age_cost(QUAD1, 0.5, 1.5) == 2
    for model in (LIN10, QUAD1, AgeCostModel.custom([0, 1, 3])):
        assert inverse_avg_age_cost(model, 0.3, 0.0) == 1


def test_inverse_of_zero_cost_is_degenerate():
    with pytest.raises(DegenerateCost):
        inverse_avg_age_cost(AgeCostModel.linear(0.0), 0.5, 1.0)


@pytest.mark.parametrize(
    "model", [LIN10, AgeCostModel.quadratic(0.7), AgeCostModel.custom([0.0, 1.0, 2.5])], ids=["linear", "quadratic", "custom"]
)
@pytest.mark.parametrize("p", [0.15, 0.5, 1.0])
def test_inverse_round_trip(model, p):
    for tau in range(1, 201):
        assert inverse_avg_age_cost(model, p, avg_age_cost(model, p, tau)) == tau


@given(
    kind=st.sampled_from(["linear", "quadratic"]),
    c_a=st.floats(0.01, 100.0),
    p=st.floats(0.01, 1.0),
    y=st.floats(0.0, 1e5),
)
def test_inverse_is_smallest_reaching_tau(kind, c_a, p, y):
    m = AgeCostModel(kind, c_a=c_a)
    tau = inverse_avg_age_cost(m, p, y)
    assert avg_age_cost(m, p, tau) >= y
    assert tau == 1 or avg_age_cost(m, p, tau - 1) < y


def test_binom_examples():
    assert binom_pmf(3, 0.5, 1) == 0.375
    assert binom_pmf(5, 0.0, 0) == 1.0
    assert binom_pmf(5, 1.0, 5) == 1.0
    with pytest.raises(ValueError):
        binom_pmf(3, 0.5, 4)
    with pytest.raises(ValueError):
        binom_pmf(3, 0.5, -1)


@pytest.mark.parametrize("n,q,k", [(100, 0.5, 50), (60, 0.12, 7), (2000, 0.3, 600), (2000, 0.01, 3)])
def test_binom_matches_exact_rational(n, q, k):
    ref = exact_binom_pmf(n, q, k)
    assert abs(binom_pmf(n, q, k) - float(ref)) <= 1e-12 * float(ref)


@pytest.mark.parametrize("n", [0, 1, 7, 50, 51, 300, 1000, 2000])
@pytest.mark.parametrize("q", [0.001, 0.12, 0.5, 0.97])
def test_binom_sums_to_one(n, q):
    assert abs(math.fsum(binom_pmf(n, q, k) for k in range(n + 1)) - 1.0) <= 1e-12
    assert abs(binom_pmf_vector(n, q).sum() - 1.0) <= 1e-12


def test_binom_large_n_no_underflow_at_mode():
    v = binom_pmf_vector(100_000, 0.3)
    assert np.isfinite(v).all() and v.max() > 0


def test_model_dict_round_trip():
    for m in (LIN10, QUAD1, AgeCostModel.custom([0, 1, 3])):
        assert model_from_dict(m.to_dict()) == m


def test_system_params_validation_and_homogeneity():
    p = SystemParams.uniform(3, 0.4, 0.2, 10.0, LIN10)
    assert p.homogeneous() and p.q == 0.2 and p.cost_model == LIN10
    het = p.replace(request_probs=(0.2, 0.3, 0.2))
    assert not het.homogeneous()
    with pytest.raises(ValueError):
        het.q
    for bad in (
        dict(request_probs=(0.2, 1.5, 0.2)),
        dict(update_prob=0.0),
        dict(fetch_cost=-1.0),
        dict(request_probs=(0.2, 0.3)),
    ):
        with pytest.raises(ValueError):
            p.replace(**bad)
