import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqrs.engine import simulate_rounds
from sqrs.fisher import (
    ZeroInformationError,
    crb_variance,
    fisher_matrix_information,
    measurement_information,
    observed_theta_information,
    p_k,
    total_information,
    unit_information,
)
from sqrs.protocol import ProtocolParams
from sqrs.qstate import Basis

prob = st.floats(0.0, 1.0)


def test_p_k_examples():
    assert p_k(2, ProtocolParams(3, 1, 0.0, 0.5)) == pytest.approx(2**-3)
    assert p_k(2, ProtocolParams(3, 1, 1.0, 0.5)) == 0.0
    assert p_k(1, ProtocolParams(2, 1, 0.5, 0.5)) == pytest.approx(0.375)
    with pytest.raises(ValueError):
        p_k(4, ProtocolParams(3, 1, 0.5, 0.5))


@given(st.integers(1, 6), prob, prob)
def test_round_outcome_space_is_complete(n, p_s, p_f):
    params = ProtocolParams(n, 1, p_s, p_f)
    entangled = sum(math.comb(n, m) * (p_k(m, params) - (p_s * params.p_measure if m == 1 else 0.0)) for m in range(1, n + 1))
    entangled += (1 - p_s) * p_f**n  # every Bob checks
    assert entangled == pytest.approx(1 - p_s)


@given(st.floats(0.05, 3.0), st.sampled_from(list(Basis)))
def test_measurement_information_is_one(x, basis):
    if abs(math.cos(x + basis.phase)) > 0.999:
        return
    assert measurement_information(x, basis) == pytest.approx(1.0, abs=1e-9)
    assert unit_information() == 1.0


def test_measurement_information_matches_finite_difference():
    x, h = 0.7, 1e-5
    def loglik_curvature(x):
        p = 0.5 * (1 + math.cos(x))
        def ll(t, s):
            q = 0.5 * (1 + math.cos(t))
            return math.log(q if s == 1 else 1 - q)
        return -sum(
            (p if s == 1 else 1 - p) * (ll(x + h, s) - 2 * ll(x, s) + ll(x - h, s)) / h**2 for s in (1, -1)
        )
    assert loglik_curvature(x) == pytest.approx(1.0, rel=1e-4)


def test_total_information_endpoints():
    for n in range(1, 7):
        assert total_information(ProtocolParams(n, 1, 1.0, 0.0)).total == pytest.approx(1 / n)
        assert total_information(ProtocolParams(n, 1, 0.0, 0.0)).total == pytest.approx(1.0)
        assert total_information(ProtocolParams(n, 1, 0.5, 1.0)).total == 0.0


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 5), prob, st.floats(0.0, 0.95))
def test_closed_form_matches_fisher_matrix(n, p_s, p_f):
    params = ProtocolParams(n, 1, p_s, p_f)
    closed = total_information(params)
    assert all(t >= 0 for t in (closed.separable_term, *closed.entangled_terms))
    assert closed.total == pytest.approx(fisher_matrix_information(params), rel=1e-9, abs=1e-12)


def test_crb_examples():
    assert crb_variance(ProtocolParams(3, 300, 1.0, 0.0), 300) == pytest.approx(0.01)
    assert crb_variance(ProtocolParams(2, 100, 0.0, 0.0), 100) == pytest.approx(0.01)
    p = ProtocolParams(2, 100, 0.3, 0.4)
    assert crb_variance(p, 200) == pytest.approx(crb_variance(p, 100) / 2)
    with pytest.raises(ZeroInformationError):
        crb_variance(ProtocolParams(2, 100, 0.3, 1.0), 100)


@pytest.mark.parametrize("n,p_s,p_f", [(1, 1.0, 0.3), (2, 0.5, 0.4), (3, 0.3, 0.2)])
def test_observed_information_matches_closed_form(n, p_s, p_f):
    rounds = 10_000
    phis = np.array([[0.4, 1.3, 2.2][:n]])
    batch = simulate_rounds(n, p_s, p_f, phis, rounds, None, np.random.default_rng(8))
    observed = observed_theta_information(batch.alice_counts()[0], phis[0], rounds)
    expected = total_information(ProtocolParams(n, rounds, p_s, p_f)).total
    assert observed == pytest.approx(expected, rel=0.10)
