import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoscale_ldp import hamiltonian as ham
from twoscale_ldp import rate
from twoscale_ldp import scenarios as sc

H = ham.bns_handle(1.0, 1.0)


def _Hp(p):
    return ham.hamiltonian_eval(H, 0.0, p)


def test_legendre_of_quadratic():
    # (p^2/2)* = q^2/2
    for q in (-2.0, 0.0, 0.3, 4.0):
        assert rate.legendre(lambda p: 0.5 * p * p, (-math.inf, math.inf), q) == pytest.approx(
            0.5 * q * q, abs=1e-12)


def test_legendre_unbounded_is_inf():
    # a linear H has an infinite transform away from its slope
    assert rate.legendre(lambda p: p, (-math.inf, math.inf), 2.0) == math.inf


def test_legendre_zero_exact():
    assert rate.legendre(_Hp, H.p_domain, 0.0) == 0.0


@given(st.floats(-3.0, 3.0))
def test_legendre_matches_closed_form(q):
    assert rate.legendre(_Hp, H.p_domain, q) == pytest.approx(sc.bns_rate(q, 1.0, 1.0), abs=1e-8)


@given(st.floats(-1.4, 1.4), st.floats(-3.0, 3.0))
def test_fenchel_inequality(p, q):
    assert _Hp(p) + sc.bns_rate(q, 1.0, 1.0) >= p * q - 1e-10


@given(st.floats(-2.0, 2.0), st.floats(-2.0, 2.0), st.floats(0.0, 1.0))
def test_legendre_is_convex(q1, q2, lam):
    L = lambda q: rate.legendre(_Hp, H.p_domain, q)
    mid = lam * q1 + (1 - lam) * q2
    assert L(mid) <= lam * L(q1) + (1 - lam) * L(q2) + 1e-8


def test_rate_xfree_orientation_and_scaling():
    # I(x) = t Lbar((x - x0)/t)
    assert rate.rate_xfree(H, 1.0, 2.0, 2.0) == pytest.approx(2.0 * sc.bns_rate(0.5, 1.0, 1.0))
    assert rate.rate_xfree(H, 0.3, 1.0, 0.3) == 0.0
    with pytest.raises(ValueError):
        rate.rate_xfree(ham.gene_handle(sc.GeneParams()), 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        rate.rate_xfree(H, 0.0, 0.0, 1.0)


def test_capped_linear():
    h = rate.capped_linear(2.0, 1.0, 0.5)
    assert np.allclose(h(np.array([0.0, 1.0, 1.1, 3.0])), [-0.5, 0.0, 0.2, 0.5])


def test_dual_estimate_small_family_is_lower_bound():
    est = rate.rate_dual_estimate(H, 0.5, 0.0, 1.0, family_size=15, dx=0.02)
    exact = rate.rate_xfree(H, 0.0, 1.0, 0.5)
    assert est.value <= exact + 1e-6
    assert est.value > 0.5 * exact
    assert est.clamps == 0 and est.n_members == 15


def test_rate_handle_kinds():
    f = rate.RateFunctionHandle(rate.XFree(H), 0.0, 1.0)
    assert f(0.25) == pytest.approx(sc.bns_rate(0.25, 1.0, 1.0))
    with pytest.raises(TypeError):
        rate.RateFunctionHandle(object(), 0.0, 1.0)(0.1)
