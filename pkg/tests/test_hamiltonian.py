import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoscale_ldp import hamiltonian as ham
from twoscale_ldp import scenarios as sc
from twoscale_ldp.errors import UnsupportedError
from twoscale_ldp.fastgen import (GridSpec, build_chain_generator, discretize_generator,
                                  stationary_distribution)
from twoscale_ldp.model import CoefficientSet, ModelSpec, PolyCoefficient, potential

G1 = sc.GeneParams()


def _gene(x, p, g=G1):
    m = sc.gene_model(g)
    G = build_chain_generator(m.chain_rates, m.fast_domain.states, x)
    return G, potential(m, x, p)(G.states)


def test_principal_eigenvalue_pinned_gene():
    G, V = _gene(1.0, 1.0)
    r = ham.principal_eigenvalue(G, V)
    assert r.lam == pytest.approx(1.0430806, abs=1e-6)
    assert np.all(r.eigenfunction > 0)
    assert r.residual < 1e-10


@given(st.floats(0.2, 5.0), st.floats(-1.5, 1.5))
def test_eigen_routes_agree(x, p):
    G, V = _gene(x, p)
    lam = ham.principal_eigenvalue(G, V).lam
    pi = stationary_distribution(G)
    assert ham.rayleigh_ritz(G, pi, V) == pytest.approx(lam, abs=1e-10)
    assert ham.dv_sup(G, V) == pytest.approx(lam, abs=1e-6)
    assert lam == pytest.approx(sc.gene_hamiltonian_consistent(x, p, G1), abs=1e-10)


def test_shift_invert_matches_power_on_grid():
    m = sc.bns_model(sc.BnsParams())
    G = discretize_generator(m, 0.0, 0.8, GridSpec(0.0, 30.0, 150))
    V = potential(m, 0.0, 0.8)(G.states)
    a = ham.principal_eigenvalue(G, V, method="power").lam
    b = ham.principal_eigenvalue(G, V, method="shift-invert").lam
    assert a == pytest.approx(b, abs=1e-9)


def test_dv_rate_two_state_closed_form():
    G, _ = _gene(2.0, 0.0)
    mu = np.array([0.3, 0.7])
    q01 = q10 = 2.0
    expected = (math.sqrt(mu[0] * q01) - math.sqrt(mu[1] * q10)) ** 2
    assert ham.dv_rate_J(G, mu) == pytest.approx(expected, abs=1e-10)
    assert ham.dv_rate_J(G, stationary_distribution(G)) == pytest.approx(0.0, abs=1e-12)


def test_three_state_dv_sup():
    rates = lambda x, a, b: 1.0 if abs(a - b) == 1 else 0.0
    G = build_chain_generator(rates, (0.0, 1.0, 2.0), 0.0)
    V = np.array([0.2, -0.1, 0.5])
    lam = ham.principal_eigenvalue(G, V).lam
    assert ham.dv_sup(G, V, scan_n=81) == pytest.approx(lam, abs=1e-6)
    with pytest.raises(UnsupportedError):
        ham.dv_sup(build_chain_generator(rates, (0.0, 1.0, 2.0, 3.0), 0.0), np.zeros(4))


def test_rayleigh_ritz_rejects_nonreversible():
    rates = lambda x, a, b: 1.0 if (b - a) % 3 == 1 else 0.0  # cycle 0 -> 1 -> 2 -> 0
    G = build_chain_generator(rates, (0.0, 1.0, 2.0), 0.0)
    with pytest.raises(UnsupportedError):
        ham.rayleigh_ritz(G, np.full(3, 1 / 3), np.zeros(3))


def test_golden_max():
    x, f = ham.golden_max(lambda t: -(t - 0.3) ** 2, -1.0, 2.0)
    assert x == pytest.approx(0.3, abs=1e-6) and f == pytest.approx(0.0, abs=1e-12)


def test_handles_vanish_at_zero_and_respect_domain():
    h = ham.bns_handle(1.0, 1.0)
    assert ham.hamiltonian_eval(h, 3.0, 0.0) == 0.0
    assert ham.hamiltonian_eval(h, 0.0, 1.5) == math.inf
    many = ham.hamiltonian_eval_many(h, 0.0, np.array([-2.0, 0.0, 1.0]))
    assert many[0] == math.inf and many[1] == 0.0 and many[2] == pytest.approx(math.log(2))
    g = ham.gene_handle(G1)
    assert ham.hamiltonian_eval(g, 1.0, 1.0) == pytest.approx(1.0430806, abs=1e-6)
    with pytest.raises(ValueError):
        ham.gene_handle(G1, "nope")


def test_matrix_handle_gene_matches_closed_form():
    h = ham.matrix_handle(sc.gene_model(G1))
    assert ham.hamiltonian_eval(h, 2.0, -0.5) == pytest.approx(
        sc.gene_hamiltonian_consistent(2.0, -0.5, G1), abs=1e-10)


def test_matrix_handle_ou_diffusion():
    # slow sigma = 1, fast OU independent of p: H = p^2/2 exactly
    c = CoefficientSet(sigma=PolyCoefficient(((0, 0, 1.0),)), b1=PolyCoefficient(((0, 1, -1.0),)),
                       sigma1=PolyCoefficient(((0, 0, 1.0),)))
    h = ham.matrix_handle(ModelSpec(c, 0.0, 0.0), GridSpec(-6.0, 6.0, 121))
    assert ham.hamiltonian_eval(h, 0.0, 0.8) == pytest.approx(0.32, abs=1e-10)


@given(st.floats(0.3, 4.0))
def test_convexity_both_scenarios(x):
    assert ham.convexity_check(ham.bns_handle(), x, np.linspace(-1.3, 1.3, 53)) >= -1e-8
    assert ham.convexity_check(ham.gene_handle(G1), x, np.linspace(-1.5, 1.5, 61)) >= -1e-8


def test_continuity_scan_finite():
    rep = ham.continuity_scan(ham.gene_handle(G1), (0.5, 2.0), (-1.0, 1.0), 0.05)
    assert math.isfinite(rep.modulus_x) and math.isfinite(rep.modulus_p)
    with pytest.raises(ValueError):
        ham.continuity_scan(ham.bns_handle(), (0.0, 1.0), (-2.0, 2.0), 0.1)


def test_feynman_kac_gene_short():
    m = sc.gene_model(G1)
    est = ham.feynman_kac_estimate(m, 1.0, 1.0, T=10.0, dt=2e-3, n_paths=2000, seed=5)
    assert abs(est.lambda_hat - 1.0430806) < max(0.05, 4 * est.stderr)
    again = ham.feynman_kac_estimate(m, 1.0, 1.0, T=10.0, dt=2e-3, n_paths=2000, seed=5)
    assert again.lambda_hat == est.lambda_hat


def test_feynman_kac_plain_agrees_for_short_horizon():
    m = sc.gene_model(G1)
    a = ham.feynman_kac_estimate(m, 1.0, 0.5, T=2.0, dt=2e-3, n_paths=4000, seed=1, method="plain")
    exact = sc.gene_hamiltonian_consistent(1.0, 0.5, G1)
    # finite-T bias of order 1/T plus noise
    assert abs(a.lambda_hat - exact) < 0.1
    with pytest.raises(ValueError):
        ham.feynman_kac_estimate(m, 1.0, 0.5, 1.0, 1e-2, 10, 0, method="bogus")
