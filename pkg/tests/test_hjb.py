import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoscale_ldp import hamiltonian as ham
from twoscale_ldp import hjb
from twoscale_ldp import scenarios as sc
from twoscale_ldp.hamiltonian import HamiltonianHandle

H = ham.bns_handle(1.0, 1.0)
QUAD = HamiltonianHandle(ham.ClosedForm("quad"), lambda x, p: 0.5 * p * p, x_independent=True,
                         vector_eval=lambda x, p: 0.5 * p * p)


def _bump(x):
    return np.exp(-x ** 2)


def test_grid_function_validation_and_interp():
    g = hjb.GridFunction.from_function(lambda x: 2 * x, 0.0, 1.0, 11)
    assert g.at(0.35) == pytest.approx(0.7)
    assert g.spacing == pytest.approx(0.1)
    with pytest.raises(ValueError):
        g.at(2.0)
    with pytest.raises(ValueError):
        hjb.GridFunction(0.0, 1.0, 3, [0.0, math.nan, 1.0])
    with pytest.raises(ValueError):
        hjb.SchemeConfig(cfl=0.9)


def test_time_zero_returns_datum():
    h0 = hjb.GridFunction.from_function(_bump, -2, 2, 41)
    assert np.array_equal(hjb.solve_cauchy(H, h0, 0.0).values, h0.values)


def test_linear_datum_is_exact():
    # u = beta x + t H(beta) solves u_t = H(u_x) exactly; the scheme preserves it
    beta = 0.4
    h0 = hjb.GridFunction.from_function(lambda x: beta * x, -2, 2, 81)
    u = hjb.solve_cauchy(H, h0, 0.5)
    assert np.allclose(u.values, h0.values + 0.5 * math.log(1 / (1 - beta ** 2 / 2)), atol=1e-12)


def test_quadratic_hamiltonian_against_hopf_lax():
    h0 = hjb.GridFunction.from_function(_bump, -4, 4, 801)
    u = hjb.solve_cauchy(QUAD, h0, 0.5)
    ref = hjb.hopf_lax(h0, lambda q: 0.5 * q * q, 0.5)
    assert np.max(np.abs(u.values - ref.values)[100:-100]) < 1e-2
    assert u.info["clamps"] == 0


def test_hopf_lax_linear_datum():
    # sup_x {beta x - t Lbar((x - x0)/t)} = beta x0 + t H(beta)
    h0 = hjb.GridFunction.from_function(lambda x: 0.3 * x, -3, 3, 601)
    ref = hjb.hopf_lax(h0, lambda q: 0.5 * q * q, 1.0)
    assert ref.at(0.0) == pytest.approx(0.045, abs=1e-6)


def test_cfl_violation_and_cap_edge_rejected():
    h0 = hjb.GridFunction.from_function(_bump, -2, 2, 401)
    with pytest.raises(ValueError):
        hjb.solve_cauchy(H, h0, 0.1, hjb.SchemeConfig(dt=0.1))
    with pytest.raises(ValueError):
        hjb.solve_cauchy(H, h0, 0.1, hjb.SchemeConfig(slope_cap=2.0))
    with pytest.raises(ValueError):
        hjb.solve_cauchy(H, h0, 0.1, hjb.SchemeConfig(slope_cap=0.1))


def test_dt_must_divide_horizon():
    h0 = hjb.GridFunction.from_function(_bump, -2, 2, 41)
    with pytest.raises(ValueError):
        hjb.solve_cauchy(H, h0, 0.1, hjb.SchemeConfig(dt=0.03))


def test_automatic_dt_meets_cfl():
    h0 = hjb.GridFunction.from_function(_bump, -4, 4, 801)
    info = hjb.solve_cauchy(H, h0, 0.5).info
    assert info["dt"] * info["alpha"] / 0.01 <= 0.5 + 1e-12
    assert info["steps"] * info["dt"] == pytest.approx(0.5)


@given(st.floats(0.0, 0.5), st.floats(-1.0, 1.0))
def test_periodic_scheme_comparison(shift, phase):
    # ordered data stay ordered under the monotone periodic scheme
    n = 200
    x = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    lo = 0.3 * np.sin(x + phase)
    hi = lo + shift + 0.1 * (1 + np.cos(3 * x)) * (shift > 0)
    cfg = hjb.SchemeConfig(slope_cap=1.2, boundary=hjb.Periodic())
    a = hjb.solve_cauchy(H, hjb.GridFunction(0.0, x[-1], n, lo), 0.2, cfg)
    b = hjb.solve_cauchy(H, hjb.GridFunction(0.0, x[-1], n, hi), 0.2, cfg)
    assert np.all(b.values >= a.values - 1e-12)


def test_lipschitz_and_alpha():
    h0 = hjb.GridFunction.from_function(lambda x: 0.5 * x, 0, 1, 11)
    assert hjb.lipschitz(h0) == pytest.approx(0.5)
    # |H'| = p / (1 - p^2/2) is largest at the cap
    assert hjb.estimate_alpha(H, h0.x, 0.5) == pytest.approx(0.5 / (1 - 0.125), rel=1e-4)


def test_gene_hamiltonian_is_x_dependent_and_solvable():
    h = ham.gene_handle(sc.GeneParams())
    h0 = hjb.GridFunction.from_function(lambda x: 0.2 * np.exp(-(x - 2) ** 2), 0.5, 3.5, 151)
    u = hjb.solve_cauchy(h, h0, 0.2)
    assert np.all(np.isfinite(u.values)) and u.info["clamps"] == 0
