import math

import numpy as np
import pytest

from twoscale_ldp.errors import ReducibleGeneratorError, UnsupportedError
from twoscale_ldp.fastgen import (ExactChain, FastGenerator, GridDiscretization, GridSpec,
                                  LyapunovSpec, boundary_occupancy, build_chain_generator,
                                  check_lyapunov, check_reversibility, communicating_blocks,
                                  discretize_generator, fast_generator, stationary_distribution)
from twoscale_ldp.model import CoefficientSet, ModelSpec, PolyCoefficient, potential
from twoscale_ldp.scenarios import BnsParams, GeneParams, bns_model, gene_model

GRID = GridSpec(0.0, 40.0, 600)


def test_generator_validation():
    with pytest.raises(ValueError):
        FastGenerator([0.0, 1.0], [[-1.0, 1.0], [1.0, -2.0]], ExactChain())
    with pytest.raises(ValueError):
        FastGenerator([0.0, 1.0], [[1.0, -1.0], [1.0, -1.0]], ExactChain())
    with pytest.raises(ValueError):
        GridSpec(0.0, 1.0, 2)


def test_chain_generator_gene():
    G = fast_generator(gene_model(GeneParams(kappa1=2.0, kappa_m1=3.0)), 1.5, 0.7)
    assert isinstance(G.kind, ExactChain)
    assert np.allclose(G.Q, [[-3.0, 3.0], [4.5, -4.5]])
    pi = stationary_distribution(G)
    assert np.allclose(pi, [0.6, 0.4], atol=1e-14)
    assert check_reversibility(G, pi).is_reversible
    assert boundary_occupancy(G, pi) == 0.0


def test_reducible_chain_is_rejected():
    G = build_chain_generator(lambda x, a, b: 0.0, (0.0, 1.0), 1.0)
    assert len(communicating_blocks(G)) == 2
    with pytest.raises(ReducibleGeneratorError):
        stationary_distribution(G)


@pytest.mark.parametrize("p", [0.0, 0.5, 1.0])
def test_bns_grid_generator_rows_and_mean(p):
    m = bns_model(BnsParams())
    G = discretize_generator(m, 0.0, p, GRID)
    assert isinstance(G.kind, GridDiscretization)
    assert not G.kind.artificial_lower and G.kind.artificial_upper
    assert np.max(np.abs(G.Q.sum(axis=1))) < 1e-10
    pi = stationary_distribution(G)
    resid = np.max(np.abs(pi @ G.Q)) / np.max(np.abs(G.Q))
    assert resid < 1e-10
    # stationary law is Gamma(a, b) with mean a/b = 1
    assert float(pi @ G.states) == pytest.approx(1.0, abs=0.02)
    assert boundary_occupancy(G, pi) < 1e-8


def test_ou_grid_is_reversible_and_gaussian():
    c = CoefficientSet(b1=PolyCoefficient(((0, 1, -1.0),)), sigma1=PolyCoefficient(((0, 0, 1.0),)))
    m = ModelSpec(c, 0.0, 0.0)
    G = discretize_generator(m, 0.0, 0.0, GridSpec(-6.0, 6.0, 241))
    pi = stationary_distribution(G)
    assert check_reversibility(G, pi, rel_tol=1e-8).is_reversible
    # N(0, 1/2)
    assert float(pi @ G.states ** 2) == pytest.approx(0.5, abs=0.02)


def test_chain_model_rejects_grid_route():
    with pytest.raises(UnsupportedError):
        discretize_generator(gene_model(GeneParams()), 1.0, 0.0, GRID)


def test_lyapunov_check_gamma_ou():
    # e^{-zeta} L e^{zeta} = -c y + a ln(b/(b - c)) for zeta = c y, so the
    # sublevel set is bounded iff c beats p^2/2 + 1 (the |V| and sigma^2 slopes)
    m = bns_model(BnsParams(b=6.0))
    G = discretize_generator(m, 0.0, 0.5, GridSpec(0.0, 15.0, 600))
    V = potential(m, 0.0, 0.5)(G.states)
    good = check_lyapunov(G, LyapunovSpec(lambda y: 2.0 * np.asarray(y)), 1.0, V, 0 * V,
                          G.states, level=5.0)
    assert good.bounded
    assert good.sublevel_states.max() < 10.0
    weak = check_lyapunov(G, LyapunovSpec(lambda y: 0.5 * np.asarray(y)), 1.0, V, 0 * V,
                          G.states, level=5.0)
    assert not weak.bounded
    with pytest.raises(ValueError):
        check_lyapunov(G, LyapunovSpec(lambda y: 2.0 * np.asarray(y)), 0.0, V, 0 * V,
                       G.states, level=5.0)


def test_warning_on_heavy_edge_mass():
    # a window far too narrow for the stationary law keeps mass on the edge
    m = bns_model(BnsParams())
    G = discretize_generator(m, 0.0, 0.0, GridSpec(0.0, 0.5, 51))
    pi = stationary_distribution(G)
    assert boundary_occupancy(G, pi) > 1e-3
    assert math.isfinite(pi.sum())
