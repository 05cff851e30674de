import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoscale_ldp import mc
from twoscale_ldp import scenarios as sc
from twoscale_ldp.errors import NumericFailure
from twoscale_ldp.fastgen import LyapunovSpec
from twoscale_ldp.levy import FiniteAtoms
from twoscale_ldp.model import CoefficientSet, ModelSpec, PolyCoefficient
from twoscale_ldp.rng import block_slices, map_blocks, stream

BNS = sc.BnsParams()


def _bns(eps=0.1, n=20_000, seed=1, workers=1, t=1.0, y0=1.0, substeps=1):
    p = sc.BnsParams(y0=y0, t=t)
    return mc.simulate_bns(p, eps, mc.SimConfig(eps, t, eps / 20, n, seed, substeps, workers))


def test_streams_independent_of_worker_layout():
    a = stream(7, 1, 0).random(4)
    b = stream(7, 1, 1).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, stream(7, 1, 0).random(4))
    assert [s.stop - s.start for s in block_slices(10, 4)] == [4, 4, 2]
    assert map_blocks(lambda i: i * i, range(5), workers=3) == [0, 1, 4, 9, 16]


def test_simconfig_requires_resolved_fast_scale():
    with pytest.raises(ValueError):
        mc.SimConfig(0.1, 1.0, 0.02, 10)
    assert mc.SimConfig(0.1, 1.0, 0.005, 10).n_steps == 200


def test_bns_volatility_stays_nonnegative_and_gamma_mean():
    s = _bns(eps=0.1, n=40_000)
    assert s.y_T.min() >= 0.0
    # stationary mean int z nu(dz) = a/b = 1, variance int z^2 nu(dz) / 2 = a/(2 b^2)
    assert s.y_T.mean() == pytest.approx(1.0, abs=4 * math.sqrt(0.5 / 40_000))
    assert s.y_T.var() == pytest.approx(0.5, rel=0.05)
    assert s.x_T.flags.writeable is False


def test_bns_log_price_moments():
    # E X_t = eps (r t - 1/2 int E Y) and Var X_t ~ eps E int Y for small eps
    s = _bns(eps=0.05, n=40_000)
    assert s.x_T.mean() == pytest.approx(-0.5 * 0.05, abs=0.01)
    assert s.x_T.var() == pytest.approx(0.05, rel=0.1)


def test_bns_reproducible_across_workers():
    n = 2 * mc.BLOCK + 100
    a = _bns(eps=0.2, n=n, t=0.2, workers=1)
    b = _bns(eps=0.2, n=n, t=0.2, workers=3)
    assert a.x_T.tobytes() == b.x_T.tobytes() and a.y_T.tobytes() == b.y_T.tobytes()


def test_bns_epsilon_mismatch_rejected():
    cfg = mc.SimConfig(0.1, 1.0, 0.005, 10)
    with pytest.raises(ValueError):
        mc.simulate_bns(BNS, 0.2, cfg)


def test_gene_lln_and_counters():
    g = sc.GeneParams(x0=1.0)
    eps = 0.02
    s = mc.simulate_gene(g, eps, mc.SimConfig(eps, 0.5, eps / 20, 4000, seed=3))
    # averaged ODE x' = kappa2 pi_1 - kappa3 x = 1/2 - x from x0 = 1
    target = 0.5 + 0.5 * math.exp(-0.5)
    assert s.x_T.mean() == pytest.approx(target, abs=0.02)
    assert set(np.unique(s.y_T)) <= {0.0, 1.0}
    assert {"clipped", "suppressed"} <= set(s.counters)


def test_general_ou_matches_gaussian():
    c = CoefficientSet(sigma=PolyCoefficient(((0, 0, 1.0),)), b1=PolyCoefficient(((0, 1, -1.0),)),
                       sigma1=PolyCoefficient(((0, 0, 1.0),)))
    m = ModelSpec(c, 0.0, 0.0)
    eps = 0.1
    s = mc.simulate_general(m, mc.SimConfig(eps, 1.0, eps / 20, 20_000, seed=4))
    assert s.x_T.var() == pytest.approx(eps, rel=0.05)
    # fast OU is stationary N(0, 1/2) after many fast time units
    assert s.y_T.var() == pytest.approx(0.5, rel=0.05)


def test_general_with_slow_atoms_mean():
    c = CoefficientSet(b1=PolyCoefficient(((0, 1, -1.0),)), sigma1=PolyCoefficient(((0, 0, 1.0),)),
                       nu1=FiniteAtoms((1.0,), (1.0,)))
    m = ModelSpec(c, 0.0, 0.0)
    eps = 0.1
    s = mc.simulate_general(m, mc.SimConfig(eps, 1.0, eps / 20, 20_000, seed=2))
    # compensated jumps of size eps at rate 1/eps: mean zero, variance eps
    assert abs(s.x_T.mean()) < 4 * math.sqrt(eps / 20_000)
    assert s.x_T.var() == pytest.approx(eps, rel=0.06)


def test_estimate_u_constant_is_exact():
    s = _bns(n=1000, t=0.1)
    u = mc.estimate_u_eps(s, lambda x: 0.0 * x + 0.37, 0.1)
    assert u.u_hat == 0.37 and u.stderr == 0.0


@given(st.floats(0.05, 1.0))
def test_estimate_u_jensen_bounds(eps):
    # mean h <= eps ln E e^{h/eps} <= max h
    x = np.linspace(-2, 2, 501)
    s = mc.TerminalSample(x, 0 * x, eps, 1.0, eps / 20, 1.0, 0)
    h = lambda z: np.exp(-z ** 2)
    u = mc.estimate_u_eps(s, h, eps).u_hat
    assert h(x).mean() - 1e-12 <= u <= 1.0 + 1e-12


def test_estimate_u_monotone_in_h():
    s = _bns(n=2000, t=0.1)
    a = mc.estimate_u_eps(s, lambda x: np.exp(-x ** 2), 0.1).u_hat
    b = mc.estimate_u_eps(s, lambda x: np.exp(-x ** 2) + 0.1 * np.tanh(x) ** 2, 0.1).u_hat
    assert b >= a


def test_estimate_tail():
    x = np.array([0.0, 0.6, 0.7, 0.1])
    s = mc.TerminalSample(x, 0 * x, 0.1, 1.0, 0.005, 1.0, 0)
    t = mc.estimate_tail(s, 0.5, 0.1)
    assert t.n_hits == 2 and t.log_prob_scaled == pytest.approx(0.1 * math.log(0.5))
    assert mc.estimate_tail(s, 5.0, 0.1).log_prob_scaled == -math.inf


def test_fast_sampler_gamma_ou_stationary_mean():
    m = sc.bns_model(BNS)
    smp = mc.fast_path_sampler(m, 0.0, 0.0, 4000, seed=9)
    for _ in range(4000):
        smp.step(2e-3)
    y = smp.state()
    assert y.mean() == pytest.approx(1.0, abs=0.06)
    assert y.min() >= 0.0


def test_fast_sampler_chain_occupation():
    g = sc.GeneParams(kappa1=3.0, kappa_m1=1.0)
    smp = mc.fast_path_sampler(sc.gene_model(g), 1.0, 0.0, 4000, seed=2)
    for _ in range(500):
        smp.step(0.01)
    assert smp.state().mean() == pytest.approx(0.75, abs=0.03)


def test_tightness_diagnostic_bounded():
    m = sc.bns_model(BNS)
    zeta = LyapunovSpec(lambda y: 0.5 * np.asarray(y))
    out = mc.tightness_diagnostic(m, zeta, [0.5, 0.1], ((-2, 2, 5), (0.0, 4.0, 5)))
    assert all(math.isfinite(v) for v in out.values())
    assert out[0.1] <= out[0.5]
    with pytest.raises(NumericFailure):
        mc.tightness_diagnostic(m, LyapunovSpec(lambda y: 2.0 * np.asarray(y)), [0.1],
                                ((-1, 1, 3), (0.0, 1.0, 3)))
    gene = mc.tightness_diagnostic(sc.gene_model(sc.GeneParams()), LyapunovSpec(lambda y: 0 * y),
                                   [0.1], ((0.1, 3.0, 7), (0, 1, 2)))
    assert math.isfinite(gene[0.1])
