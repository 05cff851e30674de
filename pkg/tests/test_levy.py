import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twoscale_ldp.levy import (FiniteAtoms, GammaDensity, TruncatedPower, expm1_minus_linear,
                               identity_jump, integrate_against, is_identity, log_density)
from twoscale_ldp.model import exp_compensated_integral


def test_atoms_validate():
    with pytest.raises(ValueError):
        FiniteAtoms((1.0, 2.0), (1.0,))
    with pytest.raises(ValueError):
        FiniteAtoms((1.0,), (-1.0,))
    with pytest.raises(ValueError):
        FiniteAtoms((math.inf,), (1.0,))


def test_gamma_and_power_validate():
    with pytest.raises(ValueError):
        GammaDensity(0.0, 1.0)
    with pytest.raises(ValueError):
        GammaDensity(1.0, -1.0)
    with pytest.raises(ValueError):
        TruncatedPower(2.0)


def test_atoms_moments():
    nu = FiniteAtoms((-1.0, 2.0), (0.5, 0.25))
    assert nu.total_mass == 0.75
    assert nu.moment(-math.inf, math.inf, 1) == pytest.approx(-0.5 + 0.5)
    assert nu.one_wedge_z2() == pytest.approx(0.5 + 0.25)
    assert nu.rate_above(1.5) == 0.25


def test_gamma_first_moment_closed_form():
    nu = GammaDensity(2.0, 3.0)
    # int z a z^-1 e^-bz dz = a/b
    assert nu.moment(0.0, math.inf, 1) == pytest.approx(2.0 / 3.0, rel=1e-14)
    assert nu.mass(0.0, 1.0) == math.inf
    assert integrate_against(nu, lambda z: z) == pytest.approx(2.0 / 3.0, rel=1e-8)


def test_gamma_compensated_integral_matches_log_form():
    nu = GammaDensity(1.5, 2.0)
    p = 0.7
    closed = 1.5 * (math.log(2.0 / (2.0 - p)) - p / 2.0)
    quad = integrate_against(nu, lambda z: math.expm1(min(p * z, 700.0)) - p * z)
    assert exp_compensated_integral(nu, p) == pytest.approx(closed, rel=1e-12)
    assert quad == pytest.approx(closed, rel=1e-7)
    assert exp_compensated_integral(nu, 2.5) == math.inf


def test_gamma_sampler_matches_truncated_law():
    nu = GammaDensity(1.0, 2.0)
    cut = 0.05
    z = nu.sample_above(np.random.default_rng(3), 200_000, cut)
    assert z.min() >= cut
    mean_exact = nu.moment(cut, math.inf, 1) / nu.mass(cut, math.inf)
    se = z.std() / math.sqrt(z.size)
    assert abs(z.mean() - mean_exact) < 4 * se


def test_power_law_is_symmetric():
    nu = TruncatedPower(1.5)
    assert nu.mass(1.0, math.inf) == pytest.approx(nu.mass(-math.inf, -1.0))
    assert integrate_against(nu, lambda z: z) == pytest.approx(0.0, abs=1e-10)


def test_log_density_no_underflow():
    nu = GammaDensity(1.0, 1.0)
    assert log_density(nu, 2000.0) == pytest.approx(-2000.0 - math.log(2000.0))
    assert log_density(nu, -1.0) == -math.inf


def test_identity_detection():
    assert is_identity(identity_jump)
    assert not is_identity(lambda x, y, z: z)


@given(st.floats(-30, 30))
def test_expm1_minus_linear_nonnegative(u):
    # e^u - 1 - u >= 0 with equality only at 0
    v = float(expm1_minus_linear(u))
    assert v >= 0.0
    assert v == pytest.approx(math.exp(u) - 1 - u, rel=1e-9, abs=1e-15)


def test_expm1_minus_linear_small_argument_series():
    u = 1e-6
    assert float(expm1_minus_linear(u)) == pytest.approx(u * u / 2 + u ** 3 / 6, rel=1e-12)
