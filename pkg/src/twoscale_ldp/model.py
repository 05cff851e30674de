"""Two-scale jump-diffusion specification and the potential ``V``.

The slow/fast system is

    dX = b dt + eps b0 dt + sqrt(eps) sigma dW1 + eps int k dÑ1^{1/eps}
    dY = (1/eps) b1 dt + (1/sqrt(eps)) sigma1 (rho dW1 + sqrt(1-rho^2) dW2)
         + int k1 dÑ2^{1/eps}

with Lévy measures ``nu1`` (slow jumps) and ``nu2`` (fast jumps).  When the
fast variable lives on a finite set, its dynamics are given instead by a
switching-rate function ``chain_rates(x, from_state, to_state)``.

All coefficient callables must accept numpy arrays and broadcast.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate

from .errors import NumericFailure
from .levy import (FiniteAtoms, GammaDensity, LevyMeasure, TruncatedPower,
                   expm1_minus_linear, identity_jump, integrate_against, is_identity)

__all__ = [
    "RealLine", "HalfLine", "FiniteSet",
    "CoefficientSet", "ModelSpec", "PolyCoefficient",
    "exp_compensated_integral", "eval_V", "potential", "perturbed_drift",
    "check_growth", "check_lipschitz", "check_v_lower_bound",
    "GrowthReport", "LipschitzReport", "LowerBoundReport",
]


def _zero(x, y):
    return 0.0 * x + 0.0 * y


# --- fast-variable domains -------------------------------------------------

@dataclass(frozen=True)
class RealLine:
    def contains(self, y) -> bool:
        return math.isfinite(y)


@dataclass(frozen=True)
class HalfLine:
    lower: float = 0.0

    def contains(self, y) -> bool:
        return math.isfinite(y) and y >= self.lower


@dataclass(frozen=True)
class FiniteSet:
    states: tuple

    def __post_init__(self):
        st = tuple(float(s) for s in self.states)
        if len(st) == 0 or any(b <= a for a, b in zip(st, st[1:])):
            raise ValueError("FiniteSet states must be non-empty and strictly increasing")
        object.__setattr__(self, "states", st)

    def contains(self, y) -> bool:
        return float(y) in self.states


# --- coefficients ------------------------------------------------------------

@dataclass(frozen=True)
class PolyCoefficient:
    """``sum c_ij x^i y^j`` (optionally its clipped square root).

    The CLI builds custom models from these; no code is ever evaluated
    from a config file.
    """

    terms: tuple  # ((i, j, c), ...)
    sqrt: bool = False

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        acc = 0.0 * x + 0.0 * y
        for i, j, c in self.terms:
            acc = acc + c * x ** int(i) * y ** int(j)
        if self.sqrt:
            acc = np.sqrt(np.maximum(acc, 0.0))
        return acc if np.ndim(acc) else float(acc)


@dataclass(frozen=True)
class CoefficientSet:
    """Drift, volatility and jump coefficients of the slow/fast pair.

    ``k`` and ``k1`` default to the identity amplitude ``k(x, y, z) = z``.
    With ``compensate_fast=False`` the fast jumps enter uncompensated, i.e.
    ``b1`` is the drift of the generator ``b1 f' + int (f(y+k1) - f(y)) nu2``,
    which is how the gamma-OU volatility is usually written.
    """

    b: Callable = _zero
    b0: Callable = _zero
    sigma: Callable = _zero
    b1: Callable = _zero
    sigma1: Callable = _zero
    k: Callable = identity_jump
    k1: Callable = identity_jump
    rho: float = 0.0
    nu1: Optional[LevyMeasure] = None
    nu2: Optional[LevyMeasure] = None
    compensate_fast: bool = True

    def __post_init__(self):
        if not (-1.0 <= self.rho <= 1.0):
            raise ValueError(f"correlation rho={self.rho} outside [-1, 1]")
        for name in ("nu1", "nu2"):
            nu = getattr(self, name)
            if nu is not None and not isinstance(nu, (FiniteAtoms, GammaDensity, TruncatedPower)):
                raise TypeError(f"{name}: unsupported Lévy measure {type(nu).__name__}")


@dataclass(frozen=True)
class ModelSpec:
    coeffs: CoefficientSet
    x0: float
    y0: float
    fast_domain: object = field(default_factory=RealLine)
    chain_rates: Optional[Callable] = None  # (x, from_state, to_state) -> rate
    name: str = "custom"

    def __post_init__(self):
        if not self.fast_domain.contains(self.y0):
            raise ValueError(f"y0={self.y0} is not in the fast domain {self.fast_domain}")
        if isinstance(self.fast_domain, FiniteSet) and self.chain_rates is None:
            raise ValueError("a FiniteSet fast domain needs chain_rates")

    @property
    def is_chain(self) -> bool:
        return isinstance(self.fast_domain, FiniteSet)


# --- potential -----------------------------------------------------------------

def _divergent_tail(g_of_z, zs) -> bool:
    """True when the exponent ``p k(z) - decay(z)`` is still growing at ``zs``."""
    vals = [g_of_z(z) for z in zs]
    return vals[-1] > vals[-2] and vals[-1] > -5.0


def exp_compensated_integral(nu: LevyMeasure | None, p: float, k_slice=None) -> float:
    """``int (e^{p k(z)} - 1 - p k(z)) nu(dz)``, ``+inf`` when divergent.

    ``k_slice`` is ``z -> k(x, y, z)`` at a fixed ``(x, y)``; ``None`` means
    the identity amplitude.  Atoms are summed exactly; the gamma density with
    identity amplitude uses ``a (ln(b/(b-p)) - p/b)``; anything else goes to
    adaptive quadrature with the small-``u`` series for the integrand.
    """
    if p == 0 or nu is None:
        return 0.0
    if isinstance(nu, FiniteAtoms):
        z = nu.z
        kz = z if k_slice is None else np.asarray(k_slice(z), dtype=float) + 0.0 * z
        return float(np.dot(nu.m, expm1_minus_linear(p * kz)))

    if isinstance(nu, GammaDensity):
        a, b = nu.a, nu.b
        if k_slice is None:
            if p >= b:
                return math.inf
            return a * (-math.log1p(-p / b) - p / b)
        z_small = 1e-12 / b
        if abs(expm1_minus_linear(p * float(k_slice(z_small)))) > 1e-9:
            return math.inf  # integrand ~ c/z at the origin
        if _divergent_tail(lambda z: p * float(k_slice(z)) - b * z,
                           [50.0 / b, 100.0 / b, 200.0 / b]):
            return math.inf
        f = lambda z: float(expm1_minus_linear(p * float(k_slice(z))))
        return _quad_density(lambda z: f(z) * a * math.exp(-b * z) / z,
                             [(0.0, 1.0 / b), (1.0 / b, math.inf)])

    if isinstance(nu, TruncatedPower):
        if k_slice is None:
            return math.inf
        al = nu.alpha
        for s in (1.0, -1.0):
            if _divergent_tail(lambda z: p * float(k_slice(s * z)) - (1 + al) * math.log(z),
                               [1e2, 1e3, 1e4]):
                return math.inf
        f = lambda z: float(expm1_minus_linear(p * float(k_slice(z))))
        return _quad_density(lambda z: f(z) * abs(z) ** (-1.0 - al),
                             [(-math.inf, -1.0), (1.0, math.inf)])
    raise TypeError(type(nu).__name__)


def _quad_density(fun, pieces) -> float:
    total = 0.0
    for lo, hi in pieces:
        res = integrate.quad(fun, lo, hi, limit=200, epsabs=1e-13, epsrel=1e-11, full_output=1)
        total += res[0]
        if len(res) > 3 or not math.isfinite(res[0]):
            raise NumericFailure(f"jump integral quadrature failed on [{lo}, {hi}]", partial=total)
    return total


def _k_slice(k, x, y):
    return None if is_identity(k) else (lambda z: k(x, y, z))


def eval_V(m: ModelSpec, x: float, y: float, p: float) -> float:
    """``b p + sigma^2 p^2 / 2 + int (e^{pk} - 1 - pk) nu1``."""
    c = m.coeffs
    if p == 0:
        return 0.0
    jump = exp_compensated_integral(c.nu1, p, _k_slice(c.k, x, y))
    if math.isinf(jump):
        return math.inf
    return float(c.b(x, y)) * p + 0.5 * float(c.sigma(x, y)) ** 2 * p * p + jump


def potential(m: ModelSpec, x: float, p: float):
    """Vectorised ``y -> V(y; x, p)``.

    The jump term is computed once when it cannot depend on ``y``
    (identity amplitude), in one broadcast for atoms, and pointwise otherwise.
    """
    c = m.coeffs
    if c.nu1 is None or p == 0 or is_identity(c.k):
        jump = exp_compensated_integral(c.nu1, p, None)

        def V(y):
            y = np.asarray(y, dtype=float)
            if math.isinf(jump):
                return np.full(y.shape, math.inf)
            return c.b(x, y) * p + 0.5 * c.sigma(x, y) ** 2 * p * p + jump + 0.0 * y
        return V

    if isinstance(c.nu1, FiniteAtoms):
        z, w = c.nu1.z, c.nu1.m

        def V(y):
            y = np.asarray(y, dtype=float)
            kz = c.k(x, y[..., None], z) + 0.0 * y[..., None]
            return c.b(x, y) * p + 0.5 * c.sigma(x, y) ** 2 * p * p \
                + expm1_minus_linear(p * kz) @ w
        return V

    def V(y):
        y = np.asarray(y, dtype=float)
        return np.vectorize(lambda yy: eval_V(m, x, yy, p))(y)
    return V


def perturbed_drift(m: ModelSpec, x, y, p):
    """Drift of the tilted fast process: ``rho sigma sigma1 p + b1``."""
    c = m.coeffs
    return c.rho * c.sigma(x, y) * c.sigma1(x, y) * p + c.b1(x, y)


# --- assumption diagnostics ----------------------------------------------------------

@dataclass(frozen=True)
class GrowthReport:
    K2_hat: float
    worst_point: tuple
    K2_scaled_box: float
    growth_ratio: float
    uniform: bool
    n_samples: int


@dataclass(frozen=True)
class LipschitzReport:
    K1_hat: float
    worst_pair: tuple
    decade_maxima: tuple
    diverging: bool
    n_pairs: int


@dataclass(frozen=True)
class LowerBoundReport:
    min_V: float
    argmin_y: float
    note: str = "grid scan only; the bound is required for every y"


def _sample_box(m: ModelSpec, box, n, rng):
    (xlo, xhi), (ylo, yhi) = box
    x = rng.uniform(xlo, xhi, n)
    if m.is_chain:
        st = np.array([s for s in m.fast_domain.states if ylo <= s <= yhi])
        if st.size == 0:
            raise ValueError("box contains no fast states")
        y = st[rng.integers(0, st.size, n)]
    else:
        y = rng.uniform(ylo, yhi, n)
    return x, y


def _jump_second_moment(nu, k, x, y):
    if nu is None:
        return 0.0
    if is_identity(k):
        return nu.moment(-math.inf, math.inf, 2)
    return integrate_against(nu, lambda z: float(k(x, y, z)) ** 2)


def _growth_sum(m: ModelSpec, x, y):
    c = m.coeffs
    tot = (np.asarray(c.b(x, y)) ** 2 + np.asarray(c.b0(x, y)) ** 2
           + np.asarray(c.b1(x, y)) ** 2 + np.asarray(c.sigma(x, y)) ** 2
           + np.asarray(c.sigma1(x, y)) ** 2) + 0.0 * x
    j1 = np.array([_jump_second_moment(c.nu1, c.k, xi, yi) for xi, yi in zip(x, y)]) \
        if not is_identity(c.k) else _jump_second_moment(c.nu1, c.k, 0, 0)
    j2 = np.array([_jump_second_moment(c.nu2, c.k1, xi, yi) for xi, yi in zip(x, y)]) \
        if not is_identity(c.k1) else _jump_second_moment(c.nu2, c.k1, 0, 0)
    return tot + j1 + j2


def check_growth(m: ModelSpec, box, n_samples: int = 2000, seed: int = 0,
                 growth_factor: float = 1.5) -> GrowthReport:
    """Empirical growth constant over ``box = ((xlo, xhi), (ylo, yhi))``.

    The same statistic is recomputed on the box scaled by two about the
    origin; a ratio above ``growth_factor`` flags super-linear growth.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)

    def k2(bx):
        x, y = _sample_box(m, bx, n_samples, rng)
        r = _growth_sum(m, x, y) / (1 + x * x + y * y)
        i = int(np.argmax(r))
        return float(r[i]), (float(x[i]), float(y[i]))

    K2, worst = k2(box)
    (xlo, xhi), (ylo, yhi) = box
    big = ((2 * xlo, 2 * xhi), (2 * ylo, 2 * yhi)) if not m.is_chain else ((2 * xlo, 2 * xhi), (ylo, yhi))
    K2b, _ = k2(big)
    ratio = K2b / K2 if K2 > 0 else (math.inf if K2b > 0 else 1.0)
    return GrowthReport(K2, worst, K2b, ratio, bool(ratio <= growth_factor), n_samples)


def _lip_terms(m: ModelSpec, x1, y1, x2, y2):
    c = m.coeffs
    tot = 0.0 * x1
    for f in (c.b, c.b0, c.b1, c.sigma, c.sigma1):
        tot = tot + (np.asarray(f(x2, y2)) - np.asarray(f(x1, y1))) ** 2
    for nu, k in ((c.nu1, c.k), (c.nu2, c.k1)):
        if nu is None or is_identity(k):
            continue
        tot = tot + np.array([
            integrate_against(nu, lambda z: float(k(a2, c2, z) - k(a1, c1, z)) ** 2)
            for a1, c1, a2, c2 in zip(x1, y1, x2, y2)])
    return tot


def check_lipschitz(m: ModelSpec, n_pairs: int = 2000, box=((-1.0, 1.0), (-1.0, 1.0)),
                    seed: int = 0, decades: int = 6) -> LipschitzReport:
    """Empirical Lipschitz constant from random pairs at log-uniform separations.

    Maxima are kept per separation decade; if the finest decade exceeds the
    coarsest by more than a factor 10 the coefficients are flagged as not
    Lipschitz (the quotient blows up as pairs merge).
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    (xlo, xhi), (ylo, yhi) = box
    x1, y1 = _sample_box(m, box, n_pairs, rng)
    diam = math.hypot(xhi - xlo, yhi - ylo)
    dec = rng.uniform(-decades, 0.0, n_pairs)
    r = diam * 10.0 ** dec
    if m.is_chain:
        # states are discrete: move in x only, except a fraction that swaps state
        x2 = x1 + r * rng.choice([-1.0, 1.0], n_pairs)
        y2 = y1.copy()
    else:
        th = rng.uniform(0, 2 * math.pi, n_pairs)
        x2, y2 = x1 + r * np.cos(th), y1 + r * np.sin(th)
        out = (x2 < xlo) | (x2 > xhi) | (y2 < ylo) | (y2 > yhi)
        x2[out], y2[out] = x1[out] - r[out] * np.cos(th[out]), y1[out] - r[out] * np.sin(th[out])
    x2 = np.clip(x2, xlo, xhi)
    if not m.is_chain:
        y2 = np.clip(y2, ylo, yhi)
    d2 = (x2 - x1) ** 2 + (y2 - y1) ** 2
    ok = d2 > 0
    q = np.zeros(n_pairs)
    q[ok] = _lip_terms(m, x1[ok], y1[ok], x2[ok], y2[ok]) / d2[ok]
    i = int(np.argmax(q))
    bins = np.clip(np.floor(-dec).astype(int), 0, decades - 1)  # 0 = coarsest
    maxima = tuple(float(q[bins == d].max()) if np.any(bins == d) else 0.0 for d in range(decades))
    coarse, fine = maxima[0], maxima[-1]
    diverging = bool(fine > 10.0 * coarse and fine > 1e-12)
    return LipschitzReport(float(q[i]), ((float(x1[i]), float(y1[i])), (float(x2[i]), float(y2[i]))),
                           maxima, diverging, n_pairs)


def check_v_lower_bound(m: ModelSpec, x: float, p: float, y_grid) -> LowerBoundReport:
    """Scan ``V(.; x, p)`` over ``y_grid`` and report its minimum."""
    y_grid = np.asarray(y_grid, dtype=float)
    v = potential(m, x, p)(y_grid)
    i = int(np.argmin(v))
    return LowerBoundReport(float(v[i]), float(y_grid[i]))
