"""Lévy measures used for the slow and fast jump terms.

Three families are supported, each of which can be integrated against in
closed form over intervals and sampled exactly above any positive cutoff:

``FiniteAtoms``
    finitely many point masses ``sum_i m_i delta_{z_i}``.
``GammaDensity``
    ``a z^{-1} exp(-b z) dz`` on ``z > 0`` (the gamma subordinator).
``TruncatedPower``
    ``|z|^{-1-alpha} dz`` on ``|z| > 1``, symmetric.

Interval quantities (mass and first/second moments) drive the grid
discretisation of the fast generator; samplers drive the Monte Carlo code.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .errors import NumericFailure

__all__ = [
    "LevyMeasure",
    "FiniteAtoms",
    "GammaDensity",
    "TruncatedPower",
    "identity_jump",
    "is_identity",
    "expm1_minus_linear",
    "integrate_against",
    "log_density",
]


def identity_jump(x, y, z):
    """Jump amplitude ``k(x, y, z) = z``; recognised by the closed-form paths."""
    return z + 0.0 * y


def is_identity(k) -> bool:
    return k is None or k is identity_jump


_SERIES_TERMS = 18


def expm1_minus_linear(u):
    """``exp(u) - 1 - u`` without cancellation for small ``|u|``.

    For ``|u| < 0.5`` the power series ``sum_{n>=2} u^n/n!`` is summed to
    18 terms, which is below 1e-12 relative error on that disc.
    """
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    small = np.abs(u) < 0.5
    us = u[small]
    term = us * us / 2.0
    acc = term.copy()
    for n in range(3, _SERIES_TERMS + 3):
        term = term * us / n
        acc += term
    out[small] = acc
    ub = u[~small]
    with np.errstate(over="ignore"):
        out[~small] = np.expm1(ub) - ub
    return out if out.ndim else float(out)


class LevyMeasure:
    """Common interface.  Subclasses are frozen dataclasses."""

    def mass(self, lo: float, hi: float) -> float:
        raise NotImplementedError

    def moment(self, lo: float, hi: float, order: int) -> float:
        raise NotImplementedError

    def one_wedge_z2(self) -> float:
        raise NotImplementedError

    def rate_above(self, cutoff: float) -> float:
        """Total mass of ``{|z| >= cutoff}``."""
        return self.mass(-math.inf, -cutoff) + self.mass(cutoff, math.inf) if cutoff > 0 \
            else self.mass(-math.inf, math.inf)

    def sample_above(self, rng: np.random.Generator, n: int, cutoff: float) -> np.ndarray:
        raise NotImplementedError

    def small_moment(self, cutoff: float, order: int) -> float:
        """``int_{|z|<cutoff} z^order nu(dz)``."""
        return self.moment(-cutoff, cutoff, order)

    def large_moment(self, cutoff: float, order: int) -> float:
        """``int_{|z|>=cutoff} z^order nu(dz)``; may be infinite."""
        return self.moment(-math.inf, -cutoff, order) + self.moment(cutoff, math.inf, order)


@dataclass(frozen=True)
class FiniteAtoms(LevyMeasure):
    locations: tuple
    masses: tuple

    def __post_init__(self):
        locs = tuple(float(z) for z in self.locations)
        ms = tuple(float(m) for m in self.masses)
        if len(locs) != len(ms):
            raise ValueError("FiniteAtoms: locations and masses differ in length")
        if not all(math.isfinite(z) for z in locs):
            raise ValueError("FiniteAtoms: atom locations must be finite")
        if any(not math.isfinite(m) or m < 0 for m in ms):
            raise ValueError("FiniteAtoms: masses must be finite and nonnegative")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "masses", ms)

    @property
    def z(self) -> np.ndarray:
        return np.array(self.locations)

    @property
    def m(self) -> np.ndarray:
        return np.array(self.masses)

    @property
    def total_mass(self) -> float:
        return float(sum(self.masses))

    def mass(self, lo, hi):
        z, m = self.z, self.m
        return float(m[(z >= lo) & (z < hi)].sum())

    def moment(self, lo, hi, order):
        z, m = self.z, self.m
        sel = (z >= lo) & (z < hi)
        return float((m[sel] * z[sel] ** order).sum())

    def small_moment(self, cutoff, order):
        z, m = self.z, self.m
        sel = np.abs(z) < cutoff
        return float((m[sel] * z[sel] ** order).sum())

    def large_moment(self, cutoff, order):
        z, m = self.z, self.m
        sel = np.abs(z) >= cutoff
        return float((m[sel] * z[sel] ** order).sum())

    def rate_above(self, cutoff):
        return float(self.m[np.abs(self.z) >= cutoff].sum())

    def one_wedge_z2(self):
        return float((self.m * np.minimum(1.0, self.z ** 2)).sum())

    def sample_above(self, rng, n, cutoff):
        sel = np.abs(self.z) >= cutoff
        z, m = self.z[sel], self.m[sel]
        if n == 0 or m.sum() == 0:
            return np.zeros(n)
        return z[rng.choice(len(z), size=n, p=m / m.sum())]


@dataclass(frozen=True)
class GammaDensity(LevyMeasure):
    """``a z^{-1} e^{-b z}`` on ``z > 0``: shape ``a``, rate ``b``."""

    a: float
    b: float

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and math.isfinite(self.a) and math.isfinite(self.b)):
            raise ValueError("GammaDensity requires finite a > 0 and b > 0")

    def mass(self, lo, hi):
        lo, hi = max(lo, 0.0), max(hi, 0.0)
        if hi <= lo:
            return 0.0
        if lo == 0.0:
            return math.inf
        upper = 0.0 if math.isinf(hi) else special.exp1(self.b * hi)
        return self.a * (special.exp1(self.b * lo) - upper)

    def moment(self, lo, hi, order):
        if order == 0:
            return self.mass(lo, hi)
        lo, hi = max(lo, 0.0), max(hi, 0.0)
        if hi <= lo:
            return 0.0
        a, b = self.a, self.b
        if order == 1:
            return a * (math.exp(-b * lo) - (0.0 if math.isinf(hi) else math.exp(-b * hi))) / b
        if order == 2:
            f = lambda z: 0.0 if math.isinf(z) else (1 + b * z) * math.exp(-b * z)
            return a * (f(lo) - f(hi)) / b ** 2
        # a * int z^{order-1} e^{-bz} = a Gamma(order) [P(order, b hi) - P(order, b lo)] / b^order
        inc = lambda z: 1.0 if math.isinf(z) else special.gammainc(order, b * z)
        return a * math.gamma(order) * (inc(hi) - inc(lo)) / b ** order

    def one_wedge_z2(self):
        a, b = self.a, self.b
        return a * (1 - (1 + b) * math.exp(-b)) / b ** 2 + a * special.exp1(b)

    def sample_above(self, rng, n, cutoff):
        """Exact draws from ``nu`` restricted to ``[cutoff, inf)`` by rejection.

        Envelope: ``1/z`` on ``[cutoff, 1/b]`` and ``b e^{-bz}`` beyond.
        """
        if cutoff <= 0:
            raise ValueError("GammaDensity has infinite activity; cutoff must be > 0")
        b = self.b
        c = max(1.0 / b, cutoff)
        w1 = math.log(c / cutoff)
        w2 = math.exp(-b * c)
        p1 = w1 / (w1 + w2)
        out = np.empty(n)
        filled = 0
        while filled < n:
            m = max(16, int(1.3 * (n - filled)))
            piece1 = rng.random(m) < p1
            u = rng.random(m)
            z = np.where(piece1, cutoff * (c / cutoff) ** u,
                         c + rng.exponential(1.0 / b, size=m))
            acc = np.where(piece1, np.exp(-b * z), 1.0 / (b * z))
            keep = z[rng.random(m) < acc]
            take = min(len(keep), n - filled)
            out[filled:filled + take] = keep[:take]
            filled += take
        return out


@dataclass(frozen=True)
class TruncatedPower(LevyMeasure):
    """Symmetric ``|z|^{-1-alpha}`` on ``|z| > 1``, ``alpha`` in (0, 2)."""

    alpha: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 2.0):
            raise ValueError("TruncatedPower requires alpha in (0, 2)")

    def _pos_moment(self, lo, hi, order):
        lo, hi = max(lo, 1.0), hi
        if hi <= lo:
            return 0.0
        e = order - self.alpha  # integrand z^{e-1}
        if e == 0:
            return math.inf if math.isinf(hi) else math.log(hi / lo)
        if math.isinf(hi):
            return math.inf if e > 0 else -lo ** e / e
        return (hi ** e - lo ** e) / e

    def mass(self, lo, hi):
        return self.moment(lo, hi, 0)

    def moment(self, lo, hi, order):
        pos = self._pos_moment(max(lo, 0.0), hi, order) if hi > 0 else 0.0
        neg = self._pos_moment(max(-hi, 0.0), -lo, order) if lo < 0 else 0.0
        sign = -1.0 if order % 2 else 1.0
        if sign < 0 and math.isinf(pos) and math.isinf(neg):
            return 0.0  # symmetric principal value
        return pos + sign * neg

    def one_wedge_z2(self):
        return 2.0 / self.alpha

    def rate_above(self, cutoff):
        c = max(cutoff, 1.0)
        return 2.0 * c ** (-self.alpha) / self.alpha

    def sample_above(self, rng, n, cutoff):
        c = max(cutoff, 1.0)
        mag = c * rng.random(n) ** (-1.0 / self.alpha)
        return np.where(rng.random(n) < 0.5, -mag, mag)


def _support(nu: LevyMeasure):
    if isinstance(nu, GammaDensity):
        return [(0.0, 1.0 / nu.b), (1.0 / nu.b, math.inf)]
    if isinstance(nu, TruncatedPower):
        return [(-math.inf, -1.0), (1.0, math.inf)]
    raise TypeError(type(nu).__name__)


def _density(nu: LevyMeasure, z):
    if isinstance(nu, GammaDensity):
        return nu.a * math.exp(-nu.b * z) / z
    return abs(z) ** (-1.0 - nu.alpha)


def log_density(nu: LevyMeasure, z: float) -> float:
    """Logarithm of the density at ``z`` (no underflow far in the tail)."""
    if isinstance(nu, GammaDensity):
        return math.log(nu.a) - nu.b * z - math.log(z) if z > 0 else -math.inf
    if isinstance(nu, TruncatedPower):
        return (-1.0 - nu.alpha) * math.log(abs(z)) if abs(z) > 1 else -math.inf
    raise TypeError(f"{type(nu).__name__} has no density")


def integrate_against(nu: LevyMeasure | None, f) -> float:
    """``int f(z) nu(dz)`` for scalar ``f``; adaptive quadrature for densities.

    Raises NumericFailure (with the partial value) when quad reports trouble.
    """
    if nu is None:
        return 0.0
    if isinstance(nu, FiniteAtoms):
        return float(sum(m * f(z) for z, m in zip(nu.locations, nu.masses)))
    total = 0.0
    for lo, hi in _support(nu):
        res = integrate.quad(lambda z: f(z) * _density(nu, z), lo, hi,
                             limit=200, full_output=1)
        total += res[0]
        if len(res) > 3:
            raise NumericFailure(f"quadrature did not converge on [{lo}, {hi}]: {res[3][:60]}",
                                 partial=total)
    return total
