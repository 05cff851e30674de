"""Legendre transforms of Hamiltonians and the resulting rate functions.

For an ``x``-independent Hamiltonian the rate function of ``X_t`` started at
``x0`` is ``t Lbar((x - x0)/t)`` with ``Lbar`` the Legendre transform of
``H``.  In general it is ``sup_h {h(x) - u_h(t, x0)}`` over bounded test
functions, where ``u_h`` solves the limiting Hamilton-Jacobi equation; a
finite family of capped-linear ``h`` gives a lower bound
(:func:`rate_dual_estimate`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .hamiltonian import HamiltonianHandle, golden_max, hamiltonian_eval

__all__ = [
    "legendre", "legendre_many", "rate_xfree", "rate_dual_estimate",
    "capped_linear", "DualEstimate", "XFree", "Dual", "RateFunctionHandle",
]

_P_LIMIT = 1e12


def _objective(H_p, q):
    def g(p):
        h = H_p(p)
        if not math.isfinite(h):
            return -math.inf if h > 0 else math.inf
        return p * q - h
    return g


def _bracket_side(g, sign, edge):
    """Return a point on side ``sign`` beyond which ``g`` decreases, or None if unbounded."""
    if math.isfinite(edge):
        return edge
    r = 0.5
    prev = g(0.0)
    while r < _P_LIMIT:
        cur = g(sign * r)
        if cur == math.inf:
            return None
        if cur <= prev:
            return sign * r
        prev = cur
        r *= 2.0
    return None


def legendre(H_p: Callable, domain, q: float, tol: float = 1e-9) -> float:
    """``sup_p (p q - H(p))`` over ``domain = (lo, hi)``; ``+inf`` if unbounded.

    ``H_p`` must be convex on its finite domain and may return ``+inf``
    outside it; endpoints may be infinite.  Golden-section search locates
    the maximiser to ``tol`` in ``p``; ``p = 0`` is always a candidate, so a
    nonnegative ``H`` with ``H(0) = 0`` gives exactly ``0`` where ``p = 0``
    is optimal.
    """
    q = float(q)
    lo, hi = float(domain[0]), float(domain[1])
    g = _objective(H_p, q)
    left = _bracket_side(g, -1.0, lo)
    right = _bracket_side(g, 1.0, hi)
    if left is None or right is None:
        return math.inf
    p_star, val = golden_max(g, left, right, tol=tol)
    cands = [val]
    if lo <= 0.0 <= hi:
        cands.append(g(0.0))
    for edge in (lo, hi):
        if math.isfinite(edge):
            cands.append(g(edge))
    best = max(cands)
    if best == math.inf or math.isnan(best):
        return math.inf
    return float(best)


def legendre_many(H_p: Callable, domain, qs, tol: float = 1e-9) -> np.ndarray:
    return np.array([legendre(H_p, domain, q, tol) for q in np.atleast_1d(qs)], dtype=float)


def _scalar_h(h: HamiltonianHandle, x: float = 0.0):
    return lambda p: hamiltonian_eval(h, x, p)


def rate_xfree(h: HamiltonianHandle, x0: float, t: float, x: float) -> float:
    """``t Lbar((x - x0)/t)`` for an ``x``-independent Hamiltonian."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if not h.x_independent:
        raise ValueError("rate_xfree needs an x-independent Hamiltonian")
    val = legendre(_scalar_h(h), h.p_domain, (x - x0) / t)
    return t * val


def capped_linear(beta: float, x: float, cap: float):
    """``xi -> max(-cap, min(cap, beta (xi - x)))``."""
    def h(xi):
        return np.clip(beta * (np.asarray(xi, dtype=float) - x), -cap, cap)
    return h


@dataclass(frozen=True)
class DualEstimate:
    value: float
    best_beta: float
    cap: float
    n_members: int
    clamps: int


def rate_dual_estimate(h: HamiltonianHandle, x: float, x0: float, t: float,
                       family_size: int = 200, solver: Optional[Callable] = None,
                       margin: float = 3.0, dx: float = 0.01) -> DualEstimate:
    """``max_h {h(x) - u_h(t, x0)}`` over capped-linear ``h``; a lower bound on the rate.

    Slopes ``beta`` form a uniform grid of ``family_size`` points inside
    ``0.95`` times the finite slope domain (``[-2, 2]`` when it is the whole
    line); the cap is ``4 t max|H|`` over that slope range.  Each ``u_h`` is
    computed by ``solver(H, h0_grid, t, slope_cap)`` on
    ``[min(x, x0) - margin, max(x, x0) + margin]`` with spacing ``dx``; the
    default solver is the Lax-Friedrichs scheme of :mod:`twoscale_ldp.hjb`.
    """
    from . import hjb

    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if family_size < 1:
        raise ValueError("family_size must be >= 1")
    lo, hi = h.p_domain
    lim = min(-lo, hi)
    bmax = 0.95 * lim if math.isfinite(lim) else 2.0
    betas = np.linspace(-bmax, bmax, family_size)
    hmax = max(abs(hamiltonian_eval(h, xx, b)) for b in (betas[0], betas[-1]) for xx in (x, x0))
    cap = max(4.0 * t * hmax, 1.0)
    a, b = min(x, x0) - margin, max(x, x0) + margin
    n = int(round((b - a) / dx)) + 1
    grid_x = np.linspace(a, b, n)
    if solver is None:
        def solver(H, h0, tt, slope_cap):
            cfg = hjb.SchemeConfig(slope_cap=slope_cap)
            return hjb.solve_cauchy(H, h0, tt, cfg)
    best, best_beta, clamps = -math.inf, math.nan, 0
    for beta in betas:
        hfun = capped_linear(float(beta), x, cap)
        h0 = hjb.GridFunction(a, b, n, hfun(grid_x))
        sol = solver(h, h0, t, max(abs(float(beta)) * (1 + 1e-9), 1e-12))
        clamps += int(sol.info.get("clamps", 0))
        u_x0 = sol.at(x0)
        val = float(hfun(x)) - u_x0
        if val > best:
            best, best_beta = val, float(beta)
    return DualEstimate(best, best_beta, cap, family_size, clamps)


# --- handle -------------------------------------------------------------------------

@dataclass(frozen=True)
class XFree:
    hamiltonian: HamiltonianHandle


@dataclass(frozen=True)
class Dual:
    hamiltonian: HamiltonianHandle
    family_size: int = 200


@dataclass(frozen=True)
class RateFunctionHandle:
    """``x -> I(x; x0, t)`` by the closed Legendre route or the dual family."""

    kind: object
    x0: float
    t: float

    def __call__(self, x: float) -> float:
        if isinstance(self.kind, XFree):
            return rate_xfree(self.kind.hamiltonian, self.x0, self.t, x)
        if isinstance(self.kind, Dual):
            return rate_dual_estimate(self.kind.hamiltonian, x, self.x0, self.t,
                                      self.kind.family_size).value
        raise TypeError(f"unknown rate kind {type(self.kind).__name__}")
