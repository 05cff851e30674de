"""The limiting Cauchy problem ``u_t = H(x, u_x)``, ``u(0, .) = h``.

:func:`solve_cauchy` is an explicit Lax-Friedrichs scheme, monotone under the
CFL condition and therefore convergent to the viscosity solution.
:func:`hopf_lax` evaluates the variational formula
``u(t, x0) = sup_x {h(x) - t Lbar((x - x0)/t)}``, exact for convex
``x``-independent ``H``, and serves as the oracle for the scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import NumericFailure
from .hamiltonian import HamiltonianHandle, hamiltonian_eval_many

__all__ = [
    "GridFunction", "Extrapolate", "Periodic", "SchemeConfig",
    "estimate_alpha", "lipschitz", "solve_cauchy", "hopf_lax",
]

ALPHA_SAFETY = 1.2
DOMAIN_FRACTION = 0.95


@dataclass(frozen=True)
class GridFunction:
    """Values on ``n`` equally spaced nodes from ``xmin`` to ``xmax``.

    ``info`` carries solver diagnostics (clamp counts, step counts).
    """

    xmin: float
    xmax: float
    n: int
    values: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if self.n < 3 or v.shape != (self.n,):
            raise ValueError(f"need n >= 3 values, got n={self.n}, shape {v.shape}")
        if not self.xmax > self.xmin:
            raise ValueError("xmax must exceed xmin")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, f: Callable, xmin: float, xmax: float, n: int) -> "GridFunction":
        x = np.linspace(xmin, xmax, n)
        return cls(xmin, xmax, n, np.asarray(f(x), dtype=float) + 0.0 * x)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.xmin, self.xmax, self.n)

    @property
    def spacing(self) -> float:
        return (self.xmax - self.xmin) / (self.n - 1)

    def at(self, x0: float) -> float:
        """Linear interpolation (exact at nodes)."""
        if not self.xmin <= x0 <= self.xmax:
            raise ValueError(f"{x0} is outside [{self.xmin}, {self.xmax}]")
        return float(np.interp(x0, self.x, self.values))


@dataclass(frozen=True)
class Extrapolate:
    """Ghost nodes continue the nearest interior slope."""


@dataclass(frozen=True)
class Periodic:
    """The last node is followed by the first."""


@dataclass(frozen=True)
class SchemeConfig:
    """``dt``, ``alpha`` and ``slope_cap`` default to automatic choices.

    Automatic ``slope_cap``: ``1.05`` times the Lipschitz constant of the
    initial datum, but at most ``0.95`` of the finite slope domain.
    Automatic ``alpha``: ``1.2 max |dH/dp|`` over the grid and ``|p| <= slope_cap``.
    Automatic ``dt``: the largest step with ``dt alpha / dx <= cfl`` that
    divides the horizon evenly.
    """

    dt: Optional[float] = None
    alpha: Optional[float] = None
    slope_cap: Optional[float] = None
    boundary: object = field(default_factory=Extrapolate)
    cfl: float = 0.5

    def __post_init__(self):
        if not 0 < self.cfl <= 0.5:
            raise ValueError("cfl must lie in (0, 1/2]")
        for name in ("dt", "alpha", "slope_cap"):
            v = getattr(self, name)
            if v is not None and not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not isinstance(self.boundary, (Extrapolate, Periodic)):
            raise ValueError(f"unknown boundary {self.boundary!r}")


def lipschitz(g: GridFunction) -> float:
    return float(np.max(np.abs(np.diff(g.values)))) / g.spacing


def _default_cap(H: HamiltonianHandle, h0: GridFunction) -> float:
    lo, hi = H.p_domain
    edge = DOMAIN_FRACTION * min(-lo, hi)
    want = max(1.05 * lipschitz(h0), 1e-6)
    return min(want, edge) if math.isfinite(edge) else want


def estimate_alpha(H: HamiltonianHandle, x_nodes, slope_cap: float, n_p: int = 201) -> float:
    """``max |dH/dp|`` over the nodes and ``|p| <= slope_cap`` by central differences."""
    xs = np.unique(np.asarray(x_nodes, dtype=float)) if not H.x_independent else np.array([0.0])
    ps = np.linspace(-slope_cap, slope_cap, n_p)
    dp = 1e-6 * max(1.0, slope_cap)
    X, P = np.meshgrid(xs, ps, indexing="ij")
    up = hamiltonian_eval_many(H, X, np.minimum(P + dp, slope_cap))
    dn = hamiltonian_eval_many(H, X, np.maximum(P - dp, -slope_cap))
    width = np.minimum(P + dp, slope_cap) - np.maximum(P - dp, -slope_cap)
    d = np.abs(up - dn) / width
    if not np.all(np.isfinite(d)):
        raise NumericFailure("Hamiltonian is infinite inside the slope cap")
    return float(d.max())


def _H_vec(H: HamiltonianHandle, x_nodes):
    if H.x_independent:
        return lambda p: hamiltonian_eval_many(H, 0.0, p)
    return lambda p: hamiltonian_eval_many(H, x_nodes, p)


def solve_cauchy(H: HamiltonianHandle, h0: GridFunction, t: float,
                 cfg: SchemeConfig = SchemeConfig()) -> GridFunction:
    """Explicit Lax-Friedrichs steps to time ``t``.

    ``u_i += dt [H(x_i, (u_{i+1} - u_{i-1})/(2 dx)) + alpha/2 (u_{i+1} - 2 u_i + u_{i-1})/dx]``
    with central slopes clamped to ``[-slope_cap, slope_cap]``.  The result's
    ``info`` reports ``clamps`` (number of clamped slope evaluations),
    ``steps``, ``dt``, ``alpha`` and ``slope_cap``; a run with clamps is not
    trustworthy.  With :class:`Extrapolate` boundaries the two end nodes are
    not monotone in their neighbours; :class:`Periodic` is monotone throughout.
    """
    if not t >= 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    dx = h0.spacing
    x = h0.x
    cap = cfg.slope_cap if cfg.slope_cap is not None else _default_cap(H, h0)
    lo, hi = H.p_domain
    if not (-cap > lo and cap < hi):
        raise ValueError(f"slope_cap={cap} reaches the edge of the finite domain {H.p_domain}")
    lip = lipschitz(h0)
    if lip > cap * (1 + 1e-9):
        raise ValueError(f"initial datum has slope {lip} above slope_cap={cap}")
    alpha = cfg.alpha if cfg.alpha is not None else max(ALPHA_SAFETY * estimate_alpha(H, x, cap), 1e-12)
    if t == 0:
        return GridFunction(h0.xmin, h0.xmax, h0.n, h0.values,
                            {"clamps": 0, "steps": 0, "dt": 0.0, "alpha": alpha, "slope_cap": cap})
    if cfg.dt is None:
        n_steps = max(1, math.ceil(t * alpha / (cfg.cfl * dx) - 1e-12))
        dt = t / n_steps
    else:
        dt = cfg.dt
        n_steps = max(1, int(round(t / dt)))
        if abs(n_steps * dt - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"dt={dt} does not divide t={t}")
    if dt * alpha / dx > 0.5 * (1 + 1e-12):
        raise ValueError(f"CFL violated: dt*alpha/dx = {dt * alpha / dx:.4g} > 1/2")
    Hv = _H_vec(H, x)
    periodic = isinstance(cfg.boundary, Periodic)
    u = np.array(h0.values, dtype=float)
    ext = np.empty(u.size + 2)
    clamps = 0
    half_visc = 0.5 * alpha
    for k in range(n_steps):
        ext[1:-1] = u
        if periodic:
            ext[0], ext[-1] = u[-1], u[0]
        else:
            ext[0] = 2 * u[0] - u[1]
            ext[-1] = 2 * u[-1] - u[-2]
        slope = (ext[2:] - ext[:-2]) / (2 * dx)
        over = np.abs(slope) > cap
        if over.any():
            clamps += int(over.sum())
            slope = np.clip(slope, -cap, cap)
        hv = Hv(slope)
        if not np.all(np.isfinite(hv)):
            raise NumericFailure(f"infinite Hamiltonian at step {k} despite slope clamping")
        u = u + dt * (hv + half_visc * (ext[2:] - 2 * u + ext[:-2]) / dx)
    return GridFunction(h0.xmin, h0.xmax, h0.n, u,
                        {"clamps": clamps, "steps": n_steps, "dt": dt, "alpha": alpha,
                         "slope_cap": cap})


def _vectorised(Lbar: Callable, q: np.ndarray) -> np.ndarray:
    try:
        out = np.asarray(Lbar(q), dtype=float)
        if out.shape == q.shape:
            return out
    except (TypeError, ValueError):
        pass
    return np.array([float(Lbar(float(v))) for v in q])


def hopf_lax(h0: GridFunction, Lbar: Callable, t: float, row_chunk: int = 512) -> GridFunction:
    """``u(t, x0) = max_x {h0(x) - t Lbar((x - x0)/t)}`` at every node ``x0``.

    ``Lbar`` is evaluated once at the ``2n - 1`` distinct node offsets.  The
    discrete maximiser is refined by the vertex of the parabola through it
    and its two neighbours.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    n, dx = h0.n, h0.spacing
    offsets = np.arange(-(n - 1), n) * dx
    cost = t * _vectorised(Lbar, offsets / t)
    cost = np.where(np.isnan(cost), math.inf, cost)
    h = h0.values
    out = np.empty(n)
    j = np.arange(n)
    for start in range(0, n, row_chunk):
        rows = np.arange(start, min(start + row_chunk, n))
        # entry [r, j] uses offset j - i
        obj = h[None, :] - cost[(j[None, :] - rows[:, None]) + n - 1]
        k = np.argmax(obj, axis=1)
        best = obj[np.arange(rows.size), k]
        inner = (k > 0) & (k < n - 1)
        r_in = np.flatnonzero(inner)
        if r_in.size:
            kk = k[r_in]
            fm = obj[r_in, kk - 1]
            f0 = best[r_in]
            fp = obj[r_in, kk + 1]
            curv = fm - 2 * f0 + fp
            ok = np.isfinite(curv) & (curv < 0)
            with np.errstate(invalid="ignore", divide="ignore"):
                lift = np.where(ok, -(fp - fm) ** 2 / (8 * np.where(ok, curv, -1.0)), 0.0)
            best[r_in] = f0 + lift
        out[rows] = best
    if not np.all(np.isfinite(out)):
        raise NumericFailure("Hopf-Lax maximum is not finite")
    return GridFunction(h0.xmin, h0.xmax, n, out, {"method": "hopf-lax"})
