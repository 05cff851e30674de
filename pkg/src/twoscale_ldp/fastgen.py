"""Finite rate-matrix representations of the tilted fast generator.

A finite-state fast process gives its rate matrix exactly.  A one-dimensional
jump-diffusion is discretised on a uniform grid: upwind differences for the
drift, centred differences for the diffusion and nearest-node mapping for
jumps, with anything that would leave the window placed on the boundary node.
Every matrix built here is a genuine rate matrix (nonnegative off-diagonal,
zero row sums).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NumericFailure, ReducibleGeneratorError, UnsupportedError
from .levy import FiniteAtoms, is_identity
from .model import HalfLine, ModelSpec, perturbed_drift

__all__ = [
    "ExactChain", "GridDiscretization", "GridSpec", "FastGenerator", "LyapunovSpec",
    "build_chain_generator", "discretize_generator", "fast_generator",
    "stationary_distribution", "check_reversibility", "check_lyapunov",
    "boundary_occupancy", "communicating_blocks",
]

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class ExactChain:
    pass


@dataclass(frozen=True)
class GridDiscretization:
    ymin: float
    ymax: float
    spacing: float
    jump_truncation: float
    # a window edge that coincides with the edge of the fast domain is not artificial
    artificial_lower: bool = True
    artificial_upper: bool = True


@dataclass(frozen=True)
class GridSpec:
    ymin: float
    ymax: float
    n: int
    trunc: Optional[float] = None

    def __post_init__(self):
        if self.n < 3:
            raise ValueError("grid needs n >= 3")
        if not self.ymin < self.ymax:
            raise ValueError("grid needs ymin < ymax")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.ymin, self.ymax, self.n)

    @property
    def spacing(self) -> float:
        return (self.ymax - self.ymin) / (self.n - 1)


@dataclass(frozen=True)
class FastGenerator:
    states: np.ndarray
    Q: np.ndarray
    kind: object
    warnings: tuple = ()

    def __post_init__(self):
        st = np.array(self.states, dtype=float)
        Q = np.array(self.Q, dtype=float)
        n = st.size
        if Q.shape != (n, n):
            raise ValueError(f"Q has shape {Q.shape}, expected {(n, n)}")
        if n > 1 and np.any(np.diff(st) <= 0):
            raise ValueError("states must be strictly increasing")
        off = Q - np.diag(np.diag(Q))
        if np.any(off < 0):
            raise ValueError("negative off-diagonal rate")
        scale = np.maximum(np.abs(np.diag(Q)), 1.0)
        if np.any(np.abs(Q.sum(axis=1)) > ROW_SUM_TOL * scale * max(1, n) ** 0.5):
            raise ValueError("rows of Q do not sum to zero")
        st.flags.writeable = False
        Q.flags.writeable = False
        object.__setattr__(self, "states", st)
        object.__setattr__(self, "Q", Q)

    @property
    def n(self) -> int:
        return self.states.size


@dataclass(frozen=True)
class LyapunovSpec:
    zeta: Callable
    description: str = ""


def _set_diagonal(Q: np.ndarray) -> np.ndarray:
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def build_chain_generator(rates: Callable, states, x: float) -> FastGenerator:
    """``Q[i, j] = rates(x, s_i, s_j)`` off the diagonal, rows summing to zero."""
    st = [float(s) for s in states]
    n = len(st)
    Q = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            r = float(rates(x, st[i], st[j]))
            if not math.isfinite(r):
                raise NumericFailure(f"rate {st[i]}->{st[j]} at x={x} is not finite")
            if r < 0:
                raise ValueError(f"negative rate {r} for {st[i]}->{st[j]} at x={x}")
            Q[i, j] = r
    return FastGenerator(np.array(st), _set_diagonal(Q), ExactChain())


def _bin_edges(n_off: int, h: float) -> np.ndarray:
    """Edges ``(j - 1/2) h`` for offsets ``j = 1 .. n_off`` plus the final ``+inf``."""
    e = (np.arange(1, n_off + 1) - 0.5) * h
    return np.append(e, math.inf)


def _density_jumps(nu, n: int, h: float, sign: float):
    """Per-offset rates, first moments and tail rates for a jump density.

    Returns ``(rates, moments, tail_rate, tail_moment)`` where ``rates[j-1]``
    is the mass of jumps landing ``j`` nodes away (in direction ``sign``),
    and ``tail_*[m]`` is the mass/moment of jumps of ``m + 1/2`` nodes or more.
    """
    edges = _bin_edges(n - 1, h)
    if sign > 0:
        seg = [(edges[j], edges[j + 1]) for j in range(n - 1)]
    else:
        seg = [(-edges[j + 1], -edges[j]) for j in range(n - 1)]
    rates = np.array([nu.mass(lo, hi) for lo, hi in seg])
    mom = np.array([abs(nu.moment(lo, hi, 1)) for lo, hi in seg])
    # tails: jumps with |z| >= (m + 1/2) h for m = 1 .. n-1 (reverse cumulative sums)
    tail_rate = np.cumsum(rates[::-1])[::-1]
    tail_mom = np.cumsum(mom[::-1])[::-1]
    return rates, mom, tail_rate, tail_mom


def discretize_generator(m: ModelSpec, x: float, p: float, grid: GridSpec,
                         trunc: Optional[float] = None) -> FastGenerator:
    """Grid approximation of the tilted fast generator at frozen ``(x, p)``.

    Jumps shorter than ``trunc`` (default half a grid step) are replaced by
    their mean drift: that is nothing for compensated jumps and
    ``int_{|k1|<trunc} k1 nu2`` for uncompensated ones.  Longer jumps go to
    the nearest node; the difference between the true and the mapped jump
    mean is added to the drift, so the first moment of the jump part is
    exact away from the window edges.
    """
    if m.is_chain:
        raise UnsupportedError("finite-state fast process: use build_chain_generator")
    y = grid.nodes
    n, h = grid.n, grid.spacing
    dom = m.fast_domain
    if isinstance(dom, HalfLine) and grid.ymin < dom.lower - 1e-12:
        raise ValueError(f"grid starts at {grid.ymin}, below the fast domain {dom.lower}")
    if trunc is None:
        trunc = grid.trunc if grid.trunc is not None else h / 2
    c = m.coeffs

    drift = np.asarray(perturbed_drift(m, x, y, p), dtype=float) + 0.0 * y
    s2 = np.asarray(c.sigma1(x, y), dtype=float) ** 2 + 0.0 * y
    if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(s2))):
        bad = int(np.flatnonzero(~(np.isfinite(drift) & np.isfinite(s2)))[0])
        raise NumericFailure(f"non-finite fast coefficient at y={y[bad]} (x={x}, p={p})")

    Q = np.zeros((n, n))
    nu = c.nu2
    if nu is not None:
        if isinstance(nu, FiniteAtoms):
            drift = drift + _atom_jumps(Q, nu, c.k1, x, y, h, trunc, c.compensate_fast)
        else:
            if not is_identity(c.k1):
                raise UnsupportedError("jump densities are discretised for k1(x, y, z) = z only")
            if abs(trunc - h / 2) > 1e-12 * h:
                raise UnsupportedError("jump densities use trunc = spacing/2 (one bin per node)")
            drift = drift + _density_jump_matrix(Q, nu, n, h, trunc, c.compensate_fast)

    up = s2 / (2 * h * h) + np.maximum(drift, 0.0) / h
    down = s2 / (2 * h * h) + np.maximum(-drift, 0.0) / h
    idx = np.arange(n - 1)
    Q[idx, idx + 1] += up[:-1]
    Q[idx + 1, idx] += down[1:]
    # moves off the window land on the boundary node: nothing to add

    warnings = []
    sgn = np.sign(drift)
    changes = np.flatnonzero(sgn[1:] * sgn[:-1] < 0)
    if changes.size > 1 and np.min(np.diff(changes)) < 3:
        warnings.append("drift changes sign within three grid cells; grid may be too coarse")

    lower_art = not (isinstance(dom, HalfLine) and abs(grid.ymin - dom.lower) < 1e-12)
    kind = GridDiscretization(grid.ymin, grid.ymax, h, trunc, lower_art, True)
    return FastGenerator(y, _set_diagonal(Q), kind, tuple(warnings))


def _density_jump_matrix(Q, nu, n, h, trunc, compensated) -> np.ndarray:
    """Fill jump rates of a density measure; return the drift correction per node."""
    corr = np.zeros(n)
    if compensated:
        comp = nu.large_moment(trunc, 1)
        if not math.isfinite(comp):
            raise UnsupportedError("compensated jumps with infinite first moment")
        corr -= comp
    else:
        corr += nu.small_moment(trunc, 1)
    rows = np.arange(n)
    for sign in (1.0, -1.0):
        side = nu.mass(trunc, math.inf) if sign > 0 else nu.mass(-math.inf, -trunc)
        if side == 0:
            continue
        rates, mom, tail_rate, _ = _density_jumps(nu, n, h, sign)
        if not np.all(np.isfinite(rates)):
            raise NumericFailure("jump measure has infinite mass away from the origin")
        js = np.arange(1, n)
        # bins 1 .. n-2 have finite width; their mean error is corrected in the drift
        err = np.cumsum(np.where(js < n - 1, mom - h * js * rates, 0.0))
        room = (n - 1 - rows) if sign > 0 else rows
        for i in range(n):
            r = int(room[i])
            if r == 0:
                continue
            dest = i + int(sign) * np.arange(1, r + 1)
            Q[i, dest] += rates[:r]
            if r < n - 1:
                # everything beyond the window edge lands on the edge node
                Q[i, dest[-1]] += tail_rate[r]
            kk = min(r, n - 2)
            if kk > 0:
                corr[i] += sign * err[kk - 1]
    return corr


def _atom_jumps(Q, nu, k1, x, y, h, trunc, compensated) -> np.ndarray:
    n = y.size
    corr = np.zeros(n)
    z, w = nu.z, nu.m
    for zj, wj in zip(z, w):
        d = np.asarray(k1(x, y, zj), dtype=float) + 0.0 * y
        if not np.all(np.isfinite(d)):
            raise NumericFailure(f"non-finite jump amplitude for atom z={zj}")
        small = np.abs(d) < trunc
        if not compensated:
            corr += np.where(small, wj * d, 0.0)
        big = ~small
        if compensated:
            corr -= np.where(big, wj * d, 0.0)
        target = np.rint((y + d - y[0]) / h).astype(np.int64)
        clipped = (target < 0) | (target > n - 1)
        target = np.clip(target, 0, n - 1)
        mapped = (target - np.arange(n)) * h
        corr += np.where(big & ~clipped, wj * (d - mapped), 0.0)
        for i in np.flatnonzero(big):
            if target[i] != i:
                Q[i, target[i]] += wj
    return corr


def fast_generator(m: ModelSpec, x: float, p: float, grid: Optional[GridSpec] = None) -> FastGenerator:
    """Exact chain generator or grid discretisation, whichever fits ``m``."""
    if m.is_chain:
        return build_chain_generator(m.chain_rates, m.fast_domain.states, x)
    if grid is None:
        raise ValueError("a grid is required for a continuous fast variable")
    return discretize_generator(m, x, p, grid)


def communicating_blocks(G: FastGenerator) -> list:
    """Strongly connected components of the transition graph, as state-index lists."""
    adj = (G.Q - np.diag(np.diag(G.Q))) > 0
    k, labels = connected_components(adj, directed=True, connection="strong")
    return [list(np.flatnonzero(labels == i)) for i in range(k)]


def stationary_distribution(G: FastGenerator, tol: float = 1e-10) -> np.ndarray:
    """Solve ``pi Q = 0``, ``sum pi = 1`` for an irreducible generator."""
    n = G.n
    if n == 1:
        return np.ones(1)
    blocks = communicating_blocks(G)
    if len(blocks) > 1:
        raise ReducibleGeneratorError(
            f"generator splits into {len(blocks)} communicating blocks", blocks)
    A = G.Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs)
    res = np.max(np.abs(pi @ G.Q))
    if res > tol:
        # one step of iterative refinement usually fixes rounding on large grids
        r = rhs - A @ pi
        pi = pi + np.linalg.solve(A, r)
        res = np.max(np.abs(pi @ G.Q))
    pi = np.where(np.abs(pi) < 1e-300, 0.0, pi)
    if np.min(pi) < -tol:
        raise NumericFailure(f"stationary solve produced negative mass {np.min(pi):.3e}",
                             partial=pi)
    pi = np.maximum(pi, 0.0)
    pi = pi / pi.sum()
    res = np.max(np.abs(pi @ G.Q))
    if res > tol:
        raise NumericFailure(f"stationary residual {res:.3e} exceeds {tol:.0e}", partial=pi)
    return pi


def boundary_occupancy(G: FastGenerator, pi: np.ndarray) -> float:
    """Stationary mass on artificial window edges (0 for exact chains)."""
    k = G.kind
    if not isinstance(k, GridDiscretization):
        return 0.0
    return float((pi[0] if k.artificial_lower else 0.0) + (pi[-1] if k.artificial_upper else 0.0))


@dataclass(frozen=True)
class ReversibilityReport:
    is_reversible: bool
    max_violation: float
    scale: float


def check_reversibility(G: FastGenerator, pi, rel_tol: float = 1e-10) -> ReversibilityReport:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (G.n,) or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
        raise ValueError("pi must be a probability vector on the generator states")
    flux = pi[:, None] * G.Q
    np.fill_diagonal(flux, 0.0)
    viol = float(np.max(np.abs(flux - flux.T))) if G.n > 1 else 0.0
    scale = float(np.max(np.abs(flux))) if G.n > 1 else 0.0
    return ReversibilityReport(viol <= rel_tol * max(scale, 1e-300), viol, scale)


@dataclass(frozen=True)
class LyapunovReport:
    g: np.ndarray
    sublevel_states: np.ndarray
    bounded: bool
    note: str = "finitely many (x, p) sampled; uniformity in x is not checked"


def tilted_exp_ratio(G: FastGenerator, zeta_vals) -> np.ndarray:
    """``e^{-zeta} (Q e^{zeta})`` per state, computed from differences of ``zeta``."""
    zv = np.asarray(zeta_vals, dtype=float)
    d = zv[None, :] - zv[:, None]
    off = G.Q - np.diag(np.diag(G.Q))
    mask = off > 0
    if np.any(d[mask] > 700):
        raise NumericFailure("e^zeta overflows across a single transition; rescale zeta")
    with np.errstate(over="ignore"):
        e = np.where(mask, np.exp(np.minimum(d, 700)), 0.0)
    return (off * e).sum(axis=1) + np.diag(G.Q)


def check_lyapunov(G: FastGenerator, zeta: LyapunovSpec, theta: float, V_vec, b0p_vec,
                   sigma2_vec, level: float) -> LyapunovReport:
    """Sublevel set of ``-theta e^{-zeta} L e^{zeta} - (|V| + |b0 p| + sigma^2)``.

    For a grid the set counts as bounded when it stays off the artificial
    window edges; for an exact chain it is always bounded.
    """
    if not (0.0 < theta <= 1.0):
        raise ValueError("theta must lie in (0, 1]")
    zv = np.asarray(zeta.zeta(G.states), dtype=float) + 0.0 * G.states
    if np.any(zv < 0):
        raise ValueError("zeta must be nonnegative")
    g = -theta * tilted_exp_ratio(G, zv) - (np.abs(V_vec) + np.abs(b0p_vec) + np.asarray(sigma2_vec))
    sub = np.flatnonzero(g <= level)
    k = G.kind
    if isinstance(k, GridDiscretization):
        edge = (k.artificial_lower and 0 in sub) or (k.artificial_upper and (G.n - 1) in sub)
        bounded = not edge
    else:
        bounded = True
    return LyapunovReport(g, G.states[sub], bool(bounded))
