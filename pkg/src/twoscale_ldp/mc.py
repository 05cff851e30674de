"""Monte Carlo for the two-scale system and its exponential functionals.

Two kinds of path simulation live here:

* pre-limit paths of ``(X_eps, Y_eps)`` on ``[0, t]`` (:func:`simulate_general`,
  :func:`simulate_bns`, :func:`simulate_gene`), used to estimate
  ``eps ln E exp(h(X_t)/eps)`` and tail probabilities;
* paths of the fast process under the tilted generator ``L1^{x,p}`` at frozen
  ``x`` (:func:`fast_path_sampler`), consumed by the Feynman-Kac estimator of
  the effective Hamiltonian.

Paths are processed in blocks of ``BLOCK`` consecutive indices, each with its
own counter-based stream (:mod:`twoscale_ldp.rng`), so results are
bit-identical for any number of workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericFailure, UnsupportedError
from .fastgen import LyapunovSpec, build_chain_generator
from .levy import (FiniteAtoms, GammaDensity, TruncatedPower, integrate_against, is_identity,
                   log_density)
from .model import HalfLine, ModelSpec, _zero, perturbed_drift
from .rng import block_slices, map_blocks, stream
from .scenarios import BnsParams, GeneParams

__all__ = [
    "BLOCK", "SimConfig", "TerminalSample", "FastPathSampler", "fast_path_sampler",
    "simulate_general", "simulate_bns", "simulate_gene",
    "UEstimate", "TailEstimate", "estimate_u_eps", "estimate_tail", "tightness_diagnostic",
]

BLOCK = 16384

# stream tags, one per purpose
_TAG_GENERAL, _TAG_BNS, _TAG_GENE, _TAG_FAST, _TAG_FAST_RESET = 0x51, 0x52, 0x53, 0x54, 0x55

# gamma jumps of the fast process below this multiple of 1/b are replaced by their mean
_GAMMA_CUTOFF = 1e-4


@dataclass(frozen=True)
class SimConfig:
    """Time grid and sample size of a pre-limit simulation.

    ``substeps`` refines the fast component: ``Y`` is advanced in
    ``substeps`` pieces of each slow step ``dt``.
    """

    epsilon: float
    t_end: float
    dt: float
    n_paths: int
    seed: int = 0
    substeps: int = 1
    workers: int = 1

    def __post_init__(self):
        if not (self.epsilon > 0 and self.t_end > 0 and self.dt > 0):
            raise ValueError("epsilon, t_end and dt must be positive")
        if self.dt > self.epsilon / 10 * (1 + 1e-12):
            raise ValueError(f"dt={self.dt} does not resolve the fast scale: need dt <= epsilon/10 "
                             f"= {self.epsilon / 10}")
        if self.n_paths < 1 or self.substeps < 1 or self.workers < 1:
            raise ValueError("n_paths, substeps and workers must be >= 1")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.t_end / self.dt)))


@dataclass(frozen=True)
class TerminalSample:
    x_T: np.ndarray
    y_T: np.ndarray
    epsilon: float
    t_end: float
    dt: float
    y0: float
    seed: int
    counters: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x_T) != len(self.y_T):
            raise ValueError("x_T and y_T differ in length")

    @property
    def n_paths(self) -> int:
        return len(self.x_T)


def _merge_counters(parts) -> dict:
    out: dict = {}
    for part in parts:
        for k, v in part.items():
            out[k] = out.get(k, 0) + int(v)
    return out


def _finish(parts, cfg: SimConfig, y0) -> TerminalSample:
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    for arr in (x, y):
        arr.setflags(write=False)
    return TerminalSample(x, y, cfg.epsilon, cfg.t_end, cfg.dt, float(y0), cfg.seed,
                          _merge_counters(p[2] for p in parts))


# --- chain clocks -------------------------------------------------------------------

def _advance_chain(s, E, Q_rows, dt, rng, occupation=None, values=None):
    """Advance chain states ``s`` (int indices) over ``dt`` with frozen rates.

    ``E`` holds the remaining exponential hazard of each path's clock.
    ``Q_rows(idx, state)`` returns the off-diagonal rate rows (len(idx), S)
    for the given paths in the given states.  When ``occupation`` is given,
    the time-integral of ``values[s]`` over the step is accumulated into it.
    """
    n_states = Q_rows.n_states
    rem = np.full(len(s), dt)
    active = np.arange(len(s))
    while active.size:
        rows = Q_rows(active, s[active])
        out = rows.sum(axis=1)
        need = out * rem[active]
        jump = E[active] <= need
        stay = active[~jump]
        E[stay] -= need[~jump]
        if occupation is not None:
            occupation[stay] += values[s[stay]] * rem[stay]
        movers = active[jump]
        if movers.size == 0:
            break
        r_out = out[jump]
        tau = E[movers] / r_out
        if occupation is not None:
            occupation[movers] += values[s[movers]] * tau
        rem[movers] -= tau
        # destination proportional to the rate row
        cum = np.cumsum(rows[jump], axis=1)
        u = rng.random(movers.size) * cum[:, -1]
        dest = np.minimum((cum <= u[:, None]).sum(axis=1), n_states - 1)
        s[movers] = dest
        E[movers] = rng.exponential(size=movers.size)
        active = movers
    return s, E


class _FrozenRates:
    """Rate rows of a generator that does not depend on the path."""

    def __init__(self, Q):
        off = np.array(Q, dtype=float)
        np.fill_diagonal(off, 0.0)
        self.off = off
        self.n_states = off.shape[0]

    def __call__(self, idx, states):
        return self.off[states]


class _PathRates:
    """Rate rows ``rates(x_i, s, j) / scale`` evaluated per path."""

    def __init__(self, rates, states, x, scale):
        self.rates, self.states, self.x, self.scale = rates, states, x, scale
        self.n_states = len(states)

    def __call__(self, idx, cur):
        S = self.n_states
        xs = self.x[idx]
        rows = np.zeros((idx.size, S))
        for i in range(S):
            sel = cur == i
            if not sel.any():
                continue
            for j in range(S):
                if i != j:
                    r = np.asarray(self.rates(xs[sel], self.states[i], self.states[j]), dtype=float)
                    rows[sel, j] = np.broadcast_to(r, (int(sel.sum()),)) / self.scale
        if np.any(rows < 0) or not np.all(np.isfinite(rows)):
            raise NumericFailure("chain rates negative or non-finite along a path")
        return rows


# --- fast process at frozen x (Feynman-Kac) ---------------------------------------

class _JumpEngine:
    """Compound Poisson jumps of ``nu2`` (rate-1 clock) with a small-jump drift.

    Returns the extra drift to add to ``b1`` and a sampler of jump sizes.
    Gamma jumps below ``_GAMMA_CUTOFF / b`` are replaced by their mean.
    """

    def __init__(self, nu, k1, x, compensated):
        self.k1, self.x = k1, x
        self.identity = is_identity(k1)
        self.nu = nu
        self.drift_const = 0.0
        self.comp_atoms = None
        if nu is None:
            self.rate, self.cutoff = 0.0, 0.0
            return
        if isinstance(nu, FiniteAtoms):
            self.cutoff = 0.0
            self.rate = nu.total_mass
            if compensated:
                self.comp_atoms = (nu.z, nu.m)
        elif isinstance(nu, GammaDensity):
            if not self.identity:
                raise UnsupportedError("gamma jumps of the fast process need the identity amplitude")
            self.cutoff = _GAMMA_CUTOFF / nu.b
            self.rate = nu.rate_above(self.cutoff)
            if compensated:
                self.drift_const = -nu.large_moment(self.cutoff, 1)
            else:
                self.drift_const = nu.small_moment(self.cutoff, 1)
        elif isinstance(nu, TruncatedPower):
            if compensated and not self.identity:
                raise UnsupportedError("compensated power-law jumps need the identity amplitude")
            self.cutoff = 0.0
            self.rate = nu.rate_above(0.0)
        else:
            raise UnsupportedError(f"unsupported jump measure {type(nu).__name__}")

    def drift(self, y):
        out = self.drift_const
        if self.comp_atoms is not None:
            z, w = self.comp_atoms
            kz = self.k1(self.x, y[:, None], z[None, :]) + 0.0 * y[:, None]
            out = out - kz @ w
        return out

    def sizes(self, rng, y):
        z = self.nu.sample_above(rng, y.size, self.cutoff)
        return z if self.identity else np.asarray(self.k1(self.x, y, z), dtype=float) + 0.0 * y


class FastPathSampler:
    """Paths of the fast process generated by ``L1^{x,p}`` at frozen ``x``.

    Interface used by the Feynman-Kac estimator: :meth:`state` (current
    ``y`` values), :meth:`step` (advance all paths by ``dt``) and
    :meth:`select` (replace the population by ``state[idx]``).  Diffusive
    parts use Euler steps; jumps use exponential clocks so that rare jumps
    cost nothing between events.
    """

    def __init__(self, m: ModelSpec, x: float, p: float, n_paths: int, seed: int,
                 workers: int = 1):
        c = m.coeffs
        self.m, self.x, self.p = m, float(x), float(p)
        self.n = int(n_paths)
        self.workers = workers
        self.blocks = block_slices(self.n, BLOCK)
        self.rngs = [stream(seed, _TAG_FAST, i) for i in range(len(self.blocks))]
        self.reset_rngs = [stream(seed, _TAG_FAST_RESET, i) for i in range(len(self.blocks))]
        self.t = 0.0
        self.clamps = 0
        if m.is_chain:
            self.states = np.array(m.fast_domain.states, dtype=float)
            gen = build_chain_generator(m.chain_rates, self.states, self.x)
            self.rates = _FrozenRates(gen.Q)
            start = int(np.argmin(np.abs(self.states - m.y0)))
            self.s = np.full(self.n, start, dtype=np.int64)
            self.E = np.empty(self.n)
            self._fill(lambda rng, k: rng.exponential(size=k), self.E, self.rngs)
            return
        self.sigma1 = None if c.sigma1 is _zero else c.sigma1
        self.lower = m.fast_domain.lower if isinstance(m.fast_domain, HalfLine) else None
        self.engine = _JumpEngine(c.nu2, c.k1, self.x, c.compensate_fast)
        self.y = np.full(self.n, float(m.y0))
        self.clock = np.full(self.n, math.inf)
        if self.engine.rate > 0:
            self._fill(lambda rng, k: rng.exponential(1.0 / self.engine.rate, size=k),
                       self.clock, self.rngs)

    def _fill(self, draw, target, rngs):
        for sl, rng in zip(self.blocks, rngs):
            target[sl] = draw(rng, sl.stop - sl.start)

    def state(self) -> np.ndarray:
        if self.m.is_chain:
            return self.states[self.s]
        return self.y

    def _drift(self, y):
        d = perturbed_drift(self.m, self.x, y, self.p) + self.engine.drift(y)
        return d + 0.0 * y

    def _step_block(self, i, dt):
        sl, rng = self.blocks[i], self.rngs[i]
        if self.m.is_chain:
            s, E = self.s[sl], self.E[sl]
            _advance_chain(s, E, self.rates, dt, rng)
            return 0
        y = self.y[sl]
        y += self._drift(y) * dt
        if self.sigma1 is not None:
            y += self.sigma1(self.x, y) * math.sqrt(dt) * rng.standard_normal(y.size)
        clamps = 0
        if self.lower is not None:
            low = y < self.lower
            clamps = int(low.sum())
            y[low] = self.lower
        if self.engine.rate > 0:
            t_new = self.t + dt
            clock = self.clock[sl]
            due = np.flatnonzero(clock <= t_new)
            while due.size:
                y[due] += self.engine.sizes(rng, y[due])
                clock[due] += rng.exponential(1.0 / self.engine.rate, size=due.size)
                due = due[clock[due] <= t_new]
        return clamps

    def step(self, dt: float) -> None:
        counts = map_blocks(lambda i: self._step_block(i, dt), range(len(self.blocks)), self.workers)
        self.clamps += sum(counts)
        self.t += dt
        if not np.all(np.isfinite(self.state())):
            raise NumericFailure(f"fast process left the reals at t={self.t}")

    def select(self, idx) -> None:
        """Resample the population; clocks are redrawn (they are memoryless)."""
        idx = np.asarray(idx)
        if self.m.is_chain:
            self.s = self.s[idx]
            self._fill(lambda rng, k: rng.exponential(size=k), self.E, self.reset_rngs)
            return
        self.y = self.y[idx]
        if self.engine.rate > 0:
            self._fill(lambda rng, k: self.t + rng.exponential(1.0 / self.engine.rate, size=k),
                       self.clock, self.reset_rngs)


def fast_path_sampler(m: ModelSpec, x: float, p: float, n_paths: int, seed: int,
                      workers: int = 1) -> FastPathSampler:
    return FastPathSampler(m, x, p, n_paths, seed, workers)


# --- pre-limit simulation: general models -----------------------------------------

def _poisson_jump_sum(nu, k, x, y, rate_scale, dt, rng):
    """Sum of jump amplitudes over ``dt`` for every path; intensity ``nu * rate_scale``."""
    n = x.size
    if isinstance(nu, FiniteAtoms):
        out = np.zeros(n)
        for z, w in zip(nu.locations, nu.masses):
            cnt = rng.poisson(w * rate_scale * dt, size=n)
            if cnt.any():
                amp = z if is_identity(k) else k(x, y, z) + 0.0 * x
                out += cnt * amp
        return out
    if isinstance(nu, GammaDensity):
        if not is_identity(k):
            raise UnsupportedError("gamma jumps are simulated for the identity amplitude only")
        return rng.gamma(nu.a * rate_scale * dt, 1.0 / nu.b, size=n)
    if isinstance(nu, TruncatedPower):
        cnt = rng.poisson(nu.rate_above(0.0) * rate_scale * dt, size=n)
        total = int(cnt.sum())
        out = np.zeros(n)
        if total:
            owner = np.repeat(np.arange(n), cnt)
            z = nu.sample_above(rng, total, 1.0)
            amp = z if is_identity(k) else np.asarray(k(x[owner], y[owner], z), dtype=float)
            np.add.at(out, owner, amp)
        return out
    raise UnsupportedError(f"unsupported jump measure {type(nu).__name__}")


def _compensator(nu, k, x, y):
    """``int k(x, y, z) nu(dz)`` per path (zero for symmetric power laws)."""
    if nu is None:
        return 0.0
    if isinstance(nu, FiniteAtoms):
        if is_identity(k):
            return float(np.dot(nu.m, nu.z))
        return sum(w * (k(x, y, z) + 0.0 * x) for z, w in zip(nu.locations, nu.masses))
    if isinstance(nu, GammaDensity):
        return nu.a / nu.b
    if isinstance(nu, TruncatedPower):
        if not is_identity(k):
            raise UnsupportedError("compensated power-law jumps need the identity amplitude")
        return 0.0  # symmetric (principal value)
    raise UnsupportedError(f"unsupported jump measure {type(nu).__name__}")


def _check_supported(m: ModelSpec):
    c = m.coeffs
    for nu, k in ((c.nu1, c.k), (c.nu2, c.k1)):
        if isinstance(nu, GammaDensity) and not is_identity(k):
            raise UnsupportedError("gamma jumps are simulated for the identity amplitude only")
    if isinstance(c.nu1, TruncatedPower) and not is_identity(c.k):
        raise UnsupportedError("compensated power-law jumps need the identity amplitude")
    if c.compensate_fast and isinstance(c.nu2, TruncatedPower) and not is_identity(c.k1):
        raise UnsupportedError("compensated power-law jumps need the identity amplitude")


def simulate_general(m: ModelSpec, cfg: SimConfig) -> TerminalSample:
    """Euler-Maruyama for the pre-limit pair with jumps of intensity ``nu/eps``.

    ``dX = (b + eps b0) dt + sqrt(eps) sigma dW + eps k dN~``,
    ``dY = b1/eps dt + sigma1/sqrt(eps) dB + k1 dN2`` with ``B`` correlated to
    ``W`` through ``rho``.  Coefficients are frozen at the start of each step.
    A fast state leaving a half-line domain is put back on the boundary and
    counted under ``"clamps"``.
    """
    _check_supported(m)
    c, eps = m.coeffs, cfg.epsilon
    n_steps, dt = cfg.n_steps, cfg.dt
    dts = dt / cfg.substeps
    chain = m.is_chain
    lower = m.fast_domain.lower if isinstance(m.fast_domain, HalfLine) else None
    sig_zero, sig1_zero = c.sigma is _zero, c.sigma1 is _zero
    rho_perp = math.sqrt(max(0.0, 1.0 - c.rho ** 2))
    if chain:
        states = np.array(m.fast_domain.states, dtype=float)
        start = int(np.argmin(np.abs(states - m.y0)))

    def run(i):
        sl = block_slices(cfg.n_paths, BLOCK)[i]
        rng = stream(cfg.seed, _TAG_GENERAL, i)
        n = sl.stop - sl.start
        x = np.full(n, float(m.x0))
        clamps = 0
        if chain:
            s = np.full(n, start, dtype=np.int64)
            E = rng.exponential(size=n)
            rows = _PathRates(m.chain_rates, states, x, eps)
            y = states[s]
        else:
            y = np.full(n, float(m.y0))
        for k in range(n_steps):
            xis = None if sig_zero else rng.standard_normal((cfg.substeps, n))
            xi = None if sig_zero else xis.sum(axis=0) / math.sqrt(cfg.substeps)
            dx = (c.b(x, y) + eps * c.b0(x, y)) * dt
            if xi is not None:
                dx = dx + math.sqrt(eps * dt) * c.sigma(x, y) * xi
            if c.nu1 is not None:
                dx = dx + eps * _poisson_jump_sum(c.nu1, c.k, x, y, 1.0 / eps, dt, rng) \
                    - _compensator(c.nu1, c.k, x, y) * dt
            x_new = x + dx
            # fast component, advanced in substeps with x frozen at the step start
            if chain:
                rows.x = x
                _advance_chain(s, E, rows, dt, rng)
                y = states[s]
            else:
                for j in range(cfg.substeps):
                    dy = c.b1(x, y) / eps * dts
                    if not sig1_zero:
                        eta = rng.standard_normal(n)
                        if xis is not None:
                            eta = c.rho * xis[j] + rho_perp * eta
                        dy = dy + c.sigma1(x, y) * math.sqrt(dts / eps) * eta
                    if c.nu2 is not None:
                        dy = dy + _poisson_jump_sum(c.nu2, c.k1, x, y, 1.0 / eps, dts, rng)
                        if c.compensate_fast:
                            dy = dy - _compensator(c.nu2, c.k1, x, y) / eps * dts
                    y = y + dy
                    if lower is not None:
                        low = y < lower
                        if low.any():
                            clamps += int(low.sum())
                            y = np.where(low, lower, y)
            x = x_new + 0.0 * y
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
                raise NumericFailure(f"non-finite state at step {k}")
        return x, np.asarray(y, dtype=float) + 0.0 * x, {"clamps": clamps}

    parts = map_blocks(run, range(len(block_slices(cfg.n_paths, BLOCK))), cfg.workers)
    return _finish(parts, cfg, m.y0)


# --- gamma-OU stochastic volatility -----------------------------------------------

def simulate_bns(params: BnsParams, epsilon: float, cfg: SimConfig) -> TerminalSample:
    """Log-price and gamma-OU volatility with mean reversion ``1/eps`` on time scale 1.

    Per substep of length ``d`` the volatility decays exactly by ``e^{-d/eps}``
    and receives a Gamma(``a d/eps``, rate ``b``) increment placed at the
    midpoint of the substep (so it decays by ``e^{-d/(2 eps)}``), which makes
    the mean of the step exact to third order in ``d/eps``; the volatility
    stays nonnegative.  Given the volatility path, the log-price increment over a
    slow step is Gaussian with mean ``eps (r dt - I/2)`` and variance
    ``eps I``, where ``I`` is the exact integral of the decaying volatility
    over the step; this is the Euler step with the volatility integrated
    along the step instead of frozen at its left end.
    """
    if not math.isclose(epsilon, cfg.epsilon, rel_tol=0, abs_tol=0):
        raise ValueError(f"epsilon={epsilon} differs from cfg.epsilon={cfg.epsilon}")
    eps, a, b, r = float(epsilon), params.a, params.b, params.r
    n_steps, dt = cfg.n_steps, cfg.dt
    d = dt / cfg.substeps
    decay = math.exp(-d / eps)
    integ = -eps * math.expm1(-d / eps)  # int_0^d e^{-s/eps} ds
    half_decay = math.exp(-0.5 * d / eps)
    half_integ = -eps * math.expm1(-0.5 * d / eps)
    shape = a * d / eps

    def run(i):
        sl = block_slices(cfg.n_paths, BLOCK)[i]
        rng = stream(cfg.seed, _TAG_BNS, i)
        n = sl.stop - sl.start
        x = np.full(n, float(params.x0))
        y = np.full(n, float(params.y0))
        for k in range(n_steps):
            I = np.zeros(n)
            for _ in range(cfg.substeps):
                jump = rng.gamma(shape, 1.0 / b, size=n)
                I += y * integ + jump * half_integ
                y = y * decay + jump * half_decay
            assert y.min() >= 0.0, "gamma-OU volatility went negative"
            x = x + eps * (r * dt - 0.5 * I) + np.sqrt(eps * I) * rng.standard_normal(n)
        if not np.all(np.isfinite(x)):
            raise NumericFailure(f"non-finite log-price after {n_steps} steps")
        return x, y, {}

    parts = map_blocks(run, range(len(block_slices(cfg.n_paths, BLOCK))), cfg.workers)
    return _finish(parts, cfg, params.y0)


# --- self-regulating gene ----------------------------------------------------------

def simulate_gene(params: GeneParams, epsilon: float, cfg: SimConfig) -> TerminalSample:
    """Hybrid scheme for protein level ``X`` and promoter state ``Y``.

    Per substep: the promoter switches on exponential clocks with rates
    ``kappa1 x/eps`` and ``kappa_-1 x/eps`` frozen over the substep; ``X``
    takes an Euler step whose drift uses the promoter's occupation over the
    substep and whose diffusion coefficient is clipped at 0; protein jumps of
    ``+eps`` and ``-eps`` arrive at rate ``1/(2 eps)`` each and are suppressed
    while ``X <= eps``.  The symmetric jump law has no compensator.
    Counter ``"clipped"`` records negative diffusion coefficients clipped to
    zero, ``"suppressed"`` the jumps dropped by the guard.
    """
    if not math.isclose(epsilon, cfg.epsilon, rel_tol=0, abs_tol=0):
        raise ValueError(f"epsilon={epsilon} differs from cfg.epsilon={cfg.epsilon}")
    g, eps = params, float(epsilon)
    n_steps = cfg.n_steps
    d = cfg.dt / cfg.substeps
    values = np.array([0.0, 1.0])

    def rates(x, s_from, s_to):
        xp = np.maximum(x, 0.0)
        return g.kappa1 * xp if s_from < s_to else g.kappa_m1 * xp

    def run(i):
        sl = block_slices(cfg.n_paths, BLOCK)[i]
        rng = stream(cfg.seed, _TAG_GENE, i)
        n = sl.stop - sl.start
        x = np.full(n, float(g.x0))
        s = np.full(n, int(g.y0), dtype=np.int64)
        E = rng.exponential(size=n)
        rows = _PathRates(rates, values, x, eps)
        clipped = suppressed = 0
        for k in range(n_steps * cfg.substeps):
            occ = np.zeros(n)
            rows.x = x
            _advance_chain(s, E, rows, d, rng, occupation=occ, values=values)
            ybar = occ / d
            var = g.kappa2 * ybar + g.kappa3 * x
            neg = var < 0
            if neg.any():
                clipped += int(neg.sum())
                var = np.maximum(var, 0.0)
            up = rng.poisson(d / (2 * eps), size=n)
            down = rng.poisson(d / (2 * eps), size=n)
            guard = x > eps
            suppressed += int(((up + down) * ~guard).sum())
            jumps = eps * (up - down) * guard
            x = x + (g.kappa2 * ybar - g.kappa3 * x) * d \
                + np.sqrt(eps * var * d) * rng.standard_normal(n) + jumps
            if not np.all(np.isfinite(x)):
                raise NumericFailure(f"non-finite protein level at substep {k}")
        return x, values[s], {"clipped": clipped, "suppressed": suppressed}

    parts = map_blocks(run, range(len(block_slices(cfg.n_paths, BLOCK))), cfg.workers)
    return _finish(parts, cfg, g.y0)


# --- estimators --------------------------------------------------------------------

@dataclass(frozen=True)
class UEstimate:
    u_hat: float
    stderr: float


@dataclass(frozen=True)
class TailEstimate:
    log_prob_scaled: float
    n_hits: int


def estimate_u_eps(s: TerminalSample, h: Callable, epsilon: float) -> UEstimate:
    """``eps ln mean exp(h(x_T)/eps)`` computed as ``M + eps ln mean exp((h - M)/eps)``.

    ``M = max h`` keeps every exponent nonpositive; a constant ``h`` returns
    that constant exactly.  The standard error is the delta-method error of
    the sample mean carried through ``eps ln``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    hv = np.asarray(h(s.x_T), dtype=float) + 0.0 * s.x_T
    if not np.all(np.isfinite(hv)):
        raise ValueError("h must be finite (bounded) on the sample")
    top = float(hv.max())
    w = np.exp((hv - top) / epsilon)
    mean_w = float(w.mean())
    u = top + epsilon * math.log(mean_w)
    n = len(w)
    se = epsilon * float(np.std(w, ddof=1)) / math.sqrt(n) / mean_w if n > 1 else math.inf
    return UEstimate(u, se)


def estimate_tail(s: TerminalSample, threshold: float, epsilon: float) -> TailEstimate:
    """``eps ln (fraction of x_T >= threshold)``; ``-inf`` with no hits."""
    hits = int(np.count_nonzero(s.x_T >= threshold))
    if hits == 0:
        return TailEstimate(-math.inf, 0)
    return TailEstimate(epsilon * math.log(hits / s.n_paths), hits)


# --- exponential tightness ------------------------------------------------------

def _f(x):
    return np.log1p(x * x)


def _df(x):
    return 2 * x / (1 + x * x)


def _d2f(x):
    return 2 * (1 - x * x) / (1 + x * x) ** 2


def _slow_jump_term(m: ModelSpec, x, y, eps):
    """``int (e^{(f(x + eps k) - f(x))/eps} - 1 - f'(x) k) nu1(dz)``."""
    c = m.coeffs
    if c.nu1 is None:
        return 0.0
    p = _df(x)

    def g(z):
        kz = float(c.k(x, y, z))
        e = (_f(x + eps * kz) - _f(x)) / eps
        if e > 700:
            raise NumericFailure(f"exponent overflow in the jump term at x={x}, z={z}")
        return math.expm1(e) - p * kz
    return integrate_against(c.nu1, g)


def _tilted_zeta(m: ModelSpec, zeta, x, y, p):
    """``e^{-zeta} L1^{x,p} e^{zeta}`` at ``y``."""
    c = m.coeffs
    if m.is_chain:
        gen = build_chain_generator(m.chain_rates, m.fast_domain.states, x)
        states = gen.states
        i = int(np.argmin(np.abs(states - y)))
        z = np.array([float(zeta(s)) for s in states])
        diff = z - z[i]
        if diff.max() > 700:
            raise NumericFailure(f"e^zeta overflows between chain states at x={x}")
        return float(np.dot(gen.Q[i], np.expm1(diff)))
    h = 1e-4 * (1 + abs(y))
    z0, zp, zm = float(zeta(y)), float(zeta(y + h)), float(zeta(y - h))
    d1 = (zp - zm) / (2 * h)
    d2 = (zp - 2 * z0 + zm) / (h * h)
    out = float(perturbed_drift(m, x, y, p)) * d1 \
        + 0.5 * float(c.sigma1(x, y)) ** 2 * (d2 + d1 * d1)
    if c.nu2 is not None:
        comp = 1.0 if c.compensate_fast else 0.0

        def g(zz):
            k1 = float(c.k1(x, y, zz))
            e = float(zeta(y + k1)) - z0
            if e > 700:
                # harmless at far quadrature nodes where the density is negligible
                if e + log_density(c.nu2, zz) > -30:
                    raise NumericFailure(f"jump integral of e^zeta diverges at y={y}")
                e = 700.0
            return math.expm1(e) - comp * k1 * d1
        out += integrate_against(c.nu2, g)
    return out


def tightness_diagnostic(m: ModelSpec, zeta: LyapunovSpec, epsilon_list, grid) -> dict:
    """Sup over a grid of the upper bound for ``H_eps f_eps``, ``f_eps = f + eps zeta``.

    ``f(x) = ln(1 + x^2)``.  The bound is ``b f' + sigma^2 f'^2/2
    + eps (b0 f' + sigma^2 f''/2)`` plus the slow jump term and
    ``e^{-zeta} L1^{x,f'} e^{zeta}``.  ``grid`` is
    ``((x_lo, x_hi, nx), (y_lo, y_hi, ny))``; for a chain the ``y`` range is
    replaced by the chain states.  Returns ``{eps: sup}``.
    """
    c = m.coeffs
    (xlo, xhi, nx), (ylo, yhi, ny) = grid
    xs = np.linspace(xlo, xhi, int(nx))
    ys = np.array(m.fast_domain.states, dtype=float) if m.is_chain else np.linspace(ylo, yhi, int(ny))
    if isinstance(m.fast_domain, HalfLine):
        ys = ys[ys >= m.fast_domain.lower]
    # the zeta term does not depend on eps
    tz = {}
    for x in xs:
        for y in ys:
            tz[(x, y)] = _tilted_zeta(m, zeta.zeta, float(x), float(y), float(_df(x)))
    out = {}
    for eps in epsilon_list:
        best = -math.inf
        for x in xs:
            fp, fpp = float(_df(x)), float(_d2f(x))
            for y in ys:
                xf, yf = float(x), float(y)
                s2 = float(c.sigma(xf, yf)) ** 2
                val = (float(c.b(xf, yf)) * fp + 0.5 * s2 * fp * fp
                       + eps * (float(c.b0(xf, yf)) * fp + 0.5 * s2 * fpp)
                       + _slow_jump_term(m, xf, yf, eps) + tz[(x, y)])
                best = max(best, val)
        out[float(eps)] = best
    return out
