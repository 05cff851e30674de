"""The averaged Hamiltonian: principal eigenvalue of ``L1^{x,p} + V``.

Four routes to the same number, kept independent so that they check each
other:

* Perron root of ``Q + diag(V)`` (power iteration on ``I + Delta M``, with
  a shift-and-invert polish for large grids);
* the Donsker-Varadhan sup over occupation measures (2 or 3 states);
* Rayleigh-Ritz on the pi-symmetrised matrix (reversible chains);
* a Feynman-Kac average over simulated fast paths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import scenarios
from .errors import NumericFailure, UnsupportedError
from .fastgen import FastGenerator, GridSpec, check_reversibility, fast_generator
from .model import ModelSpec, potential

__all__ = [
    "EigenResult", "HamiltonianHandle", "ClosedForm", "MatrixEigen", "FeynmanKac",
    "principal_eigenvalue", "hamiltonian_eval", "dv_rate_J", "dv_sup", "rayleigh_ritz",
    "feynman_kac_estimate", "FKEstimate", "continuity_scan", "ContinuityReport",
    "convexity_check", "bns_handle", "gene_handle", "matrix_handle", "fk_handle",
]

RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class EigenResult:
    lam: float
    eigenfunction: np.ndarray
    iterations: int
    residual: float
    method: str = "power"


def _residual(M, phi, lam):
    return float(np.max(np.abs(M @ phi - lam * phi)) / np.max(np.abs(phi)))


def _rayleigh(M, phi):
    return float(phi @ (M @ phi) / (phi @ phi))


def _finish(M, phi, its, method):
    if np.any(~np.isfinite(phi)) or np.any(phi <= 0):
        raise NumericFailure("eigenvector lost positivity; the generator may be reducible",
                             partial=phi)
    phi = phi / phi.max()
    lam = _rayleigh(M, phi)
    return EigenResult(lam, phi, its, _residual(M, phi, lam), method)


def _power(M, max_iter, tol):
    """Power iteration on ``A = I + Delta M`` with periodic squaring of ``A``.

    Squaring keeps ``A`` entrywise nonnegative, so the iterate stays positive;
    each squaring doubles the effective time step.
    """
    n = M.shape[0]
    delta = 1.0 / (2.0 * np.max(np.abs(np.diag(M))))
    A = np.eye(n) + delta * M
    phi = np.ones(n)
    lam_old = math.inf
    its = 0
    since_square = 0
    while its < max_iter:
        phi = A @ phi
        phi /= phi.max()
        its += 1
        since_square += 1
        lam = _rayleigh(M, phi)
        if abs(lam - lam_old) <= tol * max(1.0, abs(lam)):
            res = _residual(M, phi, lam)
            if res <= 0.1 * RESIDUAL_TOL:
                return phi, its
        lam_old = lam
        if since_square >= 50 and n <= 4000:
            A = A @ A
            A /= A.max()
            since_square = 0
    raise NumericFailure(f"power iteration did not converge in {max_iter} steps",
                         partial=_residual(M, phi, _rayleigh(M, phi)))


def _noda(M, phi, max_iter, tol):
    """Shifted inverse iteration with the Collatz-Wielandt upper bound as shift.

    For an irreducible essentially nonnegative ``M`` and a shift above the
    Perron root, ``(sigma I - M)^{-1}`` is entrywise positive, so positivity
    is kept whatever the start vector.  Slow from a poor start, but safe.
    """
    n = M.shape[0]
    lam_old = math.inf
    for its in range(1, max_iter + 1):
        Mphi = M @ phi
        ratio = Mphi / phi
        hi = float(ratio.max())
        lam = float(phi @ Mphi / (phi @ phi))
        if abs(lam - lam_old) <= tol * max(1.0, abs(lam)) and \
                _residual(M, phi, lam) <= 0.01 * RESIDUAL_TOL:
            return phi, its
        lam_old = lam
        shift = hi + 1e-12 * max(1.0, abs(hi))
        try:
            w = np.linalg.solve(shift * np.eye(n) - M, phi)
        except np.linalg.LinAlgError:
            return phi, its
        if not np.all(w > 0):
            return phi, its
        phi = w / w.max()
    return phi, max_iter


def _shift_invert(M, Q, V, max_iter, tol):
    """Inverse iteration started from the shift ``<V, pi>``.

    ``<V, pi>`` (``pi`` stationary for ``Q``) is a lower bound for the Perron
    root, usually a close one.  Once the iterate turns positive the shift
    follows the Rayleigh quotient.  A positive eigenvector can only be the
    Perron vector, so the result is accepted only if it is positive.
    """
    n = M.shape[0]
    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        pi = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None, 0
    shift = float(pi @ V)
    phi = np.ones(n)
    lam_old = math.inf
    eye = np.eye(n)
    for its in range(1, max_iter + 1):
        try:
            w = np.linalg.solve(shift * eye - M, phi)
        except np.linalg.LinAlgError:
            shift += 1e-9 * max(1.0, abs(shift))
            continue
        w *= math.copysign(1.0, w.sum())
        phi = w / np.max(np.abs(w))
        Mphi = M @ phi
        lam = float(phi @ Mphi / (phi @ phi))
        positive = bool(np.all(phi > 0))
        if positive and abs(lam - lam_old) <= tol * max(1.0, abs(lam)) and \
                _residual(M, phi, lam) <= 0.01 * RESIDUAL_TOL:
            return phi, its
        lam_old = lam
        if positive:
            shift = lam + 1e-10 * max(1.0, abs(lam))
    return None, max_iter


def principal_eigenvalue(G: FastGenerator, V_vec, method: str = "auto",
                         max_iter: int = 200_000, tol: float = 1e-13) -> EigenResult:
    """Perron root and positive eigenvector of ``M = Q + diag(V_vec)``.

    ``method``: ``"power"`` (power iteration on ``I + Delta M`` with
    ``Delta = 1/(2 max|M_ii|)``), ``"shift-invert"`` (inverse iteration,
    falling back to the always-positive Collatz-Wielandt shift), or
    ``"auto"`` (power up to 200 states, shift-invert above).
    """
    V = np.asarray(V_vec, dtype=float)
    if V.shape != (G.n,):
        raise ValueError("V_vec must align with the generator states")
    if not np.all(np.isfinite(V)):
        raise ValueError("V_vec must be finite")
    if np.max(np.abs(V)) > 1e150:
        raise NumericFailure(f"potential of size {np.max(np.abs(V)):.3e} overflows the iteration")
    M = G.Q + np.diag(V)
    n = G.n
    if n == 1:
        return EigenResult(float(V[0]), np.ones(1), 0, 0.0, "trivial")
    diag_max = float(np.max(np.abs(np.diag(M))))
    if diag_max == 0.0:
        if np.any(G.Q != 0):
            raise NumericFailure("inconsistent generator")
        raise NumericFailure("zero generator is reducible", partial=0.0)
    if method == "auto":
        method = "power" if n <= 200 else "shift-invert"
    if method == "power":
        phi, its = _power(M, max_iter, tol)
    elif method == "shift-invert":
        phi, its = _shift_invert(M, np.asarray(G.Q), V, 30, tol)
        if phi is None:
            phi, more = _noda(M, np.ones(n), 500, tol)
            its += more
    else:
        raise ValueError(f"unknown method {method!r}")
    res = _finish(M, phi, its, method)
    if res.residual > RESIDUAL_TOL:
        raise NumericFailure(f"eigen residual {res.residual:.3e} above {RESIDUAL_TOL:.0e}",
                             partial=res.lam)
    return res


# --- Donsker-Varadhan -------------------------------------------------------------

def _dv_two_state(Q, mu):
    return (math.sqrt(mu[0] * Q[0, 1]) - math.sqrt(mu[1] * Q[1, 0])) ** 2


def _dv_descent(Q, mu, tol, max_sweeps):
    """Coordinate descent for ``inf_w sum_i mu_i sum_j Q_ij e^{w_j - w_i}``.

    States outside the support of ``mu`` carry ``g = 0`` (the infimum sends
    their log-weight to ``-inf``).  Each coordinate step is exact:
    ``F(w_k) = A_k e^{w_k} + B_k e^{-w_k} + const``.
    """
    S = np.flatnonzero(mu > 0)
    Qs = Q[np.ix_(S, S)]
    ms = mu[S]
    k = S.size
    if k == 1:
        return -float(Q[S[0], S[0]])
    off = Qs - np.diag(np.diag(Qs))
    w = np.zeros(k)
    anchor = int(np.argmax(ms))
    W_CAP = 50.0

    def grad():
        e = np.exp(w)
        A = (ms / e) @ off          # A_k = sum_i mu_i Q_ik e^{-w_i}
        B = ms * (off @ e)          # B_k = mu_k sum_j Q_kj e^{w_j}
        return e * A - B / e, A, B

    for sweep in range(max_sweeps):
        for kk in range(k):
            if kk == anchor:
                continue
            e = np.exp(w)
            A = float((ms / e) @ off[:, kk])
            B = float(ms[kk] * (off[kk] @ e))
            if A <= 0 and B <= 0:
                continue
            if A <= 0:
                w[kk] = W_CAP
            elif B <= 0:
                w[kk] = -W_CAP
            else:
                w[kk] = float(np.clip(0.5 * math.log(B / A), -W_CAP, W_CAP))
        g, _, _ = grad()
        g[anchor] = 0.0
        free = np.abs(w) < W_CAP
        if np.max(np.abs(g[free]), initial=0.0) <= tol:
            break
    else:
        raise NumericFailure("Donsker-Varadhan descent did not converge")
    e = np.exp(w)
    F = float(ms @ np.diag(Qs)) + float(ms @ ((off @ e) / e))
    return -F


def dv_rate_J(G: FastGenerator, mu, tol: float = 1e-10, max_sweeps: int = 100_000) -> float:
    """``J(mu) = -inf_{g > 0} sum_i mu_i (Q g)_i / g_i``.

    For two states the closed form ``(sqrt(mu0 q01) - sqrt(mu1 q10))^2`` is
    returned after being cross-checked against the descent.
    """
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (G.n,) or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-9:
        raise ValueError("mu must be a probability vector on the generator states")
    Q = np.asarray(G.Q)
    J = _dv_descent(Q, mu, tol, max_sweeps)
    if G.n == 2:
        closed = _dv_two_state(Q, mu)
        if abs(closed - J) > 1e-8 * max(1.0, closed):
            raise NumericFailure(f"closed form {closed} and descent {J} disagree", partial=closed)
        J = closed
    if J < -1e-10:
        raise NumericFailure(f"negative Donsker-Varadhan value {J}", partial=J)
    return max(J, 0.0)


_GOLD = (math.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo, hi, tol=1e-12, max_iter=300):
    """Golden-section maximiser of a unimodal ``f`` on ``[lo, hi]``; returns ``(x, f(x))``."""
    a, b = lo, hi
    c = b - _GOLD * (b - a)
    d = a + _GOLD * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _GOLD * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLD * (b - a)
            fd = f(d)
    return (c, fc) if fc >= fd else (d, fd)


def dv_sup(G: FastGenerator, V_vec, scan_n: int = 201) -> float:
    """``sup_mu (<V, mu> - J(mu))`` by a simplex scan plus golden-section polish."""
    V = np.asarray(V_vec, dtype=float)
    if G.n > 3:
        raise UnsupportedError("dv_sup handles at most 3 states; use principal_eigenvalue")
    if G.n == 1:
        return float(V[0])

    def obj(mu):
        return float(V @ mu) - dv_rate_J(G, mu)

    if G.n == 2:
        f = lambda s: obj(np.array([1.0 - s, s]))
        s_grid = np.linspace(0.0, 1.0, scan_n)
        vals = [f(s) for s in s_grid]
        i = int(np.argmax(vals))
        lo, hi = s_grid[max(i - 1, 0)], s_grid[min(i + 1, scan_n - 1)]
        _, best = golden_max(f, lo, hi, tol=1e-13)
        return max(best, vals[i])

    # three states: scan (s1, s2) with s0 = 1 - s1 - s2, then alternate 1-D polishes
    ticks = np.linspace(0.0, 1.0, scan_n)
    best, arg = -math.inf, (0.0, 0.0)
    for s1 in ticks:
        for s2 in ticks:
            if s1 + s2 > 1.0 + 1e-15:
                break
            v = obj(np.array([max(1.0 - s1 - s2, 0.0), s1, s2]))
            if v > best:
                best, arg = v, (s1, s2)
    s1, s2 = arg
    step = 1.0 / (scan_n - 1)
    for _ in range(60):
        prev = best
        f1 = lambda u: obj(np.array([max(1.0 - u - s2, 0.0), u, s2]))
        s1, best = golden_max(f1, max(0.0, s1 - step), min(1.0 - s2, s1 + step), tol=1e-12)
        f2 = lambda u: obj(np.array([max(1.0 - s1 - u, 0.0), s1, u]))
        s2, best = golden_max(f2, max(0.0, s2 - step), min(1.0 - s1, s2 + step), tol=1e-12)
        step = max(step / 2, 1e-6)
        if abs(best - prev) < 1e-13:
            break
    return best


def rayleigh_ritz(G: FastGenerator, pi, V_vec) -> float:
    """Top eigenvalue of ``S_ij = sqrt(pi_i/pi_j) Q_ij + delta_ij V_i`` (reversible ``G``)."""
    rep = check_reversibility(G, pi)
    if not rep.is_reversible:
        raise UnsupportedError(
            f"generator is not reversible (violation {rep.max_violation:.2e}); "
            "use principal_eigenvalue")
    pi = np.asarray(pi, dtype=float)
    if np.any(pi <= 0):
        raise UnsupportedError("Rayleigh-Ritz needs pi > 0 everywhere")
    r = np.sqrt(pi)
    S = (r[:, None] / r[None, :]) * np.asarray(G.Q) + np.diag(np.asarray(V_vec, dtype=float))
    S = 0.5 * (S + S.T)
    return float(linalg.eigvalsh(S)[-1])


# --- handles ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClosedForm:
    tag: str


@dataclass(frozen=True)
class MatrixEigen:
    model: ModelSpec
    grid: Optional[GridSpec] = None
    method: str = "auto"


@dataclass(frozen=True)
class FeynmanKac:
    model: ModelSpec
    T: float = 100.0
    dt: float = 1e-3
    n_paths: int = 20_000
    seed: int = 0


@dataclass(frozen=True)
class HamiltonianHandle:
    """``(x, p) -> H(x, p)`` with a backend tag and the open interval of finite ``p``.

    ``p_domain`` is ``(lo, hi)``; values outside are ``+inf``.  ``vector_eval``,
    when present, evaluates whole arrays at once.
    """

    backend: object
    eval: Callable
    p_domain: tuple = (-math.inf, math.inf)
    x_independent: bool = False
    vector_eval: Optional[Callable] = None
    description: str = ""

    def inside(self, p) -> bool:
        return self.p_domain[0] < p < self.p_domain[1]


def hamiltonian_eval(h: HamiltonianHandle, x: float, p: float) -> float:
    if p == 0:
        return 0.0
    if not h.inside(p):
        return math.inf
    return float(h.eval(x, p))


def hamiltonian_eval_many(h: HamiltonianHandle, x, p) -> np.ndarray:
    """Vectorised evaluation; loops over points when the backend is scalar-only."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    x, p = np.broadcast_arrays(x, p)
    if h.vector_eval is not None:
        out = np.asarray(h.vector_eval(x, p), dtype=float)
    else:
        out = np.array([hamiltonian_eval(h, xi, pi) for xi, pi in zip(x.ravel(), p.ravel())])
        out = out.reshape(x.shape)
    lo, hi = h.p_domain
    out = np.where((p > lo) & (p < hi), out, math.inf)
    return np.where(p == 0, 0.0, out)


def bns_handle(a: float = 1.0, b: float = 1.0) -> HamiltonianHandle:
    bound = scenarios.bns_finite_bound(b)
    return HamiltonianHandle(
        ClosedForm("bns"),
        lambda x, p: scenarios.bns_hamiltonian(p, a, b),
        (-bound, bound), True,
        lambda x, p: scenarios.bns_hamiltonian(p, a, b),
        f"gamma-OU volatility, a={a}, b={b}")


def gene_handle(g: scenarios.GeneParams, variant: str = "consistent") -> HamiltonianHandle:
    fn = {"consistent": scenarios.gene_hamiltonian_consistent,
          "printed": scenarios.gene_hamiltonian_printed,
          "pdmp": scenarios.gene_pdmp_hamiltonian}.get(variant)
    if fn is None:
        raise ValueError(f"unknown gene variant {variant!r}")
    vec = np.vectorize(lambda x, p: fn(x, p, g), otypes=[float])
    return HamiltonianHandle(ClosedForm(f"gene-{variant}"), lambda x, p: fn(x, p, g),
                             vector_eval=vec, description=f"gene switch ({variant})")


def matrix_handle(m: ModelSpec, grid: Optional[GridSpec] = None, method: str = "auto",
                  p_domain: tuple = (-math.inf, math.inf)) -> HamiltonianHandle:
    def ev(x, p):
        G = fast_generator(m, x, p, grid)
        V = potential(m, x, p)(G.states)
        if np.any(np.isinf(V)):
            return math.inf
        return principal_eigenvalue(G, V, method=method).lam
    return HamiltonianHandle(MatrixEigen(m, grid, method), ev, p_domain,
                             description=f"Perron root, model {m.name}")


def fk_handle(m: ModelSpec, T=100.0, dt=1e-3, n_paths=20_000, seed=0, **kw) -> HamiltonianHandle:
    def ev(x, p):
        return feynman_kac_estimate(m, x, p, T, dt, n_paths, seed, **kw).lambda_hat
    return HamiltonianHandle(FeynmanKac(m, T, dt, n_paths, seed), ev,
                             description=f"Feynman-Kac, model {m.name}")


# --- Feynman-Kac ---------------------------------------------------------------------

@dataclass(frozen=True)
class FKEstimate:
    lambda_hat: float
    stderr: float
    method: str
    n_paths: int
    T: float
    dt: float


def feynman_kac_estimate(m: ModelSpec, x: float, p: float, T: float, dt: float,
                         n_paths: int, seed: int, method: str = "resampled",
                         resample_every: float = 0.05, n_batches: int = 20,
                         workers: int = 1) -> FKEstimate:
    """``T^{-1} ln E exp(int_0^T V(Y_s) ds)`` along the frozen-``x`` tilted fast process.

    ``method="plain"`` averages the exponential weights of independent paths
    (log-sum-exp).  Its error grows exponentially with ``T`` once the tilted
    path law separates from the untilted one, so the default
    ``"resampled"`` variant redistributes walkers in proportion to their
    weights every ``resample_every`` time units and multiplies the mean
    weights, which estimates the same expectation without that collapse.
    The standard error comes from ``n_batches`` consecutive time blocks
    (resampled) or the delta method (plain).
    """
    from .mc import fast_path_sampler  # local import: mc depends on this module's types
    if T <= 0 or dt <= 0 or n_paths < 2:
        raise ValueError("need T > 0, dt > 0 and n_paths >= 2")
    Vfun = potential(m, x, p)
    n_steps = int(round(T / dt))
    sampler = fast_path_sampler(m, x, p, n_paths, seed, workers=workers)
    if method == "plain":
        logw = np.zeros(n_paths)
        for _ in range(n_steps):
            y = sampler.state()
            logw += Vfun(y) * dt
            sampler.step(dt)
        if not np.all(np.isfinite(logw)):
            raise NumericFailure("non-finite exponent in Feynman-Kac accumulator")
        top = logw.max()
        w = np.exp(logw - top)
        mean_w = w.mean()
        lam = (top + math.log(mean_w)) / T
        se = float(np.std(w, ddof=1) / math.sqrt(n_paths) / mean_w / T)
        return FKEstimate(lam, se, "plain", n_paths, T, dt)
    if method != "resampled":
        raise ValueError(f"unknown method {method!r}")
    every = max(1, int(round(resample_every / dt)))
    res_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0xFC,))))
    log_means = []
    logw = np.zeros(n_paths)
    for k in range(n_steps):
        logw += Vfun(sampler.state()) * dt
        sampler.step(dt)
        if (k + 1) % every == 0 or k == n_steps - 1:
            if not np.all(np.isfinite(logw)):
                raise NumericFailure(f"non-finite exponent at step {k}")
            top = logw.max()
            w = np.exp(logw - top)
            log_means.append((top + math.log(w.mean()), (k + 1) * dt))
            # systematic resampling: one uniform, ordered reduction
            c = np.cumsum(w)
            u = (res_rng.random() + np.arange(n_paths)) * (c[-1] / n_paths)
            idx = np.minimum(np.searchsorted(c, u, side="right"), n_paths - 1)
            sampler.select(idx)
            logw[:] = 0.0
    inc = np.array([v for v, _ in log_means])
    times = np.array([t for _, t in log_means])
    lam = float(inc.sum() / T)
    # batch means over equal time blocks
    edges = np.linspace(0.0, T, n_batches + 1)
    block = np.searchsorted(edges[1:-1], times - 1e-12 * T, side="right")
    rates = np.array([inc[block == b].sum() / (edges[b + 1] - edges[b]) for b in range(n_batches)])
    se = float(np.std(rates, ddof=1) / math.sqrt(n_batches))
    return FKEstimate(lam, se, "resampled", n_paths, T, dt)


# --- hypothesis checks -------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuityReport:
    x_nodes: np.ndarray
    p_nodes: np.ndarray
    values: np.ndarray
    modulus_x: float
    modulus_p: float
    max_jump: float


def continuity_scan(h: HamiltonianHandle, x_box, p_box, mesh: float) -> ContinuityReport:
    """Largest neighbour difference of ``H`` on a mesh over the box, per unit mesh."""
    if not (h.inside(p_box[0]) or p_box[0] == 0) or not (h.inside(p_box[1]) or p_box[1] == 0):
        raise ValueError("p_box must lie inside the finite domain of the Hamiltonian")
    xs = np.arange(x_box[0], x_box[1] + 0.5 * mesh, mesh)
    ps = np.arange(p_box[0], p_box[1] + 0.5 * mesh, mesh)
    X, P = np.meshgrid(xs, ps, indexing="ij")
    H = hamiltonian_eval_many(h, X, P)
    if not np.all(np.isfinite(H)):
        raise ValueError("infinite Hamiltonian inside p_box: finite domain misdeclared")
    dx = np.abs(np.diff(H, axis=0)) if xs.size > 1 else np.zeros((1, 1))
    dp = np.abs(np.diff(H, axis=1)) if ps.size > 1 else np.zeros((1, 1))
    mx, mp = float(dx.max()), float(dp.max())
    return ContinuityReport(xs, ps, H, mx / mesh, mp / mesh, max(mx, mp))


def convexity_check(h: HamiltonianHandle, x: float, p_grid) -> float:
    """Smallest centred second difference of ``p -> H(x, p)`` on a uniform grid."""
    p = np.asarray(p_grid, dtype=float)
    if p.size < 3:
        raise ValueError("need at least three p values")
    d = np.diff(p)
    if np.max(np.abs(d - d[0])) > 1e-9 * max(1.0, abs(d[0])):
        raise ValueError("p_grid must be uniform")
    H = hamiltonian_eval_many(h, np.full_like(p, x), p)
    if not np.all(np.isfinite(H)):
        raise ValueError("p_grid leaves the finite domain")
    return float(np.min(H[2:] - 2 * H[1:-1] + H[:-2]))
