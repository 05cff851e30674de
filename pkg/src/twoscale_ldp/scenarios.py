"""The two worked examples: gamma-OU stochastic volatility and a gene switch.

Stochastic volatility (``bns_*``)
    log-price ``X`` with volatility ``Y`` following a gamma-driven OU process
    whose mean reversion is fast compared with the (short) maturity.
Self-regulating gene (``gene_*``)
    protein level ``X`` driven by a promoter ``Y`` in {0, 1} that switches
    at rates proportional to ``X``.

Every closed form here is an independent function of its parameters so that
the generic eigenvalue machinery can be checked against it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedError
from .levy import FiniteAtoms, GammaDensity
from .model import CoefficientSet, FiniteSet, HalfLine, ModelSpec

__all__ = [
    "BnsParams", "GeneParams",
    "bns_model", "bns_hamiltonian", "bns_rate", "bns_rate_negative_branch_as_printed",
    "bns_finite_bound", "otm_call_asymptote",
    "gene_model", "gene_potentials", "gene_rates",
    "gene_hamiltonian_printed", "gene_hamiltonian_consistent", "gene_pdmp_hamiltonian",
    "gene_hamiltonian_undamped_eigen", "two_state_perron",
]


# --- stochastic volatility ---------------------------------------------------------

@dataclass(frozen=True)
class BnsParams:
    a: float = 1.0
    b: float = 1.0
    r: float = 0.0
    x0: float = 0.0
    y0: float = 1.0
    K: float = math.e ** 0.5
    t: float = 1.0

    def __post_init__(self):
        for name in ("a", "b", "K", "t"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"BnsParams.{name} must be positive, got {v}")
        if not (math.isfinite(self.y0) and self.y0 >= 0):
            raise ValueError(f"BnsParams.y0 must be nonnegative, got {self.y0}")
        if not (math.isfinite(self.r) and math.isfinite(self.x0)):
            raise ValueError("BnsParams.r and x0 must be finite")


def bns_model(params: BnsParams) -> ModelSpec:
    """Limit-scale coefficients: ``b = 0``, ``b0 = r - y/2``, ``sigma^2 = y``,
    fast drift ``-y`` and uncompensated gamma jumps."""
    r = params.r
    coeffs = CoefficientSet(
        b0=lambda x, y: r - 0.5 * y + 0.0 * x,
        sigma=lambda x, y: np.sqrt(np.maximum(y, 0.0)) + 0.0 * x,
        b1=lambda x, y: -y + 0.0 * x,
        nu2=GammaDensity(params.a, params.b),
        compensate_fast=False,
    )
    return ModelSpec(coeffs, params.x0, params.y0, HalfLine(0.0), name="bns")


def bns_finite_bound(b: float) -> float:
    """``sqrt(2 b)``: the Hamiltonian is finite exactly for ``|p|`` below this."""
    return math.sqrt(2.0 * b)


def bns_hamiltonian(p, a: float, b: float):
    """``a ln(1 + p^2/(2b - p^2))`` for ``p^2 < 2b``, ``+inf`` otherwise.

    Written as ``-a ln(1 - p^2/(2b))`` for accuracy; vectorised over ``p``.
    """
    p = np.asarray(p, dtype=float)
    s = p * p / (2.0 * b)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s < 1.0, -a * np.log1p(-np.minimum(s, 1.0)), math.inf)
    return out if out.ndim else float(out)


def _bns_rate_positive(q, a, b):
    root = np.sqrt(a * a + 2 * b * q * q)
    return (-a + root - a * np.log(2 * b)
            + a * np.log(-2 * a * a / (q * q) + 2 * a * root / (q * q)))


def bns_rate(q, a: float, b: float):
    """Legendre transform of :func:`bns_hamiltonian`.

    The positive branch is used for ``|q|``: the Hamiltonian is even, so the
    transform is even too.  For small ``|q|`` the argument of the last log
    suffers cancellation, so there it is rewritten as
    ``2 b / (a + sqrt(a^2 + 2 b q^2))``, which is algebraically the same.
    """
    q = np.abs(np.asarray(q, dtype=float))
    root = np.sqrt(a * a + 2 * b * q * q)
    with np.errstate(divide="ignore", invalid="ignore"):
        # -2a^2/q^2 + 2a root/q^2 = 2a (root - a)/q^2 = 4ab/(root + a)
        val = -a + root - a * np.log(2 * b) + a * np.log(4 * a * b / (root + a))
    val = np.where(q == 0, 0.0, np.maximum(val, 0.0))
    return val if val.ndim else float(val)


def bns_rate_as_printed(q, a: float, b: float) -> float:
    """The three-branch closed form evaluated literally (scalar)."""
    q = float(q)
    if q > 0:
        return float(_bns_rate_positive(q, a, b))
    if q == 0:
        return 0.0
    return bns_rate_negative_branch_as_printed(q, a, b)


def bns_rate_negative_branch_as_printed(q: float, a: float, b: float) -> float:
    """The literal ``q < 0`` branch; its log argument is negative, so this is NaN."""
    root = math.sqrt(a * a + 2 * b * q * q)
    arg = -2 * a * a / (q * q) - 2 * a * root / (q * q)
    if arg <= 0:
        return math.nan
    return -a - root - a * math.log(2 * b) + a * math.log(arg)


def otm_call_asymptote(params: BnsParams) -> float:
    """``lim eps log E[S - K]^+ = -t Lbar((x0 - ln K)/t)`` for an out-of-the-money call."""
    if not math.exp(params.x0) < params.K:
        raise ValueError("call is not out of the money: need exp(x0) < K")
    q = (params.x0 - math.log(params.K)) / params.t
    return -params.t * bns_rate(q, params.a, params.b)


# --- gene switch ------------------------------------------------------------------

@dataclass(frozen=True)
class GeneParams:
    kappa1: float = 1.0
    kappa_m1: float = 1.0
    kappa2: float = 1.0
    kappa3: float = 1.0
    x0: float = 0.5
    y0: float = 1.0
    t: float = 1.0

    def __post_init__(self):
        for name in ("kappa1", "kappa_m1", "kappa2", "kappa3", "x0", "t"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"GeneParams.{name} must be positive, got {v}")
        if self.y0 not in (0, 1):
            raise ValueError(f"GeneParams.y0 must be 0 or 1, got {self.y0}")

    @property
    def pi_on(self) -> float:
        return self.kappa1 / (self.kappa1 + self.kappa_m1)


GENE_JUMPS = FiniteAtoms((-1.0, 1.0), (0.5, 0.5))


def gene_rates(g: GeneParams):
    """Switching rates ``(x, from, to) -> rate``; ``kappa1 x`` on, ``kappa_-1 x`` off."""
    def rates(x, s_from, s_to):
        xp = np.maximum(x, 0.0)
        if s_from == 0 and s_to == 1:
            return g.kappa1 * xp
        if s_from == 1 and s_to == 0:
            return g.kappa_m1 * xp
        return 0.0 * xp
    return rates


def gene_model(g: GeneParams) -> ModelSpec:
    coeffs = CoefficientSet(
        b=lambda x, y: g.kappa2 * y - g.kappa3 * x,
        sigma=lambda x, y: np.sqrt(np.maximum(g.kappa2 * y + g.kappa3 * x, 0.0)),
        nu1=GENE_JUMPS,
    )
    return ModelSpec(coeffs, g.x0, float(g.y0), FiniteSet((0.0, 1.0)), gene_rates(g), name="gene")


def _cosh_term(p: float) -> float:
    # 1/2 (e^p + e^-p - 2) = cosh(p) - 1, written to avoid cancellation
    return 2.0 * math.sinh(0.5 * p) ** 2


def gene_potentials(x: float, p: float, g: GeneParams, diffusion_factor: float = 0.5):
    """``(V(0), V(1))`` with the diffusion term ``diffusion_factor * sigma^2 p^2``."""
    j = _cosh_term(p)
    v0 = -g.kappa3 * x * p + diffusion_factor * g.kappa3 * x * p * p + j
    v1 = (g.kappa2 - g.kappa3 * x) * p + diffusion_factor * (g.kappa2 + g.kappa3 * x) * p * p + j
    return v0, v1


def two_state_perron(v0: float, v1: float, q01: float, q10: float) -> float:
    """Largest eigenvalue of ``[[v0 - q01, q01], [q10, v1 - q10]]``."""
    d0, d1 = v0 - q01, v1 - q10
    half = 0.5 * (d1 - d0)
    return 0.5 * (d0 + d1) + math.sqrt(half * half + q01 * q10)


def _check_x(x):
    if not x > 0:
        raise ValueError(f"the gene Hamiltonian needs x > 0, got {x}")


def gene_hamiltonian_printed(x: float, p: float, g: GeneParams) -> float:
    """The published closed form, including its un-halved diffusion term.

    With ``A = k1 x``, ``B = -k2 p - k2 p^2 + (k_-1 - k1) x``, ``C = -k_-1 x``
    the eigenvector ratio is ``a = (-B + sqrt(B^2 - 4AC)) / (2A)`` and
    ``H = -k3 x p + k3 x p^2 + k1 x (a - 1) + cosh p - 1``.  For equal switching
    rates the symmetric shortcut is used instead.
    """
    _check_x(x)
    k1, km1, k2, k3 = g.kappa1, g.kappa_m1, g.kappa2, g.kappa3
    j = _cosh_term(p)
    if k1 == km1:
        s = k2 * p * (1 + p)
        return (-k3 * p * (1 - p) * x + 0.5 * s
                + 0.5 * math.sqrt(s * s + (2 * k1 * x) ** 2) - k1 * x + j)
    return _gene_printed_general(x, p, g)


def _gene_printed_general(x, p, g: GeneParams) -> float:
    k1, km1, k2, k3 = g.kappa1, g.kappa_m1, g.kappa2, g.kappa3
    A = k1 * x
    B = -k2 * p - k2 * p * p + (km1 - k1) * x
    C = -km1 * x
    disc = math.sqrt(B * B - 4 * A * C)
    # -B + disc loses digits when B > 0; use the conjugate form there
    ratio = (-B + disc) / (2 * A) if B <= 0 else (2 * -C) / (B + disc)
    return -k3 * x * p + k3 * x * p * p + k1 * x * (ratio - 1) + _cosh_term(p)


def gene_hamiltonian_undamped_eigen(x: float, p: float, g: GeneParams) -> float:
    """2x2 Perron root with the diffusion entering as ``sigma^2 p^2`` (no 1/2)."""
    _check_x(x)
    v0, v1 = gene_potentials(x, p, g, diffusion_factor=1.0)
    return two_state_perron(v0, v1, g.kappa1 * x, g.kappa_m1 * x)


def gene_hamiltonian_consistent(x: float, p: float, g: GeneParams) -> float:
    """2x2 Perron root with ``V = b p + sigma^2 p^2 / 2 + cosh p - 1``."""
    _check_x(x)
    v0, v1 = gene_potentials(x, p, g, diffusion_factor=0.5)
    return two_state_perron(v0, v1, g.kappa1 * x, g.kappa_m1 * x)


def gene_pdmp_hamiltonian(x: float, p: float, g: GeneParams) -> float:
    """Hamiltonian of the switching ODE (no diffusion, no protein jumps); equal rates only."""
    _check_x(x)
    if g.kappa1 != g.kappa_m1:
        raise UnsupportedError("closed form is available for kappa1 == kappa_-1 only")
    k1, k2, k3 = g.kappa1, g.kappa2, g.kappa3
    return (-k3 * p * x + 0.5 * k2 * p
            + 0.5 * math.sqrt((k2 * p) ** 2 + (2 * k1 * x) ** 2) - k1 * x)
