"""Closed-form and semi-analytic results for the single-site birth-death
chain with immigration (birth rate beta*n + k, death rate mu*n): moment
curves and limits, the invariant distribution and its hypergeometric
normalizer, recurrence classification, the local central limit profile, and
the second harmonic function of the generator.

All functions are pure; everything here serves as an oracle for the
simulator.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .models import MomentSeries, RateParams


class CriticalRatesError(ValueError):
    """Raised where a closed form requires mu != beta."""


class NonErgodicError(ValueError):
    """Raised when an invariant distribution is requested outside the
    ergodic regime; carries the recurrence classification."""

    def __init__(self, msg: str, classification: "RecurrenceClass"):
        super().__init__(msg)
        self.classification = classification


class RecurrenceClass(enum.Enum):
    TRANSIENT = "Transient"
    ZERO_RECURRENT = "ZeroRecurrent"
    ERGODIC = "Ergodic"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class MomentVector:
    """Moments m_1..m_order at one time (or the t -> infinity limit)."""

    t: float
    values: tuple[float, ...]

    def __post_init__(self):
        if self.order >= 2:
            m1, m2 = self.values[0], self.values[1]
            if np.isfinite(m1) and np.isfinite(m2) and m2 < m1 * m1 * (1 - 1e-12) - 1e-12:
                raise ValueError(f"m2={m2} < m1^2={m1*m1}")

    @property
    def order(self) -> int:
        return len(self.values)

    @property
    def m1(self) -> float:
        return self.values[0]

    @property
    def m2(self) -> float:
        return self.values[1]

    @property
    def variance(self) -> float:
        return self.m2 - self.m1**2


def moment_limits(params: RateParams) -> MomentVector:
    """t -> infinity limits in the subcritical regime:
    m1 = k/(mu-beta), m2 = k(k+mu)/(mu-beta)^2, Var = mu*k/(mu-beta)^2."""
    beta, mu, k = params.beta, params.mu, params.k
    if mu <= beta:
        raise CriticalRatesError("moment limits require mu > beta")
    d = mu - beta
    return MomentVector(t=math.inf, values=(k / d, k * (k + mu) / d**2))


def moments_closed_form(params: RateParams, t: float, order: int = 2,
                        n0: float = 1.0) -> MomentVector:
    """Exact m1(t) and m2(t) for mu != beta from a deterministic start n0.

    m1(t) = k/(mu-beta) + (n0 - k/(mu-beta)) e^{-(mu-beta)t}; m2 solves
    dm2/dt = 2(beta-mu) m2 + (beta+mu+2k) m1 + k, giving a three-term
    exponential form.
    """
    beta, mu, k = params.beta, params.mu, params.k
    if order not in (1, 2):
        raise ValueError("closed forms cover orders 1 and 2 only")
    if mu == beta:
        raise CriticalRatesError("critical case mu == beta: use moments_ode")
    d = mu - beta
    m_inf = k / d
    e1 = math.exp(-d * t)
    m1 = m_inf + (n0 - m_inf) * e1
    if order == 1:
        return MomentVector(t=t, values=(m1,))
    c = beta + mu + 2 * k
    a_coef = (c * m_inf + k) / (2 * d)
    b_coef = c * (n0 - m_inf) / d
    c_coef = n0 * n0 - a_coef - b_coef
    m2 = a_coef + b_coef * e1 + c_coef * e1 * e1
    return MomentVector(t=t, values=(m1, m2))


def _moment_rhs_matrix(params: RateParams, order: int) -> np.ndarray:
    """Coefficient matrix of the triangular moment system.

    dm_j/dt = sum_{i=1..j} C(j,i) [ (beta + (-1)^i mu) m_{j-i+1} + k m_{j-i} ]
    with m_0 = 1; returns M such that dm/dt = M @ [1, m_1, ..., m_J].
    """
    beta, mu, k = params.beta, params.mu, params.k
    mat = np.zeros((order, order + 1))
    for j in range(1, order + 1):
        for i in range(1, j + 1):
            binom = math.comb(j, i)
            mat[j - 1, j - i + 1] += binom * (beta + (-1) ** i * mu)
            mat[j - 1, j - i] += binom * k
    return mat


def moments_ode(params: RateParams, t_grid: Sequence[float], max_order: int,
                n0: float = 1.0, rtol: float = 1e-8) -> list[MomentSeries]:
    """Integrate the moment system up to ``max_order`` with fixed-step RK4.

    The run is repeated at half the step; disagreement beyond ``rtol``
    (relative, per grid point) raises, so a passing call certifies its own
    accuracy.
    """
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise ValueError("t_grid must be nonnegative and strictly increasing")
    mat = _moment_rhs_matrix(params, max_order)
    h = min(1e-3, 0.1 / (max_order * abs(params.beta - params.mu) + 1.0))

    def integrate(step: float) -> np.ndarray:
        m = np.array([float(n0) ** j for j in range(1, max_order + 1)])
        out = np.empty((len(grid), max_order))
        t = 0.0
        ext = np.empty(max_order + 1)
        ext[0] = 1.0

        def rhs(v):
            ext[1:] = v
            return mat @ ext

        for gi, tg in enumerate(grid):
            span = tg - t
            if span > 0:
                steps = max(1, math.ceil(span / step))
                hh = span / steps
                for _ in range(steps):
                    k1 = rhs(m)
                    k2 = rhs(m + 0.5 * hh * k1)
                    k3 = rhs(m + 0.5 * hh * k2)
                    k4 = rhs(m + hh * k3)
                    m = m + (hh / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
                t = tg
            out[gi] = m
        return out

    coarse = integrate(h)
    fine = integrate(h / 2)
    scale = np.maximum(np.abs(fine), 1.0)
    err = np.max(np.abs(fine - coarse) / scale)
    if err > rtol:
        raise RuntimeError(f"step-halving check failed: rel err {err:.3e} > {rtol}")
    return [
        MomentSeries.analytic(grid, fine[:, j - 1], label=f"m{j}")
        for j in range(1, max_order + 1)
    ]


# ---------------------------------------------------------------------------
# Invariant distribution
# ---------------------------------------------------------------------------

def s_tilde_closed_form(params: RateParams) -> float:
    """Normalizer of the invariant weights: (1 - beta/mu)^(-k/beta), read as
    exp(k/mu) in the beta -> 0 limit."""
    beta, mu, k = params.beta, params.mu, params.k
    if mu <= beta:
        raise NonErgodicError("normalizer finite only for beta < mu", classify(params))
    if beta == 0:
        return math.exp(k / mu)
    return math.exp(-(k / beta) * math.log1p(-beta / mu))


@dataclass(frozen=True)
class InvariantDistribution:
    """Truncated invariant distribution with its recurrence normalizer and a
    geometric bound on the dropped tail mass (already normalized)."""

    weights: np.ndarray
    s_tilde: float
    tail_bound: float
    params: RateParams

    @property
    def n_max(self) -> int:
        return len(self.weights) - 1

    def mean(self) -> float:
        n = np.arange(len(self.weights))
        return float(np.dot(n, self.weights))

    def variance(self) -> float:
        n = np.arange(len(self.weights))
        m = self.mean()
        return float(np.dot((n - m) ** 2, self.weights))

    def detailed_balance_residual(self) -> float:
        """max_n |pi(n) lambda_n - pi(n+1) mu_{n+1}| / (pi(n) lambda_n)."""
        beta, mu, k = self.params.beta, self.params.mu, self.params.k
        n = np.arange(len(self.weights) - 1)
        up = self.weights[:-1] * (beta * n + k)
        down = self.weights[1:] * (mu * (n + 1))
        mask = up > 0
        return float(np.max(np.abs(up[mask] - down[mask]) / up[mask]))


def invariant_distribution(params: RateParams, n_max: Optional[int] = None,
                           tail_tol: float = 1e-12) -> InvariantDistribution:
    """Invariant weights via the stable term-ratio recurrence
    pi(n+1) = pi(n) (k + beta n) / (mu (n+1)), evaluated in log space.

    The truncation level grows until the geometric tail bound drops below
    ``tail_tol`` (unless ``n_max`` pins it explicitly).
    """
    beta, mu, k = params.beta, params.mu, params.k
    cls = classify(params) if k > 0 else None
    if mu <= beta:
        raise NonErgodicError(
            f"invariant distribution requires beta < mu (classified {cls})", cls)
    if k <= 0:
        raise ValueError("invariant distribution requires k > 0")

    rho = beta / mu

    def log_terms(upto: int) -> np.ndarray:
        n = np.arange(upto)
        steps = np.log(k + beta * n) - np.log(mu * (n + 1))
        return np.concatenate(([0.0], np.cumsum(steps)))

    if n_max is not None:
        logx = log_terms(int(n_max))
        ratio = (k + beta * n_max) / (mu * (n_max + 1))
        rho_bar = max(ratio, rho)
        log_tail = logx[-1] + math.log(ratio) - math.log1p(-rho_bar) \
            if rho_bar < 1 else math.inf
    else:
        upto = 256
        while True:
            logx = log_terms(upto)
            ratio = (k + beta * upto) / (mu * (upto + 1))
            rho_bar = max(ratio, rho)
            if rho_bar < 1:
                log_tail = logx[-1] + math.log(ratio) - math.log1p(-rho_bar)
                log_sum = logsumexp(logx)
                if log_tail - log_sum < math.log(tail_tol):
                    break
            if upto > 50_000_000:
                raise RuntimeError("truncation level exceeded hard cap")
            upto *= 2

    log_sum = logsumexp(logx)
    weights = np.exp(logx - log_sum)
    weights /= weights.sum()
    tail_bound = float(np.exp(log_tail - log_sum)) if np.isfinite(log_tail) else math.inf
    s_tilde = float(np.exp(log_sum))
    return InvariantDistribution(weights=weights, s_tilde=s_tilde,
                                 tail_bound=tail_bound, params=params)


# ---------------------------------------------------------------------------
# Recurrence classification
# ---------------------------------------------------------------------------

def classify(params: RateParams) -> RecurrenceClass:
    """Three-way classification: beta > mu transient, beta < mu ergodic,
    beta = mu zero-recurrent for k/beta <= 1 and transient beyond."""
    beta, mu, k = params.beta, params.mu, params.k
    if k <= 0:
        raise ValueError("classification requires k > 0 (0 is absorbing otherwise)")
    if beta > mu:
        return RecurrenceClass.TRANSIENT
    if beta < mu:
        return RecurrenceClass.ERGODIC
    return RecurrenceClass.ZERO_RECURRENT if k / beta <= 1.0 else RecurrenceClass.TRANSIENT


@dataclass(frozen=True)
class SeriesCriteria:
    """Partial sums (in log space) of the recurrence series S (terms
    prod mu_i / lambda_i) and the ergodicity series S~ (terms
    prod lambda_{i-1} / mu_i), with ratio-test verdicts."""

    log_s_terms: np.ndarray
    log_s_partial: np.ndarray
    log_s_tilde_terms: np.ndarray
    log_s_tilde_partial: np.ndarray
    s_diverges: bool
    s_tilde_converges: bool
    s_tilde_ratio_estimate: float
    classification: RecurrenceClass


def series_criteria(params: RateParams, n_terms: int = 2000) -> SeriesCriteria:
    """Evaluate both recurrence/ergodicity series and classify from their
    empirical behavior (term ratios, with a tail-exponent fit when the ratio
    sits at 1)."""
    beta, mu, k = params.beta, params.mu, params.k
    if n_terms < 8:
        raise ValueError("n_terms too small to judge convergence")
    n = np.arange(1, n_terms + 1)
    # S terms: prod_{i<=n} mu i / (beta i + k); S~ terms: prod_{i<=n} (k + beta(i-1)) / (mu i)
    log_s = np.cumsum(np.log(mu * n) - np.log(beta * n + k))
    log_st = np.cumsum(np.log(k + beta * (n - 1)) - np.log(mu * n))
    log_s = np.concatenate(([0.0], log_s))
    log_st = np.concatenate(([0.0], log_st))

    def verdict_converges(log_terms: np.ndarray) -> bool:
        N = len(log_terms) - 1
        log_ratio = log_terms[-1] - log_terms[-2]
        band = 3.0 / N
        if log_ratio < -band:
            return True
        if log_ratio > band:
            return False
        # ratio -> 1: compare against the harmonic-series boundary exponent
        half = len(log_terms) // 2
        idx = np.arange(half, len(log_terms))
        exponent = np.polyfit(np.log(idx), log_terms[half:], 1)[0]
        return exponent < -1.0 - band

    s_tilde_converges = verdict_converges(log_st)
    s_diverges = not verdict_converges(log_s)
    if s_tilde_converges:
        cls = RecurrenceClass.ERGODIC
    elif s_diverges:
        cls = RecurrenceClass.ZERO_RECURRENT
    else:
        cls = RecurrenceClass.TRANSIENT
    return SeriesCriteria(
        log_s_terms=log_s, log_s_partial=np.logaddexp.accumulate(log_s),
        log_s_tilde_terms=log_st,
        log_s_tilde_partial=np.logaddexp.accumulate(log_st),
        s_diverges=s_diverges, s_tilde_converges=s_tilde_converges,
        s_tilde_ratio_estimate=float(np.exp(log_st[-1] - log_st[-2])),
        classification=cls)


# ---------------------------------------------------------------------------
# Local central limit profile
# ---------------------------------------------------------------------------

def invariant_mode(params: RateParams) -> int:
    """Mode of the invariant distribution: the largest n with
    pi(n) >= pi(n-1), i.e. floor((k - beta)/(mu - beta)), clamped at 0.

    The mode is the natural center for the pointwise Gaussian comparison; it
    absorbs the O(1) offset between the weight profile's vertex and the mean
    k/(mu-beta).
    """
    beta, mu, k = params.beta, params.mu, params.k
    if mu <= beta:
        raise CriticalRatesError("mode defined in the ergodic regime only")
    return max(0, math.floor((k - beta) / (mu - beta)))


@dataclass(frozen=True)
class LocalCltProfile:
    center: int
    sigma2: float
    l: np.ndarray
    pi: np.ndarray
    gauss: np.ndarray

    @property
    def ratio(self) -> np.ndarray:
        return self.pi / self.gauss

    @property
    def max_abs_error(self) -> float:
        return float(np.max(np.abs(self.ratio - 1.0)))

    def rows(self):
        for l, p, g, r in zip(self.l, self.pi, self.gauss, self.ratio):
            yield int(l), float(p), float(g), float(r)


def local_clt_profile(params: RateParams, l_values: Sequence[int],
                      k_scale: Optional[float] = None) -> LocalCltProfile:
    """Exact invariant weights around the mode against the Gaussian density
    with sigma^2 = mu*k/(mu-beta)^2, for offsets within +-k^(2/3)."""
    if k_scale is not None:
        params = RateParams(beta=params.beta, mu=params.mu, k=float(k_scale),
                            kappa=params.kappa)
    beta, mu, k = params.beta, params.mu, params.k
    if mu <= beta:
        raise CriticalRatesError("local CLT profile requires beta < mu")
    ls = np.asarray(sorted(set(int(v) for v in l_values)), dtype=np.int64)
    if np.any(np.abs(ls) > k ** (2.0 / 3.0)):
        raise ValueError("offsets must stay within +-k^(2/3)")
    center = invariant_mode(params)
    if center + ls.min() < 0:
        raise ValueError("offset walks below 0")
    sigma2 = mu * k / (mu - beta) ** 2
    dist = invariant_distribution(
        params, n_max=int(center + max(ls.max(), 0) + 10 * math.sqrt(sigma2) + 50))
    pi = dist.weights[center + ls]
    gauss = np.exp(-ls.astype(float) ** 2 / (2 * sigma2)) / math.sqrt(2 * math.pi * sigma2)
    return LocalCltProfile(center=center, sigma2=sigma2, l=ls, pi=pi, gauss=gauss)


# ---------------------------------------------------------------------------
# Harmonic functions of the generator
# ---------------------------------------------------------------------------

def harmonic_psi2(params: RateParams, n: int) -> float:
    """Second independent solution of L psi = 0 away from the boundary:
    psi2(0) = 0, psi2(1) = 1, psi2(n) = 1 + sum_{j=1}^{n-1} prod_{i<=j}
    mu_i / lambda_i with lambda_i = i beta + k, mu_i = i mu."""
    beta, mu, k = params.beta, params.mu, params.k
    if n < 0:
        raise ValueError("n must be >= 0")
    if any(v <= 0 for v in (beta, mu, k)):
        raise ValueError("rates must be positive")
    if n == 0:
        return 0.0
    if n == 1:
        return 1.0
    i = np.arange(1, n)
    log_prod = np.cumsum(np.log(mu * i) - np.log(beta * i + k))
    return 1.0 + float(np.exp(log_prod).sum())
