"""Monte Carlo aggregation and the statistical assertions used throughout
the test battery: z-scores against analytic targets, Anderson-Darling
normality, chi-square goodness of fit, Poisson dispersion, and least-squares
fits with slope errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps


class PowerSums:
    """Order-insensitive accumulator of the first four power sums per
    component; yields means, variances and their standard errors."""

    def __init__(self, shape=()):
        self.n = 0
        self.s1 = np.zeros(shape)
        self.s2 = np.zeros(shape)
        self.s3 = np.zeros(shape)
        self.s4 = np.zeros(shape)

    def add(self, x) -> None:
        x = np.asarray(x, dtype=np.float64)
        self.n += 1
        self.s1 += x
        x2 = x * x
        self.s2 += x2
        self.s3 += x2 * x
        self.s4 += x2 * x2

    def merge(self, other: "PowerSums") -> "PowerSums":
        self.n += other.n
        self.s1 += other.s1
        self.s2 += other.s2
        self.s3 += other.s3
        self.s4 += other.s4
        return self

    @property
    def mean(self):
        return self.s1 / self.n

    def central_moment(self, order: int):
        n, m = self.n, self.mean
        if order == 2:
            return self.s2 / n - m**2
        if order == 4:
            return (self.s4 / n - 4 * m * self.s3 / n + 6 * m**2 * self.s2 / n
                    - 3 * m**4)
        raise ValueError(order)

    @property
    def var(self):
        """Unbiased sample variance."""
        return self.central_moment(2) * self.n / (self.n - 1)

    @property
    def se_mean(self):
        return np.sqrt(self.var / self.n)

    @property
    def se_var(self):
        """Standard error of the sample variance via the fourth moment:
        Var(s^2) = m4/n - (n-3)/(n(n-1)) s^4."""
        n = self.n
        m4 = self.central_moment(4)
        v = self.var
        out = m4 / n - (n - 3) / (n * (n - 1)) * v**2
        return np.sqrt(np.maximum(out, 0.0))


def from_samples(x) -> PowerSums:
    acc = PowerSums(np.shape(x)[1:] if np.ndim(x) > 1 else ())
    for row in np.asarray(x, dtype=np.float64):
        acc.add(row)
    return acc


@dataclass(frozen=True)
class ZCheck:
    """An estimate compared to an analytic target in SE units.

    ``side`` is "two" for |z| <= max_z, "upper_bound" when the target only
    caps the estimate (z <= max_z), "lower_bound" when it only floors it.
    """

    name: str
    target: float
    estimate: float
    se: float
    max_z: float = 3.0
    side: str = "two"

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0 if self.estimate == self.target else math.copysign(
                math.inf, self.estimate - self.target)
        return float((self.estimate - self.target) / self.se)

    @property
    def passed(self) -> bool:
        if self.side == "upper_bound":
            return bool(self.z <= self.max_z)
        if self.side == "lower_bound":
            return bool(self.z >= -self.max_z)
        return bool(abs(self.z) <= self.max_z)

    def __str__(self) -> str:
        return (f"{self.name}: estimate={self.estimate:.6g} "
                f"target={self.target:.6g} se={self.se:.3g} z={self.z:+.2f} "
                f"{'pass' if self.passed else 'FAIL'}")


def anderson_normal(x, level: float = 0.01):
    """Anderson-Darling normality test; returns (statistic, critical value
    at ``level``, passed)."""
    res = sps.anderson(np.asarray(x, dtype=float), dist="norm")
    levels = [s / 100.0 for s in res.significance_level]
    crit = res.critical_values[levels.index(level)]
    return float(res.statistic), float(crit), bool(res.statistic < crit)


def chi_square_gof(counts, probs) -> float:
    """p-value for observed category counts against given probabilities."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    expected = counts.sum() * probs / probs.sum()
    return float(sps.chisquare(counts, expected).pvalue)


def ks_exponential(samples, rate: float) -> float:
    """p-value of a Kolmogorov-Smirnov test against Exp(rate)."""
    return float(sps.kstest(np.asarray(samples, dtype=float), "expon",
                            args=(0.0, 1.0 / rate)).pvalue)


def poisson_dispersion(samples) -> float:
    """Two-sided p-value of the dispersion index test: (n-1) s^2 / xbar is
    approximately chi-square(n-1) under a Poisson law."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    xbar = x.mean()
    if xbar == 0:
        return 1.0
    stat = (n - 1) * x.var(ddof=1) / xbar
    lo = sps.chi2.cdf(stat, n - 1)
    return float(2 * min(lo, 1 - lo))


@dataclass(frozen=True)
class LineFit:
    slope: float
    intercept: float
    slope_se: float
    r2: float


def fit_line(x, y) -> LineFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    slope = np.sum((x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_res = np.sum(resid**2)
    ss_tot = np.sum((y - ym) ** 2)
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    var_slope = ss_res / max(n - 2, 1) / sxx
    return LineFit(slope=float(slope), intercept=float(intercept),
                   slope_se=float(np.sqrt(var_slope)), r2=float(r2))


def total_variation(p, q) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    m = max(len(p), len(q))
    p = np.pad(p, (0, m - len(p)))
    q = np.pad(q, (0, m - len(q)))
    return 0.5 * float(np.abs(p - q).sum())
