"""Fluid limit and Gaussian fluctuation theory for the density-dependent
family indexed by the immigration rate: transition density f(z, +-1), drift
F(z) = (beta-mu)z + 1, diffusion G(z) = (beta+mu)z + 1, the explicit fluid
solution, fluctuation mean/variance by quadrature, the stationary
Ornstein-Uhlenbeck parameters, and a Monte Carlo verification harness.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ctmc, stats
from .models import RateParams


@dataclass(frozen=True)
class DensityFamily:
    """Jump rates per unit of the index k: f(z,+1) = beta z + 1 (births plus
    immigration), f(z,-1) = mu z (deaths)."""

    beta: float
    mu: float

    def f(self, z: float, j: int) -> float:
        if j == 1:
            return self.beta * z + 1.0
        if j == -1:
            return self.mu * z
        raise ValueError("only jumps +-1 occur")

    def drift(self, z):
        return (self.beta - self.mu) * z + 1.0

    def drift_slope(self, z=None) -> float:
        return self.beta - self.mu

    def diffusion(self, z):
        return (self.beta + self.mu) * z + 1.0


@dataclass(frozen=True)
class OUParams:
    """Equilibrium fluctuation parameters: drift q = beta - mu < 0,
    infinitesimal variance a = 2 mu / (mu - beta), equilibrium density
    z_star = 1/(mu - beta)."""

    q: float
    a: float
    z_star: float

    @property
    def stationary_variance(self) -> float:
        return self.a / (-2.0 * self.q)

    def variance_at(self, s: float) -> float:
        return self.stationary_variance * (1.0 - math.exp(2.0 * self.q * s))


def ou_params(params: RateParams) -> OUParams:
    beta, mu = params.beta, params.mu
    if mu <= beta:
        raise ValueError("equilibrium fluctuations require mu > beta")
    return OUParams(q=beta - mu, a=2.0 * mu / (mu - beta), z_star=1.0 / (mu - beta))


def fluid_solution(params: RateParams, z0: float, t) -> np.ndarray | float:
    """Solution of dZ/dt = (beta-mu)Z + 1:
    Z(t) = z* + (z0 - z*) e^{-(mu-beta)t}, z* = 1/(mu-beta)."""
    beta, mu = params.beta, params.mu
    if mu <= beta:
        raise ValueError("fluid solution stated for mu > beta")
    z_star = 1.0 / (mu - beta)
    return z_star + (z0 - z_star) * np.exp(-(mu - beta) * np.asarray(t, dtype=float))


def fluid_rk4(params: RateParams, z0: float, t: float, steps: int = 20000) -> float:
    """Independent RK4 integration of the fluid equation (oracle path)."""
    fam = DensityFamily(params.beta, params.mu)
    h = t / steps
    z = z0
    for _ in range(steps):
        k1 = fam.drift(z)
        k2 = fam.drift(z + 0.5 * h * k1)
        k3 = fam.drift(z + 0.5 * h * k2)
        k4 = fam.drift(z + h * k3)
        z += (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return z


def _simpson(values: np.ndarray, h: float) -> float:
    n = len(values) - 1
    if n % 2 != 0:
        raise ValueError("Simpson rule needs an even number of panels")
    return (h / 3.0) * (values[0] + values[-1] + 4 * values[1:-1:2].sum()
                        + 2 * values[2:-1:2].sum())


def fluctuation_moments(params: RateParams, z0: float, zeta0: float, s: float,
                        panels: int = 10_000) -> tuple[float, float]:
    """Mean and variance of the limiting fluctuation at time s:
    mean = zeta0 L_s with L_s = exp(int_0^s F'(Z(u)) du) = e^{(beta-mu)s},
    variance = L_s^2 int_0^s L_u^{-2} G(Z(u, z0)) du (composite Simpson).
    """
    beta, mu = params.beta, params.mu
    if mu <= beta:
        raise ValueError("fluctuation moments stated for mu > beta")
    if s < 0:
        raise ValueError("s must be >= 0")
    q = beta - mu
    l_s = math.exp(q * s)
    if s == 0:
        return zeta0, 0.0
    fam = DensityFamily(beta, mu)
    u = np.linspace(0.0, s, panels + 1)
    integrand = np.exp(-2.0 * q * u) * fam.diffusion(fluid_solution(params, z0, u))
    var = l_s**2 * _simpson(integrand, s / panels)
    return zeta0 * l_s, var


def growth_factor_by_quadrature(params: RateParams, z0: float, s: float,
                                panels: int = 10_000) -> float:
    """L_s computed by Simpson quadrature of F'(Z(u, z0)); equals
    e^{(beta-mu)s} because the drift slope is constant for this family."""
    fam = DensityFamily(params.beta, params.mu)
    u = np.linspace(0.0, s, panels + 1)
    slopes = np.full_like(u, fam.drift_slope())
    return math.exp(_simpson(slopes, s / panels if s > 0 else 1.0)) if s > 0 else 1.0


@dataclass(frozen=True)
class CltReport:
    """Monte Carlo check of the Gaussian fluctuation law at one time."""

    k_scale: float
    t: float
    replicas: int
    zeta0: float
    mean: float
    se_mean: float
    mean_target: float
    variance: float
    se_variance: float
    variance_target: float
    ad_statistic: float
    ad_critical: float
    normality_passed: bool

    @property
    def mean_check(self) -> stats.ZCheck:
        return stats.ZCheck("fluctuation mean", self.mean_target, self.mean,
                            self.se_mean)

    @property
    def variance_check(self) -> stats.ZCheck:
        return stats.ZCheck("fluctuation variance", self.variance_target,
                            self.variance, self.se_variance)


def verify_clt(params: RateParams, k_scale: float, replicas: int, t: float,
               master_seed: int, jobs: int = 1,
               significance: float = 0.01) -> CltReport:
    """Simulate ``replicas`` paths at immigration rate ``k_scale`` from the
    equilibrium start n0 = round(k z*), form sqrt(k)(n(t)/k - Z(t)), and
    compare moments and normality against the limiting Gaussian law."""
    beta, mu = params.beta, params.mu
    if mu <= beta:
        raise ValueError("verify_clt requires mu > beta")
    run_params = RateParams(beta=beta, mu=mu, k=float(k_scale))
    ou = ou_params(params)
    n0 = round(k_scale * ou.z_star)
    z0 = n0 / k_scale
    zeta0 = math.sqrt(k_scale) * (z0 - ou.z_star)
    z_t = float(fluid_solution(params, z0, t))
    grid = np.array([t])

    def one(i: int) -> float:
        r = ctmc.simulate_single_site(run_params, n0, t, grid, master_seed,
                                      replica=i)
        return math.sqrt(k_scale) * (r.counts[0, 0] / k_scale - z_t)

    zetas = np.array(ctmc.map_replicas(one, replicas, jobs=jobs))
    acc = stats.from_samples(zetas)
    mean_target, var_target = fluctuation_moments(params, z0, zeta0, t)
    ad_stat, ad_crit, ad_pass = stats.anderson_normal(zetas, level=significance)
    return CltReport(
        k_scale=k_scale, t=t, replicas=replicas, zeta0=zeta0,
        mean=float(acc.mean), se_mean=float(acc.se_mean),
        mean_target=mean_target,
        variance=float(acc.var), se_variance=float(acc.se_var),
        variance_target=var_target,
        ad_statistic=ad_stat, ad_critical=ad_crit, normality_passed=ad_pass)
