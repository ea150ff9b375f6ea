"""Random-environment analyses: the quenched series criterion for
ergodicity under level-dependent rates, the stationary first moment under a
time-dependent environment with its spectral average, the two-state
Markov-environment ergodicity test, and the spatial-environment dichotomy
(linear growth at equal rates vs a bounded plateau under excess mortality)
with a Feynman-Kac propagator estimator."""
from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import ctmc, stats
from .analytic_gw import RecurrenceClass
from .models import (ByPopulationLevel, FiniteSet, MarkovChainEnv,
                     RateParams, SpatialField, Torus)
from .spatial import expm_series


# ---------------------------------------------------------------------------
# Quenched series criterion for level-dependent environments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuenchedSeriesReport:
    """Partial sums of the random ergodicity series for one sampled
    environment, the fitted asymptotic log-term slope, and the verdict from
    the sign of <ln beta> - <ln mu>."""

    env_seed: int
    log_terms: np.ndarray
    log_partial_sums: np.ndarray
    slope: float
    slope_se: float
    criterion: float
    criterion_se: float
    verdict: str  # "Ergodic" | "NonErgodic" | "Boundary"


def log_mean_criterion(env: ByPopulationLevel) -> tuple[float, float]:
    """<ln beta> - <ln mu> for the environment law, in closed form for the
    supported marginal families (so the reported standard error is 0)."""
    return env.beta.mean_log() - env.mu.mean_log(), 0.0


def quenched_series(env: ByPopulationLevel, n_terms: int,
                    env_seed: int) -> QuenchedSeriesReport:
    """Sample one environment realization and evaluate the random series
    with terms prod_{j<=n} (k(j-1) + (j-1) beta(j-1)) / (j mu(j)) in log
    space; convergence is decided by the sign of <ln beta> - <ln mu>."""
    if n_terms < 16:
        raise ValueError("n_terms too small for a slope fit")
    beta_lv, mu_lv, k_lv = ctmc.sample_environment_levels(env, env_seed, n_terms + 1)
    j = np.arange(1, n_terms + 1)
    steps = np.log(k_lv[j - 1] + (j - 1) * beta_lv[j - 1]) - np.log(j * mu_lv[j])
    log_terms = np.cumsum(steps)
    half = n_terms // 2
    fit = stats.fit_line(j[half:], log_terms[half:])
    criterion, criterion_se = log_mean_criterion(env)
    degenerate = all(d.is_degenerate() for d in (env.beta, env.mu, env.k))
    thresh = max(3.0 * criterion_se, 1e-9)
    if criterion < -thresh:
        verdict = "Ergodic"
    elif criterion > thresh or degenerate:
        # at <ln beta> = <ln mu> the series still diverges (the immigration
        # term keeps it bounded below), so a degenerate critical environment
        # is not ergodic
        verdict = "NonErgodic"
    else:
        verdict = "Boundary"
    return QuenchedSeriesReport(
        env_seed=int(env_seed), log_terms=log_terms,
        log_partial_sums=np.logaddexp.accumulate(log_terms),
        slope=fit.slope, slope_se=fit.slope_se,
        criterion=criterion, criterion_se=criterion_se, verdict=verdict)


def degenerate_verdict_matches(report: QuenchedSeriesReport,
                               classification: RecurrenceClass) -> bool:
    expected = "Ergodic" if classification is RecurrenceClass.ERGODIC else "NonErgodic"
    return report.verdict == expected


# ---------------------------------------------------------------------------
# Stationary first moment under a time-dependent environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepPath:
    """Piecewise-constant path: values[i] holds on [breaks[i], breaks[i+1]),
    extended by its end values outside the listed range."""

    breaks: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.breaks) != len(self.values) or not self.breaks:
            raise ValueError("need one value per breakpoint")
        if list(self.breaks) != sorted(self.breaks):
            raise ValueError("breakpoints must be ascending")

    @classmethod
    def constant(cls, value: float) -> "StepPath":
        return cls(breaks=(0.0,), values=(float(value),))

    @classmethod
    def alternating(cls, values: Sequence[float], period: float,
                    start: float, stop: float) -> "StepPath":
        breaks, vals = [], []
        t = start
        i = 0
        while t < stop:
            breaks.append(t)
            vals.append(float(values[i % len(values)]))
            t += period
            i += 1
        return cls(breaks=tuple(breaks), values=tuple(vals))

    def value_at(self, s: float) -> float:
        i = bisect_right(self.breaks, s) - 1
        return self.values[max(0, i)]

    def segment_points(self, a: float, b: float) -> np.ndarray:
        inner = [t for t in self.breaks if a < t < b]
        return np.array([a] + inner + [b])

    def min_value(self) -> float:
        return min(self.values)

    def max_value(self) -> float:
        return max(self.values)


@dataclass(frozen=True)
class StationaryMeanResult:
    value: float
    cutoff: float
    cutoff_error_bound: float
    nodes_used: int


def stationary_m1_quadrature(k_path: StepPath, delta_path: StepPath, t: float,
                             cutoff: float, max_step: float = 2e-4,
                             tolerance: Optional[float] = None) -> StationaryMeanResult:
    """Trapezoid evaluation of the stationary mean
    m1(t) = int_{t-T}^{t} k(s) exp(-int_s^t Delta(u) du) ds with lower cutoff
    T, integrating segment by segment so path discontinuities fall on nodes.

    The dropped mass below the cutoff is bounded by
    max(k) e^{-delta T} / delta with delta = min Delta; the bound is reported
    (and only reported: a too-small cutoff is not fatal).
    """
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    delta = delta_path.min_value()
    if delta <= 0:
        raise ValueError("Delta must be bounded below by a positive constant")
    a = t - cutoff
    # merged segment boundaries of both paths
    pts = np.union1d(k_path.segment_points(a, t), delta_path.segment_points(a, t))
    # exact cumulative integral of Delta at the boundaries, right to left
    exps = np.zeros(len(pts))
    for i in range(len(pts) - 2, -1, -1):
        mid = 0.5 * (pts[i] + pts[i + 1])
        exps[i] = exps[i + 1] + delta_path.value_at(mid) * (pts[i + 1] - pts[i])
    total = 0.0
    nodes_used = 0
    for i in range(len(pts) - 1):
        lo, hi = pts[i], pts[i + 1]
        width = hi - lo
        if width <= 0:
            continue
        n_sub = max(2, math.ceil(width / max_step))
        s = np.linspace(lo, hi, n_sub + 1)
        mid = 0.5 * (lo + hi)
        kk = k_path.value_at(mid)
        dd = delta_path.value_at(mid)
        # E(s) = int_s^t Delta: linear within the segment
        e_vals = exps[i + 1] + dd * (hi - s)
        f = kk * np.exp(-e_vals)
        total += np.trapezoid(f, s)
        nodes_used += n_sub + 1
    bound = k_path.max_value() * math.exp(-delta * cutoff) / delta
    return StationaryMeanResult(value=float(total), cutoff=cutoff,
                                cutoff_error_bound=float(bound),
                                nodes_used=nodes_used)


# ---------------------------------------------------------------------------
# Spectral average of the stationary mean
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SpectralEnvironment:
    """Finite symmetric environment chain with potential V = -Delta,
    Delta >= delta > 0; the averaged stationary mean comes from the spectrum
    of H = L + V."""

    generator: np.ndarray
    delta_potential: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.generator, dtype=float)
        n = g.shape[0]
        if g.shape != (n, n):
            raise ValueError("generator must be square")
        if not np.allclose(g, g.T, atol=1e-10, rtol=0):
            raise ValueError("generator must be symmetric")
        off = g - np.diag(np.diag(g))
        if np.any(off < -1e-12):
            raise ValueError("off-diagonal generator entries must be >= 0")
        if np.max(np.abs(g.sum(axis=1))) > 1e-9 * max(1.0, np.abs(g).max()):
            raise ValueError("generator rows must sum to 0")
        d = np.asarray(self.delta_potential, dtype=float)
        if d.shape != (n,) or np.any(d <= 0):
            raise ValueError("Delta must be positive per state")

    @property
    def n_states(self) -> int:
        return self.generator.shape[0]

    @property
    def delta(self) -> float:
        return float(np.min(self.delta_potential))

    def hamiltonian(self) -> np.ndarray:
        return np.asarray(self.generator, dtype=float) - np.diag(self.delta_potential)

    def eigenpairs(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.hamiltonian())


@dataclass(frozen=True)
class SpectralMeanResult:
    eigen_sum: float
    linear_solve: float
    eigenvalues: np.ndarray

    @property
    def agreement(self) -> float:
        scale = max(abs(self.eigen_sum), abs(self.linear_solve), 1e-300)
        return abs(self.eigen_sum - self.linear_solve) / scale


def spectral_mean(env: SpectralEnvironment, mean_k: float) -> SpectralMeanResult:
    """Environment-averaged stationary mean:
    <m> = -(<k>/N) sum_i (psi_i, 1)^2 / lambda_i over the eigenpairs of
    H = L - diag(Delta), cross-checked against <k> pi^T (-H)^{-1} 1 with
    pi = 1/N."""
    lam, psi = env.eigenpairs()
    if np.max(lam) > -env.delta + 1e-9:
        raise ValueError("spectrum must sit below -min Delta")
    n = env.n_states
    ones = np.ones(n)
    overlaps = psi.T @ ones
    eigen_sum = -(mean_k / n) * float(np.sum(overlaps**2 / lam))
    solve = mean_k * float(ones @ np.linalg.solve(-env.hamiltonian(), ones)) / n
    return SpectralMeanResult(eigen_sum=eigen_sum, linear_solve=solve,
                              eigenvalues=lam)


def random_spectral_environment(n: int, seed: int, delta: float = 0.5
                                ) -> SpectralEnvironment:
    """Random symmetric environment for exercising the spectral identity."""
    rng = np.random.default_rng(seed)
    w = rng.uniform(0.1, 1.0, size=(n, n))
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    g = w.copy()
    np.fill_diagonal(g, -w.sum(axis=1))
    pot = delta + rng.uniform(0.0, 2.0, size=n)
    return SpectralEnvironment(generator=g, delta_potential=pot)


# ---------------------------------------------------------------------------
# Two-state Markov environment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TwoStateVerdict:
    ergodic: bool
    delta: float
    k_max: float
    threshold: Optional[float]

    @property
    def verdict(self) -> str:
        return "Ergodic" if self.ergodic else "Inconclusive"


def two_state_ergodicity(env: MarkovChainEnv) -> TwoStateVerdict:
    """Lyapunov drift f(n, x) = n gives Gf = (beta_x - mu_x) n + k_x, which
    is negative for n > max k / min(mu - beta); switch rates drop out."""
    if env.n_states != 2:
        raise ValueError("two-state test requires exactly two states")
    gaps = [m - b for m, b in zip(env.mu, env.beta)]
    delta = min(gaps)
    k_max = max(env.k)
    if delta > 0 and math.isfinite(k_max):
        return TwoStateVerdict(ergodic=True, delta=delta, k_max=k_max,
                               threshold=k_max / delta)
    return TwoStateVerdict(ergodic=False, delta=delta, k_max=k_max, threshold=None)


# ---------------------------------------------------------------------------
# Feynman-Kac propagator on a finite space
# ---------------------------------------------------------------------------

def _walk_structure(space) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(out_rate, neighbor indices, neighbor cdf) for the underlying walk."""
    if isinstance(space, FiniteSet):
        a = space.jump_matrix()
        out = a.sum(axis=1)
        n = space.n_sites
        idx = np.broadcast_to(np.arange(n), (n, n)).copy()
        cdf = np.empty((n, n))
        for x in range(n):
            cdf[x] = np.cumsum(a[x] / out[x]) if out[x] > 0 else 1.0
        return out, idx, cdf
    if isinstance(space, Torus):
        from .ctmc import _torus_tables

        idx, cdf = _torus_tables(space)
        out = np.full(space.n_sites, space.kernel.total_weight())
        return out, idx, cdf
    raise TypeError(f"unsupported space {type(space).__name__}")


def _space_generator(space) -> np.ndarray:
    """Generator matrix of the plain migration walk on ``space``."""
    if isinstance(space, FiniteSet):
        a = space.jump_matrix()
        g = a.copy()
        np.fill_diagonal(g, -a.sum(axis=1))
        return g
    if isinstance(space, Torus):
        n = space.n_sites
        idx, cdf = _walk_structure(space)[1:]
        out = np.full(n, space.kernel.total_weight())
        w = np.diff(np.concatenate([np.zeros((n, 1)), cdf], axis=1), axis=1)
        g = np.zeros((n, n))
        for x in range(n):
            for j in range(idx.shape[1]):
                g[x, idx[x, j]] += out[x] * w[x, j]
            g[x, x] -= out[x]
        return g
    raise TypeError(f"unsupported space {type(space).__name__}")


@dataclass(frozen=True)
class FeynmanKacResult:
    """Monte Carlo propagator estimate against the matrix-exponential
    oracle for dq/dt = L_a q + (beta - mu) q from a point source."""

    estimate: Optional[float]
    se: Optional[float]
    ode_value: float
    hits: int
    walkers: int
    total_weight_mean: float
    total_weight_se: float

    @property
    def z(self) -> float:
        if self.estimate is None or not self.se:
            return math.inf
        return (self.estimate - self.ode_value) / self.se


def feynman_kac_q(space, beta_field, mu_field, s: float, x: int, y: int,
                  walkers: int, seed: int) -> FeynmanKacResult:
    """Estimate q(s, x, y) = E_x[ exp(int_0^s (beta-mu)(x_u) du) 1{x_s = y} ]
    by simulating migration walks, and solve the propagator equation exactly
    on the finite space for comparison."""
    if walkers < 1000:
        raise ValueError("use at least 1000 walkers")
    beta_field = np.asarray(beta_field, dtype=float)
    mu_field = np.asarray(mu_field, dtype=float)
    out_rate, nbr_idx, nbr_cdf = _walk_structure(space)
    n = len(out_rate)
    if beta_field.shape != (n,) or mu_field.shape != (n,):
        raise ValueError("fields must give one value per site")
    pot = beta_field - mu_field
    rng = ctmc.replica_rng(seed)
    weights = np.zeros(walkers)
    endpoint = np.zeros(walkers, dtype=np.int64)
    for w_i in range(walkers):
        pos = x
        t = 0.0
        acc = 0.0
        while True:
            rate = out_rate[pos]
            dt = rng.exponential(1.0 / rate) if rate > 0 else math.inf
            if t + dt >= s:
                acc += pot[pos] * (s - t)
                break
            acc += pot[pos] * dt
            t += dt
            u = rng.random()
            row = nbr_cdf[pos]
            j = int(np.searchsorted(row, u, side="right"))
            j = min(j, row.shape[0] - 1)
            pos = int(nbr_idx[pos, j])
        weights[w_i] = math.exp(acc)
        endpoint[w_i] = pos
    h = _space_generator(space) + np.diag(pot)
    ode_value = float(expm_series(h * s)[x, y])
    hit_mask = endpoint == y
    hits = int(hit_mask.sum())
    filtered = weights * hit_mask
    estimate = float(filtered.mean()) if hits > 0 else None
    se = float(filtered.std(ddof=1) / math.sqrt(walkers)) if hits > 0 else None
    return FeynmanKacResult(
        estimate=estimate, se=se, ode_value=ode_value, hits=hits,
        walkers=walkers,
        total_weight_mean=float(weights.mean()),
        total_weight_se=float(weights.std(ddof=1) / math.sqrt(walkers)))


# ---------------------------------------------------------------------------
# Spatial-environment dichotomy
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DichotomyReport:
    """Monte Carlo verdict on the spatial environment: Case I (beta == mu)
    grows linearly with slope at least delta1; Case II (mu - beta >= delta1)
    plateaus below max k / delta1."""

    case: str
    grid: np.ndarray
    mean_curve: np.ndarray
    se_curve: np.ndarray
    slope: Optional[float]
    slope_se: Optional[float]
    lower_bound_slope: Optional[float]
    plateau: Optional[float]
    plateau_se: Optional[float]
    plateau_bound: Optional[float]
    plateau_flat: Optional[bool]
    checks: tuple[stats.ZCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and (self.plateau_flat is not False)


def case_dichotomy(env: SpatialField, t_grid, replicas: int, seed: int,
                   jobs: int = 1) -> DichotomyReport:
    """Simulate the spatial-environment model and test the per-site mean
    against the growth (Case I) or boundedness (Case II) claims."""
    grid = np.asarray(t_grid, dtype=float)
    n_sites = env.space.n_sites
    beta = np.asarray(env.beta)
    mu = np.asarray(env.mu)
    case = "I" if np.allclose(beta, mu) else "II"
    gap = float(np.min(mu - beta))
    if case == "II" and gap <= 0:
        raise ValueError("Case II requires mu - beta bounded below by a "
                         "positive constant at every site")

    def one(i: int) -> np.ndarray:
        r = ctmc.simulate_env(env, horizon=float(grid[-1]), grid=grid,
                              seed=seed, replica=i, n0=0)
        return r.counts.mean(axis=1)

    curves = ctmc.map_replicas(one, replicas, jobs=jobs)
    acc = stats.PowerSums(shape=(len(grid),))
    half = len(grid) // 2
    slope_acc = stats.PowerSums()
    diff_acc = stats.PowerSums()
    for c in curves:
        acc.add(c)
        slope_acc.add(stats.fit_line(grid[half:], c[half:]).slope)
        diff_acc.add(c[-1] - c[-2])
    mean_curve = acc.mean
    se_curve = acc.se_mean
    checks: list[stats.ZCheck] = []
    if case == "I":
        slope = float(slope_acc.mean)
        slope_se = float(slope_acc.se_mean)
        checks.append(stats.ZCheck("case I growth slope >= delta1", env.delta1,
                                   slope, slope_se, side="lower_bound"))
        return DichotomyReport(case=case, grid=grid, mean_curve=mean_curve,
                               se_curve=se_curve, slope=slope, slope_se=slope_se,
                               lower_bound_slope=env.delta1, plateau=None,
                               plateau_se=None, plateau_bound=None,
                               plateau_flat=None, checks=tuple(checks))
    # the propagator bound decays at the mortality gap, so the plateau cap
    # is max k over the gap (the gap equals delta1 when the model is tuned
    # to the k-band floor)
    bound = max(max(row) for row in env.k_values) / gap
    plateau = float(mean_curve[-1])
    plateau_se = float(se_curve[-1])
    checks.append(stats.ZCheck("case II plateau <= max k / rate gap", bound,
                               plateau, plateau_se, side="upper_bound"))
    flat = abs(float(diff_acc.mean)) <= 3.0 * float(diff_acc.se_mean)
    return DichotomyReport(case=case, grid=grid, mean_curve=mean_curve,
                           se_curve=se_curve, slope=None, slope_se=None,
                           lower_bound_slope=None, plateau=plateau,
                           plateau_se=plateau_se, plateau_bound=bound,
                           plateau_flat=flat, checks=tuple(checks))
