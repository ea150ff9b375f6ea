"""Exact event-by-event simulators for every model variant: single site,
finite site set, torus lattice, and the three random-environment models.

Replica contract: replica ``i`` of a run with master seed ``m`` draws from
``numpy.random.SeedSequence(m, spawn_key=(i,))``, so identical
(model, seed, grid) inputs always produce identical results, and any number
of replicas may run concurrently.  Aggregation helpers accumulate plain
power sums, which makes reductions order-insensitive.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import _engine
from .models import (ByPopulationLevel, EnvironmentSpec, FiniteSet,
                     LatticeKernel, MarkovChainEnv, PopulationState,
                     RateParams, SingleSite, SpatialField, Torus, validate,
                     validate_environment)

#: Hard per-replica population cap; exceeding it aborts the replica instead
#: of silently wrapping (supercritical runs are detected, not saturated).
POPULATION_CAP = 2**32

EVENT_CODES = ("B", "D", "J")


class PopulationOverflowError(RuntimeError):
    """A replica exceeded the population cap: the run is supercritical."""


class ModelError(ValueError):
    """Simulation was requested for a model that fails validation."""


def master_sequence(master_seed: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed))


def replica_sequence(master_seed: int, index: int) -> np.random.SeedSequence:
    """The documented replica-splitting function."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))


def replica_rng(master_seed: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(replica_sequence(master_seed, index)))


def _seed_word(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class EventLog:
    """Per-replica event record: times, sites, event codes (0=B,1=D,2=J) and
    jump targets (equal to the site for births and deaths)."""

    times: np.ndarray
    sites: np.ndarray
    kinds: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def lines(self):
        for t, s, kind, tgt in zip(self.times, self.sites, self.kinds, self.targets):
            yield f"{t:.17g}\t{int(s)}\t{EVENT_CODES[int(kind)]}\t{int(tgt)}"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")


@dataclass(frozen=True)
class ReplicaResult:
    """One replica path sampled on the requested grid (right-continuous
    convention: the value just after the last event at or before t)."""

    seed: int
    grid: np.ndarray
    counts: np.ndarray  # shape (len(grid), n_sites), int64
    final: PopulationState
    events: Optional[EventLog] = None

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


@dataclass(frozen=True)
class EventRateTable:
    """Per-site event rates at a frozen state, with their total."""

    birth: np.ndarray
    death: np.ndarray
    jump: np.ndarray
    total: float

    def consistent(self, rtol: float = 1e-9) -> bool:
        s = float(self.birth.sum() + self.death.sum() + self.jump.sum())
        return abs(s - self.total) <= rtol * max(1.0, abs(s))


def event_rate_table(params, space, state: PopulationState) -> EventRateTable:
    """Rates the simulator would use at ``state``; diagnostic only."""
    beta, mu, k, out_rate, _, _ = _site_arrays(params, space)
    n = np.asarray(state.counts, dtype=np.float64)
    birth = beta * n + k
    death = mu * n
    jump = out_rate * n
    return EventRateTable(birth=birth, death=death, jump=jump,
                          total=float(birth.sum() + death.sum() + jump.sum()))


def _check_grid(grid, horizon: float) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("grid must be a non-empty 1-d sequence of times")
    if np.any(np.diff(g) <= 0):
        raise ValueError("grid must be strictly increasing")
    if g[0] < 0 or g[-1] > horizon:
        raise ValueError("grid must lie in [0, horizon]")
    return g


def _require_valid(params, space) -> None:
    report = validate(params if isinstance(params, RateParams) else params[0], space)
    if not report.ok:
        raise ModelError(str(report))


def _finalize(status: int) -> None:
    if status == _engine.STATUS_OVERFLOW:
        raise PopulationOverflowError(
            f"population exceeded {POPULATION_CAP} particles; "
            "the run appears supercritical")
    if status == _engine.STATUS_INTERNAL:
        raise AssertionError("event fired on an empty site")


def _torus_tables(space: Torus) -> tuple[np.ndarray, np.ndarray]:
    """Neighbor index table (site, offset) -> target site, plus the shared
    cumulative kernel weights, replicated per site."""
    kern = space.kernel
    offs = kern.offsets()
    w = kern.weights()
    cdf = np.cumsum(w / w.sum())
    n = space.n_sites
    shape = (space.side,) * space.dim
    coords = np.stack(np.unravel_index(np.arange(n), shape), axis=1)
    nbr_idx = np.empty((n, len(offs)), dtype=np.int64)
    for j, off in enumerate(offs):
        shifted = (coords + off) % space.side
        nbr_idx[:, j] = np.ravel_multi_index(shifted.T, shape)
    nbr_cdf = np.broadcast_to(cdf, (n, len(offs))).copy()
    return nbr_idx, nbr_cdf


def _finite_tables(space: FiniteSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    a = space.jump_matrix()
    out_rate = a.sum(axis=1)
    n = space.n_sites
    nbr_idx = np.broadcast_to(np.arange(n, dtype=np.int64), (n, n)).copy()
    nbr_cdf = np.empty((n, n), dtype=np.float64)
    for x in range(n):
        if out_rate[x] > 0:
            nbr_cdf[x] = np.cumsum(a[x] / out_rate[x])
        else:
            nbr_cdf[x] = 1.0
    return out_rate, nbr_idx, nbr_cdf


def _site_arrays(params, space):
    """Broadcast rate parameters over the site set and build jump tables."""
    if isinstance(space, SingleSite):
        p = params if isinstance(params, RateParams) else params[0]
        one = np.ones(1)
        return (p.beta * one, p.mu * one, p.k * one, 0.0 * one,
                np.zeros((1, 1), dtype=np.int64), np.ones((1, 1)))
    if isinstance(space, Torus):
        p = params
        n = space.n_sites
        nbr_idx, nbr_cdf = _torus_tables(space)
        out = np.full(n, p.kappa * space.kernel.total_weight())
        return (np.full(n, p.beta), np.full(n, p.mu), np.full(n, p.k), out,
                nbr_idx, nbr_cdf)
    if isinstance(space, FiniteSet):
        n = space.n_sites
        if isinstance(params, RateParams):
            plist = [params] * n
        else:
            plist = list(params)
            if len(plist) != n:
                raise ValueError("need one RateParams per site")
        beta = np.array([p.beta for p in plist])
        mu = np.array([p.mu for p in plist])
        k = np.array([p.k for p in plist])
        out_rate, nbr_idx, nbr_cdf = _finite_tables(space)
        return beta, mu, k, out_rate, nbr_idx, nbr_cdf
    raise TypeError(f"unsupported site space {type(space).__name__}")


def simulate_single_site(params: RateParams, n0: int, horizon: float, grid,
                         seed: int, replica: int = 0,
                         record_events: bool = False) -> ReplicaResult:
    """Exact path of the birth-death chain with birth rate beta*n + k and
    death rate mu*n, sampled on ``grid``."""
    _require_valid(params, SingleSite())
    g = _check_grid(grid, horizon)
    seq = replica_sequence(seed, replica)
    rng = np.random.Generator(np.random.PCG64(seq))
    status, t, n, samples, ev_t, ev_kind = _engine.single_site_kernel(
        params.beta, params.mu, params.k, int(n0), g, float(horizon),
        POPULATION_CAP, record_events, rng)
    _finalize(status)
    events = None
    if record_events:
        z = np.zeros(len(ev_t), dtype=np.int64)
        events = EventLog(times=ev_t, sites=z, kinds=ev_kind, targets=z)
    return ReplicaResult(seed=_seed_word(seq), grid=g,
                         counts=samples.reshape(-1, 1),
                         final=PopulationState(time=max(t, 0.0), counts=(int(n),)),
                         events=events)


def _simulate_sites(params, space, n0, horizon, grid, seed, replica,
                    record_events) -> ReplicaResult:
    _require_valid(params, space)
    g = _check_grid(grid, horizon)
    beta, mu, k, out_rate, nbr_idx, nbr_cdf = _site_arrays(params, space)
    n0v = np.asarray(n0, dtype=np.int64)
    if n0v.ndim == 0:
        n0v = np.full(space.n_sites, int(n0v), dtype=np.int64)
    if n0v.shape != (space.n_sites,):
        raise ValueError("n0 must give one count per site")
    if np.any(n0v < 0):
        raise ValueError("negative initial count")
    seq = replica_sequence(seed, replica)
    rng = np.random.Generator(np.random.PCG64(seq))
    status, t, counts, samples, ev_t, ev_site, ev_kind, ev_tgt = \
        _engine.multisite_kernel(beta, mu, k, out_rate, nbr_idx, nbr_cdf,
                                 n0v, g, float(horizon), POPULATION_CAP,
                                 record_events, rng)
    _finalize(status)
    events = None
    if record_events:
        events = EventLog(times=ev_t, sites=ev_site, kinds=ev_kind, targets=ev_tgt)
    return ReplicaResult(seed=_seed_word(seq), grid=g, counts=samples,
                         final=PopulationState(time=max(t, 0.0),
                                               counts=tuple(int(c) for c in counts)),
                         events=events)


def simulate_finite_space(params, space: FiniteSet, n0, horizon: float, grid,
                          seed: int, replica: int = 0,
                          record_events: bool = False) -> ReplicaResult:
    """Vector chain on a finite site set: per-site births beta(x)n+k(x),
    deaths mu(x)n, single-particle transfers at rate n(x)a(x,y)."""
    return _simulate_sites(params, space, n0, horizon, grid, seed, replica,
                           record_events)


def simulate_torus(params: RateParams, space: Torus, n0, horizon: float, grid,
                   seed: int, replica: int = 0,
                   record_events: bool = False) -> ReplicaResult:
    """Lattice branching random walk with immigration on a periodic box."""
    return _simulate_sites(params, space, n0, horizon, grid, seed, replica,
                           record_events)


def poisson_initial_field(mean: float, n_sites: int, seed: int,
                          replica: int = 0) -> np.ndarray:
    """I.i.d. Poisson(mean) occupation numbers, drawn from a stream separate
    from the dynamical one so the event sequence is unaffected."""
    seq = np.random.SeedSequence(int(seed), spawn_key=(int(replica), 1))
    rng = np.random.Generator(np.random.PCG64(seq))
    return rng.poisson(mean, n_sites).astype(np.int64)


# ---------------------------------------------------------------------------
# Random environments
# ---------------------------------------------------------------------------

def _env_tables(env: ByPopulationLevel, env_seed: int, levels: int,
                tables=None):
    """Quenched rate tables for levels 0..levels-1, sampled one level at a
    time in level order so the realization does not depend on how far the
    population has wandered."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(env_seed))))
    if tables is None:
        start, beta, mu, k = 0, [], [], []
    else:
        beta, mu, k = tables
        beta, mu, k = list(beta), list(mu), list(k)
        start = len(beta)
        # replay the stream consumed for the existing prefix
        for _ in range(start):
            env.beta.sample(rng, 1)
            env.mu.sample(rng, 1)
            env.k.sample(rng, 1)
    for _ in range(start, levels):
        beta.append(float(env.beta.sample(rng, 1)[0]))
        mu.append(float(env.mu.sample(rng, 1)[0]))
        k.append(float(env.k.sample(rng, 1)[0]))
    return (np.array(beta), np.array(mu), np.array(k))


def sample_environment_levels(env: ByPopulationLevel, env_seed: int,
                              levels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Public view of one quenched environment realization."""
    return _env_tables(env, env_seed, levels)


def simulate_env(env: EnvironmentSpec, horizon: float, grid, seed: int,
                 n0=0, replica: int = 0, env_seed: Optional[int] = None,
                 x0: int = 0) -> ReplicaResult:
    """Simulate under a random environment.

    ByPopulationLevel: birth-death chain whose level-n rates are the frozen
    triple sampled from ``env_seed`` (quenched; shared by all replicas).
    MarkovChainEnv: joint chain (n, x) with environment switching.
    SpatialField: torus chain with per-site rates and piecewise-constant
    k(t, x).
    """
    report = validate_environment(env)
    if not report.ok:
        raise ModelError(str(report))
    g = _check_grid(grid, horizon)
    seq = replica_sequence(seed, replica)
    rng = np.random.Generator(np.random.PCG64(seq))

    if isinstance(env, ByPopulationLevel):
        if env_seed is None:
            env_seed = seed
        levels = max(int(n0) * 2 + 64, 256)
        tables = _env_tables(env, env_seed, levels)
        samples = np.empty(len(g), dtype=np.int64)
        istate = np.array([int(n0), 0], dtype=np.int64)
        fstate = np.array([0.0])
        while True:
            status = _engine.level_env_kernel(tables[0], tables[1], tables[2],
                                              istate, fstate, g, samples,
                                              float(horizon), POPULATION_CAP, rng)
            if status != _engine.STATUS_NEED_ENV:
                break
            tables = _env_tables(env, env_seed, len(tables[0]) * 2, tables)
        _finalize(status)
        return ReplicaResult(seed=_seed_word(seq), grid=g,
                             counts=samples.reshape(-1, 1),
                             final=PopulationState(time=max(float(fstate[0]), 0.0),
                                                   counts=(int(istate[0]),)))

    if isinstance(env, MarkovChainEnv):
        status, t, n, _, n_samples, _ = _engine.markov_env_kernel(
            np.array(env.beta), np.array(env.mu), np.array(env.k),
            env.switch_matrix(), int(n0), int(x0), g, float(horizon),
            POPULATION_CAP, rng)
        _finalize(status)
        return ReplicaResult(seed=_seed_word(seq), grid=g,
                             counts=n_samples.reshape(-1, 1),
                             final=PopulationState(time=max(t, 0.0), counts=(int(n),)))

    if isinstance(env, SpatialField):
        space = env.space
        n0v = np.asarray(n0, dtype=np.int64)
        if n0v.ndim == 0:
            n0v = np.full(space.n_sites, int(n0v), dtype=np.int64)
        nbr_idx, nbr_cdf = _torus_tables(space)
        out = np.full(space.n_sites, space.kernel.total_weight())
        status, t, counts, samples = _engine.spatial_field_kernel(
            np.array(env.beta), np.array(env.mu), out, nbr_idx, nbr_cdf,
            np.array(env.k_breaks), np.array(env.k_values), n0v, g,
            float(horizon), POPULATION_CAP, rng)
        _finalize(status)
        return ReplicaResult(seed=_seed_word(seq), grid=g, counts=samples,
                             final=PopulationState(time=max(t, 0.0),
                                                   counts=tuple(int(c) for c in counts)))

    raise TypeError(f"unsupported environment {type(env).__name__}")


# ---------------------------------------------------------------------------
# Replica ensembles
# ---------------------------------------------------------------------------

def map_replicas(fn: Callable[[int], np.ndarray], replicas: int,
                 jobs: int = 1) -> list:
    """Evaluate ``fn`` for replica indices 0..replicas-1 and return results
    in index order, so downstream reductions are independent of scheduling."""
    if jobs <= 1:
        return [fn(i) for i in range(replicas)]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(replicas)))
