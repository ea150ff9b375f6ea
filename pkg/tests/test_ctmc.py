import numpy as np
import pytest

from branchimm import ctmc, stats
from branchimm.models import (ByPopulationLevel, FiniteSet, LatticeKernel,
                              MarkovChainEnv, PopulationState,
                              RateDistribution, RateParams, Torus)

P123 = RateParams(beta=1, mu=2, k=3)


def collect(fn, replicas):
    acc = None
    for v in ctmc.map_replicas(fn, replicas):
        if acc is None:
            acc = stats.PowerSums(np.shape(v))
        acc.add(v)
    return acc


def test_same_seed_same_path():
    grid = np.linspace(1, 20, 8)
    a = ctmc.simulate_single_site(P123, 1, 20.0, grid, seed=7, record_events=True)
    b = ctmc.simulate_single_site(P123, 1, 20.0, grid, seed=7, record_events=True)
    assert np.array_equal(a.counts, b.counts)
    assert np.array_equal(a.events.times, b.events.times)
    assert a.final == b.final
    c = ctmc.simulate_single_site(P123, 1, 20.0, grid, seed=7, replica=1)
    assert not np.array_equal(a.counts, c.counts)


def test_all_rates_zero_path_constant():
    params = RateParams(beta=0, mu=0, k=0)
    r = ctmc.simulate_single_site(params, 5, 10.0, [1.0, 5.0, 10.0], seed=1)
    assert r.counts.ravel().tolist() == [5, 5, 5]
    assert r.final.counts == (5,)


def test_pure_immigration_is_poisson():
    # beta = mu = 0: n(t) - n0 is Poisson(k t); dispersion index and mean
    params = RateParams(beta=0, mu=0, k=2.5)
    t = 4.0
    reps = 3000

    def one(i):
        r = ctmc.simulate_single_site(params, 3, t, [t], seed=11, replica=i)
        return float(r.counts[0, 0] - 3)

    vals = [one(i) for i in range(reps)]
    acc = stats.from_samples(vals)
    target = params.k * t
    assert abs(acc.mean - target) <= 3 * acc.se_mean
    assert stats.poisson_dispersion(vals) > 0.01


def test_event_selection_exact_frozen_rates():
    # immigration-only multisite model keeps all rates frozen: sites follow
    # the rate proportions, waiting times are exponential at the total rate
    k = np.array([0.5, 1.0, 1.5, 2.0])
    params = [RateParams(beta=0, mu=0, k=float(v)) for v in k]
    space = FiniteSet.from_matrix(np.zeros((4, 4)))
    r = ctmc.simulate_finite_space(params, space, np.zeros(4, dtype=np.int64),
                                   4000.0, [4000.0], seed=5,
                                   record_events=True)
    ev = r.events
    assert len(ev) > 10_000
    counts = np.bincount(ev.sites, minlength=4)
    assert stats.chi_square_gof(counts, k / k.sum()) > 0.01
    gaps = np.diff(np.concatenate(([0.0], ev.times)))
    assert stats.ks_exponential(gaps, rate=float(k.sum())) > 0.01
    assert np.all(ev.kinds == 0)  # immigration arrives as birth events


def test_event_log_lines_format():
    r = ctmc.simulate_single_site(P123, 1, 2.0, [2.0], seed=3, record_events=True)
    lines = list(r.events.lines())
    assert lines
    for line in lines:
        t, site, kind, target = line.split("\t")
        float(t)
        assert site == "0" and target == "0"
        assert kind in {"B", "D"}
    times = [float(l.split("\t")[0]) for l in lines]
    assert times == sorted(times)


def test_torus_jump_targets_and_conservation():
    kern = LatticeKernel.nearest_neighbor(1)
    torus = Torus(side=8, dim=1, kernel=kern)
    params = RateParams(beta=0, mu=0, k=0, kappa=1.0)
    n0 = np.full(8, 3, dtype=np.int64)
    r = ctmc.simulate_torus(params, torus, n0, 30.0, [10.0, 30.0], seed=9,
                            record_events=True)
    assert r.counts.sum(axis=1).tolist() == [24, 24]
    assert sum(r.final.counts) == 24
    ev = r.events
    assert len(ev) > 100
    assert np.all(ev.kinds == 2)
    hop = (ev.targets - ev.sites) % 8
    assert set(hop.tolist()) <= {1, 7}


def test_torus_per_site_mean_limit():
    # subcritical ring: per-site mean settles at k/(mu-beta) = 1
    params = RateParams(beta=1, mu=2, k=1)
    torus = Torus(side=64, dim=1, kernel=LatticeKernel.nearest_neighbor(1))
    grid = np.array([20.0])
    reps = 800

    def one(i):
        r = ctmc.simulate_torus(params, torus, np.ones(64, dtype=np.int64),
                                20.0, grid, seed=71, replica=i)
        return float(r.counts[0].mean())

    acc = collect(one, reps)
    assert abs(acc.mean - 1.0) <= 3 * acc.se_mean


def test_counts_never_negative_replay():
    space = FiniteSet.from_matrix(np.array([[0.0, 0.7], [0.7, 0.0]]),
                                  symmetric=True)
    r = ctmc.simulate_finite_space(RateParams(1, 2, 1), space,
                                   np.array([2, 0], dtype=np.int64),
                                   50.0, [50.0], seed=21, record_events=True)
    counts = np.array([2, 0], dtype=np.int64)
    for s, kind, tgt in zip(r.events.sites, r.events.kinds, r.events.targets):
        if kind == 0:
            counts[s] += 1
        elif kind == 1:
            counts[s] -= 1
        else:
            counts[s] -= 1
            counts[tgt] += 1
        assert np.all(counts >= 0)
    assert counts.tolist() == list(r.final.counts)


def test_single_site_mean_and_variance_limits():
    reps = 4000
    grid = np.array([20.0])

    def one(i):
        return float(ctmc.simulate_single_site(P123, 1, 20.0, grid, seed=13,
                                               replica=i).counts[0, 0])

    acc = collect(one, reps)
    assert abs(acc.mean - 3.0) <= 3 * acc.se_mean
    assert abs(acc.var - 6.0) <= 3 * acc.se_var


def test_finite_space_single_site_reduction():
    grid = np.array([2.0, 8.0, 20.0])
    space = FiniteSet.from_matrix(np.zeros((1, 1)))
    reps = 2500

    def single(i):
        return ctmc.simulate_single_site(P123, 1, 20.0, grid, seed=17,
                                         replica=i).counts[:, 0].astype(float)

    def finite(i):
        return ctmc.simulate_finite_space(P123, space, np.array([1]), 20.0,
                                          grid, seed=18,
                                          replica=i).counts[:, 0].astype(float)

    a = collect(single, reps)
    b = collect(finite, reps)
    z = (a.mean - b.mean) / np.sqrt(a.se_mean**2 + b.se_mean**2)
    assert np.all(np.abs(z) <= 3)


def test_decoupled_sites_match_independent_runs():
    # zero transfer rates: per-site marginals equal independent single sites
    space = FiniteSet.from_matrix(np.zeros((3, 3)))
    params = [RateParams(1, 2, 1), RateParams(0.5, 2, 2), RateParams(0, 1, 3)]
    grid = np.array([15.0])
    reps = 2500

    def joint(i):
        return ctmc.simulate_finite_space(params, space,
                                          np.ones(3, dtype=np.int64), 15.0,
                                          grid, seed=31,
                                          replica=i).counts[0].astype(float)

    acc = collect(joint, reps)
    for x, p in enumerate(params):
        def single(i, p=p):
            return float(ctmc.simulate_single_site(p, 1, 15.0, grid, seed=32 + x,
                                                   replica=i).counts[0, 0])

        ref = collect(single, reps)
        z = (acc.mean[x] - ref.mean) / np.sqrt(acc.se_mean[x]**2 + ref.se_mean**2)
        assert abs(z) <= 3


def test_event_rate_table_consistency():
    space = FiniteSet.from_matrix(np.array([[0.0, 0.5], [0.5, 0.0]]),
                                  symmetric=True)
    state = PopulationState(time=0.0, counts=(2, 0))
    table = ctmc.event_rate_table([P123, P123], space, state)
    assert table.consistent()
    assert table.death[1] == 0.0 and table.jump[1] == 0.0
    assert table.birth[1] == P123.k


def test_overflow_raises(monkeypatch):
    monkeypatch.setattr(ctmc, "POPULATION_CAP", 500)
    params = RateParams(beta=5, mu=0.1, k=1)
    with pytest.raises(ctmc.PopulationOverflowError):
        ctmc.simulate_single_site(params, 10, 50.0, [50.0], seed=3)


def test_invalid_model_rejected():
    with pytest.raises(ctmc.ModelError):
        ctmc.simulate_single_site(RateParams(-1, 1, 1), 1, 1.0, [1.0], seed=0)
    with pytest.raises(ValueError):
        ctmc.simulate_single_site(P123, 1, 1.0, [2.0], seed=0)  # grid > horizon


def test_by_population_level_degenerate_matches_single_site():
    env = ByPopulationLevel(beta=RateDistribution("constant", 1.0),
                            mu=RateDistribution("constant", 2.0),
                            k=RateDistribution("constant", 3.0),
                            c_minus=1.0, c_plus=3.0)
    grid = np.array([20.0])
    reps = 2500

    def env_run(i):
        return float(ctmc.simulate_env(env, 20.0, grid, seed=41, n0=1,
                                       replica=i, env_seed=4).counts[0, 0])

    def plain(i):
        return float(ctmc.simulate_single_site(P123, 1, 20.0, grid, seed=42,
                                               replica=i).counts[0, 0])

    a = collect(env_run, reps)
    b = collect(plain, reps)
    z = (a.mean - b.mean) / np.sqrt(a.se_mean**2 + b.se_mean**2)
    assert abs(z) <= 3


def test_environment_tables_shared_and_deterministic():
    env = ByPopulationLevel(beta=RateDistribution("uniform", 0.5, 1.5),
                            mu=RateDistribution("uniform", 1.5, 2.5),
                            k=RateDistribution("uniform", 0.5, 1.5),
                            c_minus=0.5, c_plus=2.5)
    t1 = ctmc.sample_environment_levels(env, env_seed=5, levels=64)
    t2 = ctmc.sample_environment_levels(env, env_seed=5, levels=128)
    for a, b in zip(t1, t2):
        assert np.array_equal(a, b[:64])


def test_markov_env_identical_states_match_single_site():
    env = MarkovChainEnv(beta=(1.0, 1.0), mu=(2.0, 2.0), k=(3.0, 3.0),
                         switch_rates=((0.0, 2.0), (2.0, 0.0)))
    grid = np.array([5.0, 20.0])
    reps = 2500

    def env_run(i):
        return ctmc.simulate_env(env, 20.0, grid, seed=51, n0=1,
                                 replica=i).counts[:, 0].astype(float)

    def plain(i):
        return ctmc.simulate_single_site(P123, 1, 20.0, grid, seed=52,
                                         replica=i).counts[:, 0].astype(float)

    a = collect(env_run, reps)
    b = collect(plain, reps)
    z = (a.mean - b.mean) / np.sqrt(a.se_mean**2 + b.se_mean**2)
    assert np.all(np.abs(z) <= 3)


def test_replica_splitting_documented():
    s0 = ctmc.replica_sequence(99, 0)
    s1 = ctmc.replica_sequence(99, 1)
    assert s0.entropy == 99 and s0.spawn_key == (0,)
    assert not np.array_equal(s0.generate_state(2), s1.generate_state(2))


def test_map_replicas_thread_jobs_match_serial():
    grid = np.array([5.0])

    def one(i):
        return float(ctmc.simulate_single_site(P123, 1, 5.0, grid, seed=61,
                                               replica=i).counts[0, 0])

    serial = ctmc.map_replicas(one, 40, jobs=1)
    threaded = ctmc.map_replicas(one, 40, jobs=4)
    assert serial == threaded
