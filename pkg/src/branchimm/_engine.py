"""Jitted event loops for the exact continuous-time simulators.

Every kernel draws exponential waiting times at the current total rate and
selects events proportionally to their rates, so paths are exact in
distribution.  Kernels mutate the caller's numpy Generator, which makes
replica streams resumable and bit-reproducible for a fixed seed.

Status codes: 0 ok, 1 population overflow, 2 environment tables exhausted
(resumable), 3 internal consistency failure (event drawn on an empty site).
"""
from __future__ import annotations

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_OVERFLOW = 1
STATUS_NEED_ENV = 2
STATUS_INTERNAL = 3

EVENT_BIRTH = 0
EVENT_DEATH = 1
EVENT_JUMP = 2

# Tracked total rates are resynchronized from per-site rates this often to
# stop floating-point drift from accumulating over long paths.
_RESYNC_EVERY = 1024


@njit(cache=True, nogil=True)
def _grow(arr):
    out = np.empty(arr.shape[0] * 2, dtype=arr.dtype)
    out[: arr.shape[0]] = arr
    return out


@njit(cache=True, nogil=True)
def single_site_kernel(beta, mu, k, n0, grid, horizon, cap, record, rng):
    """Birth-death-immigration chain at one site.

    Fills ``samples[g]`` with the state just after the last event at or
    before ``grid[g]`` and returns the event log when ``record`` is set.
    """
    n = n0
    t = 0.0
    gi = 0
    G = grid.shape[0]
    samples = np.empty(G, dtype=np.int64)
    ev_t = np.empty(256, dtype=np.float64)
    ev_type = np.empty(256, dtype=np.int8)
    n_ev = 0
    status = STATUS_OK
    while True:
        rate = (beta + mu) * n + k
        if rate <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.exponential(1.0 / rate)
        while gi < G and grid[gi] < t_next:
            samples[gi] = n
            gi += 1
        if t_next > horizon:
            break
        u = rng.random() * rate
        if u < beta * n + k:
            n += 1
            ev = EVENT_BIRTH
        else:
            if n <= 0:
                status = STATUS_INTERNAL
                break
            n -= 1
            ev = EVENT_DEATH
        t = t_next
        if record:
            if n_ev >= ev_t.shape[0]:
                ev_t = _grow(ev_t)
                ev_type = _grow(ev_type)
            ev_t[n_ev] = t
            ev_type[n_ev] = ev
            n_ev += 1
        if n > cap:
            status = STATUS_OVERFLOW
            break
    return status, t, n, samples, ev_t[:n_ev], ev_type[:n_ev]


@njit(cache=True, nogil=True)
def multisite_kernel(beta, mu, k, out_rate, nbr_idx, nbr_cdf, n0, grid,
                     horizon, cap, record, rng):
    """General finite-space chain: per-site birth beta[x]*n+k[x], death
    mu[x]*n, and per-particle jumps at rate out_rate[x] to a neighbor drawn
    from the cumulative table row ``nbr_cdf[x]``."""
    N = beta.shape[0]
    G = grid.shape[0]
    counts = n0.copy()
    total = np.int64(0)
    for x in range(N):
        total += counts[x]
    site_rate = np.empty(N, dtype=np.float64)
    R = 0.0
    for x in range(N):
        site_rate[x] = (beta[x] + mu[x] + out_rate[x]) * counts[x] + k[x]
        R += site_rate[x]
    samples = np.empty((G, N), dtype=np.int64)
    ev_t = np.empty(256, dtype=np.float64)
    ev_site = np.empty(256, dtype=np.int64)
    ev_type = np.empty(256, dtype=np.int8)
    ev_target = np.empty(256, dtype=np.int64)
    n_ev = 0
    t = 0.0
    gi = 0
    status = STATUS_OK
    since_sync = 0
    while True:
        if since_sync >= _RESYNC_EVERY:
            R = 0.0
            for x in range(N):
                R += site_rate[x]
            since_sync = 0
        if R <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.exponential(1.0 / R)
        while gi < G and grid[gi] < t_next:
            for x in range(N):
                samples[gi, x] = counts[x]
            gi += 1
        if t_next > horizon:
            break
        # site selection proportional to per-site aggregate rates
        x = -1
        while x < 0:
            u = rng.random() * R
            acc = 0.0
            for j in range(N):
                acc += site_rate[j]
                if u < acc:
                    x = j
                    break
            if x < 0:
                # tracked R drifted above the true total: resync and redraw
                R = 0.0
                for j in range(N):
                    R += site_rate[j]
                if R <= 0.0:
                    break
        if x < 0:
            continue
        nx = counts[x]
        birth = beta[x] * nx + k[x]
        death = mu[x] * nx
        v = rng.random() * site_rate[x]
        target = x
        if v < birth:
            ev = EVENT_BIRTH
            counts[x] = nx + 1
            total += 1
        elif v < birth + death:
            ev = EVENT_DEATH
            if nx <= 0:
                status = STATUS_INTERNAL
                break
            counts[x] = nx - 1
            total -= 1
        else:
            ev = EVENT_JUMP
            if nx <= 0:
                status = STATUS_INTERNAL
                break
            w = rng.random()
            m = nbr_cdf.shape[1]
            target = nbr_idx[x, m - 1]
            for j in range(m):
                if w < nbr_cdf[x, j]:
                    target = nbr_idx[x, j]
                    break
            counts[x] = nx - 1
            counts[target] += 1
        t = t_next
        since_sync += 1
        new_x = (beta[x] + mu[x] + out_rate[x]) * counts[x] + k[x]
        R += new_x - site_rate[x]
        site_rate[x] = new_x
        if ev == EVENT_JUMP and target != x:
            new_tgt = (beta[target] + mu[target] + out_rate[target]) * counts[target] + k[target]
            R += new_tgt - site_rate[target]
            site_rate[target] = new_tgt
        if record:
            if n_ev >= ev_t.shape[0]:
                ev_t = _grow(ev_t)
                ev_site = _grow(ev_site)
                ev_type = _grow(ev_type)
                ev_target = _grow(ev_target)
            ev_t[n_ev] = t
            ev_site[n_ev] = x
            ev_type[n_ev] = ev
            ev_target[n_ev] = target
            n_ev += 1
        if total > cap:
            status = STATUS_OVERFLOW
            break
    return (status, t, counts, samples,
            ev_t[:n_ev], ev_site[:n_ev], ev_type[:n_ev], ev_target[:n_ev])


@njit(cache=True, nogil=True)
def level_env_kernel(beta_lv, mu_lv, k_lv, istate, fstate, grid, samples,
                     horizon, cap, rng):
    """Single-site chain whose rates depend on the current population level
    through the quenched tables ``*_lv``.  Returns STATUS_NEED_ENV when the
    level outgrows the tables; the caller extends them and re-enters with the
    same state arrays (``istate`` = [n, gi], ``fstate`` = [t])."""
    n = istate[0]
    gi = istate[1]
    t = fstate[0]
    G = grid.shape[0]
    levels = beta_lv.shape[0]
    status = STATUS_OK
    while True:
        if n >= levels:
            status = STATUS_NEED_ENV
            break
        rate = (beta_lv[n] + mu_lv[n]) * n + k_lv[n]
        if rate <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.exponential(1.0 / rate)
        while gi < G and grid[gi] < t_next:
            samples[gi] = n
            gi += 1
        if t_next > horizon:
            break
        u = rng.random() * rate
        if u < beta_lv[n] * n + k_lv[n]:
            n += 1
        else:
            if n <= 0:
                status = STATUS_INTERNAL
                break
            n -= 1
        t = t_next
        if n > cap:
            status = STATUS_OVERFLOW
            break
    istate[0] = n
    istate[1] = gi
    fstate[0] = t
    return status


@njit(cache=True, nogil=True)
def markov_env_kernel(beta_s, mu_s, k_s, switch, n0, x0, grid, horizon, cap, rng):
    """Joint chain (population n, environment state x) with per-state rates
    and environment switch rates ``switch[x, y]``."""
    S = beta_s.shape[0]
    G = grid.shape[0]
    n = n0
    x = x0
    t = 0.0
    gi = 0
    n_samples = np.empty(G, dtype=np.int64)
    x_samples = np.empty(G, dtype=np.int64)
    status = STATUS_OK
    switch_tot = np.empty(S, dtype=np.float64)
    for i in range(S):
        s = 0.0
        for j in range(S):
            s += switch[i, j]
        switch_tot[i] = s
    while True:
        rate = (beta_s[x] + mu_s[x]) * n + k_s[x] + switch_tot[x]
        if rate <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.exponential(1.0 / rate)
        while gi < G and grid[gi] < t_next:
            n_samples[gi] = n
            x_samples[gi] = x
            gi += 1
        if t_next > horizon:
            break
        u = rng.random() * rate
        birth = beta_s[x] * n + k_s[x]
        death = mu_s[x] * n
        if u < birth:
            n += 1
        elif u < birth + death:
            if n <= 0:
                status = STATUS_INTERNAL
                break
            n -= 1
        else:
            u -= birth + death
            y = S - 1
            acc = 0.0
            for j in range(S):
                acc += switch[x, j]
                if u < acc:
                    y = j
                    break
            x = y
        t = t_next
        if n > cap:
            status = STATUS_OVERFLOW
            break
    return status, t, n, x, n_samples, x_samples


@njit(cache=True, nogil=True)
def spatial_field_kernel(beta, mu, out_rate, nbr_idx, nbr_cdf, k_breaks,
                         k_vals, n0, grid, horizon, cap, rng):
    """Torus chain with static per-site beta/mu and piecewise-constant
    immigration k(t, x).  Rates are re-read at segment boundaries; waiting
    times are restarted there, which is exact for piecewise-constant rates."""
    N = beta.shape[0]
    G = grid.shape[0]
    S = k_breaks.shape[0]
    counts = n0.copy()
    total = np.int64(0)
    for xx in range(N):
        total += counts[xx]
    seg = 0
    for s in range(S):
        if k_breaks[s] <= 0.0:
            seg = s
    site_rate = np.empty(N, dtype=np.float64)
    R = 0.0
    for xx in range(N):
        site_rate[xx] = (beta[xx] + mu[xx] + out_rate[xx]) * counts[xx] + k_vals[seg, xx]
        R += site_rate[xx]
    samples = np.empty((G, N), dtype=np.int64)
    t = 0.0
    gi = 0
    status = STATUS_OK
    since_sync = 0
    while True:
        next_break = np.inf
        if seg + 1 < S:
            next_break = k_breaks[seg + 1]
        if since_sync >= _RESYNC_EVERY:
            R = 0.0
            for xx in range(N):
                R += site_rate[xx]
            since_sync = 0
        if R <= 0.0:
            t_next = np.inf
        else:
            t_next = t + rng.exponential(1.0 / R)
        if t_next > next_break and next_break <= horizon:
            # rates change before the next event: advance to the boundary
            while gi < G and grid[gi] < next_break:
                for xx in range(N):
                    samples[gi, xx] = counts[xx]
                gi += 1
            t = next_break
            seg += 1
            R = 0.0
            for xx in range(N):
                site_rate[xx] = (beta[xx] + mu[xx] + out_rate[xx]) * counts[xx] + k_vals[seg, xx]
                R += site_rate[xx]
            since_sync = 0
            continue
        while gi < G and grid[gi] < t_next:
            for xx in range(N):
                samples[gi, xx] = counts[xx]
            gi += 1
        if t_next > horizon:
            break
        x = -1
        while x < 0:
            u = rng.random() * R
            acc = 0.0
            for j in range(N):
                acc += site_rate[j]
                if u < acc:
                    x = j
                    break
            if x < 0:
                R = 0.0
                for j in range(N):
                    R += site_rate[j]
                if R <= 0.0:
                    break
        if x < 0:
            continue
        nx = counts[x]
        birth = beta[x] * nx + k_vals[seg, x]
        death = mu[x] * nx
        v = rng.random() * site_rate[x]
        target = x
        if v < birth:
            counts[x] = nx + 1
            total += 1
        elif v < birth + death:
            if nx <= 0:
                status = STATUS_INTERNAL
                break
            counts[x] = nx - 1
            total -= 1
        else:
            if nx <= 0:
                status = STATUS_INTERNAL
                break
            w = rng.random()
            m = nbr_cdf.shape[1]
            target = nbr_idx[x, m - 1]
            for j in range(m):
                if w < nbr_cdf[x, j]:
                    target = nbr_idx[x, j]
                    break
            counts[x] = nx - 1
            counts[target] += 1
        t = t_next
        since_sync += 1
        new_x = (beta[x] + mu[x] + out_rate[x]) * counts[x] + k_vals[seg, x]
        R += new_x - site_rate[x]
        site_rate[x] = new_x
        if target != x:
            new_tgt = (beta[target] + mu[target] + out_rate[target]) * counts[target] \
                + k_vals[seg, target]
            R += new_tgt - site_rate[target]
            site_rate[target] = new_tgt
        if total > cap:
            status = STATUS_OVERFLOW
            break
    return status, t, counts, samples
