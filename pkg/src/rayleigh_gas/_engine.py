"""Numba kernels for the event-driven hard-sphere loop.

Particle i is stored lazily as (pos[i], vel[i], stamp[i]): its position at time
t is pos[i] + (t - stamp[i]) * vel[i] reduced mod 1. Every particle owns at most
one live event in a binary heap; an event is (time, owner, partner, owner
version, partner version) and partner -1 marks an image-horizon re-prediction.
Events whose version stamps no longer match are dropped when popped.
"""

import math

import numpy as np
from numba import njit

CONTACT_RTOL = 1e-9
GRAZING_TOL = 1e-12

STATUS_OK = 0
STATUS_OVERLAP = 1
STATUS_EXHAUSTED = 2
STATUS_NO_CONTACT = 3

# layout of the stats vector returned by run_events
ST_COLLISIONS = 0
ST_GRAZING = 1
ST_HORIZON = 2
ST_MAX_DP = 3
ST_MAX_DE = 4
ST_MIN_RATIO = 5
ST_STATUS = 6
ST_STALE = 7
N_STATS = 8


@njit(cache=True)
def _heap_push(heap, size, t, i, j, vi, vj):
    if size == heap.shape[0]:
        bigger = np.empty((2 * heap.shape[0], 5))
        bigger[:size] = heap[:size]
        heap = bigger
    k = size
    heap[k, 0] = t
    heap[k, 1] = i
    heap[k, 2] = j
    heap[k, 3] = vi
    heap[k, 4] = vj
    while k > 0:
        parent = (k - 1) >> 1
        if heap[parent, 0] <= heap[k, 0]:
            break
        for c in range(5):
            tmp = heap[parent, c]
            heap[parent, c] = heap[k, c]
            heap[k, c] = tmp
        k = parent
    return heap, size + 1


@njit(cache=True)
def _heap_pop(heap, size):
    """Move the minimum into row ``size - 1`` and restore the heap on the rest."""
    last = size - 1
    for c in range(5):
        tmp = heap[0, c]
        heap[0, c] = heap[last, c]
        heap[last, c] = tmp
    k = 0
    while True:
        left = 2 * k + 1
        if left >= last:
            break
        child = left
        right = left + 1
        if right < last and heap[right, 0] < heap[left, 0]:
            child = right
        if heap[k, 0] <= heap[child, 0]:
            break
        for c in range(5):
            tmp = heap[child, c]
            heap[child, c] = heap[k, c]
            heap[k, c] = tmp
        k = child
    return last


@njit(cache=True)
def min_image_delta(pos, vel, stamp, i, k, t, out):
    """out <- minimum image of x_i(t) - x_k(t)."""
    d = pos.shape[1]
    for c in range(d):
        xi = pos[i, c] + (t - stamp[i]) * vel[i, c]
        xk = pos[k, c] + (t - stamp[k]) * vel[k, c]
        dx = xi - xk
        out[c] = dx - math.floor(dx + 0.5)


@njit(cache=True)
def pair_event(dx, dv, eps):
    """Earliest event for one pair seen through its minimum image.

    Returns (tau, is_collision). When the pair cannot collide within the image
    validity horizon, tau is the horizon (time for the relative motion to cover
    the gap between the nearest other image and contact) and is_collision is
    False. tau is inf when the relative velocity vanishes.
    """
    d = dx.shape[0]
    a = 0.0
    b = 0.0
    r2 = 0.0
    cmax = 0.0
    for c in range(d):
        a += dv[c] * dv[c]
        b += dx[c] * dv[c]
        r2 += dx[c] * dx[c]
        if abs(dx[c]) > cmax:
            cmax = abs(dx[c])
    if a == 0.0:
        return np.inf, False
    speed = math.sqrt(a)
    # nearest non-minimum image: flip the component closest to +-1/2
    other = math.sqrt(r2 - cmax * cmax + (1.0 - cmax) * (1.0 - cmax))
    horizon = (other - eps) / speed
    if b >= 0.0:
        return horizon, False
    r = math.sqrt(r2)
    if abs(r - eps) <= CONTACT_RTOL * eps:
        if b < -GRAZING_TOL:
            return 0.0, True
        return horizon, False
    c0 = r2 - eps * eps
    if c0 < 0.0:
        # overlap beyond tolerance; let the caller's checks flag it
        return 0.0, True
    disc = b * b - a * c0
    if disc <= 0.0:
        return horizon, False
    tau = c0 / (-b + math.sqrt(disc))
    if tau <= horizon:
        return tau, True
    return horizon, False


@njit(cache=True)
def predict_particle(pos, vel, stamp, i, t, eps, dx, dv):
    """Earliest (time, partner) for particle i over all partners; partner -1 = horizon."""
    n, d = pos.shape
    best = np.inf
    partner = -1
    for k in range(n):
        if k == i:
            continue
        min_image_delta(pos, vel, stamp, i, k, t, dx)
        for c in range(d):
            dv[c] = vel[i, c] - vel[k, c]
        tau, hit = pair_event(dx, dv, eps)
        if tau < best:
            best = tau
            partner = k if hit else -1
    return t + best, partner


@njit(cache=True)
def materialize(pos, vel, stamp, i, t):
    d = pos.shape[1]
    for c in range(d):
        x = pos[i, c] + (t - stamp[i]) * vel[i, c]
        x = x - math.floor(x)
        if x >= 1.0:
            x = 0.0
        pos[i, c] = x
    stamp[i] = t


@njit(cache=True)
def min_distance_ratio_one(pos, vel, stamp, i, t, eps, dx):
    n, d = pos.shape
    worst = np.inf
    for k in range(n):
        if k == i:
            continue
        min_image_delta(pos, vel, stamp, i, k, t, dx)
        r2 = 0.0
        for c in range(d):
            r2 += dx[c] * dx[c]
        ratio = math.sqrt(r2) / eps
        if ratio < worst:
            worst = ratio
    return worst


@njit(cache=True)
def min_distance_ratio_all(pos, vel, stamp, t, eps):
    n, d = pos.shape
    dx = np.empty(d)
    worst = np.inf
    for i in range(n):
        for k in range(i + 1, n):
            min_image_delta(pos, vel, stamp, i, k, t, dx)
            r2 = 0.0
            for c in range(d):
                r2 += dx[c] * dx[c]
            ratio = math.sqrt(r2) / eps
            if ratio < worst:
                worst = ratio
    return worst


@njit(cache=True)
def _energy(vel):
    e = 0.0
    n, d = vel.shape
    for i in range(n):
        for c in range(d):
            e += vel[i, c] * vel[i, c]
    return 0.5 * e


@njit(cache=True)
def _record(pos, vel, stamp, ncoll, t, obs_x, obs_v, obs_n, obs_e, obs_ratio, k, eps):
    d = pos.shape[1]
    for c in range(d):
        x = pos[0, c] + (t - stamp[0]) * vel[0, c]
        x = x - math.floor(x)
        if x >= 1.0:
            x = 0.0
        obs_x[k, c] = x
        obs_v[k, c] = vel[0, c]
    obs_n[k] = ncoll[0]
    obs_e[k] = _energy(vel)
    if pos.shape[0] > 1:
        obs_ratio[k] = min_distance_ratio_all(pos, vel, stamp, t, eps)
    else:
        obs_ratio[k] = np.inf


@njit(cache=True)
def run_events(pos, vel, stamp, version, ncoll, t0, t_final, eps, obs_times, check_all_pairs):
    """Advance the gas from t0 to t_final in place.

    Returns the tagged particle's observations and a stats vector (see ST_*).
    The run stops early with a nonzero status on an overlap, a collision that
    is not at contact, or an exhausted queue while particles still move
    relative to each other.
    """
    n, d = pos.shape
    n_obs = obs_times.shape[0]
    obs_x = np.empty((n_obs, d))
    obs_v = np.empty((n_obs, d))
    obs_n = np.zeros(n_obs, dtype=np.int64)
    obs_e = np.empty(n_obs)
    obs_ratio = np.full(n_obs, np.inf)
    stats = np.zeros(N_STATS)
    stats[ST_MIN_RATIO] = np.inf
    dx = np.empty(d)
    dv = np.empty(d)
    floor_ratio = 1.0 - CONTACT_RTOL

    heap = np.empty((max(16, 2 * n), 5))
    size = 0
    now = t0
    for i in range(n):
        materialize(pos, vel, stamp, i, now)
    if n > 1:
        for i in range(n):
            te, j = predict_particle(pos, vel, stamp, i, now, eps, dx, dv)
            if te < np.inf:
                vj = version[j] if j >= 0 else 0
                heap, size = _heap_push(heap, size, te, i, j, version[i], vj)
        if check_all_pairs:
            ratio = min_distance_ratio_all(pos, vel, stamp, now, eps)
            stats[ST_MIN_RATIO] = ratio
            if ratio < floor_ratio:
                stats[ST_STATUS] = STATUS_OVERLAP
                return obs_x, obs_v, obs_n, obs_e, obs_ratio, stats

    k_obs = 0
    while True:
        if size == 0:
            moving = False
            for i in range(1, n):
                for c in range(d):
                    if vel[i, c] != vel[0, c]:
                        moving = True
            if moving:
                stats[ST_STATUS] = STATUS_EXHAUSTED
                return obs_x, obs_v, obs_n, obs_e, obs_ratio, stats
            break
        if heap[0, 0] > t_final:
            break
        last = _heap_pop(heap, size)
        size = last
        te = heap[last, 0]
        i = int(heap[last, 1])
        j = int(heap[last, 2])
        if version[i] != int(heap[last, 3]):
            stats[ST_STALE] += 1
            continue
        if j >= 0 and version[j] != int(heap[last, 4]):
            stats[ST_STALE] += 1
            tn, jn = predict_particle(pos, vel, stamp, i, now, eps, dx, dv)
            if tn < np.inf:
                vjn = version[jn] if jn >= 0 else 0
                heap, size = _heap_push(heap, size, tn, i, jn, version[i], vjn)
            continue

        while k_obs < n_obs and obs_times[k_obs] <= te:
            _record(pos, vel, stamp, ncoll, obs_times[k_obs], obs_x, obs_v, obs_n, obs_e,
                    obs_ratio, k_obs, eps)
            if obs_ratio[k_obs] < stats[ST_MIN_RATIO]:
                stats[ST_MIN_RATIO] = obs_ratio[k_obs]
            k_obs += 1
        now = te

        if j < 0:
            stats[ST_HORIZON] += 1
            materialize(pos, vel, stamp, i, now)
            tn, jn = predict_particle(pos, vel, stamp, i, now, eps, dx, dv)
            if tn < np.inf:
                vjn = version[jn] if jn >= 0 else 0
                heap, size = _heap_push(heap, size, tn, i, jn, version[i], vjn)
            continue

        materialize(pos, vel, stamp, i, now)
        materialize(pos, vel, stamp, j, now)
        r2 = 0.0
        b = 0.0
        for c in range(d):
            dxc = pos[i, c] - pos[j, c]
            dxc = dxc - math.floor(dxc + 0.5)
            dx[c] = dxc
            dv[c] = vel[i, c] - vel[j, c]
            r2 += dxc * dxc
            b += dxc * dv[c]
        r = math.sqrt(r2)
        if abs(r - eps) > CONTACT_RTOL * eps:
            stats[ST_STATUS] = STATUS_NO_CONTACT
            stats[ST_MIN_RATIO] = min(stats[ST_MIN_RATIO], r / eps)
            return obs_x, obs_v, obs_n, obs_e, obs_ratio, stats
        if b >= -GRAZING_TOL:
            stats[ST_GRAZING] += 1
        else:
            f = b / r2
            dp = 0.0
            e_before = 0.0
            e_after = 0.0
            for c in range(d):
                vi_old = vel[i, c]
                vj_old = vel[j, c]
                vi_new = vi_old - f * dx[c]
                vj_new = vj_old + f * dx[c]
                vel[i, c] = vi_new
                vel[j, c] = vj_new
                dp = max(dp, abs((vi_new + vj_new) - (vi_old + vj_old)))
                e_before += vi_old * vi_old + vj_old * vj_old
                e_after += vi_new * vi_new + vj_new * vj_new
            de = 0.5 * abs(e_after - e_before)
            if dp > stats[ST_MAX_DP]:
                stats[ST_MAX_DP] = dp
            if de > stats[ST_MAX_DE]:
                stats[ST_MAX_DE] = de
            stats[ST_COLLISIONS] += 1
            ncoll[i] += 1
            ncoll[j] += 1
            ratio = min(min_distance_ratio_one(pos, vel, stamp, i, now, eps, dx),
                        min_distance_ratio_one(pos, vel, stamp, j, now, eps, dx))
            if ratio < stats[ST_MIN_RATIO]:
                stats[ST_MIN_RATIO] = ratio
            if ratio < floor_ratio:
                stats[ST_STATUS] = STATUS_OVERLAP
                return obs_x, obs_v, obs_n, obs_e, obs_ratio, stats
        version[i] += 1
        version[j] += 1
        for p in (i, j):
            tn, jn = predict_particle(pos, vel, stamp, p, now, eps, dx, dv)
            if tn < np.inf:
                vjn = version[jn] if jn >= 0 else 0
                heap, size = _heap_push(heap, size, tn, p, jn, version[p], vjn)

    while k_obs < n_obs and obs_times[k_obs] <= t_final:
        _record(pos, vel, stamp, ncoll, obs_times[k_obs], obs_x, obs_v, obs_n, obs_e,
                obs_ratio, k_obs, eps)
        if obs_ratio[k_obs] < stats[ST_MIN_RATIO]:
            stats[ST_MIN_RATIO] = obs_ratio[k_obs]
        k_obs += 1
    for i in range(n):
        materialize(pos, vel, stamp, i, t_final)
    if check_all_pairs and n > 1:
        ratio = min_distance_ratio_all(pos, vel, stamp, t_final, eps)
        if ratio < stats[ST_MIN_RATIO]:
            stats[ST_MIN_RATIO] = ratio
        if ratio < floor_ratio:
            stats[ST_STATUS] = STATUS_OVERLAP
    return obs_x, obs_v, obs_n, obs_e, obs_ratio, stats


@njit(cache=True)
def insert_background(x1, n, eps, rng, max_restarts):
    """Uniform positions on the exclusion domain given the tagged position x1.

    Particles 2..n are placed one by one; any overlap discards all of them and
    restarts, which is exact rejection from the uniform law on the domain.
    Returns (positions, restarts); restarts == -1 signals an exhausted budget.
    """
    d = x1.shape[0]
    pos = np.empty((n, d))
    pos[0] = x1
    eps2 = eps * eps
    for attempt in range(max_restarts):
        ok = True
        for k in range(1, n):
            for c in range(d):
                pos[k, c] = rng.random()
            for m in range(k):
                r2 = 0.0
                for c in range(d):
                    dxc = pos[k, c] - pos[m, c]
                    dxc = dxc - math.floor(dxc + 0.5)
                    r2 += dxc * dxc
                if r2 <= eps2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return pos, attempt
    return pos, -1
