"""Extended-precision (x87 long double) variant of the event loop.

Hard-sphere dynamics amplifies perturbations by roughly exp(25) per unit time
at N = 50, eps = 1/50, so float64 roundoff alone spoils a forward/backward
round trip at the 1e-6 level. This engine runs the same event algorithm as
`_engine.run_events` with numpy ``longdouble`` arrays. It is vectorized over
partners and meant for N up to a few hundred.
"""

import heapq

import numpy as np

from . import _engine as E

LD = np.longdouble


def _deltas(pos, vel, stamp, i, t):
    xi = pos[i] + (t - stamp[i]) * vel[i]
    xs = pos + (t - stamp)[:, None] * vel
    dx = xi - xs
    dx -= np.floor(dx + LD(0.5))
    return dx


def _predict(pos, vel, stamp, i, t, eps):
    dx = _deltas(pos, vel, stamp, i, t)
    dv = vel[i] - vel
    a = np.einsum("ij,ij->i", dv, dv)
    b = np.einsum("ij,ij->i", dx, dv)
    r2 = np.einsum("ij,ij->i", dx, dx)
    cmax = np.max(np.abs(dx), axis=1)
    n = len(a)
    tau = np.full(n, np.inf, dtype=LD)
    hit = np.zeros(n, dtype=bool)
    moving = a > 0
    moving[i] = False
    speed = np.sqrt(np.where(moving, a, LD(1)))
    other = np.sqrt(r2 - cmax * cmax + (1 - cmax) ** 2)
    horizon = np.where(moving, (other - eps) / speed, LD(np.inf))
    tau[:] = horizon
    r = np.sqrt(r2)
    incoming = moving & (b < 0)
    contact = incoming & (np.abs(r - eps) <= E.CONTACT_RTOL * eps)
    now_hit = contact & (b < -E.GRAZING_TOL)
    c0 = r2 - eps * eps
    overlap = incoming & ~contact & (c0 < 0)
    far = incoming & ~contact & (c0 >= 0)
    disc = b * b - a * c0
    ok = far & (disc > 0)
    root = np.where(ok, c0 / np.where(ok, -b + np.sqrt(np.where(ok, disc, 0)), 1), np.inf)
    ok &= root <= horizon
    tau = np.where(ok, root, tau)
    hit |= ok
    tau = np.where(now_hit | overlap, LD(0), tau)
    hit |= now_hit | overlap
    k = int(np.argmin(tau))
    if not np.isfinite(tau[k]):
        return np.inf, -1
    return t + tau[k], (k if hit[k] else -1)


def _ratio_one(pos, vel, stamp, i, t, eps):
    dx = _deltas(pos, vel, stamp, i, t)
    r = np.sqrt(np.einsum("ij,ij->i", dx, dx))
    r[i] = np.inf
    return float(np.min(r) / eps)


def _ratio_all(pos, vel, stamp, t, eps):
    n = len(pos)
    if n < 2:
        return np.inf
    return min(_ratio_one(pos, vel, stamp, i, t, eps) for i in range(n))


def _materialize(pos, vel, stamp, i, t):
    x = pos[i] + (t - stamp[i]) * vel[i]
    x -= np.floor(x)
    x[x >= 1] = 0
    pos[i] = x
    stamp[i] = t


def run_events_extended(pos, vel, ncoll, t0, t_final, eps, obs_times, check_all_pairs):
    """Same contract as `_engine.run_events`; ``pos`` and ``vel`` are longdouble."""
    n, d = pos.shape
    t0, t_final, eps = LD(t0), LD(t_final), LD(eps)
    stamp = np.full(n, t0, dtype=LD)
    version = np.zeros(n, dtype=np.int64)
    n_obs = len(obs_times)
    obs_x = np.empty((n_obs, d), dtype=LD)
    obs_v = np.empty((n_obs, d), dtype=LD)
    obs_n = np.zeros(n_obs, dtype=np.int64)
    obs_e = np.empty(n_obs)
    obs_ratio = np.full(n_obs, np.inf)
    stats = np.zeros(E.N_STATS)
    stats[E.ST_MIN_RATIO] = np.inf
    floor_ratio = 1.0 - E.CONTACT_RTOL

    def done():
        return obs_x, obs_v, obs_n, obs_e, obs_ratio, stats

    def record(k, t):
        x = pos[0] + (t - stamp[0]) * vel[0]
        obs_x[k] = x - np.floor(x)
        obs_v[k] = vel[0]
        obs_n[k] = ncoll[0]
        obs_e[k] = float(LD(0.5) * np.sum(vel * vel))
        obs_ratio[k] = _ratio_all(pos, vel, stamp, t, eps)
        stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], obs_ratio[k])

    heap = []

    def push(p, now):
        te, jn = _predict(pos, vel, stamp, p, now, eps)
        if np.isfinite(te):
            heapq.heappush(heap, (te, p, jn, int(version[p]), int(version[jn]) if jn >= 0 else 0))

    now = t0
    for i in range(n):
        _materialize(pos, vel, stamp, i, now)
    if n > 1:
        for i in range(n):
            push(i, now)
        if check_all_pairs:
            stats[E.ST_MIN_RATIO] = _ratio_all(pos, vel, stamp, now, eps)
            if stats[E.ST_MIN_RATIO] < floor_ratio:
                stats[E.ST_STATUS] = E.STATUS_OVERLAP
                return done()

    k_obs = 0
    while True:
        if not heap:
            if n > 1 and np.any(vel[1:] != vel[0]):
                stats[E.ST_STATUS] = E.STATUS_EXHAUSTED
                return done()
            break
        if heap[0][0] > t_final:
            break
        te, i, j, vi, vj = heapq.heappop(heap)
        if version[i] != vi:
            stats[E.ST_STALE] += 1
            continue
        if j >= 0 and version[j] != vj:
            stats[E.ST_STALE] += 1
            push(i, now)
            continue
        while k_obs < n_obs and obs_times[k_obs] <= te:
            record(k_obs, LD(obs_times[k_obs]))
            k_obs += 1
        now = te
        if j < 0:
            stats[E.ST_HORIZON] += 1
            _materialize(pos, vel, stamp, i, now)
            push(i, now)
            continue
        _materialize(pos, vel, stamp, i, now)
        _materialize(pos, vel, stamp, j, now)
        dx = pos[i] - pos[j]
        dx -= np.floor(dx + LD(0.5))
        dv = vel[i] - vel[j]
        r2 = np.sum(dx * dx)
        b = np.sum(dx * dv)
        r = np.sqrt(r2)
        if abs(r - eps) > E.CONTACT_RTOL * eps:
            stats[E.ST_STATUS] = E.STATUS_NO_CONTACT
            stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], float(r / eps))
            return done()
        if b >= -E.GRAZING_TOL:
            stats[E.ST_GRAZING] += 1
        else:
            vi_old, vj_old = vel[i].copy(), vel[j].copy()
            impulse = (b / r2) * dx
            vel[i] = vi_old - impulse
            vel[j] = vj_old + impulse
            dp = float(np.max(np.abs((vel[i] + vel[j]) - (vi_old + vj_old))))
            de = float(abs(LD(0.5) * (np.sum(vel[i] ** 2 + vel[j] ** 2)
                                      - np.sum(vi_old**2 + vj_old**2))))
            stats[E.ST_MAX_DP] = max(stats[E.ST_MAX_DP], dp)
            stats[E.ST_MAX_DE] = max(stats[E.ST_MAX_DE], de)
            stats[E.ST_COLLISIONS] += 1
            ncoll[i] += 1
            ncoll[j] += 1
            ratio = min(_ratio_one(pos, vel, stamp, i, now, eps),
                        _ratio_one(pos, vel, stamp, j, now, eps))
            stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], ratio)
            if ratio < floor_ratio:
                stats[E.ST_STATUS] = E.STATUS_OVERLAP
                return done()
        version[i] += 1
        version[j] += 1
        push(i, now)
        push(j, now)

    while k_obs < n_obs and obs_times[k_obs] <= t_final:
        record(k_obs, LD(obs_times[k_obs]))
        k_obs += 1
    for i in range(n):
        _materialize(pos, vel, stamp, i, t_final)
    if check_all_pairs and n > 1:
        ratio = _ratio_all(pos, vel, stamp, t_final, eps)
        stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], ratio)
        if ratio < floor_ratio:
            stats[E.ST_STATUS] = E.STATUS_OVERLAP
    return done()
