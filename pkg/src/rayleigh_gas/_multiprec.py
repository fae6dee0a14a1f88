"""Arbitrary-precision (``decimal``) variant of the event loop.

Long double still leaves a few seeds above 1e-6 after a t = 1 round trip at
N = 50, because the amplification between roundoff and final error reaches
1e13 or more. This engine repeats the event algorithm of `_engine.run_events`
in pure Python on `decimal.Decimal` scalars. It is slow (milliseconds per
collision at N = 50) and meant for reversibility checks on small systems.
"""

import heapq
from decimal import ROUND_FLOOR, Decimal, localcontext

import numpy as np

from . import _engine as E

DEFAULT_DIGITS = 40
INF = Decimal("Infinity")


def to_decimal(a) -> np.ndarray:
    """Exact Decimal copy of a float64 or long double array (object dtype)."""
    a = np.asarray(a)
    out = np.empty(a.shape, dtype=object)
    with localcontext() as ctx:
        ctx.prec = 80  # ample for any binary64/80 fraction after the division
        for idx, c in np.ndenumerate(a):
            p, q = c.as_integer_ratio()
            out[idx] = Decimal(p) / Decimal(q)
    return out


def _floor(x):
    return x.to_integral_value(rounding=ROUND_FLOOR)


class _State:
    def __init__(self, pos, vel, t0, eps):
        self.n, self.d = pos.shape
        self.pos = [[Decimal(c) for c in row] for row in pos]
        self.vel = [[Decimal(c) for c in row] for row in vel]
        self.stamp = [t0] * self.n
        self.eps = eps
        self.rtol = Decimal(E.CONTACT_RTOL)
        self.graze = Decimal(E.GRAZING_TOL)

    def at(self, i, t):
        dt = t - self.stamp[i]
        return [p + dt * v for p, v in zip(self.pos[i], self.vel[i])]

    def materialize(self, i, t):
        x = [c - _floor(c) for c in self.at(i, t)]
        self.pos[i] = [c if c < 1 else Decimal(0) for c in x]
        self.stamp[i] = t

    @staticmethod
    def image(xi, xj):
        return [a - b - _floor(a - b + Decimal("0.5")) for a, b in zip(xi, xj)]

    def predict(self, i, t):
        """(event time, partner) for particle i; partner -1 marks a horizon event."""
        eps = self.eps
        xi, vi = self.at(i, t), self.vel[i]
        best, partner = INF, -1
        for j in range(self.n):
            if j == i:
                continue
            dv = [a - b for a, b in zip(vi, self.vel[j])]
            a = sum(c * c for c in dv)
            if a == 0:
                continue
            dx = self.image(xi, self.at(j, t))
            b = sum(p * q for p, q in zip(dx, dv))
            r2 = sum(c * c for c in dx)
            cmax = max(abs(c) for c in dx)
            horizon = ((r2 - cmax * cmax + (1 - cmax) ** 2).sqrt() - eps) / a.sqrt()
            tau, hit = horizon, False
            if b < 0:
                r = r2.sqrt()
                c0 = r2 - eps * eps
                if abs(r - eps) <= self.rtol * eps:
                    if b < -self.graze:
                        tau, hit = Decimal(0), True
                elif c0 < 0:
                    tau, hit = Decimal(0), True
                else:
                    disc = b * b - a * c0
                    if disc > 0:
                        root = c0 / (-b + disc.sqrt())
                        if root <= horizon:
                            tau, hit = root, True
            if tau < best:
                best, partner = tau, (j if hit else -1)
        return t + best, partner

    def ratio_one(self, i, t):
        xi = self.at(i, t)
        r = min((sum(c * c for c in self.image(xi, self.at(j, t))).sqrt()
                 for j in range(self.n) if j != i), default=INF)
        return float(r / self.eps)

    def ratio_all(self, t):
        return min((self.ratio_one(i, t) for i in range(self.n)), default=np.inf)


def run_events_decimal(pos, vel, ncoll, t0, t_final, eps, obs_times, check_all_pairs,
                       digits=DEFAULT_DIGITS):
    """Same contract as `_engine.run_events`; ``pos`` and ``vel`` are object arrays of Decimal."""
    with localcontext() as ctx:
        ctx.prec = digits
        return _run(pos, vel, ncoll, Decimal(t0), Decimal(t_final), Decimal(eps), obs_times,
                    check_all_pairs)


def _run(pos, vel, ncoll, t0, t_final, eps, obs_times, check_all_pairs):
    s = _State(pos, vel, t0, eps)
    n, d = s.n, s.d
    version = [0] * n
    n_obs = len(obs_times)
    obs_x = np.empty((n_obs, d), dtype=object)
    obs_v = np.empty((n_obs, d), dtype=object)
    obs_n = np.zeros(n_obs, dtype=np.int64)
    obs_e = np.empty(n_obs)
    obs_ratio = np.full(n_obs, np.inf)
    stats = np.zeros(E.N_STATS)
    stats[E.ST_MIN_RATIO] = np.inf
    floor_ratio = 1.0 - E.CONTACT_RTOL

    def done():
        pos[:] = np.array(s.pos, dtype=object)
        vel[:] = np.array(s.vel, dtype=object)
        return obs_x, obs_v, obs_n, obs_e, obs_ratio, stats

    def record(k, t):
        obs_x[k] = [c - _floor(c) for c in s.at(0, t)]
        obs_v[k] = s.vel[0]
        obs_n[k] = ncoll[0]
        obs_e[k] = float(sum(c * c for row in s.vel for c in row) / 2)
        obs_ratio[k] = s.ratio_all(t)
        stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], obs_ratio[k])

    heap = []

    def push(p, now):
        te, jn = s.predict(p, now)
        if te.is_finite():
            heapq.heappush(heap, (te, p, jn, version[p], version[jn] if jn >= 0 else 0))

    now = t0
    for i in range(n):
        s.materialize(i, now)
    if n > 1:
        for i in range(n):
            push(i, now)
        if check_all_pairs:
            stats[E.ST_MIN_RATIO] = s.ratio_all(now)
            if stats[E.ST_MIN_RATIO] < floor_ratio:
                stats[E.ST_STATUS] = E.STATUS_OVERLAP
                return done()

    obs = [Decimal(float(t)) for t in obs_times]
    k_obs = 0
    while True:
        if not heap:
            if n > 1 and any(row != s.vel[0] for row in s.vel[1:]):
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
        while k_obs < n_obs and obs[k_obs] <= te:
            record(k_obs, obs[k_obs])
            k_obs += 1
        now = te
        if j < 0:
            stats[E.ST_HORIZON] += 1
            s.materialize(i, now)
            push(i, now)
            continue
        s.materialize(i, now)
        s.materialize(j, now)
        dx = s.image(s.pos[i], s.pos[j])
        dv = [a - b for a, b in zip(s.vel[i], s.vel[j])]
        r2 = sum(c * c for c in dx)
        b = sum(p * q for p, q in zip(dx, dv))
        r = r2.sqrt()
        if abs(r - eps) > s.rtol * eps:
            stats[E.ST_STATUS] = E.STATUS_NO_CONTACT
            stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], float(r / eps))
            return done()
        if b >= -s.graze:
            stats[E.ST_GRAZING] += 1
        else:
            vi_old, vj_old = s.vel[i], s.vel[j]
            k = b / r2
            s.vel[i] = [v - k * c for v, c in zip(vi_old, dx)]
            s.vel[j] = [v + k * c for v, c in zip(vj_old, dx)]
            dp = max(abs((a + b2) - (c + e)) for a, b2, c, e in zip(s.vel[i], s.vel[j], vi_old, vj_old))
            de = abs(sum(c * c for c in s.vel[i] + s.vel[j]) - sum(c * c for c in vi_old + vj_old)) / 2
            stats[E.ST_MAX_DP] = max(stats[E.ST_MAX_DP], float(dp))
            stats[E.ST_MAX_DE] = max(stats[E.ST_MAX_DE], float(de))
            stats[E.ST_COLLISIONS] += 1
            ncoll[i] += 1
            ncoll[j] += 1
            ratio = min(s.ratio_one(i, now), s.ratio_one(j, now))
            stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], ratio)
            if ratio < floor_ratio:
                stats[E.ST_STATUS] = E.STATUS_OVERLAP
                return done()
        version[i] += 1
        version[j] += 1
        push(i, now)
        push(j, now)

    while k_obs < n_obs and obs[k_obs] <= t_final:
        record(k_obs, obs[k_obs])
        k_obs += 1
    for i in range(n):
        s.materialize(i, t_final)
    if check_all_pairs and n > 1:
        ratio = s.ratio_all(t_final)
        stats[E.ST_MIN_RATIO] = min(stats[E.ST_MIN_RATIO], ratio)
        if ratio < floor_ratio:
            stats[E.ST_STATUS] = E.STATUS_OVERLAP
    return done()
