"""Adaptive backward time cutting for collision-tree pruning, and its bound audit.

The interval [0, t] is cut backwards from t into pieces h_1, ..., h_K that grow
toward time 0. The raw pieces are

    h~_i = exp(-2^(K - K^(1-alpha) - i)) / (2 C sqrt(K)),

rescaled to sum exactly to t. All bound evaluations run in log space: the
exponents are powers of two and the quantities span hundreds of decades.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import integrate, optimize

DEFAULT_C = 1.0
DEFAULT_FEASIBILITY_C = 1.0 / (2.0 * math.e)


class InfeasibleScheduleError(ValueError):
    def __init__(self, message: str, max_feasible_t: float):
        super().__init__(message)
        self.max_feasible_t = max_feasible_t


@dataclass(frozen=True)
class PruningParams:
    K: int
    alpha: float
    t: float
    C: float = DEFAULT_C
    c: float = DEFAULT_FEASIBILITY_C

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be an integer >= 1")
        if not 0.0 < self.alpha < 0.5:
            raise ValueError("alpha must lie in (0, 1/2)")
        if not self.t > 0.0:
            raise ValueError("t must be positive")
        if not self.C > 0.0:
            raise ValueError("C must be positive")

    @property
    def scaling_ok(self) -> bool:
        """Whether t <= c K^(1/2 - alpha)."""
        return self.t <= self.c * self.K ** (0.5 - self.alpha)


class Cut(NamedTuple):
    value: float
    log_value: float
    underflow: bool


def _shift(K: int, alpha: float, finite_time: bool) -> float:
    # the finite-horizon variant drops the K^(1-alpha) correction entirely
    return 0.0 if finite_time else K ** (1.0 - alpha)


def log_raw_cut(i: int, K: int, alpha: float, C: float = DEFAULT_C, finite_time: bool = False) -> float:
    if not 1 <= i <= K:
        raise ValueError("cut index must satisfy 1 <= i <= K")
    return -(2.0 ** (K - _shift(K, alpha, finite_time) - i)) - math.log(2.0 * C * math.sqrt(K))


def raw_cut(i: int, K: int, alpha: float, C: float = DEFAULT_C, finite_time: bool = False) -> Cut:
    """Unscaled cut h~_i; underflow to 0.0 is reported rather than raised."""
    lv = log_raw_cut(i, K, alpha, C, finite_time)
    value = math.exp(lv) if lv > -745.0 else 0.0
    return Cut(value, lv, value == 0.0)


def _logsumexp(logs) -> float:
    logs = np.asarray(logs, dtype=float)
    top = float(np.max(logs))
    if math.isinf(top):
        return top
    return top + math.log(math.fsum(np.exp(logs - top)))


@dataclass
class Schedule:
    """Cutting times indexed backward from t (h[0] is h_1, adjacent to t).

    For large K the first cuts underflow in ``h``; ``log_h`` is always exact.
    """

    params: PruningParams
    h: np.ndarray
    log_h: np.ndarray
    raw: np.ndarray
    log_raw: np.ndarray
    scale: float
    finite_time: bool = False

    @property
    def tp(self) -> np.ndarray:
        """t^p_k = t - sum_{j<=k} h_j for k = 1..K (exactly 0 at k = K)."""
        cum = np.array([math.fsum(self.h[:k + 1]) for k in range(len(self.h))])
        out = self.params.t - cum
        out[-1] = 0.0
        return out

    @property
    def covered_time(self) -> float:
        return math.fsum(self.h)


def max_feasible_t(K: int, alpha: float, C: float = DEFAULT_C, finite_time: bool = False) -> float:
    """Largest horizon covered by the raw cuts, i.e. sum_i h~_i."""
    logs = [log_raw_cut(i, K, alpha, C, finite_time) for i in range(1, K + 1)]
    return math.exp(_logsumexp(logs))


def build_schedule(params: PruningParams) -> Schedule:
    """Rescale the raw cuts so they sum to t; requires sum h~_i >= t."""
    K = params.K
    log_raw = np.array([log_raw_cut(i, K, params.alpha, params.C) for i in range(1, K + 1)])
    log_total = _logsumexp(log_raw)
    total = math.exp(log_total)
    if total < params.t:
        raise InfeasibleScheduleError(
            f"raw cuts cover only {total:.6g} < t = {params.t:g} "
            f"(K={K}, alpha={params.alpha}, C={params.C})",
            max_feasible_t=total,
        )
    log_scale = math.log(params.t) - log_total
    log_h = log_raw + log_scale
    h = np.exp(log_h)
    # put the rounding residue on the largest piece so the pieces sum to t
    h[-1] = params.t - math.fsum(h[:-1])
    return Schedule(params, h, log_h, np.exp(log_raw), log_raw, math.exp(log_scale))


def finite_time_schedule(K: int, C: float = DEFAULT_C, t: float = 1.0) -> Schedule:
    """Unrescaled cuts exp(-2^(K-i)) / (2 C sqrt K) of the fixed-horizon variant.

    The covered time is sum h~_i (well below 1 for C = 1); the horizon t is
    absorbed into the constant rather than into the cuts, so no rescaling is
    applied. ``t`` is only carried for reporting.
    """
    params = PruningParams(K=K, alpha=0.25, t=t, C=C)  # alpha unused by this variant
    log_raw = np.array([log_raw_cut(i, K, 0.25, C, finite_time=True) for i in range(1, K + 1)])
    return Schedule(params, np.exp(log_raw), log_raw, np.exp(log_raw), log_raw, 1.0, finite_time=True)


def lower_bound_chain(K: int, alpha: float, C: float = DEFAULT_C):
    """(sum_{j=0}^{floor K^(1-a)} h~_{K-j},  (floor K^(1-a) + 1) e^-1 / (2 C sqrt K)).

    The first entry dominates the second because each of those exponents
    2^(K - K^(1-a) - (K-j)) is at most 1.
    """
    m = min(int(math.floor(K ** (1.0 - alpha))), K - 1)
    part = math.fsum(raw_cut(K - j, K, alpha, C).value for j in range(m + 1))
    bound = (m + 1) * math.exp(-1.0) / (2.0 * C * math.sqrt(K))
    return part, bound


@dataclass
class BoundReport:
    K: int
    alpha: float
    C: float
    t: float
    feasible: bool
    lhs_log: float
    rhs_log: float
    holds: bool
    max_feasible_t: float
    scaling_ok: bool = True
    failing_k: Optional[int] = None
    terms_log: list = field(default_factory=list)

    @property
    def margin(self) -> float:
        """rhs_log - lhs_log (positive when the bound holds)."""
        return self.rhs_log - self.lhs_log

    @property
    def lhs(self) -> float:
        return math.exp(self.lhs_log)

    @property
    def rhs(self) -> float:
        return math.exp(self.rhs_log)


def _log_geometric_head(log_x: float, m: int) -> float:
    """log sum_{j=0}^{m-1} x^j for 0 <= x < 1."""
    if log_x == -math.inf:
        return 0.0
    x_m = math.exp(m * log_x) if m * log_x > -745.0 else 0.0
    return math.log1p(-x_m) - math.log1p(-math.exp(log_x))


def remainder_terms_log(log_h: np.ndarray, C: float):
    """Log of each k-term of the pruned-remainder bound and the first k that
    violates sqrt(k) C h_i <= 1/2 (i <= k) or C h_k < 1.

    term_k = C^(2^(k+1)) * prod_{i<=k} sum_{j<2^i} (sqrt(k) C h_i)^j
             * (C h_k)^(2^k) / (1 - C h_k)
    """
    logC = math.log(C)
    terms = []
    failing = None
    for k in range(1, len(log_h) + 1):
        log_x = [0.5 * math.log(k) + logC + log_h[i - 1] for i in range(1, k + 1)]
        log_ch = logC + log_h[k - 1]
        if failing is None and (max(log_x) > math.log(0.5) or log_ch >= 0.0):
            failing = k
        if log_ch >= 0.0 or max(log_x) >= 0.0:
            terms.append(math.inf)
            continue
        head = math.fsum(_log_geometric_head(lx, 2**i) for i, lx in enumerate(log_x, start=1))
        tail = 2**k * log_ch - math.log1p(-math.exp(log_ch))
        terms.append(2 ** (k + 1) * logC + head + tail)
    return terms, failing


def remainder_chain(params: PruningParams, schedule: Optional[Schedule] = None) -> BoundReport:
    """Numeric value of the pruned-remainder bound versus exp(-2^(K - K^(1-alpha)))."""
    K = params.K
    rhs_log = -(2.0 ** (K - K ** (1.0 - params.alpha)))
    mft = max_feasible_t(K, params.alpha, params.C)
    if schedule is None:
        try:
            schedule = build_schedule(params)
        except InfeasibleScheduleError as err:
            return BoundReport(K, params.alpha, params.C, params.t, False, math.nan, rhs_log, False,
                               err.max_feasible_t, params.scaling_ok)
    terms, failing = remainder_terms_log(schedule.log_h, params.C)
    lhs_log = _logsumexp(terms)
    holds = failing is None and lhs_log <= rhs_log
    return BoundReport(K, params.alpha, params.C, params.t, True, lhs_log, rhs_log, holds, mft,
                       params.scaling_ok, failing, terms)


def finite_time_chain(K: int, C: float = DEFAULT_C, t: float = 1.0) -> BoundReport:
    """Remainder bound for the fixed-horizon cutting versus exp(-2^K)."""
    sched = finite_time_schedule(K, C, t)
    terms, failing = remainder_terms_log(sched.log_h, C)
    lhs_log = _logsumexp(terms)
    rhs_log = -(2.0**K)
    holds = failing is None and lhs_log <= rhs_log
    return BoundReport(K, 0.0, C, t, failing is None, lhs_log, rhs_log, holds,
                       sched.covered_time, True, failing, terms)


class GaussianMoment(NamedTuple):
    lhs: float
    rhs: float
    c_d: float
    c_tilde_d: float
    rel_error: float


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def gaussian_moment_identity(lam: float, d: int, v_i_norm: float, rtol: float = 1e-8) -> GaussianMoment:
    """int_{R^d} (|v| + |v_i|) exp(-lam |v|^2 / 2) dv  =  c_d lam^-(d+1)/2 + |v_i| c~_d lam^-d/2.

    The left side is a radial quadrature; c_d and c~_d come from Gamma
    functions. Raises if the two disagree beyond ``rtol``.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    area = _sphere_area(d)
    f = lambda r: (r + v_i_norm) * r ** (d - 1) * math.exp(-0.5 * lam * r * r)  # noqa: E731
    val, abserr = integrate.quad(f, 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    if abserr > 1e-10 * abs(val):
        raise ArithmeticError(f"radial quadrature did not converge (error estimate {abserr:.3g})")
    lhs = area * val
    c_d = area * 2 ** ((d - 1) / 2) * math.gamma((d + 1) / 2)
    c_tilde = area * 2 ** (d / 2 - 1) * math.gamma(d / 2)
    rhs = c_d * lam ** (-(d + 1) / 2) + v_i_norm * c_tilde * lam ** (-d / 2)
    rel = abs(lhs - rhs) / abs(rhs)
    if rel > rtol:
        raise ArithmeticError(f"moment identity off by {rel:.3g} (lam={lam}, d={d}, |v_i|={v_i_norm})")
    return GaussianMoment(lhs, rhs, c_d, c_tilde, rel)


class CauchySchwarzReport(NamedTuple):
    sup_value: float
    bound: float
    holds: bool
    search_value: float


def _cs_objective(r, s, b, lam):
    return float(np.sum(r) * math.exp(-lam * float(np.dot(r, r)) / (2.0 * b * s)))


def cauchy_schwarz_bound(n: int, s: int, b: float, lam: float, rng: Optional[np.random.Generator] = None,
                         n_starts: int = 8) -> CauchySchwarzReport:
    """sup over m = n+s-1 speeds of (sum r_i) exp(-lam sum r_i^2 / (2 b s)) vs (n+s) sqrt(b/(lam e)).

    The supremum sits at equal speeds r = sqrt(b s / (lam m)) with value
    sqrt(m b s / (lam e)). With ``rng`` a multi-start local search confirms
    that no other point does better.
    """
    if b < 2 or n < 1 or s < 1 or not lam > 0:
        raise ValueError("need b >= 2, n, s >= 1 and lambda > 0")
    m = n + s - 1
    sup_value = math.sqrt(m * b * s / (lam * math.e))
    bound = (n + s) * math.sqrt(b / (lam * math.e))
    search = math.nan
    if rng is not None:
        scale = math.sqrt(b * s / (lam * m))
        best = -math.inf
        for _ in range(n_starts):
            r0 = rng.uniform(0.0, 3.0 * scale, size=m)
            res = optimize.minimize(lambda r: -_cs_objective(r, s, b, lam), r0,
                                    bounds=[(0.0, None)] * m, method="L-BFGS-B")
            best = max(best, -res.fun)
        search = best
        if search > sup_value * (1.0 + 1e-9):
            raise ArithmeticError(f"search found {search} above the equal-speed supremum {sup_value}")
    return CauchySchwarzReport(sup_value, bound, sup_value <= bound, search)


class KChoice(NamedTuple):
    K: int
    log_rate_bound: float

    @property
    def rate_bound(self) -> float:
        return math.exp(self.log_rate_bound)


def choose_K(eps: Optional[float] = None, c_beta: float = 0.05, alpha: float = 0.25,
             log_eps: Optional[float] = None) -> KChoice:
    """K = floor(log2(2 c_beta |log eps|)) and the rate bound exp(-c_beta |log eps|^(1-alpha)).

    Pass ``log_eps`` directly for diameters below float range.
    """
    if log_eps is None:
        if eps is None or not 0 < eps < 1:
            raise ValueError("need 0 < eps < 1 or log_eps")
        log_eps = math.log(eps)
    L = abs(log_eps)
    arg = 2.0 * c_beta * L
    K = math.floor(math.log2(arg)) if arg > 0 else 0
    if arg <= 1.0 or K < 1:
        raise ValueError(
            f"2 c_beta |log eps| = {arg:.6g} gives K = {K}; need |log eps| >= {1.0 / c_beta:.6g} "
            "for at least one cut"
        )
    return KChoice(int(K), -c_beta * L ** (1.0 - alpha))
