"""Monte Carlo solver for the linear Rayleigh-Boltzmann equation.

The collision operator is the generator of a velocity-jump process: at rate
lambda(v) the velocity jumps to v* = v + [w.(v_c - v)] w with (v_c, w) drawn
proportionally to M_beta(v_c) [w.(v_c - v)]_+. Between jumps the particle
flies freely on the torus. The kernel is in detailed balance with M_beta, so
the density of the forward process started from rho(x) M_beta(v) is
g = M_beta phi; running transport backwards from (x, v) and averaging rho at
the endpoint gives phi(t, x, v) directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .geometry import PhasePoint, maxwellian_sample, reduce_torus
from .histogram import HistogramSpec, MarginalHistogram
from .perturbation import SpacePerturbation

# scaled speed s = |v| sqrt(beta) beyond which the rate table falls back to quadrature
_TABLE_S_MAX = 12.0
_TABLE_STEP = 0.01


class RejectionBudgetError(RuntimeError):
    pass


@dataclass(frozen=True)
class KineticParams:
    d: int = 2
    beta: float = 1.0

    def __post_init__(self):
        if self.d not in (2, 3):
            raise ValueError("d must be 2 or 3")
        if not self.beta > 0:
            raise ValueError("beta must be positive")


@dataclass
class JumpEvent:
    time: float
    v: np.ndarray
    v_c: np.ndarray
    omega: np.ndarray
    v_star: np.ndarray


class KineticEstimate(MarginalHistogram):
    """Binned estimate of g(t) = M_beta phi(t); same layout and CSV as the hard-sphere marginal."""


@dataclass
class PhiEstimate:
    """Pointwise phi(t, x, v) estimate; ``values`` holds rho at each path's endpoint."""

    mean: float
    stderr: float
    values: np.ndarray


def sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def angular_constant(d: int) -> float:
    """c_d with  int_{S^{d-1}} [w.u]_+ dw = c_d |u|."""
    return math.pi ** ((d - 1) / 2) / math.gamma((d + 1) / 2)


def uniform_sphere(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    w = rng.normal(size=(n, d))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


def _noncentral_chi_pdf(x, k, lam):
    """Density of |w - lam e| for w standard normal in R^k."""
    if lam == 0.0:
        return np.exp((k - 1) * np.log(np.maximum(x, 1e-300)) - 0.5 * x * x
                      - (k / 2 - 1) * math.log(2) - math.lgamma(k / 2))
    z = lam * x
    nu = k / 2 - 1
    # exponentially scaled Bessel keeps exp(-(x - lam)^2 / 2) finite
    return x**k * lam * special.ive(nu, z) * np.exp(-0.5 * (x - lam) ** 2) / np.maximum(z, 1e-300) ** (k / 2)


def _scaled_rate(s: float, d: int) -> float:
    """c_d E|w - s e| for standard normal w; total_rate = this / sqrt(beta)."""
    upper = s + 40.0
    val, _ = integrate.quad(lambda x: x * _noncentral_chi_pdf(x, d, s), 0.0, upper,
                            points=[s] if s > 0 else None, limit=200, epsabs=1e-13, epsrel=1e-12)
    return angular_constant(d) * val


def total_rate(v, params: KineticParams) -> float:
    """Collision frequency lambda(v) = int int M_beta(v_c) [w.(v_c - v)]_+ dv_c dw.

    The angular integral reduces to c_d |v_c - v|, leaving the mean relative
    speed, which is a one-dimensional integral against the noncentral chi
    density of |v_c - v| evaluated by adaptive quadrature.
    """
    s = float(np.linalg.norm(v)) * math.sqrt(params.beta)
    return _scaled_rate(s, params.d) / math.sqrt(params.beta)


@lru_cache(maxsize=None)
def _rate_spline(d: int):
    grid = np.arange(0.0, _TABLE_S_MAX + _TABLE_STEP / 2, _TABLE_STEP)
    vals = np.array([_scaled_rate(s, d) for s in grid])
    return CubicSpline(grid, vals)


def rate_of_speed(speed, params: KineticParams, collisionless: bool = False) -> np.ndarray:
    """Vectorized lambda(|v|) from a cubic table of the quadrature (rel. error < 1e-9)."""
    speed = np.asarray(speed, dtype=float)
    if collisionless:
        return np.zeros_like(speed)
    s = speed * math.sqrt(params.beta)
    out = np.empty_like(s)
    inside = s <= _TABLE_S_MAX
    out[inside] = _rate_spline(params.d)(s[inside])
    for k in np.flatnonzero(~inside):
        out.flat[k] = _scaled_rate(float(s.flat[k]), params.d)
    return out / math.sqrt(params.beta)


def mean_maxwellian_speed(params: KineticParams) -> float:
    d = params.d
    return math.sqrt(2.0 / params.beta) * math.gamma((d + 1) / 2) / math.gamma(d / 2)


def _propose_background(vnorm: np.ndarray, params: KineticParams, rng: np.random.Generator):
    """Draw v_c with density proportional to M_beta(v_c) (|v_c| + |v|).

    Mixture of M_beta (weight |v|) and the speed-biased Maxwellian |v_c| M_beta
    (weight E|v_c|); the latter has a chi(d+1) radial law.
    """
    m = vnorm.size
    d = params.d
    mean_speed = mean_maxwellian_speed(params)
    plain = rng.random(m) * (vnorm + mean_speed) < vnorm
    out = np.empty((m, d))
    k = int(plain.sum())
    out[plain] = maxwellian_sample(params.beta, d, rng, size=k)
    radius = np.sqrt(rng.chisquare(d + 1, size=m - k) / params.beta)
    out[~plain] = radius[:, None] * uniform_sphere(m - k, d, rng)
    return out


def _jumps(v: np.ndarray, params: KineticParams, rng: np.random.Generator, max_rounds: int = 10_000):
    """Vectorized rejection sampling of (v_c, w) for every row of v.

    Proposals come from M_beta(v_c) (|v_c| + |v|) x uniform(w) and are accepted
    with probability [w.(v_c - v)]_+ / (|v_c| + |v|), which leaves exactly the
    kernel M_beta(v_c) [w.(v_c - v)]_+.
    """
    n, d = v.shape
    v_c = np.empty_like(v)
    omega = np.empty_like(v)
    todo = np.arange(n)
    vnorm = np.linalg.norm(v, axis=1)
    for _ in range(max_rounds):
        if todo.size == 0:
            break
        m = todo.size
        vc = _propose_background(vnorm[todo], params, rng)
        w = uniform_sphere(m, d, rng)
        proj = np.einsum("ij,ij->i", w, vc - v[todo])
        majorant = np.linalg.norm(vc, axis=1) + vnorm[todo]
        accept = rng.random(m) * majorant < proj
        idx = todo[accept]
        v_c[idx] = vc[accept]
        omega[idx] = w[accept]
        todo = todo[~accept]
    if todo.size:
        raise RejectionBudgetError(
            f"{todo.size} jump proposals still pending after {max_rounds} rounds; "
            f"max |v| = {vnorm[todo].max():.3g}"
        )
    proj = np.einsum("ij,ij->i", omega, v_c - v)
    v_star = v + proj[:, None] * omega
    return v_c, omega, v_star


def sample_jump(v, params: KineticParams, rng: np.random.Generator, time: float = 0.0) -> JumpEvent:
    v = np.asarray(v, dtype=float)
    vc, w, vs = _jumps(v[None, :], params, rng)
    return JumpEvent(time=time, v=v.copy(), v_c=vc[0], omega=w[0], v_star=vs[0])


def simulate_paths(x, v, t: float, params: KineticParams, rng: np.random.Generator,
                   collisionless: bool = False, direction: int = 1):
    """Run many independent paths for a duration t.

    ``direction=-1`` reverses transport (dX/ds = -V) for the backward
    representation. Returns (x, v, jump_counts); inputs are not modified.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    x = np.array(x, dtype=float, copy=True)
    v = np.array(v, dtype=float, copy=True)
    n = x.shape[0]
    jumps = np.zeros(n, dtype=np.int64)
    remaining = np.full(n, float(t))
    active = np.arange(n) if t > 0 else np.arange(0)
    sign = float(direction)
    while active.size:
        rate = rate_of_speed(np.linalg.norm(v[active], axis=1), params, collisionless)
        with np.errstate(divide="ignore"):
            tau = np.where(rate > 0, rng.exponential(size=active.size) / np.where(rate > 0, rate, 1.0), np.inf)
        jump = tau < remaining[active]
        flight = np.where(jump, tau, remaining[active])
        x[active] += sign * flight[:, None] * v[active]
        remaining[active] -= flight
        hit = active[jump]
        if hit.size:
            _, _, v[hit] = _jumps(v[hit], params, rng)
            jumps[hit] += 1
        active = hit
    return reduce_torus(x), v, jumps


def simulate_process(z0: PhasePoint, t: float, params: KineticParams, rng: np.random.Generator,
                     collisionless: bool = False) -> PhasePoint:
    x, v, _ = simulate_paths(z0.x[None, :], z0.v[None, :], t, params, rng, collisionless)
    return PhasePoint(x[0], v[0])


def solve_density(rho: SpacePerturbation, t, params: KineticParams, n_paths: int,
                  bins: HistogramSpec, rng: np.random.Generator,
                  collisionless: bool = False) -> KineticEstimate:
    """Forward particle estimate of g at one or several (sorted) times."""
    if n_paths < 2:
        raise ValueError("need at least two paths")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be sorted and nonnegative")
    d = params.d
    x = rho.sample(n_paths, d, rng)
    v = maxwellian_sample(params.beta, d, rng, size=n_paths)
    cells = np.empty((len(times), n_paths), dtype=np.int64)
    now = 0.0
    for k, tk in enumerate(times):
        x, v, _ = simulate_paths(x, v, tk - now, params, rng, collisionless)
        now = tk
        cells[k] = bins.cell_index(x, v)
    h = MarginalHistogram.from_cells(times, cells, bins, d)
    return KineticEstimate(h.times, h.mass, h.stderr, h.n_samples, bins, d, h.cells)


def estimate_phi(x, v, t: float, rho: SpacePerturbation, params: KineticParams, n_paths: int,
                 rng: np.random.Generator, collisionless: bool = False) -> PhiEstimate:
    """phi(t, x, v) as the mean of rho at the end of backward paths started at (x, v).

    ``x`` and ``v`` are single points (d,) or per-path arrays (n_paths, d).
    """
    if n_paths < 2:
        raise ValueError("need at least two paths")
    d = params.d
    x0 = np.broadcast_to(np.asarray(x, dtype=float), (n_paths, d))
    v0 = np.broadcast_to(np.asarray(v, dtype=float), (n_paths, d))
    xe, _, _ = simulate_paths(x0, v0, t, params, rng, collisionless, direction=-1)
    values = rho(xe)
    return PhiEstimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(n_paths)), values)


def backward_cell_masses(rho: SpacePerturbation, t: float, params: KineticParams,
                         paths_per_cell: int, bins: HistogramSpec, rng: np.random.Generator,
                         collisionless: bool = False) -> KineticEstimate:
    """Cell masses of g(t) from the backward estimator (spatial cells only).

    For each cell: mass = |cell| * E[phi(t, X, V)] / mean(rho) with X uniform in
    the cell and V ~ M_beta, so the estimate is independent of the forward one.
    """
    if bins.v_bins:
        raise ValueError("backward cell masses support spatial bins only")
    d = params.d
    lo, hi = bins.spatial_bounds(d)
    vol = bins.spatial_volume(d)
    n_cells = len(lo)
    mass = np.empty((1, n_cells))
    err = np.empty((1, n_cells))
    for c in range(n_cells):
        xs = lo[c] + (hi[c] - lo[c]) * rng.random((paths_per_cell, d))
        vs = maxwellian_sample(params.beta, d, rng, size=paths_per_cell)
        est = estimate_phi(xs, vs, t, rho, params, paths_per_cell, rng, collisionless)
        mass[0, c] = vol * est.mean / rho.mean
        err[0, c] = vol * est.stderr / rho.mean
    return KineticEstimate(np.array([float(t)]), mass, err, paths_per_cell, bins, d)


def free_transport_cos_mass(lo, hi, t: float, amplitude: float, beta: float, d: int) -> float:
    """Exact cell mass of the collisionless solution for rho = 1 + a cos(2 pi x1).

    Free flight damps the Fourier mode by the Gaussian characteristic function
    exp(-2 pi^2 t^2 / beta).
    """
    damped = SpacePerturbation.cosine(amplitude * math.exp(-2 * math.pi**2 * t**2 / beta))
    return damped.cell_mass(lo, hi, d)
