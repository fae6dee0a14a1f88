"""Fast invariant suite behind ``rayleigh-gas selftest`` (well under a minute)."""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .dynamics import init_equilibrium, run
from .geometry import ModelParams
from .histogram import HistogramSpec
from .perturbation import SpacePerturbation
from .pruning import (PruningParams, build_schedule, cauchy_schwarz_bound, choose_K, finite_time_chain,
                      gaussian_moment_identity, remainder_chain)
from .solver import KineticParams, estimate_phi, free_transport_cos_mass, solve_density, total_rate


class Check(NamedTuple):
    name: str
    ok: bool
    detail: str


def _conservation(rng):
    params = ModelParams.boltzmann_grad(1 / 50)
    gas = init_equilibrium(params, SpacePerturbation.constant(), rng)
    rec = run(gas, 2.0, np.linspace(0, 2, 11))
    ok = rec.max_momentum_error <= 1e-12 and rec.max_energy_error <= 1e-12 and rec.energy_drift <= 1e-9
    yield Check("collision conservation", ok,
                f"{rec.total_collisions} collisions, dp={rec.max_momentum_error:.2e}, "
                f"dE={rec.max_energy_error:.2e}, drift={rec.energy_drift:.2e}")
    yield Check("no overlap", rec.min_distance_ratio >= 1 - 1e-9,
                f"min distance / eps = {rec.min_distance_ratio:.12f}")


def _reversibility(rng):
    params = ModelParams.boltzmann_grad(1 / 20)
    gas = init_equilibrium(params, SpacePerturbation.cosine(0.5), rng).to_decimal()
    x0 = gas.x.copy()
    run(gas, 0.5, precision="decimal")
    gas.flip_velocities()
    gas.time = 0.0
    run(gas, 0.5, precision="decimal")
    dx = np.asarray(gas.x - x0, dtype=float)
    err = float(np.max(np.abs(dx - np.round(dx))))
    yield Check("reversibility", err <= 1e-6, f"max position error {err:.2e}")


def _solver(rng):
    kp = KineticParams(2, 1.0)
    exact = math.sqrt(2 * math.pi)  # 2 E|v_c| at v = 0, d = 2, beta = 1
    got = total_rate(np.zeros(2), kp)
    yield Check("collision rate at rest", abs(got - exact) <= 1e-10 * exact, f"{got!r} vs {exact!r}")

    spec = HistogramSpec(8, (0,))
    est = solve_density(SpacePerturbation.cosine(0.5), 0.5, kp, 100_000, spec, rng, collisionless=True)
    lo, hi = spec.spatial_bounds(2)
    ref = np.array([free_transport_cos_mass(lo[c], hi[c], 0.5, 0.5, 1.0, 2) for c in range(len(lo))])
    z = np.max(np.abs(est.mass[0] - ref) / est.stderr[0])
    yield Check("free transport", z <= 4, f"max |z| = {z:.2f}")

    phi = estimate_phi(rng.random((10_000, 2)), rng.normal(size=(10_000, 2)), 0.5,
                       SpacePerturbation.cosine(0.5), kp, 10_000, rng)
    ok = phi.values.min() >= 0.5 and phi.values.max() <= 1.5
    yield Check("maximum principle", ok, f"range [{phi.values.min():.6f}, {phi.values.max():.6f}]")


def _pruning(rng):
    bad = []
    for K in range(6, 15):
        for a in (0.1, 0.25, 0.4):
            rep = remainder_chain(PruningParams(K, a, 1.0))
            if rep.feasible:
                h = build_schedule(PruningParams(K, a, 1.0)).h
                if not (rep.holds and abs(math.fsum(h) - 1) <= 1e-12 and np.all(np.diff(h) > 0)):
                    bad.append((K, a))
    yield Check("remainder bound grid", not bad, f"failing tuples: {bad}" if bad else "all feasible tuples hold")
    ft = [K for K in range(8, 15) if not finite_time_chain(K).holds]
    yield Check("finite-time remainder bound", not ft, f"failing K: {ft}" if ft else "K = 8..14 hold")
    worst = max(gaussian_moment_identity(lam, d, a).rel_error
                for lam in (0.5, 1, 2, 4) for d in (2, 3) for a in (0, 1, 5))
    yield Check("gaussian moment identity", worst <= 1e-8, f"worst relative error {worst:.1e}")
    rep = cauchy_schwarz_bound(2, 3, 2.5, 1.3, rng)
    yield Check("cauchy-schwarz bound", rep.holds, f"sup {rep.sup_value:.6g} <= {rep.bound:.6g}")
    K = choose_K(c_beta=0.05, log_eps=-100.0).K
    yield Check("choose_K", K == 3, f"K = {K}")


def run_selftest(seed: int = 0):
    """Run every check; returns a list of `Check`."""
    from .harness import seed_stream

    results = []
    for k, group in enumerate((_conservation, _reversibility, _solver, _pruning)):
        try:
            results.extend(group(seed_stream(seed, 9, k)))
        except Exception as err:  # a crash is a failed invariant, not a pass
            results.append(Check(group.__name__.strip("_"), False, f"{type(err).__name__}: {err}"))
    return results
