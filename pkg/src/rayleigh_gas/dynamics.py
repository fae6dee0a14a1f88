"""Event-driven hard-sphere gas on the unit torus with one tagged particle.

The tagged particle is always index 0. Background particles start uniform on
the exclusion domain and Maxwellian in velocity; the tagged particle's position
is additionally weighted by a spatial perturbation rho.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _engine
from ._extended import run_events_extended
from ._multiprec import DEFAULT_DIGITS, run_events_decimal, to_decimal
from .geometry import (
    CONTACT_RTOL,
    GRAZING_TOL,
    ModelParams,
    PhasePoint,
    kinetic_energy,
    maxwellian_sample,
    torus_displacement,
)
from .histogram import HistogramSpec, MarginalHistogram
from .perturbation import SpacePerturbation

MAX_PACKING = 0.3


class SimulationError(RuntimeError):
    """The event loop reached a state that indicates a simulator bug."""


class OverlapError(SimulationError):
    pass


class InitializationError(RuntimeError):
    """Rejection sampling of the initial configuration ran out of budget."""


@dataclass
class GasConfiguration:
    """Full N-particle state; ``x`` is (N, d) reduced to [0, 1), ``v`` is (N, d).

    Arrays are float64, or numpy ``longdouble`` for extended-precision runs
    (see `to_extended`).
    """

    params: ModelParams
    x: np.ndarray
    v: np.ndarray
    time: float = 0.0
    n_collisions: np.ndarray = field(default=None)
    tagged_index: int = 0

    def __post_init__(self):
        dtype = np.asarray(self.x).dtype
        dtype = dtype if dtype in (np.longdouble, object) else float
        self.x = np.ascontiguousarray(self.x, dtype=dtype)
        self.v = np.ascontiguousarray(self.v, dtype=dtype)
        n, d = self.params.n_particles, self.params.d
        if self.x.shape != (n, d) or self.v.shape != (n, d):
            raise ValueError(f"expected arrays of shape {(n, d)}, got {self.x.shape} and {self.v.shape}")
        if self.n_collisions is None:
            self.n_collisions = np.zeros(n, dtype=np.int64)

    @property
    def tagged(self) -> PhasePoint:
        return PhasePoint(self.x[0].copy(), self.v[0].copy())

    @property
    def extended(self) -> bool:
        return self.x.dtype == np.longdouble

    def to_extended(self) -> "GasConfiguration":
        """Switch the state to long double in place (no-op if already extended)."""
        if self.multiprecision:
            raise ValueError("decimal state cannot be narrowed to long double")
        self.x = self.x.astype(np.longdouble)
        self.v = self.v.astype(np.longdouble)
        return self

    @property
    def multiprecision(self) -> bool:
        return self.x.dtype == object

    def to_decimal(self) -> "GasConfiguration":
        """Switch the state to exact `decimal.Decimal` copies in place."""
        if not self.multiprecision:
            self.x, self.v = to_decimal(self.x), to_decimal(self.v)
        return self

    def energy(self) -> float:
        return kinetic_energy(np.asarray(self.v, dtype=float))

    def min_distance_ratio(self) -> float:
        """Smallest pairwise torus distance divided by eps."""
        if self.params.n_particles < 2:
            return math.inf
        x = np.asarray(self.x, dtype=float)
        v = np.asarray(self.v, dtype=float)
        stamp = np.full(self.params.n_particles, self.time)
        return _engine.min_distance_ratio_all(x, v, stamp, self.time, self.params.eps)

    def flip_velocities(self) -> None:
        self.v = -self.v

    def copy(self) -> "GasConfiguration":
        return GasConfiguration(self.params, self.x.copy(), self.v.copy(), self.time,
                                self.n_collisions.copy())


@dataclass
class TrajectoryRecord:
    """Tagged-particle samples at the requested observation times."""

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    n_collisions: np.ndarray
    energy: np.ndarray
    min_distance_ratio: float
    total_collisions: int
    grazing_skipped: int
    horizon_events: int
    max_momentum_error: float
    max_energy_error: float

    @property
    def energy_drift(self) -> float:
        """Largest relative deviation of the energy trace from its first entry."""
        if len(self.energy) == 0:
            return 0.0
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / e0) if e0 > 0 else 0.0

    def to_csv(self) -> str:
        """Trace CSV: ``t, x1..xd, v1..vd, n_coll`` (one row per observation time)."""
        d = self.x.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(trace_header(d))
        for k, t in enumerate(self.times):
            w.writerow([repr(float(t))] + [repr(float(c)) for c in self.x[k]]
                       + [repr(float(c)) for c in self.v[k]] + [int(self.n_collisions[k])])
        return buf.getvalue()


def trace_header(d: int) -> list[str]:
    return (["t"] + [f"x{k + 1}" for k in range(d)] + [f"v{k + 1}" for k in range(d)]
            + ["n_coll"])


def read_trace_csv(text: str) -> dict:
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    d = (len(header) - 2) // 2
    if header != trace_header(d):
        raise ValueError(f"unexpected trace header {header}")
    arr = np.array([[float(c) for c in r] for r in body]) if body else np.empty((0, 2 * d + 2))
    return {
        "t": arr[:, 0],
        "x": arr[:, 1:1 + d],
        "v": arr[:, 1 + d:1 + 2 * d],
        "n_coll": arr[:, -1].astype(int),
    }


def init_equilibrium(params: ModelParams, rho: SpacePerturbation, rng: np.random.Generator,
                     max_restarts: int = 100_000) -> GasConfiguration:
    """Sample the tagged-particle initial law.

    The tagged position is drawn from rho/mean by rejection (accept with
    probability rho(x1)/bound). The law of the remaining positions given x1 is
    uniform on the exclusion domain and, by translation invariance of the
    torus, does not reweight x1, so it is sampled by sequential insertion with
    a full restart on any overlap. The normalization is never computed.
    """
    if params.excluded_volume_fraction >= MAX_PACKING:
        raise InitializationError(
            f"packing N*vol(B_eps) = {params.excluded_volume_fraction:.3g} is not dilute "
            f"(must stay below {MAX_PACKING})"
        )
    d, n = params.d, params.n_particles
    x1 = rho.sample(1, d, rng)[0]
    pos, restarts = _engine.insert_background(x1, n, params.eps, rng, max_restarts)
    if restarts < 0:
        raise InitializationError(
            f"no admissible configuration after {max_restarts} restarts (N={n}, eps={params.eps})"
        )
    v = maxwellian_sample(params.beta, d, rng, size=n)
    return GasConfiguration(params, pos, v)


def predict_collision(zi: PhasePoint, zj: PhasePoint, eps: float):
    """Contact time of a pair within its minimum-image validity horizon, or None."""
    dx = torus_displacement(zj.x, zi.x)
    dv = np.asarray(zi.v, dtype=float) - np.asarray(zj.v, dtype=float)
    tau, hit = _engine.pair_event(np.ascontiguousarray(dx), np.ascontiguousarray(dv), float(eps))
    return float(tau) if hit else None


def image_horizon(zi: PhasePoint, zj: PhasePoint, eps: float) -> float:
    """Time after which the minimum-image prediction for the pair must be redone."""
    dx = torus_displacement(zj.x, zi.x)
    speed = float(np.linalg.norm(np.asarray(zi.v) - np.asarray(zj.v)))
    if speed == 0.0:
        return math.inf
    cmax = float(np.max(np.abs(dx)))
    other = math.sqrt(float(dx @ dx) - cmax**2 + (1.0 - cmax) ** 2)
    return (other - eps) / speed


def run(config: GasConfiguration, t_final: float, observation_times: Sequence[float] = (),
        check_all_pairs: bool = True, precision: str = "auto",
        digits: int = DEFAULT_DIGITS) -> TrajectoryRecord:
    """Advance ``config`` in place to ``t_final`` and record the tagged particle.

    Collisions closer to tangency than ``|dx.dv| <= 1e-12`` are skipped. Every
    executed collision checks the two particles against everyone else; with
    ``check_all_pairs`` all pairs are also checked at the start, at each
    observation time and at the end.

    ``precision`` is "double" (jitted float64 loop), "extended" (long double),
    "decimal" (pure Python with ``digits`` significant digits) or "auto"
    (follow the configuration's dtype). The wider modes convert the
    configuration in place.
    """
    if precision not in ("auto", "double", "extended", "decimal"):
        raise ValueError(f"unknown precision {precision!r}")
    if precision == "decimal":
        config.to_decimal()
    elif precision == "extended":
        config.to_extended()
    elif precision == "double" and (config.extended or config.multiprecision):
        raise ValueError("configuration is not float64; pass precision='auto'")
    if t_final < config.time:
        raise ValueError("t_final precedes the configuration time")
    obs = np.asarray(observation_times, dtype=float)
    if obs.ndim != 1:
        raise ValueError("observation times must be a flat sequence")
    if np.any(np.diff(obs) < 0):
        raise ValueError("observation times must be sorted")
    if obs.size and (obs[0] < config.time or obs[-1] > t_final):
        raise ValueError("observation times must lie in [config.time, t_final]")
    n = config.params.n_particles
    stamp = np.full(n, config.time)
    version = np.zeros(n, dtype=np.int64)
    if config.multiprecision:
        ox, ov, on, oe, oratio, stats = run_events_decimal(
            config.x, config.v, config.n_collisions, config.time, t_final,
            config.params.eps, obs, bool(check_all_pairs), digits,
        )
        ox, ov = ox.astype(float), ov.astype(float)
    elif config.extended:
        ox, ov, on, oe, oratio, stats = run_events_extended(
            config.x, config.v, config.n_collisions, config.time, t_final,
            config.params.eps, obs, bool(check_all_pairs),
        )
        ox, ov = ox.astype(float), ov.astype(float)
    else:
        ox, ov, on, oe, oratio, stats = _engine.run_events(
            config.x, config.v, stamp, version, config.n_collisions, float(config.time),
            float(t_final), float(config.params.eps), obs, bool(check_all_pairs),
        )
    status = int(stats[_engine.ST_STATUS])
    if status == _engine.STATUS_OVERLAP:
        raise OverlapError(f"overlap detected: min distance / eps = {stats[_engine.ST_MIN_RATIO]:.12g}")
    if status == _engine.STATUS_NO_CONTACT:
        raise SimulationError("a predicted collision was executed away from contact")
    if status == _engine.STATUS_EXHAUSTED:
        raise SimulationError(f"event queue exhausted before t_final = {t_final}")
    config.time = float(t_final)
    return TrajectoryRecord(
        times=obs,
        x=ox,
        v=ov,
        n_collisions=on,
        energy=oe,
        min_distance_ratio=float(min(stats[_engine.ST_MIN_RATIO], np.min(oratio, initial=np.inf))),
        total_collisions=int(stats[_engine.ST_COLLISIONS]),
        grazing_skipped=int(stats[_engine.ST_GRAZING]),
        horizon_events=int(stats[_engine.ST_HORIZON]),
        max_momentum_error=float(stats[_engine.ST_MAX_DP]),
        max_energy_error=float(stats[_engine.ST_MAX_DE]),
    )


def estimate_marginal(records: Sequence[TrajectoryRecord], bins: HistogramSpec) -> MarginalHistogram:
    """Histogram of the tagged particle over replicas, one row per observation time."""
    if not records:
        raise ValueError("need at least one record")
    times = records[0].times
    for r in records[1:]:
        if r.times.shape != times.shape or not np.array_equal(r.times, times):
            raise ValueError("records do not share observation times")
    x = np.stack([r.x for r in records], axis=1)  # (n_times, n_replicas, d)
    v = np.stack([r.v for r in records], axis=1)
    return MarginalHistogram.from_samples(times, x, v, bins)


__all__ = [
    "CONTACT_RTOL",
    "GRAZING_TOL",
    "GasConfiguration",
    "InitializationError",
    "OverlapError",
    "SimulationError",
    "TrajectoryRecord",
    "estimate_marginal",
    "image_horizon",
    "init_equilibrium",
    "predict_collision",
    "read_trace_csv",
    "run",
]
