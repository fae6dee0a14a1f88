"""Experiment orchestration: configuration, seeding, convergence study, pruning audit.

Configuration files are flat ``key = value`` text, one key per line, ``#`` for
comments. Recognized keys (defaults in parentheses):

    d (2)             beta (1.0)          rho (cosine)        amplitude (0.5)
    t_final (0.5)     obs_times (t_final) eps (1/64, 1/128)   replicas (200)
    paths (10 x replicas)                 bins (8)            axes (1)
    v_bins (0)        v_max (2.0)         seed (0)            out (results)
    bootstrap (200)   alpha (0.25)        override_bg (false) n_particles
    trace_points (51) figures (false)

Lists are comma separated and accept fractions such as ``1/64``. ``axes``
lists the (1-based) spatial axes of the histogram, or ``all``. ``n_particles``
is only honoured together with ``override_bg = true``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import platform
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .dynamics import InitializationError, SimulationError, estimate_marginal, init_equilibrium, run
from .geometry import ModelParams
from .histogram import HistogramSpec, MarginalHistogram, binned_distances
from .perturbation import SpacePerturbation
from .pruning import PruningParams, choose_K, finite_time_chain, remainder_chain
from .solver import KineticParams, solve_density

SURROGATE_NOTE = (
    "distances are binned surrogates of the phase-space sup norm: L1 is the summed "
    "absolute cell-mass gap, Linf the largest cell-density gap, over the histogram "
    "cells listed under 'histogram'; one kinetic solver run is shared by all eps rows, "
    "so their errors are correlated through it"
)

# stream tags, first element of every seed key
SIM, SOLVE, BOOT = 0, 1, 2


class ConfigError(ValueError):
    """Invalid configuration (CLI exit code 2)."""


def seed_stream(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``keys`` under ``master_seed``.

    Philox is counter based and keyed by a SeedSequence hash of
    (master_seed, keys), so a stream depends only on those integers and not on
    how many other streams were drawn, on the platform or on the order of work.
    """
    if master_seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and stream keys must be nonnegative")
    ss = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def _parse_float(text: str) -> float:
    text = text.strip()
    try:
        return float(Fraction(text)) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError) as err:
        raise ConfigError(f"not a number: {text!r}") from err


def _parse_list(text: str, conv=_parse_float) -> tuple:
    return tuple(conv(p) for p in str(text).split(",") if p.strip())


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _parse_int(text) -> int:
    try:
        return int(str(text).strip())
    except ValueError as err:
        raise ConfigError(f"not an integer: {text!r}") from err


def _parse_axes(text):
    s = str(text).strip().lower()
    if s == "all":
        return None
    return tuple(a - 1 for a in _parse_list(s, _parse_int))


@dataclass(frozen=True)
class ExperimentConfig:
    d: int = 2
    beta: float = 1.0
    rho: str = "cosine"
    amplitude: float = 0.5
    t_final: float = 0.5
    obs_times: tuple = ()
    eps: tuple = (1 / 64, 1 / 128)
    replicas: int = 200
    paths: Optional[int] = None
    bins: int = 8
    axes: Optional[tuple] = (0,)
    v_bins: int = 0
    v_max: float = 2.0
    seed: int = 0
    out: str = "results"
    bootstrap: int = 200
    alpha: float = 0.25
    override_bg: bool = False
    n_particles: tuple = ()
    trace_points: int = 51
    figures: bool = False

    _PARSERS = {
        "d": _parse_int, "beta": _parse_float, "rho": str, "amplitude": _parse_float,
        "t_final": _parse_float, "obs_times": _parse_list, "eps": _parse_list,
        "replicas": _parse_int, "paths": _parse_int, "bins": _parse_int, "axes": _parse_axes,
        "v_bins": _parse_int, "v_max": _parse_float, "seed": _parse_int, "out": str,
        "bootstrap": _parse_int, "alpha": _parse_float, "override_bg": _parse_bool,
        "n_particles": lambda s: _parse_list(s, _parse_int), "trace_points": _parse_int,
        "figures": _parse_bool,
    }

    def __post_init__(self):
        if not self.obs_times:
            object.__setattr__(self, "obs_times", (self.t_final,))
        self.validate()

    def validate(self) -> None:
        if self.d not in (2, 3):
            raise ConfigError("d must be 2 or 3")
        if not self.beta > 0:
            raise ConfigError("beta must be positive")
        if not self.eps:
            raise ConfigError("eps list is empty")
        if any(not 0 < e < 0.5 for e in self.eps):
            raise ConfigError("every eps must lie in (0, 1/2)")
        if self.replicas < 2:
            raise ConfigError("replicas must be at least 2")
        if self.paths is not None and self.paths < 2:
            raise ConfigError("paths must be at least 2")
        if not self.t_final >= 0:
            raise ConfigError("t_final must be nonnegative")
        obs = self.obs_times
        if any(not 0 <= t <= self.t_final for t in obs) or list(obs) != sorted(obs):
            raise ConfigError("observation times must be sorted and lie in [0, t_final]")
        if self.bins < 1 or self.bootstrap < 2 or self.trace_points < 2:
            raise ConfigError("bins must be >= 1, bootstrap and trace_points >= 2")
        if self.axes is not None and any(not 0 <= a < self.d for a in self.axes):
            raise ConfigError(f"histogram axes must lie in 1..{self.d}")
        if self.n_particles and not self.override_bg:
            raise ConfigError("n_particles requires override_bg = true")
        if self.n_particles and len(self.n_particles) != len(self.eps):
            raise ConfigError("n_particles needs one entry per eps")
        try:
            self.perturbation()
            self.histogram_spec()
            for k in range(len(self.eps)):
                self.model_params(k)
        except ValueError as err:
            raise ConfigError(str(err)) from err

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        kwargs = {}
        for key, raw in values.items():
            if key not in cls._PARSERS:
                raise ConfigError(f"unknown config key {key!r}")
            kwargs[key] = cls._PARSERS[key](raw) if isinstance(raw, str) else raw
        for key in ("obs_times", "eps", "n_particles"):
            if key in kwargs and not isinstance(kwargs[key], tuple):
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    @staticmethod
    def read_file(path) -> dict:
        values = {}
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err}") from err
        for n, line in enumerate(lines, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{n}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return values

    @classmethod
    def load(cls, path=None, **overrides) -> "ExperimentConfig":
        """Config file values, then non-None ``overrides`` on top."""
        values = cls.read_file(path) if path else {}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    @property
    def solver_paths(self) -> int:
        return self.paths if self.paths is not None else 10 * self.replicas

    def n_for(self, k: int) -> int:
        if self.n_particles:
            return self.n_particles[k]
        return max(1, round(self.eps[k] ** -(self.d - 1)))

    def model_params(self, k: int) -> ModelParams:
        return ModelParams(self.d, self.eps[k], self.n_for(k), self.beta, self.override_bg)

    def perturbation(self) -> SpacePerturbation:
        return SpacePerturbation.from_name(self.rho, self.amplitude)

    def histogram_spec(self) -> HistogramSpec:
        return HistogramSpec(self.bins, self.axes, self.v_bins, 0, self.v_max)

    def echo(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out[f.name] = list(val) if isinstance(val, tuple) else val
        return out

    def digest(self) -> str:
        """Hash of the settings that determine the results (output dir excluded)."""
        echo = {k: v for k, v in self.echo().items() if k not in ("out", "figures")}
        return hashlib.sha256(json.dumps(echo, sort_keys=True).encode()).hexdigest()


@dataclass
class ConvergenceRow:
    eps: float
    N: int
    t_obs: float
    distance_L1: float
    stderr_L1: float
    noise_L1: float
    distance_Linf: float
    stderr_Linf: float
    replicas: int
    paths: int
    status: str = "ok"
    rate_slope: float = math.nan
    wall_time: float = field(default=math.nan, compare=False)

    CSV_FIELDS = ("eps", "N", "t_obs", "distance_L1", "stderr_L1", "noise_L1",
                  "distance_Linf", "stderr_Linf", "replicas", "paths", "status", "rate_slope")

    def csv_values(self) -> list:
        out = []
        for name in self.CSV_FIELDS:
            v = getattr(self, name)
            out.append(repr(float(v)) if isinstance(v, float) else v)
        return out


@dataclass
class StudyResult:
    rows: list
    manifest: dict
    out_dir: Path
    failed: list

    @property
    def ok(self) -> bool:
        return not self.failed


def _bootstrap_distances(hs: MarginalHistogram, rb: MarginalHistogram, n_boot: int,
                         rng: np.random.Generator):
    l1 = np.empty((n_boot, len(hs.times)))
    linf = np.empty_like(l1)
    for b in range(n_boot):
        l1[b], linf[b] = binned_distances(hs.resample(rng), rb.resample(rng))
    return l1.std(axis=0, ddof=1), linf.std(axis=0, ddof=1)


def noise_floor_L1(a: MarginalHistogram, b: MarginalHistogram) -> np.ndarray:
    """Expected L1 distance from sampling noise alone: sqrt(2/pi) * sum of combined cell errors."""
    return math.sqrt(2 / math.pi) * np.sqrt(a.stderr**2 + b.stderr**2).sum(axis=1)


def rate_slope(eps: Sequence[float], distances: Sequence[float], alpha: float) -> float:
    """Least-squares slope of log(distance) against |log eps|^(1 - alpha); descriptive only."""
    e = np.asarray(eps, dtype=float)
    dist = np.asarray(distances, dtype=float)
    ok = np.isfinite(dist) & (dist > 0)
    if ok.sum() < 2:
        return math.nan
    x = np.abs(np.log(e[ok])) ** (1 - alpha)
    if np.ptp(x) == 0:
        return math.nan
    return float(np.polyfit(x, np.log(dist[ok]), 1)[0])


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def versions() -> dict:
    import numba
    import scipy

    return {"rayleigh_gas": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def simulate_replicas(config: ExperimentConfig, k: int):
    """Run ``config.replicas`` independent gases at eps index ``k``; returns records."""
    params = config.model_params(k)
    rho = config.perturbation()
    records = []
    for r in range(config.replicas):
        rng = seed_stream(config.seed, SIM, k, r)
        gas = init_equilibrium(params, rho, rng)
        records.append(run(gas, config.t_final, config.obs_times))
    return records


def solver_histogram(config: ExperimentConfig) -> MarginalHistogram:
    kp = KineticParams(config.d, config.beta)
    return solve_density(config.perturbation(), config.obs_times, kp, config.solver_paths,
                         config.histogram_spec(), seed_stream(config.seed, SOLVE))


def run_convergence_study(config: ExperimentConfig, out_dir=None, log=None) -> StudyResult:
    """Hard-sphere marginals versus the kinetic solution for every eps in the config.

    One solver run (``config.solver_paths`` paths, 10x the replicas by default)
    serves as the reference for all eps. Files written to ``out_dir``:
    convergence.csv, hardsphere_eps<k>.csv, solver.csv and manifest.json. A
    failing eps leaves a ``FAILED_eps<k>.txt`` marker and rows with status
    ``failed``; the remaining eps still run.
    """
    out = Path(out_dir if out_dir is not None else config.out)
    out.mkdir(parents=True, exist_ok=True)
    log = log or (lambda msg: None)
    spec = config.histogram_spec()
    started = time.perf_counter()

    log(f"solver: {config.solver_paths} paths")
    rb = solver_histogram(config)
    solver_csv = rb.to_csv()
    (out / "solver.csv").write_text(solver_csv)
    files = {"solver.csv": _sha(solver_csv)}

    rows, failed, wall, diagnostics = [], [], {}, {}
    for k, eps in enumerate(config.eps):
        n = config.n_for(k)
        marker = out / f"FAILED_eps{k}.txt"
        t0 = time.perf_counter()
        log(f"eps={eps:.6g} N={n}: {config.replicas} replicas")
        try:
            records = simulate_replicas(config, k)
        except (SimulationError, InitializationError) as err:
            failed.append({"eps": eps, "N": n, "error": f"{type(err).__name__}: {err}"})
            marker.write_text(f"eps={eps!r} N={n} aborted: {type(err).__name__}: {err}\n")
            for t_obs in config.obs_times:
                rows.append(ConvergenceRow(eps, n, float(t_obs), *[math.nan] * 5,
                                           config.replicas, config.solver_paths, status="failed"))
            continue
        if marker.exists():
            marker.unlink()
        hs = estimate_marginal(records, spec)
        diagnostics[repr(eps)] = {
            "min_distance_ratio": min(r.min_distance_ratio for r in records),
            "collisions": int(sum(r.total_collisions for r in records)),
            "max_energy_error": max(r.max_energy_error for r in records),
        }
        name = f"hardsphere_eps{k}.csv"
        text = hs.to_csv()
        (out / name).write_text(text)
        files[name] = _sha(text)
        l1, linf = binned_distances(hs, rb)
        se1, seinf = _bootstrap_distances(hs, rb, config.bootstrap, seed_stream(config.seed, BOOT, k))
        floor = noise_floor_L1(hs, rb)
        elapsed = time.perf_counter() - t0
        wall[repr(eps)] = elapsed
        for j, t_obs in enumerate(config.obs_times):
            rows.append(ConvergenceRow(eps, n, float(t_obs), float(l1[j]), float(se1[j]), float(floor[j]),
                                       float(linf[j]), float(seinf[j]), config.replicas,
                                       config.solver_paths, wall_time=elapsed))

    for t_obs in config.obs_times:
        sel = [r for r in rows if r.t_obs == float(t_obs)]
        slope = rate_slope([r.eps for r in sel], [r.distance_L1 for r in sel], config.alpha)
        for r in sel:
            r.rate_slope = slope

    text = _csv_text(ConvergenceRow.CSV_FIELDS, [r.csv_values() for r in rows])
    (out / "convergence.csv").write_text(text)
    files["convergence.csv"] = _sha(text)
    body = text.splitlines()[1:]
    manifest = {
        "config": config.echo(),
        "config_sha256": config.digest(),
        "master_seed": config.seed,
        "seed_scheme": "Philox keyed by SeedSequence(master_seed, spawn_key=(tag, eps_index, replica)); "
                       f"tags sim={SIM}, solver={SOLVE}, bootstrap={BOOT}",
        "versions": versions(),
        "override_bg": config.override_bg,
        "histogram": {"x_bins": spec.x_bins,
                      "axes": "all" if spec.axes is None else [a + 1 for a in spec.axes],
                      "v_bins": spec.v_bins, "v_max": spec.v_max},
        "distance_surrogate": SURROGATE_NOTE,
        "rows": [{"eps": r.eps, "N": r.N, "t_obs": r.t_obs, "status": r.status, "sha256": _sha(line)}
                 for r, line in zip(rows, body)],
        "files": files,
        "dynamics": diagnostics,
        "failed": failed,
        "status": "partial" if failed else "complete",
        "wall_time_s": {"per_eps": wall, "total": time.perf_counter() - started},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return StudyResult(rows, manifest, out, failed)


@dataclass(frozen=True)
class AuditGrid:
    K: tuple = tuple(range(6, 15))
    alpha: tuple = (0.1, 0.25, 0.4)
    C: tuple = (1.0,)
    t: tuple = (1.0,)
    finite_time_K: tuple = tuple(range(8, 15))
    log_eps: tuple = (-25.0, -50.0, -100.0, -200.0, -400.0, -1000.0)
    c_beta: float = 0.05

    def __post_init__(self):
        if not (self.K and self.alpha and self.C and self.t):
            raise ConfigError("audit grid is empty")


AUDIT_FIELDS = ("K", "alpha", "C", "t", "feasible", "lhs_log", "rhs_log", "holds",
                "margin_log", "max_feasible_t", "scaling_ok", "failing_k")


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(v).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def run_pruning_audit(grid: AuditGrid = AuditGrid(), out_dir=None):
    """Evaluate the remainder bound over ``grid``; returns (reports, finite_time, k_table).

    With ``out_dir`` writes audit.csv, audit_finite_time.csv and choose_k.csv.
    """
    reports = [remainder_chain(PruningParams(K, a, t, C))
               for K in grid.K for a in grid.alpha for C in grid.C for t in grid.t]
    finite = [finite_time_chain(K, C, t) for K in grid.finite_time_K for C in grid.C for t in grid.t]
    k_table = []
    for le in grid.log_eps:
        for a in grid.alpha:
            try:
                ch = choose_K(c_beta=grid.c_beta, alpha=a, log_eps=le)
                k_table.append((le, a, grid.c_beta, ch.K, ch.log_rate_bound, ""))
            except ValueError as err:
                k_table.append((le, a, grid.c_beta, None, None, str(err)))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

        def row(r):
            return [_fmt(v) for v in (r.K, r.alpha, r.C, r.t, r.feasible, r.lhs_log, r.rhs_log, r.holds,
                                      r.margin, r.max_feasible_t, r.scaling_ok, r.failing_k)]

        (out / "audit.csv").write_text(_csv_text(AUDIT_FIELDS, [row(r) for r in reports]))
        ft_fields = ("K", "C", "t", "covered_time", "lhs_log", "rhs_log", "holds", "margin_log", "failing_k")
        (out / "audit_finite_time.csv").write_text(_csv_text(ft_fields, [
            [_fmt(v) for v in (r.K, r.C, r.t, r.max_feasible_t, r.lhs_log, r.rhs_log, r.holds, r.margin,
                               r.failing_k)] for r in finite]))
        (out / "choose_k.csv").write_text(_csv_text(
            ("log_eps", "alpha", "c_beta", "K", "log_rate_bound", "error"),
            [[_fmt(v) for v in row] for row in k_table]))
    return reports, finite, k_table
