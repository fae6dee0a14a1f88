"""Command line front end: ``rayleigh-gas {simulate,solve,converge,audit,selftest}``.

Exit codes: 0 success, 1 invariant failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dynamics import InitializationError, SimulationError, init_equilibrium, run
from .harness import (SIM, AuditGrid, ConfigError, ExperimentConfig, run_convergence_study,
                      run_pruning_audit, seed_stream, solver_histogram)

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="flat key = value config file")
    p.add_argument("--seed", type=int, metavar="U64", help="master seed")
    p.add_argument("--out", metavar="DIR", help="output directory")


def _experiment(p):
    p.add_argument("--eps", metavar="LIST", help="comma separated diameters, e.g. 1/64,1/128")
    p.add_argument("--t", type=float, metavar="FLOAT", help="final time (default observation time)")
    p.add_argument("--bins", type=int, metavar="INT", help="bins per histogram axis")
    p.add_argument("--override-bg", action="store_true", default=None,
                   help="decouple N from eps (then set n_particles in the config)")
    p.add_argument("--figures", action="store_true", default=None, help="also write PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rayleigh-gas", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="one hard-sphere run, tagged-particle trace CSV")
    _common(p)
    _experiment(p)

    p = sub.add_parser("solve", help="kinetic solver histogram CSV")
    _common(p)
    _experiment(p)
    p.add_argument("--paths", type=int, metavar="INT", help="kinetic solver paths")

    p = sub.add_parser("converge", help="hard-sphere versus kinetic convergence study")
    _common(p)
    _experiment(p)
    p.add_argument("--replicas", type=int, metavar="INT", help="hard-sphere replicas per eps")
    p.add_argument("--paths", type=int, metavar="INT", help="kinetic solver paths (default 10 x replicas)")
    p.add_argument("--alpha", type=float, metavar="FLOAT", help="exponent of the descriptive rate fit")

    p = sub.add_parser("audit", help="pruning remainder-bound grid")
    p.add_argument("--out", metavar="DIR", default="audit", help="output directory (default audit)")
    p.add_argument("--t", metavar="LIST", help="time horizons (default 1)")
    p.add_argument("--alpha", metavar="LIST", help="alpha values (default 0.1,0.25,0.4)")
    p.add_argument("--K", metavar="LIST", help="cut counts (default 6..14)")
    p.add_argument("--C", metavar="LIST", help="bound constants (default 1)")

    p = sub.add_parser("selftest", help="fast invariant suite")
    p.add_argument("--seed", type=int, default=0, metavar="U64", help="master seed (default 0)")
    return parser


def _load(args) -> ExperimentConfig:
    overrides = {
        "seed": args.seed, "out": args.out, "eps": args.eps, "t_final": args.t, "bins": args.bins,
        "override_bg": args.override_bg, "figures": args.figures,
        "replicas": getattr(args, "replicas", None), "paths": getattr(args, "paths", None),
        "alpha": getattr(args, "alpha", None),
    }
    if args.t is not None:
        # a new final time replaces the observation times unless the file sets them
        file_values = ExperimentConfig.read_file(args.config) if args.config else {}
        if "obs_times" not in file_values:
            overrides["obs_times"] = (args.t,)
    return ExperimentConfig.load(args.config, **overrides)


def _simulate(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    params = cfg.model_params(0)
    gas = init_equilibrium(params, cfg.perturbation(), seed_stream(cfg.seed, SIM, 0, 0))
    rec = run(gas, cfg.t_final, np.linspace(0.0, cfg.t_final, cfg.trace_points))
    (out / "trace.csv").write_text(rec.to_csv())
    summary = {
        "eps": params.eps, "N": params.n_particles, "d": params.d, "t_final": cfg.t_final, "seed": cfg.seed,
        "override_bg": params.override_bg, "total_collisions": rec.total_collisions,
        "grazing_skipped": rec.grazing_skipped, "max_momentum_error": rec.max_momentum_error,
        "max_energy_error": rec.max_energy_error, "energy_drift": rec.energy_drift,
        "min_distance_ratio": rec.min_distance_ratio,
    }
    (out / "simulate.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if cfg.figures:
        from .plots import trace_figure

        trace_figure(out / "trace.png", rec)
    print(f"{rec.total_collisions} collisions; trace written to {out / 'trace.csv'}")
    return EXIT_OK


def _solve(cfg: ExperimentConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    est = solver_histogram(cfg)
    (out / "solver.csv").write_text(est.to_csv())
    if cfg.figures:
        from .plots import histogram_figure

        histogram_figure(out / "solver.png", {"kinetic": est})
    print(f"{cfg.solver_paths} paths; histogram written to {out / 'solver.csv'}")
    return EXIT_OK


def _converge(cfg: ExperimentConfig) -> int:
    result = run_convergence_study(cfg, log=lambda m: print(m, file=sys.stderr))
    if cfg.figures:
        from .plots import convergence_figure

        convergence_figure(result.out_dir / "convergence.png", result.rows)
    for r in result.rows:
        print(f"eps={r.eps:.6g} N={r.N} t={r.t_obs:g} L1={r.distance_L1:.5f}+-{r.stderr_L1:.5f} "
              f"Linf={r.distance_Linf:.4f}+-{r.stderr_Linf:.4f} [{r.status}]")
    if result.failed:
        print(f"{len(result.failed)} eps value(s) aborted; see FAILED_eps*.txt", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _floats(text, default, conv=float):
    if text is None:
        return default
    from .harness import _parse_list

    return tuple(conv(v) for v in _parse_list(text))


def _audit(args) -> int:
    defaults = AuditGrid()
    grid = AuditGrid(K=_floats(args.K, defaults.K, int), alpha=_floats(args.alpha, defaults.alpha),
                     C=_floats(args.C, defaults.C), t=_floats(args.t, defaults.t))
    for a in grid.alpha:
        if not 0 < a < 0.5:
            raise ConfigError("alpha must lie in (0, 1/2)")
    if any(K < 1 for K in grid.K) or any(c <= 0 for c in grid.C) or any(t <= 0 for t in grid.t):
        raise ConfigError("need K >= 1, C > 0 and t > 0")
    reports, finite, _ = run_pruning_audit(grid, args.out)
    feasible = [r for r in reports if r.feasible]
    broken = [r for r in feasible if not r.holds]
    print(f"{len(reports)} tuples, {len(feasible)} feasible, {len(broken)} violating; "
          f"finite-time variant holds for {sum(r.holds for r in finite)}/{len(finite)}")
    return EXIT_INVARIANT if broken else EXIT_OK


def _selftest(args) -> int:
    from .selftest import run_selftest

    results = run_selftest(args.seed)
    for c in results:
        print(f"{'PASS' if c.ok else 'FAIL'}  {c.name}: {c.detail}")
    return EXIT_OK if all(c.ok for c in results) else EXIT_INVARIANT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "audit":
            return _audit(args)
        if args.command == "selftest":
            return _selftest(args)
        cfg = _load(args)
        return {"simulate": _simulate, "solve": _solve, "converge": _converge}[args.command](cfg)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, InitializationError) as err:
        print(f"invariant failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
