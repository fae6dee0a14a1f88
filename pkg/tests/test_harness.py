import csv
import io
import json
import math

import numpy as np
import pytest

from rayleigh_gas import harness
from rayleigh_gas.dynamics import SimulationError
from rayleigh_gas.harness import (
    AuditGrid,
    ConfigError,
    ExperimentConfig,
    run_convergence_study,
    run_pruning_audit,
    seed_stream,
)
from rayleigh_gas.histogram import HistogramSpec, MarginalHistogram, binned_distances


def _rows(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


class TestSeedStream:
    def test_reproducible(self):
        a = seed_stream(42, 0, 3, 7).random(10_000)
        b = seed_stream(42, 0, 3, 7).random(10_000)
        assert np.array_equal(a, b)

    def test_neighbouring_streams_uncorrelated(self):
        a = seed_stream(42, 0).random(10_000)
        b = seed_stream(42, 1).random(10_000)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.05

    def test_master_seeds_give_distinct_streams(self):
        firsts = {seed_stream(s).integers(0, 2**63) for s in range(1000)}
        assert len(firsts) == 1000

    def test_negative_keys_rejected(self):
        with pytest.raises(ValueError):
            seed_stream(1, -1)


class TestConfig:
    def test_file_and_overrides(self, tmp_path):
        path = tmp_path / "study.cfg"
        path.write_text("# study\nd = 2\neps = 1/64, 1/128  # two sizes\nreplicas = 50\nrho = cos\n"
                        "amplitude = 0.3\nobs_times = 0, 0.25\nt_final = 0.25\naxes = all\n")
        cfg = ExperimentConfig.load(path, replicas=20, seed=5)
        assert cfg.eps == (1 / 64, 1 / 128)
        assert cfg.replicas == 20 and cfg.seed == 5
        assert cfg.obs_times == (0.0, 0.25) and cfg.axes is None
        assert cfg.solver_paths == 200
        assert [cfg.n_for(k) for k in range(2)] == [64, 128]
        assert cfg.perturbation().amplitude == 0.3

    def test_three_dimensional_particle_count(self):
        assert ExperimentConfig(d=3, eps=(0.1,)).n_for(0) == 100

    @pytest.mark.parametrize("text", [
        "eps = 0.6", "replicas = 1", "bogus = 3", "t_final = 1\nobs_times = 2", "eps = abc",
        "n_particles = 10", "d = 4", "override_bg = maybe", "eps = 1/0", "no equals sign",
        "eps = 0.1\nn_particles = 3", "axes = 3",
    ])
    def test_invalid_configs(self, tmp_path, text):
        path = tmp_path / "bad.cfg"
        path.write_text(text + "\n")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "absent.cfg")

    def test_override_requires_flag_and_is_honoured(self):
        cfg = ExperimentConfig.from_mapping({"eps": "0.1", "override_bg": "true", "n_particles": "3"})
        assert cfg.model_params(0).n_particles == 3 and cfg.model_params(0).override_bg

    def test_digest_ignores_output_location(self):
        a, b = ExperimentConfig(out="x"), ExperimentConfig(out="y")
        assert a.digest() == b.digest() != ExperimentConfig(seed=1).digest()


def test_rate_slope_is_descriptive():
    eps = np.array([1 / 64, 1 / 128, 1 / 256])
    x = np.abs(np.log(eps)) ** 0.75
    dist = np.exp(0.5 - 0.3 * x)
    assert harness.rate_slope(eps, dist, 0.25) == pytest.approx(-0.3)
    assert math.isnan(harness.rate_slope([0.1], [1.0], 0.25))


SMALL = dict(eps=(1 / 16, 1 / 32), replicas=300, bins=4, t_final=0.5, obs_times=(0.0, 0.5), bootstrap=200)


class TestConvergenceStudy:
    def test_equilibrium_distances_are_noise(self, tmp_path):
        cfg = ExperimentConfig(rho="constant", **SMALL)
        res = run_convergence_study(cfg, tmp_path)
        assert res.ok and len(res.rows) == 4
        for r in res.rows:
            assert r.distance_L1 >= 0 and r.distance_Linf >= 0
            assert r.distance_L1 <= r.noise_L1 + 4 * r.stderr_L1
            assert r.paths == 3000
            assert abs(r.N * r.eps - 1) <= 1 / r.N

    def test_outputs_and_manifest(self, tmp_path):
        cfg = ExperimentConfig(**SMALL)
        res = run_convergence_study(cfg, tmp_path)
        names = {p.name for p in tmp_path.iterdir()}
        assert {"convergence.csv", "solver.csv", "hardsphere_eps0.csv", "hardsphere_eps1.csv",
                "manifest.json"} <= names
        rows = _rows(tmp_path / "convergence.csv")
        assert list(rows[0]) == list(harness.ConvergenceRow.CSV_FIELDS)
        assert "wall_time" not in rows[0]
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["status"] == "complete" and man["master_seed"] == 0
        assert man["config_sha256"] == cfg.digest() and not man["override_bg"]
        assert len(man["rows"]) == 4 and "binned" in man["distance_surrogate"]
        assert set(man["versions"]) >= {"numpy", "scipy", "numba", "python"}
        # at t = 0 both sides sample the same initial law
        first = [r for r in res.rows if r.t_obs == 0.0]
        assert all(r.distance_L1 <= r.noise_L1 + 4 * r.stderr_L1 for r in first)
        # the histogram files reproduce the distances
        spec = cfg.histogram_spec()
        hs = MarginalHistogram.from_csv((tmp_path / "hardsphere_eps0.csv").read_text(), spec, 2)
        rb = MarginalHistogram.from_csv((tmp_path / "solver.csv").read_text(), spec, 2)
        l1, _ = binned_distances(hs, rb)
        assert l1[1] == pytest.approx(res.rows[1].distance_L1, abs=1e-12)

    def test_deterministic(self, tmp_path):
        cfg = ExperimentConfig(**{**SMALL, "replicas": 50})
        run_convergence_study(cfg, tmp_path / "a")
        run_convergence_study(cfg, tmp_path / "b")
        for name in ("convergence.csv", "solver.csv", "hardsphere_eps0.csv", "hardsphere_eps1.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_replica_failure_marks_partial_result(self, tmp_path, monkeypatch):
        real = harness.simulate_replicas

        def flaky(config, k):
            if k == 1:
                raise SimulationError("injected")
            return real(config, k)

        monkeypatch.setattr(harness, "simulate_replicas", flaky)
        res = run_convergence_study(ExperimentConfig(**{**SMALL, "replicas": 20}), tmp_path)
        assert not res.ok
        assert (tmp_path / "FAILED_eps1.txt").exists() and not (tmp_path / "FAILED_eps0.txt").exists()
        statuses = [r["status"] for r in _rows(tmp_path / "convergence.csv")]
        assert statuses == ["ok", "ok", "failed", "failed"]
        assert json.loads((tmp_path / "manifest.json").read_text())["status"] == "partial"

    def test_override_is_recorded(self, tmp_path):
        cfg = ExperimentConfig(eps=(0.05,), replicas=10, override_bg=True, n_particles=(5,), bins=2)
        res = run_convergence_study(cfg, tmp_path)
        assert res.rows[0].N == 5 and res.manifest["override_bg"] is True

    def test_doubling_solver_paths_is_within_errors(self):
        cfg = ExperimentConfig(eps=(1 / 32,), replicas=400, bins=8)
        hs = harness.estimate_marginal(harness.simulate_replicas(cfg, 0), cfg.histogram_spec())
        rb1 = harness.solver_histogram(cfg)
        rb2 = harness.solver_histogram(cfg.replace(paths=2 * cfg.solver_paths, seed=1))
        d1, d2 = np.abs(hs.mass - rb1.mass), np.abs(hs.mass - rb2.mass)
        se = np.sqrt(hs.stderr**2 + rb1.stderr**2)
        assert np.mean(np.abs(d1 - d2) < se) >= 0.9


class TestAudit:
    def test_default_grid(self, tmp_path):
        reports, finite, k_table = run_pruning_audit(AuditGrid(), tmp_path)
        assert len(reports) == 27
        feasible = [r for r in reports if r.feasible]
        assert feasible and all(r.holds for r in feasible)
        assert all(r.holds for r in finite)
        rows = _rows(tmp_path / "audit.csv")
        assert list(rows[0])[:8] == ["K", "alpha", "C", "t", "feasible", "lhs_log", "rhs_log", "holds"]
        assert (tmp_path / "choose_k.csv").exists() and (tmp_path / "audit_finite_time.csv").exists()
        assert any(row[3] == 3 for row in k_table if row[0] == -100.0)

    def test_long_horizon_is_infeasible(self, tmp_path):
        reports, _, _ = run_pruning_audit(AuditGrid(K=(6,), t=(100.0,)), tmp_path)
        assert all(not r.feasible for r in reports)
        for row in _rows(tmp_path / "audit.csv"):
            assert row["feasible"] == "false" and float(row["max_feasible_t"]) < 100

    def test_byte_identical(self, tmp_path):
        run_pruning_audit(AuditGrid(), tmp_path / "a")
        run_pruning_audit(AuditGrid(), tmp_path / "b")
        for name in ("audit.csv", "choose_k.csv", "audit_finite_time.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_empty_grid(self):
        with pytest.raises(ConfigError):
            AuditGrid(K=())


def test_histogram_csv_round_trip():
    spec = HistogramSpec(3, None, v_bins=2)
    rng = np.random.default_rng(0)
    h = MarginalHistogram.from_samples([0.0, 1.0], rng.random((2, 50, 2)), rng.normal(size=(2, 50, 2)), spec)
    assert h.to_csv().splitlines()[0] == "t,cell,ix1,ix2,iv,mass,stderr,n"
    back = MarginalHistogram.from_csv(h.to_csv(), spec, 2)
    np.testing.assert_array_equal(back.mass, h.mass)
    assert back.n_samples == 50
    assert np.all(h.mass.sum(axis=1) == pytest.approx(1.0))
