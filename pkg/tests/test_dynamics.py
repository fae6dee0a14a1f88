import math

import numpy as np
import pytest
from scipy import stats

from rayleigh_gas.dynamics import (
    GasConfiguration,
    InitializationError,
    OverlapError,
    estimate_marginal,
    image_horizon,
    init_equilibrium,
    predict_collision,
    read_trace_csv,
    run,
)
from rayleigh_gas._multiprec import to_decimal
from rayleigh_gas.geometry import ModelParams, PhasePoint, collide, torus_displacement
from rayleigh_gas.histogram import HistogramSpec
from rayleigh_gas.perturbation import SpacePerturbation

CONST = SpacePerturbation.constant()
COS = SpacePerturbation.cosine(0.5)


def _gas(x, v, eps, **kw):
    x, v = np.asarray(x, float), np.asarray(v, float)
    params = ModelParams(x.shape[1], eps, len(x), override_bg=True, **kw)
    return GasConfiguration(params, x, v)


class TestPredictCollision:
    def test_one_dimensional_gap(self):
        zi, zj = PhasePoint([0.8, 0.5], [-1.0, 0.0]), PhasePoint([0.5, 0.5], [0.0, 0.0])
        assert predict_collision(zi, zj, 0.1) == pytest.approx(0.2, abs=1e-15)

    def test_separating_pair_has_no_event(self):
        zi, zj = PhasePoint([0.8, 0.5], [1.0, 0.3]), PhasePoint([0.5, 0.5], [0.0, 0.0])
        assert predict_collision(zi, zj, 0.1) is None

    def test_horizon_is_at_least_a_quarter_unit_of_relative_travel(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            zi, zj = PhasePoint(rng.random(2), rng.normal(size=2)), PhasePoint(rng.random(2), rng.normal(size=2))
            if np.linalg.norm(torus_displacement(zi.x, zj.x)) <= 0.25:
                continue
            speed = np.linalg.norm(zi.v - zj.v)
            assert image_horizon(zi, zj, 0.25) >= 0.25 / speed * (1 - 1e-12)

    def test_against_time_stepping(self):
        rng = np.random.default_rng(1)
        eps, dt = 0.05, 1e-6
        steps = np.arange(0, 400_001) * dt
        checked = 0
        while checked < 15:
            zi, zj = PhasePoint(rng.random(2), rng.normal(size=2)), PhasePoint(rng.random(2), rng.normal(size=2))
            dx0 = torus_displacement(zj.x, zi.x)
            if np.linalg.norm(dx0) <= eps:
                continue
            tau = predict_collision(zi, zj, eps)
            dv = zi.v - zj.v
            traj = dx0[None, :] + steps[:, None] * dv[None, :]
            traj -= np.floor(traj + 0.5)
            inside = np.flatnonzero(np.linalg.norm(traj, axis=1) <= eps)
            horizon = image_horizon(zi, zj, eps)
            if tau is None:
                # no contact before the horizon
                assert inside.size == 0 or steps[inside[0]] >= horizon - 2e-6
                continue
            assert inside.size, "stepping never reached contact"
            assert abs(steps[inside[0]] - tau) <= 2e-6
            checked += 1


def _stepping_oracle(x, v, eps, t_final, dt=1e-5):
    """Fixed-step integration; contacts inside a step are located by bisection."""
    x, v = x.copy(), v.copy()
    n = len(x)
    iu, ju = np.triu_indices(n, 1)
    t = 0.0

    def gaps(s):
        dx = (x[iu] + s * v[iu]) - (x[ju] + s * v[ju])
        dx -= np.floor(dx + 0.5)
        return np.linalg.norm(dx, axis=1) - eps

    while t < t_final:
        h = min(dt, t_final - t)
        g = gaps(h)
        hit = np.flatnonzero(g < 0)
        if hit.size == 0:
            x += h * v
            t += h
            continue
        best, first = h, None
        for k in hit:
            lo, hi = 0.0, h
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                dx = (x[iu[k]] + mid * v[iu[k]]) - (x[ju[k]] + mid * v[ju[k]])
                dx -= np.floor(dx + 0.5)
                if np.linalg.norm(dx) > eps:
                    lo = mid
                else:
                    hi = mid
            if lo < best:
                best, first = lo, k
        x += best * v
        t += best
        i, j = iu[first], ju[first]
        zi, zj = PhasePoint(x[i], v[i]), PhasePoint(x[j], v[j])
        dx = torus_displacement(zj.x, zi.x)
        # bisection lands within roundoff of contact; rescale to exact contact for collide
        zi = PhasePoint(zj.x + dx * (eps / np.linalg.norm(dx)), v[i])
        v[i], v[j] = collide(zi, zj, eps)
    return x - np.floor(x), v


class TestRun:
    def test_single_particle_free_flight(self):
        gas = _gas([[0.3, 0.9]], [[0.7, -2.3]], 0.1)
        rec = run(gas, 3.0, [0.0, 1.5, 3.0])
        expected = (np.array([0.3, 0.9]) + np.array([0.0, 1.5, 3.0])[:, None] * [0.7, -2.3]) % 1.0
        np.testing.assert_allclose(rec.x, expected, atol=1e-14)
        assert rec.total_collisions == 0

    def test_head_on_pair_and_wraparound(self):
        gas = _gas([[0.3, 0.5], [0.6, 0.5]], [[1.0, 0.0], [-1.0, 0.0]], 0.1)
        rec = run(gas, 0.6, [0.05, 0.2, 0.6])
        # contact at t = 0.1, velocities exchange; the pair meets again through
        # the boundary at t = 0.5 (gap 0.8, closing speed 2)
        np.testing.assert_allclose(rec.x[:, 0], [0.35, 0.3, 0.1], atol=1e-12)
        np.testing.assert_allclose(rec.v[:, 0], [1.0, -1.0, 1.0], atol=1e-12)
        assert rec.n_collisions.tolist() == [0, 1, 2]

    def test_matches_time_stepping_oracle(self):
        rng = np.random.default_rng(7)
        params = ModelParams.boltzmann_grad(1 / 20)
        gas = init_equilibrium(params, CONST, rng)
        x0, v0 = gas.x.copy(), gas.v.copy()
        rec = run(gas, 1.0)
        assert rec.total_collisions > 5
        xo, vo = _stepping_oracle(x0, v0, params.eps, 1.0)
        err = np.abs(torus_displacement(xo[0], gas.x[0]))
        assert np.max(err) <= 1e-3

    def test_conservation_and_no_overlap(self):
        rng = np.random.default_rng(2)
        gas = init_equilibrium(ModelParams.boltzmann_grad(1 / 200), CONST, rng)
        e0 = gas.energy()
        rec = run(gas, 5.0, np.linspace(0, 5, 11))
        assert rec.total_collisions > 1000
        assert rec.max_momentum_error <= 1e-12 and rec.max_energy_error <= 1e-12
        assert abs(gas.energy() - e0) / e0 <= 1e-9 and rec.energy_drift <= 1e-9
        assert rec.min_distance_ratio >= 1 - 1e-9
        assert gas.min_distance_ratio() >= 1 - 1e-9

    def test_double_and_extended_engines_agree(self):
        rng = np.random.default_rng(4)
        gas = init_equilibrium(ModelParams.boltzmann_grad(1 / 30), COS, rng)
        ext = gas.copy().to_extended()
        a = run(gas, 0.3, [0.3])
        b = run(ext, 0.3, [0.3], precision="extended")
        assert a.total_collisions == b.total_collisions
        np.testing.assert_allclose(a.x, b.x, atol=1e-9)

    def test_decimal_engine_agrees_and_conserves(self):
        rng = np.random.default_rng(4)
        gas = init_equilibrium(ModelParams.boltzmann_grad(1 / 30), COS, rng)
        dec = gas.copy().to_decimal()
        a = run(gas, 0.3, [0.1, 0.3])
        b = run(dec, 0.3, [0.1, 0.3], precision="decimal")
        assert a.total_collisions == b.total_collisions > 0
        np.testing.assert_allclose(a.x, b.x, atol=1e-9)
        assert b.max_energy_error <= 1e-30 and b.min_distance_ratio >= 1 - 1e-9

    def test_decimal_conversion_is_exact(self):
        x = np.array([[0.1, 1 / 3]])
        back = np.asarray(to_decimal(x), dtype=float)
        assert np.array_equal(back, x)
        assert to_decimal(np.longdouble(1) / 3).item() * 3 != 1  # binary value, not 1/3
        gas = init_equilibrium(ModelParams.boltzmann_grad(1 / 16), COS, np.random.default_rng(1)).to_decimal()
        with pytest.raises(ValueError):
            gas.to_extended()
        with pytest.raises(ValueError):
            run(gas, 0.1, precision="double")

    def test_reversibility_in_decimal_precision(self):
        # long double is not enough here: roundoff is amplified by up to ~1e22
        rng = np.random.default_rng(5)
        gas = init_equilibrium(ModelParams.boltzmann_grad(1 / 50), COS, rng).to_decimal()
        x0, v0 = gas.x.copy(), gas.v.copy()
        run(gas, 1.0)
        gas.flip_velocities()
        gas.time = 0.0
        run(gas, 1.0)
        dx = np.asarray(gas.x - x0, dtype=float)
        assert np.max(np.abs(dx - np.round(dx))) <= 1e-6
        assert np.max(np.abs(np.asarray(gas.v + v0, dtype=float))) <= 1e-6

    def test_overlap_is_a_hard_failure(self):
        gas = _gas([[0.5, 0.5], [0.55, 0.5]], [[0.0, 0.0], [0.0, 1.0]], 0.1)
        with pytest.raises(OverlapError):
            run(gas, 1.0)

    def test_argument_validation(self):
        gas = _gas([[0.3, 0.9]], [[0.7, -2.3]], 0.1)
        with pytest.raises(ValueError):
            run(gas, 1.0, [0.5, 0.2])
        with pytest.raises(ValueError):
            run(gas, 1.0, [2.0])
        with pytest.raises(ValueError):
            run(gas, 1.0, precision="quad")
        run(gas, 1.0)
        with pytest.raises(ValueError):
            run(gas, 0.5)

    def test_collision_rate_is_stationary(self):
        params = ModelParams.boltzmann_grad(1 / 200)
        first = second = 0
        for seed in range(200):
            gas = init_equilibrium(params, CONST, np.random.default_rng(100 + seed))
            rec = run(gas, 2.0, [1.0, 2.0], check_all_pairs=False)
            first += rec.n_collisions[0]
            second += rec.n_collisions[1] - rec.n_collisions[0]
        assert abs(second - first) / first <= 0.10


class TestInit:
    def test_pair_distance_law(self):
        params = ModelParams(2, 0.1, 2, override_bg=True)
        rng = np.random.default_rng(11)
        n = 100_000
        hits = 0
        for _ in range(n):
            gas = init_equilibrium(params, CONST, rng)
            hits += np.linalg.norm(torus_displacement(gas.x[0], gas.x[1])) <= 0.12
        p = math.pi * (0.12**2 - 0.1**2) / (1 - math.pi * 0.1**2)
        assert abs(hits / n - p) <= 4 * math.sqrt(p * (1 - p) / n)

    def test_tagged_position_follows_rho(self):
        params = ModelParams.boltzmann_grad(1 / 16)
        rng = np.random.default_rng(12)
        x1 = np.array([init_equilibrium(params, COS, rng).x[0, 0] for _ in range(20_000)])
        edges = np.linspace(0, 1, 11)
        counts, _ = np.histogram(x1, edges)
        lo, hi = edges[:-1], edges[1:]
        expected = len(x1) * ((hi - lo) + 0.5 * (np.sin(2 * np.pi * hi) - np.sin(2 * np.pi * lo)) / (2 * np.pi))
        assert stats.chisquare(counts, expected).pvalue > 0.01

    def test_initial_state_is_admissible(self):
        gas = init_equilibrium(ModelParams.boltzmann_grad(1 / 512), COS, np.random.default_rng(0))
        assert gas.min_distance_ratio() > 1.0
        assert np.all((gas.x >= 0) & (gas.x < 1))

    def test_dense_packing_is_refused(self):
        with pytest.raises(InitializationError):
            init_equilibrium(ModelParams(2, 0.2, 5, override_bg=True), CONST, np.random.default_rng(0))

    def test_restart_budget(self):
        params = ModelParams(2, 0.12, 6, override_bg=True)
        with pytest.raises(InitializationError):
            init_equilibrium(params, CONST, np.random.default_rng(0), max_restarts=0)


class TestMarginal:
    def test_single_replica_is_an_indicator(self):
        gas = _gas([[0.3, 0.9]], [[0.0, 0.0]], 0.1)
        rec = run(gas, 1.0, [1.0])
        h = estimate_marginal([rec], HistogramSpec(4))
        assert not h.has_error_bars
        assert h.mass[0].tolist() == [0] * 7 + [1] + [0] * 8
        assert np.all(np.isnan(h.stderr))

    def test_mismatched_times_are_rejected(self):
        a = run(_gas([[0.3, 0.9]], [[0.0, 0.0]], 0.1), 1.0, [1.0])
        b = run(_gas([[0.3, 0.9]], [[0.0, 0.0]], 0.1), 1.0, [0.5])
        with pytest.raises(ValueError):
            estimate_marginal([a, b], HistogramSpec(4))

    def test_initial_marginal_matches_rho(self):
        params = ModelParams.boltzmann_grad(1 / 16)
        rng = np.random.default_rng(3)
        recs = [run(init_equilibrium(params, COS, rng), 0.0, [0.0]) for _ in range(5000)]
        spec = HistogramSpec(8, (0,))
        h = estimate_marginal(recs, spec)
        lo, hi = spec.spatial_bounds(2)
        expected = np.array([COS.cell_mass(lo[c], hi[c], 2) for c in range(8)])
        assert stats.chisquare(h.mass[0] * 5000, expected * 5000).pvalue > 0.01

    def test_trace_csv_round_trip(self):
        rng = np.random.default_rng(9)
        rec = run(init_equilibrium(ModelParams.boltzmann_grad(1 / 32), COS, rng), 1.0, np.linspace(0, 1, 5))
        text = rec.to_csv()
        assert text.splitlines()[0] == "t,x1,x2,v1,v2,n_coll"
        back = read_trace_csv(text)
        np.testing.assert_array_equal(back["x"], rec.x)
        np.testing.assert_array_equal(back["n_coll"], rec.n_collisions)
