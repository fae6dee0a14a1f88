import math

import numpy as np
import pytest
from scipy import integrate

from rayleigh_gas.geometry import (
    CollisionError,
    ModelParams,
    PhasePoint,
    collide,
    kinetic_energy,
    maxwellian_density,
    maxwellian_sample,
    reduce_torus,
    torus_displacement,
    torus_distance,
)


@pytest.mark.parametrize("a, b, expected", [
    ((0.1, 0.1), (0.1, 0.1), (0.0, 0.0)),
    ((0.9, 0.5), (0.1, 0.5), (0.2, 0.0)),
    ((0.25, 0.75), (0.5, 0.5), (0.25, -0.25)),
])
def test_displacement_examples(a, b, expected):
    np.testing.assert_allclose(torus_displacement(a, b), expected, atol=1e-15)


def test_displacement_range_and_antisymmetry():
    rng = np.random.default_rng(3)
    a, b = rng.random((1000, 3)), rng.random((1000, 3))
    d = torus_displacement(a, b)
    assert np.all((d >= -0.5) & (d < 0.5))
    np.testing.assert_allclose(d, -torus_displacement(b, a), atol=1e-15)
    assert np.all(torus_distance(a, b) <= math.sqrt(3) / 2)


def test_reduce_torus_never_returns_one():
    assert reduce_torus([-1e-17, 1.0, 2.25]).tolist() == [0.0, 0.0, 0.25]


def test_phase_point_reduces_position():
    z = PhasePoint([1.25, -0.25], [1.0, 2.0])
    np.testing.assert_allclose(z.x, [0.25, 0.75])
    assert z.d == 2


class TestModelParams:
    def test_boltzmann_grad_scaling(self):
        p = ModelParams.boltzmann_grad(1 / 200)
        assert p.n_particles == 200 and p.scaling_product == pytest.approx(1.0)
        assert ModelParams.boltzmann_grad(0.1, d=3).n_particles == 100

    @pytest.mark.parametrize("kwargs", [
        dict(d=4, eps=0.1, n_particles=10),
        dict(d=2, eps=0.5, n_particles=2),
        dict(d=2, eps=0.1, n_particles=0),
        dict(d=2, eps=0.1, n_particles=10, beta=0.0),
        dict(d=2, eps=0.1, n_particles=50),
    ])
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ModelParams(**kwargs)

    def test_override_decouples_n(self):
        p = ModelParams(d=2, eps=0.1, n_particles=50, override_bg=True)
        assert p.scaling_product == pytest.approx(5.0)


class TestCollide:
    eps = 0.01

    def test_head_on_exchange(self):
        zi = PhasePoint([0.5 + self.eps, 0.5], [-1.0, 0.0])
        zj = PhasePoint([0.5, 0.5], [1.0, 0.0])
        vi, vj = collide(zi, zj, self.eps)
        np.testing.assert_allclose(vi, [1.0, 0.0], atol=1e-14)
        np.testing.assert_allclose(vj, [-1.0, 0.0], atol=1e-14)

    def test_grazing_is_a_no_op(self):
        zi = PhasePoint([0.5, 0.5 + self.eps], [1.0, 0.0])
        zj = PhasePoint([0.5, 0.5], [-1.0, 0.0])
        vi, vj = collide(zi, zj, self.eps)
        assert vi.tolist() == [1.0, 0.0] and vj.tolist() == [-1.0, 0.0]

    def test_oblique_by_direct_substitution(self):
        n = np.array([1.0, 1.0]) / math.sqrt(2)
        zi = PhasePoint(np.array([0.5, 0.5]) + self.eps * n, [0.0, 0.0])
        zj = PhasePoint([0.5, 0.5], [1.0, 0.0])
        vi, vj = collide(zi, zj, self.eps)
        # (v_i - v_j).n = -1/sqrt2, so v_i' = n/sqrt2 = (1/2, 1/2)
        np.testing.assert_allclose(vi, [0.5, 0.5], atol=1e-9)
        np.testing.assert_allclose(vj, [0.5, -0.5], atol=1e-9)

    @pytest.mark.parametrize("sep, vi", [(1.5, [-1.0, 0.0]), (1.0, [1.0, 0.0])])
    def test_rejects_non_contact_and_outgoing(self, sep, vi):
        zi = PhasePoint([0.5 + sep * self.eps, 0.5], vi)
        zj = PhasePoint([0.5, 0.5], [0.0, 0.0])
        with pytest.raises(CollisionError):
            collide(zi, zj, self.eps)

    @pytest.mark.parametrize("d", [2, 3])
    def test_conservation_on_random_pairs(self, d):
        rng = np.random.default_rng(d)
        worst_p = worst_e = 0.0
        for _ in range(20_000):
            n = rng.normal(size=d)
            n /= np.linalg.norm(n)
            xj = rng.random(d)
            vi, vj = rng.normal(size=(2, d))
            if (vi - vj) @ n >= 0:
                vi, vj = vj, vi
            zi, zj = PhasePoint(xj + self.eps * n, vi), PhasePoint(xj, vj)
            try:
                wi, wj = collide(zi, zj, self.eps)
            except CollisionError:
                continue  # contact drift from reducing mod 1 near the boundary
            worst_p = max(worst_p, np.max(np.abs(wi + wj - vi - vj)))
            worst_e = max(worst_e, abs(wi @ wi + wj @ wj - vi @ vi - vj @ vj) / 2)
            # reversing the outgoing pair and colliding again recovers the incoming velocities
            ui, uj = collide(PhasePoint(zi.x, -wi), PhasePoint(zj.x, -wj), self.eps)
            assert np.max(np.abs(np.concatenate([-ui - vi, -uj - vj]))) <= 1e-12
        assert worst_p <= 1e-12 and worst_e <= 1e-12


class TestMaxwellian:
    def test_point_values(self):
        assert maxwellian_density(np.zeros(2), 2 * math.pi) == pytest.approx(1.0)
        assert maxwellian_density(np.zeros(3), 0.7) == pytest.approx((0.7 / (2 * math.pi)) ** 1.5)

    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0, 2 * math.pi])
    @pytest.mark.parametrize("d", [2, 3])
    def test_normalization(self, beta, d):
        area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
        radial = lambda r: area * r ** (d - 1) * maxwellian_density(np.array([r] + [0.0] * (d - 1)), beta)
        val, _ = integrate.quad(radial, 0, np.inf, epsabs=1e-13)
        assert abs(val - 1) <= 1e-8

    def test_sample_moments(self):
        rng = np.random.default_rng(0)
        n = 10**6
        v = maxwellian_sample(1.0, 2, rng, size=n)
        assert v.shape == (n, 2)
        assert np.all(np.abs(v.mean(axis=0)) <= 4 / math.sqrt(n))
        assert np.all(np.abs(v.var(axis=0) - 1) <= 4 * math.sqrt(2 / n))
        w = maxwellian_sample(2.0, 3, rng, size=n)
        sq = (w * w).sum(axis=1)
        assert abs(sq.mean() - 1.5) <= 4 * sq.std() / math.sqrt(n)
        assert maxwellian_sample(1e8, 2, rng, size=1000).var() < 1e-7
        assert maxwellian_sample(1.0, 3, rng).shape == (3,)


def test_kinetic_energy():
    assert kinetic_energy([]) == 0.0
    assert kinetic_energy([(1, 0), (0, 1)]) == 1.0
    v = np.random.default_rng(1).normal(size=(500, 3))
    naive = 0.0
    for row in v:
        for c in row:
            naive += c * c
    assert kinetic_energy(v) == pytest.approx(naive / 2, rel=1e-15, abs=0)
