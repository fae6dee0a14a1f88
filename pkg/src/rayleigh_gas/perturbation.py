"""Spatial perturbations rho of the tagged particle's initial position law."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class SpacePerturbation:
    """A nonnegative continuous function on the torus with a known upper bound.

    ``mean`` is the integral of rho over the unit torus; samplers draw positions
    from ``rho / mean``.
    """

    func: Callable[[np.ndarray], np.ndarray]
    bound: float
    mean: float = 1.0
    lower: float = 0.0
    name: str = "custom"
    amplitude: float = 0.0

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @classmethod
    def constant(cls) -> "SpacePerturbation":
        return cls(func=_constant_one, bound=1.0, mean=1.0, lower=1.0, name="constant")

    @classmethod
    def cosine(cls, amplitude: float) -> "SpacePerturbation":
        """rho(x) = 1 + a cos(2 pi x^1) with |a| < 1."""
        if not abs(amplitude) < 1.0:
            raise ValueError("cosine amplitude must satisfy |a| < 1")
        a = float(amplitude)
        return cls(
            func=_Cosine(a),
            bound=1.0 + abs(a),
            mean=1.0,
            lower=1.0 - abs(a),
            name="cos",
            amplitude=a,
        )

    @classmethod
    def from_name(cls, name: str, amplitude: float = 0.5) -> "SpacePerturbation":
        key = name.strip().lower()
        if key in ("constant", "const", "1", "uniform"):
            return cls.constant()
        if key in ("cos", "cosine"):
            return cls.cosine(amplitude)
        raise ValueError(f"unknown perturbation {name!r} (expected 'constant' or 'cos')")

    def describe(self) -> str:
        if self.name == "cos":
            return f"1 + {self.amplitude:g} cos(2 pi x1)"
        return self.name

    def cell_mass(self, lo, hi, d: int) -> float:
        """Integral of rho/mean over the box prod [lo_k, hi_k) (closed form for built-ins)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        vol = float(np.prod(hi - lo))
        if self.name == "constant":
            return vol
        if self.name == "cos":
            other = float(np.prod(hi[1:] - lo[1:])) if d > 1 else 1.0
            cos_part = (math.sin(2 * math.pi * hi[0]) - math.sin(2 * math.pi * lo[0])) / (2 * math.pi)
            return vol + self.amplitude * other * cos_part
        raise NotImplementedError("cell_mass is only available in closed form for built-ins")

    def sample(self, n: int, d: int, rng: np.random.Generator, max_rounds: int = 10_000):
        """Exact rejection sampling of n points from rho/mean."""
        out = np.empty((n, d))
        filled = 0
        for _ in range(max_rounds):
            if filled == n:
                return out
            need = n - filled
            m = max(16, int(need * self.bound / max(self.mean, 1e-12) * 1.2) + 8)
            cand = rng.random((m, d))
            keep = cand[rng.random(m) * self.bound < self(cand)]
            take = min(need, len(keep))
            out[filled:filled + take] = keep[:take]
            filled += take
        if filled < n:
            raise RuntimeError("rejection sampling of rho did not terminate; is rho identically 0?")
        return out


class _Cosine:
    def __init__(self, a):
        self.a = a

    def __call__(self, x):
        return 1.0 + self.a * np.cos(2.0 * np.pi * x[..., 0])


def _constant_one(x):
    return np.ones(x.shape[:-1])
