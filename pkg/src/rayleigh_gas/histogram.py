"""Binned estimates of the tagged particle's one-particle law.

Both the hard-sphere marginal and the kinetic solver produce a
``MarginalHistogram``: probability mass per cell, per observation time, with a
standard error from the spread of independent samples. Cells are a regular
grid over the selected spatial axes, optionally crossed with coarse bins of one
velocity component (the two outer velocity bins are unbounded).

CSV schema, one row per (time, cell)::

    t,cell,ix1,...,ixk[,iv],mass,stderr,n

``ixj`` is the bin index along the j-th binned spatial axis, ``iv`` the velocity
bin and ``n`` the number of samples behind the row.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class HistogramSpec:
    x_bins: int = 8
    axes: Optional[tuple] = None
    v_bins: int = 0
    v_axis: int = 0
    v_max: float = 2.0

    def __post_init__(self):
        if self.x_bins < 1:
            raise ValueError("x_bins must be positive")
        if self.v_bins < 0 or self.v_bins == 1:
            raise ValueError("v_bins must be 0 (off) or at least 2")

    def binned_axes(self, d: int) -> tuple:
        return tuple(range(d)) if self.axes is None else tuple(self.axes)

    def shape(self, d: int) -> tuple:
        s = (self.x_bins,) * len(self.binned_axes(d))
        return s + ((self.v_bins,) if self.v_bins else ())

    def n_cells(self, d: int) -> int:
        return int(np.prod(self.shape(d)))

    def v_edges(self) -> np.ndarray:
        e = np.linspace(-self.v_max, self.v_max, self.v_bins + 1)
        e[0], e[-1] = -np.inf, np.inf
        return e

    def cell_index(self, x, v=None) -> np.ndarray:
        """Flat cell index for positions ``x`` (..., d) and velocities ``v``."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        idx = []
        for a in self.binned_axes(d):
            i = np.floor(x[..., a] * self.x_bins).astype(np.int64)
            idx.append(np.clip(i, 0, self.x_bins - 1))
        if self.v_bins:
            if v is None:
                raise ValueError("velocity bins requested but no velocities given")
            vc = np.asarray(v, dtype=float)[..., self.v_axis]
            iv = np.searchsorted(self.v_edges(), vc, side="right") - 1
            idx.append(np.clip(iv, 0, self.v_bins - 1))
        return np.ravel_multi_index(tuple(idx), self.shape(d))

    def multi_index(self, d: int) -> np.ndarray:
        """(n_cells, n_dims) array of per-dimension bin indices in flat order."""
        return np.array(np.unravel_index(np.arange(self.n_cells(d)), self.shape(d))).T

    def spatial_volume(self, d: int) -> float:
        return (1.0 / self.x_bins) ** len(self.binned_axes(d))

    def spatial_bounds(self, d: int):
        """Lower/upper corners of every cell's spatial box in all d coordinates."""
        mi = self.multi_index(d)
        lo = np.zeros((len(mi), d))
        hi = np.ones((len(mi), d))
        for col, a in enumerate(self.binned_axes(d)):
            lo[:, a] = mi[:, col] / self.x_bins
            hi[:, a] = (mi[:, col] + 1) / self.x_bins
        return lo, hi

    def header(self, d: int) -> list:
        cols = ["t", "cell"] + [f"ix{a + 1}" for a in self.binned_axes(d)]
        if self.v_bins:
            cols.append("iv")
        return cols + ["mass", "stderr", "n"]


@dataclass
class MarginalHistogram:
    """Probability mass per cell; ``mass`` and ``stderr`` are (n_times, n_cells)."""

    times: np.ndarray
    mass: np.ndarray
    stderr: np.ndarray
    n_samples: int
    spec: HistogramSpec
    d: int
    cells: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def has_error_bars(self) -> bool:
        return self.n_samples >= 2

    @classmethod
    def from_cells(cls, times, cells, spec: HistogramSpec, d: int) -> "MarginalHistogram":
        """Build from per-sample cell indices ``cells`` of shape (n_times, n_samples)."""
        cells = np.asarray(cells, dtype=np.int64)
        n_t, n = cells.shape
        n_cells = spec.n_cells(d)
        mass = np.zeros((n_t, n_cells))
        for k in range(n_t):
            mass[k] = np.bincount(cells[k], minlength=n_cells) / n
        if n >= 2:
            # sample standard deviation of the cell indicator over sqrt(n)
            stderr = np.sqrt(mass * (1.0 - mass) / (n - 1))
        else:
            stderr = np.full_like(mass, np.nan)
        return cls(np.asarray(times, dtype=float), mass, stderr, n, spec, d, cells)

    @classmethod
    def from_samples(cls, times, x, v, spec: HistogramSpec) -> "MarginalHistogram":
        """``x`` and ``v`` are (n_times, n_samples, d)."""
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        return cls.from_cells(times, spec.cell_index(x, v), spec, d)

    def density(self) -> np.ndarray:
        """Mass divided by the spatial cell volume."""
        return self.mass / self.spec.spatial_volume(self.d)

    def resample(self, rng: np.random.Generator) -> "MarginalHistogram":
        """Bootstrap replica: resample the underlying samples with replacement."""
        if self.cells is None:
            raise ValueError("histogram was not built from samples")
        n = self.cells.shape[1]
        pick = rng.integers(0, n, size=n)
        return MarginalHistogram.from_cells(self.times, self.cells[:, pick], self.spec, self.d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.spec.header(self.d))
        mi = self.spec.multi_index(self.d)
        for k, t in enumerate(self.times):
            for c in range(self.mass.shape[1]):
                w.writerow([repr(float(t)), c, *[int(i) for i in mi[c]],
                            repr(float(self.mass[k, c])), repr(float(self.stderr[k, c])),
                            self.n_samples])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, spec: HistogramSpec, d: int) -> "MarginalHistogram":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != spec.header(d):
            raise ValueError(f"header {rows[0]} does not match the histogram spec")
        body = rows[1:]
        times = sorted({float(r[0]) for r in body})
        n_cells = spec.n_cells(d)
        mass = np.zeros((len(times), n_cells))
        stderr = np.zeros_like(mass)
        pos = {t: k for k, t in enumerate(times)}
        n = 0
        for r in body:
            k, c = pos[float(r[0])], int(r[1])
            mass[k, c] = float(r[-3])
            stderr[k, c] = float(r[-2])
            n = int(r[-1])
        return cls(np.array(times), mass, stderr, n, spec, d)


def binned_distances(a: MarginalHistogram, b: MarginalHistogram):
    """Per-time binned L1 (sum of |mass difference|) and L-inf (max density gap)."""
    diff = np.abs(a.mass - b.mass)
    l1 = diff.sum(axis=1)
    linf = diff.max(axis=1) / a.spec.spatial_volume(a.d)
    return l1, linf


def chi_square_uniform(cells: Sequence[int], n_cells: int):
    """Pearson chi-square test of cell counts against equal probabilities."""
    from scipy import stats

    counts = np.bincount(np.asarray(cells, dtype=np.int64), minlength=n_cells)
    return stats.chisquare(counts)
