"""Brownian paths on dyadic grids and exact bridge interpolation."""

from __future__ import annotations

import math

import numpy as np

from .errors import InsufficientResolution


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(x: float) -> int:
    return 1 << max(0, math.ceil(math.log2(max(x, 1.0))))


class DyadicBrownianPath:
    """A ``d``-dimensional Brownian motion on ``{k 2^-r : 0 <= k 2^-r <= n}``.

    Built top-down: ``B_n`` first, then midpoints level by level, so that
    each midpoint deviation is an independent bridge variable.  ``n`` is a
    power of two.
    """

    def __init__(self, values: np.ndarray, n: int, resolution_levels: int = 0):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if not is_power_of_two(n):
            raise ValueError("horizon must be a power of two")
        if values.shape[0] != n * 2**resolution_levels + 1:
            raise ValueError("values do not match the dyadic grid")
        self.values = values
        self.n = int(n)
        self.r = int(resolution_levels)

    @classmethod
    def sample(cls, n: int, d: int, rng: np.random.Generator, resolution_levels: int = 0) -> "DyadicBrownianPath":
        g = n * 2**resolution_levels
        step = 2.0**-resolution_levels
        b = np.zeros((g + 1, d))
        b[g] = math.sqrt(n) * rng.standard_normal(d)
        h = g
        while h > 1:
            left = np.arange(0, g, h)
            mid = left + h // 2
            b[mid] = (b[left] + b[left + h]) / 2 + 0.5 * math.sqrt(h * step) * rng.standard_normal((left.size, d))
            h //= 2
        return cls(b, n, resolution_levels)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def step(self) -> float:
        return 2.0**-self.r

    def coordinate(self, i: int) -> "DyadicBrownianPath":
        return DyadicBrownianPath(self.values[:, i : i + 1], self.n, self.r)

    def at_integers(self) -> np.ndarray:
        return self.values[:: 2**self.r]

    def has_level(self, j: int) -> bool:
        """Whether cells of length ``2^j`` have their midpoints on the grid."""
        return j >= 1 - self.r

    def bridge_variables(self, j: int) -> np.ndarray:
        """``Y_{j,k} = 2 B_{(k+1/2)2^j} - B_{(k+1)2^j} - B_{k 2^j}`` for all cells in ``[0, n]``."""
        if not self.has_level(j) or 2**j > self.n:
            raise InsufficientResolution(f"level {j} is not represented on this grid")
        h = int(round(2.0**j * 2**self.r))
        left = np.arange(0, self.values.shape[0] - 1, h)
        return 2 * self.values[left + h // 2] - self.values[left + h] - self.values[left]

    def evaluate(self, times, rng: np.random.Generator) -> np.ndarray:
        """Values at arbitrary times in ``[0, n]``; off-grid points are bridge samples.

        All points in one call are sampled jointly, so a path should be
        evaluated once per set of query times.
        """
        return bridge_interpolate(self.step, self.values, times, rng)


def bridge_interpolate(step: float, grid_values: np.ndarray, times, rng: np.random.Generator) -> np.ndarray:
    """Sample a Brownian path at ``times`` given its values on a uniform grid.

    Between grid points the path is an independent Brownian bridge; points
    sharing a cell are sampled jointly.
    """
    grid_values = np.asarray(grid_values, dtype=float)
    if grid_values.ndim == 1:
        grid_values = grid_values[:, None]
    times = np.asarray(times, dtype=float)
    flat = times.reshape(-1)
    g, d = grid_values.shape
    top = (g - 1) * step
    if flat.size == 0:
        return np.zeros(times.shape + (d,))
    if flat.min() < 0 or flat.max() > top * (1 + 1e-12):
        raise InsufficientResolution(f"times outside [0, {top}]")
    cell = np.clip(np.floor(flat / step).astype(np.int64), 0, g - 2)
    s = np.clip(flat - cell * step, 0.0, step)
    order = np.lexsort((s, cell))
    cs, ss = cell[order], s[order]
    first = np.ones(cs.size, dtype=bool)
    first[1:] = cs[1:] != cs[:-1]
    prev = np.where(first, 0.0, np.concatenate([[0.0], ss[:-1]]))
    dw = np.sqrt(np.maximum(ss - prev, 0.0))[:, None] * rng.standard_normal((cs.size, d))
    run = np.cumsum(dw, axis=0)
    starts = np.nonzero(first)[0]
    group = np.cumsum(first) - 1
    base = np.where(starts[:, None] > 0, run[np.maximum(starts - 1, 0)], 0.0)
    w = run - base[group]
    last = np.append(starts[1:], cs.size) - 1
    w_end = w[last] + np.sqrt(np.maximum(step - ss[last], 0.0))[:, None] * rng.standard_normal((starts.size, d))
    frac = (ss / step)[:, None]
    left = grid_values[cs]
    right = grid_values[cs + 1]
    sorted_vals = left + frac * (right - left) + w - frac * w_end[group]
    out = np.empty_like(sorted_vals)
    out[order] = sorted_vals
    return out.reshape(times.shape + (d,))


def brownian_at(times, d: int, rng: np.random.Generator) -> np.ndarray:
    """Standard ``d``-dimensional Brownian motion at non-decreasing ``times >= 0``."""
    times = np.asarray(times, dtype=float)
    if times.size and (times[0] < 0 or np.any(np.diff(times) < 0)):
        raise ValueError("times must be non-negative and non-decreasing")
    dt = np.diff(np.concatenate([[0.0], times]))
    return np.cumsum(np.sqrt(dt)[:, None] * rng.standard_normal((times.size, d)), axis=0)
