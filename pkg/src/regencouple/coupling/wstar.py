"""Wiener process on the count scale of a Poisson process, and the composed limit process.

``construct_wstar`` turns a Brownian motion ``B`` (time scale) and a
counting path ``N`` into a Brownian motion ``W*`` on the count scale with
``W*_{N(k)} ≈ sqrt(lambda) B_k``.  Every dyadic cell ``[k 2^j, (k+1) 2^j]``
whose halves both contain jumps contributes its bridge variable ``Y_{j,k}``
times the integral of a two-level step function on count space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..brownian import DyadicBrownianPath, bridge_interpolate
from ..errors import GridMismatch, InsufficientResolution
from ..model_core import AsymptoticParams
from .dyadic import CountingPath

# floor for the fresh-level recursion; float jump times separate long before this
DEFAULT_J_MIN = -60
NORMALIZATIONS = ("orthonormal", "displayed")


@dataclass
class _Level:
    j: int
    on_grid: bool
    cell: np.ndarray  # cell index on grid levels, left endpoint on fresh levels
    a: np.ndarray
    b: np.ndarray
    start: np.ndarray  # N at the cell's left endpoint


def _enumerate_cells(N: CountingPath, n: int, grid_from: int, j_min: int, j_max: int):
    """Cells with ``a, b >= 1`` per level, top down, plus the number of unresolved cells.

    Levels ``j >= grid_from`` are enumerated in full.  Below that only halves
    holding two or more jumps are visited, since a cell with at most one
    jump contributes nothing at any finer level.
    """
    levels = []
    active = None
    for j in range(j_max, j_min - 1, -1):
        h = 2.0**j
        on_grid = j >= grid_from
        if on_grid or active is None:
            left = np.arange(int(round(n / h))) * h
        else:
            left = active
        c0 = N.count(left)
        c1 = N.count(left + h / 2)
        c2 = N.count(left + h)
        a, b = c1 - c0, c2 - c1
        keep = (a > 0) & (b > 0)
        idx = np.nonzero(keep)[0] if on_grid else left[keep]
        levels.append(_Level(j, on_grid, idx, a[keep], b[keep], c0[keep]))
        if j <= grid_from:
            active = np.sort(np.concatenate([left[a >= 2], left[b >= 2] + h / 2]))
            if active.size == 0 and not on_grid:
                break
    unresolved = 0 if active is None else int(active.size)
    return levels, unresolved


@dataclass
class WStarPath:
    """``W*`` at integer counts ``0..l_max``; off-integer values are bridge samples."""

    values: np.ndarray
    unresolved_cells: int = 0
    terms: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def l_max(self) -> int:
        return self.values.shape[0] - 1

    def evaluate(self, x, rng: np.random.Generator) -> np.ndarray:
        return bridge_interpolate(1.0, self.values, x, rng)


def _coefficient_scale(a, b, normalization):
    ab = a.astype(float) * b * (a + b)
    if normalization == "orthonormal":
        return 1.0 / np.sqrt(ab)
    return 1.0 / ab


def construct_wstar(
    B: DyadicBrownianPath,
    N: CountingPath,
    l_max: int,
    rng: np.random.Generator,
    j_range: tuple[int, int] | None = None,
    normalization: str = "orthonormal",
) -> WStarPath:
    """Build ``W*_l`` for ``l = 0..l_max`` from ``B`` and ``N``.

    ``normalization="displayed"`` uses raw ``Y_{j,k}`` (variance ``2^j``) with
    step functions ``(b 1_A - a 1_B) / (a b (a+b))``; ``"orthonormal"``
    standardizes ``Y_{j,k}`` by ``2^{-j/2}`` and divides by
    ``sqrt(a b (a+b))`` so that the step functions are orthonormal on count
    space.  Only the latter yields ``Var W*_l = l``.  A coarse term
    ``(B_n / sqrt(n)) l / sqrt(N(n))`` replaces the scales above ``j_max``.

    Bridge variables on levels below the grid resolution of ``B`` are
    drawn from ``rng`` (equivalent in law to refining ``B``).  Recursion stops
    once every cell holds at most one jump.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    n = B.n
    j_min, j_max = j_range if j_range is not None else (DEFAULT_J_MIN, int(round(math.log2(n))))
    if 2**j_max > n:
        raise InsufficientResolution(f"j_max={j_max} exceeds the Brownian horizon {n}")
    if N.horizon < n:
        raise InsufficientResolution("counting path shorter than the Brownian horizon")
    total = int(N.count(float(n)))
    if l_max > total:
        raise InsufficientResolution(f"l_max={l_max} exceeds N(n)={total}")
    d = B.d
    grid_from = max(1 - B.r, j_min)
    levels, unresolved = _enumerate_cells(N, n, grid_from, j_min, j_max)

    size = l_max + 2
    slope_change = np.zeros((size, d))
    terms = 0
    for lv in levels:
        if lv.a.size == 0:
            continue
        h = 2.0**lv.j
        if lv.on_grid:
            y = B.bridge_variables(lv.j)[lv.cell]
        else:
            y = math.sqrt(h) * rng.standard_normal((lv.a.size, d))
        if normalization == "orthonormal":
            y = y / math.sqrt(h)
        coef = y * _coefficient_scale(lv.a, lv.b, normalization)[:, None]
        a0 = lv.start
        a1 = a0 + lv.a
        a2 = a1 + lv.b
        for knot, weight in ((a0, lv.b), (a1, -(lv.a + lv.b)), (a2, lv.a)):
            np.add.at(slope_change, np.minimum(knot, size - 1), coef * weight[:, None])
        terms += lv.a.size
    slope = np.cumsum(slope_change, axis=0)
    w = np.zeros((l_max + 1, d))
    w[1:] = np.cumsum(slope[: l_max], axis=0)

    b_top = B.at_integers()[-1]
    l = np.arange(l_max + 1, dtype=float)[:, None]
    if normalization == "orthonormal":
        w += (b_top / math.sqrt(n)) * l / math.sqrt(total)
    else:
        w += b_top * l / total
    return WStarPath(w, unresolved_cells=unresolved, terms=terms,
                     diagnostics={"j_min": j_min, "j_max": j_max, "n": n, "N_n": total})


def wstar_conditional_variance(
    N: CountingPath,
    n: int,
    l,
    j_range: tuple[int, int] | None = None,
    normalization: str = "orthonormal",
) -> np.ndarray:
    """``Var(W*_l | N)`` per coordinate for each ``l``, computed in closed form.

    Given ``N`` the construction is linear in independent Gaussians, so the
    conditional variance is the sum of squared term coefficients.  Which
    levels come from the Brownian grid does not matter here.
    """
    j_min, j_max = j_range if j_range is not None else (DEFAULT_J_MIN, int(round(math.log2(n))))
    total = int(N.count(float(n)))
    l = np.atleast_1d(np.asarray(l, dtype=float))
    levels, _ = _enumerate_cells(N, n, j_max, j_min, j_max)
    var = np.zeros(l.size)
    for lv in levels:
        if lv.a.size == 0:
            continue
        h = 2.0**lv.j
        y_var = 1.0 if normalization == "orthonormal" else h
        scale = _coefficient_scale(lv.a, lv.b, normalization)
        a0 = lv.start[:, None].astype(float)
        integral = lv.b[:, None] * np.clip(l[None, :] - a0, 0, lv.a[:, None]) \
            - lv.a[:, None] * np.clip(l[None, :] - a0 - lv.a[:, None], 0, lv.b[:, None])
        var += y_var * np.sum((integral * scale[:, None]) ** 2, axis=0)
    if normalization == "orthonormal":
        var += l**2 / total
    else:
        var += n * (l / total) ** 2
    return var


def _at(path, times, rng, d, name):
    if hasattr(path, "evaluate"):
        return np.asarray(path.evaluate(times, rng), dtype=float).reshape(len(times), -1)
    arr = np.asarray(path, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] != len(times):
        raise GridMismatch(f"{name} has {arr.shape[0]} rows, grid has {len(times)}")
    if d is not None and arr.shape[1] != d:
        raise GridMismatch(f"{name} has dimension {arr.shape[1]}, expected {d}")
    return arr


def compose_limit_wiener(wstar, wtilde, wcirc, p: AsymptoticParams, grid, rng: np.random.Generator | None = None) -> np.ndarray:
    """Evaluate ``W_t = sigma^+ (lambda^{-1/2} v W*_{t/gamma} - lambda^{-1} gamma^{-1/2} mu alpha W~_t) + (I - sigma^+ sigma) W°_t``.

    ``wstar`` is either an array of ``W*`` already evaluated at
    ``grid / gamma`` or a path with an ``evaluate`` method; ``wtilde`` and
    ``wcirc`` are arrays on ``grid``.  Returns ``W`` on the grid, shape
    ``(len(grid), d)``.
    """
    grid = np.asarray(grid, dtype=float)
    d = p.d
    ws = _at(wstar, grid / p.gamma, rng, d, "wstar")
    wt = _at(wtilde, grid, rng, 1, "wtilde")
    wc = _at(wcirc, grid, rng, d, "wcirc")
    inner = ws @ p.v.T / math.sqrt(p.lambda_) - wt * (p.mu / (p.lambda_ * math.sqrt(p.gamma))) * p.alpha[None, :]
    proj = np.eye(d) - p.sigma_pinv @ p.sigma
    return inner @ p.sigma_pinv.T + wc @ proj.T
