"""Dyadic conditional-quantile coupling of random walks with Brownian motion.

The walk total over ``[0, n]`` is the quantile transform of ``B_n``; each
dyadic midpoint is the conditional quantile transform (given the parent
total) of the Brownian-bridge variable at the same node.  The walk is then
marginally exact and the Brownian motion is exact, while the two stay
close at every dyadic scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, gammainc, gammaincc, ndtri

from ..brownian import DyadicBrownianPath, is_power_of_two, next_power_of_two
from ..errors import OutOfHorizon
from ..laws import Z_CLIP, IncrementLaw, PoissonLaw


def couple_sums_dyadic(
    law: IncrementLaw,
    n: int,
    rng: np.random.Generator | None = None,
    brownian: DyadicBrownianPath | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Couple the partial sums ``Q_0..Q_n`` of ``law`` to a Brownian motion.

    Returns ``(Q, B)`` where ``B`` holds the Brownian values at the integers.
    ``Q_k ≈ k·mean + sd·B_k``.  When ``brownian`` is given (scalar, horizon
    ``n``) it is used instead of sampling a fresh path.
    """
    if not is_power_of_two(n):
        raise ValueError("n must be a power of two")
    if brownian is None:
        if rng is None:
            raise ValueError("need rng or brownian")
        brownian = DyadicBrownianPath.sample(n, 1, rng)
    if brownian.n != n or brownian.d != 1:
        raise ValueError("brownian path must be scalar with horizon n")
    b = brownian.at_integers()[:, 0]
    q = np.zeros(n + 1)
    q[n] = float(np.asarray(law.sum_from_normal(np.array([b[n] / math.sqrt(n)]), n))[0])
    h = n
    while h > 1:
        left = np.arange(0, n, h)
        mid = left + h // 2
        right = left + h
        z = (2 * b[mid] - b[left] - b[right]) / math.sqrt(h)
        q[mid] = q[left] + law.split_from_normal(z, q[right] - q[left], h // 2)
        h //= 2
    return q, b


def independent_sums(law: IncrementLaw, n: int, rng: np.random.Generator) -> np.ndarray:
    """Partial sums of i.i.d. increments; the null baseline for couplers."""
    return np.concatenate([[0.0], np.cumsum(law.sample(rng, n))])


@dataclass(frozen=True, eq=False)
class CountingPath:
    """A counting process given by its sorted jump times on ``[0, horizon]``."""

    jump_times: np.ndarray
    rate: float
    horizon: float

    def count(self, t):
        """``N(t)``, right-continuous."""
        return np.searchsorted(self.jump_times, t, side="right")

    def inverse(self, x):
        """``N^{-1}(x) = inf{s : N(s) > x}``: the time of jump ``floor(x) + 1``."""
        idx = np.floor(np.asarray(x, dtype=float)).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= self.jump_times.size):
            raise OutOfHorizon("inverse requested beyond the last recorded jump")
        return self.jump_times[idx]

    @property
    def total(self) -> int:
        return int(self.jump_times.size)


def _uniformize(counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    counts = counts.astype(np.int64)
    cell = np.repeat(np.arange(counts.size), counts)
    u = 1.0 - rng.random(cell.size)  # (0, 1]
    order = np.lexsort((u, cell))
    return cell + u[order]


def couple_poisson_brownian(
    lam: float,
    t: float,
    rng: np.random.Generator,
    brownian: DyadicBrownianPath | None = None,
) -> tuple[CountingPath, DyadicBrownianPath]:
    """Poisson process of rate ``lam`` coupled with a Brownian motion.

    Integer-time counts come from the dyadic binomial scheme
    (``N_k ≈ lam k + sqrt(lam) B_k``); jump times are uniform order
    statistics inside each unit cell.  The horizon is the next power of two
    at or above ``t`` (or the horizon of ``brownian``).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not t >= math.e:
        raise ValueError("horizon must be at least e")
    if brownian is None:
        brownian = DyadicBrownianPath.sample(next_power_of_two(t), 1, rng)
    elif brownian.n < t:
        raise ValueError("brownian horizon shorter than t")
    n = brownian.n
    counts, _ = couple_sums_dyadic(PoissonLaw(lam), n, brownian=brownian)
    jumps = _uniformize(np.diff(counts), rng)
    return CountingPath(jumps, float(lam), float(n)), brownian


def walk_coupling_sups(
    law: IncrementLaw,
    n: int,
    rng: np.random.Generator,
    coupler: str = "dyadic",
) -> float:
    """``max_{k<=n} |Q_k - k mean - sd B_k|`` for one coupled (or independent) pair."""
    if coupler == "dyadic":
        q, b = couple_sums_dyadic(law, n, rng)
    elif coupler == "independent":
        b = DyadicBrownianPath.sample(n, 1, rng).at_integers()[:, 0]
        q = independent_sums(law, n, rng)
    else:
        raise ValueError(f"unknown coupler {coupler!r}")
    k = np.arange(n + 1)
    return float(np.max(np.abs(q - k * law.mean - law.sd * b)))


def brownian_from_exponential_walk(g: np.ndarray, rate: float) -> np.ndarray:
    """Inverse dyadic coupling: a Brownian motion read off a walk of Exp(``rate``) steps.

    ``g[k]`` is the sum of the first ``k`` steps, ``k = 0..L`` for any
    ``L >= 1``.  The total is mapped through the Gamma CDF and each split of
    a segment ``[l, r]`` at ``mid = l + (r - l)//2`` through the Beta CDF of
    the left share; the resulting uniforms become Brownian-bridge midpoint
    variables.  Returns ``W[0..L]`` with ``W[k] ≈ rate * g[k] - k``.
    """
    g = np.asarray(g, dtype=float)
    big_l = g.size - 1
    if big_l < 1:
        raise ValueError("walk needs at least one step")
    w = np.zeros(big_l + 1)
    x = rate * g[big_l]
    with np.errstate(divide="ignore"):
        z = ndtri(gammainc(big_l, x)) if x <= big_l else -ndtri(gammaincc(big_l, x))
    w[big_l] = math.sqrt(big_l) * float(np.clip(z, -Z_CLIP, Z_CLIP))
    left = np.array([0])
    right = np.array([big_l])
    while left.size:
        wide = right - left >= 2
        left, right = left[wide], right[wide]
        if not left.size:
            break
        h = right - left
        a = h // 2
        b = h - a
        mid = left + a
        span = g[right] - g[left]
        frac = np.where(span > 0, (g[mid] - g[left]) / np.where(span > 0, span, 1.0), 0.5)
        with np.errstate(divide="ignore"):
            z = np.where(frac <= 0.5, ndtri(betainc(a, b, frac)), -ndtri(betainc(b, a, 1.0 - frac)))
        z = np.clip(z, -Z_CLIP, Z_CLIP)
        w[mid] = w[left] + (a / h) * (w[right] - w[left]) + np.sqrt(a * b / h) * z
        left, right = np.concatenate([left, mid]), np.concatenate([mid, right])
    return w
