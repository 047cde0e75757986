"""Scalar increment laws with dyadic conditional splits.

Each law knows how to

* sample i.i.d. increments,
* map a standard normal variable to the quantile of the ``m``-step sum
  (``sum_from_normal``), and
* map a standard normal variable to the quantile of the first ``m`` steps
  of a ``2m``-step sum given its total (``split_from_normal``).

The last two are what the dyadic quantile coupler consumes.  Gaussian,
Gamma and Poisson laws have closed-form conditionals; lattice laws use
tabulated ``m``-step distributions built by repeated convolution.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Any

import numpy as np
from scipy import special, stats

from .errors import ConfigError, UnsupportedLaw

# Quantile transforms clip the Gaussian input here; P(|Z| > 8) ~ 1e-15.
Z_CLIP = 8.0
DEFAULT_LATTICE_BUDGET = 2**22


def _u(z):
    return special.ndtr(np.clip(z, -Z_CLIP, Z_CLIP))


class IncrementLaw(ABC):
    """Law of one increment of a random walk."""

    name = "abstract"
    is_lattice = False

    @property
    @abstractmethod
    def mean(self) -> float: ...

    @property
    @abstractmethod
    def var(self) -> float: ...

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    @abstractmethod
    def sample(self, rng: np.random.Generator, size) -> np.ndarray: ...

    @abstractmethod
    def sum_from_normal(self, z, m: int) -> np.ndarray:
        """Quantile of the ``m``-step sum at ``Phi(z)``."""

    @abstractmethod
    def split_from_normal(self, z, total, m: int) -> np.ndarray:
        """Quantile at ``Phi(z)`` of the first ``m`` steps given the ``2m``-step ``total``."""

    def log_mgf(self, s: float) -> float:
        raise NotImplementedError(f"{self.name} has no closed-form moment generating function")

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


class GaussianLaw(IncrementLaw):
    name = "gaussian"

    def __init__(self, mean: float = 0.0, sd: float = 1.0):
        if sd < 0:
            raise ValueError("sd must be non-negative")
        self._mean, self._sd = float(mean), float(sd)

    @property
    def mean(self):
        return self._mean

    @property
    def var(self):
        return self._sd**2

    def sample(self, rng, size):
        return self._mean + self._sd * rng.standard_normal(size)

    # affine transforms: no round trip through Phi, so the coupling is exact
    def sum_from_normal(self, z, m):
        return m * self._mean + self._sd * math.sqrt(m) * np.asarray(z, dtype=float)

    def split_from_normal(self, z, total, m):
        return np.asarray(total, dtype=float) / 2 + self._sd * math.sqrt(m / 2) * np.asarray(z, dtype=float)

    def log_mgf(self, s):
        return s * self._mean + 0.5 * (s * self._sd) ** 2

    def to_dict(self):
        return {"law": self.name, "mean": self._mean, "sd": self._sd}


class ConstantLaw(IncrementLaw):
    name = "constant"

    def __init__(self, value: float = 0.0):
        self.value = float(value)

    @property
    def mean(self):
        return self.value

    @property
    def var(self):
        return 0.0

    def sample(self, rng, size):
        return np.full(size, self.value)

    def sum_from_normal(self, z, m):
        return np.full(np.shape(z), m * self.value)

    def split_from_normal(self, z, total, m):
        return np.broadcast_to(np.asarray(total, dtype=float) / 2, np.shape(z)).copy()

    def log_mgf(self, s):
        return s * self.value

    def to_dict(self):
        return {"law": self.name, "value": self.value}


class GammaLaw(IncrementLaw):
    """Gamma(shape, scale) increments; the half-sum given the total is a Beta fraction."""

    name = "gamma"

    def __init__(self, shape: float = 1.0, scale: float = 1.0):
        if shape <= 0 or scale <= 0:
            raise ValueError("gamma shape and scale must be positive")
        self.shape, self.scale = float(shape), float(scale)

    @property
    def mean(self):
        return self.shape * self.scale

    @property
    def var(self):
        return self.shape * self.scale**2

    def sample(self, rng, size):
        return rng.gamma(self.shape, self.scale, size)

    def sum_from_normal(self, z, m):
        z = np.clip(np.asarray(z, dtype=float), -Z_CLIP, Z_CLIP)
        a = m * self.shape
        # upper half uses the complemented inverse for tail precision
        lo = special.gammaincinv(a, special.ndtr(z))
        hi = special.gammainccinv(a, special.ndtr(-z))
        return self.scale * np.where(z <= 0, lo, hi)

    def split_from_normal(self, z, total, m):
        z = np.clip(np.asarray(z, dtype=float), -Z_CLIP, Z_CLIP)
        a = m * self.shape
        frac = special.betaincinv(a, a, special.ndtr(-np.abs(z)))
        frac = np.where(z <= 0, frac, 1.0 - frac)
        return np.asarray(total, dtype=float) * frac

    def log_mgf(self, s):
        if s * self.scale >= 1:
            return math.inf
        return -self.shape * math.log1p(-s * self.scale)

    def to_dict(self):
        return {"law": self.name, "shape": self.shape, "scale": self.scale}


def ExponentialLaw(rate: float = 1.0) -> GammaLaw:
    return GammaLaw(1.0, 1.0 / rate)


class PoissonLaw(IncrementLaw):
    """Poisson(rate) increments; the half-sum given the total is Binomial(total, 1/2)."""

    name = "poisson"
    is_lattice = True

    def __init__(self, rate: float = 1.0):
        if rate <= 0:
            raise ValueError("poisson rate must be positive")
        self.rate = float(rate)

    @property
    def mean(self):
        return self.rate

    @property
    def var(self):
        return self.rate

    def sample(self, rng, size):
        return rng.poisson(self.rate, size).astype(float)

    def sum_from_normal(self, z, m):
        return stats.poisson.ppf(_u(z), self.rate * m)

    def split_from_normal(self, z, total, m):
        total = np.asarray(total, dtype=float)
        out = stats.binom.ppf(_u(z), total.astype(np.int64), 0.5)
        # scipy returns -1 for n = 0
        return np.where(total > 0, out, 0.0)

    def log_mgf(self, s):
        return self.rate * math.expm1(s)

    def to_dict(self):
        return {"law": self.name, "rate": self.rate}


class LatticeLaw(IncrementLaw):
    """Increments on ``{lo, lo+1, ..., lo+K}`` with a finite probability table.

    Conditional splits come from the tabulated ``m``-step distributions:
    ``P(first half = a | total = s) ∝ p_m(a) p_m(s - a)``.  Tables are built
    by repeated self-convolution and cached; their support size is capped
    by ``budget``.
    """

    name = "lattice"
    is_lattice = True

    def __init__(self, lo: int, pmf, budget: int = DEFAULT_LATTICE_BUDGET):
        pmf = np.asarray(pmf, dtype=float)
        if pmf.ndim != 1 or pmf.size == 0 or np.any(pmf < 0) or not np.isclose(pmf.sum(), 1.0, atol=1e-12):
            raise ValueError("pmf must be a non-negative table summing to 1")
        self.lo = int(lo)
        self.pmf = pmf / pmf.sum()
        self.budget = int(budget)
        self._log_tables: dict[int, np.ndarray] = {}
        self._lin_tables: dict[int, np.ndarray] = {1: self.pmf}

    @property
    def width(self) -> int:
        return self.pmf.size - 1

    @property
    def mean(self):
        return float(np.dot(np.arange(self.pmf.size) + self.lo, self.pmf))

    @property
    def var(self):
        k = np.arange(self.pmf.size) + self.lo
        return float(np.dot(k**2, self.pmf) - self.mean**2)

    def sample(self, rng, size):
        return (self.lo + rng.choice(self.pmf.size, size=size, p=self.pmf)).astype(float)

    def _linear_table(self, m: int) -> np.ndarray:
        if m in self._lin_tables:
            return self._lin_tables[m]
        if m & (m - 1):
            raise UnsupportedLaw("lattice tables exist only for power-of-two step counts")
        if self.width * m + 1 > self.budget:
            raise UnsupportedLaw(f"lattice support {self.width * m + 1} exceeds budget {self.budget}")
        half = self._linear_table(m // 2)
        table = np.convolve(half, half)
        table = np.clip(table, 0.0, None)
        self._lin_tables[m] = table / table.sum()
        return self._lin_tables[m]

    def log_table(self, m: int) -> np.ndarray:
        """Log-probabilities of the ``m``-step sum at ``lo*m + j``, ``j = 0..K*m``."""
        if m not in self._log_tables:
            t = self._linear_table(m)
            with np.errstate(divide="ignore"):
                self._log_tables[m] = np.where(t > 0, np.log(np.maximum(t, 1e-300)), -np.inf)
        return self._log_tables[m]

    def sum_from_normal(self, z, m):
        logp = self.log_table(m)
        cdf = np.cumsum(np.exp(logp - logp.max()))
        u = _u(z)
        idx = np.searchsorted(cdf, np.asarray(u) * cdf[-1], side="left")
        return self.lo * m + np.minimum(idx, cdf.size - 1).astype(float)

    def split_from_normal(self, z, total, m):
        logp = self.log_table(m)
        size = logp.size
        total = np.atleast_1d(np.asarray(total, dtype=float))
        u = np.atleast_1d(_u(z))
        s = np.rint(total - 2 * self.lo * m).astype(np.int64)
        j = np.arange(size)
        other = s[:, None] - j[None, :]
        ok = (other >= 0) & (other < size)
        lw = np.where(ok, logp[None, :] + logp[np.clip(other, 0, size - 1)], -np.inf)
        top = lw.max(axis=1, keepdims=True)
        if np.any(~np.isfinite(top)):
            raise UnsupportedLaw("conditional split has no support (total outside lattice range)")
        w = np.exp(lw - top)
        cdf = np.cumsum(w, axis=1)
        idx = (cdf < (u * cdf[:, -1])[:, None]).sum(axis=1)
        return self.lo * m + idx.astype(float)

    def log_mgf(self, s):
        k = np.arange(self.pmf.size) + self.lo
        return float(special.logsumexp(s * k, b=self.pmf))

    def to_dict(self):
        return {"law": self.name, "lo": self.lo, "pmf": self.pmf.tolist()}


class BernoulliLaw(LatticeLaw):
    """Bernoulli(p) increments; ``m``-step tables are exact binomial log-pmfs."""

    name = "bernoulli"

    def __init__(self, p: float = 0.5, budget: int = DEFAULT_LATTICE_BUDGET):
        if not 0 < p < 1:
            raise ValueError("bernoulli p must lie in (0, 1)")
        self.p = float(p)
        super().__init__(0, [1 - p, p], budget=budget)

    def log_table(self, m):
        if m not in self._log_tables:
            if m + 1 > self.budget:
                raise UnsupportedLaw(f"lattice support {m + 1} exceeds budget {self.budget}")
            k = np.arange(m + 1)
            self._log_tables[m] = (
                special.gammaln(m + 1) - special.gammaln(k + 1) - special.gammaln(m - k + 1)
                + k * math.log(self.p) + (m - k) * math.log1p(-self.p)
            )
        return self._log_tables[m]

    def sample(self, rng, size):
        return (rng.random(size) < self.p).astype(float)

    def to_dict(self):
        return {"law": self.name, "p": self.p}


class ShiftedLaw(IncrementLaw):
    """``offset + base`` for a base law; used to centre laws such as Exp(1) - 1."""

    def __init__(self, base: IncrementLaw, offset: float):
        self.base, self.offset = base, float(offset)
        self.name = f"shifted_{base.name}"
        self.is_lattice = base.is_lattice

    @property
    def mean(self):
        return self.base.mean + self.offset

    @property
    def var(self):
        return self.base.var

    def sample(self, rng, size):
        return self.base.sample(rng, size) + self.offset

    def sum_from_normal(self, z, m):
        return self.base.sum_from_normal(z, m) + m * self.offset

    def split_from_normal(self, z, total, m):
        return self.base.split_from_normal(z, np.asarray(total, dtype=float) - 2 * m * self.offset, m) + m * self.offset

    def log_mgf(self, s):
        return self.base.log_mgf(s) + s * self.offset

    def to_dict(self):
        return {"law": "shifted", "offset": self.offset, "base": self.base.to_dict()}


def law_from_dict(doc: dict[str, Any], field: str = "law") -> IncrementLaw:
    """Build a law from a config table such as ``{law = "poisson", rate = 1.0}``."""
    if not isinstance(doc, dict) or "law" not in doc:
        raise ConfigError("expected a table with a 'law' key", field)
    kind = doc["law"]
    args = {k: v for k, v in doc.items() if k != "law"}
    try:
        if kind == "gaussian":
            return GaussianLaw(**args)
        if kind == "constant":
            return ConstantLaw(**args)
        if kind == "gamma":
            return GammaLaw(**args)
        if kind == "exponential":
            return ExponentialLaw(**args)
        if kind == "poisson":
            return PoissonLaw(**args)
        if kind == "bernoulli":
            return BernoulliLaw(**args)
        if kind == "lattice":
            return LatticeLaw(**args)
        if kind == "shifted":
            return ShiftedLaw(law_from_dict(args["base"], f"{field}.base"), args["offset"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc), field) from exc
    raise ConfigError(f"unknown law {kind!r}", f"{field}.law")
