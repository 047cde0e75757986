"""Regeneration cycles, cumulative paths and renewal counts."""

from __future__ import annotations

import csv
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    HorizonOverflow,
    InsufficientCycles,
    NonPositiveTau,
    OutOfHorizon,
    TooFewSamples,
)
from .laws import IncrementLaw
from .model_core import CycleMoments, CycleSample

DEFAULT_CYCLE_CAP = 10**8
PROBE_S_GRID = (0.05, 0.1, 0.2, 0.5)


class CycleBatch(Sequence):
    """Array-backed sequence of :class:`CycleSample`.

    ``paths`` is either ``None`` or a list with one ``(offsets, values)``
    pair (or ``None``) per cycle.
    """

    def __init__(self, taus, xis, etas, paths=None):
        self.taus = np.asarray(taus, dtype=float).reshape(-1)
        xis = np.asarray(xis, dtype=float)
        self.xis = xis.reshape(-1, 1) if xis.ndim == 1 else xis
        self.etas = np.asarray(etas, dtype=float).reshape(-1)
        if self.xis.shape[0] != self.taus.size or self.etas.size != self.taus.size:
            raise ValueError("taus, xis and etas must have the same length")
        if paths is not None and len(paths) != self.taus.size:
            raise ValueError("paths must have one entry per cycle")
        self.paths = paths

    @classmethod
    def from_samples(cls, samples: Sequence[CycleSample]) -> "CycleBatch":
        if isinstance(samples, CycleBatch):
            return samples
        if len(samples) == 0:
            raise ValueError("empty cycle sequence")
        paths = [s.path for s in samples]
        return cls(
            [s.tau for s in samples],
            np.stack([s.xi for s in samples]),
            [s.eta for s in samples],
            None if all(p is None for p in paths) else paths,
        )

    @property
    def d(self) -> int:
        return self.xis.shape[1]

    def __len__(self):
        return self.taus.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            paths = None if self.paths is None else self.paths[i]
            return CycleBatch(self.taus[i], self.xis[i], self.etas[i], paths)
        path = None if self.paths is None else self.paths[i]
        return CycleSample(self.taus[i], self.xis[i], self.etas[i], path)

    def concat(self, other: "CycleBatch") -> "CycleBatch":
        if self.paths is None and other.paths is None:
            paths = None
        else:
            paths = list(self.paths or [None] * len(self)) + list(other.paths or [None] * len(other))
        return CycleBatch(
            np.concatenate([self.taus, other.taus]),
            np.concatenate([self.xis, other.xis]),
            np.concatenate([self.etas, other.etas]),
            paths,
        )

    def regen_times(self) -> np.ndarray:
        """``T_0 = 0, T_1, ..., T_n``."""
        return np.concatenate([[0.0], np.cumsum(self.taus)])


@dataclass(frozen=True)
class CycleSumLaws:
    """Cycle law of the form ``xi = beta * tau + eps`` with independent parts.

    ``tau`` follows ``tau_law``; coordinate ``i`` of ``eps`` follows
    ``noise_laws[i]``, independently of ``tau`` and of the other
    coordinates.  Models of this form admit the coordinate-wise dyadic
    coupler.
    """

    tau_law: IncrementLaw
    noise_laws: tuple[IncrementLaw, ...]
    beta: tuple[float, ...]

    @property
    def d(self) -> int:
        return len(self.noise_laws)

    def moments(self) -> CycleMoments:
        beta = np.asarray(self.beta, dtype=float)
        m_tau, v_tau = self.tau_law.mean, self.tau_law.var
        return CycleMoments(
            d=self.d,
            mean_xi=beta * m_tau + np.array([law.mean for law in self.noise_laws]),
            mean_tau=m_tau,
            cov_xi=np.outer(beta, beta) * v_tau + np.diag([law.var for law in self.noise_laws]),
            var_tau=v_tau,
            cov_xi_tau=beta * v_tau,
        )

    def to_dict(self):
        return {
            "tau": self.tau_law.to_dict(),
            "noise": [law.to_dict() for law in self.noise_laws],
            "beta": list(self.beta),
        }


@dataclass
class CycleModel:
    """A source of i.i.d. regeneration cycles.

    ``sampler`` draws one cycle; ``batch_sampler`` (optional) draws ``n``
    cycles at once as a :class:`CycleBatch` and is preferred when present.
    """

    d: int
    sampler: Callable[[np.random.Generator], CycleSample]
    analytic_moments: CycleMoments | None = None
    batch_sampler: Callable[[np.random.Generator, int], CycleBatch] | None = None
    sum_laws: CycleSumLaws | None = None
    name: str = "custom"

    def draw(self, rng: np.random.Generator, n: int) -> CycleBatch:
        if self.batch_sampler is not None:
            return self.batch_sampler(rng, n)
        return CycleBatch.from_samples([self.sampler(rng) for _ in range(n)])


def sample_cycles(
    model: CycleModel,
    rng: np.random.Generator,
    *,
    count: int | None = None,
    horizon: float | None = None,
    cap: int = DEFAULT_CYCLE_CAP,
    block: int = 1024,
) -> CycleBatch:
    """Draw cycles until ``count`` cycles exist, or until ``sum(tau) > horizon``.

    Under horizon stopping the overshooting final cycle is included, so
    the result is the minimal prefix with ``T_k > horizon``.
    """
    if (count is None) == (horizon is None):
        raise ValueError("give exactly one of count or horizon")
    if count is not None:
        if count < 1:
            raise ValueError("count must be at least 1")
        if count > cap:
            raise HorizonOverflow(f"{count} cycles requested, cap is {cap}")
        return model.draw(rng, count)
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    batch = None
    total = 0.0
    size = block
    while True:
        new = model.draw(rng, size)
        batch = new if batch is None else batch.concat(new)
        csum = total + np.cumsum(new.taus)
        hit = np.nonzero(csum > horizon)[0]
        if hit.size:
            keep = len(batch) - len(new) + int(hit[0]) + 1
            return batch[:keep]
        total = float(csum[-1])
        if len(batch) >= cap:
            raise HorizonOverflow(f"cycle cap {cap} reached before horizon {horizon}")
        size = min(2 * size, cap - len(batch))


@dataclass(frozen=True, eq=False)
class CumulativePath:
    horizon: float
    regen_times: np.ndarray
    cycle_increments: np.ndarray
    etas: np.ndarray
    grid: np.ndarray
    values: np.ndarray

    @property
    def d(self) -> int:
        return self.cycle_increments.shape[1]

    def partial_sums(self) -> np.ndarray:
        """``S(T_k)`` for ``k = 0..n``."""
        d = self.cycle_increments.shape[1]
        return np.vstack([np.zeros((1, d)), np.cumsum(self.cycle_increments, axis=0)])

    def to_csv(self, fh) -> None:
        w = csv.writer(fh)
        w.writerow(["u"] + [f"S{i}" for i in range(self.d)])
        for u, row in zip(self.grid, self.values):
            w.writerow([repr(float(u))] + [repr(float(x)) for x in row])


def cumulative_values(cycles: CycleBatch, regen: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``S(u)`` at arbitrary times, right-continuous step interpolation.

    Within a cycle the most recent recorded sample is held; cycles without
    samples hold ``S(T_{k-1})`` until ``T_k`` (pure-jump convention).
    """
    u = np.asarray(u, dtype=float)
    partial = np.vstack([np.zeros((1, cycles.d)), np.cumsum(cycles.xis, axis=0)])
    k = np.searchsorted(regen, u, side="right") - 1
    k = np.clip(k, 0, len(cycles))
    out = partial[k].copy()
    if cycles.paths is not None:
        inside = np.nonzero(k < len(cycles))[0]
        for i in inside:
            p = cycles.paths[k[i]]
            if p is None:
                continue
            offsets, values = p
            j = np.searchsorted(offsets, u[i] - regen[k[i]], side="right") - 1
            if j >= 0:
                out[i] = partial[k[i]] + values[j]
    return out


def build_path(cycles, t: float, grid_step: float) -> CumulativePath:
    """Assemble ``S(u)`` on ``{0, step, 2 step, ..., t}`` from cycles covering ``t``."""
    cycles = CycleBatch.from_samples(cycles)
    if not grid_step > 0:
        raise ValueError("grid_step must be positive")
    regen = cycles.regen_times()
    if not regen[-1] > t:
        raise InsufficientCycles(f"cycles end at {regen[-1]}, horizon is {t}")
    n = int(np.floor(t / grid_step + 1e-9))
    grid = np.arange(n + 1) * grid_step
    if t - grid[-1] > 1e-9 * grid_step:
        grid = np.append(grid, t)
    else:
        grid[-1] = t
    return CumulativePath(
        horizon=float(t),
        regen_times=regen,
        cycle_increments=cycles.xis.copy(),
        etas=cycles.etas.copy(),
        grid=grid,
        values=cumulative_values(cycles, regen, grid),
    )


def renewal_count(path: CumulativePath, u: float) -> int:
    """``m(u) = max{k : T_k <= u}``."""
    if not 0 <= u <= path.horizon:
        raise OutOfHorizon(f"u={u} outside [0, {path.horizon}]")
    return int(np.searchsorted(path.regen_times, u, side="right") - 1)


def stopped_sum_model(joint_sampler, d: int, *, batch_sampler=None, analytic_moments=None,
                      name: str = "stopped_sum") -> CycleModel:
    """Cycles of a stopped sum: the jump ``xi`` lands at the end of a cycle of length ``tau``.

    ``joint_sampler(rng)`` returns ``(xi, tau)``; ``batch_sampler(rng, n)``
    (optional) returns arrays ``(xis[n, d], taus[n])``.  ``eta = |xi|``.
    """

    def one(rng):
        xi, tau = joint_sampler(rng)
        if not tau > 0:
            raise NonPositiveTau(f"sampled tau={tau}")
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        return CycleSample(tau, xi, float(np.max(np.abs(xi))))

    batch = None
    if batch_sampler is not None:
        def batch(rng, n):
            xis, taus = batch_sampler(rng, n)
            taus = np.asarray(taus, dtype=float)
            if np.any(taus <= 0):
                raise NonPositiveTau("sampler produced tau <= 0")
            xis = np.asarray(xis, dtype=float).reshape(n, d)
            return CycleBatch(taus, xis, np.max(np.abs(xis), axis=1))

    return CycleModel(d=d, sampler=one, analytic_moments=analytic_moments, batch_sampler=batch, name=name)


def stopped_sum_from_laws(laws: CycleSumLaws, name: str = "stopped_sum") -> CycleModel:
    """Stopped-sum model whose cycle law is ``xi = beta tau + eps`` (see :class:`CycleSumLaws`)."""
    beta = np.asarray(laws.beta, dtype=float)

    def draw(rng, n):
        taus = laws.tau_law.sample(rng, n)
        eps = np.column_stack([law.sample(rng, n) for law in laws.noise_laws])
        return taus[:, None] * beta + eps, taus

    def joint(rng):
        xis, taus = draw(rng, 1)
        return xis[0], taus[0]

    model = stopped_sum_model(joint, laws.d, batch_sampler=draw, analytic_moments=laws.moments(), name=name)
    model.sum_laws = laws
    return model


@dataclass
class ExpProbes:
    """Empirical exponential moments ``E exp(s tau)`` and ``E exp(s eta)`` with standard errors."""

    s_grid: tuple[float, ...]
    tau_mgf: list[float]
    tau_se: list[float]
    eta_mgf: list[float]
    eta_se: list[float]
    max_rel_se: float = field(default=0.25)

    def screen(self) -> bool:
        """Exponential-moment screen: the smallest ``s`` has finite, well-estimated probes."""
        if not self.s_grid:
            return False
        vals = (self.tau_mgf[0], self.eta_mgf[0])
        ses = (self.tau_se[0], self.eta_se[0])
        return all(np.isfinite(v) and se <= self.max_rel_se * v for v, se in zip(vals, ses))

    def to_dict(self):
        return {
            "s_grid": list(self.s_grid),
            "tau_mgf": self.tau_mgf,
            "tau_se": self.tau_se,
            "eta_mgf": self.eta_mgf,
            "eta_se": self.eta_se,
            "screen": self.screen(),
        }


def empirical_moments(cycles, s_grid=PROBE_S_GRID) -> tuple[CycleMoments, ExpProbes]:
    """Unbiased sample moments of ``(xi, tau)`` plus exponential probes."""
    cycles = CycleBatch.from_samples(cycles)
    n = len(cycles)
    if n < 2:
        raise TooFewSamples("need at least two cycles")
    joint = np.column_stack([cycles.xis, cycles.taus])
    cov = np.atleast_2d(np.cov(joint, rowvar=False, ddof=1))
    d = cycles.d
    moments = CycleMoments(
        d=d,
        mean_xi=cycles.xis.mean(axis=0),
        mean_tau=float(cycles.taus.mean()),
        cov_xi=cov[:d, :d],
        var_tau=float(cov[d, d]),
        cov_xi_tau=cov[:d, d],
        n_samples=n,
    )
    tm, ts, em, es = [], [], [], []
    with np.errstate(over="ignore", invalid="ignore"):
        for s in s_grid:
            for arr, mean_out, se_out in ((cycles.taus, tm, ts), (cycles.etas, em, es)):
                e = np.exp(s * arr)
                mean_out.append(float(e.mean()))
                se_out.append(float(e.std(ddof=1) / np.sqrt(n)))
    return moments, ExpProbes(tuple(s_grid), tm, ts, em, es)


def cycles_to_csv(cycles, fh) -> None:
    """Write ``k, T_k, tau_k, xi_k[0..d), eta_k`` rows."""
    cycles = CycleBatch.from_samples(cycles)
    regen = cycles.regen_times()
    w = csv.writer(fh)
    w.writerow(["k", "T_k", "tau_k"] + [f"xi_k{i}" for i in range(cycles.d)] + ["eta_k"])
    for k in range(len(cycles)):
        w.writerow([k + 1, repr(float(regen[k + 1])), repr(float(cycles.taus[k]))]
                   + [repr(float(x)) for x in cycles.xis[k]] + [repr(float(cycles.etas[k]))])
