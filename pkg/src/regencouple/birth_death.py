"""Birth–death chains: stationary law, ergodicity margins, asymptotic constants,
exact-event simulation and regeneration cycles at returns to zero.
"""

from __future__ import annotations

import math
import warnings
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import linalg

from .cycle_sim import CycleBatch
from .errors import (
    ConfigError,
    NoReturn,
    NotSummable,
    OracleDisagreement,
    PotentialOverflow,
    SingularSystem,
    StateOverflow,
    TailTooHeavy,
)
from .expr import Formula

TAIL_WINDOW = 0.25
MASS_TOL = 1e-8
PASS_REL_TOL = 1e-3
FAIL_REL_TOL = 1e-12
ORACLE_RTOL = 1e-6
N_MAX_CAP = 4096
LOG_MAX = 709.0


class RateTable:
    """A sequence indexed by state, given as a formula in ``n`` or an explicit table."""

    def __init__(self, source, field: str):
        self.field = field
        if isinstance(source, (int, float)) and not isinstance(source, bool):
            source = repr(float(source))
        if isinstance(source, str):
            self.formula: Formula | None = Formula(source, field)
            self.table = None
        elif isinstance(source, (list, tuple, np.ndarray)):
            self.formula = None
            if len(source) == 0:
                raise ConfigError("table must be a non-empty list of numbers", field)
            for i, v in enumerate(source):
                if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
                    raise ConfigError(f"expected a number, got {v!r}", f"{field}[{i}]")
            self.table = np.asarray(source, dtype=float)
        else:
            raise ConfigError("expected a formula string or a list of numbers", field)

    @property
    def limit(self) -> int | None:
        """Largest index available (``None`` for formulas)."""
        return None if self.table is None else self.table.size - 1

    def __call__(self, n) -> np.ndarray:
        n = np.asarray(n)
        if self.formula is not None:
            return self.formula(n)
        if n.size and (n.min() < 0 or n.max() > self.limit):
            raise ConfigError(f"table has {self.table.size} entries, index {int(n.max())} requested", self.field)
        return self.table[n.astype(int)]

    def to_json(self):
        return self.formula.text if self.formula is not None else self.table.tolist()


@dataclass
class BirthDeathSpec:
    birth: RateTable
    death: RateTable
    n_max: int
    f: RateTable

    def __post_init__(self):
        if not isinstance(self.birth, RateTable):
            self.birth = RateTable(self.birth, "birth")
        if not isinstance(self.death, RateTable):
            self.death = RateTable(self.death, "death")
        if not isinstance(self.f, RateTable):
            self.f = RateTable(self.f, "f")
        self.n_max = int(self.n_max)
        if self.n_max < 2:
            raise ConfigError("n_max must be at least 2", self.birth.field.rsplit("birth", 1)[0] + "n_max")
        n = np.arange(self.n_max + 1)
        lam = self.birth(n)
        mu = self.death(np.arange(1, self.n_max + 2))
        fv = self.f(n)
        if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
            raise ConfigError(f"birth rates must be positive and finite on 0..{self.n_max}", self.birth.field)
        if not np.all(np.isfinite(mu)) or np.any(mu <= 0):
            raise ConfigError(f"death rates must be positive and finite on 1..{self.n_max + 1}", self.death.field)
        if not np.all(np.isfinite(fv)):
            raise ConfigError(f"f must be finite on 0..{self.n_max}", self.f.field)

    @classmethod
    def from_dict(cls, doc: dict[str, Any], prefix: str = "") -> "BirthDeathSpec":
        for key in ("birth", "death", "n_max"):
            if key not in doc:
                raise ConfigError("missing", prefix + key)
        n_max = doc["n_max"]
        if not isinstance(n_max, int) or isinstance(n_max, bool):
            raise ConfigError("must be an integer", prefix + "n_max")
        return cls(RateTable(doc["birth"], prefix + "birth"), RateTable(doc["death"], prefix + "death"), n_max,
                   RateTable(doc.get("f", "n"), prefix + "f"))

    def to_dict(self):
        return {"birth": self.birth.to_json(), "death": self.death.to_json(), "n_max": self.n_max,
                "f": self.f.to_json()}

    def with_n_max(self, n_max: int) -> "BirthDeathSpec":
        return BirthDeathSpec(self.birth, self.death, n_max, self.f)

    def max_n_max(self) -> int:
        """Largest truncation the tables allow (death must reach ``n_max + 1``)."""
        lims = [t.limit for t in (self.birth, self.death, self.f) if t.limit is not None]
        cap = N_MAX_CAP if not lims else min(N_MAX_CAP, min(lims))
        if self.death.limit is not None:
            cap = min(cap, self.death.limit - 1)
        return cap

    def rates(self):
        """``(lambda_0..lambda_{n_max}, mu_0..mu_{n_max})`` with ``mu_0 = 0``."""
        n = np.arange(self.n_max + 1)
        mu = np.concatenate([[0.0], self.death(n[1:])])
        return self.birth(n), mu

    def f_values(self) -> np.ndarray:
        return self.f(np.arange(self.n_max + 1))

    def growth_constant(self) -> float:
        """``max |f(n)| / (1 + n)`` over the truncation."""
        n = np.arange(self.n_max + 1)
        return float(np.max(np.abs(self.f_values()) / (1.0 + n)))

    def generator(self) -> np.ndarray:
        """Truncated generator on ``0..n_max`` with a reflecting top state."""
        lam, mu = self.rates()
        k = self.n_max + 1
        a = np.zeros((k, k))
        idx = np.arange(k - 1)
        a[idx, idx + 1] = lam[:-1]
        a[idx + 1, idx] = mu[1:]
        a[np.arange(k), np.arange(k)] = -a.sum(axis=1)
        return a


def log_potentials(spec: BirthDeathSpec) -> np.ndarray:
    lam, mu = spec.rates()
    return np.concatenate([[0.0], np.cumsum(np.log(lam[:-1]) - np.log(mu[1:]))])


def potentials(spec: BirthDeathSpec) -> np.ndarray:
    """``pi_n = lambda_0 ... lambda_{n-1} / (mu_1 ... mu_n)``, ``pi_0 = 1``."""
    lp = log_potentials(spec)
    over = np.nonzero(lp > LOG_MAX)[0]
    if over.size:
        raise PotentialOverflow(f"potential overflows double precision at n={int(over[0])}")
    return np.exp(lp)


@dataclass
class StationaryLaw:
    potentials: np.ndarray
    pi_tilde: np.ndarray
    tail_mass_bound: float
    tail_ratio: float

    def truncated(self) -> np.ndarray:
        """``pi_tilde`` renormalized to sum to one on ``0..n_max``."""
        return self.pi_tilde / self.pi_tilde.sum()

    def to_dict(self):
        return {"potentials": self.potentials.tolist(), "pi_tilde": self.pi_tilde.tolist(),
                "tail_mass_bound": self.tail_mass_bound, "tail_ratio": self.tail_ratio}


def _window(n_max: int, frac: float = TAIL_WINDOW) -> slice:
    start = max(0, int(math.floor((1 - frac) * n_max)))
    return slice(start, n_max)


def stationary(spec: BirthDeathSpec, mass_tol: float = MASS_TOL) -> StationaryLaw:
    """Normalized stationary law with a geometric bound on the mass beyond ``n_max``.

    The tail ratio is the largest ``lambda_n / mu_{n+1}`` over the final
    quarter of indices; a ratio of one or more means divergence.
    """
    lam, mu = spec.rates()
    mu_next = spec.death(np.arange(1, spec.n_max + 2))
    ratios = lam / mu_next
    rho = float(np.max(ratios[_window(spec.n_max + 1)]))
    if rho >= 1.0:
        raise NotSummable(f"lambda_n / mu_(n+1) reaches {rho:.6g} >= 1 near n_max: potentials do not sum")
    lp = log_potentials(spec)
    shift = float(lp.max())
    w = np.exp(lp - shift)
    tail = w[-1] * rho / (1.0 - rho)
    z = w.sum() + tail
    tail_mass = tail / z
    if tail_mass > mass_tol:
        raise TailTooHeavy(f"estimated mass beyond n_max is {tail_mass:.3g} > {mass_tol:.3g}; raise n_max")
    pot = np.exp(lp) if shift <= LOG_MAX else np.full(lp.size, math.inf)
    return StationaryLaw(pot, w / z, float(tail_mass), rho)


@dataclass
class MarginReport:
    name: str
    n: np.ndarray
    values: np.ndarray
    window_estimate: float
    extrapolated: float
    verdict: str
    gap: float

    def to_dict(self):
        return {"name": self.name, "n": self.n.tolist(), "values": self.values.tolist(),
                "window_estimate": self.window_estimate, "extrapolated": self.extrapolated,
                "verdict": self.verdict, "gap": self.gap}


def _extrapolate(n, values):
    """Intercept of a regression of ``values`` on ``1/n``."""
    if n.size < 2:
        return float(values[-1])
    x = 1.0 / n
    if np.ptp(x) == 0:
        return float(values[-1])
    slope, intercept = np.polyfit(x, values, 1)
    return float(intercept)


def _verdict(est: float, extra: float, scale: float, sign: int) -> str:
    """Three-way verdict for ``sign * (quantity) > 0``."""
    a, b = sign * est, sign * extra
    if max(a, b) <= FAIL_REL_TOL * scale:
        return "FAIL"
    if min(a, b) > PASS_REL_TOL * scale:
        return "PASS"
    return "INDETERMINATE"


def van_doorn_margin(spec: BirthDeathSpec, window: float = TAIL_WINDOW) -> MarginReport:
    """``lambda_n + mu_n - sqrt(lambda_{n-1} mu_n) - sqrt(lambda_n mu_{n+1})`` for ``1 <= n < n_max``.

    The liminf is estimated as the minimum over the final ``window`` of
    indices and, separately, by extrapolation in ``1/n``; PASS needs both to
    be clearly positive, FAIL both non-positive.
    """
    n = np.arange(1, spec.n_max)
    lam = spec.birth(np.arange(spec.n_max + 1))
    mu = spec.death(np.arange(1, spec.n_max + 1))  # mu[k] = mu_{k+1}
    vals = lam[n] + mu[n - 1] - np.sqrt(lam[n - 1] * mu[n - 1]) - np.sqrt(lam[n] * mu[n])
    sel = _window(n.size, window)
    sel = slice(sel.start, n.size)
    est = float(np.min(vals[sel]))
    extra = _extrapolate(n[sel].astype(float), vals[sel])
    scale = float(np.mean(lam[n[sel]] + mu[n[sel] - 1]))
    verdict = _verdict(est, extra, scale, +1)
    return MarginReport("van_doorn", n, vals, est, extra, verdict, min(est, extra))


def exp_moment_margin(spec: BirthDeathSpec, window: float = TAIL_WINDOW) -> MarginReport:
    """``(lambda_n pi_n)^{1/n}`` for ``1 <= n <= n_max``; PASS iff the limsup is clearly below one."""
    n = np.arange(1, spec.n_max + 1)
    lam = spec.birth(n)
    vals = np.exp((np.log(lam) + log_potentials(spec)[n]) / n)
    sel = _window(n.size, window)
    sel = slice(sel.start, n.size)
    est = float(np.max(vals[sel]))
    extra = _extrapolate(n[sel].astype(float), vals[sel])
    verdict = _verdict(1.0 - est, 1.0 - extra, 1.0, +1)
    return MarginReport("exp_moment", n, vals, est, extra, verdict, 1.0 - max(est, extra))


@dataclass
class KappaResult:
    value: float
    error_bar: float

    def to_dict(self):
        return {"value": self.value, "error_bar": self.error_bar}


def kappa_f(spec: BirthDeathSpec, law: StationaryLaw) -> KappaResult:
    """``sum_n f(n) pi_tilde_n`` with the geometric tail folded into an error bar."""
    fv = spec.f_values()
    value = float(np.dot(fv, law.pi_tilde))
    rho = law.tail_ratio
    c = spec.growth_constant()
    p_top = float(law.pi_tilde[-1])
    err = c * p_top * ((1 + spec.n_max) * rho / (1 - rho) + rho / (1 - rho) ** 2)
    return KappaResult(value, float(err))


def _poisson_route(a: np.ndarray, p: np.ndarray, fbar: np.ndarray) -> float:
    m = a - np.outer(np.ones(p.size), p)
    try:
        g = linalg.solve(m, -fbar)
    except linalg.LinAlgError as exc:
        raise SingularSystem(f"Poisson equation system is singular: {exc}") from exc
    if not np.all(np.isfinite(g)):
        raise SingularSystem("Poisson equation solution is not finite")
    return float(2.0 * np.sum(p * fbar * g))


def _spectral_gap(spec: BirthDeathSpec, p: np.ndarray) -> float:
    from scipy.linalg import eigh_tridiagonal

    lam, mu = spec.rates()
    diag = -(lam * (np.arange(lam.size) < lam.size - 1) + mu)
    off = -np.sqrt(lam[:-1] * mu[1:])
    ev = eigh_tridiagonal(-diag, off, eigvals_only=True)
    nonzero = np.sort(np.abs(ev))[1]
    return float(nonzero)


def _oracle_route(a: np.ndarray, p: np.ndarray, fbar: np.ndarray, horizon: float) -> tuple[float, list[float]]:
    """``2 int_0^T cov`` at ``T, 2T, 3T`` by matrix exponentials, then Aitken extrapolation."""
    k = p.size
    aug = np.zeros((k + 1, k + 1))
    aug[:k, :k] = a
    aug[:k, k] = fbar
    vals = []
    for mult in (1, 2, 3):
        integral = linalg.expm(aug * (mult * horizon))[:k, k]
        vals.append(float(2.0 * np.sum(p * fbar * integral)))
    s1, s2, s3 = vals
    denom = (s3 - s2) - (s2 - s1)
    if denom != 0 and abs(s3 - s2) < abs(s2 - s1):
        return s3 - (s3 - s2) ** 2 / denom, vals
    return s3, vals


@dataclass
class SigmaResult:
    value: float
    poisson: float
    oracle: float
    oracle_partials: list[float]
    horizon: float
    n_max: int
    doublings: int
    rtol: float
    conditions: dict = field(default_factory=dict)

    def to_dict(self):
        return {"value": self.value, "poisson": self.poisson, "oracle": self.oracle,
                "oracle_partials": self.oracle_partials, "horizon": self.horizon, "n_max": self.n_max,
                "doublings": self.doublings, "rtol": self.rtol, "conditions": self.conditions}


def sigma_f2(spec: BirthDeathSpec, law: StationaryLaw | None = None, rtol: float = ORACLE_RTOL,
             gap_multiple: float = 8.0) -> SigmaResult:
    """Asymptotic variance of ``int f(X_s) ds`` by two routes.

    The Poisson-equation route solves ``(A - 1 p^T) g = -(f - kappa)`` on
    the reflected truncation; the oracle integrates the stationary
    autocovariance with matrix exponentials up to ``gap_multiple`` relaxation
    times and extrapolates the tail.  If the routes differ by more than
    ``rtol`` the truncation is doubled (up to the tables' limit) before
    giving up.
    """
    conditions = {"van_doorn": van_doorn_margin(spec).verdict, "exp_moment": exp_moment_margin(spec).verdict}
    if any(v != "PASS" for v in conditions.values()):
        warnings.warn(f"ergodicity conditions not confirmed ({conditions}); sigma_f^2 computed anyway",
                      RuntimeWarning, stacklevel=2)
    cur = spec
    doublings = 0
    while True:
        lw = law if (law is not None and cur is spec) else stationary(cur, mass_tol=1.0)
        p = lw.truncated()
        fv = cur.f_values()
        fbar = fv - float(np.dot(p, fv))
        a = cur.generator()
        pois = _poisson_route(a, p, fbar)
        gap = _spectral_gap(cur, p)
        horizon = gap_multiple / gap
        orc, partials = _oracle_route(a, p, fbar, horizon)
        scale = max(abs(pois), abs(orc), 1e-300)
        if abs(pois - orc) <= rtol * max(scale, 1.0) or abs(pois - orc) <= rtol * scale:
            return SigmaResult(pois, pois, orc, partials, horizon, cur.n_max, doublings, rtol, conditions)
        nxt = min(2 * cur.n_max, cur.max_n_max())
        if nxt <= cur.n_max:
            raise OracleDisagreement(f"Poisson route {pois:.10g} vs oracle {orc:.10g} at n_max={cur.n_max}")
        cur = cur.with_n_max(nxt)
        doublings += 1


@dataclass(eq=False)
class Trajectory:
    """Piecewise-constant path: ``states[i]`` holds on ``[times[i], times[i+1])``; ``times[-1]`` is the horizon."""

    times: np.ndarray
    states: np.ndarray
    horizon: float

    def time_average(self, values: np.ndarray) -> float:
        hold = np.diff(self.times)
        return float(np.sum(values[self.states[:-1]] * hold) / self.horizon)

    def fraction_at(self, state: int) -> float:
        hold = np.diff(self.times)
        return float(np.sum(hold[self.states[:-1] == state]) / self.horizon)

    def holding_times(self, state: int) -> np.ndarray:
        """Complete sojourns in ``state`` (the one cut by the horizon is dropped)."""
        hold = np.diff(self.times)
        mask = self.states[:-1] == state
        mask[-1] = False
        return hold[mask]

    def to_csv(self, fh) -> None:
        fh.write("time,state\n")
        for t, s in zip(self.times[:-1], self.states[:-1]):
            fh.write(f"{float(t)!r},{int(s)}\n")


def simulate_ssa(spec: BirthDeathSpec, t: float, rng: np.random.Generator, init="zero",
                 block: int = 65536) -> Trajectory:
    """Exact event-driven simulation on ``[0, t]``.

    ``init`` is ``"zero"``, a fixed state, or ``"stationary"`` (drawn from the
    truncated stationary law).  Leaving ``0..n_max`` raises StateOverflow.
    """
    if not t > 0:
        raise ValueError("horizon must be positive")
    lam, mu = spec.rates()
    total = lam + mu
    p_up = lam / total
    if init == "zero":
        state = 0
    elif init == "stationary":
        p = stationary(spec, mass_tol=1.0).truncated()
        state = int(rng.choice(p.size, p=p))
    else:
        state = int(init)
        if not 0 <= state <= spec.n_max:
            raise ValueError(f"initial state {state} outside 0..{spec.n_max}")
    times = [0.0]
    states = [state]
    now = 0.0
    top = spec.n_max
    total_l = total.tolist()
    p_up_l = p_up.tolist()
    while True:
        e = rng.standard_exponential(block).tolist()
        u = rng.random(block).tolist()
        for i in range(block):
            now += e[i] / total_l[state]
            if now >= t:
                times.append(float(t))
                states.append(state)
                return Trajectory(np.asarray(times), np.asarray(states, dtype=np.int64), float(t))
            if u[i] < p_up_l[state]:
                if state == top:
                    raise StateOverflow(f"state exceeded n_max={top} at time {now:.6g}")
                state += 1
            else:
                state -= 1
            times.append(now)
            states.append(state)


@dataclass
class CycleExtraction(Sequence):
    """Cycles plus the trajectory pieces that do not form complete cycles."""

    cycles: CycleBatch
    discarded_initial: float  # time before the first visit to 0
    incomplete_final: float  # time after the last return to 0

    def __len__(self):
        return len(self.cycles)

    def __getitem__(self, i):
        return self.cycles[i]

    def to_dict(self):
        return {"cycles": len(self.cycles), "discarded_initial": self.discarded_initial,
                "incomplete_final": self.incomplete_final}


def bd_cycles(traj: Trajectory, f, keep_paths: bool = False) -> CycleExtraction:
    """Cycles between successive entries to state 0.

    ``f`` is an array indexed by state (or a callable on state arrays).
    Per cycle: ``tau`` is the return time, ``xi`` the exact integral of
    ``f(X)``, ``eta`` the largest absolute running integral, attained at a
    jump since the integrand is piecewise constant.
    """
    fv = f(np.arange(int(traj.states.max()) + 1)) if callable(f) else np.asarray(f, dtype=float)
    times, states = traj.times, traj.states
    hold = np.diff(times)
    cum = np.concatenate([[0.0], np.cumsum(fv[states[:-1]] * hold)])
    # every event changes the state by one, so each index at 0 is an entry
    starts = np.nonzero(states[:-1] == 0)[0]
    if starts.size < 2:
        raise NoReturn("trajectory does not complete a cycle at state 0 within the horizon")
    b0, b1 = starts[:-1], starts[1:]
    taus = times[b1] - times[b0]
    xis = cum[b1] - cum[b0]
    # running integral relative to each cycle start, at every event inside the cycle
    lengths = b1 - b0
    seg_id = np.repeat(np.arange(b0.size), lengths)
    idx = np.arange(b0[0] + 1, b1[-1] + 1)
    running = np.abs(cum[idx] - cum[b0][seg_id])
    etas = np.maximum.reduceat(running, np.concatenate([[0], np.cumsum(lengths)[:-1]]))
    paths = None
    if keep_paths:
        paths = []
        for s, e in zip(b0, b1):
            offsets = times[s + 1 : e + 1] - times[s]
            paths.append((offsets, (cum[s + 1 : e + 1] - cum[s])[:, None]))
    cyc = CycleBatch(taus, xis[:, None], etas, paths)
    return CycleExtraction(cyc, float(times[starts[0]]), float(traj.horizon - times[starts[-1]]))


def spec_report(spec: BirthDeathSpec) -> dict:
    """Conditions, stationary law, kappa_f and sigma_f^2 in one bundle."""
    law = stationary(spec)
    vd = van_doorn_margin(spec)
    em = exp_moment_margin(spec)
    kap = kappa_f(spec, law)
    sig = sigma_f2(spec, law)
    return {
        "spec": spec.to_dict(),
        "van_doorn": {"window_estimate": vd.window_estimate, "extrapolated": vd.extrapolated, "verdict": vd.verdict},
        "exp_moment": {"window_estimate": em.window_estimate, "extrapolated": em.extrapolated, "verdict": em.verdict},
        "stationary": {"tail_mass_bound": law.tail_mass_bound, "tail_ratio": law.tail_ratio,
                       "pi_tilde": law.pi_tilde.tolist()},
        "kappa_f": kap.to_dict(),
        "sigma_f2": sig.to_dict(),
        "growth_constant": spec.growth_constant(),
    }
