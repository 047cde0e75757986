"""End-to-end coupled realizations of a cumulative process and its Gaussian limit.

One realization ties together, on common randomness,

* the cycle walk ``(T_k, S(T_k))``, coupled to a scalar Brownian motion
  ``B~`` (cycle lengths) and an independent ``d``-dimensional ``B``
  (the ``xi - beta tau`` part);
* a Poisson process ``N`` of rate ``lambda`` coupled to the same ``B~``;
* ``W*`` on the count scale of ``N`` built from ``B``;
* ``W~`` read off the inter-arrival walk of ``N`` by inverting the dyadic
  coupling (or, optionally, the first-order proxy ``-sqrt(mu) B~(u / mu)``),
  and an independent ``W°``;
* the composed limit ``W``.

The deviation ``S(u) - kappa u - sigma W_u`` splits into eight terms whose
sup-norms are reported next to the total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..brownian import DyadicBrownianPath, bridge_interpolate, brownian_at, next_power_of_two
from ..cycle_sim import (
    CumulativePath,
    CycleBatch,
    CycleModel,
    build_path,
    cumulative_values,
    empirical_moments,
    sample_cycles,
)
from ..errors import (
    ExpMomentScreenFailed,
    CouplerUnavailable,
    InsufficientDesign,
    InsufficientResolution,
    MissingIntermediate,
)
from ..model_core import AsymptoticParams, derive_asymptotics
from ..parallel import ordered_map
from ..rng import stream
from .dyadic import brownian_from_exponential_walk, couple_poisson_brownian, couple_sums_dyadic
from .wstar import compose_limit_wiener, construct_wstar

COUPLERS = ("dyadic", "independent")
N_PHI = 8
PILOT_CYCLES = 20_000
MAX_ATTEMPTS = 4
# total_sup <= sum of the Phi sups holds up to rounding in the eight-way split
TRIANGLE_RTOL = 1e-9
WTILDE_MODES = {
    "inverse": "W~: inverse dyadic coupling of the Poisson inter-arrival walk",
    "proxy": "W~: time-inversion proxy",
}


@dataclass
class PipelineState:
    """Intermediate paths evaluated on the evaluation set ``u``.

    Array fields are ``(len(u), d)`` unless noted.  Any field may be
    ``None``; :func:`phi_decomposition` names the ones it is missing.
    """

    u: np.ndarray | None = None  # (m,)
    s_u: np.ndarray | None = None  # S(u)
    s_at_m: np.ndarray | None = None  # S(T_{m(u)})
    s_at_floor_y: np.ndarray | None = None  # S(T_[y])
    t_at_floor_y: np.ndarray | None = None  # T_[y], (m,)
    y: np.ndarray | None = None  # N^{-1}(u / gamma), (m,)
    n_at_y: np.ndarray | None = None  # N(y), (m,)
    b_at_y: np.ndarray | None = None  # B_y
    wstar_at_n_y: np.ndarray | None = None  # W*_{N(y)}
    wstar_at_u: np.ndarray | None = None  # W*_{u / gamma}
    wtilde_u: np.ndarray | None = None  # (m,)
    w_u: np.ndarray | None = None  # composed W

    def missing(self, names) -> list[str]:
        return [n for n in names if getattr(self, n) is None]


_PHI_NEEDS = (
    "u", "s_u", "s_at_m", "s_at_floor_y", "t_at_floor_y", "y", "n_at_y",
    "b_at_y", "wstar_at_n_y", "wstar_at_u", "wtilde_u",
)


def phi_terms(state: PipelineState, p: AsymptoticParams) -> np.ndarray:
    """The eight terms on the evaluation set, shape ``(8, len(u), d)``."""
    missing = state.missing(_PHI_NEEDS)
    if missing:
        raise MissingIntermediate(f"missing intermediates: {', '.join(missing)}")
    u = state.u[:, None]
    y = state.y[:, None]
    t_fy = state.t_at_floor_y[:, None]
    n_y = state.n_at_y[:, None].astype(float)
    beta, alpha, mu, g, lam = p.beta[None, :], p.alpha[None, :], p.mu, p.gamma, p.lambda_
    vb = state.b_at_y @ p.v.T
    return np.stack([
        state.s_u - state.s_at_m,
        state.s_at_m - state.s_at_floor_y,
        state.s_at_floor_y - beta * t_fy + alpha * mu * y - vb,
        beta * (t_fy - g * n_y),
        -alpha * mu * (y - u / (lam * g) - state.wtilde_u[:, None] / (lam * math.sqrt(g))),
        vb - state.wstar_at_n_y @ p.v.T / math.sqrt(lam),
        (state.wstar_at_n_y - state.wstar_at_u) @ p.v.T / math.sqrt(lam),
        beta * (g * np.floor(u / g) + g - u),
    ])


def phi_decomposition(state: PipelineState, p: AsymptoticParams) -> np.ndarray:
    """Sup-norms (max over ``u`` of the max-norm) of the eight terms."""
    terms = phi_terms(state, p)
    if terms.shape[1] == 0:
        return np.zeros(N_PHI)
    return np.max(np.abs(terms), axis=(1, 2))


def total_deviation(state: PipelineState, p: AsymptoticParams) -> np.ndarray:
    """``S(u) - kappa u - sigma W_u`` on the evaluation set."""
    missing = state.missing(("u", "s_u", "w_u"))
    if missing:
        raise MissingIntermediate(f"missing intermediates: {', '.join(missing)}")
    return state.s_u - state.u[:, None] * p.kappa[None, :] - state.w_u @ p.sigma.T


@dataclass(eq=False)
class CoupledRealization:
    """One coupled ``(S, W)`` pair at horizon ``t`` with its diagnostics."""

    horizon: float
    replicate: int
    coupler: str
    phi_sups: np.ndarray
    total_sup: float
    path: CumulativePath | None = None
    W: np.ndarray | None = None  # W on path.grid
    diagnostics: dict = field(default_factory=dict)
    state: PipelineState | None = None

    @property
    def triangle_ok(self) -> bool:
        bound = float(np.sum(self.phi_sups))
        return self.total_sup <= bound + TRIANGLE_RTOL * max(1.0, bound)

    def csv_row(self) -> list:
        return [self.replicate, repr(self.horizon)] + [repr(float(x)) for x in self.phi_sups] + [repr(self.total_sup)]

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "replicate": self.replicate,
            "coupler": self.coupler,
            "phi_sups": [float(x) for x in self.phi_sups],
            "total_sup": self.total_sup,
            "diagnostics": self.diagnostics,
        }


CSV_HEADER = ["replicate", "t"] + [f"phi_{q}" for q in range(1, N_PHI + 1)] + ["total_sup"]


def _tree_size(t: float, p: AsymptoticParams, attempt: int) -> int:
    steps = t / p.mu
    spread = max(1.0, p.sd_tau / p.mu)
    return next_power_of_two(1.25 * steps + 8.0 * math.sqrt(steps) * spread + 16) << attempt


def _evaluation_set(t: float, grid: np.ndarray, regen: np.ndarray, gamma: float) -> np.ndarray:
    lattice = gamma * np.arange(int(math.floor(t / gamma)) + 1)
    return np.unique(np.concatenate([grid, regen[regen <= t], lattice[lattice <= t]]))


def _dyadic_walks(model: CycleModel, n: int, rng):
    laws = model.sum_laws
    if laws is None:
        raise CouplerUnavailable(f"model {model.name!r} has no cycle-sum laws for the dyadic coupler")
    bt = DyadicBrownianPath.sample(n, 1, rng)
    big_t, _ = couple_sums_dyadic(laws.tau_law, n, brownian=bt)
    b = DyadicBrownianPath.sample(n, laws.d, rng)
    eps = np.column_stack([couple_sums_dyadic(law, n, brownian=b.coordinate(i))[0]
                           for i, law in enumerate(laws.noise_laws)])
    taus = np.diff(big_t)
    xis = taus[:, None] * np.asarray(laws.beta)[None, :] + np.diff(eps, axis=0)
    cycles = CycleBatch(taus, xis, np.max(np.abs(xis), axis=1))
    return cycles, bt, b


def _independent_walks(model: CycleModel, n: int, rng):
    cycles = sample_cycles(model, rng, count=n)
    bt = DyadicBrownianPath.sample(n, 1, rng)
    b = DyadicBrownianPath.sample(n, model.d, rng)
    return cycles, bt, b


def _wtilde(mode, counts, bt, u, p, rng):
    if mode == "proxy":
        return -math.sqrt(p.mu) * bt.evaluate(u / p.mu, rng)[:, 0]
    g = np.concatenate([[0.0], counts.jump_times])
    w = brownian_from_exponential_walk(g, p.lambda_)
    return math.sqrt(p.gamma) * bridge_interpolate(1.0, w, u / p.gamma, rng)[:, 0]


def _realize_once(model, p, t, coupler, grid_step, rng, attempt, keep_state, wtilde):
    n = _tree_size(t, p, attempt)
    walks = _dyadic_walks if coupler == "dyadic" else _independent_walks
    cycles, bt, b = walks(model, n, rng)
    regen = cycles.regen_times()
    if not regen[-1] > t:
        return None
    counts, _ = couple_poisson_brownian(p.lambda_, n, rng, brownian=bt)
    l_top = int(math.floor(t / p.gamma)) + 1
    if counts.total < l_top + 1:
        return None

    path = build_path(cycles, t, grid_step)
    u = _evaluation_set(t, path.grid, regen, p.gamma)
    partial = path.partial_sums()
    m_u = np.searchsorted(regen, u, side="right") - 1
    y = counts.inverse(u / p.gamma)
    fy = np.floor(y).astype(np.int64)
    if fy.max(initial=0) >= regen.size:
        raise InsufficientResolution("y(u) beyond the simulated cycle walk")
    n_y = counts.count(y)

    wstar = construct_wstar(b, counts, l_top, rng)
    state = PipelineState(
        u=u,
        s_u=cumulative_values(cycles, regen, u),
        s_at_m=partial[m_u],
        s_at_floor_y=partial[fy],
        t_at_floor_y=regen[fy],
        y=y,
        n_at_y=n_y,
        b_at_y=b.evaluate(y, rng),
        wstar_at_n_y=wstar.values[n_y],
        wstar_at_u=wstar.evaluate(u / p.gamma, rng),
        wtilde_u=_wtilde(wtilde, counts, bt, u, p, rng),
    )
    wcirc = brownian_at(u, p.d, rng)
    state.w_u = compose_limit_wiener(state.wstar_at_u, state.wtilde_u, wcirc, p, u)

    phi = phi_decomposition(state, p)
    dev = total_deviation(state, p)
    total = float(np.max(np.abs(dev))) if dev.size else 0.0

    k = np.arange(int(math.floor(t / p.mu)) + 1)
    k = k[k < regen.size]
    m_t = int(m_u[-1])
    diag = {
        "attempts": attempt + 1,
        "tree_size": n,
        "evaluation_points": int(u.size),
        "wstar_terms": wstar.terms,
        "wstar_unresolved_cells": wstar.unresolved_cells,
        "sup_gammaN_minus_T": float(np.max(np.abs(p.gamma * counts.count(k.astype(float)) - regen[k]))),
        "sup_m_minus_y": float(np.max(np.abs(m_u - y))),
        "max_eta_to_m_plus_1": float(np.max(cycles.etas[: m_t + 1])),
        "wtilde": WTILDE_MODES[wtilde],
    }
    grid_idx = np.searchsorted(u, path.grid)
    return CoupledRealization(
        horizon=float(t),
        replicate=-1,
        coupler=coupler,
        phi_sups=phi,
        total_sup=total,
        path=path,
        W=state.w_u[grid_idx],
        diagnostics=diag,
        state=state if keep_state else None,
    )


def sample_limit_wiener(p: AsymptoticParams, times, rng: np.random.Generator, wtilde: str = "inverse") -> np.ndarray:
    """One draw of the composed Wiener process at ``times``, shape ``(len(times), d)``.

    Uses the same ingredients as a realization: a Poisson path of rate
    ``lambda`` coupled to a scalar Brownian motion, an independent
    ``d``-dimensional Brownian motion for ``W*``, ``W~`` read off the Poisson
    path and an independent ``W°`` on the null space of ``sigma``.
    """
    times = np.asarray(times, dtype=float)
    t = float(times.max())
    n = next_power_of_two(max(t / p.gamma, math.e))
    for attempt in range(MAX_ATTEMPTS):
        counts, bt = couple_poisson_brownian(p.lambda_, n << attempt, rng)
        l_top = int(math.floor(t / p.gamma)) + 1
        if counts.total >= l_top + 1:
            break
    else:
        raise InsufficientResolution("Poisson path too short for the requested times")
    b = DyadicBrownianPath.sample(bt.n, p.d, rng)
    wstar = construct_wstar(b, counts, l_top, rng)
    ws = wstar.evaluate(times / p.gamma, rng)
    wt = _wtilde(wtilde, counts, bt, times, p, rng)
    wc = brownian_at(times, p.d, rng)
    return compose_limit_wiener(ws, wt, wc, p, times)


def _horizon_key(t: float) -> int:
    return int(t) if float(t).is_integer() else int(np.float64(t).view(np.uint64))


def realize(
    model: CycleModel,
    p: AsymptoticParams,
    t: float,
    *,
    coupler: str = "dyadic",
    seed: int = 0,
    replicate: int = 0,
    grid_step: float = 1.0,
    keep_state: bool = False,
    wtilde: str = "inverse",
) -> CoupledRealization:
    """One coupled realization at horizon ``t`` from the stream ``(seed, coupler, t, replicate)``.

    If the simulated walk or Poisson path falls short of the horizon the
    realization is redrawn on a doubled tree from the next stream attempt.
    """
    if coupler not in COUPLERS:
        raise ValueError(f"coupler must be one of {COUPLERS}")
    if wtilde not in WTILDE_MODES:
        raise ValueError(f"wtilde must be one of {tuple(WTILDE_MODES)}")
    if not t >= math.e:
        raise ValueError("horizon must be at least e")
    for attempt in range(MAX_ATTEMPTS):
        rng = stream(seed, "coupling", coupler, _horizon_key(t), replicate, attempt)
        out = _realize_once(model, p, t, coupler, grid_step, rng, attempt, keep_state, wtilde)
        if out is not None:
            out.replicate = replicate
            return out
    raise InsufficientResolution(f"walk did not cover t={t} after {MAX_ATTEMPTS} attempts")


@dataclass
class Constants:
    """Moderate-deviation constants ``s1`` and ``r`` with the mgf estimate used."""

    s1: float
    r: float
    log_mgf_s1: float

    def to_dict(self):
        return {"s1": self.s1, "r": self.r, "log_mgf_s1": self.log_mgf_s1}


def select_constants(cycles, kappa, max_rel_se: float = 0.05, s_hi: float = 10.0, iters: int = 60) -> Constants:
    """Pick ``s1`` and ``r`` with ``r log E exp(s1 |xi - kappa tau|) < s1 / 6``.

    ``s1`` is the largest ``s`` (by bisection) whose empirical mgf still has
    relative standard error at most ``max_rel_se``; ``r`` is 99% of the
    largest admissible value at that ``s1``.
    """
    cycles = CycleBatch.from_samples(cycles)
    z = np.max(np.abs(cycles.xis - np.outer(cycles.taus, np.asarray(kappa, dtype=float))), axis=1)
    n = z.size

    def rel_se(s):
        with np.errstate(over="ignore", invalid="ignore"):
            e = np.exp(s * z)
            mean = e.mean()
            if not np.isfinite(mean):
                return math.inf
            return float(e.std(ddof=1) / math.sqrt(n) / mean)

    lo, hi = 0.0, s_hi
    if rel_se(hi) <= max_rel_se:
        lo = hi
    else:
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if rel_se(mid) <= max_rel_se:
                lo = mid
            else:
                hi = mid
    s1 = lo
    if s1 <= 0:
        raise ExpMomentScreenFailed("no s > 0 with a stable exponential moment estimate")
    log_phi = float(np.log(np.mean(np.exp(s1 * z))))
    r = 0.99 * s1 / (6.0 * log_phi) if log_phi > 0 else math.inf
    return Constants(s1, r, log_phi)


@dataclass
class PilotSummary:
    params: AsymptoticParams
    probes: dict
    constants: Constants | None
    source: str

    def to_dict(self):
        return {
            "params": self.params.to_dict(),
            "probes": self.probes,
            "constants": None if self.constants is None else self.constants.to_dict(),
            "params_source": self.source,
        }


def pilot(model: CycleModel, seed: int, params: AsymptoticParams | None = None,
          cycles: int = PILOT_CYCLES) -> PilotSummary:
    """Exponential-moment screen and parameters from a pilot sample.

    Parameters come from ``params`` if given, else the model's analytic
    moments, else the pilot's empirical moments.
    """
    batch = sample_cycles(model, stream(seed, "pilot"), count=cycles)
    moments, probes = empirical_moments(batch)
    if not probes.screen():
        raise ExpMomentScreenFailed(f"exponential probes unstable for model {model.name!r}")
    if params is not None:
        source = "given"
    elif model.analytic_moments is not None:
        params, source = derive_asymptotics(model.analytic_moments), "analytic"
    else:
        params, source = derive_asymptotics(moments), "empirical"
    try:
        constants = select_constants(batch, params.kappa)
    except ExpMomentScreenFailed:
        constants = None
    return PilotSummary(params, probes.to_dict(), constants, source)


@dataclass
class CouplingRun:
    realizations: list[CoupledRealization]
    rate_fit: object | None
    pilot: PilotSummary
    coupler: str
    horizons: list[float]
    replicates: int

    def sups(self) -> dict[float, np.ndarray]:
        out: dict[float, list] = {t: [] for t in self.horizons}
        for r in self.realizations:
            out[r.horizon].append(r.total_sup)
        return {t: np.asarray(v) for t, v in out.items()}

    def all_triangles_ok(self) -> bool:
        return all(r.triangle_ok for r in self.realizations)

    def csv_rows(self) -> list[list]:
        return [r.csv_row() for r in self.realizations]


def run_coupling(
    model: CycleModel,
    horizons,
    *,
    coupler: str = "dyadic",
    replicates: int = 100,
    seed: int = 0,
    params: AsymptoticParams | None = None,
    grid_step: float = 1.0,
    threads: int = 1,
    keep_paths: bool = False,
    wtilde: str = "inverse",
) -> CouplingRun:
    """Realizations over ``horizons x replicates`` plus a rate fit when the design allows one.

    Results are ordered by horizon, then replicate, whatever ``threads`` is.
    """
    from ..verify import rate_fit

    horizons = [float(t) for t in horizons]
    if any(not t >= math.e for t in horizons):
        raise ValueError("horizons must be at least e")
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    if coupler == "dyadic" and model.sum_laws is None:
        raise CouplerUnavailable(f"model {model.name!r} has no cycle-sum laws for the dyadic coupler")
    summary = pilot(model, seed, params)
    p = summary.params
    tasks = [(t, r) for t in horizons for r in range(replicates)]

    def job(task):
        t, r = task
        out = realize(model, p, t, coupler=coupler, seed=seed, replicate=r, grid_step=grid_step, wtilde=wtilde)
        if not keep_paths:
            out.path = None
            out.W = None
        return out

    results = ordered_map(job, tasks, threads)
    run = CouplingRun(results, None, summary, coupler, horizons, replicates)
    try:
        sups = run.sups()
        run.rate_fit = rate_fit(horizons, [sups[t] for t in horizons])
    except InsufficientDesign:
        run.rate_fit = None
    return run
