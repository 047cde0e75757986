"""The acceptance suite: ten end-to-end checks shared by the CLI and the tests.

Every check is a function ``(seed, threads) -> CheckResult`` whose report is
a pure function of the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import birth_death as bd
from .brownian import DyadicBrownianPath
from .coupling.dyadic import couple_poisson_brownian, walk_coupling_sups
from .coupling.pipeline import pilot, run_coupling, sample_limit_wiener
from .coupling.wstar import construct_wstar, wstar_conditional_variance
from .cycle_sim import empirical_moments
from .laws import BernoulliLaw, ExponentialLaw, GaussianLaw, ShiftedLaw
from .model_core import CycleMoments, derive_asymptotics, validate_params
from .models import stopped_sum_lattice
from .parallel import ordered_map
from .report import canonical_json
from .rng import stream
from .verify import (
    FAIL,
    LOG_CONSISTENT,
    PASS,
    CheckResult,
    covariance_check,
    poisson_tail_check,
    rate_fit,
    tail_fit,
    window_max_check,
)

DEFAULT_SEED = 12345


def _verdict(ok) -> str:
    return PASS if ok else FAIL


# 1 -------------------------------------------------------------------------

WORKED_EXAMPLES = [
    (
        dict(d=1, mean_xi=[0.0], mean_tau=1.0, cov_xi=[[1.0]], var_tau=1.0, cov_xi_tau=[0.0]),
        dict(mu=1.0, kappa=[0.0], sigma2=[[1.0]], beta=[0.0], v2=[[1.0]], gamma=1.0, lambda_=1.0, alpha=[0.0]),
    ),
    (
        dict(d=1, mean_xi=[1.0], mean_tau=1.0, cov_xi=[[1.0]], var_tau=1.0, cov_xi_tau=[1.0]),
        dict(mu=1.0, kappa=[1.0], sigma2=[[0.0]], beta=[1.0], v2=[[0.0]], gamma=1.0, lambda_=1.0, alpha=[0.0]),
    ),
    (
        dict(d=1, mean_xi=[3.0], mean_tau=2.0, cov_xi=[[4.0]], var_tau=2.0, cov_xi_tau=[1.0]),
        dict(mu=2.0, kappa=[1.5], sigma2=[[2.75]], beta=[0.5], v2=[[3.5]], gamma=1.0, lambda_=2.0, alpha=[-1.0]),
    ),
]


def _random_moments(rng) -> CycleMoments:
    d = int(rng.integers(1, 5))
    a = rng.normal(size=(d + 1, d + 2))
    joint = a @ a.T
    return CycleMoments(d, rng.normal(size=d), float(rng.uniform(0.2, 5.0)), joint[:d, :d],
                        float(joint[d, d]), joint[:d, d], 0)


def criterion_1(seed: int = DEFAULT_SEED, threads: int = 1) -> CheckResult:
    errors = []
    for moments, expected in WORKED_EXAMPLES:
        p = derive_asymptotics(CycleMoments(**moments))
        err = max(float(np.max(np.abs(np.asarray(getattr(p, k), dtype=float) - np.asarray(v, dtype=float))))
                  for k, v in expected.items())
        errors.append(err)
    rng = stream(seed, "acceptance", 1)
    residuals = []
    for _ in range(100):
        m = _random_moments(rng)
        rep = validate_params(derive_asymptotics(m), m)
        residuals.append(max(e.residual for e in rep.entries))
    ok = max(errors) <= 1e-12 and max(residuals) < 1e-10
    numbers = {"example_max_abs_error": errors, "random_max_residual": max(residuals), "random_inputs": 100}
    return CheckResult("acceptance_1_parameter_algebra", _verdict(ok), numbers,
                       {"examples": [m for m, _ in WORKED_EXAMPLES], "random_inputs": 100}, seed)


# 2 -------------------------------------------------------------------------

SINGULAR_MOMENTS = dict(d=2, mean_xi=[1.0, 2.0], mean_tau=1.0, cov_xi=[[1.0, 2.0], [2.0, 4.0]], var_tau=1.0,
                        cov_xi_tau=[0.5, 1.0])
COV_TIMES = [1.0, 2.0, 4.0, 8.0]
COV_PAIRS = [(0, 1), (1, 2), (2, 3), (3, 3)]


def criterion_2(seed: int = DEFAULT_SEED, threads: int = 1, replicates: int = 10_000) -> CheckResult:
    p = derive_asymptotics(CycleMoments(**SINGULAR_MOMENTS))
    rank = int(np.sum(np.linalg.eigvalsh(p.sigma2) > 1e-12))
    times = np.asarray(COV_TIMES)
    draws = ordered_map(lambda r: sample_limit_wiener(p, times, stream(seed, "acceptance", 2, r)),
                        range(replicates), threads)
    check = covariance_check(np.asarray(draws), times, COV_PAIRS, seed=seed)
    numbers = dict(check.numbers, sigma2_rank=rank)
    return CheckResult("acceptance_2_limit_wiener_covariance", _verdict(check.passed and rank == 1), numbers,
                       dict(check.inputs, moments=SINGULAR_MOMENTS), seed)


# 3 -------------------------------------------------------------------------

WSTAR_LAGS = (8, 32, 128)
WSTAR_HORIZON = 2**14
CORR_BLOCK = 32


def _wstar_replicate(seed, r):
    rng = stream(seed, "acceptance", 3, r)
    counts, _ = couple_poisson_brownian(1.0, WSTAR_HORIZON, rng)
    b = DyadicBrownianPath.sample(WSTAR_HORIZON, 1, rng)
    w = construct_wstar(b, counts, counts.total, rng)
    vals = w.values[:, 0]
    sq = []
    for l in WSTAR_LAGS:
        m = (vals.size - 1) // l
        inc = np.diff(vals[: m * l + 1 : l])
        sq.append((float(np.sum(inc**2)), int(inc.size)))
    edges = np.arange(0, WSTAR_HORIZON + 1, CORR_BLOCK, dtype=float)
    n_edges = counts.count(edges).astype(np.int64)
    dw = np.diff(vals[n_edges])
    dn = np.diff(n_edges).astype(float)
    cond = wstar_conditional_variance(counts, WSTAR_HORIZON, list(WSTAR_LAGS)) / np.asarray(WSTAR_LAGS)
    return sq, dw, dn, cond, w.unresolved_cells


def criterion_3(seed: int = DEFAULT_SEED, threads: int = 1, replicates: int = 500) -> CheckResult:
    outs = ordered_map(lambda r: _wstar_replicate(seed, r), range(replicates), threads)
    ratios, counts = [], []
    for i, l in enumerate(WSTAR_LAGS):
        total = sum(o[0][i][0] for o in outs)
        n = sum(o[0][i][1] for o in outs)
        ratios.append(total / (n * l))
        counts.append(n)
    dw = np.concatenate([o[1] for o in outs])
    dn = np.concatenate([o[2] for o in outs])
    corr = float(np.corrcoef(dw, dn)[0, 1])
    se = 1.0 / math.sqrt(dw.size)
    cond = np.mean([o[3] for o in outs], axis=0)
    ok = all(0.97 <= x <= 1.03 for x in ratios) and abs(corr) <= 3 * se
    numbers = {"lags": list(WSTAR_LAGS), "variance_ratio": ratios, "increments": counts,
               "conditional_variance_ratio": cond.tolist(), "correlation": corr, "correlation_se": se,
               "correlation_blocks": int(dw.size), "unresolved_cells": int(sum(o[4] for o in outs))}
    inputs = {"lambda": 1.0, "horizon": WSTAR_HORIZON, "replicates": replicates, "lags": list(WSTAR_LAGS),
              "block": CORR_BLOCK}
    return CheckResult("acceptance_3_wstar_construction", _verdict(ok), numbers, inputs, seed)


# 4 -------------------------------------------------------------------------

WALK_HORIZONS = [2**k for k in range(8, 15)]


def criterion_4(seed: int = DEFAULT_SEED, threads: int = 1, replicates: int = 200) -> CheckResult:
    law = BernoulliLaw(0.5)
    fits = {}
    for coupler in ("dyadic", "independent"):
        tasks = [(n, r) for n in WALK_HORIZONS for r in range(replicates)]
        sups = ordered_map(lambda task: walk_coupling_sups(law, task[0], stream(seed, "acceptance", 4, coupler, *task),
                                                            coupler), tasks, threads)
        sups = np.asarray(sups).reshape(len(WALK_HORIZONS), replicates)
        fits[coupler] = rate_fit(WALK_HORIZONS, list(sups))
    exp_ind = fits["independent"].exponent
    ok = fits["dyadic"].verdict == LOG_CONSISTENT and 0.4 <= exp_ind <= 0.6
    numbers = {"dyadic": fits["dyadic"].to_dict(), "dyadic_verdict": fits["dyadic"].verdict,
               "independent": fits["independent"].to_dict(), "independent_exponent": exp_ind}
    inputs = {"law": law.to_dict(), "horizons": WALK_HORIZONS, "replicates": replicates}
    return CheckResult("acceptance_4_rate_discrimination", _verdict(ok), numbers, inputs, seed)


# 5 -------------------------------------------------------------------------

TAIL_HORIZON = 2.0**12


def criterion_5(seed: int = DEFAULT_SEED, threads: int = 1, replicates: int = 500) -> CheckResult:
    model = stopped_sum_lattice()
    run = run_coupling(model, [TAIL_HORIZON], coupler="dyadic", replicates=replicates, seed=seed, threads=threads)
    sups = run.sups()[TAIL_HORIZON]
    # b and its interval do not depend on c: the fitted prefactor absorbs any shift
    fit = tail_fit(sups, TAIL_HORIZON, 0.0, seed=seed)
    slack = [float(np.sum(r.phi_sups) - r.total_sup) for r in run.realizations]
    ok = fit.verdict == PASS and run.all_triangles_ok()
    numbers = {"tail_fit": fit.to_dict(), "triangle_all_ok": run.all_triangles_ok(),
               "triangle_min_slack": min(slack), "mean_total_sup": float(np.mean(sups)),
               "max_total_sup": float(np.max(sups)), "pilot": run.pilot.to_dict()}
    inputs = {"model": model.name, "t": TAIL_HORIZON, "replicates": replicates, "coupler": "dyadic"}
    return CheckResult("acceptance_5_pipeline_tail", _verdict(ok), numbers, inputs, seed)


# 6 -------------------------------------------------------------------------

POISSON_T_GRID = [4.0, 8.0, 16.0, 32.0, 64.0]


def criterion_6(seed: int = DEFAULT_SEED, threads: int = 1, replicates: int = 10_000) -> CheckResult:
    summary = pilot(stopped_sum_lattice(), seed)
    p = summary.params
    check = poisson_tail_check(p.gamma, p.mu, p.lambda_, summary.constants.r, POISSON_T_GRID, replicates, seed)
    numbers = dict(check.numbers, r=summary.constants.r, s1=summary.constants.s1)
    return CheckResult("acceptance_6_poisson_inverse_tail", check.verdict, numbers, check.inputs, seed)


# 7 -------------------------------------------------------------------------

WINDOW_N_GRID = [2**8, 2**10, 2**12]


def criterion_7(seed: int = DEFAULT_SEED, threads: int = 1) -> CheckResult:
    laws = {"gaussian": GaussianLaw(0.0, 1.0), "centered_exponential": ShiftedLaw(ExponentialLaw(1.0), -1.0)}
    checks = ordered_map(lambda item: window_max_check(item[1], WINDOW_N_GRID, seed=seed), list(laws.items()),
                         threads)
    numbers = {name: {"verdict": c.verdict, **c.numbers} for name, c in zip(laws, checks)}
    ok = all(c.passed for c in checks)
    inputs = {"laws": {k: v.to_dict() for k, v in laws.items()}, "n_grid": WINDOW_N_GRID}
    return CheckResult("acceptance_7_window_maxima", _verdict(ok), numbers, inputs, seed)


# 8 and 9 -------------------------------------------------------------------

MM1 = dict(birth="1", death="2", n_max=200, f="n")
MMINF = dict(birth="1", death="n", n_max=60, f="n")
SSA_HORIZON = 4.0e6  # about 2e6 cycles; the 5% band is then > 3 standard errors
SSA_SMALL_HORIZON = 2.0e5  # the 1e5 cycle-equivalent budget, reported for reference


def _regenerative_variance(cycles) -> tuple[float, float]:
    """Time-average variance ``sum (xi - kappa tau)^2 / sum tau`` and its delta-method SE."""
    xi = cycles.xis[:, 0]
    tau = cycles.taus
    kappa = xi.sum() / tau.sum()
    z = (xi - kappa * tau) ** 2
    est = z.sum() / tau.sum()
    resid = z - est * tau
    se = float(np.std(resid, ddof=1) / (math.sqrt(tau.size) * tau.mean()))
    return float(est), se


def criterion_8(seed: int = DEFAULT_SEED, threads: int = 1) -> CheckResult:
    inf = bd.BirthDeathSpec.from_dict(MMINF)
    sig_inf = bd.sigma_f2(inf)
    inf_ok = (sig_inf.n_max == 60 and abs(sig_inf.poisson - 2) <= 1e-3 and abs(sig_inf.oracle - 2) <= 1e-3)

    mm1 = bd.BirthDeathSpec.from_dict(MM1)
    sig = bd.sigma_f2(mm1)
    fv = mm1.f_values()
    runs = {}
    for label, horizon in (("main", SSA_HORIZON), ("reference_1e5", SSA_SMALL_HORIZON)):
        traj = bd.simulate_ssa(mm1, horizon, stream(seed, "acceptance", 8, label))
        ext = bd.bd_cycles(traj, fv)
        est, se = _regenerative_variance(ext.cycles)
        runs[label] = {"horizon": horizon, "cycles": len(ext), "estimate": est, "se": se,
                       "rel_error": est / sig.poisson - 1.0}
    ssa_ok = abs(runs["main"]["rel_error"]) <= 0.05

    vd = bd.van_doorn_margin(mm1)
    target = 3 - 2 * math.sqrt(2)
    vd_err = float(max(np.max(np.abs(vd.values - target)), abs(vd.window_estimate - target)))
    vd_ok = vd_err <= 1e-12 and vd.verdict == PASS

    numbers = {
        "mm_inf": {"poisson": sig_inf.poisson, "oracle": sig_inf.oracle, "n_max": sig_inf.n_max, "ok": inf_ok},
        "mm1": {"poisson": sig.poisson, "oracle": sig.oracle, "ssa": runs, "ok": ssa_ok},
        "van_doorn": {"window_estimate": vd.window_estimate, "max_abs_error": vd_err, "verdict": vd.verdict,
                      "ok": vd_ok},
    }
    inputs = {"mm_inf": MMINF, "mm1": MM1, "ssa_horizon": SSA_HORIZON, "reference_horizon": SSA_SMALL_HORIZON}
    return CheckResult("acceptance_8_birth_death_constants", _verdict(inf_ok and ssa_ok and vd_ok), numbers,
                       inputs, seed)


def criterion_9(seed: int = DEFAULT_SEED, threads: int = 1) -> CheckResult:
    mm1 = bd.BirthDeathSpec.from_dict(MM1)
    sig = bd.sigma_f2(mm1)
    law = bd.stationary(mm1)
    out = {}
    for label, horizon in (("main", SSA_HORIZON), ("reference_1e5", SSA_SMALL_HORIZON)):
        traj = bd.simulate_ssa(mm1, horizon, stream(seed, "acceptance", 9, label))
        ext = bd.bd_cycles(traj, mm1.f_values())
        moments, _ = empirical_moments(ext.cycles)
        p = derive_asymptotics(moments)
        s2 = float(p.sigma2[0, 0])
        out[label] = {"horizon": horizon, "cycles": len(ext), "sigma2": s2, "kappa": float(p.kappa[0]),
                      "mean_tau": moments.mean_tau, "rel_error": s2 / sig.value - 1.0}
    ok = abs(out["main"]["rel_error"]) <= 0.05
    numbers = {"sigma_f2": sig.value, "kappa_f": bd.kappa_f(mm1, law).value,
               "mean_tau_exact": 1.0 / (mm1.birth(np.array([0]))[0] * law.truncated()[0]), "cycles": out}
    inputs = {"mm1": MM1, "ssa_horizon": SSA_HORIZON, "reference_horizon": SSA_SMALL_HORIZON}
    return CheckResult("acceptance_9_cross_module_identity", _verdict(ok), numbers, inputs, seed)


# 10 ------------------------------------------------------------------------

CRITERIA = {
    1: criterion_1,
    2: criterion_2,
    3: criterion_3,
    4: criterion_4,
    5: criterion_5,
    6: criterion_6,
    7: criterion_7,
    8: criterion_8,
    9: criterion_9,
}

TITLES = {
    1: "parameter algebra",
    2: "limit Wiener covariance (singular sigma^2)",
    3: "W* construction variance and independence",
    4: "coupling rate discrimination",
    5: "pipeline tail and triangle inequality",
    6: "Poisson inverse tail bound",
    7: "window maxima bound",
    8: "birth-death constants",
    9: "cross-module sigma^2 identity",
    10: "reproducibility across runs and threads",
}


def report_json(result: CheckResult) -> str:
    return canonical_json(result.report())


def criterion_10(seed: int = DEFAULT_SEED, threads: int = 1, baseline: dict | None = None,
                 criteria=None) -> CheckResult:
    """Re-run criteria with another thread count and compare report JSON byte for byte.

    ``baseline`` maps criterion number to report JSON from an earlier run;
    missing entries are produced here with ``threads``.
    """
    criteria = sorted(CRITERIA) if criteria is None else sorted(criteria)
    baseline = dict(baseline or {})
    other = 2 if threads <= 1 else 1
    rows = {}
    for k in criteria:
        if k not in baseline:
            baseline[k] = report_json(CRITERIA[k](seed, threads))
        again = report_json(CRITERIA[k](seed, other))
        rows[str(k)] = {"identical": again == baseline[k], "bytes": len(again)}
    ok = all(r["identical"] for r in rows.values())
    return CheckResult("acceptance_10_reproducibility", _verdict(ok), {"criteria": rows},
                       {"criteria": criteria, "threads": [threads, other]}, seed)


# planted self-tests ---------------------------------------------------------

PLANTED_HORIZONS = [2.0**k for k in range(8, 15)]
PLANTED_C = 1.5


def planted_signal(seed: int = DEFAULT_SEED, replicates: int = 500) -> CheckResult:
    """``c log t + Exp(2)`` sups: the tail fit must PASS with ``b`` near 2 and the rate be LOG-CONSISTENT."""
    rng = stream(seed, "planted", "signal")
    samples = [PLANTED_C * math.log(t) + rng.exponential(0.5, replicates) for t in PLANTED_HORIZONS]
    fit = rate_fit(PLANTED_HORIZONS, samples, tail_seed=seed)
    tail = tail_fit(samples[-1], PLANTED_HORIZONS[-1], PLANTED_C, seed=seed)
    ok = fit.verdict == LOG_CONSISTENT and tail.verdict == PASS and tail.b_ci[0] <= 2.0 <= tail.b_ci[1]
    numbers = {"rate_fit": fit.to_dict(), "rate_verdict": fit.verdict, "tail_fit": tail.to_dict()}
    return CheckResult("planted_signal", _verdict(ok), numbers,
                       {"horizons": PLANTED_HORIZONS, "c": PLANTED_C, "replicates": replicates}, seed)


def planted_null(seed: int = DEFAULT_SEED, replicates: int = 500) -> CheckResult:
    """Square-root growth and a Cauchy tail: both must be rejected."""
    rng = stream(seed, "planted", "null")
    samples = [np.sqrt(t) * np.abs(rng.standard_normal(replicates)) for t in PLANTED_HORIZONS]
    fit = rate_fit(PLANTED_HORIZONS, samples, tail_seed=seed)
    heavy = PLANTED_C * math.log(PLANTED_HORIZONS[-1]) + np.abs(rng.standard_cauchy(replicates))
    tail = tail_fit(heavy, PLANTED_HORIZONS[-1], PLANTED_C, seed=seed)
    ok = fit.verdict != LOG_CONSISTENT and 0.4 <= fit.exponent <= 0.6 and tail.verdict == FAIL
    numbers = {"rate_fit": fit.to_dict(), "rate_verdict": fit.verdict, "exponent": fit.exponent,
               "tail_fit": tail.to_dict()}
    return CheckResult("planted_null", _verdict(ok), numbers,
                       {"horizons": PLANTED_HORIZONS, "c": PLANTED_C, "replicates": replicates}, seed)


PLANTED = {"planted_signal": planted_signal, "planted_null": planted_null}


@dataclass
class SuiteEntry:
    number: int
    result: CheckResult
    seconds: float

    def line(self) -> str:
        return f"acceptance {self.number:>2} {self.result.verdict}  {TITLES[self.number]} ({self.seconds:.1f}s)"


def run_suite(criteria=None, seed: int = DEFAULT_SEED, threads: int = 1, log=None) -> list[SuiteEntry]:
    """Run the selected criteria (default all ten) and return one entry per criterion."""
    import time

    criteria = sorted(set(range(1, 11)) if criteria is None else set(criteria))
    entries = []
    jsons = {}
    for k in criteria:
        t0 = time.perf_counter()
        if k == 10:
            base = {i: jsons[i] for i in jsons}
            res = criterion_10(seed, threads, base, criteria=[i for i in criteria if i != 10] or None)
        else:
            res = CRITERIA[k](seed, threads)
            jsons[k] = report_json(res)
        entry = SuiteEntry(k, res, time.perf_counter() - t0)
        if log is not None:
            log(entry.line())
        entries.append(entry)
    return entries
