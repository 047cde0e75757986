"""Statistical checks: log-rate regression, exponential tails, Poisson inverse tails,
window maxima of random walks, and Brownian covariance.

Every check returns a result object with a ``verdict`` and a ``report()``
producing the canonical JSON document.  One-sided bound checks allow a
Monte Carlo cushion of ``CUSHION_SE`` standard errors, computed under the
bound being tested.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, stats

from .errors import InsufficientDesign, InsufficientReplicates
from .laws import ConstantLaw, IncrementLaw
from .report import make_report
from .rng import stream

# registry constants; override per call
LOG_EXPONENT_MAX = 0.15
LOG_R2_MIN = 0.9
MIN_HORIZONS = 4
MIN_OCTAVES = 3.0
MIN_RATE_REPLICATES = 50
MIN_TAIL_REPLICATES = 500
MIN_EXCEEDANCES = 10
HAZARD_RATIO_MIN = 0.5
MIN_COV_REPLICATES = 1000
COV_Z_MAX = 3.0
CUSHION_SE = 2.0
CONSISTENCY_SE = 3.0
C7_SLACK = 1.01

PASS, FAIL = "PASS", "FAIL"
LOG_CONSISTENT, NOT_LOG_CONSISTENT = "LOG-CONSISTENT", "NOT-LOG-CONSISTENT"


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float
    residuals: list[float]

    def to_dict(self):
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "residuals": self.residuals}


def linear_fit(x, y) -> LinearFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    res = stats.linregress(x, y)
    resid = y - (res.intercept + res.slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(res.slope), float(res.intercept), r2, resid.tolist())


# ---------------------------------------------------------------------------
# exponential tail fit


@dataclass
class TailFitResult:
    t: float
    c: float
    x: np.ndarray
    survival: np.ndarray
    a: float
    b: float
    b_ci: tuple[float, float]
    hazard_ratio: float
    n: int
    seed: int
    verdict: str

    def fitted(self) -> np.ndarray:
        return self.a * np.exp(-self.b * self.x)

    def csv_rows(self) -> list[list]:
        return [[repr(float(x)), repr(float(s)), repr(float(f))] for x, s, f in zip(self.x, self.survival, self.fitted())]

    def to_dict(self):
        return {
            "t": self.t,
            "c": self.c,
            "n": self.n,
            "x": self.x.tolist(),
            "survival": self.survival.tolist(),
            "a": self.a,
            "b": self.b,
            "b_ci": list(self.b_ci),
            "hazard_ratio": self.hazard_ratio,
        }

    def report(self, inputs=None):
        return make_report("tail_fit", inputs if inputs is not None else self.to_dict(), self.seed, self.verdict, self.to_dict())


def _log_survival_fit(x_sorted_desc_counts, grid, n):
    surv = x_sorted_desc_counts / n
    ok = surv > 0
    if ok.sum() < 2:
        return math.nan, math.nan
    fit = stats.linregress(grid[ok], np.log(surv[ok]))
    return math.exp(fit.intercept), -fit.slope


def _hazard(x, p, q):
    """Exponential MLE of the hazard on ``[p, q)``: events over time at risk."""
    events = np.count_nonzero((x >= p) & (x < q))
    exposure = float(np.sum(np.clip(x[x >= p] - p, 0.0, q - p)))
    return events / exposure if exposure > 0 else math.nan


def _exceed_counts(x_sorted, grid):
    return x_sorted.size - np.searchsorted(x_sorted, grid, side="left")


def tail_fit(
    samples,
    t: float,
    c: float,
    *,
    seed: int = 0,
    n_boot: int = 200,
    grid_points: int = 25,
    confidence: float = 0.95,
    hazard_min: float = HAZARD_RATIO_MIN,
    min_replicates: int = MIN_TAIL_REPLICATES,
) -> TailFitResult:
    """Fit ``P(sup - c log t >= x) ≈ a exp(-b x)`` above the median.

    The fit uses least squares on log-survival over an ``x``-grid running
    from the median to the largest ``x`` with at least ``MIN_EXCEEDANCES``
    exceedances.  PASS needs ``b > 0``, a bootstrap interval for ``b``
    excluding 0, and a hazard ratio of at least ``hazard_min``.  The ratio
    compares maximum-likelihood hazards on the upper and lower halves of
    the grid; it rejects tails that flatten out, such as polynomial ones.
    """
    x = np.sort(np.asarray(samples, dtype=float) - c * math.log(t))
    n = x.size
    if n < min_replicates:
        raise InsufficientReplicates(f"tail_fit needs at least {min_replicates} samples, got {n}")
    lo = float(np.median(x))
    hi = float(x[n - MIN_EXCEEDANCES])
    if not hi > lo:
        grid = np.array([lo])
        a, b, ci, ratio = 1.0, math.nan, (math.nan, math.nan), math.nan
        return TailFitResult(float(t), float(c), grid, _exceed_counts(x, grid) / n, a, b, ci, ratio, n, seed, FAIL)
    grid = np.linspace(lo, hi, grid_points)
    counts = _exceed_counts(x, grid)
    a, b = _log_survival_fit(counts, grid, n)
    mid = 0.5 * (lo + hi)
    h_low, h_high = _hazard(x, lo, mid), _hazard(x, mid, hi)
    ratio = h_high / h_low if h_low > 0 else math.nan

    rng = stream(seed, "tail_fit_bootstrap")
    boots = np.empty(n_boot)
    for i in range(n_boot):
        xb = np.sort(x[rng.integers(0, n, n)])
        boots[i] = _log_survival_fit(_exceed_counts(xb, grid), grid, n)[1]
    boots = boots[np.isfinite(boots)]
    alpha = (1.0 - confidence) / 2
    ci = (float(np.quantile(boots, alpha)), float(np.quantile(boots, 1 - alpha))) if boots.size else (math.nan, math.nan)
    ok = b > 0 and ci[0] > 0 and np.isfinite(ratio) and ratio >= hazard_min
    return TailFitResult(float(t), float(c), grid, counts / n, float(a), float(b), ci, float(ratio), n, seed,
                         PASS if ok else FAIL)


# ---------------------------------------------------------------------------
# rate regression


@dataclass
class RateFit:
    horizons: list[float]
    mean_sup: list[float]
    median_sup: list[float]
    quantile_sup: list[float]
    quantile_level: float
    replicates: list[int]
    mean_fit: LinearFit  # mean sup on log t; slope is c
    median_fit: LinearFit
    loglog_fit: LinearFit  # log mean sup on log t; slope is the exponent
    tail: TailFitResult | None
    exponent_max: float
    r2_min: float
    verdict: str

    @property
    def c(self) -> float:
        return self.mean_fit.slope

    @property
    def exponent(self) -> float:
        return self.loglog_fit.slope

    def to_dict(self):
        return {
            "horizons": self.horizons,
            "mean_sup": self.mean_sup,
            "median_sup": self.median_sup,
            "quantile_sup": self.quantile_sup,
            "quantile_level": self.quantile_level,
            "replicates": self.replicates,
            "c": self.c,
            "mean_fit": self.mean_fit.to_dict(),
            "median_fit": self.median_fit.to_dict(),
            "exponent": self.exponent,
            "loglog_fit": self.loglog_fit.to_dict(),
            "tail": None if self.tail is None else {
                "a": self.tail.a, "b": self.tail.b, "b_ci": list(self.tail.b_ci), "verdict": self.tail.verdict},
            "thresholds": {"exponent_max": self.exponent_max, "r2_min": self.r2_min},
        }

    def report(self, seed=None, inputs=None):
        return make_report("rate_fit", inputs if inputs is not None else self.to_dict(), seed, self.verdict, self.to_dict())


def rate_fit(
    horizons,
    samples,
    *,
    exponent_max: float = LOG_EXPONENT_MAX,
    r2_min: float = LOG_R2_MIN,
    quantile_level: float = 0.9,
    min_replicates: int = MIN_RATE_REPLICATES,
    tail_seed: int = 0,
) -> RateFit:
    """Regress sup statistics on ``log t`` and on log-log axes.

    ``samples[i]`` holds the sup values observed at ``horizons[i]``.  The
    verdict is LOG-CONSISTENT iff the log-log exponent is at most
    ``exponent_max`` and the log-linear fit of the mean has ``R^2 >= r2_min``.
    """
    horizons = [float(t) for t in horizons]
    if len(horizons) != len(samples):
        raise InsufficientDesign("one sample set per horizon is required")
    order = np.argsort(horizons)
    horizons = [horizons[i] for i in order]
    samples = [np.asarray(samples[i], dtype=float) for i in order]
    if len(horizons) < MIN_HORIZONS:
        raise InsufficientDesign(f"need at least {MIN_HORIZONS} horizons, got {len(horizons)}")
    if min(horizons) < math.e:
        raise InsufficientDesign("horizons must be at least e")
    if math.log2(horizons[-1] / horizons[0]) < MIN_OCTAVES - 1e-12:
        raise InsufficientDesign(f"horizons must span at least {MIN_OCTAVES:g} octaves")
    if min(s.size for s in samples) < min_replicates:
        raise InsufficientDesign(f"need at least {min_replicates} replicates per horizon")
    lt = np.log(horizons)
    means = np.array([s.mean() for s in samples])
    medians = np.array([np.median(s) for s in samples])
    quants = np.array([np.quantile(s, quantile_level) for s in samples])
    mean_fit = linear_fit(lt, means)
    median_fit = linear_fit(lt, medians)
    if np.all(means > 0):
        loglog = linear_fit(lt, np.log(means))
    else:
        loglog = LinearFit(math.nan, math.nan, math.nan, [])
    tail = None
    if samples[-1].size >= MIN_TAIL_REPLICATES:
        tail = tail_fit(samples[-1], horizons[-1], max(mean_fit.slope, 0.0), seed=tail_seed)
    ok = np.isfinite(loglog.slope) and loglog.slope <= exponent_max and mean_fit.r2 >= r2_min
    return RateFit(horizons, means.tolist(), medians.tolist(), quants.tolist(), quantile_level,
                   [int(s.size) for s in samples], mean_fit, median_fit, loglog, tail, exponent_max, r2_min,
                   LOG_CONSISTENT if ok else NOT_LOG_CONSISTENT)


# ---------------------------------------------------------------------------
# one-sided bound helpers


def _bound_ok(p_hat: float, bound: float, n: int, cushion: float = CUSHION_SE) -> tuple[bool, float]:
    """``p_hat <= bound + cushion * SE`` with the binomial SE computed at the bound."""
    b = min(max(bound, 0.0), 1.0)
    se = math.sqrt(b * (1 - b) / n)
    return p_hat <= bound + cushion * se, se


@dataclass
class CheckResult:
    check: str
    verdict: str
    numbers: dict
    inputs: dict
    seed: int | None = None
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def report(self):
        return make_report(self.check, self.inputs, self.seed, self.verdict, self.numbers)


# ---------------------------------------------------------------------------
# Poisson inverse tail


def poisson_inverse_bounds(gamma: float, mu: float, lam: float, r: float, t: float) -> dict:
    """Chernoff bound ``e^{-t/gamma} 2^{[t/gamma]+1}`` and the final bound at the largest admissible ``x``."""
    k = math.floor(t / gamma) + 1
    x = 3.0 * t / (mu * r)
    return {
        "k": k,
        "x": x,
        "threshold": 2.0 * t / mu,
        "chernoff": math.exp(-t / gamma + k * math.log(2.0)),
        "bound": 2.0 * math.exp(-lam * (1.0 - 2.0 / math.e) * r * x / 3.0),
        "exact": float(stats.gamma.sf(2.0 * t / mu, k, scale=1.0 / lam)),
    }


def poisson_tail_check(
    gamma: float,
    mu: float,
    lam: float,
    r: float,
    t_grid,
    replicates: int = 10_000,
    seed: int = 0,
    x_grid=None,
) -> CheckResult:
    """Empirical ``P(N^{-1}(t/gamma) >= 2t/mu)`` against its exponential bound.

    ``N^{-1}(t/gamma)`` is drawn as ``Gamma([t/gamma]+1, lam)``; an
    independent draw of ``N(2t/mu) <= [t/gamma]`` from Poisson counts checks
    the two representations agree.  At each ``t`` the bound is evaluated at
    every ``x`` of ``x_grid`` admissible under ``x <= 3t/(mu r)`` (default:
    only the largest admissible ``x``, which gives the tightest bound).
    """
    if abs(lam * gamma - mu) > 1e-9 * mu:
        raise ValueError("parameters must satisfy lambda * gamma = mu")
    rows = []
    ok_all = True
    for t in t_grid:
        t = float(t)
        info = poisson_inverse_bounds(gamma, mu, lam, r, t)
        k = info["k"]
        g = stream(seed, "poisson_tail", "gamma", int(round(t * 1e6))).gamma(k, 1.0 / lam, replicates)
        p_hat = float(np.mean(g >= info["threshold"]))
        cnt = stream(seed, "poisson_tail", "path", int(round(t * 1e6))).poisson(lam * info["threshold"], replicates)
        p_path = float(np.mean(cnt <= k - 1))
        se_diff = math.sqrt(max(p_hat * (1 - p_hat) + p_path * (1 - p_path), 1e-300) / replicates)
        consistent = abs(p_hat - p_path) <= CONSISTENCY_SE * se_diff or p_hat == p_path
        xs = [info["x"]] if x_grid is None else [x for x in x_grid if x <= info["x"]]
        for x in xs:
            bound = 2.0 * math.exp(-lam * (1.0 - 2.0 / math.e) * r * x / 3.0)
            ok, se = _bound_ok(p_hat, bound, replicates)
            ok_chernoff, _ = _bound_ok(p_hat, info["chernoff"], replicates)
            row = {
                "t": t, "x": x, "p_hat": p_hat, "p_path": p_path, "exact": info["exact"],
                "bound": bound, "chernoff": info["chernoff"], "se_at_bound": se,
                "vacuous": bound >= 1.0, "bound_ok": ok, "chernoff_ok": ok_chernoff,
                "representations_agree": consistent,
            }
            ok_all &= ok and ok_chernoff and consistent
            rows.append(row)
    inputs = {"gamma": gamma, "mu": mu, "lambda": lam, "r": r, "t_grid": [float(t) for t in t_grid],
              "replicates": replicates, "x_grid": None if x_grid is None else list(x_grid)}
    return CheckResult("poisson_tail_check", PASS if ok_all else FAIL, {"rows": rows}, inputs, seed, rows)


# ---------------------------------------------------------------------------
# window maxima


@dataclass
class WindowConstants:
    s: float
    log_phi: float
    c7: float
    a7: float
    b7: float

    def to_dict(self):
        return {"s": self.s, "log_phi": self.log_phi, "c7": self.c7, "a7": self.a7, "b7": self.b7}

    def bound(self, x):
        return np.minimum(1.0, self.a7 * np.exp(-self.b7 * np.asarray(x, dtype=float)))


def window_constants(law: IncrementLaw, L: float, delta: float, s_max: float = 50.0) -> WindowConstants:
    """Explicit constants from the union/Chernoff argument.

    With ``phi = E exp(s (X - EX))``: ``c7 = 1.01 (L log phi + 1) / s``,
    ``a7 = 2 phi / (phi - 1)`` and ``b7 = s - delta log phi``, where ``s``
    minimizes ``c7`` subject to ``delta log phi < s``.
    """
    def lphi(s):
        v = law.log_mgf(s) - s * law.mean  # the walk is centered
        return v if np.isfinite(v) else math.inf

    hi = s_max
    while hi > 1e-6 and not (np.isfinite(lphi(hi)) and delta * lphi(hi) < hi):
        hi *= 0.9
    if hi <= 1e-6:
        raise ValueError("no s > 0 with a finite exponential moment and delta log phi(s) < s")

    def c7(s):
        return C7_SLACK * (L * lphi(s) + 1.0) / s

    res = optimize.minimize_scalar(c7, bounds=(1e-6, hi), method="bounded", options={"xatol": 1e-10})
    s = float(res.x)
    lp = lphi(s)
    phi = math.exp(lp)
    return WindowConstants(s, lp, c7(s), 2.0 * phi / (phi - 1.0), s - delta * lp)


def window_maxima(law: IncrementLaw, n: int, k_max: int, replicates: int, rng) -> np.ndarray:
    """``M[r, k] = max_{j<=n} max_{1<=i<=k} (Q_{j+i} - Q_j)`` for ``k = 0..k_max`` (``M[:, 0] = 0``)."""
    steps = law.sample(rng, (replicates, n + k_max)) - law.mean
    q = np.concatenate([np.zeros((replicates, 1)), np.cumsum(steps, axis=1)], axis=1)
    d = np.zeros((replicates, k_max + 1))
    base = q[:, : n + 1]
    for k in range(1, k_max + 1):
        d[:, k] = np.max(q[:, k : k + n + 1] - base, axis=1)
    return np.maximum.accumulate(np.maximum(d, 0.0), axis=1)


def window_max_check(
    law: IncrementLaw,
    n_grid,
    L: float = 2.0,
    delta: float = 0.5,
    replicates: int = 1000,
    seed: int = 0,
    x_grid=None,
) -> CheckResult:
    """Tail of the windowed maximum against explicit exponential constants.

    For each ``n`` and ``x`` the window length is ``[L log n + delta x]`` and
    the event is ``max >= c7 log n + x``.  PASS needs every empirical
    exceedance within the bound (2-SE cushion) and the median to grow with
    ``log n`` without exceeding ``c7 log n`` plus the bound's median offset.
    A constant law is degenerate: the maximum is 0 and the check passes.
    """
    x_grid = np.arange(0.0, 20.5, 0.5) if x_grid is None else np.asarray(x_grid, dtype=float)
    n_grid = [int(n) for n in n_grid]
    inputs = {"law": law.to_dict(), "n_grid": n_grid, "L": L, "delta": delta, "replicates": replicates,
              "x_grid": x_grid.tolist()}
    if isinstance(law, ConstantLaw) or law.var == 0:
        return CheckResult("window_max_check", PASS, {"degenerate": True, "max": 0.0}, inputs, seed)
    wc = window_constants(law, L, delta)
    x_half = max(0.0, math.log(2.0 * wc.a7) / wc.b7) if wc.b7 > 0 else math.inf
    rows = []
    medians = []
    ok_all = wc.b7 > 0
    for n in n_grid:
        ln = math.log(n)
        k_of_x = np.floor(L * ln + delta * x_grid).astype(int)
        rng = stream(seed, "window_max", n)
        m = window_maxima(law, n, int(k_of_x.max()), replicates, rng)
        median = float(np.median(m[:, int(math.floor(L * ln))]))
        medians.append(median)
        median_ok = median <= wc.c7 * ln + x_half
        ok_all &= median_ok
        for x, k in zip(x_grid, k_of_x):
            p_hat = float(np.mean(m[:, k] >= wc.c7 * ln + x))
            bound = float(wc.bound(x))
            ok, se = _bound_ok(p_hat, bound, replicates)
            ok_all &= ok
            rows.append({"n": n, "x": float(x), "window": int(k), "p_hat": p_hat, "bound": bound,
                         "se_at_bound": se, "ok": ok})
    slope = linear_fit(np.log(n_grid), medians).slope if len(n_grid) >= 2 else math.nan
    growth_ok = len(n_grid) < 2 or slope > 0
    ok_all &= growth_ok
    numbers = {
        "constants": wc.to_dict(),
        "median_offset": x_half,
        "medians": medians,
        "median_slope_log_n": slope,
        "rows": rows,
    }
    return CheckResult("window_max_check", PASS if ok_all else FAIL, numbers, inputs, seed, rows)


# ---------------------------------------------------------------------------
# Brownian covariance


def covariance_check(samples, times, pairs, z_max: float = COV_Z_MAX, min_replicates: int = MIN_COV_REPLICATES,
                     seed: int | None = None) -> CheckResult:
    """Compare ``E[W_s W_t^T]`` with ``min(s, t) I`` entry by entry.

    ``samples`` has shape ``(replicates, len(times), d)``; ``pairs`` are
    index pairs into ``times``.  PASS iff every z-score is within ``z_max``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 2:
        x = x[:, :, None]
    reps, _, d = x.shape
    if reps < min_replicates:
        raise InsufficientReplicates(f"covariance_check needs at least {min_replicates} replicates, got {reps}")
    times = np.asarray(times, dtype=float)
    entries = []
    for i, j in pairs:
        target = min(times[i], times[j]) * np.eye(d)
        prod = x[:, i, :, None] * x[:, j, None, :]
        est = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / math.sqrt(reps)
        z = np.where(se > 0, (est - target) / np.where(se > 0, se, 1.0), np.where(est == target, 0.0, np.inf))
        entries.append({"s": float(times[i]), "t": float(times[j]), "estimate": est.tolist(),
                        "target": target.tolist(), "se": se.tolist(), "z": z.tolist()})
    all_z = np.concatenate([np.abs(np.asarray(e["z"])).ravel() for e in entries])
    max_dev = max(float(np.max(np.abs(np.asarray(e["estimate"]) - np.asarray(e["target"])))) for e in entries)
    numbers = {"replicates": reps, "d": d, "max_abs_z": float(all_z.max()), "max_abs_deviation": max_dev,
               "entries": entries}
    inputs = {"times": times.tolist(), "pairs": [list(p) for p in pairs], "replicates": reps, "d": d,
              "samples_sha256": hashlib.sha256(np.ascontiguousarray(x).tobytes()).hexdigest()}
    return CheckResult("covariance_check", PASS if all_z.max() <= z_max else FAIL, numbers, inputs, seed)
