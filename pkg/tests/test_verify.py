import math

import numpy as np
import pytest
from scipy import stats

from regencouple.brownian import brownian_at
from regencouple.errors import InsufficientDesign, InsufficientReplicates
from regencouple.laws import ConstantLaw, ExponentialLaw, GaussianLaw, ShiftedLaw
from regencouple.verify import (
    LOG_CONSISTENT,
    NOT_LOG_CONSISTENT,
    covariance_check,
    linear_fit,
    poisson_inverse_bounds,
    poisson_tail_check,
    rate_fit,
    tail_fit,
    window_constants,
    window_max_check,
    window_maxima,
)

HORIZONS = [2.0**k for k in range(8, 13)]


def test_linear_fit_exact():
    f = linear_fit([1, 2, 3, 4], [3, 5, 7, 9])
    assert f.slope == pytest.approx(2) and f.intercept == pytest.approx(1) and f.r2 == pytest.approx(1)
    assert linear_fit([1, 2, 3], [4, 4, 4]).r2 == 1.0


def test_rate_fit_log_growth(rng):
    samples = [1.5 * math.log(t) + rng.exponential(0.5, 200) for t in HORIZONS]
    fit = rate_fit(HORIZONS, samples)
    assert fit.verdict == LOG_CONSISTENT
    assert fit.c == pytest.approx(1.5, abs=0.2)
    assert fit.tail is None


def test_rate_fit_power_growth(rng):
    samples = [np.sqrt(t) * np.abs(rng.standard_normal(200)) for t in HORIZONS]
    fit = rate_fit(HORIZONS, samples)
    assert fit.verdict == NOT_LOG_CONSISTENT
    assert fit.exponent == pytest.approx(0.5, abs=0.05)


def test_rate_fit_order_and_nonpositive(rng):
    samples = [1.5 * math.log(t) + rng.exponential(0.5, 60) for t in HORIZONS]
    a = rate_fit(HORIZONS, samples)
    b = rate_fit(HORIZONS[::-1], samples[::-1])
    assert a.to_dict() == b.to_dict()
    zero = rate_fit(HORIZONS, [np.zeros(60)] * 5)
    assert zero.verdict == NOT_LOG_CONSISTENT and math.isnan(zero.exponent)


@pytest.mark.parametrize("horizons,reps,msg", [
    ([256, 512, 1024], 100, "horizons"),
    ([256, 300, 400, 500], 100, "octaves"),
    ([2, 8, 32, 128], 100, "at least e"),
    (HORIZONS, 10, "replicates"),
])
def test_rate_fit_design_errors(horizons, reps, msg):
    with pytest.raises(InsufficientDesign, match=msg):
        rate_fit(horizons, [np.ones(reps)] * len(horizons))


def test_tail_fit_exponential(rng):
    t = 1024.0
    x = 1.5 * math.log(t) + rng.exponential(0.5, 2000)
    r = tail_fit(x, t, 1.5, seed=1)
    assert r.verdict == "PASS"
    assert r.b_ci[0] < 2.0 < r.b_ci[1]
    assert r.hazard_ratio > 0.5


def test_tail_fit_rejects_polynomial(rng):
    r = tail_fit(np.abs(rng.standard_cauchy(2000)), 100.0, 0.0, seed=1)
    assert r.verdict == "FAIL"


def test_tail_fit_errors_and_degenerate(rng):
    with pytest.raises(InsufficientReplicates):
        tail_fit(rng.exponential(size=100), 10.0, 0.0)
    assert tail_fit(np.ones(600), 10.0, 0.0).verdict == "FAIL"


def test_tail_fit_bootstrap_reproducible(rng):
    x = rng.exponential(size=800)
    assert tail_fit(x, 10.0, 0.0, seed=3).b_ci == tail_fit(x, 10.0, 0.0, seed=3).b_ci


def test_poisson_inverse_bounds_oracle():
    info = poisson_inverse_bounds(gamma=2.0, mu=1.0, lam=0.5, r=0.3, t=8.0)
    k = math.floor(8.0 / 2.0) + 1
    assert info["k"] == k
    # Gamma(k, lam) tail at x equals P(Poisson(lam x) <= k - 1)
    assert info["exact"] == pytest.approx(stats.poisson.cdf(k - 1, 0.5 * 16.0), rel=1e-10)
    assert info["chernoff"] == pytest.approx(math.exp(-4.0) * 2**k)
    assert info["x"] == pytest.approx(3 * 8.0 / 0.3)


def test_poisson_tail_check(rng):
    r = poisson_tail_check(1.0, 1.0, 1.0, 0.2, [4.0, 8.0], replicates=4000, seed=2)
    assert r.verdict == "PASS"
    assert all(row["representations_agree"] for row in r.rows)
    with pytest.raises(ValueError):
        poisson_tail_check(1.0, 2.0, 1.0, 0.2, [4.0])


def test_window_constants_gaussian_closed_form():
    # log phi = s^2/2 so c7 = 1.01 (L s^2/2 + 1)/s is minimized at s = sqrt(2/L)
    wc = window_constants(GaussianLaw(0.0, 1.0), L=2.0, delta=0.5)
    assert wc.s == pytest.approx(1.0, abs=1e-6)
    assert wc.c7 == pytest.approx(2.02, rel=1e-9)
    e = math.exp(0.5)
    assert wc.a7 == pytest.approx(2 * e / (e - 1), rel=1e-6)
    assert wc.b7 == pytest.approx(0.75, rel=1e-6)


def test_window_constants_are_centered():
    a = window_constants(GaussianLaw(3.0, 1.0), 2.0, 0.5)
    b = window_constants(GaussianLaw(0.0, 1.0), 2.0, 0.5)
    assert a.c7 == pytest.approx(b.c7)


def test_window_maxima_brute_force(rng):
    law = GaussianLaw(0.0, 1.0)
    seed_rng = np.random.default_rng(4)
    m = window_maxima(law, 10, 4, 3, np.random.default_rng(4))
    steps = law.sample(seed_rng, (3, 14))
    q = np.concatenate([np.zeros((3, 1)), np.cumsum(steps, axis=1)], axis=1)
    for r in range(3):
        for k in range(5):
            best = max([0.0] + [q[r, j + i] - q[r, j] for j in range(11) for i in range(1, k + 1)])
            assert m[r, k] == pytest.approx(best)


def test_window_max_check():
    law = ShiftedLaw(ExponentialLaw(1.0), -1.0)
    r = window_max_check(law, [64, 256], replicates=300, seed=1)
    assert r.verdict == "PASS"
    assert r.numbers["median_slope_log_n"] > 0
    d = window_max_check(ConstantLaw(2.0), [64])
    assert d.verdict == "PASS" and d.numbers["degenerate"]


def test_covariance_check():
    rng = np.random.default_rng(7)
    times = [1.0, 2.0, 4.0]
    w = np.array([brownian_at(times, 2, rng) for _ in range(2000)])
    ok = covariance_check(w, times, [(0, 1), (2, 2)])
    assert ok.verdict == "PASS" and ok.numbers["max_abs_z"] < 3
    bad = covariance_check(1.3 * w, times, [(0, 1), (2, 2)])
    assert bad.verdict == "FAIL"
    with pytest.raises(InsufficientReplicates):
        covariance_check(w[:50], times, [(0, 0)])
