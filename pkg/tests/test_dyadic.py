import math

import numpy as np
import pytest
from scipy import stats

from regencouple.brownian import DyadicBrownianPath
from regencouple.coupling import CountingPath, couple_poisson_brownian, couple_sums_dyadic, walk_coupling_sups
from regencouple.coupling.dyadic import brownian_from_exponential_walk
from regencouple.errors import OutOfHorizon
from regencouple.laws import ExponentialLaw, GaussianLaw, PoissonLaw


def _increments(law, reps, seed):
    rng = np.random.default_rng(seed)
    return np.diff([couple_sums_dyadic(law, 8, rng)[0] for _ in range(reps)], axis=1)


def test_coupled_walk_marginals_exponential():
    inc = _increments(ExponentialLaw(1.0), 4000, 11)
    for j in (0, 3, 7):
        assert stats.kstest(inc[:, j], "expon").pvalue > 1e-3
    assert stats.kstest(inc.sum(axis=1), stats.gamma(8).cdf).pvalue > 1e-3
    off = np.corrcoef(inc.T)[np.triu_indices(8, 1)]
    assert np.max(np.abs(off)) < 5 / math.sqrt(4000)


def test_coupled_walk_marginals_gaussian():
    inc = _increments(GaussianLaw(0.5, 2.0), 4000, 12)
    for j in (0, 5):
        assert stats.kstest(inc[:, j], stats.norm(0.5, 2.0).cdf).pvalue > 1e-3


def test_coupled_walk_marginals_poisson():
    inc = _increments(PoissonLaw(2.0), 4000, 13)
    for j in (0, 6):
        x = inc[:, j]
        k = np.arange(6)
        obs = np.array([np.sum(x == i) for i in k] + [np.sum(x >= 6)], dtype=float)
        pmf = stats.poisson.pmf(k, 2.0)
        exp = np.append(pmf, 1 - pmf.sum()) * x.size
        assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_coupling_is_tight_versus_independent():
    rng = np.random.default_rng(4)
    law = ExponentialLaw(1.0)
    dy = np.median([walk_coupling_sups(law, 1024, rng) for _ in range(40)])
    ind = np.median([walk_coupling_sups(law, 1024, rng, coupler="independent") for _ in range(40)])
    assert dy < ind / 3


def test_uses_given_brownian(rng):
    b = DyadicBrownianPath.sample(16, 1, rng)
    q1, b1 = couple_sums_dyadic(GaussianLaw(0.0, 1.0), 16, brownian=b)
    q2, _ = couple_sums_dyadic(GaussianLaw(0.0, 1.0), 16, brownian=b)
    np.testing.assert_array_equal(q1, q2)
    # Gaussian increments reproduce B exactly
    np.testing.assert_allclose(q1, b1, atol=1e-9)
    with pytest.raises(ValueError):
        couple_sums_dyadic(GaussianLaw(0.0, 1.0), 12, rng)


def test_counting_path():
    c = CountingPath(np.array([0.5, 1.0, 2.5]), 1.0, 4.0)
    np.testing.assert_array_equal(c.count([0.0, 0.5, 0.99, 1.0, 3.0]), [0, 1, 1, 2, 3])
    np.testing.assert_array_equal(c.inverse([0, 1.5, 2.9]), [0.5, 1.0, 2.5])
    with pytest.raises(OutOfHorizon):
        c.inverse(3)


def test_poisson_process_coupling(rng):
    counts, b = couple_poisson_brownian(2.0, 100.0, rng)
    assert b.n == 128 and counts.horizon == 128
    jt = counts.jump_times
    assert np.all(np.diff(jt) >= 0) and jt[0] > 0
    k = np.arange(129)
    dev = counts.count(k.astype(float)) - 2.0 * k - math.sqrt(2.0) * b.at_integers()[:, 0]
    assert np.max(np.abs(dev)) < 25
    with pytest.raises(ValueError):
        couple_poisson_brownian(0.0, 100.0, rng)


def test_inverse_coupling_tracks_walk():
    rng = np.random.default_rng(9)
    for rate in (1.0, 2.5):
        g = np.concatenate([[0.0], np.cumsum(rng.exponential(1 / rate, 4096))])
        w = brownian_from_exponential_walk(g, rate)
        k = np.arange(g.size)
        assert w[0] == 0.0
        assert np.max(np.abs(w - (rate * g - k))) < 12 * math.log(4096)


def test_inverse_coupling_is_brownian():
    rng = np.random.default_rng(10)
    ends, mids = [], []
    for _ in range(3000):
        g = np.concatenate([[0.0], np.cumsum(rng.exponential(1.0, 7))])
        w = brownian_from_exponential_walk(g, 1.0)
        ends.append(w[7])
        mids.append(w[3])
    assert stats.kstest(np.array(ends) / math.sqrt(7), "norm").pvalue > 1e-3
    assert stats.kstest(np.array(mids) / math.sqrt(3), "norm").pvalue > 1e-3
    with pytest.raises(ValueError):
        brownian_from_exponential_walk(np.array([0.0]), 1.0)
