import math

import numpy as np
import pytest

from regencouple.brownian import DyadicBrownianPath
from regencouple.coupling import compose_limit_wiener, construct_wstar, couple_poisson_brownian, wstar_conditional_variance
from regencouple.errors import GridMismatch, InsufficientResolution
from regencouple.model_core import CycleMoments, derive_asymptotics


@pytest.fixture(scope="module")
def counts():
    n, _ = couple_poisson_brownian(2.0, 1024, np.random.default_rng(21))
    return n


def test_conditional_variance_is_l(counts):
    l = np.arange(0, counts.total + 1, 37)
    np.testing.assert_allclose(wstar_conditional_variance(counts, 1024, l), l, rtol=1e-9, atol=1e-9)


def test_displayed_normalization_differs(counts):
    l = np.array([counts.total // 3])
    v = wstar_conditional_variance(counts, 1024, l, normalization="displayed")
    assert abs(v[0] - l[0]) > 0.1 * l[0]


def test_monte_carlo_variance():
    rng = np.random.default_rng(22)
    n, _ = couple_poisson_brownian(1.5, 64, rng)
    l = np.array([1, 10, 40, n.total])
    w = np.array([construct_wstar(DyadicBrownianPath.sample(64, 1, rng), n, n.total, rng).values[l, 0]
                  for _ in range(4000)])
    np.testing.assert_allclose(w.var(axis=0), l, rtol=0.1)
    assert np.all(np.abs(w.mean(axis=0)) < 4 * np.sqrt(l / 4000))


def test_tracks_time_scale_brownian(counts):
    rng = np.random.default_rng(23)
    b = DyadicBrownianPath.sample(1024, 1, rng)
    w = construct_wstar(b, counts, counts.total, rng)
    k = np.arange(1025, dtype=float)
    dev = w.values[counts.count(k), 0] - math.sqrt(2.0) * b.at_integers()[:, 0]
    # log-scale closeness, against sqrt(2 * 1024) = 45 for independent paths
    assert np.max(np.abs(dev)) < 4 * math.log(1024)
    assert w.unresolved_cells == 0 and w.values[0, 0] == 0.0


def test_resolution_errors(counts, rng):
    b = DyadicBrownianPath.sample(1024, 1, rng)
    with pytest.raises(InsufficientResolution):
        construct_wstar(b, counts, counts.total + 1, rng)
    with pytest.raises(InsufficientResolution):
        construct_wstar(b, counts, 10, rng, j_range=(-5, 11))
    with pytest.raises(ValueError):
        construct_wstar(b, counts, 10, rng, normalization="other")


def _params():
    m = CycleMoments(d=2, mean_xi=[1.0, 0.0], mean_tau=1.0, cov_xi=[[2.0, 0.5], [0.5, 1.0]],
                     var_tau=1.0, cov_xi_tau=[0.5, 0.2])
    return derive_asymptotics(m)


def test_compose_shapes_and_mismatch(rng):
    p = _params()
    grid = np.linspace(0, 5, 6)
    out = compose_limit_wiener(np.zeros((6, 2)), np.zeros(6), np.zeros((6, 2)), p, grid)
    assert out.shape == (6, 2) and np.all(out == 0)
    with pytest.raises(GridMismatch):
        compose_limit_wiener(np.zeros((5, 2)), np.zeros(6), np.zeros((6, 2)), p, grid)
    with pytest.raises(GridMismatch):
        compose_limit_wiener(np.zeros((6, 3)), np.zeros(6), np.zeros((6, 2)), p, grid)
