import math

import numpy as np
import pytest
from scipy import stats

from regencouple.errors import ConfigError, UnsupportedLaw
from regencouple.laws import (
    BernoulliLaw,
    ConstantLaw,
    ExponentialLaw,
    GammaLaw,
    GaussianLaw,
    LatticeLaw,
    PoissonLaw,
    ShiftedLaw,
    law_from_dict,
)

LAWS = [
    GaussianLaw(1.0, 2.0),
    ExponentialLaw(2.0),
    GammaLaw(3.0, 0.5),
    PoissonLaw(1.5),
    BernoulliLaw(0.3),
    LatticeLaw(-1, [0.25, 0.5, 0.25]),
    ShiftedLaw(ExponentialLaw(1.0), -1.0),
]


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.name)
def test_sample_moments(law, rng):
    x = law.sample(rng, 200_000)
    se = math.sqrt(law.var / x.size)
    assert abs(x.mean() - law.mean) <= 5 * se
    assert abs(x.var() / law.var - 1) <= 0.03


def test_sample_accepts_shapes(rng):
    assert PoissonLaw(1.0).sample(rng, (3, 4)).shape == (3, 4)


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.name)
def test_sum_from_normal_matches_sum_law(law, rng):
    m = 16
    z = rng.standard_normal(20_000)
    q = np.asarray(law.sum_from_normal(z, m))
    assert abs(q.mean() - m * law.mean) <= 5 * math.sqrt(m * law.var / z.size)
    assert abs(q.var() / (m * law.var) - 1) <= 0.05


@pytest.mark.parametrize("law", LAWS, ids=lambda l: l.name)
def test_split_is_within_range_and_monotone(law):
    m = 8
    total = np.full(9, float(law.sum_from_normal(np.array([0.7]), 2 * m)[0]))
    z = np.linspace(-3, 3, 9)
    left = np.asarray(law.split_from_normal(z, total, m))
    assert np.all(np.diff(left) >= -1e-9)
    if law.is_lattice:
        assert np.all(left == np.round(left))


def test_gaussian_split_is_exact_conditional_quantile():
    law = GaussianLaw(0.0, 1.0)
    left = law.split_from_normal(np.array([0.0, 1.0]), np.array([4.0, 4.0]), 3)
    # X ~ N(0, 3), X + Y = 4 with Y ~ N(0, 3): X | total ~ N(2, 1.5)
    np.testing.assert_allclose(left, [2.0, 2.0 + math.sqrt(1.5)], atol=1e-12)


def test_bernoulli_split_is_hypergeometric():
    law = BernoulliLaw(0.5)
    z = stats.norm.ppf([0.1, 0.5, 0.9])
    got = law.split_from_normal(z, np.full(3, 5.0), 5)
    want = stats.hypergeom.ppf([0.1, 0.5, 0.9], 10, 5, 5)
    np.testing.assert_array_equal(got, want)


def test_poisson_split_is_binomial():
    law = PoissonLaw(2.0)
    u = np.array([0.05, 0.5, 0.95])
    got = law.split_from_normal(stats.norm.ppf(u), np.full(3, 7.0), 4)
    np.testing.assert_array_equal(got, stats.binom.ppf(u, 7, 0.5))


def test_constant_law():
    law = ConstantLaw(2.0)
    assert law.var == 0.0
    assert float(law.sum_from_normal(np.array([1.3]), 4)[0]) == 8.0


@pytest.mark.parametrize("law, s, expected", [
    (GaussianLaw(1.0, 2.0), 0.5, 0.5 + 0.5),
    (PoissonLaw(2.0), 0.3, 2.0 * (math.exp(0.3) - 1)),
    (ExponentialLaw(1.0), 0.5, math.log(2.0)),
    (BernoulliLaw(0.5), 1.0, math.log((1 + math.e) / 2)),
])
def test_log_mgf(law, s, expected):
    assert law.log_mgf(s) == pytest.approx(expected, rel=1e-12)


def test_gamma_mgf_blows_up():
    assert math.isinf(ExponentialLaw(1.0).log_mgf(1.0))


def test_lattice_budget():
    law = LatticeLaw(0, [0.5, 0.5], budget=10)
    with pytest.raises(UnsupportedLaw):
        law.sum_from_normal(np.array([0.0]), 64)


def test_law_from_dict():
    assert isinstance(law_from_dict({"law": "poisson", "rate": 1.0}), PoissonLaw)
    law = law_from_dict({"law": "shifted", "offset": -1.0, "base": {"law": "exponential", "rate": 1.0}})
    assert law.mean == pytest.approx(0.0)
    with pytest.raises(ConfigError) as err:
        law_from_dict({"law": "cauchy"}, "model.tau")
    assert err.value.field == "model.tau.law"
    with pytest.raises(ConfigError):
        law_from_dict({"law": "gaussian", "sd": -1.0})
    with pytest.raises(ConfigError):
        law_from_dict({"rate": 1.0})
