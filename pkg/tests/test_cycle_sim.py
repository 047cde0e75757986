import io

import numpy as np
import pytest

from regencouple.cycle_sim import (
    CycleBatch,
    build_path,
    cumulative_values,
    cycles_to_csv,
    empirical_moments,
    renewal_count,
    sample_cycles,
    stopped_sum_model,
)
from regencouple.errors import (
    HorizonOverflow,
    InsufficientCycles,
    NonPositiveTau,
    OutOfHorizon,
    TooFewSamples,
)
from regencouple.model_core import CycleSample, derive_asymptotics
from regencouple.models import BUILTIN_MODELS, builtin_model, degenerate, gaussian_pair, gaussian_unit


def unit_model():
    return stopped_sum_model(lambda rng: (np.array([1.0]), 1.0), 1)


def test_horizon_stopping_deterministic():
    c = sample_cycles(unit_model(), np.random.default_rng(0), horizon=3.5)
    assert len(c) == 4
    assert c.regen_times()[-1] == 4.0


def test_count_must_be_positive():
    with pytest.raises(ValueError):
        sample_cycles(unit_model(), np.random.default_rng(0), count=0)
    with pytest.raises(ValueError):
        sample_cycles(unit_model(), np.random.default_rng(0))


def test_cycle_cap():
    tiny = stopped_sum_model(lambda rng: (np.array([0.0]), 1e-9), 1)
    with pytest.raises(HorizonOverflow):
        sample_cycles(tiny, np.random.default_rng(0), horizon=1.0, cap=1000)


def test_non_positive_tau():
    bad = stopped_sum_model(lambda rng: (np.array([0.0]), 0.0), 1)
    with pytest.raises(NonPositiveTau):
        sample_cycles(bad, np.random.default_rng(0), count=3)


def test_exponential_tau_mean():
    c = sample_cycles(gaussian_unit(), np.random.default_rng(1), count=100_000)
    assert abs(c.taus.mean() - 1) <= 3 / np.sqrt(1e5)


def test_horizon_prefix_is_minimal(rng):
    c = sample_cycles(gaussian_unit(), rng, horizon=50.0)
    regen = c.regen_times()
    assert regen[-1] > 50.0 >= regen[-2]


def test_build_path_no_regeneration():
    c = CycleBatch([1.0], [[2.0]], [2.0])
    p = build_path(c, 0.9, 0.3)
    np.testing.assert_array_equal(p.values, 0.0)
    np.testing.assert_allclose(p.grid, [0.0, 0.3, 0.6, 0.9])


def test_build_path_step_convention():
    c = CycleBatch([1.0, 1.0], [[2.0], [3.0]], [2.0, 3.0])
    p = build_path(c, 1.5, 0.5)
    np.testing.assert_array_equal(p.values[:, 0], [0.0, 0.0, 2.0, 2.0])


def test_build_path_needs_cover():
    c = CycleBatch([1.0], [[2.0]], [2.0])
    with pytest.raises(InsufficientCycles):
        build_path(c, 1.0, 0.5)


def test_path_matches_direct_recomputation(rng):
    c = sample_cycles(gaussian_pair(), rng, horizon=40.0)
    p = build_path(c, 40.0, 0.7)
    regen = c.regen_times()
    for u, v in zip(p.grid, p.values):
        m = np.sum(regen[1:] <= u)
        np.testing.assert_allclose(v, c.xis[:m].sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(p.partial_sums()[1:], np.cumsum(c.xis, axis=0))


def test_within_cycle_paths():
    paths = [(np.array([0.25, 0.5]), np.array([[1.0], [-1.0]])), None]
    c = CycleBatch([1.0, 1.0], [[0.5], [3.0]], [1.0, 3.0], paths)
    vals = cumulative_values(c, c.regen_times(), np.array([0.1, 0.3, 0.6, 1.2, 1.99]))
    np.testing.assert_allclose(vals[:, 0], [0.0, 1.0, -1.0, 0.5, 0.5])


def test_renewal_count(rng):
    c = CycleBatch([1.0] * 4, [[1.0]] * 4, [1.0] * 4)
    p = build_path(c, 3.5, 0.5)
    assert renewal_count(p, 0.0) == 0
    assert renewal_count(p, 2.999) == 2
    with pytest.raises(OutOfHorizon):
        renewal_count(p, 4.0)
    c = sample_cycles(gaussian_unit(), rng, horizon=30.0)
    p = build_path(c, 30.0, 1.0)
    for u in rng.uniform(0, 30, 50):
        assert renewal_count(p, u) == sum(1 for t in p.regen_times[1:] if t <= u)


def test_builtin_models_analytic_params():
    p = derive_asymptotics(gaussian_unit().analytic_moments)
    assert p.kappa[0] == pytest.approx(0.0, abs=1e-15) and p.sigma2[0, 0] == pytest.approx(1.0)
    p = derive_asymptotics(degenerate().analytic_moments)
    assert p.kappa[0] == pytest.approx(1.0) and p.sigma2[0, 0] == pytest.approx(0.0, abs=1e-15)
    p = derive_asymptotics(builtin_model("stopped_sum_lattice").analytic_moments)
    # xi = tau/2 + Poisson(1), tau ~ Exp(1): kappa = 1.5, sigma2 = Var(xi - 1.5 tau) = Var(Poisson - tau) = 2
    assert p.kappa[0] == pytest.approx(1.5) and p.sigma2[0, 0] == pytest.approx(2.0)
    assert sorted(BUILTIN_MODELS) == ["degenerate", "gaussian_pair", "gaussian_unit", "stopped_sum_lattice"]


def test_tau_plus_noise_monte_carlo(rng):
    model = stopped_sum_model(lambda r: None, 1, batch_sampler=lambda r, n: (
        (lambda t: (t + r.standard_normal(n), t))(r.exponential(1.0, n))))
    m, _ = empirical_moments(sample_cycles(model, rng, count=200_000))
    p = derive_asymptotics(m)
    assert p.kappa[0] == pytest.approx(1.0, abs=0.02)
    assert p.sigma2[0, 0] == pytest.approx(1.0, abs=0.03)


def test_empirical_moments_two_point():
    m, _ = empirical_moments([CycleSample(1.0, [0.0], 0.0), CycleSample(3.0, [2.0], 2.0)])
    assert m.mean_tau == 2.0 and m.var_tau == 2.0
    assert m.mean_xi[0] == 1.0 and m.cov_xi[0, 0] == 2.0 and m.cov_xi_tau[0] == 2.0


def test_empirical_moments_identical_and_too_few():
    m, _ = empirical_moments(CycleBatch([1.0] * 5, [[2.0]] * 5, [2.0] * 5))
    assert m.var_tau == 0.0 and m.cov_xi[0, 0] == 0.0
    with pytest.raises(TooFewSamples):
        empirical_moments(CycleBatch([1.0], [[2.0]], [2.0]))


def test_exponential_var_band(rng):
    m, probes = empirical_moments(sample_cycles(gaussian_unit(), rng, count=100_000))
    assert abs(m.var_tau - 1) <= 0.05
    assert probes.screen()


def test_probe_screen_flags_heavy_tails(rng):
    taus = np.abs(rng.standard_cauchy(5000)) * 50
    c = CycleBatch(taus, taus[:, None], taus)
    assert not empirical_moments(c)[1].screen()


def test_cycles_csv():
    c = CycleBatch([1.0, 2.0], [[0.5], [1.5]], [0.5, 1.5])
    buf = io.StringIO()
    cycles_to_csv(c, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "k,T_k,tau_k,xi_k0,eta_k"
    assert lines[2].split(",")[1] == "3.0"
