import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regencouple.errors import DegenerateTau, NonPSD
from regencouple.model_core import (
    AsymptoticParams,
    CycleMoments,
    CycleSample,
    derive_asymptotics,
    pseudo_inverse,
    psd_sqrt,
    validate_params,
)


def moments(**kw):
    base = dict(d=1, mean_xi=[0.0], mean_tau=1.0, cov_xi=[[1.0]], var_tau=1.0, cov_xi_tau=[0.0])
    base.update(kw)
    return CycleMoments(**base)


def test_uncorrelated_unit_case():
    p = derive_asymptotics(moments())
    assert p.mu == 1.0 and p.gamma == 1.0 and p.lambda_ == 1.0
    np.testing.assert_allclose(p.kappa, [0.0], atol=1e-15)
    np.testing.assert_allclose(p.sigma2, [[1.0]], atol=1e-15)
    np.testing.assert_allclose(p.v2, [[1.0]], atol=1e-15)
    np.testing.assert_allclose(p.beta, [0.0], atol=1e-15)
    np.testing.assert_allclose(p.alpha, [0.0], atol=1e-15)


def test_xi_equal_tau_has_zero_variance():
    p = derive_asymptotics(moments(mean_xi=[1.0], cov_xi_tau=[1.0]))
    np.testing.assert_allclose(p.kappa, [1.0], atol=1e-15)
    np.testing.assert_allclose(p.beta, [1.0], atol=1e-15)
    np.testing.assert_allclose(p.sigma2, [[0.0]], atol=1e-15)
    np.testing.assert_allclose(p.v2, [[0.0]], atol=1e-15)
    np.testing.assert_allclose(p.alpha, [0.0], atol=1e-15)
    np.testing.assert_allclose(p.sigma_pinv, [[0.0]], atol=1e-15)


def test_correlated_example_hand_values():
    # kappa = 3/2, beta = 1/2, v2 = 4 - 1/2 = 3.5, sigma2 = (4 - 2*1.5 + 2.25*2)/2 = 2.75
    p = derive_asymptotics(moments(mean_xi=[3.0], mean_tau=2.0, cov_xi=[[4.0]], var_tau=2.0, cov_xi_tau=[1.0]))
    assert abs(p.kappa[0] - 1.5) <= 1e-12
    assert abs(p.beta[0] - 0.5) <= 1e-12
    assert abs(p.v2[0, 0] - 3.5) <= 1e-12
    assert abs(p.sigma2[0, 0] - 2.75) <= 1e-12
    assert abs(p.gamma - 1.0) <= 1e-12
    assert abs(p.lambda_ - 2.0) <= 1e-12
    assert abs(p.alpha[0] + 1.0) <= 1e-12


@pytest.mark.slow
def test_correlated_example_monte_carlo():
    # tau ~ Gamma(2, 1) (mean 2, var 2); xi = tau/2 + eps, eps ~ N(2, 3.5) independent.
    # Then E xi = 3, Var xi = 4, cov = 1; Var(S_t)/t should approach 2.75.
    rng = np.random.default_rng(5)
    t, reps = 4000.0, 2000
    cycles = 2600
    taus = rng.gamma(2.0, 1.0, size=(reps, cycles))
    xis = taus / 2 + rng.normal(2.0, np.sqrt(3.5), size=(reps, cycles))
    regen = np.cumsum(taus, axis=1)
    assert np.all(regen[:, -1] > t)
    m = (regen <= t).sum(axis=1)
    csum = np.cumsum(xis, axis=1)
    s = np.where(m > 0, csum[np.arange(reps), np.maximum(m - 1, 0)], 0.0)
    var = s.var(ddof=1) / t
    se = var * np.sqrt(2 / (reps - 1))
    assert abs(var - 2.75) <= 4 * se + 2.75 * 0.01


def test_degenerate_tau_rejected():
    with pytest.raises(DegenerateTau):
        derive_asymptotics(moments(var_tau=0.0, cov_xi_tau=[0.0]))


def test_non_psd_rejected():
    with pytest.raises(NonPSD):
        derive_asymptotics(moments(cov_xi=[[1.0]], cov_xi_tau=[5.0]))


def test_bad_mean_tau():
    with pytest.raises(ValueError):
        derive_asymptotics(moments(mean_tau=0.0))


def test_psd_sqrt_examples():
    np.testing.assert_allclose(psd_sqrt(np.eye(3)), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)
    m = np.array([[2.0, 1.0], [1.0, 2.0]])
    r = psd_sqrt(m)
    # eigen-decomposition oracle: eigenvalues 1 and 3 on (1,-1)/sqrt2 and (1,1)/sqrt2
    q = np.array([[1, 1], [-1, 1]]) / np.sqrt(2)
    oracle = q @ np.diag([1.0, np.sqrt(3.0)]) @ q.T
    np.testing.assert_allclose(r, oracle, atol=1e-12)
    np.testing.assert_allclose(r @ r, m, atol=1e-12)


def test_psd_sqrt_clamps_and_rejects():
    r = psd_sqrt(np.diag([1.0, -1e-14]))
    assert r[1, 1] == 0.0
    with pytest.raises(NonPSD):
        psd_sqrt(np.diag([1.0, -1.0]))
    with pytest.raises(NonPSD):
        psd_sqrt(np.array([[1.0, 0.5], [0.0, 1.0]]))


def _penrose(m, x, tol=1e-10):
    assert np.allclose(m @ x @ m, m, atol=tol)
    assert np.allclose(x @ m @ x, x, atol=tol)
    assert np.allclose((m @ x).T, m @ x, atol=tol)
    assert np.allclose((x @ m).T, x @ m, atol=tol)


def test_pseudo_inverse_examples():
    np.testing.assert_allclose(pseudo_inverse(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(pseudo_inverse(np.zeros((2, 2))), np.zeros((2, 2)))
    np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    m = np.array([[1.0, 2.0], [2.0, 4.0]])
    _penrose(m, pseudo_inverse(m))


@st.composite
def moment_inputs(draw):
    d = draw(st.integers(1, 4))
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    a = r.normal(size=(d + 1, d + 1 + draw(st.integers(0, 2))))
    joint = a @ a.T
    if joint[d, d] < 1e-3:
        joint[d, d] += 1.0
    return CycleMoments(d, r.normal(size=d), float(r.uniform(0.1, 10)), joint[:d, :d], float(joint[d, d]),
                        joint[:d, d])


@given(moment_inputs())
@settings(max_examples=60, deadline=None)
def test_invariants_hold_on_random_inputs(m):
    p = derive_asymptotics(m)
    rep = validate_params(p, m)
    assert rep.passed, rep.to_dict()
    np.testing.assert_allclose(p.alpha, p.beta - p.kappa, atol=1e-12)
    np.testing.assert_allclose(p.sigma @ p.sigma, p.sigma2, atol=1e-8 * max(1, np.abs(p.sigma2).max()))
    _penrose(p.sigma, p.sigma_pinv, tol=1e-7 * max(1, np.abs(p.sigma).max()))
    # sigma^2 mu = v2 + alpha alpha^T Var(tau)
    np.testing.assert_allclose(p.sigma2 * p.mu, p.v2 + np.outer(p.alpha, p.alpha) * m.var_tau,
                               atol=1e-9 * max(1, np.abs(p.v2).max(), m.var_tau))
    assert np.linalg.eigvalsh(p.v2).min() >= -1e-9 * max(1.0, np.abs(p.v2).max())


def test_validate_reports_failures_without_raising():
    m = moments()
    p = derive_asymptotics(m)
    bad = AsymptoticParams(**{**p.__dict__, "lambda_": 2.0})
    rep = validate_params(bad, m)
    assert not rep.passed
    assert rep.residual("lambda_gamma_mu") == pytest.approx(1.0)


def test_json_round_trip():
    m = moments(mean_xi=[3.0], mean_tau=2.0, cov_xi=[[4.0]], var_tau=2.0, cov_xi_tau=[1.0])
    m2 = CycleMoments.from_json(m.to_json())
    assert json.loads(m2.to_json()) == json.loads(m.to_json())
    p = derive_asymptotics(m)
    p2 = AsymptoticParams.from_json(p.to_json())
    for k in ("kappa", "sigma2", "sigma_pinv", "alpha"):
        np.testing.assert_array_equal(getattr(p, k), getattr(p2, k))


def test_cycle_sample_dimension():
    s = CycleSample(1.0, [1.0, 2.0], 2.0)
    assert s.d == 2
