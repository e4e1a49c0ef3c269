import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from opcwalk.errors import ContractViolation, InsufficientDataError
from opcwalk.stats import CltConfig, clt_experiment, loglinear_fit, normality_report, qq_table, whiten
from opcwalk.weights import WeightFieldSpec


def test_normal_quantiles_pass():
    n = 10**4
    x = sps.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    rep = normality_report(x, 1)
    assert rep.qq_correlation >= 0.999
    assert rep.ks_distance <= 0.02
    assert 0 <= rep.ks_distance <= 1 and -1 <= rep.qq_correlation <= 1


def test_constant_samples_are_degenerate():
    with pytest.raises(ContractViolation):
        normality_report(np.ones(500))


def test_uniform_samples_rejected():
    # whitened uniform[0,1] has KS distance about 0.058 from the standard normal
    x = np.random.default_rng(0).uniform(0, 1, 10**4)
    assert normality_report(x).ks_distance >= 0.05


def test_normality_needs_samples_and_dimension():
    with pytest.raises(InsufficientDataError):
        normality_report(np.arange(50.0))
    with pytest.raises(ContractViolation):
        normality_report(np.random.default_rng(0).normal(size=(200, 2)), d=3)


@given(seed=st.integers(0, 2**32), d=st.integers(1, 3))
def test_standardization_is_idempotent(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d)) + 2 * np.eye(d)
    x = rng.standard_t(5, size=(400, d)) @ A.T + rng.normal(size=d)
    a = normality_report(x)
    b = normality_report(whiten(x))
    assert a.ks_distance == pytest.approx(b.ks_distance, abs=1e-9)
    assert a.qq_correlation == pytest.approx(b.qq_correlation, abs=1e-9)
    w = whiten(whiten(x))
    assert np.allclose(w, whiten(x), atol=1e-9)


def test_report_vectors():
    x = np.random.default_rng(1).normal([1.0, -2.0], [1.0, 3.0], size=(5000, 2))
    rep = normality_report(x)
    assert rep.standardized_mean.shape == (2,)
    assert np.allclose(rep.standardized_mean, [1.0, -2.0], atol=0.15)
    assert np.allclose(rep.standardized_variance, [1.0, 9.0], rtol=0.1)
    table = qq_table(x)
    assert table.shape == (5000, 2)


def test_loglinear_exact_line():
    fit = loglinear_fit([0, 1, 2, 3], [1, -1, -3, -5])
    assert fit.slope == pytest.approx(-2)
    assert fit.intercept == pytest.approx(1)
    assert fit.r_squared == pytest.approx(1)


def test_loglinear_two_points():
    fit = loglinear_fit([1, 3], [2, 5])
    assert fit.slope == pytest.approx(1.5)
    assert fit.r_squared == pytest.approx(1)


def test_loglinear_exponential():
    xs = np.linspace(0, 10, 30)
    fit = loglinear_fit(xs, np.log(np.exp(-xs)))
    assert abs(fit.slope + 1) <= 1e-9


def test_loglinear_degenerate():
    with pytest.raises(ContractViolation):
        loglinear_fit([2, 2, 2], [1, 2, 3])
    with pytest.raises(ContractViolation):
        loglinear_fit([1], [1])


def test_annealed_clt_simple_random_walk():
    cfg = CltConfig(d=1, p=1.0, steps=1000, replicas=3000)
    rep = clt_experiment("annealed", cfg, 7)
    r = rep.per_environment[0]
    assert rep.drift_method == "ergodic"
    assert 0.9 <= r.standardized_variance[0] <= 1.1
    assert r.qq_correlation >= 0.99
    assert len(rep.per_environment) == 1


def test_quenched_needs_two_environments():
    with pytest.raises(ContractViolation):
        clt_experiment("quenched", CltConfig(environments=1), 0)
    with pytest.raises(ContractViolation):
        clt_experiment("mixed", CltConfig(), 0)


def test_quenched_annealed_coherence():
    # the Monte Carlo error of the pooled quenched mean includes the spread between environments
    base = dict(d=1, p=0.8, steps=400, horizon=60, drift_budget=200000)
    q = clt_experiment("quenched", CltConfig(replicas=150, environments=8, **base), 3)
    a = clt_experiment("annealed", CltConfig(replicas=1200, **base), 3)
    assert len(q.per_environment) == 8
    env_means = np.array([r.standardized_mean[0] for r in q.per_environment])
    se_q = env_means.std(ddof=1) / math.sqrt(len(env_means))
    pa = a.per_environment[0]
    se_a = math.sqrt(pa.standardized_variance[0] / pa.n)
    assert abs(q.pooled.standardized_mean[0] - pa.standardized_mean[0]) <= 4 * math.hypot(se_q, se_a)
    assert q.pooled.standardized_variance[0] == pytest.approx(pa.standardized_variance[0], rel=0.3)
    assert q.max_whitened_mean_gap() >= 0


def test_clt_thread_independent():
    cfg1 = CltConfig(d=1, p=0.8, steps=200, replicas=200, horizon=40, drift_budget=50000, threads=1)
    cfg3 = CltConfig(d=1, p=0.8, steps=200, replicas=200, horizon=40, drift_budget=50000, threads=3)
    a = clt_experiment("annealed", cfg1, 1)
    b = clt_experiment("annealed", cfg3, 1)
    assert np.array_equal(a.samples[0], b.samples[0])


def test_clt_with_markov_weights_runs_in_d2():
    spec = WeightFieldSpec.time_markov([1.0, 3.0], [[0.7, 0.3], [0.4, 0.6]])
    cfg = CltConfig(d=2, p=0.8, weight_spec=spec, steps=100, replicas=150, environments=2, horizon=30,
                    drift_budget=20000)
    rep = clt_experiment("quenched", cfg, 2)
    assert rep.samples[0].shape[1] == 2
    assert rep.whitened_means().shape == (2, 2)
