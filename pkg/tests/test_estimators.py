import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from laser.data import Dataset, GenConfig, generate_world
from laser.errors import CapabilityError, ConfigError, DegenerateError, DimensionError, PreconditionError
from laser.estimators import (
    METHODS,
    EstimateReport,
    backdoor_ate,
    estimate_bd,
    estimate_laser,
    estimate_sind,
    fit_propensity,
    fit_regressor,
    ipw_ate,
    run_method,
)
from laser.model import TrainConfig

from _oracles import loop_ipw

TINY = dict(n_obs=80, n_exp=80, d_x=4, n_latent=1, n_obs_surr=1, n_proxies=2)


# --- IPW ----------------------------------------------------------------------


def test_ipw_matches_loop_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        yhat = rng.normal(scale=rng.uniform(0.1, 100), size=n)
        t = rng.integers(0, 2, n)
        e = rng.uniform(0.01, 0.99, n)
        ref = loop_ipw(yhat, t, e)
        assert abs(ipw_ate(yhat, t, e) - ref) <= 1e-12 * max(1.0, abs(ref))


def _closed_form(yhat, t, p):
    n = len(yhat)
    return yhat[t == 1].sum() / (n * p) - yhat[t == 0].sum() / (n * (1 - p))


def test_constant_propensity_closed_form_exact_on_dyadic_inputs():
    # small integers, power-of-two n and p = 1 - p = 1/2: every operation is exact in binary floating point
    rng = np.random.default_rng(1)
    for p in (0.5,):
        for _ in range(200):
            n = int(2 ** rng.integers(1, 8))
            yhat = rng.integers(-50, 50, n).astype(float)
            t = rng.integers(0, 2, n)
            assert ipw_ate(yhat, t, np.full(n, p)) == _closed_form(yhat, t, p)


def test_constant_propensity_closed_form_general():
    rng = np.random.default_rng(2)
    for _ in range(200):
        n = int(rng.integers(2, 300))
        yhat, t, p = rng.normal(size=n), rng.integers(0, 2, n), rng.uniform(0.05, 0.95)
        assert ipw_ate(yhat, t, np.full(n, p)) == pytest.approx(_closed_form(yhat, t, p), rel=1e-12, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 40).flatmap(lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(-1e3, 1e3)),
        arrays(np.float64, n, elements=st.floats(-1e3, 1e3)),
        arrays(np.int64, n, elements=st.integers(0, 1)),
        arrays(np.float64, n, elements=st.floats(0.01, 0.99)),
    )),
    st.floats(-10, 10), st.floats(-10, 10),
)
def test_ipw_linearity(data, a, b):
    y1, y2, t, e = data
    lhs = ipw_ate(a * y1 + b * y2, t, e)
    rhs = a * ipw_ate(y1, t, e) + b * ipw_ate(y2, t, e)
    scale = 1.0 + np.sum(np.abs(a * y1) + np.abs(b * y2)) / np.min(np.minimum(e, 1 - e)) / len(t)
    assert abs(lhs - rhs) <= 1e-12 * scale


def test_ipw_preconditions():
    with pytest.raises(PreconditionError):
        ipw_ate([1.0, 2.0], [1, 0], [0.0, 0.5])
    with pytest.raises(PreconditionError):
        ipw_ate([1.0, 2.0], [1, 0], [0.5, 1.0])
    with pytest.raises(DimensionError):
        ipw_ate([1.0], [1, 0], [0.5, 0.5])


# --- propensity ------------------------------------------------------------------


def test_propensity_calibration_at_large_n():
    rng = np.random.default_rng(3)
    n, d = 10_000, 5
    x = rng.normal(size=(n, d))
    w = rng.normal(scale=0.5, size=d)
    e_true = 1 / (1 + np.exp(-(x @ w - 0.3)))
    t = (rng.uniform(size=n) < e_true).astype(int)
    e_hat = fit_propensity(x, t).predict(x)
    assert np.mean(np.abs(e_hat - e_true)) <= 0.05


def test_propensity_clipped_and_degenerate():
    x = np.linspace(-30, 30, 200).reshape(-1, 1)
    t = (x[:, 0] > 0).astype(int)
    e = fit_propensity(x, t).predict(x)
    assert e.min() == 0.01 and e.max() == 0.99
    with pytest.raises(DegenerateError):
        fit_propensity(x, np.ones(200))


def test_propensity_randomized_is_near_half():
    _, d_exp, _ = generate_world(GenConfig(n_exp=5000, n_obs=10))
    e = fit_propensity(d_exp.x, d_exp.t).predict(d_exp.x)
    assert np.all(np.abs(e - 0.5) < 0.15)


# --- back-door --------------------------------------------------------------------


def test_backdoor_constant_prediction_is_zero():
    rng = np.random.default_rng(4)
    x, t = rng.normal(size=(100, 3)), rng.integers(0, 2, 100)
    assert backdoor_ate(np.full(100, 7.0), x, t) == pytest.approx(0.0, abs=1e-12)


def test_backdoor_exact_linear_recovery():
    rng = np.random.default_rng(5)
    x, t = rng.normal(size=(200, 4)), rng.integers(0, 2, 200)
    beta, delta = rng.normal(size=4), 2.75
    assert abs(backdoor_ate(x @ beta + t * delta, x, t, "linear") - delta) < 1e-8


def test_backdoor_needs_both_arms():
    x = np.zeros((5, 1))
    with pytest.raises(DegenerateError):
        backdoor_ate(np.ones(5), x, np.zeros(5, dtype=int))


# --- regressors ---------------------------------------------------------------------


def test_linear_regressor_exact():
    rng = np.random.default_rng(6)
    f = rng.normal(size=(50, 3))
    reg = fit_regressor(f, f @ [1.0, -2.0, 0.5] + 4.0, "linear")
    np.testing.assert_allclose(reg.coef, [4.0, 1.0, -2.0, 0.5], atol=1e-10)
    with pytest.raises(ConfigError):
        fit_regressor(f, f[:, 0], "forest")


# --- pipelines -------------------------------------------------------------------------


def test_sind_linear_small_error_when_surrogates_observed():
    errs = []
    for seed in range(10):
        d_obs, d_exp, _ = generate_world(GenConfig(seed=seed, n_latent=0, n_obs_surr=5, n_proxies=0,
                                                   graph_variant="all-observed"))
        errs.append(estimate_sind(d_obs, d_exp, "linear").mape)
    assert np.mean(errs) < 0.1


def test_every_method_runs_and_reports():
    d_obs, d_exp, tau = generate_world(GenConfig(seed=1, **TINY))
    cfg = TrainConfig(latent_dim=2, epochs=3)
    for m in METHODS:
        rep = run_method(m, d_obs, d_exp, cfg, config_digest="abc")
        assert rep.method == m and np.isfinite(rep.tau_hat)
        assert rep.tau_true == pytest.approx(tau)
        assert rep.mape == pytest.approx(abs(tau - rep.tau_hat) / abs(tau))
        doc = json.loads(rep.to_json())
        assert doc["config_digest"] == "abc" and doc["method"] == m
    with pytest.raises(ConfigError):
        run_method("eete", d_obs, d_exp, cfg)


def test_laser_report_extras_and_capability():
    d_obs, d_exp, _ = generate_world(GenConfig(seed=2, **TINY))
    rep = estimate_laser(d_obs, d_exp, TrainConfig(latent_dim=2, epochs=4))
    assert rep.extras["epochs"] == 4 and np.isfinite(rep.extras["final_loss"])
    with pytest.raises(CapabilityError):
        estimate_laser(d_obs.without_outcomes(), d_exp, TrainConfig(latent_dim=2, epochs=1))
    with pytest.raises(CapabilityError):
        estimate_bd(d_obs.without_outcomes(), d_exp)


def test_report_without_truth_has_no_mape():
    d_obs, d_exp, _ = generate_world(GenConfig(seed=3, **TINY))
    rep = estimate_sind(d_obs, Dataset(d_exp.x, d_exp.t, d_exp.m))
    assert rep.tau_true is None and rep.mape is None
    assert isinstance(rep, EstimateReport)


def test_incompatible_datasets():
    d_obs, _, _ = generate_world(GenConfig(seed=3, **TINY))
    _, other, _ = generate_world(GenConfig(seed=3, **{**TINY, "d_x": 5}))
    with pytest.raises(DimensionError):
        estimate_sind(d_obs, other)
