import json
import math

import numpy as np
import pytest

from sqha.correlated_noise import NoiseModel, dense_covariance, sample_increment
from sqha.diagnostics import (
    SCHEMA,
    cross_term,
    dumps,
    estimate_correlation,
    gradsq_variance,
    istar_moments,
    laplacian_variance,
    qp_variance,
    report,
    scaling_fit,
    theta_sweep,
    weighted_density,
)
from sqha.errors import EstimatorError
from sqha.grid_state import PhysicalConstants, make_grid

C = PhysicalConstants()


@pytest.fixture(scope="module")
def synthetic():
    """Zero-mean correlated Gaussian fields with a known kernel."""
    g = make_grid(0, 256, 256)
    m = NoiseModel(0.05)
    x = sample_increment(g, m, 1.0, seed=0, size=1000)
    cov = dense_covariance(g, m, 1.0)[0]
    return g, x, cov


def test_correlation_recovers_kernel(synthetic):
    g, x, cov = synthetic
    st = estimate_correlation(x, g, n0=np.zeros(g.n_cells), max_lag=6)
    truth = cov[:7] / cov[0]
    assert st.G_hat[0] == 1.0
    assert np.all(np.abs(st.G_hat[1:] - truth[1:]) < 5 * st.G_se[1:])
    assert st.g_hat == pytest.approx(cov[0], rel=0.05)
    assert st.members == 1000


def test_correlation_needs_members(synthetic):
    g, x, _ = synthetic
    with pytest.raises(EstimatorError):
        estimate_correlation(x[:50], g)
    with pytest.raises(EstimatorError):
        estimate_correlation(x[0], g)


def test_zero_fluctuation_gives_delta_kernel():
    g = make_grid(0, 16, 16)
    st = estimate_correlation(np.ones((100, 16)), g, max_lag=3)
    assert st.g_hat == 0
    np.testing.assert_array_equal(st.G_hat, [1, 0, 0, 0])


def test_gradsq_variance_gaussian_moments(synthetic):
    g, x, _ = synthetic
    st = estimate_correlation(x, g, n0=np.ones(g.n_cells), max_lag=4)
    est = gradsq_variance(x, g, st)
    assert st.A == 0
    assert abs(est.formula - est.direct) < 5 * est.direct_se + 0.02 * est.direct
    assert est.rel_diff < 0.1


def test_laplacian_variance_gaussian_moments(synthetic):
    g, x, _ = synthetic
    st = estimate_correlation(x, g, n0=np.ones(g.n_cells), max_lag=4)
    est = laplacian_variance(x, g, st)
    assert est.rel_diff < 0.1


def test_cross_term_vanishes_for_symmetric_fluctuations(synthetic):
    g, x, _ = synthetic
    assert abs(cross_term(x, g).z) < 4


def test_qp_variance_broad_companion():
    g = make_grid(-256, 256, 512)
    n0 = np.exp(-g.centers**2 / (2 * 256.0**2))
    noise = NoiseModel(0.12, form_factor=1e-6)
    ens = n0 + sample_increment(g, noise, 1.0, seed=0, size=400)
    st = estimate_correlation(ens, g, n0=n0, max_lag=4)
    est = qp_variance(ens, g, C, st, n0)
    assert est.rel_diff < 0.25
    assert est.printed == pytest.approx(
        (0.5) ** 2 * (laplacian_variance(ens, g, st).formula / st.d1**2
                      - gradsq_variance(ens, g, st).formula / st.d2**4))


def test_qp_variance_uniform_companion_close():
    g = make_grid(0, 512, 512)
    n0 = np.ones(512)
    ens = n0 + sample_increment(g, NoiseModel(0.12, form_factor=1e-6), 1.0, seed=1, size=400)
    st = estimate_correlation(ens, g, n0=n0, max_lag=4)
    assert qp_variance(ens, g, C, st, n0).rel_diff < 0.02


def test_weighted_density():
    g = make_grid(0, 1, 8)
    assert weighted_density([1, 1, 1, 1, 3, 3, 3, 3], g) == pytest.approx(40 / 16)


def test_istar_moments_shapes(synthetic):
    g, x, _ = synthetic
    v, v_se, dv, dv_se = istar_moments(1 + 1e-3 * x / x.std(), np.ones(g.n_cells), g, C)
    assert v > 0 and dv > 0 and v_se > 0 and dv_se > 0


@pytest.mark.parametrize("p", [0.75, 1.0, 3.0])
def test_scaling_fit_exact_power(p):
    th = np.array([1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    fit = scaling_fit(th, 5.0 * th**p)
    assert fit.exponent == pytest.approx(p, abs=1e-12)
    assert fit.intercept == pytest.approx(math.log(5.0), abs=1e-10)
    assert fit.r_squared == pytest.approx(1.0)


def test_scaling_fit_boltzmann_shifts_intercept_only():
    th = np.array([1e-3, 3e-3, 1e-2, 3e-2, 1e-1])
    a = scaling_fit(th, th**2)
    b = scaling_fit(th, th**2, boltzmann=10.0)
    assert a.exponent == pytest.approx(b.exponent)
    assert b.intercept == pytest.approx(a.intercept - 2 * math.log(10))


@pytest.mark.parametrize("th,var", [
    ([1, 2, 3], [1, 2, 3]),
    ([1, 2, 3, 4], [1, 2, 3, 4]),
    ([0.01, 0.1, 1, 0], [1, 2, 3, 4]),
    ([0.01, 0.1, 1, 10], [1, 2, -3, 4]),
    ([0.01, 0.1, 1, 10], [1, 2, 3]),
])
def test_scaling_fit_rejects_bad_input(th, var):
    with pytest.raises(EstimatorError):
        scaling_fit(th, var)


def test_small_theta_sweep_runs():
    res = theta_sweep([0.03, 0.1, 0.3, 1.0], n_cells=128, members=100, form_factor=1e-9)
    assert [p.theta for p in res.points] == [0.03, 0.1, 0.3, 1.0]
    assert res.window_rule == "coherence"
    assert all(p.var_istar > 0 for p in res.points)
    assert res.fit_istar.exponent > 0


def test_report_document(synthetic):
    g, x, _ = synthetic
    n0 = np.ones(g.n_cells)
    ens = n0 + 1e-3 * x / x.std()
    st = estimate_correlation(ens, g, n0=n0, max_lag=4)
    doc = report(st, gradsq_variance(ens, g, st), laplacian_variance(ens, g, st), cross_term(ens, g),
                 qp_variance(ens, g, C, st, n0))
    assert doc["schema"] == SCHEMA
    assert doc["scaling"] is None
    back = json.loads(dumps(doc))
    assert len(back["G_hat"]) == 5
