import math

import numpy as np
import pytest
from scipy import stats

from sqha.correlated_noise import (
    GAUSSIAN,
    Kernel,
    NoiseModel,
    circulant_eigenvalues,
    dense_covariance,
    dense_sample,
    discrete_limits,
    g0,
    kernel_taylor_coeffs,
    lambda_c,
    load_kernel,
    sample_increment,
    vessel_form_factor,
)
from sqha.errors import ConfigurationError, EstimatorError, NoiseModelError
from sqha.grid_state import PhysicalConstants, make_grid

C = PhysicalConstants()

# frozen from a 20-digit evaluation of the closed forms
LAMBDA_C_UNIT = 1.3920819992079269613
G0_UNIT = 0.25801227546559591348


def test_lambda_c_value():
    assert lambda_c(C, 1.0) == pytest.approx(LAMBDA_C_UNIT, rel=1e-14)
    assert lambda_c(C, 0.25) == pytest.approx(2 * LAMBDA_C_UNIT, rel=1e-14)
    assert lambda_c(C, 0.0) == math.inf
    with pytest.raises(ConfigurationError):
        lambda_c(C, -1.0)


def test_g0_value_and_scaling():
    assert g0(C, 1.0) == pytest.approx(G0_UNIT, rel=1e-14)
    assert g0(C, 3.0, 0.5) == pytest.approx(0.5 * 9 * G0_UNIT, rel=1e-14)
    assert g0(C, 0.0) == 0.0
    with pytest.raises(ConfigurationError):
        g0(PhysicalConstants(hbar=0.0), 1.0)


def test_vessel_form_factor():
    assert vessel_form_factor(C, 2.0) == pytest.approx(1 / 16)
    m = NoiseModel(1.0, vessel_side=2.0)
    assert m.g0 == pytest.approx(G0_UNIT / 16)
    with pytest.raises(ConfigurationError):
        NoiseModel(1.0, form_factor=1.0, vessel_side=2.0)
    with pytest.raises(ConfigurationError):
        NoiseModel(-1.0)


def test_theta_zero_gives_zero_increment():
    g = make_grid(0, 64, 64)
    assert np.all(sample_increment(g, NoiseModel(0.0), 1.0, seed=3, size=4) == 0)


def test_seeded_reproducibility():
    g = make_grid(0, 64, 64)
    m = NoiseModel(0.1)
    a = sample_increment(g, m, 0.5, seed=11, size=3)
    b = sample_increment(g, m, 0.5, seed=11, size=3)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, sample_increment(g, m, 0.5, seed=12, size=3))


def test_generator_continues_stream():
    g = make_grid(0, 64, 64)
    m = NoiseModel(0.1)
    rng = np.random.default_rng(5)
    first = sample_increment(g, m, 1.0, rng)
    second = sample_increment(g, m, 1.0, rng)
    assert not np.array_equal(first, second)
    both = sample_increment(g, m, 1.0, 5, size=2)
    np.testing.assert_array_equal(both[0], first)
    np.testing.assert_array_equal(both[1], second)


def test_short_domain_rejected():
    g = make_grid(0, 4, 64)
    with pytest.raises(NoiseModelError):
        sample_increment(g, NoiseModel(0.01), 1.0, seed=0)


def test_nonperiodic_and_bad_dt_rejected():
    with pytest.raises(ConfigurationError):
        sample_increment(make_grid(0, 64, 64, "clamped"), NoiseModel(0.1), 1.0, 0)
    with pytest.raises(ConfigurationError):
        sample_increment(make_grid(0, 64, 64), NoiseModel(0.1), 0.0, 0)


def test_circulant_row_matches_dense_covariance():
    g = make_grid(0, 64, 64)
    m = NoiseModel(0.1)
    eig = circulant_eigenvalues(g, m, 0.3)
    row = np.fft.ifft(eig).real
    np.testing.assert_allclose(row, dense_covariance(g, m, 0.3)[0], atol=1e-15)
    assert np.min(eig) > -1e-12 * np.max(eig)


def _sample_cov(x, lag):
    return np.mean(x * np.roll(x, -lag, axis=-1))


@pytest.mark.parametrize("sampler", ["spectral", "dense"])
def test_sample_covariance_matches_kernel(sampler):
    g = make_grid(0, 64, 64)
    m = NoiseModel(0.1, form_factor=3.0)
    dt, N = 0.7, 4000
    if sampler == "spectral":
        x = sample_increment(g, m, dt, seed=1, size=N)
    else:
        x = dense_sample(g, m, dt, seed=1, size=N)
    cov = dense_covariance(g, m, dt)[0]
    var = cov[0]
    for lag in (0, 1, 2, 4, 8):
        est = np.array([_sample_cov(x[k], lag) for k in range(N)])
        se = est.std(ddof=1) / math.sqrt(N)
        assert abs(est.mean() - cov[lag]) < 5 * se, lag
    flat = x.ravel() / math.sqrt(var)
    # cells are correlated, so member means are the independent units
    means = x.mean(axis=1)
    assert abs(means.mean()) < 5 * means.std(ddof=1) / math.sqrt(N)
    assert abs(stats.skew(flat)) < 5 * math.sqrt(6 / N)


def test_ito_additivity():
    g = make_grid(0, 64, 64)
    m = NoiseModel(0.1)
    N = 4000
    half = sample_increment(g, m, 0.5, seed=2, size=(2 * N))
    summed = half[:N] + half[N:]
    whole = sample_increment(g, m, 1.0, seed=3, size=N)
    a = (summed**2).mean(axis=1)
    b = (whole**2).mean(axis=1)
    se = math.sqrt(a.var(ddof=1) / N + b.var(ddof=1) / N)
    assert abs(a.mean() - b.mean()) < 5 * se


def test_dense_oracle_size_limit():
    with pytest.raises(ConfigurationError):
        dense_sample(make_grid(0, 1000, 1000), NoiseModel(0.1), 1.0, 0)


def test_gaussian_taylor_coefficients():
    c = kernel_taylor_coeffs(GAUSSIAN)
    # the fit is accurate to its 1e-6 smoothness tolerance
    np.testing.assert_allclose(c.as_tuple(), (1.0, 0.0, -1.0, 0.0, 0.5), atol=1e-6)
    assert c.admissible()


def test_fractional_power_kernel_rejected():
    with pytest.raises(EstimatorError):
        kernel_taylor_coeffs(lambda x: 1 - np.abs(x) ** 1.5)


def test_cusped_kernel_shows_linear_term():
    c = kernel_taylor_coeffs(lambda x: np.exp(-np.abs(x)))
    assert c.a1 == pytest.approx(-1.0, abs=1e-6)
    assert not c.admissible()


def test_linear_term_not_admissible():
    c = kernel_taylor_coeffs(lambda x: 1 - 0.1 * x - x * x)
    assert not c.admissible()


def test_gaussian_discrete_limits():
    lim = discrete_limits(GAUSSIAN, 1.0)
    assert lim.first == pytest.approx(1.0, rel=1e-6)
    assert lim.second == pytest.approx(1.0, rel=1e-6)
    assert lim.third == pytest.approx(6.0, rel=1e-6)
    assert lim.third_taylor == pytest.approx(6.0, rel=1e-6)
    assert lim.third_printed == pytest.approx(8.0, rel=1e-6)


def test_discrete_limits_scale_with_lambda():
    lim = discrete_limits(GAUSSIAN, 2.0)
    assert lim.first == pytest.approx(1 / 4, rel=1e-6)
    assert lim.third == pytest.approx(6 / 16, rel=1e-6)


def test_table_kernel(tmp_path):
    x = np.linspace(0, 4, 401)
    path = tmp_path / "k.txt"
    np.savetxt(path, np.column_stack([x, np.exp(-x * x)]), header="x G")
    k = load_kernel(f"table:{path}")
    assert k(0.5) == pytest.approx(math.exp(-0.25), rel=1e-4)
    assert k(10.0) == 0.0
    assert isinstance(k, Kernel)


def test_table_kernel_must_start_at_one(tmp_path):
    path = tmp_path / "k.txt"
    np.savetxt(path, [[0.0, 0.9], [1.0, 0.1]])
    with pytest.raises(ConfigurationError):
        load_kernel(f"table:{path}")
    with pytest.raises(ConfigurationError):
        load_kernel("lorentzian")
