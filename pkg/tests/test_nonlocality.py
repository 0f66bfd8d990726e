import json
import math

import numpy as np
import pytest

from sqha.errors import AnalysisError
from sqha.grid_state import PhysicalConstants, WFMField, make_grid
from sqha.nonlocality import (
    LABELS,
    NonlocalityReport,
    TailFit,
    analyze,
    centroid,
    classify_regime,
    force_integral,
    lambda_L,
    prefactor_admissible,
    synthetic_tail_force,
    tail_exponent,
)
from sqha.quantum_potential import qp_sqrt_form, quantum_force

C = PhysicalConstants()

# quad evaluation of 2 int_0^inf |F/q| dq / |F(1)| for F = 6 sech^2 tanh (density sech^4)
SECH4_LAMBDA_L = 5.330978811157432


@pytest.fixture(scope="module")
def wide():
    return make_grid(-40, 40, 8192)


def stretched(grid, h):
    return WFMField(grid, np.exp(-2 * np.abs(grid.centers) ** h))


def force_of(field):
    qp = qp_sqrt_form(field, constants=C, floor=1e-250)
    return quantum_force(qp, field.grid), qp.floor_mask


@pytest.mark.parametrize("h", [0.5, 1.0, 1.5, 2.0])
def test_tail_exponent_recovers_h(wide, h):
    fit = tail_exponent(stretched(wide, h))
    assert fit.h == pytest.approx(h, abs=0.05)
    assert fit.phi == pytest.approx(3 - 2 * fit.h)
    assert fit.cells >= 10


def test_tail_exponent_window_and_errors():
    g = make_grid(-20, 20, 400)
    fit = tail_exponent(stretched(g, 2.0), window=(3.0, 6.0))
    assert 3.0 <= fit.fit_window[0] and fit.fit_window[1] <= 6.0
    with pytest.raises(AnalysisError):
        tail_exponent(WFMField(g, np.ones(400)))
    with pytest.raises(AnalysisError):
        tail_exponent(stretched(g, 2.0), window=(3.0, 3.1))
    with pytest.raises(AnalysisError):
        tail_exponent(WFMField(g, np.zeros(400)))


def test_tailfit_phi():
    assert TailFit(1.25, (1, 2), 0.0, 10).phi == 0.5


def test_inverse_square_integrand_converges_to_closed_form(wide):
    F = synthetic_tail_force(wide, -2.0)
    res = force_integral(F, wide, 1.0)
    assert res.diverges is False
    assert res.verdict == "converges"
    # int_1^inf q^-2 dq = 1, trapezoid error at this spacing is below 1e-3
    assert res.value == pytest.approx(1.0, rel=1e-3)
    assert res.power == pytest.approx(-2.0, abs=1e-6)


@pytest.mark.parametrize("p", [-1.0, -0.5, 0.0])
def test_slow_integrands_diverge(wide, p):
    res = force_integral(synthetic_tail_force(wide, p), wide, 1.0)
    assert res.diverges is True
    assert math.isinf(res.value)


def test_force_integral_input_checks(wide):
    F = synthetic_tail_force(wide, -2.0)
    with pytest.raises(AnalysisError):
        force_integral(F, wide, 0.0)
    with pytest.raises(AnalysisError):
        force_integral(F, wide, 15.0)


@pytest.mark.parametrize("h,diverges", [(0.5, False), (1.2, False), (1.4, False), (1.6, True), (2.0, True)])
def test_stretched_exponential_verdicts(wide, h, diverges):
    F, mask = force_of(stretched(wide, h))
    assert force_integral(F, wide, 1.0, 0.0, mask).diverges is diverges


def test_zero_force_vanishes(wide):
    res = force_integral(np.zeros(wide.n_cells), wide, 1.0)
    assert res.diverges is False
    assert res.verdict == "converges (tail vanishes)"


def test_lambda_L_sech_matches_quad(wide):
    F, mask = force_of(WFMField(wide, 1 / np.cosh(wide.centers) ** 4))
    assert lambda_L(F, wide, 1.0, 0.0, mask) == pytest.approx(SECH4_LAMBDA_L, rel=2e-3)


def test_lambda_L_gaussian_infinite(wide):
    F, mask = force_of(stretched(wide, 2.0))
    assert math.isinf(lambda_L(F, wide, 1.0, 0.0, mask))


def test_lambda_L_errors(wide):
    with pytest.raises(AnalysisError):
        lambda_L(np.zeros(wide.n_cells), wide, 1.0)
    with pytest.raises(AnalysisError):
        lambda_L(synthetic_tail_force(wide, -2.0), wide, math.inf)


def test_centroid():
    g = make_grid(-10, 10, 200)
    f = WFMField(g, np.exp(-((g.centers - 1.5) ** 2)))
    assert centroid(f) == pytest.approx(1.5, abs=1e-10)


REGIMES = [
    ((math.inf, math.inf, 1.0, 100.0, 0.0, 1.0), "non_local_deterministic"),
    ((math.inf, 0.0, 1.0, 100.0, 0.0, 0.0), "local_deterministic"),
    ((1.0, 0.5, 2.0, 100.0, 1.0, 1.0), "microscopic_stochastic"),
    ((0.1, 50.0, 2.0, 100.0, 1.0, 1.0), "macroscopic_nonlocal_stochastic"),
    ((0.1, math.inf, 2.0, 100.0, 1.0, 1.0), "macroscopic_nonlocal_stochastic"),
    ((0.1, 0.1, 2.0, 100.0, 1.0, 1.0), "macroscopic_local_stochastic"),
    # thresholds are inclusive
    ((0.2, 0.2, 2.0, 100.0, 1.0, 1.0), "macroscopic_local_stochastic"),
    ((0.0, 1.0, 2.0, 100.0, 1.0, 1.0), "macroscopic_nonlocal_stochastic"),
]


@pytest.mark.parametrize("args,label", REGIMES)
def test_classify_regime_table(args, label):
    assert classify_regime(*args) == label


def test_regime_table_covers_all_labels():
    assert {label for _, label in REGIMES} == set(LABELS)


@pytest.mark.parametrize("args", [
    (1.0, 1.0, 1.0, 10.0, 0.0, 1.0),
    (math.inf, 1.0, 1.0, 10.0, 1.0, 1.0),
    (1.0, 1.0, 20.0, 10.0, 1.0, 1.0),
    (1.0, 1.0, 1.0, 10.0, -1.0, 1.0),
    (1.0, math.nan, 1.0, 10.0, 1.0, 1.0),
    (1.0, -1.0, 1.0, 10.0, 1.0, 1.0),
    (1.0, 1.0, 0.0, 10.0, 1.0, 1.0),
])
def test_classify_regime_rejects(args):
    with pytest.raises(AnalysisError):
        classify_regime(*args)


def test_prefactor_admissible():
    assert prefactor_admissible(2.0, 0)
    assert prefactor_admissible(-1.0, 1)
    assert not prefactor_admissible(0.0, 2)


def test_analyze_gaussian_is_nonlocal():
    g = make_grid(-20, 20, 1024)
    rep = analyze(stretched(g, 2.0), C, theta=0.0)
    assert rep.h == pytest.approx(2.0, abs=0.05)
    assert rep.diverges is True
    assert rep.regime == "non_local_deterministic"
    assert rep.candidate == "non-local"
    line = rep.verdict_line()
    assert "lambda_L: infinite" in line and "regime candidate: non-local" in line


def test_analyze_sech_local_with_coarse_resolution():
    g = make_grid(-40, 40, 4096)
    rep = analyze(WFMField(g, 1 / np.cosh(g.centers) ** 2), C, theta=1.0, resolution=200.0, system_length=400.0)
    assert rep.diverges is False
    assert math.isfinite(rep.lambda_L)
    assert rep.regime == "macroscopic_local_stochastic"
    assert rep.candidate == "local"


def test_report_json_roundtrip():
    rep = NonlocalityReport(2.0, math.inf, True, math.inf, "non_local_deterministic", "diverges")
    doc = json.loads(rep.to_json())
    assert doc["lambda_L"] == "infinite"
    assert doc["schema"] == "sqha.nonlocality.v1"
    assert doc["candidate"] == "non-local"
    nan = NonlocalityReport(None, math.nan, None, math.nan, None, "indeterminate")
    assert nan.candidate == "indeterminate"
    assert nan.to_dict()["lambda_L"] is None
