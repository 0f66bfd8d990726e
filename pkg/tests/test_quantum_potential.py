import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sqha.errors import ConfigurationError
from sqha.grid_state import PhysicalConstants, ProfileSpec, WFMField, init_profile, make_grid
from sqha.quantum_potential import (
    extend_linear,
    fill_masked,
    floor_mask,
    mutated_prefactor,
    qp_grad_form,
    qp_sqrt_form,
    quantum_force,
)


def gaussian_field(sigma=1.0, n_cells=512, L=10.0):
    g = make_grid(-L, L, n_cells)
    return init_profile(g, ProfileSpec.gaussian(sigma=sigma))


def gaussian_vqu(q, sigma, hbar=1.0, m=1.0):
    # sqrt n = exp(-q^2 / 4 sigma^2)
    return -(hbar**2 / (2 * m)) * (q**2 / (4 * sigma**4) - 1 / (2 * sigma**2))


def test_uniform_density_gives_zero_potential():
    g = make_grid(0, 1, 32)
    qp = qp_sqrt_form(WFMField(g, np.ones(32)))
    assert np.all(qp.v_qu == 0)
    assert np.all(qp.force == 0)
    assert not qp.floor_mask.any()


def test_gaussian_matches_closed_form():
    f = gaussian_field(1.0, 1024)
    qp = qp_sqrt_form(f)
    q = f.grid.centers
    core = np.abs(q) < 4
    np.testing.assert_allclose(qp.v_qu[core], gaussian_vqu(q[core], 1.0), atol=1e-3)


def test_gaussian_second_order_convergence():
    errs = []
    for n in (256, 512):
        f = gaussian_field(1.0, n)
        q = f.grid.centers
        core = np.abs(q) < 3
        errs.append(np.max(np.abs(qp_sqrt_form(f).v_qu[core] - gaussian_vqu(q[core], 1.0))))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_sech_potential_and_force_closed_form():
    g = make_grid(-10, 10, 2048)
    f = init_profile(g, ProfileSpec.sech(scale=1.0))
    qp = qp_sqrt_form(f)
    q = g.centers
    s2 = 1 / np.cosh(q) ** 2
    core = np.abs(q) < 6
    # h^2/12 truncation of Lap(a)/a, with |a''''/a| <= 5 for sech
    bound = 0.5 * 5 * g.spacing**2 / 12 * 1.1
    np.testing.assert_allclose(qp.v_qu[core], -0.5 + s2[core], atol=bound)
    np.testing.assert_allclose(qp.force[core], 2 * s2[core] * np.tanh(q[core]), atol=10 * bound)


def test_prefactor_scales_with_hbar_squared_over_mass():
    f = gaussian_field()
    base = qp_sqrt_form(f).v_qu
    c = PhysicalConstants(hbar=2.0, mass=0.5)
    np.testing.assert_allclose(qp_sqrt_form(f, constants=c).v_qu, 8 * base, rtol=1e-12)


def test_classical_limit_is_zero():
    f = gaussian_field()
    qp = qp_sqrt_form(f, constants=PhysicalConstants(hbar=0.0))
    assert np.all(qp.v_qu == 0)


@settings(max_examples=40)
@given(st.floats(1e-8, 1e8))
def test_scale_invariant_in_density(c):
    g = make_grid(-6, 6, 128)
    n = np.exp(-g.centers**2) + 0.1
    a = qp_sqrt_form(WFMField(g, n)).v_qu
    b = qp_sqrt_form(WFMField(g, c * n)).v_qu
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_mutated_prefactor_is_scoped():
    f = gaussian_field()
    base = qp_sqrt_form(f).v_qu
    with mutated_prefactor(1.05):
        np.testing.assert_allclose(qp_sqrt_form(f).v_qu, 1.05 * base, rtol=1e-12)
    np.testing.assert_array_equal(qp_sqrt_form(f).v_qu, base)


def test_grad_form_first_order_agreement():
    diffs = []
    for n in (1024, 2048, 4096):
        f = gaussian_field(1.0, n)
        q = f.grid.centers
        core = np.abs(q) < 3
        diffs.append(np.max(np.abs(qp_grad_form(f).v_qu[core] - qp_sqrt_form(f).v_qu[core])))
    assert diffs[0] / diffs[1] == pytest.approx(2.0, rel=0.1)
    assert diffs[1] / diffs[2] == pytest.approx(2.0, rel=0.1)


def test_floor_masks_tail_cells():
    g = make_grid(-20, 20, 400)
    f = init_profile(g, ProfileSpec.gaussian(sigma=1.0))
    qp = qp_sqrt_form(f, floor=1e-12)
    expected = f.n < 1e-12 * f.n.max()
    np.testing.assert_array_equal(qp.floor_mask, expected)
    assert np.all(qp.force[expected] == 0)
    assert np.all(np.isfinite(qp.v_qu))


def test_all_masked_rejected():
    g = make_grid(0, 1, 8)
    with pytest.raises(ConfigurationError):
        qp_sqrt_form(WFMField(g, np.zeros(8)))


def test_negative_density_rejected():
    from sqha.quantum_potential import qp_sqrt_arrays
    g = make_grid(0, 1, 8)
    with pytest.raises(ConfigurationError):
        qp_sqrt_arrays(-np.ones(8), g, PhysicalConstants())


def test_fill_masked_nearest_ties_left():
    v = np.array([0.0, 1.0, 0.0, 0.0, 4.0, 0.0])
    m = np.array([True, False, True, True, False, True])
    np.testing.assert_array_equal(fill_masked(v, m), [1, 1, 1, 4, 4, 4])
    v = np.array([1.0, 0.0, 3.0])
    m = np.array([False, True, False])
    np.testing.assert_array_equal(fill_masked(v, m), [1, 1, 3])


def test_extend_linear_continues_edge_slope():
    v = np.array([0.0, 0.0, 2.0, 3.0, 0.0, 0.0])
    m = np.array([True, True, False, False, True, True])
    np.testing.assert_array_equal(extend_linear(v, m), [0, 1, 2, 3, 4, 5])


def test_extend_linear_single_valid_cell_is_flat():
    v = np.array([0.0, 7.0, 0.0])
    m = np.array([True, False, True])
    np.testing.assert_array_equal(extend_linear(v, m), [7, 7, 7])


def test_fill_masked_works_on_stacks():
    v = np.array([[0.0, 1.0, 0.0], [2.0, 0.0, 0.0]])
    m = np.array([[True, False, True], [False, True, True]])
    np.testing.assert_array_equal(fill_masked(v, m), [[1, 1, 1], [2, 2, 2]])


def test_floor_mask_per_member():
    n = np.array([[1.0, 1e-20], [1e-20, 1e-20 * 1e-20]])
    np.testing.assert_array_equal(floor_mask(n, 1e-12), [[False, True], [False, True]])


def test_quantum_force_matches_field_force():
    f = gaussian_field()
    qp = qp_sqrt_form(f)
    np.testing.assert_array_equal(quantum_force(qp, f.grid), qp.force)


def test_force_antisymmetric_for_symmetric_density():
    f = gaussian_field(1.3, 256)
    F = qp_sqrt_form(f).force
    np.testing.assert_allclose(F, -F[::-1], atol=1e-12)
