import math

import numpy as np
import pytest

from sqha.correlated_noise import NoiseModel
from sqha.deterministic_solver import EvolveConfig, discrete_ground_state, evolve, harmonic_potential
from sqha.errors import ConfigurationError, SolverError
from sqha.grid_state import PhysicalConstants, ProfileSpec, WFMField, init_profile, make_grid
from sqha.reporting import read_csv_rows
from sqha.sqha_solver import (
    SQHAConfig,
    classical_stochastic_step,
    initial_state,
    istar,
    particle_velocity,
    reanchor,
    run_ensemble,
    sqha_step,
    write_traces_csv,
)

C = PhysicalConstants()


def uniform_field(n_cells=64, L=64.0, level=1.0):
    g = make_grid(0, L, n_cells)
    return WFMField(g, np.full(n_cells, level))


def test_config_validation():
    for bad in ({"dt": 0, "t_end": 1}, {"dt": 1, "t_end": -1}, {"dt": 1, "t_end": 1, "reanchor_interval": 0.5},
                {"dt": 1, "t_end": 1, "positivity_policy": "ignore"}, {"dt": 1, "t_end": 1, "record_every": 0}):
        with pytest.raises(ConfigurationError):
            SQHAConfig(**bad)
    assert SQHAConfig(dt=0.1, t_end=1, reanchor_interval=0.25).reanchor_steps == 2


def test_zero_noise_is_deterministic_bit_for_bit():
    g = make_grid(-6, 6, 128)
    V = harmonic_potential(g)
    f = init_profile(g, ProfileSpec.harmonic_ground(q0=0.3))
    dt = 0.1 * g.spacing**2
    st = initial_state(f, seed=0)
    for _ in range(50):
        st = sqha_step(st, V, g, C, NoiseModel(0.0), dt)
    det = evolve(f, V, EvolveConfig(dt=dt, t_end=50 * dt, record_every=1000)).final
    np.testing.assert_array_equal(st.n, det.n)
    np.testing.assert_array_equal(st.n0, det.n)
    assert np.all(st.dp_st == 0)


def test_variance_grows_linearly_for_uniform_companion():
    # no advection and no clipping: dn is the sum of increments, Var = g0 t
    f = uniform_field()
    noise = NoiseModel(0.1)
    cfg = SQHAConfig(dt=0.1, t_end=1.0, positivity_policy="clip_only", renormalize_each_step=False)
    res = run_ensemble(f, None, C, noise, cfg, base_seed=0, members=400)
    dn = res.state.n - res.state.n0
    assert np.all(res.state.clip_fraction == 0)
    per_member = np.mean(dn**2, axis=1)
    se = per_member.std(ddof=1) / math.sqrt(len(per_member))
    assert abs(per_member.mean() - noise.g0 * 1.0) < 4 * se


def test_istar_linear_response():
    # n = n0 (1 + eps s): dV_qu = -(1/4) eps (s'' + 2 (a0'/a0) s') with a0'/a0 = -q/2
    g = make_grid(-8, 8, 2048)
    n0 = init_profile(g, ProfileSpec.gaussian(sigma=1.0)).n
    q, k, eps = g.centers, 1.5, 1e-5
    s = np.sin(k * q)
    star, mask = istar(n0 * (1 + eps * s), n0, g, C)
    expected = -0.25 * eps * (-k * k * s + 2 * (-q / 2) * k * np.cos(k * q))
    core = np.abs(q) < 4
    assert not mask[core].any()
    err = np.max(np.abs(star[core] - expected[core]))
    assert err < 1e-3 * np.max(np.abs(expected[core]))


def test_istar_zero_for_equal_fields_and_masks_union():
    g = make_grid(-20, 20, 400)
    n0 = init_profile(g, ProfileSpec.gaussian()).n
    star, mask = istar(n0, n0, g, C)
    assert np.all(star == 0)
    assert mask.any()
    with pytest.raises(ConfigurationError):
        istar(n0[:10], n0, g, C)


def test_clip_renormalize_conserves_mass():
    f = uniform_field(level=0.02)
    noise = NoiseModel(0.1)
    cfg = SQHAConfig(dt=0.1, t_end=0.5)
    res = run_ensemble(f, None, C, noise, cfg, base_seed=3, members=20)
    assert np.all(res.state.n >= 0)
    mass = f.grid.integrate(res.state.n)
    np.testing.assert_allclose(mass, f.grid.integrate(f.n), rtol=1e-12)
    assert np.max(res.state.clip_fraction) > 0


def test_clip_only_reports_mass_drift():
    f = uniform_field(level=0.02)
    cfg = SQHAConfig(dt=0.1, t_end=0.5, positivity_policy="clip_only", renormalize_each_step=False)
    res = run_ensemble(f, None, C, NoiseModel(0.1), cfg, base_seed=3, members=20)
    assert np.all(res.state.n >= 0)
    assert np.max(np.abs(res.state.mass_drift)) > 0


def test_reject_step_redraws_until_nonnegative():
    f = uniform_field(level=0.2)
    cfg = SQHAConfig(dt=0.1, t_end=0.3, positivity_policy="reject_step", renormalize_each_step=False)
    res = run_ensemble(f, None, C, NoiseModel(0.1), cfg, base_seed=0, members=10)
    assert np.all(res.state.n >= 0)
    assert np.all(res.state.clip_fraction == 0)


def test_reject_step_gives_up():
    f = uniform_field(level=1e-4)
    cfg = SQHAConfig(dt=0.1, t_end=0.1, positivity_policy="reject_step", max_retries=2)
    with pytest.raises(SolverError):
        run_ensemble(f, None, C, NoiseModel(0.1), cfg, base_seed=0, members=4)


def test_thread_count_does_not_change_results():
    f = uniform_field()
    cfg = SQHAConfig(dt=0.1, t_end=0.3)
    a = run_ensemble(f, None, C, NoiseModel(0.1), cfg, base_seed=9, members=7, threads=1)
    b = run_ensemble(f, None, C, NoiseModel(0.1), cfg, base_seed=9, members=7, threads=3)
    np.testing.assert_array_equal(a.state.n, b.state.n)
    assert a.traces == b.traces


def test_member_seed_equals_single_run():
    f = uniform_field()
    cfg = SQHAConfig(dt=0.1, t_end=0.3)
    ens = run_ensemble(f, None, C, NoiseModel(0.1), cfg, base_seed=4, members=3)
    single = run_ensemble(f, None, C, NoiseModel(0.1), cfg, base_seed=6, members=1)
    np.testing.assert_array_equal(ens.state.n[2], single.state.n[0])


def test_reanchor_adopts_stochastic_density():
    f = uniform_field()
    st = initial_state(f, seed=1, members=2)
    st = sqha_step(st, None, f.grid, C, NoiseModel(0.1), 0.1)
    new = reanchor(st)
    np.testing.assert_array_equal(new.n0, st.n)
    assert new.S0.shape == st.n.shape
    assert new.window_start == st.t


def test_run_counts_reanchors():
    f = uniform_field()
    cfg = SQHAConfig(dt=0.1, t_end=1.0, reanchor_interval=0.3)
    res = run_ensemble(f, None, C, NoiseModel(0.1), cfg, members=2)
    assert res.reanchors == 3
    assert res.steps == 10


def test_ensemble_mean_tracks_companion_in_core():
    g = make_grid(-6, 6, 128)
    V = harmonic_potential(g)
    f = discrete_ground_state(g, V)
    noise = NoiseModel(2.0, form_factor=1e-8)
    cfg = SQHAConfig(dt=0.5 * g.spacing**2, t_end=1.0, record_every=10**6, c_cfl=0.5,
                     positivity_policy="clip_only", renormalize_each_step=False)
    res = run_ensemble(f, V, C, noise, cfg, base_seed=0, members=200)
    n, n0 = res.state.n, res.state.n0[0]
    core = n0 > 1e-2 * n0.max()
    se = n.std(axis=0, ddof=1) / math.sqrt(n.shape[0])
    z = (n.mean(axis=0) - n0)[core] / se[core]
    assert np.max(np.abs(z)) < 4


def test_classical_step_uses_classical_companion():
    g = make_grid(-12, 12, 256)
    f = init_profile(g, ProfileSpec.sech())
    dt = 0.1 * g.spacing**2
    st = classical_stochastic_step(initial_state(f), None, g, C, NoiseModel(0.0), dt)
    det = evolve(f, None, EvolveConfig(dt=dt, t_end=dt), include_qp=False).final
    np.testing.assert_array_equal(st.n0, det.n)


def test_particle_velocity_from_phase():
    g = make_grid(0, 10, 50)
    f = init_profile(g, ProfileSpec.uniform(momentum=0.3))
    v = particle_velocity(initial_state(f), g, PhysicalConstants(mass=2.0))
    np.testing.assert_allclose(v, 0.15)


def test_seedless_state_cannot_draw():
    f = uniform_field()
    with pytest.raises(ConfigurationError):
        sqha_step(initial_state(f, seed=None), None, f.grid, C, NoiseModel(0.1), 0.1)


def test_traces_csv(tmp_path):
    f = uniform_field()
    res = run_ensemble(f, None, C, NoiseModel(0.1), SQHAConfig(dt=0.1, t_end=0.2), members=2)
    path = tmp_path / "traces.csv"
    write_traces_csv(res.traces, path)
    assert path.read_text().startswith("# schema: sqha.traces.v1\nrealization,t,observable,value\n")
    rows = read_csv_rows(path)
    names = {r["observable"] for r in rows}
    assert names == {"mass_drift", "clip_fraction", "istar_variance", "wave_particle_residual"}
    assert len(rows) == 2 * 3 * 4
