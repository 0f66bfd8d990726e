"""First-order stochastic density evolution around a deterministic companion.

The stochastic density is carried as ``n = n0 + dn``.  The companion
``(n0, S0)`` follows the Madelung integrator; the fluctuation is advected by
the companion velocity and kicked by correlated noise,

    dn <- dn - d/dq(dn * dS0/dq / m) dt + eta_dt.

At zero noise ``dn`` stays identically zero, so the stochastic trajectory is
the deterministic one bit for bit.  Arrays may be single fields of shape
(n_cells,) or ensembles of shape (members, n_cells).
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .correlated_noise import NoiseModel, _spectral_sqrt
from .deterministic_solver import MAX_MASK_FRACTION, madelung_arrays
from .errors import ConfigurationError, SolverError
from .grid_state import Grid1D, PhysicalConstants, WFMField, ddx, ddx_phase
from .quantum_potential import DEFAULT_FLOOR, qp_sqrt_raw

POLICIES = ("clip_renormalize", "clip_only", "reject_step")


@dataclass(frozen=True)
class SQHAConfig:
    dt: float
    t_end: float
    reanchor_interval: float | None = None
    positivity_policy: str = "clip_renormalize"
    renormalize_each_step: bool = True
    max_retries: int = 20
    record_every: int = 1
    c_cfl: float = 0.1
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if not self.t_end >= 0:
            raise ConfigurationError("t_end must be >= 0")
        if self.reanchor_interval is not None and self.reanchor_interval < self.dt:
            raise ConfigurationError("reanchor_interval must be >= dt")
        if self.positivity_policy not in POLICIES:
            raise ConfigurationError(f"unknown positivity_policy {self.positivity_policy!r}")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def reanchor_steps(self) -> int | None:
        if self.reanchor_interval is None:
            return None
        return max(1, int(round(self.reanchor_interval / self.dt)))


@dataclass
class SQHAState:
    """Stochastic density ``n`` with its companion ``(n0, S0)``.

    For ensembles ``n`` has shape (members, n_cells); the companion is a
    single shared field until the first re-anchor and per-member afterwards.

    ``dp_st`` accumulates -dt * d(I*)/dq, the stochastic momentum proxy;
    ``mass_drift`` and ``clip_fraction`` describe the last step.
    """

    n: np.ndarray
    n0: np.ndarray
    S0: np.ndarray
    t: float = 0.0
    realization_seed: int | None = None
    dp_st: np.ndarray | None = None
    mass_drift: np.ndarray | float = 0.0
    clip_fraction: np.ndarray | float = 0.0
    window_start: float = 0.0
    rngs: list | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.dp_st is None:
            self.dp_st = np.zeros_like(self.n)

    @property
    def members(self) -> int | None:
        return self.n.shape[0] if self.n.ndim == 2 else None


def initial_state(field0: WFMField, seed: int | None = 0, members: int | None = None) -> SQHAState:
    """State with n = n0 = field0.n; ``members`` stacks an ensemble with seeds seed + i."""
    n = np.array(field0.n, dtype=float)
    S = np.array(field0.S, dtype=float)
    if members is None:
        rngs = None if seed is None else [np.random.default_rng(seed)]
        return SQHAState(n.copy(), n, S, realization_seed=seed, rngs=rngs)
    if members < 1:
        raise ConfigurationError("members must be >= 1")
    rngs = None if seed is None else [np.random.default_rng(seed + i) for i in range(members)]
    # members share one companion until the first re-anchor
    return SQHAState(np.repeat(n[None, :], members, axis=0), n, S, realization_seed=seed, rngs=rngs)


def _draw(state: SQHAState, grid: Grid1D, noise: NoiseModel, dt: float, rows=None) -> np.ndarray:
    """Noise increments for all (or the selected) members from their own generators."""
    if state.rngs is None:
        raise ConfigurationError("state has no random generators (seed=None)")
    idx = range(len(state.rngs)) if rows is None else rows
    w = np.stack([state.rngs[i].standard_normal(grid.n_cells) for i in idx])
    if noise.theta == 0:
        inc = np.zeros_like(w)
    else:
        root = _spectral_sqrt(grid, noise.kernel, noise.lambda_c, noise.g0 * dt)
        inc = np.fft.ifft(root * np.fft.fft(w, axis=-1), axis=-1).real
    return inc if state.n.ndim == 2 or rows is not None else inc[0]


def _apply_positivity(n, target_mass, grid, config: SQHAConfig):
    clipped = n < 0
    frac = np.mean(clipped, axis=-1)
    if clipped.any():
        n = np.where(clipped, 0.0, n)
    renorm = config.positivity_policy == "clip_renormalize" or config.renormalize_each_step
    mass = grid.integrate(n)
    drift = mass - target_mass
    if renorm:
        if np.any(mass <= 0):
            raise SolverError("stochastic density lost all mass")
        ratio = target_mass / mass
        # exact ratio 1 leaves the array untouched (zero-noise bit equality)
        ratio = np.broadcast_to(ratio, mass.shape)
        if np.any(ratio != 1.0):
            n = n * (ratio[..., None] if np.ndim(ratio) else ratio)
    return n, drift, frac


def _step(state: SQHAState, V, grid: Grid1D, constants: PhysicalConstants, noise: NoiseModel, dt: float,
          config: SQHAConfig, include_qp: bool) -> SQHAState:
    if noise.theta > 0 and not grid.periodic:
        raise ConfigurationError("stochastic runs need a periodic grid")
    V = np.zeros(grid.n_cells) if V is None else np.asarray(V, dtype=float)
    n0_new, S0_new = madelung_arrays(state.n0, state.S0, V, grid, constants, dt, config.floor, include_qp,
                                     config.c_cfl, MAX_MASK_FRACTION)
    dn = state.n - state.n0
    drift = dn - dt * ddx(dn * ddx_phase(state.S0, grid) / constants.mass, grid)
    inc = _draw(state, grid, noise, dt)
    n_new = n0_new + (drift + inc)

    if config.positivity_policy == "reject_step":
        for _ in range(config.max_retries):
            bad = np.any(n_new < 0, axis=-1)
            if not np.any(bad):
                break
            if n_new.ndim == 1:
                n_new = n0_new + (drift + _draw(state, grid, noise, dt))
            else:
                rows = np.flatnonzero(bad)
                n_new = n_new.copy()
                base = n0_new[rows] if n0_new.ndim == 2 else n0_new
                n_new[rows] = base + (drift[rows] + _draw(state, grid, noise, dt, rows=list(rows)))
        else:
            if np.any(n_new < 0):
                raise SolverError(f"reject_step: negative density after {config.max_retries} redraws at t={state.t:g}")

    target = grid.integrate(n0_new)
    n_new, mass_drift, clip_frac = _apply_positivity(n_new, target, grid, config)

    star, _ = istar(n_new, n0_new, grid, constants, config.floor)
    dp = state.dp_st - dt * ddx(star, grid)
    return replace(state, n=n_new, n0=n0_new, S0=S0_new, t=state.t + dt, dp_st=dp,
                   mass_drift=mass_drift, clip_fraction=clip_frac)


def sqha_step(state: SQHAState, V, grid: Grid1D, constants: PhysicalConstants, noise: NoiseModel, dt: float,
              config: SQHAConfig | None = None) -> SQHAState:
    """One Euler-Maruyama step of the first-order stochastic density equation."""
    config = config or SQHAConfig(dt=dt, t_end=dt)
    return _step(state, V, grid, constants, noise, dt, config, include_qp=True)


def classical_stochastic_step(state: SQHAState, V, grid: Grid1D, constants: PhysicalConstants, noise: NoiseModel,
                              dt: float, config: SQHAConfig | None = None) -> SQHAState:
    """As :func:`sqha_step` but the companion ignores the quantum potential."""
    config = config or SQHAConfig(dt=dt, t_end=dt)
    return _step(state, V, grid, constants, noise, dt, config, include_qp=False)


def istar(n, n0, grid: Grid1D, constants: PhysicalConstants, floor: float = DEFAULT_FLOOR):
    """I* = V_qu(n) - V_qu(n0) and the union of both floor masks; zero where masked."""
    n = np.asarray(n, dtype=float)
    n0 = np.asarray(n0, dtype=float)
    if n.shape[-1] != grid.n_cells or n0.shape[-1] != grid.n_cells:
        raise ConfigurationError("fields do not match the grid")
    v, m = qp_sqrt_raw(n, grid, constants, floor)
    v0, m0 = qp_sqrt_raw(n0, grid, constants, floor)
    mask = m | m0
    if np.any(np.all(mask, axis=-1)):
        raise ConfigurationError("every cell is below the density floor")
    return np.where(mask, 0.0, v - v0), mask


def reanchor(state: SQHAState) -> SQHAState:
    """Adopt the current stochastic density as the new companion density; S0 is kept."""
    S0 = np.broadcast_to(state.S0, state.n.shape).copy()
    return replace(state, n0=state.n.copy(), S0=S0, window_start=state.t)


def particle_velocity(state: SQHAState, grid: Grid1D, constants: PhysicalConstants) -> np.ndarray:
    """Companion velocity plus the stochastic momentum proxy, (dS0/dq + dp_st) / m."""
    return (ddx_phase(state.S0, grid) + state.dp_st) / constants.mass


# --- ensemble driver ----------------------------------------------------------

OBSERVABLES = ("mass_drift", "clip_fraction", "istar_variance", "wave_particle_residual")


@dataclass
class RunResult:
    state: SQHAState
    traces: list  # rows (realization, t, observable, value)
    steps: int
    reanchors: int


def _observe(state: SQHAState, grid: Grid1D, constants: PhysicalConstants, floor: float) -> dict:
    star, mask = istar(np.atleast_2d(state.n), np.atleast_2d(state.n0), grid, constants, floor)
    ok = ~mask
    cnt = np.sum(ok, axis=-1)
    mean = np.sum(star, axis=-1) / cnt
    var = np.sum(np.where(ok, (star - mean[:, None]) ** 2, 0.0), axis=-1) / cnt
    vel = np.atleast_2d(state.dp_st) / constants.mass
    wpr = np.sqrt(grid.integrate(np.atleast_2d(state.n) * vel * vel))
    rows = var.shape[0]
    return {
        "mass_drift": np.broadcast_to(state.mass_drift, (rows,)),
        "clip_fraction": np.broadcast_to(state.clip_fraction, (rows,)),
        "istar_variance": var,
        "wave_particle_residual": wpr,
    }


def _run_chunk(state: SQHAState, V, grid, constants, noise, config: SQHAConfig, include_qp: bool, first_index: int):
    step_fn = sqha_step if include_qp else classical_stochastic_step
    traces = []
    k_re = config.reanchor_steps
    reanchors = 0

    def record(st):
        obs = _observe(st, grid, constants, config.floor)
        for i in range(len(obs["mass_drift"])):
            for name in OBSERVABLES:
                traces.append((first_index + i, st.t, name, float(obs[name][i])))

    record(state)
    for step in range(1, config.n_steps + 1):
        state = step_fn(state, V, grid, constants, noise, config.dt, config)
        state.t = step * config.dt
        if k_re is not None and step % k_re == 0 and step != config.n_steps:
            state = reanchor(state)
            reanchors += 1
        if step % config.record_every == 0 or step == config.n_steps:
            record(state)
    return state, traces, reanchors


def run_ensemble(field0: WFMField, V, constants: PhysicalConstants, noise: NoiseModel, config: SQHAConfig,
                 base_seed: int = 0, members: int = 1, threads: int = 1, include_qp: bool = True) -> RunResult:
    """Run ``members`` realizations (seeds base_seed + i), optionally split over threads.

    Chunks are contiguous index ranges and are re-assembled in index order, so
    the result does not depend on the thread count.
    """
    if members < 1 or threads < 1:
        raise ConfigurationError("members and threads must be >= 1")
    grid = field0.grid
    threads = min(threads, members)
    bounds = np.linspace(0, members, threads + 1).astype(int)
    jobs = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        st = initial_state(field0, seed=None, members=int(b - a))
        st.rngs = [np.random.default_rng(base_seed + i) for i in range(a, b)]
        st.realization_seed = base_seed + int(a)
        jobs.append((st, int(a)))

    def work(job):
        return _run_chunk(job[0], V, grid, constants, noise, config, include_qp, job[1])

    if threads == 1:
        outs = [work(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outs = list(pool.map(work, jobs))
    states = [o[0] for o in outs]
    traces = sorted((row for o in outs for row in o[1]), key=lambda r: (r[0], r[1], OBSERVABLES.index(r[2])))
    def cat(arrays, states_):
        return np.concatenate([np.broadcast_to(a, s.n.shape) for a, s in zip(arrays, states_)])

    merged = SQHAState(
        n=np.concatenate([s.n for s in states]),
        n0=cat([s.n0 for s in states], states),
        S0=cat([s.S0 for s in states], states),
        t=states[0].t,
        realization_seed=base_seed,
        dp_st=np.concatenate([s.dp_st for s in states]),
        mass_drift=np.concatenate([np.atleast_1d(s.mass_drift) for s in states]),
        clip_fraction=np.concatenate([np.atleast_1d(s.clip_fraction) for s in states]),
        window_start=states[0].window_start,
    )
    return RunResult(merged, traces, config.n_steps, outs[0][2])


def write_traces_csv(traces, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("# schema: sqha.traces.v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["realization", "t", "observable", "value"])
        for r, t, name, value in traces:
            w.writerow([r, repr(float(t)), name, repr(float(value))])
