"""Deterministic quantum hydrodynamics and an independent Schrodinger oracle.

The Madelung integrator advances density and action on the grid,

    dn/dt = -d/dq (n dS/dq / m)
    dS/dt = -[(dS/dq)^2 / 2m + V + V_qu(n)]

with classical RK4 and V_qu recomputed at every stage.  The split-step
Fourier oracle evolves psi = sqrt(n) exp(iS/hbar) directly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConfigurationError, SolverError
from .grid_state import Grid1D, PhysicalConstants, WFMField, ddx, ddx_phase, normalize
from .quantum_potential import DEFAULT_FLOOR, extend_linear, qp_sqrt_arrays, qp_sqrt_raw

MAX_MASK_FRACTION = 0.2


@dataclass(frozen=True)
class EvolveConfig:
    dt: float
    t_end: float
    record_every: int = 1
    integrator: str = "rk4_madelung"
    c_cfl: float = 0.1
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if not self.t_end >= 0:
            raise ConfigurationError("t_end must be >= 0")
        if self.record_every < 1:
            raise ConfigurationError("record_every must be >= 1")
        if self.integrator not in ("rk4_madelung", "split_step_oracle"):
            raise ConfigurationError(f"unknown integrator {self.integrator!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    fields: list = field(default_factory=list)

    def append(self, t: float, f: WFMField) -> None:
        self.times.append(float(t))
        self.fields.append(f)

    @property
    def final(self) -> WFMField:
        return self.fields[-1]


def harmonic_potential(grid: Grid1D, omega: float = 1.0, constants: PhysicalConstants = PhysicalConstants(),
                       center: float = 0.0) -> np.ndarray:
    return 0.5 * constants.mass * omega**2 * (grid.centers - center) ** 2


def check_cfl(dt: float, grid: Grid1D, constants: PhysicalConstants, c_cfl: float = 0.1) -> None:
    """Dispersive stability guard |dt| <= c_cfl * m * spacing^2 / hbar."""
    if constants.hbar == 0.0:
        return
    limit = c_cfl * constants.mass * grid.spacing**2 / constants.hbar
    if abs(dt) > limit * (1 + 1e-12):
        raise SolverError(f"dt={dt:g} violates the CFL guard dt <= {limit:g}")


def madelung_rhs(n, S, V, grid: Grid1D, constants: PhysicalConstants, floor=DEFAULT_FLOOR, include_qp=True,
                 max_mask_fraction=MAX_MASK_FRACTION):
    """Time derivatives (dn/dt, dS/dt) for arrays of shape (..., n_cells).

    Below the density floor the Bernoulli function (dS/dq)^2/2m + V + V_qu is
    continued linearly from the edge of the resolved region (constant force),
    so the vacuum co-moves with the density edge instead of feeling the
    undefined quantum potential there.
    """
    grad_s = ddx_phase(S, grid)
    dn = -ddx(n * grad_s / constants.mass, grid)
    bern = 0.5 * grad_s**2 / constants.mass + V
    if include_qp:
        # RK4 stages may undershoot zero by roundoff in the vacuum region
        v_qu, mask = qp_sqrt_raw(np.maximum(n, 0.0), grid, constants, floor)
        frac = np.mean(mask, axis=-1)
        if np.any(frac > max_mask_fraction):
            raise SolverError(
                f"density floor masks {100 * np.max(frac):.1f}% of cells "
                f"(limit {100 * max_mask_fraction:.0f}%); widen resolution or shrink the domain"
            )
        bern = extend_linear(bern + v_qu, mask)
    return dn, -bern


def madelung_arrays(n, S, V, grid, constants, dt, floor=DEFAULT_FLOOR, include_qp=True, c_cfl=0.1,
                    max_mask_fraction=MAX_MASK_FRACTION):
    """One RK4 step on raw arrays (stacks allowed)."""
    check_cfl(dt, grid, constants, c_cfl)

    def rhs(a, b):
        return madelung_rhs(a, b, V, grid, constants, floor, include_qp, max_mask_fraction)

    k1n, k1s = rhs(n, S)
    k2n, k2s = rhs(n + 0.5 * dt * k1n, S + 0.5 * dt * k1s)
    k3n, k3s = rhs(n + 0.5 * dt * k2n, S + 0.5 * dt * k2s)
    k4n, k4s = rhs(n + dt * k3n, S + dt * k3s)
    n_new = n + dt / 6.0 * (k1n + 2.0 * k2n + 2.0 * k3n + k4n)
    S_new = S + dt / 6.0 * (k1s + 2.0 * k2s + 2.0 * k3s + k4s)
    if not (np.all(np.isfinite(n_new)) and np.all(np.isfinite(S_new))):
        raise SolverError("Madelung step produced non-finite values")
    # undershoot of order roundoff in the vacuum region
    return np.maximum(n_new, 0.0), S_new


def madelung_step(field: WFMField, V, grid: Grid1D | None = None, constants=PhysicalConstants(), dt: float = 1e-3,
                  floor=DEFAULT_FLOOR, include_qp=True, c_cfl=0.1) -> WFMField:
    """Advance (n, S) by one RK4 step of the Madelung system."""
    grid = grid or field.grid
    V = np.zeros(grid.n_cells) if V is None else np.asarray(V, dtype=float)
    n, S = madelung_arrays(field.n, field.S, V, grid, constants, dt, floor, include_qp, c_cfl)
    return field.with_arrays(n=n, S=S)


# --- split-step Fourier oracle ----------------------------------------------

def to_psi(field: WFMField, constants: PhysicalConstants) -> np.ndarray:
    return np.sqrt(field.n) * np.exp(1j * field.S / constants.hbar)


def from_psi(psi: np.ndarray, grid: Grid1D, constants: PhysicalConstants) -> WFMField:
    """n = |psi|^2 and S = hbar * phase, unwrapped by nearest branch from the left edge."""
    phase = np.unwrap(np.angle(psi))
    return WFMField(grid, np.abs(psi) ** 2, constants.hbar * phase)


def wavenumbers(grid: Grid1D) -> np.ndarray:
    return 2.0 * np.pi * np.fft.fftfreq(grid.n_cells, d=grid.spacing)


def split_step_oracle(field: WFMField, V, config: EvolveConfig, constants=PhysicalConstants()) -> Trajectory:
    """Strang-split kinetic/potential propagation; returns recorded fields."""
    grid = field.grid
    if not grid.periodic:
        raise ConfigurationError("split-step oracle needs a periodic grid")
    if constants.hbar == 0.0:
        raise ConfigurationError("split-step oracle needs hbar > 0")
    check_cfl(config.dt, grid, constants, config.c_cfl)
    V = np.zeros(grid.n_cells) if V is None else np.asarray(V, dtype=float)
    dt, hbar = config.dt, constants.hbar
    half_v = np.exp(-0.5j * V * dt / hbar)
    kin = np.exp(-0.5j * hbar * wavenumbers(grid) ** 2 * dt / constants.mass)
    psi = to_psi(field, constants)
    traj = Trajectory()
    traj.append(0.0, field)
    for step in range(1, config.n_steps + 1):
        psi = half_v * np.fft.ifft(kin * np.fft.fft(half_v * psi))
        if step % config.record_every == 0 or step == config.n_steps:
            traj.append(step * dt, from_psi(psi, grid, constants))
    return traj


def imaginary_time_ground_state(grid: Grid1D, V, constants=PhysicalConstants(), dtau: float = 1e-2,
                                tol: float = 1e-13, max_steps: int = 200_000) -> WFMField:
    """Ground state by split-step relaxation in imaginary time (spectral kinetic term)."""
    V = np.asarray(V, dtype=float)
    half_v = np.exp(-0.5 * V * dtau / constants.hbar)
    kin = np.exp(-0.5 * constants.hbar * wavenumbers(grid) ** 2 * dtau / constants.mass)
    psi = np.exp(-(grid.centers - grid.centers.mean()) ** 2).astype(complex)
    for _ in range(max_steps):
        new = half_v * np.fft.ifft(kin * np.fft.fft(half_v * psi))
        new = new.real / np.sqrt(grid.integrate(np.abs(new) ** 2))
        if np.max(np.abs(np.abs(new) - np.abs(psi))) < tol:
            psi = new
            break
        psi = new
    return normalize(WFMField(grid, np.abs(psi) ** 2))


def discrete_ground_state(grid: Grid1D, V, constants=PhysicalConstants()) -> WFMField:
    """Lowest eigenvector of -(hbar^2/2m) Lap + V with the three-point Laplacian.

    This is the exact stationary state of the discretised Madelung system:
    with the same stencil V + V_qu equals the eigenvalue in every cell.  The
    periodic corner coupling is dropped; it only matters when the state does
    not decay toward the domain edges.
    """
    V = np.asarray(V, dtype=float)
    c = constants.hbar**2 / (2.0 * constants.mass * grid.spacing**2)
    diag = V + 2.0 * c
    if not grid.periodic:
        # edge ghost equals the edge value
        diag = diag.copy()
        diag[0] -= c
        diag[-1] -= c
    off = -c * np.ones(grid.n_cells - 1)
    _, vec = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    a = np.abs(vec[:, 0])
    return normalize(WFMField(grid, a * a))


# --- integration driver -------------------------------------------------------

def evolve(field: WFMField, V, config: EvolveConfig, constants=PhysicalConstants(), include_qp=True) -> Trajectory:
    if config.integrator == "split_step_oracle":
        return split_step_oracle(field, V, config, constants)
    grid = field.grid
    V = np.zeros(grid.n_cells) if V is None else np.asarray(V, dtype=float)
    check_cfl(config.dt, grid, constants, config.c_cfl)
    n, S = field.n, field.S
    traj = Trajectory()
    traj.append(0.0, field)
    for step in range(1, config.n_steps + 1):
        n, S = madelung_arrays(n, S, V, grid, constants, config.dt, config.floor, include_qp, config.c_cfl)
        if step % config.record_every == 0 or step == config.n_steps:
            traj.append(step * config.dt, field.with_arrays(n=n, S=S))
    return traj


def wave_particle_residual(field: WFMField, grid: Grid1D | None, constants: PhysicalConstants, velocity) -> float:
    """Density-weighted L2 norm of (velocity - dS/dq / m)."""
    grid = grid or field.grid
    d = np.asarray(velocity, dtype=float) - ddx_phase(field.S, grid) / constants.mass
    return float(np.sqrt(grid.integrate(field.n * d * d)))


def stationarity_residual(field: WFMField, V, grid: Grid1D | None = None, constants=PhysicalConstants(),
                          floor=DEFAULT_FLOOR) -> float:
    """Density-weighted L2 norm of d(V + V_qu)/dq over resolved cells."""
    grid = grid or field.grid
    V = np.zeros(grid.n_cells) if V is None else np.asarray(V, dtype=float)
    qp = qp_sqrt_arrays(field.n, grid, constants, floor)
    g = np.where(qp.floor_mask, 0.0, ddx(V + qp.v_qu, grid))
    return float(np.sqrt(grid.integrate(field.n * g * g)))


def write_trajectory_csv(traj: Trajectory, path) -> None:
    """Rows (t, cell_index, q, n, S) with a schema comment line."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        fh.write("# schema: sqha.trajectory.v1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "cell_index", "q", "n", "S"])
        for t, f in zip(traj.times, traj.fields):
            q = f.grid.centers
            for i in range(f.grid.n_cells):
                w.writerow([repr(t), i, repr(float(q[i])), repr(float(f.n[i])), repr(float(f.S[i]))])
