"""Uniform 1D grid, physical constants, density/phase fields and stencils.

All array helpers act on the last axis so that a stack of fields with shape
``(members, n_cells)`` can be processed in one call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigurationError, GridMismatchError

Boundary = Literal["periodic", "clamped"]
MIN_CELLS = 8


@dataclass(frozen=True)
class PhysicalConstants:
    """Internal unit system; defaults are the dimensionless hbar = m = k = 1."""

    hbar: float = 1.0
    mass: float = 1.0
    boltzmann: float = 1.0
    light_speed: float = 137.035999

    def __post_init__(self):
        if not self.hbar >= 0.0:
            raise ConfigurationError("hbar must be >= 0")
        for name in ("mass", "boltzmann", "light_speed"):
            if not getattr(self, name) > 0.0:
                raise ConfigurationError(f"{name} must be > 0")

    @property
    def compton_length(self) -> float:
        return self.hbar / (self.mass * self.light_speed)


CGS_PROTON = PhysicalConstants(
    hbar=1.054571817e-27, mass=1.67262192e-24, boltzmann=1.380649e-16, light_speed=2.99792458e10
)


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_cells: int
    boundary: Boundary = "periodic"

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / self.n_cells

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + (np.arange(self.n_cells) + 0.5) * self.spacing

    @property
    def periodic(self) -> bool:
        return self.boundary == "periodic"

    def wrap(self, index):
        """Periodic index arithmetic; a bijection on ``range(n_cells)``."""
        return np.mod(index, self.n_cells)

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Trapezoid rule over the cells.

        On a periodic grid this is the plain cell sum times the spacing; on a
        clamped grid the trapezoid over cell centres plus the two half-cell
        end caps (edge value held constant) reduces to the same sum.
        """
        return np.sum(values, axis=-1) * self.spacing


def make_grid(x_min: float, x_max: float, n_cells: int, boundary: Boundary = "periodic") -> Grid1D:
    if not (math.isfinite(x_min) and math.isfinite(x_max)) or x_max <= x_min:
        raise ConfigurationError(f"degenerate domain [{x_min}, {x_max}]")
    if int(n_cells) != n_cells or n_cells < MIN_CELLS:
        raise ConfigurationError(f"n_cells must be an integer >= {MIN_CELLS}, got {n_cells}")
    if boundary not in ("periodic", "clamped"):
        raise ConfigurationError(f"unknown boundary policy {boundary!r}")
    return Grid1D(float(x_min), float(x_max), int(n_cells), boundary)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WFMField:
    """Density ``n`` (= |psi|^2) and action ``S`` sampled on ``grid``."""

    grid: Grid1D
    n: np.ndarray
    S: np.ndarray = None
    normalized: bool = False

    def __post_init__(self):
        n = _frozen(self.n)
        S = np.zeros_like(n) if self.S is None else np.array(self.S, dtype=float)
        if n.shape[-1] != self.grid.n_cells or S.shape != n.shape:
            raise GridMismatchError("field arrays do not match the grid")
        if np.any(n < 0):
            raise ConfigurationError("density must be nonnegative")
        S.setflags(write=False)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "S", S)

    @property
    def amplitude(self) -> np.ndarray:
        return np.sqrt(self.n)

    def mass(self) -> float:
        return float(self.grid.integrate(self.n))

    def with_arrays(self, n=None, S=None, normalized=None) -> "WFMField":
        return WFMField(
            self.grid,
            self.n if n is None else n,
            self.S if S is None else S,
            self.normalized if normalized is None else normalized,
        )


@dataclass(frozen=True)
class ProfileSpec:
    """Initial-state recipe.

    ``kind`` is one of gaussian, stretched_exp, harmonic_ground, sech,
    uniform or table.  ``momentum`` adds a plane-wave phase
    ``S = momentum * (q - q0)``.
    """

    kind: str
    sigma: float = 1.0
    q0: float = 0.0
    h: float = 1.0
    scale: float = 1.0
    omega: float = 1.0
    values: tuple = field(default=(), repr=False)
    momentum: float = 0.0

    KINDS = ("gaussian", "stretched_exp", "harmonic_ground", "sech", "uniform", "table")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigurationError(f"unknown profile kind {self.kind!r}")
        for name in ("sigma", "scale", "omega", "h"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"profile parameter {name} must be > 0")

    @classmethod
    def gaussian(cls, sigma=1.0, q0=0.0, momentum=0.0):
        return cls("gaussian", sigma=sigma, q0=q0, momentum=momentum)

    @classmethod
    def stretched_exp(cls, h, scale=1.0, q0=0.0):
        return cls("stretched_exp", h=h, scale=scale, q0=q0)

    @classmethod
    def harmonic_ground(cls, omega=1.0, q0=0.0, momentum=0.0):
        return cls("harmonic_ground", omega=omega, q0=q0, momentum=momentum)

    @classmethod
    def sech(cls, scale=1.0, q0=0.0):
        return cls("sech", scale=scale, q0=q0)

    @classmethod
    def uniform(cls, momentum=0.0):
        return cls("uniform", momentum=momentum)

    @classmethod
    def table(cls, values: Sequence[float]):
        return cls("table", values=tuple(float(v) for v in values))


def _log_amplitude(grid: Grid1D, spec: ProfileSpec, constants: PhysicalConstants) -> np.ndarray:
    """log of the unnormalised amplitude sqrt(n); evaluated in log space to avoid underflow."""
    q = grid.centers - spec.q0
    if spec.kind == "gaussian":
        return -(q**2) / (4.0 * spec.sigma**2)
    if spec.kind == "stretched_exp":
        return -np.abs(q / spec.scale) ** spec.h
    if spec.kind == "harmonic_ground":
        if constants.hbar == 0.0:
            raise ConfigurationError("harmonic ground state needs hbar > 0")
        return -constants.mass * spec.omega * q**2 / (2.0 * constants.hbar)
    if spec.kind == "sech":
        x = np.abs(q / spec.scale)
        return -(x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0))
    if spec.kind == "uniform":
        return np.zeros_like(q)
    raise AssertionError(spec.kind)


def init_profile(grid: Grid1D, spec: ProfileSpec, constants: PhysicalConstants = PhysicalConstants()) -> WFMField:
    if spec.kind == "table":
        values = np.asarray(spec.values, dtype=float)
        if values.shape != (grid.n_cells,):
            raise ConfigurationError(
                f"table has {values.size} entries, grid has {grid.n_cells} cells"
            )
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigurationError("table entries must be finite and nonnegative")
        n = values
    else:
        log_a = _log_amplitude(grid, spec, constants)
        n = np.exp(2.0 * (log_a - log_a.max()))
    S = spec.momentum * (grid.centers - spec.q0)
    return normalize(WFMField(grid, n, S))


def normalize(field: WFMField, grid: Grid1D | None = None) -> WFMField:
    grid = field.grid if grid is None else grid
    if grid != field.grid:
        raise GridMismatchError("field lives on a different grid")
    mass = field.grid.integrate(field.n)
    if not mass > 0:
        raise ConfigurationError("cannot normalise an all-zero density")
    if field.normalized and abs(mass - 1.0) <= 1e-15:
        return field
    return field.with_arrays(n=field.n / mass, normalized=True)


def distance(a: WFMField, b: WFMField, metric: str = "L2") -> float:
    """Plain elementwise norm of ``a.n - b.n``; no shift or wrap alignment."""
    if a.grid != b.grid:
        raise GridMismatchError("fields live on different grids")
    d = a.n - b.n
    if metric == "L2":
        return float(np.sqrt(a.grid.spacing * np.sum(d * d)))
    if metric == "Linf":
        return float(np.max(np.abs(d)))
    raise ConfigurationError(f"unknown metric {metric!r}")


def read_profile_table(path, grid: Grid1D) -> np.ndarray:
    """Read a two-column (q, n) text table with one header line and
    resample it onto the cell centres (zero outside the table).

    Strictly positive tables are interpolated with a cubic spline in log n,
    which keeps the quantum potential of exponential tails smooth; tables
    containing zeros fall back to linear interpolation.
    """
    data = np.loadtxt(Path(path), skiprows=1, delimiter=None, ndmin=2)
    if data.shape[1] < 2:
        raise ConfigurationError(f"{path}: expected two columns")
    order = np.argsort(data[:, 0])
    q, n = data[order, 0], data[order, 1]
    if np.any(n < 0):
        raise ConfigurationError(f"{path}: density values must be nonnegative")
    x = grid.centers
    inside = (x >= q[0]) & (x <= q[-1])
    if q.size >= 4 and np.all(n > 0) and np.all(np.diff(q) > 0):
        out = np.zeros_like(x)
        out[inside] = np.exp(CubicSpline(q, np.log(n))(x[inside]))
        return out
    return np.interp(x, q, n, left=0.0, right=0.0)


# --- stencils -------------------------------------------------------------

def pad(f: np.ndarray, grid: Grid1D, width: int) -> np.ndarray:
    """Ghost cells along the last axis: wrap for periodic, edge copy for clamped."""
    if grid.periodic:
        left, right = f[..., -width:], f[..., :width]
    else:
        left = np.repeat(f[..., :1], width, axis=-1)
        right = np.repeat(f[..., -1:], width, axis=-1)
    return np.concatenate((left, f, right), axis=-1)


def ddx(f: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Second-order central first derivative."""
    g = pad(f, grid, 1)
    return (g[..., 2:] - g[..., :-2]) / (2.0 * grid.spacing)


def ddx_phase(S: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Central derivative of an action field with linearly extrapolated ghosts.

    The action of a moving state is not periodic (S = p q has a jump at the
    seam), so its gradient is never taken across the wrap.
    """
    g = np.concatenate((2.0 * S[..., :1] - S[..., 1:2], S, 2.0 * S[..., -1:] - S[..., -2:-1]), axis=-1)
    return (g[..., 2:] - g[..., :-2]) / (2.0 * grid.spacing)


def laplacian(f: np.ndarray, grid: Grid1D) -> np.ndarray:
    """Three-point second derivative."""
    g = pad(f, grid, 1)
    return (g[..., 2:] - 2.0 * g[..., 1:-1] + g[..., :-2]) / grid.spacing**2


def forward_diff(f: np.ndarray, grid: Grid1D) -> np.ndarray:
    """(f[i+1] - f[i]) / spacing."""
    g = pad(f, grid, 2)[..., 2:]
    return (g[..., 1:-1] - g[..., :-2]) / grid.spacing


def forward_laplacian(f: np.ndarray, grid: Grid1D) -> np.ndarray:
    """(f[i+2] - 2 f[i+1] + f[i]) / spacing**2, the one-sided second difference."""
    g = pad(f, grid, 2)[..., 2:]
    return (g[..., 2:] - 2.0 * g[..., 1:-1] + g[..., :-2]) / grid.spacing**2
