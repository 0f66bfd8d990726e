"""Spatially correlated, time-white Gaussian density noise and kernel analysis.

The increment over a step dt has covariance g0 * G(d / lambda_c) * dt between
two cells a periodic distance d apart.  Sampling diagonalises the circulant
covariance with the FFT; a dense eigendecomposition is kept as an oracle for
small grids.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EstimatorError, NoiseModelError
from .grid_state import Grid1D, PhysicalConstants

CLIP_TOL = 1e-12
DENSE_MAX_CELLS = 256


# --- kernels -------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """Normalised correlation G(x), x = distance / lambda_c, with G(0) = 1.

    ``name`` is "gaussian" or "table:<path>"; tables are interpolated linearly
    and taken as zero beyond their last abscissa.
    """

    name: str = "gaussian"
    xs: tuple = field(default=(), repr=False)
    gs: tuple = field(default=(), repr=False)

    def __call__(self, x):
        x = np.abs(np.asarray(x, dtype=float))
        if self.name == "gaussian":
            return np.exp(-x * x)
        return np.interp(x, self.xs, self.gs, right=0.0)


def load_kernel(spec: str) -> Kernel:
    if spec == "gaussian":
        return Kernel()
    if not spec.startswith("table:"):
        raise ConfigurationError(f"unknown kernel {spec!r}")
    path = Path(spec[len("table:"):])
    try:
        data = np.loadtxt(path, comments="#", ndmin=2)
    except ValueError:
        data = np.loadtxt(path, comments="#", skiprows=1, ndmin=2)
    if data.shape[1] < 2:
        raise ConfigurationError(f"{path}: kernel table needs two columns")
    order = np.argsort(data[:, 0])
    xs, gs = data[order, 0], data[order, 1]
    if xs[0] != 0.0 or not math.isclose(gs[0], 1.0, abs_tol=1e-12):
        raise ConfigurationError(f"{path}: kernel table must start at (0, 1)")
    return Kernel(spec, tuple(xs), tuple(gs))


GAUSSIAN = Kernel()


# --- physical scales ---------------------------------------------------------------

def lambda_c(constants: PhysicalConstants, theta: float) -> float:
    """Coherence length (pi/2)^{3/2} hbar / sqrt(2 m k theta); infinite at theta = 0."""
    if theta < 0:
        raise ConfigurationError("theta must be >= 0")
    if theta == 0:
        return math.inf
    return (math.pi / 2) ** 1.5 * constants.hbar / math.sqrt(2 * constants.mass * constants.boltzmann * theta)


def g0(constants: PhysicalConstants, theta: float, form_factor: float = 1.0) -> float:
    """Single-point noise rate form_factor * 8 m (k theta)^2 / (pi^3 hbar^2)."""
    if theta < 0:
        raise ConfigurationError("theta must be >= 0")
    if theta == 0:
        return 0.0
    if constants.hbar == 0:
        raise ConfigurationError("g0 needs hbar > 0")
    return form_factor * 8 * constants.mass * (constants.boltzmann * theta) ** 2 / (math.pi**3 * constants.hbar**2)


def vessel_form_factor(constants: PhysicalConstants, vessel_side: float) -> float:
    """Form factor mobility / side^6 with mobility = side^2 / hbar."""
    if not vessel_side > 0:
        raise ConfigurationError("vessel_side must be > 0")
    return (vessel_side**2 / constants.hbar) / vessel_side**6


@dataclass(frozen=True)
class NoiseModel:
    theta: float
    constants: PhysicalConstants = PhysicalConstants()
    form_factor: float | None = None
    vessel_side: float | None = None
    kernel: Kernel = GAUSSIAN

    def __post_init__(self):
        if not self.theta >= 0:
            raise ConfigurationError("theta must be >= 0")
        if self.form_factor is not None and self.vessel_side is not None:
            raise ConfigurationError("give either form_factor or vessel_side, not both")
        if self.form_factor is not None and not self.form_factor > 0:
            raise ConfigurationError("form_factor must be > 0")

    @property
    def mu(self) -> float:
        if self.vessel_side is not None:
            return vessel_form_factor(self.constants, self.vessel_side)
        return 1.0 if self.form_factor is None else self.form_factor

    @property
    def lambda_c(self) -> float:
        return lambda_c(self.constants, self.theta)

    @property
    def g0(self) -> float:
        return g0(self.constants, self.theta, self.mu)


# --- sampling ----------------------------------------------------------------------

def periodic_distances(grid: Grid1D) -> np.ndarray:
    j = np.arange(grid.n_cells)
    return grid.spacing * np.minimum(j, grid.n_cells - j)


def _clip(eig: np.ndarray, row_l1: float = 0.0) -> np.ndarray:
    """Zero out negative eigenvalues that are within tolerance of zero.

    Tolerance is CLIP_TOL times the largest eigenvalue plus the transform
    roundoff bound n * eps * sum|row|, below which a sign is meaningless.
    """
    top = np.max(eig)
    worst = np.min(eig)
    tol = CLIP_TOL * max(top, 0.0) + eig.size * np.finfo(float).eps * row_l1
    if worst < -tol:
        raise NoiseModelError(
            f"kernel is not positive definite on this grid (min eigenvalue {worst:.3e}, max {top:.3e}); "
            "the periodic domain is probably too short compared with lambda_c"
        )
    return np.maximum(eig, 0.0)


@functools.lru_cache(maxsize=64)
def _spectral_sqrt(grid: Grid1D, kernel: Kernel, lam_c: float, variance: float) -> np.ndarray:
    row = variance * kernel(periodic_distances(grid) / lam_c)
    eig = _clip(np.fft.fft(row).real, float(np.sum(np.abs(row))))
    out = np.sqrt(eig)
    out.setflags(write=False)
    return out


def circulant_eigenvalues(grid: Grid1D, model: NoiseModel, dt: float) -> np.ndarray:
    """Eigenvalues of the increment covariance on a periodic grid (before clipping)."""
    row = model.g0 * dt * model.kernel(periodic_distances(grid) / model.lambda_c)
    return np.fft.fft(row).real


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_increment(grid: Grid1D, model: NoiseModel, dt: float, seed, size: int | None = None) -> np.ndarray:
    """Gaussian increment with covariance g0 G dt; ``size`` draws a stack.

    ``seed`` is an integer (fresh generator) or a Generator to continue.
    """
    if not grid.periodic:
        raise ConfigurationError("noise sampling needs a periodic grid")
    if not dt > 0:
        raise ConfigurationError("dt must be > 0")
    shape = (grid.n_cells,) if size is None else (size, grid.n_cells)
    rng = _rng(seed)
    w = rng.standard_normal(shape)
    if model.theta == 0:
        return np.zeros(shape)
    root = _spectral_sqrt(grid, model.kernel, model.lambda_c, model.g0 * dt)
    return np.fft.ifft(root * np.fft.fft(w, axis=-1), axis=-1).real


def dense_covariance(grid: Grid1D, model: NoiseModel, dt: float) -> np.ndarray:
    j = np.arange(grid.n_cells)
    d = np.abs(j[:, None] - j[None, :])
    d = grid.spacing * np.minimum(d, grid.n_cells - d)
    return model.g0 * dt * model.kernel(d / model.lambda_c)


def dense_sample(grid: Grid1D, model: NoiseModel, dt: float, seed, size: int = 1) -> np.ndarray:
    """Oracle sampler: eigendecomposition of the dense covariance (small grids only)."""
    if grid.n_cells > DENSE_MAX_CELLS:
        raise ConfigurationError(f"dense oracle limited to {DENSE_MAX_CELLS} cells")
    cov = dense_covariance(grid, model, dt)
    eig, vec = np.linalg.eigh(cov)
    root = vec * np.sqrt(_clip(eig, float(np.max(np.sum(np.abs(cov), axis=1)))))
    w = _rng(seed).standard_normal((size, grid.n_cells))
    return w @ root.T


# --- kernel analysis -------------------------------------------------------------------

@dataclass(frozen=True)
class KernelCoeffs:
    a0: float
    a1: float
    a2: float
    a3: float
    a4: float
    error: float = 0.0

    def as_tuple(self):
        return (self.a0, self.a1, self.a2, self.a3, self.a4)

    def admissible(self, tol: float = 1e-6) -> bool:
        """Normalised at zero with no linear or cubic term."""
        return abs(self.a0 - 1.0) <= tol and abs(self.a1) <= tol and abs(self.a3) <= tol


def _poly_coeffs(kernel, width: float, deg: int = 12, nodes: int = 48) -> np.ndarray:
    k = np.arange(nodes)
    x = 0.5 * width * (1 - np.cos(np.pi * (k + 0.5) / nodes))
    y = np.asarray(kernel(x), dtype=float)
    fit = np.polynomial.Polynomial.fit(x, y, deg, domain=[0.0, width])
    return fit.convert().coef[:5]


def kernel_taylor_coeffs(kernel, lambda_c: float = 1.0, tol: float = 1e-6) -> KernelCoeffs:
    """Taylor coefficients a0..a4 of G in x = distance / lambda_c on x >= 0.

    ``kernel`` maps x to G.  Polynomial fits on Chebyshev nodes over [0, w]
    are repeated with w halved; disagreement beyond ``tol`` (relative to the
    coefficient scale) means the kernel is not smooth at the origin.
    """
    if not lambda_c > 0:
        raise ConfigurationError("lambda_c must be > 0")
    wide = _poly_coeffs(kernel, 0.5)
    narrow = _poly_coeffs(kernel, 0.25)
    err = float(np.max(np.abs(wide - narrow)))
    if err > tol * max(1.0, float(np.max(np.abs(narrow)))):
        raise EstimatorError(f"kernel is not smooth at the origin (coefficient drift {err:.2e})")
    return KernelCoeffs(*map(float, narrow), error=err)


@dataclass(frozen=True)
class DiscreteLimits:
    """Small-lag limits of the three kernel combinations appearing in the variance estimators."""

    first: float   # lam^-2 (1 - G)
    second: float  # lam^-4 (1 - G)^2
    third: float   # lam^-4 (3 + G(2 lam) - 4 G)
    third_taylor: float
    third_printed: float
    spread: tuple


def _richardson3(f1, f2, f3):
    """Remove lam^2 and lam^4 errors from values at lam, lam/2, lam/4."""
    r1 = (4 * f2 - f1) / 3
    r2 = (4 * f3 - f2) / 3
    return (16 * r2 - r1) / 15, r2


def discrete_limits(kernel, lambda_c: float, rtol: float = 1e-2) -> DiscreteLimits:
    lams = lambda_c / np.array([10.0, 20.0, 40.0])

    def combos(lam):
        g1 = float(kernel(lam / lambda_c))
        g2 = float(kernel(2 * lam / lambda_c))
        return np.array([(1 - g1) / lam**2, (1 - g1) ** 2 / lam**4, (3 + g2 - 4 * g1) / lam**4])

    vals = [combos(lam) for lam in lams]
    best, rough = _richardson3(*vals)
    spread = np.abs(best - rough) / np.maximum(np.abs(best), 1e-300)
    if np.any(spread > rtol):
        raise EstimatorError(f"discrete limits did not converge (relative spread {spread.max():.2e})")
    a4 = kernel_taylor_coeffs(kernel, lambda_c).a4
    return DiscreteLimits(
        first=float(best[0]),
        second=float(best[1]),
        third=float(best[2]),
        third_taylor=12 * a4 / lambda_c**4,
        third_printed=16 * a4 / lambda_c**4,
        spread=tuple(float(s) for s in spread),
    )
