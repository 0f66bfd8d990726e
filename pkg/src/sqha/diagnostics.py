"""Discrete variance estimators for density and quantum-potential fluctuations.

Conventions: ``ensemble`` is an array (members, n_cells) of stochastic
densities; ``n0`` is the companion density.  ``g_hat`` estimates the
single-point variance accumulated over the window, g(0) * delta_t, so the
window length is already folded in.  Stencils are the forward differences

    grad n  ~ (n[i+1] - n[i]) / dx
    lap n   ~ (n[i+2] - 2 n[i+1] + n[i]) / dx^2

and for Gaussian fluctuations with gradient variance s^2 = 2 g (1 - G) / dx^2
and mean gradient mu, Var(grad^2) = 2 s^4 + 4 mu^2 s^2.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EstimatorError
from .grid_state import Grid1D, PhysicalConstants, ddx, forward_diff, forward_laplacian
from .quantum_potential import DEFAULT_FLOOR

MIN_MEMBERS = 100
SCHEMA = "sqha.diagnostics.v1"


@dataclass
class FluctuationStats:
    g_hat: float
    G_hat: np.ndarray
    G_se: np.ndarray
    A: float
    d1: float
    d2: float
    delta_t: float | None = None
    members: int = 0

    def G(self, lag: int) -> float:
        return float(self.G_hat[lag])


@dataclass
class VarianceEstimate:
    """Formula prediction next to the direct Monte Carlo value (with standard error)."""

    formula: float
    direct: float
    direct_se: float
    printed: float | None = None

    @property
    def rel_diff(self) -> float:
        if self.direct == 0:
            return 0.0 if self.formula == 0 else math.inf
        return abs(self.formula - self.direct) / abs(self.direct)


@dataclass
class CrossTerm:
    value: float
    se: float

    @property
    def z(self) -> float:
        if self.se == 0:
            return 0.0
        return self.value / self.se


@dataclass
class ScalingFitResult:
    exponent: float
    intercept: float
    r_squared: float
    theta_values: tuple
    exponent_se: float = 0.0


def _as_ensemble(ensemble) -> np.ndarray:
    e = np.asarray(ensemble, dtype=float)
    if e.ndim != 2:
        raise EstimatorError("ensemble must have shape (members, n_cells)")
    return e


def _cells(grid: Grid1D, k: int) -> slice:
    """Cells whose k-cell forward stencil stays inside a clamped grid."""
    return slice(None) if grid.periodic else slice(0, grid.n_cells - k)


def _lagged(x: np.ndarray, lag: int, grid: Grid1D):
    if grid.periodic:
        return x, np.roll(x, -lag, axis=-1)
    n = x.shape[-1]
    return x[..., : n - lag], x[..., lag:]


def weighted_density(n0, grid: Grid1D) -> float:
    """Density-weighted mean density, integral n^2 / integral n."""
    n0 = np.asarray(n0, dtype=float)
    mass = grid.integrate(n0)
    if mass == 0:
        return math.nan
    return float(grid.integrate(n0 * n0) / mass)


def estimate_correlation(ensemble, grid: Grid1D, n0=None, delta_t: float | None = None, max_lag: int | None = None,
                         min_members: int = MIN_MEMBERS) -> FluctuationStats:
    """Cell-averaged sample covariance of the fluctuations at lags 0..max_lag.

    Fluctuations are taken about the per-cell ensemble mean (unbiased,
    ddof = 1).  ``G_se`` is the member-to-member standard error of each
    normalised lag covariance.
    """
    e = _as_ensemble(ensemble)
    m = e.shape[0]
    if m < min_members:
        raise EstimatorError(f"need at least {min_members} ensemble members, got {m}")
    if max_lag is None:
        max_lag = min(grid.n_cells // 2, 64)
    x = e - e.mean(axis=0)
    scale = m / (m - 1)
    per_member = np.empty((m, max_lag + 1))
    for lag in range(max_lag + 1):
        a, b = _lagged(x, lag, grid)
        per_member[:, lag] = np.mean(a * b, axis=-1) * scale
    cov = per_member.mean(axis=0)
    g_hat = float(cov[0])
    if g_hat > 0:
        G = cov / g_hat
        G[0] = 1.0
        se = per_member.std(axis=0, ddof=1) / math.sqrt(m) / g_hat
        se[0] = 0.0
    else:
        G = np.where(np.arange(max_lag + 1) == 0, 1.0, 0.0)
        se = np.zeros(max_lag + 1)
    if n0 is None:
        n0 = e.mean(axis=0)
    n0 = np.asarray(n0, dtype=float)
    A = float(np.mean(ddx(n0, grid) ** 2))
    d = weighted_density(n0, grid)
    return FluctuationStats(g_hat, G, se, A, d, d, delta_t, m)


def _member_var(values: np.ndarray) -> tuple[float, float]:
    """Cell-averaged ensemble variance and its standard error across members."""
    m = values.shape[0]
    x = values - values.mean(axis=0)
    per_member = np.mean(x * x, axis=-1) * m / (m - 1)
    return float(per_member.mean()), float(per_member.std(ddof=1) / math.sqrt(m))


def gradsq_variance(ensemble, grid: Grid1D, stats: FluctuationStats) -> VarianceEstimate:
    """Variance of (grad n)^2: Gaussian-moment prediction vs direct sample value.

    formula = 8 g^2 (1 - G)^2 / dx^4 + 8 A g (1 - G) / dx^2.  ``printed`` is
    the alternative bookkeeping {4 g^2 (1 - G)}^2 / dx^4 + 4 A g (1 - G) / dx^2.
    """
    e = _as_ensemble(ensemble)
    lam = grid.spacing
    g, one_minus = stats.g_hat, 1.0 - stats.G(1)
    formula = 8 * g**2 * one_minus**2 / lam**4 + 8 * stats.A * g * one_minus / lam**2
    printed = (4 * g**2 * one_minus) ** 2 / lam**4 + 4 * stats.A * g * one_minus / lam**2
    sq = forward_diff(e, grid)[..., _cells(grid, 1)] ** 2
    direct, se = _member_var(sq)
    return VarianceEstimate(float(formula), direct, se, float(printed))


def laplacian_variance(ensemble, grid: Grid1D, stats: FluctuationStats) -> VarianceEstimate:
    """Variance of the forward Laplacian: 2 g [3 + G(2) - 4 G(1)] / dx^4 vs direct."""
    e = _as_ensemble(ensemble)
    lam = grid.spacing
    formula = 2 * stats.g_hat * (3 + stats.G(2) - 4 * stats.G(1)) / lam**4
    lap = forward_laplacian(e, grid)[..., _cells(grid, 2)]
    direct, se = _member_var(lap)
    return VarianceEstimate(float(formula), direct, se)


def cross_term(ensemble, grid: Grid1D) -> CrossTerm:
    """Cell-averaged covariance of lap n with (grad n)^2, with member-level standard error."""
    e = _as_ensemble(ensemble)
    m = e.shape[0]
    cells = _cells(grid, 2)
    lap = forward_laplacian(e, grid)[..., cells]
    sq = forward_diff(e, grid)[..., cells] ** 2
    a = lap - lap.mean(axis=0)
    b = sq - sq.mean(axis=0)
    per_member = np.mean(a * b, axis=-1) * m / (m - 1)
    value = float(per_member.mean())
    se = float(per_member.std(ddof=1) / math.sqrt(m))
    return CrossTerm(value, se)


def qp_variance(ensemble, grid: Grid1D, constants: PhysicalConstants, stats: FluctuationStats, n0,
                floor: float = DEFAULT_FLOOR) -> VarianceEstimate:
    """Quantum-potential fluctuation variance from the two density estimators.

    V_qu = -(hbar^2/2m) [lap n / (2n) - (grad n)^2 / (4 n^2)], so the
    prediction is (hbar^2/2m)^2 [lap_var / (4 d1^2) - gradsq_var / (16 d2^4)];
    ``printed`` drops the 1/4 and 1/16.  The direct value is the cell-averaged
    ensemble variance of I* = V_qu(n) - V_qu(n0).  A negative prediction is
    returned as is, with a warning.
    """
    from .sqha_solver import istar

    e = _as_ensemble(ensemble)
    pref = (constants.hbar**2 / (2 * constants.mass)) ** 2
    lap = laplacian_variance(e, grid, stats).formula
    grad = gradsq_variance(e, grid, stats).formula
    formula = pref * (lap / (4 * stats.d1**2) - grad / (16 * stats.d2**4))
    printed = pref * (lap / stats.d1**2 - grad / stats.d2**4)
    if formula < 0:
        warnings.warn("quantum-potential variance formula is negative at this resolution", RuntimeWarning)
    star, mask = istar(e, n0, grid, constants, floor)
    keep = ~np.any(mask, axis=0)
    direct, se = _member_var(star[:, keep])
    return VarianceEstimate(float(formula), direct, se, float(printed))


def istar_moments(ensemble, n0, grid: Grid1D, constants: PhysicalConstants, floor: float = DEFAULT_FLOOR):
    """Cell-averaged ensemble variances of I* and of its central-difference gradient."""
    from .sqha_solver import istar

    star, mask = istar(_as_ensemble(ensemble), n0, grid, constants, floor)
    keep = ~np.any(mask, axis=0)
    v, v_se = _member_var(star[:, keep])
    dstar = ddx(star, grid)
    if not grid.periodic:
        keep[[0, -1]] = False
    dv, dv_se = _member_var(dstar[:, keep])
    return v, v_se, dv, dv_se


MIN_SPAN = 30.0  # max/min theta ratio, one and a half decades to one digit


def scaling_fit(theta_list, variance_list, boltzmann: float = 1.0, min_points: int = 4,
                min_span: float = MIN_SPAN) -> ScalingFitResult:
    """Least-squares slope of log(variance) against log(k theta)."""
    th = np.asarray(theta_list, dtype=float)
    var = np.asarray(variance_list, dtype=float)
    if th.shape != var.shape or th.ndim != 1:
        raise EstimatorError("theta and variance lists must be 1D and of equal length")
    if th.size < min_points:
        raise EstimatorError(f"need at least {min_points} theta values")
    if np.any(th <= 0):
        raise EstimatorError("theta values must be > 0")
    if np.any(var <= 0) or not np.all(np.isfinite(var)):
        raise EstimatorError("variances must be finite and > 0")
    if th.max() / th.min() < min_span * (1 - 1e-12):
        raise EstimatorError(f"theta values must span a factor of at least {min_span:g}")
    x = np.log(boltzmann * th)
    y = np.log(var)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = th.size - 2
    se = math.sqrt(ss_res / dof / float(((x - x.mean()) ** 2).sum())) if dof > 0 else 0.0
    return ScalingFitResult(float(slope), float(intercept), float(min(max(r2, 0.0), 1.0)), tuple(map(float, th)), se)


@dataclass
class SweepPoint:
    theta: float
    lambda_c: float
    window: float
    steps: int
    var_istar: float
    var_istar_se: float
    var_grad_istar: float
    var_grad_istar_se: float
    qp_var_formula: float


@dataclass
class SweepResult:
    points: list
    fit_istar: ScalingFitResult
    fit_grad_istar: ScalingFitResult
    window_rule: str


def theta_sweep(thetas, n_cells: int = 1024, spacing: float = 1.0, members: int = 200, base_seed: int = 0,
                form_factor: float = 1e-9, window="coherence", c_cfl: float = 1.0,
                constants: PhysicalConstants = PhysicalConstants(), threads: int = 1) -> SweepResult:
    """Fluctuation variances of I* and d(I*)/dq over a set of noise amplitudes.

    The companion is a uniform density on a periodic grid (V = 0), so every
    realization accumulates correlated noise over one perturbative window.
    ``window`` is either a fixed duration or "coherence", meaning the time
    m lambda_c^2 / hbar a disturbance needs to diffuse across one coherence
    length.  ``form_factor`` keeps the relative fluctuation small.
    """
    from .correlated_noise import NoiseModel
    from .grid_state import ProfileSpec, init_profile, make_grid
    from .sqha_solver import SQHAConfig, run_ensemble

    grid = make_grid(0.0, n_cells * spacing, n_cells, "periodic")
    field0 = init_profile(grid, ProfileSpec.uniform(), constants)
    dt_max = c_cfl * constants.mass * spacing**2 / constants.hbar
    points = []
    for theta in thetas:
        noise = NoiseModel(float(theta), constants, form_factor=form_factor)
        lam_c = noise.lambda_c
        span = constants.mass * lam_c**2 / constants.hbar if window == "coherence" else float(window)
        steps = max(1, math.ceil(span / dt_max - 1e-9))
        cfg = SQHAConfig(dt=span / steps, t_end=span, record_every=steps, c_cfl=c_cfl)
        run = run_ensemble(field0, None, constants, noise, cfg, base_seed=base_seed, members=members,
                           threads=threads)
        ens, n0 = run.state.n, run.state.n0[0]
        v, v_se, dv, dv_se = istar_moments(ens, n0, grid, constants)
        stats = estimate_correlation(ens, grid, n0=n0, delta_t=span, max_lag=4, min_members=min(members, MIN_MEMBERS))
        qp = qp_variance(ens, grid, constants, stats, n0)
        points.append(SweepPoint(float(theta), lam_c, span, steps, v, v_se, dv, dv_se, qp.formula))
    th = [p.theta for p in points]
    fit_v = scaling_fit(th, [p.var_istar for p in points], constants.boltzmann)
    fit_d = scaling_fit(th, [p.var_grad_istar for p in points], constants.boltzmann)
    rule = "coherence" if window == "coherence" else f"fixed:{float(window)!r}"
    return SweepResult(points, fit_v, fit_d, rule)


def report(stats: FluctuationStats, grad: VarianceEstimate, lap: VarianceEstimate, cross: CrossTerm,
           qp: VarianceEstimate, scaling: ScalingFitResult | None = None) -> dict:
    """JSON-ready diagnostics document."""
    return {
        "schema": SCHEMA,
        "g_hat": stats.g_hat,
        "G_hat": [float(v) for v in stats.G_hat],
        "A": stats.A,
        "d1": stats.d1,
        "d2": stats.d2,
        "gradsq_var_formula": grad.formula,
        "gradsq_var_direct": grad.direct,
        "gradsq_var_printed": grad.printed,
        "laplacian_var_formula": lap.formula,
        "laplacian_var_direct": lap.direct,
        "cross_term": cross.value,
        "cross_term_z": cross.z,
        "qp_var_formula": qp.formula,
        "qp_var_direct": qp.direct,
        "qp_var_printed": qp.printed,
        "scaling": None if scaling is None else {"exponent": scaling.exponent, "r2": scaling.r_squared},
    }


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=True)
