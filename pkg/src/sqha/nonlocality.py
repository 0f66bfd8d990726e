"""Tail exponents, the large-distance quantum-force integral, lambda_L and regimes.

For a tail sqrt(n) ~ exp(-|q|^h) the quantum force decays like q^(2h-3),
so the integrand |q^-1 dV_qu/dq| behaves as q^(2h-4) and its integral
converges exactly when h < 3/2.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AnalysisError
from .grid_state import Grid1D, PhysicalConstants, WFMField
from .quantum_potential import qp_sqrt_form, quantum_force

ANALYSIS_FLOOR = 1e-250
CAUCHY_TOL = 1e-3
CAUCHY_WINDOWS = 3
MAX_DOUBLINGS = 400
NOISE_FLIP_FRACTION = 0.25
NOISE_LEVEL = 1e-6
EDGE_CELLS = 2
MIN_FIT_CELLS = 10

LABELS = (
    "non_local_deterministic",
    "local_deterministic",
    "microscopic_stochastic",
    "macroscopic_nonlocal_stochastic",
    "macroscopic_local_stochastic",
)


@dataclass(frozen=True)
class TailFit:
    h: float
    fit_window: tuple
    residual: float
    cells: int
    m_exp: float = 0.0
    p_deg: int = 0

    @property
    def phi(self) -> float:
        return 3.0 - 2.0 * self.h


@dataclass(frozen=True)
class ForceIntegral:
    """Outcome of the tail integral; ``diverges`` is None when the two tests disagree."""

    value: float
    diverges: bool | None
    verdict: str
    power: float
    ratio: float


@dataclass
class NonlocalityReport:
    h: float | None
    integral_value: float
    diverges: bool | None
    lambda_L: float
    regime: str | None
    verdict: str

    def to_dict(self) -> dict:
        from .reporting import jsonable

        d = jsonable(asdict(self))
        d["candidate"] = self.candidate
        d["schema"] = "sqha.nonlocality.v1"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def candidate(self) -> str:
        """Coarse reading: non-local when the force range is unbounded or the regime says so."""
        if math.isinf(self.lambda_L) or "nonlocal" in (self.regime or "").replace("_", ""):
            return "non-local"
        if math.isnan(self.lambda_L):
            return "indeterminate"
        return "local"

    def verdict_line(self) -> str:
        lam = "infinite" if math.isinf(self.lambda_L) else f"{self.lambda_L:.6g}"
        h = "n/a" if self.h is None else f"{self.h:.3f}"
        return (f"h: {h}; integral: {self.verdict}; lambda_L: {lam}; regime candidate: {self.candidate}; "
                f"regime: {self.regime or 'n/a'}")


def centroid(field: WFMField) -> float:
    g = field.grid
    return float(g.integrate(g.centers * field.n) / g.integrate(field.n))


# --- tail exponent ----------------------------------------------------------------

def tail_exponent(field: WFMField, grid: Grid1D | None = None, window=None, floor: float = ANALYSIS_FLOOR,
                  p_deg: int = 0, m_exp: float = 0.0) -> TailFit:
    """Slope of log(-log(sqrt(n)/sqrt(n_max))) against log|q - q_peak|.

    The default window is every cell with floor < n/n_max < 1e-3 on either
    side of the peak; ``window=(d_lo, d_hi)`` restricts the distance from it.
    """
    grid = grid or field.grid
    n = np.asarray(field.n, dtype=float)
    top = float(n.max())
    if not top > 0:
        raise AnalysisError("density is identically zero")
    rel = n / top
    q = grid.centers
    dist = np.abs(q - q[int(np.argmax(n))])
    sel = (rel > floor) & (rel < 1e-3) & (dist > 0)
    if window is not None:
        lo, hi = window
        sel &= (dist >= lo) & (dist <= hi)
    if not np.any(rel < 1e-3):
        raise AnalysisError("profile does not decay below 1e-3 of its peak")
    if np.count_nonzero(sel) < MIN_FIT_CELLS:
        raise AnalysisError(f"tail window has {np.count_nonzero(sel)} cells; need {MIN_FIT_CELLS}")
    x = np.log(dist[sel])
    y = np.log(-0.5 * np.log(rel[sel]))
    slope, icpt = np.polyfit(x, y, 1)
    res = float(np.sqrt(np.mean((y - slope * x - icpt) ** 2)))
    return TailFit(float(slope), (float(dist[sel].min()), float(dist[sel].max())), res, int(sel.sum()), m_exp, p_deg)


# --- force integral ---------------------------------------------------------------------

def _side_profiles(values, grid: Grid1D, origin: float, mask):
    """(distance, value) arrays to the right and left of ``origin``, cut at the first masked cell.

    The EDGE_CELLS cells at each end of the domain are dropped: the
    quantum-potential and force stencils there reach across the boundary
    (the periodic seam or the edge ghosts) and carry no tail information.
    """
    q = grid.centers
    inner = np.zeros(grid.n_cells, dtype=bool)
    inner[EDGE_CELLS:grid.n_cells - EDGE_CELLS] = True
    out = []
    for sign in (1.0, -1.0):
        d = sign * (q - origin)
        idx = np.flatnonzero((d > 0) & inner)
        idx = idx[np.argsort(d[idx])]
        if mask is not None:
            bad = np.flatnonzero(mask[idx])
            if bad.size:
                idx = idx[: bad[0]]
        out.append((d[idx], np.asarray(values, dtype=float)[idx]))
    return out


def _roundoff_tail(side, lo) -> bool:
    """Force beyond ``lo`` is zero, or sign-scrambled and tiny against the side's peak."""
    d, f = side
    tail = f[d >= lo]
    s = np.sign(tail)
    if not np.any(s):
        return True
    scrambled = np.mean(s[1:] * s[:-1] < 0) > NOISE_FLIP_FRACTION
    return bool(scrambled and np.max(np.abs(tail)) <= NOISE_LEVEL * np.max(np.abs(f)))


def _trapz_window(d, f, a, b) -> float:
    inner = (d > a) & (d < b)
    xs = np.concatenate(([a], d[inner], [b]))
    ys = np.concatenate(([np.interp(a, d, f)], f[inner], [np.interp(b, d, f)]))
    return float(np.sum(0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)))


def _doubling_integrals(d, f, q_min):
    """Integrals over [q_min 2^k, q_min 2^(k+1)] that fit inside the sampled range."""
    w = []
    a = q_min
    while 2 * a <= d[-1] * (1 + 1e-12):
        w.append(_trapz_window(d, f, a, 2 * a))
        a *= 2
    return np.array(w), a


def force_integral(force, grid: Grid1D, q_min: float, origin: float = 0.0, mask=None) -> ForceIntegral:
    """Integral of |F(q)| / |q - origin| for |q - origin| >= q_min (mean of both sides).

    Two independent convergence tests decide the verdict:

    * Cauchy: window integrals over doublings of the distance are continued
      geometrically with the ratio of the last two; the integral converges
      when the relative increment drops to 1e-3 for three consecutive
      windows within 400 doublings.
    * Power: the integrand's log-log slope over the outermost two windows;
      a power >= -1 diverges.

    A tail whose force is identically zero, or changes sign between more
    than a quarter of neighbouring cells while staying below 1e-6 of the
    peak force, is at roundoff level and counts as convergent (vanishing).  If the tests disagree the verdict
    is "indeterminate" and ``diverges`` is None.
    """
    if not q_min > 0:
        raise AnalysisError("q_min must be > 0")
    q = grid.centers
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.abs(np.asarray(force, dtype=float)) / np.abs(q - origin)
    sides = _side_profiles(integrand, grid, origin, mask)
    per_side = []
    for d, f in sides:
        if d.size < 4 or d[-1] < 4 * q_min:
            raise AnalysisError("the masked region covers the tail; fewer than two doubling windows remain")
        w, _ = _doubling_integrals(d, f, q_min)
        per_side.append((d, f, w))
    k = min(len(p[2]) for p in per_side)
    w = 0.5 * (per_side[0][2][:k] + per_side[1][2][:k])
    partial = float(w.sum())

    d_out = min(p[0][-1] for p in per_side)
    lo = d_out / 4.0
    if all(_roundoff_tail(s, lo) for s in _side_profiles(force, grid, origin, mask)):
        return ForceIntegral(partial, False, "converges (tail vanishes)", -math.inf, 0.0)

    # power test on the outer two windows
    pw = []
    for d, f, _ in per_side:
        sel = (d >= lo) & (f > 0)
        if np.count_nonzero(sel) >= 3:
            pw.append(np.polyfit(np.log(d[sel]), np.log(f[sel]), 1)[0])
    power = float(np.mean(pw)) if pw else math.nan
    power_div = None if math.isnan(power) else bool(power >= -1.0)

    # Cauchy test with geometric continuation
    ratio = float(w[-1] / w[-2]) if k >= 2 and w[-2] > 0 else math.inf
    total, last, small = partial, float(w[-1]), 0
    cauchy_div = True
    for j in range(k):
        small = small + 1 if w[j] <= CAUCHY_TOL * max(w[: j + 1].sum(), 1e-300) else 0
    if small >= CAUCHY_WINDOWS:
        cauchy_div = False
    elif ratio < 1.0:
        for _ in range(MAX_DOUBLINGS - k):
            last *= ratio
            total += last
            small = small + 1 if last <= CAUCHY_TOL * total else 0
            if small >= CAUCHY_WINDOWS:
                cauchy_div = False
                break
    if not cauchy_div:
        # remaining geometric tail summed in closed form
        value = partial + (float(w[-1]) * ratio / (1.0 - ratio) if ratio < 1.0 else 0.0)
    else:
        value = math.inf

    if power_div is None or power_div == cauchy_div:
        verdict = "diverges" if cauchy_div else "converges"
        return ForceIntegral(value, cauchy_div, verdict, power, ratio)
    return ForceIntegral(value if not cauchy_div else math.nan, None, "indeterminate", power, ratio)


def synthetic_tail_force(grid: Grid1D, power: float, origin: float = 0.0) -> np.ndarray:
    """Force whose integrand |F/q| equals |q - origin|^power."""
    d = np.abs(grid.centers - origin)
    with np.errstate(divide="ignore"):
        return np.where(d > 0, d ** (power + 1.0), 0.0)


# --- lambda_L ---------------------------------------------------------------------------

def lambda_L(force, grid: Grid1D, lambda_c: float, origin: float = 0.0, mask=None) -> float:
    """2 * int_0^inf |q^-1 F| dq / (|F(lambda_c)| / lambda_c), both sides averaged.

    The stretch [0, first cell] uses the integrand of the first cell (the
    integrand of a smooth symmetric profile is finite at the origin).
    Returns math.inf when the tail integral diverges and math.nan when the
    convergence tests disagree.
    """
    if not lambda_c > 0 or math.isinf(lambda_c):
        raise AnalysisError("lambda_L needs a finite positive lambda_c")
    q = grid.centers
    force = np.asarray(force, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        integrand = np.abs(force) / np.abs(q - origin)
    sides = _side_profiles(integrand, grid, origin, mask)
    q_first = max(s[0][0] for s in sides)
    core = 0.0
    for d, f in sides:
        core += 0.5 * (d[0] * f[0] + _trapz_window(d, f, d[0], q_first))
    tail = force_integral(force, grid, q_first, origin, mask)
    if tail.diverges is None:
        return math.nan
    if tail.diverges:
        return math.inf
    f_c = 0.5 * (abs(np.interp(origin + lambda_c, q, force)) + abs(np.interp(origin - lambda_c, q, force)))
    if f_c == 0:
        raise AnalysisError("quantum force vanishes at q = lambda_c; lambda_L undefined")
    return 2.0 * (core + tail.value) / (f_c / lambda_c)


def prefactor_admissible(m_exp: float, p_deg: int) -> bool:
    """Oscillating prefactor q^m exp(i A(q)) keeps the force-integral test valid iff A grows at most linearly."""
    return p_deg <= 1


# --- regimes -----------------------------------------------------------------------

def classify_regime(lambda_c: float, lambda_L: float, resolution: float, system_length: float, theta: float,
                    hbar: float, macro_ratio: float = 10.0, local_ratio: float = 0.1) -> str:
    """Label the dynamical regime from the coherence and non-locality lengths.

    Deterministic iff theta = 0 (then lambda_c must be infinite), local only
    for hbar = 0.  With noise: macroscopic iff resolution / lambda_c >=
    macro_ratio, and then local iff lambda_L / resolution <= local_ratio.
    """
    if not (resolution > 0 and system_length > 0):
        raise AnalysisError("resolution and system length must be > 0")
    if resolution > system_length:
        raise AnalysisError("resolution exceeds the system length")
    if theta < 0 or hbar < 0:
        raise AnalysisError("theta and hbar must be >= 0")
    if not (macro_ratio > 0 and local_ratio > 0):
        raise AnalysisError("threshold ratios must be > 0")
    if lambda_L < 0 or (isinstance(lambda_L, float) and math.isnan(lambda_L)):
        raise AnalysisError("lambda_L must be >= 0 or infinite")
    if theta == 0:
        if not math.isinf(lambda_c):
            raise AnalysisError("theta = 0 requires an infinite coherence length")
        return "local_deterministic" if hbar == 0 else "non_local_deterministic"
    if math.isinf(lambda_c) or lambda_c < 0 or math.isnan(lambda_c):
        raise AnalysisError("theta > 0 requires a finite coherence length")
    macroscopic = lambda_c == 0 or resolution / lambda_c >= macro_ratio
    if not macroscopic:
        return "microscopic_stochastic"
    if lambda_L / resolution <= local_ratio:
        return "macroscopic_local_stochastic"
    return "macroscopic_nonlocal_stochastic"


# --- one-call analysis ----------------------------------------------------------------

def analyze(field: WFMField, constants: PhysicalConstants = PhysicalConstants(), theta: float = 0.0,
            resolution: float | None = None, system_length: float | None = None, floor: float = ANALYSIS_FLOOR,
            macro_ratio: float = 10.0, local_ratio: float = 0.1) -> NonlocalityReport:
    """Tail fit, force-integral verdict, lambda_L and regime for one profile."""
    from .correlated_noise import lambda_c as coherence_length

    grid = field.grid
    try:
        h = tail_exponent(field, grid, floor=floor).h
    except AnalysisError:
        h = None
    qp = qp_sqrt_form(field, grid, constants, floor=floor)
    force = quantum_force(qp, grid)
    origin = centroid(field)
    lam_c = coherence_length(constants, theta)
    q_min = max(grid.spacing, min(lam_c, grid.length / 16) if math.isfinite(lam_c) else grid.spacing)
    fi = force_integral(force, grid, q_min, origin, qp.floor_mask)
    if fi.diverges:
        lam_l = math.inf
    elif math.isfinite(lam_c):
        lam_l = lambda_L(force, grid, lam_c, origin, qp.floor_mask)
    elif fi.diverges is None:
        lam_l = math.nan
    else:
        # no noise scale: the range is finite but lambda_c normalisation is undefined
        lam_l = lambda_L(force, grid, grid.spacing, origin, qp.floor_mask)
    regime = None
    res = grid.spacing if resolution is None else resolution
    sys_len = grid.length if system_length is None else system_length
    if not math.isnan(lam_l):
        regime = classify_regime(lam_c, lam_l, res, sys_len, theta, constants.hbar, macro_ratio, local_ratio)
    return NonlocalityReport(h, fi.value, fi.diverges, lam_l, regime, fi.verdict)
