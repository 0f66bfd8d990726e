"""Quantum pseudo-potential V_qu = -(hbar^2/2m) Lap(sqrt n)/sqrt n and its force."""
from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .grid_state import (
    Grid1D,
    PhysicalConstants,
    WFMField,
    ddx,
    forward_diff,
    forward_laplacian,
    laplacian,
)

DEFAULT_FLOOR = 1e-12

# Multiplies hbar^2/2m everywhere; only the validation mutation check changes it.
_PREFACTOR_SCALE = 1.0


@contextlib.contextmanager
def mutated_prefactor(scale: float):
    """Test hook: run a block with a deliberately wrong QP prefactor."""
    global _PREFACTOR_SCALE
    old, _PREFACTOR_SCALE = _PREFACTOR_SCALE, scale
    try:
        yield
    finally:
        _PREFACTOR_SCALE = old


def prefactor(constants: PhysicalConstants) -> float:
    return _PREFACTOR_SCALE * constants.hbar**2 / (2.0 * constants.mass)


@dataclass(frozen=True, eq=False)
class QPField:
    v_qu: np.ndarray
    force: np.ndarray
    floor_mask: np.ndarray


def floor_mask(n: np.ndarray, floor: float) -> np.ndarray:
    """Cells whose density is below ``floor * max(n)`` (per member for stacks)."""
    peak = np.max(n, axis=-1, keepdims=True)
    return (n < floor * peak) | (peak <= 0)


def nearest_valid_index(mask: np.ndarray) -> np.ndarray:
    """Index of the nearest unmasked cell along the last axis (ties go left)."""
    n = mask.shape[-1]
    idx = np.arange(n)
    valid = ~mask
    left = np.maximum.accumulate(np.where(valid, idx, -1), axis=-1)
    right = np.flip(np.minimum.accumulate(np.flip(np.where(valid, idx, n), axis=-1), axis=-1), axis=-1)
    use_left = (left >= 0) & ((right >= n) | (idx - left <= right - idx))
    return np.clip(np.where(use_left, left, right), 0, n - 1)


def fill_masked(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked entries by the nearest unmasked value along the last axis.

    Ties go to the left neighbour.  Works on stacks of shape (..., n).
    """
    if not mask.any():
        return values
    return np.take_along_axis(values, nearest_valid_index(mask), axis=-1)


def extend_linear(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Continue masked entries along the edge slope of the nearest unmasked run.

    The slope is the one-sided difference between the nearest unmasked cell
    and its inward neighbour; an isolated unmasked cell gives a flat fill.
    """
    if not mask.any():
        return values
    n = mask.shape[-1]
    idx = np.arange(n)
    src = nearest_valid_index(mask)
    inward = np.clip(src + np.sign(src - idx), 0, n - 1)
    base = np.take_along_axis(values, src, axis=-1)
    nxt = np.take_along_axis(values, inward, axis=-1)
    ok = ~np.take_along_axis(mask, inward, axis=-1) & (inward != src)
    slope = np.where(ok, base - nxt, 0.0)
    dist = np.abs(idx - src)
    return np.where(mask, base + slope * dist, values)


def _finish(v: np.ndarray, mask: np.ndarray, grid: Grid1D) -> QPField:
    if np.any(np.all(mask, axis=-1)):
        raise ConfigurationError("every cell is below the density floor")
    v = fill_masked(v, mask)
    force = np.where(mask, 0.0, -ddx(v, grid))
    return QPField(v, force, mask)


def qp_sqrt_raw(n: np.ndarray, grid: Grid1D, constants: PhysicalConstants, floor: float = DEFAULT_FLOOR):
    """(v_qu, mask) with masked cells left at zero; no fill, no force."""
    n = np.asarray(n, dtype=float)
    if np.any(n < 0):
        raise ConfigurationError("density must be nonnegative")
    mask = floor_mask(n, floor)
    a = np.sqrt(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        v = -prefactor(constants) * laplacian(a, grid) / a
    return np.where(mask, 0.0, v), mask


def qp_sqrt_arrays(n: np.ndarray, grid: Grid1D, constants: PhysicalConstants, floor: float = DEFAULT_FLOOR) -> QPField:
    """Array form of :func:`qp_sqrt_form`; accepts stacks of densities."""
    v, mask = qp_sqrt_raw(n, grid, constants, floor)
    return _finish(v, mask, grid)


def qp_sqrt_form(field: WFMField, grid: Grid1D | None = None, constants: PhysicalConstants = PhysicalConstants(),
                 floor: float = DEFAULT_FLOOR) -> QPField:
    """Quantum potential from the three-point Laplacian of sqrt(n).

    Cells with ``n < floor * max(n)`` are flagged in ``floor_mask`` and carry
    the value of the nearest unmasked cell.
    """
    return qp_sqrt_arrays(field.n, grid or field.grid, constants, floor)


def qp_grad_form(field: WFMField, grid: Grid1D | None = None, constants: PhysicalConstants = PhysicalConstants(),
                 floor: float = DEFAULT_FLOOR) -> QPField:
    """Quantum potential written in terms of n and its derivatives.

    Uses Lap(sqrt n)/sqrt n = Lap(n)/(2n) - (grad n)^2/(4n^2) with the
    forward differences (n[i+1]-n[i])/dx and (n[i+2]-2n[i+1]+n[i])/dx^2.
    Those stencils are centred half a cell and one cell to the right, so the
    agreement with :func:`qp_sqrt_form` is first order in the spacing.
    """
    grid = grid or field.grid
    n = field.n
    mask = floor_mask(n, floor)
    with np.errstate(divide="ignore", invalid="ignore"):
        lap = forward_laplacian(n, grid)
        grad = forward_diff(n, grid)
        v = -prefactor(constants) * (lap / (2.0 * n) - grad**2 / (4.0 * n**2))
    v = np.where(mask, 0.0, v)
    return _finish(v, mask, grid)


def quantum_force(qp: QPField, grid: Grid1D) -> np.ndarray:
    """-d V_qu / dq by central differences; zero on masked cells."""
    return np.where(qp.floor_mask, 0.0, -ddx(qp.v_qu, grid))
