"""
Unbiased random (dithered) quantization on uniform grids.

A value ``x`` in ``[tau_i, tau_{i+1})`` is mapped to ``tau_i`` with
probability ``1 - p`` and to ``tau_{i+1}`` with probability ``p``, where
``p = (x - tau_i) / step``.  The output is unbiased, lies within one step
of ``x`` and has variance at most ``step**2 / 4``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, InvariantError

MAX_BITS = 52

# Relative index tolerance under which an input is treated as sitting exactly
# on a grid point (keeps grid points deterministic despite roundoff).
_SNAP_TOL = 1e-10


@dataclass(frozen=True)
class QuantizerGrid:
    """Uniform grid of ``2**bits`` levels spanning ``[lower, upper]``."""

    lower: float
    upper: float
    bits: int

    def __post_init__(self):
        if not np.isfinite(self.lower) or not np.isfinite(self.upper):
            raise ConfigError("grid bounds must be finite")
        if not self.upper > self.lower:
            raise ConfigError(f"grid needs upper > lower, got [{self.lower}, {self.upper}]")
        if isinstance(self.bits, bool) or int(self.bits) != self.bits:
            raise ConfigError(f"bits must be an integer, got {self.bits!r}")
        if not 1 <= self.bits <= MAX_BITS:
            raise ConfigError(f"bits must lie in [1, {MAX_BITS}], got {self.bits}")

    @property
    def levels(self) -> int:
        return 2 ** int(self.bits)

    @property
    def step(self) -> float:
        return (self.upper - self.lower) / (self.levels - 1)

    def point(self, i: int) -> float:
        """Grid point ``tau_{i+1}`` (0-based index ``i``)."""
        if i == self.levels - 1:
            return float(self.upper)
        return self.lower + i * self.step

    def points(self) -> np.ndarray:
        """All grid points; only sensible for small ``bits``."""
        pts = self.lower + np.arange(self.levels) * self.step
        pts[-1] = self.upper
        return pts


def build_grid(lower: float, upper: float, bits: int) -> QuantizerGrid:
    return QuantizerGrid(float(lower), float(upper), bits)


@dataclass(frozen=True)
class BoxDomain:
    """Product of per-coordinate quantization grids, i.e. a box constraint set."""

    grids: tuple[QuantizerGrid, ...]
    lower: np.ndarray = field(init=False, repr=False, compare=False)
    upper: np.ndarray = field(init=False, repr=False, compare=False)
    steps: np.ndarray = field(init=False, repr=False, compare=False)
    levels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        grids = tuple(self.grids)
        if len(grids) < 1:
            raise ConfigError("box needs at least one coordinate")
        object.__setattr__(self, "grids", grids)
        for name, vals in (
            ("lower", [g.lower for g in grids]),
            ("upper", [g.upper for g in grids]),
            ("steps", [g.step for g in grids]),
            ("levels", [float(g.levels) for g in grids]),
        ):
            arr = np.asarray(vals, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, d: int, lower: float = -1.0, upper: float = 1.0, bits: int = 8) -> "BoxDomain":
        """The box ``[lower, upper]**d`` with the same grid on every axis."""
        if d < 1:
            raise ConfigError(f"dimension must be >= 1, got {d}")
        return cls(tuple(build_grid(lower, upper, bits) for _ in range(d)))

    @property
    def dim(self) -> int:
        return len(self.grids)

    @property
    def aggregate_delta(self) -> float:
        """Sum of the coordinate step sizes."""
        return float(np.sum(self.steps))

    def with_bits(self, bits: int) -> "BoxDomain":
        return BoxDomain(tuple(build_grid(g.lower, g.upper, bits) for g in self.grids))

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def diameter(self) -> float:
        return float(np.linalg.norm(self.upper - self.lower))


def _quantize(x: np.ndarray, lower, upper, step, levels, u: np.ndarray) -> np.ndarray:
    """Vectorised core: ``x`` and the uniforms ``u`` broadcast against the grid arrays."""
    t = (x - lower) / step
    nearest = np.rint(t)
    on_grid = np.abs(t - nearest) <= _SNAP_TOL * (1.0 + nearest)
    # bin index floor(t) clamped to [0, levels - 2]
    idx = np.minimum(np.maximum(np.floor(t), 0.0), levels - 2.0)
    out = lower + (idx + (u < t - idx)) * step
    # exact grid points (including the upper endpoint) map to themselves
    snapped = np.where(nearest >= levels - 1, upper, lower + nearest * step)
    return np.minimum(np.where(on_grid, snapped, out), upper)


def quantize_scalar(x: float, grid: QuantizerGrid, rng: np.random.Generator) -> float:
    """Randomly quantize a scalar onto ``grid``.

    Raises
    ------
    InvariantError
        If ``x`` lies outside ``[grid.lower, grid.upper]``.
    """
    x = float(x)
    if not grid.lower <= x <= grid.upper:
        raise InvariantError(f"value {x!r} outside quantizer range [{grid.lower}, {grid.upper}]")
    u = rng.random()
    return float(_quantize(np.float64(x), grid.lower, grid.upper, grid.step, grid.levels, u))


def quantize_array(X, box: BoxDomain, uniforms: np.ndarray) -> np.ndarray:
    """Quantize every row of ``X`` (shape ``(..., d)``) using pre-drawn uniforms.

    ``uniforms`` must have the same shape as ``X``; entry ``[..., l]`` drives
    the coordinate ``l`` decision.  Taking the uniforms explicitly lets the
    caller fix which random number belongs to which (node, coordinate).
    """
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != box.dim:
        raise InvariantError(f"dimension mismatch: got {X.shape[-1]}, box has {box.dim}")
    if uniforms.shape != X.shape:
        raise InvariantError("uniforms must match the shape of the quantized array")
    if (X < box.lower).any() or (X > box.upper).any():
        raise InvariantError("iterate outside the constraint box before quantization")
    return _quantize(X, box.lower, box.upper, box.steps, box.levels, uniforms)


def quantize_vector(x: Sequence[float], box: BoxDomain, rng: np.random.Generator) -> np.ndarray:
    """Quantize each coordinate of ``x`` independently on its own grid."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != box.dim:
        raise InvariantError(f"expected a vector of length {box.dim}, got shape {x.shape}")
    return quantize_array(x, box, rng.random(box.dim))
