from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy import optimize, special

from .errors import DomainError, ParameterError, RangeError

ArrayLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class Grid:
    """Uniform sampling of [start, end] with n points, both endpoints included.

    Coordinates are dimensionless: time in units of the inverse Rabi frequency,
    space in units of the effective optical depth.
    """

    start: float
    end: float
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 2:
            raise ParameterError(f"grid needs at least 2 points, got n={self.n}")
        if not (np.isfinite(self.start) and np.isfinite(self.end)) or self.end <= self.start:
            raise ParameterError(f"grid needs end > start, got [{self.start}, {self.end}]")

    @property
    def h(self) -> float:
        return (self.end - self.start) / (self.n - 1)

    @cached_property
    def points(self) -> np.ndarray:
        pts = np.linspace(self.start, self.end, self.n)
        pts.setflags(write=False)
        return pts

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.setflags(write=False)
        return w

    @property
    def length(self) -> float:
        return self.end - self.start

    def scaled(self, factor: float) -> "Grid":
        return Grid(self.start * factor, self.end * factor, self.n)

    def sample(self, func: Callable[[np.ndarray], np.ndarray]) -> "SampledFunction":
        return SampledFunction(self, func(self.points))


@dataclass(frozen=True, eq=False)
class SampledFunction:
    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise ParameterError(f"expected {self.grid.n} samples, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ParameterError("sampled function contains NaN or Inf")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __call__(self, x: ArrayLike) -> ArrayLike:
        """Linear interpolation between nodes; zero outside the grid."""
        return np.interp(x, self.grid.points, self.values, left=0.0, right=0.0)

    def __add__(self, other: "SampledFunction") -> "SampledFunction":
        _require_same_grid(self.grid, other.grid)
        return SampledFunction(self.grid, self.values + other.values)

    def __mul__(self, other: Union["SampledFunction", float]) -> "SampledFunction":
        if isinstance(other, SampledFunction):
            _require_same_grid(self.grid, other.grid)
            return SampledFunction(self.grid, self.values * other.values)
        return SampledFunction(self.grid, self.values * float(other))

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.sqrt(quad(self * self)))


def _require_same_grid(a: Grid, b: Grid) -> None:
    if a != b:
        raise ParameterError(f"grid mismatch: {a} vs {b}")


def _require_finite(x: ArrayLike, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} requires finite input")
    return arr


def bessel_j0(x: ArrayLike) -> ArrayLike:
    """Bessel function of the first kind of order zero.

    Cephes j0 through scipy: rational form on [0, 5], Hankel asymptotic
    rational form beyond, absolute error ~1e-16 on the working range.
    """
    arr = _require_finite(x, "bessel_j0")
    out = special.j0(arr)
    return float(out) if out.ndim == 0 else out


def erf(x: ArrayLike) -> ArrayLike:
    arr = _require_finite(x, "erf")
    out = special.erf(arr)
    return float(out) if out.ndim == 0 else out


def quad(f: SampledFunction) -> float:
    """Trapezoid rule on the function's grid."""
    return float(np.dot(f.grid.weights, f.values))


def quad_values(grid: Grid, values: np.ndarray, axis: int = -1) -> np.ndarray:
    """Trapezoid rule along one axis of a stacked array sampled on ``grid``."""
    return np.tensordot(values, grid.weights, axes=([axis], [0]))


def invert_monotone(f: SampledFunction, y: ArrayLike) -> ArrayLike:
    """Solve interp(f)(x) = y by bisection.

    ``f`` must be strictly increasing. Each root is bracketed by the grid and
    refined to 1e-10 of the grid length.
    """
    vals = f.values
    if np.any(np.diff(vals) <= 0.0):
        raise ParameterError("invert_monotone needs strictly increasing samples")
    ys = np.atleast_1d(np.asarray(y, dtype=float))
    lo, hi = vals[0], vals[-1]
    slack = 1e-12 * max(abs(lo), abs(hi), hi - lo)
    if np.any(ys < lo - slack) or np.any(ys > hi + slack):
        raise RangeError(f"value outside [{lo:.6g}, {hi:.6g}]")
    ys = np.clip(ys, lo, hi)

    pts = f.grid.points
    xtol = 1e-10 * f.grid.length
    roots = np.empty_like(ys)
    for idx, target in enumerate(ys):
        # narrow the bracket to one grid cell before bisecting
        k = int(np.clip(np.searchsorted(vals, target), 1, f.grid.n - 1))
        a, b = pts[k - 1], pts[k]
        roots[idx] = optimize.bisect(
            lambda s: np.interp(s, pts, vals) - target, a, b, xtol=xtol
        )
    if np.ndim(y) == 0:
        return float(roots[0])
    return roots
