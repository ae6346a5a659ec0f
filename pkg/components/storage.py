from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy import constants, special
from scipy.integrate import cumulative_trapezoid

from .errors import ParameterError
from .numerics import Grid, SampledFunction, erf, invert_monotone, quad
from .spectral import ResponseSet

logger = logging.getLogger(__name__)

Variant = Literal["none", "free_expansion", "full_mixing"]
Transform = Literal["per_atom", "scalar", "density"]
MixNorm = Literal["excitation", "amplitude"]
Quadrature = Literal["hermite", "segment"]

HERMITE_NODES = 64
# blurred grids extend this many mean extensions beyond each face of the cell
EXTENSION = 4.0
CLASSICAL_MARGIN = 100.0
_ROW_CHUNK = 1024
TRANSFORMS = ("per_atom", "scalar", "density")


@dataclass(frozen=True)
class StorageModel:
    variant: Variant = "none"
    delta_L: float = 0.0
    transform: Transform = "per_atom"
    mix_norm: MixNorm = "excitation"
    quadrature: Quadrature = "hermite"

    def __post_init__(self) -> None:
        if self.variant not in ("none", "free_expansion", "full_mixing"):
            raise ParameterError(f"unknown storage variant {self.variant!r}")
        if not self.delta_L >= 0:
            raise ParameterError(f"mean extension must be >= 0, got {self.delta_L}")
        if self.transform not in TRANSFORMS:
            raise ParameterError(f"unknown transform {self.transform!r}")
        if self.mix_norm not in ("excitation", "amplitude"):
            raise ParameterError(f"unknown mixing norm {self.mix_norm!r}")
        if self.quadrature not in ("hermite", "segment"):
            raise ParameterError(f"unknown blur quadrature {self.quadrature!r}")

    @classmethod
    def free_expansion(cls, delta_L: float, **kwargs) -> "StorageModel":
        return cls("free_expansion", float(delta_L), **kwargs)

    @classmethod
    def full_mixing(cls, **kwargs) -> "StorageModel":
        return cls("full_mixing", **kwargs)

    @property
    def linear(self) -> bool:
        """False for excitation-normalized mixing, whose output level is a norm."""
        return not (self.variant == "full_mixing" and self.mix_norm == "excitation")

    @property
    def label(self) -> str:
        if self.variant == "free_expansion":
            return f"free_expansion(delta_L={self.delta_L:g},{self.transform})"
        if self.variant == "full_mixing":
            return f"full_mixing({self.mix_norm})"
        return "none"

    def apply(self, r: ResponseSet) -> ResponseSet:
        """Post-storage response set on the same [0, L] grid as ``r``."""
        if self.variant == "full_mixing":
            return mix_uniform(r, self.mix_norm)
        if self.variant == "free_expansion" and self.delta_L > 0:
            blurred = blur_free_expansion(r, self.delta_L, self.quadrature)
            conc = blurred_concentration(r.grid.end - r.grid.start, self.delta_L, blurred.grid.n)
            smap = scaling_map(conc, r.grid.length)
            occupancy = None
            if self.transform == "per_atom":
                occupancy = blur_occupancy(r.grid, self.delta_L, self.quadrature)
            return rescale_to_optical_depth(blurred, smap, self.transform, grid=r.grid, occupancy=occupancy)
        return r


@dataclass(frozen=True, eq=False)
class ScalingMap:
    """z_bar = f(z_old) restoring uniform concentration on [0, L]."""

    f: SampledFunction
    concentration: SampledFunction
    length: float

    def __post_init__(self) -> None:
        if np.any(np.diff(self.f.values) <= 0.0):
            raise ParameterError("scaling map must be strictly increasing")

    @property
    def derivative(self) -> SampledFunction:
        # f' = N / N_bar with N_bar = total / L
        total = quad(self.concentration)
        return SampledFunction(self.concentration.grid, self.concentration.values * self.length / total)


def extended_grid(grid: Grid, delta_L: float) -> Grid:
    """[-4 dL, L + 4 dL] at (about) the spacing of ``grid``."""
    if delta_L == 0:
        return grid
    margin = EXTENSION * delta_L
    span = grid.length + 2.0 * margin
    n = int(round(span / grid.h)) + 1
    return Grid(grid.start - margin, grid.end + margin, n)


def _std(delta_L: float) -> float:
    # displacement v T_s with density ~ exp(-v^2/u^2) has variance dL^2 / 2
    return delta_L / np.sqrt(2.0)


def _segment_blur_matrix(src: Grid, out: np.ndarray, sigma: float) -> np.ndarray:
    """Exact Gaussian convolution of the piecewise-linear interpolant.

    Row j gives the weights of the source samples for output point out[j];
    the source is zero outside [src.start, src.end].
    """
    x = src.points
    h = src.h
    mat = np.zeros((len(out), src.n))
    for lo in range(0, len(out), _ROW_CHUNK):
        y = out[lo:lo + _ROW_CHUNK, None]
        u = (x[None, :] - y) / sigma
        pdf = np.exp(-0.5 * u * u) / (np.sqrt(2.0 * np.pi) * sigma)
        # take the difference on whichever tail keeps it accurate
        lower = special.ndtr(u)
        upper = special.ndtr(-u)
        prob = np.where(
            u[:, :-1] >= 0.0, upper[:, :-1] - upper[:, 1:], lower[:, 1:] - lower[:, :-1]
        )
        alpha = (y - x[None, :-1]) / h
        # sigma^2 (pdf(a - y) - pdf(b - y)) / h, the first-moment correction
        corr = sigma * sigma * (pdf[:, :-1] - pdf[:, 1:]) / h
        block = mat[lo:lo + _ROW_CHUNK]
        block[:, :-1] += (1.0 - alpha) * prob - corr
        block[:, 1:] += alpha * prob + corr
    return mat


def _hermite_blur(r: ResponseSet, out: Grid, delta_L: float) -> np.ndarray:
    nodes, weights = np.polynomial.hermite.hermgauss(HERMITE_NODES)
    src = r.grid.points
    acc = np.zeros((r.count, out.n))
    for y, w in zip(nodes, weights):
        shifted = out.points - delta_L * y
        for i, mode in enumerate(r.unit_modes):
            acc[i] += w * np.interp(shifted, src, mode, left=0.0, right=0.0)
    return acc / np.sqrt(np.pi)


def blur_free_expansion(
    r: ResponseSet, delta_L: float, quadrature: Quadrature = "hermite"
) -> ResponseSet:
    """Maxwell average of the stored coherence over the storage displacement.

    psi(z; dL) = 1/(sqrt(pi) u) int dv exp(-v^2/u^2) psi(z - v T_s), with
    dL = u T_s. The result lives on the extended grid [-4 dL, L + 4 dL];
    coherence is zero outside [0, L] before storage.
    """
    if not delta_L >= 0:
        raise ParameterError(f"mean extension must be >= 0, got {delta_L}")
    out = extended_grid(r.grid, delta_L)
    if delta_L == 0:
        return r
    if quadrature == "hermite":
        blurred = _hermite_blur(r, out, delta_L)
    elif quadrature == "segment":
        mat = _segment_blur_matrix(r.grid, out.points, _std(delta_L))
        blurred = r.unit_modes @ mat.T
    else:
        raise ParameterError(f"unknown blur quadrature {quadrature!r}")
    logger.debug("blurred %d modes with dL=%g onto %d points (%s)", r.count, delta_L, out.n, quadrature)
    return ResponseSet(out, blurred, r.norm_factors)


def blur_occupancy(grid: Grid, delta_L: float, quadrature: Quadrature = "hermite") -> SampledFunction:
    """Blurred indicator of [0, L] on the extended grid, using the same quadrature
    as the mode blur so that their ratio stays accurate in the tails."""
    ones = ResponseSet(grid, np.ones((1, grid.n)), np.ones(1))
    blurred = blur_free_expansion(ones, delta_L, quadrature)
    return SampledFunction(blurred.grid, blurred.unit_modes[0])


def blurred_concentration(L: float, delta_L: float, n: int) -> SampledFunction:
    """Atom density after free expansion of a uniform slab of unit density.

    N(z) = 1/2 [erf(z / (sqrt(2) s)) + erf((L - z) / (sqrt(2) s))], s = dL/sqrt(2),
    sampled on [-4 dL, L + 4 dL]; total mass L.
    """
    if not L > 0:
        raise ParameterError(f"cell length must be positive, got {L}")
    if not delta_L >= 0:
        raise ParameterError(f"mean extension must be >= 0, got {delta_L}")
    if delta_L == 0:
        grid = Grid(0.0, L, n)
        return SampledFunction(grid, np.ones(n))
    margin = EXTENSION * delta_L
    grid = Grid(-margin, L + margin, n)
    z = grid.points
    width = np.sqrt(2.0) * _std(delta_L)
    values = 0.5 * (erf(z / width) + erf((L - z) / width))
    return SampledFunction(grid, values)


def scaling_map(concentration: SampledFunction, length: Optional[float] = None) -> ScalingMap:
    """Coordinate change with f' = N / N_bar, integrated by the trapezoid rule.

    ``length`` is the target interval [0, L]; it defaults to the total mass,
    which equals L for the unit-density slab.
    """
    if np.any(concentration.values < 0):
        raise ParameterError("concentration must be non-negative")
    total = quad(concentration)
    if not total > 0:
        raise ParameterError("concentration has zero total mass")
    L = total if length is None else float(length)
    grid = concentration.grid
    cum = cumulative_trapezoid(concentration.values, dx=grid.h, initial=0.0)
    f = L * cum / cum[-1]
    return ScalingMap(SampledFunction(grid, f), concentration, L)


def rescale_to_optical_depth(
    blurred: ResponseSet,
    smap: ScalingMap,
    transform: Transform = "per_atom",
    grid: Optional[Grid] = None,
    occupancy: Optional[SampledFunction] = None,
) -> ResponseSet:
    """Re-express blurred modes in the new optical-depth coordinate on [0, L].

    per_atom: psi_bar(z) = psi(y) / f'(y), y = f^-1(z), the coherence per atom
              in the rescaled cell; f' is N L / total, with N taken from
              ``occupancy`` when given
    scalar:   psi_bar(z) = psi(y)
    density:  psi_bar(z) = psi(y) / sqrt(f'(y))
    """
    if transform not in TRANSFORMS:
        raise ParameterError(f"unknown transform {transform!r}")
    if smap.f.grid != blurred.grid:
        raise ParameterError("scaling map does not cover the blurred grid")
    if occupancy is not None and occupancy.grid != blurred.grid:
        raise ParameterError("occupancy does not cover the blurred grid")
    if grid is None:
        grid = Grid(0.0, smap.length, int(round(smap.length / blurred.grid.h)) + 1)
    old = invert_monotone(smap.f, grid.points)
    src = blurred.grid.points
    modes = np.vstack([np.interp(old, src, m) for m in blurred.unit_modes]) if blurred.count else np.zeros((0, grid.n))
    if transform == "density":
        slope = np.interp(old, src, smap.derivative.values)
        modes = modes / np.sqrt(slope)[None, :]
    elif transform == "per_atom":
        density = smap.concentration if occupancy is None else occupancy
        slope = np.interp(old, src, density.values) * smap.length / quad(smap.concentration)
        modes = modes / np.maximum(slope, np.finfo(float).tiny)[None, :]
    return ResponseSet(grid, modes, blurred.norm_factors)


def mix_uniform(r: ResponseSet, mix_norm: MixNorm = "excitation") -> ResponseSet:
    """Full mixing: every mode becomes a constant on [0, L].

    excitation: the constant keeps the mode's L2 norm, 1/sqrt(L) for a unit
    mode, with the sign of the mode's mean.
    amplitude: the constant is the mode's mean value.
    """
    L = r.grid.length
    integrals = r.unit_modes @ r.grid.weights
    if mix_norm == "excitation":
        norms = np.sqrt((r.unit_modes**2) @ r.grid.weights)
        levels = np.where(integrals < 0, -1.0, 1.0) * norms / np.sqrt(L)
    elif mix_norm == "amplitude":
        levels = integrals / L
    else:
        raise ParameterError(f"unknown mixing norm {mix_norm!r}")
    modes = np.repeat(levels[:, None], r.grid.n, axis=1)
    return r.with_modes(modes)


@dataclass(frozen=True)
class Classicality:
    passed: bool
    ratio: float
    degeneracy_temperature: float


def classicality_check(temperature: float, concentration: float, mass: float) -> Classicality:
    """Compare T with the degeneracy temperature n^(2/3) h^2 / (3 m k).

    Passes when the ratio is at least 100.
    """
    for name, value in (("temperature", temperature), ("concentration", concentration), ("mass", mass)):
        if not value > 0:
            raise ParameterError(f"{name} must be positive, got {value}")
    bound = concentration ** (2.0 / 3.0) * constants.h**2 / (3.0 * mass * constants.k)
    ratio = temperature / bound
    return Classicality(bool(ratio >= CLASSICAL_MARGIN), float(ratio), float(bound))
