from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg

from .errors import ConsistencyError, ParameterError
from .kernelgen import SampledKernel
from .numerics import Grid, SampledFunction, quad_values

logger = logging.getLogger(__name__)

DEFAULT_MODES = 10
EIGEN_RESIDUAL = 1e-6
SCALING_TOLERANCE = 0.05
# modes below this fraction of s_1 carry no signal worth checking
SIGNIFICANT = 1e-3


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Singular values s_i = sqrt(lambda_i) with quadrature-orthonormal modes.

    ``values[i]`` holds the samples of mode i+1 on ``grid``. ``tail`` is the
    first discarded singular value, which bounds the truncation error.
    """

    grid: Grid
    singular_values: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    tail: float = 0.0

    def __post_init__(self) -> None:
        s = _frozen(self.singular_values).reshape(-1)
        v = _frozen(self.values).reshape(len(s), self.grid.n)
        if np.any(np.diff(s) > 1e-12 * max(1.0, float(s[0]) if len(s) else 1.0)):
            raise ParameterError("singular values must be in descending order")
        if len(s) and s[-1] < 0.0:
            raise ParameterError("singular values must be non-negative")
        object.__setattr__(self, "singular_values", s)
        object.__setattr__(self, "values", v)

    @property
    def count(self) -> int:
        return len(self.singular_values)

    @property
    def efficiencies(self) -> np.ndarray:
        return self.singular_values**2

    @property
    def functions(self) -> List[SampledFunction]:
        return [SampledFunction(self.grid, row) for row in self.values]

    def truncated(self, m: int) -> "ModeSet":
        if m > self.count:
            raise ParameterError(f"cannot keep {m} of {self.count} modes")
        tail = float(self.singular_values[m]) if m < self.count else self.tail
        return ModeSet(self.grid, self.singular_values[:m], self.values[:m], tail=tail)

    def gram(self) -> np.ndarray:
        return (self.values * self.grid.weights) @ self.values.T


@dataclass(frozen=True, eq=False)
class ResponseSet:
    """Spatial modes psi_i with their norm factors (fourth root of lambda_i).

    ``unit_modes`` have unit L2 norm in the motionless case; after storage
    they are kept as transformed, without renormalization.
    """

    grid: Grid
    unit_modes: np.ndarray = field(repr=False)
    norm_factors: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        f = _frozen(self.norm_factors).reshape(-1)
        u = _frozen(self.unit_modes).reshape(len(f), self.grid.n)
        if not np.all(np.isfinite(u)):
            raise ParameterError("response modes contain NaN or Inf")
        object.__setattr__(self, "norm_factors", f)
        object.__setattr__(self, "unit_modes", u)

    @property
    def count(self) -> int:
        return len(self.norm_factors)

    @property
    def responses(self) -> np.ndarray:
        return self.norm_factors[:, None] * self.unit_modes

    def areas(self) -> np.ndarray:
        """Integral of each squared response function."""
        return quad_values(self.grid, self.responses**2)

    def truncated(self, m: int) -> "ResponseSet":
        return ResponseSet(self.grid, self.unit_modes[:m], self.norm_factors[:m])

    def with_modes(self, unit_modes: np.ndarray, grid: Optional[Grid] = None) -> "ResponseSet":
        return ResponseSet(grid or self.grid, unit_modes, self.norm_factors)


def _apply_sign_convention(vecs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Make each mode's integral non-negative; ties broken by the first nonzero sample."""
    out = vecs.copy()
    integrals = out @ weights
    scale = np.max(np.abs(out), axis=1) * weights.sum()
    for i, (integral, sc) in enumerate(zip(integrals, scale)):
        if abs(integral) > 1e-12 * sc:
            flip = integral < 0
        else:
            nz = np.flatnonzero(np.abs(out[i]) > 1e-12 * max(sc, 1e-300))
            flip = bool(nz.size) and out[i, nz[0]] < 0
        if flip:
            out[i] = -out[i]
    return out


def schmidt_decompose(kernel: SampledKernel, m: int = DEFAULT_MODES) -> ModeSet:
    """Solve s_i phi_i(t) = int G(t, t') phi_i(t') dt' for the m largest s_i.

    Nystrom form with trapezoid weights D: the symmetric matrix
    D^1/2 G D^1/2 is diagonalized and its eigenvectors v mapped back to
    phi = D^-1/2 v, which makes the phi orthonormal under the grid's
    quadrature.
    """
    if not kernel.symmetric:
        raise ParameterError("schmidt_decompose needs a symmetric-flagged kernel")
    grid = kernel.row_grid
    if m < 0 or m > grid.n:
        raise ParameterError(f"mode count {m} outside [0, {grid.n}]")
    sqrt_w = np.sqrt(grid.weights)
    a = sqrt_w[:, None] * kernel.values * sqrt_w[None, :]
    try:
        evals, evecs = linalg.eigh(a)
    except linalg.LinAlgError as exc:
        raise ConsistencyError(f"eigensolve failed: {exc}") from exc

    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    s_max = float(max(evals[0], 0.0)) if evals.size else 0.0
    if evals.size and evals[-1] < -1e-9 * max(s_max, 1e-300):
        logger.debug("kernel spectrum has negative part down to %.3e", evals[-1])

    s = np.clip(evals[:m], 0.0, None)
    phi = (evecs[:, :m] / sqrt_w[:, None]).T
    phi = _apply_sign_convention(phi, grid.weights)

    if m:
        applied = (phi * grid.weights) @ kernel.values  # rows: int G(t, t') phi_i(t') dt'
        residual = float(np.max(np.abs(applied - evals[:m, None] * phi)))
        if residual > EIGEN_RESIDUAL * max(s_max, 1e-300):
            raise ConsistencyError(f"eigenvalue residual {residual:.3e} above tolerance")
        logger.debug("schmidt: s=%s residual=%.2e", np.array2string(s[:5], precision=4), residual)

    tail = float(max(evals[m], 0.0)) if m < len(evals) else 0.0
    return ModeSet(grid, s, phi, tail=tail)


def singular_decompose(kernel: SampledKernel, m: int = DEFAULT_MODES) -> Tuple[ModeSet, ModeSet]:
    """Write and read modes of a kernel G(t_read, t_write) on two grids.

    s_i chi_i(t) = int G(t, t') phi_i(t') dt' with phi_i on the column (write)
    grid and chi_i on the row (read) grid. D_r^1/2 G D_w^1/2 is factored by an
    SVD; its right singular vectors give phi and its left ones give chi. The
    write modes follow the usual sign convention and each read mode flips with
    its write mode.
    """
    rows, cols = kernel.row_grid, kernel.col_grid
    if m < 0 or m > min(rows.n, cols.n):
        raise ParameterError(f"mode count {m} outside [0, {min(rows.n, cols.n)}]")
    sqrt_r = np.sqrt(rows.weights)
    sqrt_w = np.sqrt(cols.weights)
    a = sqrt_r[:, None] * kernel.values * sqrt_w[None, :]
    try:
        u, sv, vh = linalg.svd(a, full_matrices=False)
    except linalg.LinAlgError as exc:
        raise ConsistencyError(f"singular value decomposition failed: {exc}") from exc

    s = sv[:m]
    phi = vh[:m] / sqrt_w[None, :]
    chi = (u[:, :m] / sqrt_r[:, None]).T
    signed = _apply_sign_convention(phi, cols.weights)
    flips = np.where(np.sum(signed * phi, axis=1) < 0, -1.0, 1.0)
    chi = chi * flips[:, None]

    if m:
        applied = (signed * cols.weights) @ kernel.values.T
        residual = float(np.max(np.abs(applied - s[:, None] * chi)))
        if residual > EIGEN_RESIDUAL * max(float(sv[0]), 1e-300):
            raise ConsistencyError(f"singular value residual {residual:.3e} above tolerance")
        logger.debug("svd: s=%s residual=%.2e", np.array2string(s[:5], precision=4), residual)

    tail = float(sv[m]) if m < len(sv) else 0.0
    return ModeSet(cols, s, signed, tail=tail), ModeSet(rows, s, chi, tail=tail)


def reconstruct_kernel(
    modes: ModeSet, original: Optional[SampledKernel] = None, read: Optional[ModeSet] = None
) -> Tuple[SampledKernel, Optional[float]]:
    """Truncated form sum_i s_i chi_i(t) phi_i(t'), with chi = phi unless ``read`` is given.

    Returns the kernel and, when ``original`` is given, the relative Frobenius
    residual against it.
    """
    if read is None:
        values = (modes.values.T * modes.singular_values) @ modes.values
        values = 0.5 * (values + values.T)
        kernel = SampledKernel(modes.grid, modes.grid, values, symmetric=True)
    else:
        if read.count != modes.count:
            raise ParameterError("read and write mode sets differ in size")
        values = (read.values.T * modes.singular_values) @ modes.values
        kernel = SampledKernel(read.grid, modes.grid, values)
    if original is None:
        return kernel, None
    ref = np.linalg.norm(original.values)
    diff = np.linalg.norm(original.values - values)
    return kernel, float(diff / ref) if ref > 0 else float(diff)


def scaled_retrieval_modes(modes: ModeSet, k: float) -> ModeSet:
    """Retrieval-stage modes sqrt(k) phi_i(k t) on [0, T_w / k].

    The output grid is the write grid divided by k, so the nodes map one to one
    and no interpolation is needed.
    """
    if not k > 0:
        raise ParameterError(f"scale factor k must be positive, got {k}")
    if k == 1.0:
        return modes
    return ModeSet(
        modes.grid.scaled(1.0 / k),
        modes.singular_values,
        np.sqrt(k) * modes.values,
        tail=modes.tail,
    )


def scaling_deviation(write: ModeSet, read: ModeSet, k: float) -> np.ndarray:
    """L2 distance of each read mode from the rescaled write mode sqrt(k) phi_i(k t).

    Both sets share the write-mode sign convention; a distance near sqrt(2)
    means the rescaled mode is orthogonal to the true one.
    """
    if not k > 0:
        raise ParameterError(f"scale factor k must be positive, got {k}")
    if read.count != write.count:
        raise ParameterError("read and write mode sets differ in size")
    t = read.grid.points
    scaled = np.sqrt(k) * np.array([np.interp(k * t, write.grid.points, row) for row in write.values])
    scaled = scaled.reshape(write.count, read.grid.n)
    return np.sqrt(quad_values(read.grid, (read.values - scaled) ** 2))


def check_scaled_retrieval(
    write: ModeSet, read: ModeSet, k: float, tolerance: float = SCALING_TOLERANCE
) -> np.ndarray:
    """Deviations of the significant modes; ConsistencyError when any exceeds ``tolerance``."""
    deviation = scaling_deviation(write, read, k)
    s = write.singular_values
    lead = s > SIGNIFICANT * s[0] if write.count else np.zeros(0, dtype=bool)
    worst = float(np.max(deviation[lead])) if lead.any() else 0.0
    logger.info("scaled read modes at k=%.6g: worst deviation %.3e", k, worst)
    if worst > tolerance:
        raise ConsistencyError(
            f"read modes deviate from sqrt(k) phi(k t) by {worst:.3f} (tolerance {tolerance:g}); "
            "use the exact read modes"
        )
    return deviation


def project(f: SampledFunction, modes: ModeSet) -> np.ndarray:
    if f.grid != modes.grid:
        raise ParameterError("function and modes live on different grids")
    return modes.values @ (modes.grid.weights * f.values)
