from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Tuple

import numpy as np

from .errors import ConsistencyError, ParameterError
from .numerics import Grid, bessel_j0

logger = logging.getLogger(__name__)

Stage = Literal["write", "read"]

# the inner integrand is conjugate-symmetric, so anything above this is a quadrature bug
IMAG_TOLERANCE = 1e-9
SYMMETRY_TOLERANCE = 1e-9
# largest rescaled-kernel asymmetry that symmetrize_asymmetric will paper over
RESCALED_ASYMMETRY_LIMIT = 0.05


@dataclass(frozen=True)
class CycleParams:
    """Cell length and stage durations, all dimensionless.

    ``L`` is in effective-optical-depth units, ``T_w``/``T_r`` in units of the
    inverse Rabi frequency of the driving field.
    """

    L: float = 10.0
    T_w: float = 5.5
    T_r: float = 5.5
    n_z: int = 512
    n_t: int = 512
    inner_n: Optional[int] = None

    def __post_init__(self) -> None:
        if not (self.L > 0 and self.T_w > 0 and self.T_r > 0):
            raise ParameterError(
                f"L, T_w and T_r must be positive (got L={self.L}, T_w={self.T_w}, T_r={self.T_r})"
            )
        if self.n_z < 2 or self.n_t < 2 or self.resolved_inner_n < 2:
            raise ParameterError("grid resolutions must be at least 2")

    @property
    def resolved_inner_n(self) -> int:
        return self.n_t if self.inner_n is None else int(self.inner_n)

    @property
    def out_of_model(self) -> bool:
        # the closed-form solutions only hold for T < L
        return self.T_w >= self.L or self.T_r >= self.L

    @property
    def k(self) -> float:
        return self.T_w / self.T_r

    def validate(self, strict: bool = True) -> "CycleParams":
        if self.out_of_model:
            msg = (
                f"durations T_w={self.T_w}, T_r={self.T_r} not below L={self.L}: "
                "outside the model's validity range"
            )
            if strict:
                raise ParameterError(msg)
            logger.warning("OUT OF MODEL: %s", msg)
        return self

    def space_grid(self) -> Grid:
        return Grid(0.0, self.L, self.n_z)

    def time_grid(self, stage: Stage = "write") -> Grid:
        return Grid(0.0, self.T_w if stage == "write" else self.T_r, self.n_t)


@dataclass(frozen=True, eq=False)
class SampledKernel:
    row_grid: Grid
    col_grid: Grid
    values: np.ndarray = field(repr=False)
    symmetric: bool = False
    out_of_model: bool = False
    # max|G - G^T| / max|G| with read and write time nodes paired, for unequal durations
    asymmetry: float = 0.0

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.row_grid.n, self.col_grid.n):
            raise ParameterError(
                f"kernel shape {vals.shape} does not match grids ({self.row_grid.n}, {self.col_grid.n})"
            )
        if not np.all(np.isfinite(vals)):
            raise ParameterError("kernel contains NaN or Inf")
        if self.symmetric:
            if self.row_grid != self.col_grid:
                raise ParameterError("symmetric flag needs identical row and column grids")
            scale = float(np.max(np.abs(vals))) if vals.size else 0.0
            if np.max(np.abs(vals - vals.T)) > SYMMETRY_TOLERANCE * scale:
                raise ParameterError("kernel flagged symmetric but G != G^T")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def relative_asymmetry(values: np.ndarray) -> float:
    scale = float(np.max(np.abs(values)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(values - values.T)) / scale)


def _inner_weights(inner_n: int) -> np.ndarray:
    """Trapezoid weights on [0, 1]; scaled by t for the inner range [0, t]."""
    return Grid(0.0, 1.0, inner_n).weights


def half_kernel_point(z: float, t: float, inner_n: int) -> float:
    """G_ab(z, t) = 1/sqrt(2) * int_0^t g(z, t') g*(z, t - t') dt'.

    With g(z, t) = exp(-i t) J0(sqrt(z t)) the integrand is
    exp(i (t - 2 t')) J0(sqrt(z t')) J0(sqrt(z (t - t'))), whose imaginary part
    is odd about t' = t/2.
    """
    if z < 0 or t < 0:
        raise ParameterError(f"half kernel needs z, t >= 0 (got z={z}, t={t})")
    if inner_n < 2:
        raise ParameterError("inner_n must be at least 2")
    if t == 0.0:
        return 0.0
    frac = np.linspace(0.0, 1.0, inner_n)
    tp = t * frac
    amp = bessel_j0(np.sqrt(z * tp))
    integrand = np.exp(1j * (t - 2.0 * tp)) * amp * amp[::-1]
    value = t * np.dot(_inner_weights(inner_n), integrand) / np.sqrt(2.0)
    if abs(value.imag) > IMAG_TOLERANCE * (1.0 + abs(value.real)):
        raise ConsistencyError(
            f"imaginary residual {value.imag:.3e} at z={z}, t={t}: check inner_n"
        )
    return float(value.real)


class _RowBuilder:
    """Evaluates whole rows G_ab(z, .) on a time grid, sharing the phase tables."""

    def __init__(self, times: np.ndarray, inner_n: int) -> None:
        frac = np.linspace(0.0, 1.0, inner_n)
        self.tp = np.outer(times, frac)
        phase = times[:, None] - 2.0 * self.tp
        # fold t * trapezoid weight into the phase tables
        scale = (times[:, None] * _inner_weights(inner_n)[None, :]) / np.sqrt(2.0)
        self.cos_w = np.cos(phase) * scale
        self.sin_w = np.sin(phase) * scale

    def row(self, z: float) -> np.ndarray:
        amp = bessel_j0(np.sqrt(z * self.tp))
        prod = amp * amp[:, ::-1]
        re = np.einsum("ij,ij->i", self.cos_w, prod)
        im = np.einsum("ij,ij->i", self.sin_w, prod)
        bad = np.abs(im) > IMAG_TOLERANCE * (1.0 + np.abs(re))
        if np.any(bad):
            k = int(np.argmax(bad))
            raise ConsistencyError(
                f"imaginary residual {im[k]:.3e} at z={z}, t={self.tp[k, -1]}: check inner_n"
            )
        return re


def build_half_kernel(
    params: CycleParams,
    stage: Stage = "write",
    strict: bool = True,
    workers: int = 1,
) -> SampledKernel:
    """Sample G_ab (write) or G_ba (read) on [0, L] x [0, T_stage].

    In the high-speed regime both stages share the same closed form, so the
    two matrices coincide whenever T_w == T_r. Rows are independent; the
    summation order inside each row is fixed, so the result does not depend
    on ``workers``.
    """
    if stage not in ("write", "read"):
        raise ParameterError(f"unknown stage {stage!r}")
    params.validate(strict=strict)
    zgrid = params.space_grid()
    tgrid = params.time_grid(stage)
    builder = _RowBuilder(tgrid.points, params.resolved_inner_n)
    logger.debug(
        "building %s kernel: n_z=%d n_t=%d inner_n=%d",
        stage, zgrid.n, tgrid.n, params.resolved_inner_n,
    )
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(builder.row, zgrid.points))
    else:
        rows = [builder.row(z) for z in zgrid.points]
    return SampledKernel(zgrid, tgrid, np.vstack(rows), out_of_model=params.out_of_model)


def _compose(write: SampledKernel, read: SampledKernel) -> np.ndarray:
    if write.row_grid != read.row_grid:
        raise ParameterError("write and read kernels must share the same space grid")
    wz = write.row_grid.weights
    # rows follow the write stage's time argument, columns the read stage's
    return write.values.T @ (wz[:, None] * read.values)


def build_cycle_kernel(write: SampledKernel, read: SampledKernel) -> SampledKernel:
    """G(t, t') = int_0^L G_ab(z, t) G_ba(z, t') dz on the time x time grid."""
    values = _compose(write, read)
    symmetric = write.col_grid == read.col_grid and np.array_equal(write.values, read.values)
    if symmetric:
        values = 0.5 * (values + values.T)
    return SampledKernel(
        write.col_grid,
        read.col_grid,
        values,
        symmetric=symmetric,
        out_of_model=write.out_of_model or read.out_of_model,
    )


def cross_cycle_kernel(
    params: CycleParams,
    strict: bool = True,
    workers: int = 1,
    write: Optional[SampledKernel] = None,
    read: Optional[SampledKernel] = None,
) -> Tuple[SampledKernel, float]:
    """Cycle kernel G(t_read, t_write) and k = T_w / T_r.

    Rows live on the read grid [0, T_r] and columns on the write grid
    [0, T_w]. For equal durations this is the symmetric kernel with k = 1;
    otherwise it is left unsymmetrized, and its asymmetry after rescaling
    the read axis by k (same point count on both grids) is kept on the kernel
    as a measure of how far the read modes are from sqrt(k) phi(k t).
    Prebuilt half kernels may be passed in.
    """
    params.validate(strict=strict)
    k = params.k
    if write is None:
        write = build_half_kernel(params, "write", strict=strict, workers=workers)
    if params.T_w == params.T_r:
        return build_cycle_kernel(write, write), 1.0
    if read is None:
        read = build_half_kernel(params, "read", strict=strict, workers=workers)
    raw = _compose(read, write)
    asym = relative_asymmetry(raw)
    logger.info("asymmetric durations: k=%.6g, rescaled kernel asymmetry %.3e", k, asym)
    kernel = SampledKernel(
        read.col_grid,
        write.col_grid,
        raw,
        out_of_model=params.out_of_model,
        asymmetry=asym,
    )
    return kernel, k


def symmetrize_asymmetric(
    params: CycleParams,
    strict: bool = True,
    workers: int = 1,
    write: Optional[SampledKernel] = None,
    read: Optional[SampledKernel] = None,
    tolerance: float = RESCALED_ASYMMETRY_LIMIT,
) -> Tuple[SampledKernel, float]:
    """Symmetric stand-in G~(k t, t') for unequal durations, on the write grid twice.

    Pairs read and write nodes one to one and takes (G + G^T) / 2. This is only
    a fair replacement when the rescaled kernel is already close to symmetric,
    so a relative asymmetry above ``tolerance`` raises ConsistencyError; use
    cross_cycle_kernel with an SVD for the exact write and read modes.
    """
    cross, k = cross_cycle_kernel(params, strict, workers, write=write, read=read)
    if cross.symmetric:
        return cross, k
    if cross.asymmetry > tolerance:
        raise ConsistencyError(
            f"rescaled kernel asymmetry {cross.asymmetry:.3f} at k={k:.4g} exceeds {tolerance:g}; "
            "symmetrizing would distort the modes"
        )
    values = cross.values
    kernel = SampledKernel(
        cross.col_grid,
        cross.col_grid,
        0.5 * (values + values.T),
        symmetric=True,
        out_of_model=cross.out_of_model,
        asymmetry=cross.asymmetry,
    )
    return kernel, k
