from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ConsistencyError, ParameterError
from .kernelgen import SampledKernel, relative_asymmetry
from .numerics import Grid, SampledFunction, quad
from .spectral import ModeSet, ResponseSet, project, schmidt_decompose
from .storage import StorageModel

logger = logging.getLogger(__name__)

__all__ = [
    "ResponseSet",
    "OverlapMatrix",
    "CycleReport",
    "Anchor",
    "response_functions",
    "overlap_matrix",
    "output_profile",
    "efficiency_overlap",
    "direct_output",
    "efficiency_direct",
    "input_projection",
    "optimized_cycle",
]

NORM_WARN = 1e-3
NORM_FAIL = 1e-2
Q_ASYMMETRY_WARN = 0.02
LEADING_MODES = 2
KERNEL_ASYMMETRY_WARN = 0.05
EFFICIENCY_SLACK = 1e-6
# symmetrizing the assembled kernel may lift s_1 slightly
OPTIMIZED_SLACK = 1e-3


@dataclass(frozen=True, eq=False)
class OverlapMatrix:
    """Q_ij = int psi_i(z; storage) psi_j(z; motionless) dz, truncated at M."""

    Q: np.ndarray = field(repr=False)
    label: str = "none"
    delta_L: Optional[float] = None

    def __post_init__(self) -> None:
        q = np.array(self.Q, dtype=float)
        if q.ndim != 2:
            raise ParameterError(f"overlap matrix must be 2-D, got shape {q.shape}")
        q.setflags(write=False)
        object.__setattr__(self, "Q", q)

    @property
    def truncation(self) -> int:
        return self.Q.shape[0]

    def block_asymmetry(self, m: Optional[int] = None) -> float:
        """max |Q_ij - Q_ji| over the leading m x m block (all of Q by default)."""
        n = min(self.Q.shape) if m is None else min(m, *self.Q.shape)
        sq = self.Q[:n, :n]
        return float(np.max(np.abs(sq - sq.T))) if n else 0.0

    @property
    def asymmetry(self) -> float:
        # the two quantum-efficient modes; higher modes carry little of the stored signal
        return self.block_asymmetry(LEADING_MODES)

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.Q).copy()

    def row_norms(self) -> np.ndarray:
        return np.sum(self.Q**2, axis=1)


@dataclass(frozen=True)
class Anchor:
    """A computed number next to the published value it should reproduce."""

    name: str
    computed: float
    expected: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return abs(self.computed - self.expected) <= self.tolerance

    def as_dict(self) -> Dict[str, object]:
        return {
            "name": self.name,
            "computed": self.computed,
            "expected": self.expected,
            "tolerance": self.tolerance,
            "passed": self.passed,
        }


@dataclass(frozen=True, eq=False)
class CycleReport:
    storage: str
    parameters: Dict[str, object]
    singular_values: np.ndarray = field(repr=False)
    efficiencies: np.ndarray = field(repr=False)
    direct_efficiencies: np.ndarray = field(repr=False)
    overlap: OverlapMatrix = field(repr=False)
    profiles: np.ndarray = field(repr=False)
    time_grid: Grid = field(repr=False)
    projections: Dict[int, List[float]] = field(default_factory=dict)
    provenance: List[Anchor] = field(default_factory=list)

    def __post_init__(self) -> None:
        eta = np.asarray(self.efficiencies, dtype=float)
        if np.any(eta < -EFFICIENCY_SLACK) or np.any(eta > 1.0 + EFFICIENCY_SLACK):
            raise ConsistencyError(f"efficiencies outside [0, 1]: {eta}")

    @property
    def beamsplitter(self) -> np.ndarray:
        """Single-mode transmissions Q_ii."""
        return self.overlap.diagonal


def response_functions(half_write: SampledKernel, modes: ModeSet) -> ResponseSet:
    """Spin-wave profiles written by each eigenmode.

    raw_i(z) = int_0^T G_ab(z, t) phi_i(t) dt, split as sqrt(s_i) psi_i with
    psi_i of unit norm. The measured norm must reproduce sqrt(s_i).
    """
    if half_write.col_grid != modes.grid:
        raise ParameterError("half kernel time grid does not match the mode grid")
    zgrid = half_write.row_grid
    raw = (modes.values * modes.grid.weights) @ half_write.values.T
    measured = np.sqrt(np.maximum(raw**2 @ zgrid.weights, 0.0))
    expected = np.sqrt(modes.singular_values)
    s1 = float(modes.singular_values[0]) if modes.count else 0.0

    for i, (got, want) in enumerate(zip(measured, expected)):
        if modes.singular_values[i] <= 1e-8 * s1 or want == 0.0:
            continue
        rel = abs(got - want) / want
        if rel > NORM_FAIL:
            raise ConsistencyError(
                f"response norm of mode {i + 1} is {got:.6g}, expected {want:.6g}: "
                "kernel and eigensolve disagree"
            )
        if rel > NORM_WARN:
            logger.warning("response norm mismatch %.2e for mode %d", rel, i + 1)

    safe = np.where(measured > 0.0, measured, 1.0)
    unit = np.where(measured[:, None] > 0.0, raw / safe[:, None], 0.0)
    return ResponseSet(zgrid, unit, expected)


def overlap_matrix(
    stored: ResponseSet,
    reference: ResponseSet,
    storage: Optional[StorageModel] = None,
) -> OverlapMatrix:
    if stored.grid != reference.grid:
        raise ParameterError("stored and reference response sets live on different grids")
    w = stored.grid.weights
    q = (stored.unit_modes * w) @ reference.unit_modes.T
    storage = storage or StorageModel()
    delta_L = storage.delta_L if storage.variant != "full_mixing" else None
    om = OverlapMatrix(q, storage.label, delta_L)
    # full mixing gives identical rows, so only free expansion is expected symmetric
    if storage.variant == "free_expansion" and om.asymmetry > Q_ASYMMETRY_WARN:
        logger.warning("overlap matrix asymmetry %.3e for %s", om.asymmetry, storage.label)
    if np.any(om.row_norms() > 1.0 + 1e-4):
        logger.warning("overlap row norms exceed 1: %s", np.array2string(om.row_norms(), precision=5))
    return om


def _check_index(i: int, Q: OverlapMatrix, modes: ModeSet) -> int:
    m = min(Q.truncation, modes.count)
    if not 1 <= i <= m:
        raise ParameterError(f"mode index {i} outside [1, {m}]")
    if Q.Q.shape[1] > modes.count:
        raise ParameterError("overlap matrix has more columns than available modes")
    return i - 1


def output_profile(i: int, Q: OverlapMatrix, modes: ModeSet) -> SampledFunction:
    """Retrieved pulse for input mode i: sum_j Q_ij sqrt(s_i s_j) phi_j(t). ``i`` is 1-based."""
    row = _check_index(i, Q, modes)
    m = Q.Q.shape[1]
    s = modes.singular_values
    coeffs = Q.Q[row] * np.sqrt(s[row] * s[:m])
    logger.debug("output profile %d truncated at M=%d, tail scale %.3e", i, m, modes.tail)
    return SampledFunction(modes.grid, coeffs @ modes.values[:m])


def efficiency_overlap(i: int, Q: OverlapMatrix, modes: ModeSet) -> float:
    """eta_i = sum_j Q_ij^2 s_i s_j. ``i`` is 1-based."""
    row = _check_index(i, Q, modes)
    m = Q.Q.shape[1]
    s = modes.singular_values
    return float(np.sum(Q.Q[row] ** 2 * s[row] * s[:m]))


def _unit_input(signal: SampledFunction) -> SampledFunction:
    energy = quad(signal * signal)
    if not energy > 0.0:
        raise ParameterError("input pulse has zero energy")
    if abs(energy - 1.0) > 1e-6:
        logger.warning("input energy %.6g is not 1; normalizing", energy)
        return signal * (1.0 / np.sqrt(energy))
    return signal


def direct_output(
    signal: SampledFunction,
    half_write: SampledKernel,
    storage: StorageModel,
    half_read: SampledKernel,
) -> SampledFunction:
    """Push a unit-energy pulse through write, storage and read by quadrature."""
    if signal.grid != half_write.col_grid:
        raise ParameterError("input pulse must be sampled on the write time grid")
    signal = _unit_input(signal)
    coherence = half_write.values @ (half_write.col_grid.weights * signal.values)
    written = ResponseSet(half_write.row_grid, coherence[None, :], [1.0])
    stored = storage.apply(written)
    if stored.grid != half_read.row_grid:
        raise ParameterError("stored coherence and read kernel use different space grids")
    out = half_read.values.T @ (stored.grid.weights * stored.unit_modes[0])
    return SampledFunction(half_read.col_grid, out)


def efficiency_direct(
    signal: SampledFunction,
    half_write: SampledKernel,
    storage: StorageModel,
    half_read: SampledKernel,
) -> float:
    """Output photon number for a unit input; independent check of efficiency_overlap."""
    out = direct_output(signal, half_write, storage, half_read)
    return quad(out * out)


def input_projection(signal: SampledFunction, modes: ModeSet) -> np.ndarray:
    """Coefficients of a (normalized) input on the cycle eigenfunctions."""
    return project(_unit_input(signal), modes)


def optimized_cycle(
    stored: ResponseSet,
    half_read: SampledKernel,
    modes: ModeSet,
    M: int,
    reference: Optional[ResponseSet] = None,
) -> ModeSet:
    """Eigenmodes of the full cycle including storage.

    G(t, t') = sum_ij sqrt(s_i s_j) Q_ij phi_i(t) phi_j(t'), assembled from the
    first M modes, symmetrized and decomposed again.
    """
    if not 1 <= M <= min(stored.count, modes.count):
        raise ParameterError(f"truncation M={M} outside [1, {min(stored.count, modes.count)}]")
    if reference is None:
        reference = response_functions(half_read, modes)
    q = overlap_matrix(stored.truncated(M), reference.truncated(M)).Q
    s = modes.singular_values[:M]
    coeffs = np.sqrt(np.outer(s, s)) * q
    phi = modes.values[:M]
    values = phi.T @ coeffs @ phi
    asym = relative_asymmetry(values)
    if asym > KERNEL_ASYMMETRY_WARN:
        logger.warning("optimized kernel asymmetry %.3e exceeds %.2f", asym, KERNEL_ASYMMETRY_WARN)
    else:
        logger.debug("optimized kernel asymmetry %.3e", asym)
    kernel = SampledKernel(
        modes.grid,
        modes.grid,
        0.5 * (values + values.T),
        symmetric=True,
        out_of_model=half_read.out_of_model,
        asymmetry=asym,
    )
    result = schmidt_decompose(kernel, M)
    # storage cannot beat the motionless optimum s_1^2, itself at most 1
    limit = float(modes.efficiencies[0]) + OPTIMIZED_SLACK
    if result.efficiencies[0] > limit:
        raise ConsistencyError(
            f"optimized efficiency {result.efficiencies[0]:.4f} exceeds the motionless {modes.efficiencies[0]:.4f}; "
            "the storage map is not linear in the stored coherence"
        )
    return result
