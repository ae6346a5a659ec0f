from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from components.cycle import response_functions  # noqa: E402
from components.kernelgen import CycleParams, build_cycle_kernel, build_half_kernel  # noqa: E402
from components.spectral import schmidt_decompose  # noqa: E402

# reduced resolution for the property suite; the invariants hold at any n
SMALL_N = 128


class ReferencePoint:
    """Kernels, modes and responses at L=10, T_w=T_r=5.5 on an n x n grid."""

    def __init__(self, n: int) -> None:
        self.params = CycleParams(L=10.0, T_w=5.5, T_r=5.5, n_z=n, n_t=n)
        self.write = build_half_kernel(self.params, "write")
        self.kernel = build_cycle_kernel(self.write, self.write)
        self.modes = schmidt_decompose(self.kernel, 10)
        self.reference = response_functions(self.write, self.modes)


@pytest.fixture(scope="session")
def small() -> ReferencePoint:
    return ReferencePoint(SMALL_N)


@pytest.fixture(scope="session")
def full() -> ReferencePoint:
    return ReferencePoint(512)
