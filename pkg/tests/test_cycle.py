from __future__ import annotations

import logging

import numpy as np
import pytest

from components.cycle import (
    CycleReport,
    OverlapMatrix,
    efficiency_direct,
    efficiency_overlap,
    input_projection,
    optimized_cycle,
    output_profile,
    overlap_matrix,
    response_functions,
)
from components.errors import ConsistencyError, ParameterError
from components.kernelgen import SampledKernel, build_cycle_kernel
from components.numerics import Grid, SampledFunction, quad
from components.spectral import schmidt_decompose
from components.storage import StorageModel

STORAGE_MODELS = [
    StorageModel(),
    StorageModel.free_expansion(2.0),
    StorageModel.free_expansion(10.0),
    StorageModel.full_mixing(),
    StorageModel.full_mixing(mix_norm="amplitude"),
]
LINEAR_MODELS = [s for s in STORAGE_MODELS[1:] if s.linear]


def _stored_overlap(op, storage):
    return overlap_matrix(storage.apply(op.reference), op.reference, storage)


def _lead(op, floor=1e-3):
    s = op.modes.singular_values
    return int(np.sum(s > floor * s[0]))


def test_response_areas_equal_singular_values(small):
    ref = small.reference
    assert ref.areas() == pytest.approx(small.modes.singular_values, abs=1e-3)
    assert ref.norm_factors == pytest.approx(np.sqrt(small.modes.singular_values))


def test_response_unit_modes_orthonormal(small):
    ref = small.reference
    m = _lead(small)
    gram = (ref.unit_modes[:m] * ref.grid.weights) @ ref.unit_modes[:m].T
    assert np.max(np.abs(gram - np.eye(m))) <= 1e-5


def test_first_response_peaks_at_entrance(small):
    r1 = np.abs(small.reference.responses[0])
    assert int(np.argmax(r1)) == 0


def test_zero_kernel_gives_zero_responses():
    z, t = Grid(0.0, 10.0, 16), Grid(0.0, 5.5, 12)
    write = SampledKernel(z, t, np.zeros((16, 12)))
    modes = schmidt_decompose(build_cycle_kernel(write, write), 3)
    r = response_functions(write, modes)
    assert np.all(r.responses == 0.0)


def test_response_grid_mismatch(small):
    other = schmidt_decompose(
        SampledKernel(Grid(0.0, 1.0, 4), Grid(0.0, 1.0, 4), np.eye(4), symmetric=True), 2
    )
    with pytest.raises(ParameterError):
        response_functions(small.write, other)


def test_motionless_overlap_is_identity(small):
    m = _lead(small)
    q = _stored_overlap(small, StorageModel()).Q
    assert np.max(np.abs(q[:m, :m] - np.eye(m))) <= 1e-5


def test_overlap_grid_mismatch(small):
    shifted = small.reference.with_modes(
        np.zeros((small.reference.count, 16)), grid=Grid(0.0, 10.0, 16)
    )
    with pytest.raises(ParameterError):
        overlap_matrix(shifted, small.reference)


@pytest.mark.parametrize("storage", STORAGE_MODELS[1:], ids=lambda s: s.label)
def test_overlap_rows_obey_bessel_bound(small, storage):
    om = _stored_overlap(small, storage)
    assert np.all(om.row_norms() <= 1.0 + 1e-4)
    assert om.label == storage.label


@pytest.mark.parametrize("delta_L", [2.0, 10.0])
def test_free_expansion_overlap_nearly_symmetric(small, delta_L):
    om = _stored_overlap(small, StorageModel.free_expansion(delta_L))
    assert om.delta_L == delta_L
    assert abs(om.Q[0, 1] - om.Q[1, 0]) < 0.02
    assert om.asymmetry < 0.02


def test_motionless_output_profile_and_efficiency(small):
    om = _stored_overlap(small, StorageModel())
    s = small.modes.singular_values
    for i in (1, 2):
        out = output_profile(i, om, small.modes)
        assert out.values == pytest.approx(s[i - 1] * small.modes.values[i - 1], abs=1e-5)
        assert efficiency_overlap(i, om, small.modes) == pytest.approx(s[i - 1] ** 2, abs=1e-5)


@pytest.mark.parametrize("storage", STORAGE_MODELS, ids=lambda s: s.label)
def test_output_energy_equals_efficiency(small, storage):
    om = _stored_overlap(small, storage)
    for i in (1, 2, 3):
        out = output_profile(i, om, small.modes)
        eta = efficiency_overlap(i, om, small.modes)
        assert quad(out * out) == pytest.approx(eta, abs=1e-3)
        assert 0.0 <= eta <= 1.0 + 1e-3


def test_mode_index_is_checked(small):
    om = _stored_overlap(small, StorageModel())
    with pytest.raises(ParameterError):
        output_profile(0, om, small.modes)
    with pytest.raises(ParameterError):
        efficiency_overlap(om.truncation + 1, om, small.modes)


@pytest.mark.parametrize("storage", STORAGE_MODELS, ids=lambda s: s.label)
def test_direct_calculation_agrees_with_overlap_formula(small, storage):
    om = _stored_overlap(small, storage)
    for i, fn in enumerate(small.modes.functions[:2], start=1):
        direct = efficiency_direct(fn, small.write, storage, small.write)
        assert direct == pytest.approx(efficiency_overlap(i, om, small.modes), abs=0.01)


def test_direct_eigenmode_without_storage_gives_lambda(small):
    fn = small.modes.functions[0]
    eta = efficiency_direct(fn, small.write, StorageModel(), small.write)
    assert eta == pytest.approx(small.modes.singular_values[0] ** 2, abs=1e-6)


def test_direct_normalizes_input(small, caplog):
    fn = small.modes.functions[0]
    unit = efficiency_direct(fn, small.write, StorageModel.free_expansion(2.0), small.write)
    with caplog.at_level(logging.WARNING):
        doubled = efficiency_direct(fn * 2.0, small.write, StorageModel.free_expansion(2.0), small.write)
    assert doubled == pytest.approx(unit, rel=1e-9)
    assert "normalizing" in caplog.text


def test_direct_rejects_silent_input(small):
    silent = SampledFunction(small.modes.grid, np.zeros(small.modes.grid.n))
    with pytest.raises(ParameterError):
        efficiency_direct(silent, small.write, StorageModel(), small.write)


def test_input_projection_of_eigenmode(small):
    coeffs = input_projection(small.modes.functions[0] * 3.0, small.modes)
    assert coeffs[0] == pytest.approx(1.0, abs=1e-6)
    assert np.abs(coeffs[1:]).max() <= 1e-6


def test_full_mixing_output_shape_does_not_depend_on_input(small):
    om = _stored_overlap(small, StorageModel.full_mixing())
    first = output_profile(1, om, small.modes).values
    for i in (2, 3):
        other = output_profile(i, om, small.modes).values
        cos = abs(first @ other) / (np.linalg.norm(first) * np.linalg.norm(other))
        assert cos == pytest.approx(1.0, abs=1e-9)


def test_optimized_cycle_without_storage_recovers_modes(small):
    m = small.modes.count
    new = optimized_cycle(small.reference, small.write, small.modes, m, reference=small.reference)
    assert new.singular_values == pytest.approx(small.modes.singular_values, abs=1e-4)


@pytest.mark.parametrize("storage", LINEAR_MODELS, ids=lambda s: s.label)
def test_optimized_first_mode_dominates_every_input(small, storage):
    m = small.modes.count
    new = optimized_cycle(storage.apply(small.reference), small.write, small.modes, m)
    for fn in small.modes.functions[:3]:
        direct = efficiency_direct(fn, small.write, storage, small.write)
        assert new.efficiencies[0] >= direct - 0.01


def test_optimized_cycle_refuses_excitation_mixing(small):
    storage = StorageModel.full_mixing()
    assert not storage.linear
    with pytest.raises(ConsistencyError):
        optimized_cycle(storage.apply(small.reference), small.write, small.modes, small.modes.count)


def test_optimized_cycle_checks_truncation(small):
    with pytest.raises(ParameterError):
        optimized_cycle(small.reference, small.write, small.modes, 0)


def test_cycle_report_rejects_impossible_efficiency(small):
    with pytest.raises(ConsistencyError):
        CycleReport(
            storage="none",
            parameters={},
            singular_values=np.array([1.0]),
            efficiencies=np.array([1.5]),
            direct_efficiencies=np.array([1.5]),
            overlap=OverlapMatrix(np.eye(1)),
            profiles=np.zeros((1, 4)),
            time_grid=Grid(0.0, 1.0, 4),
        )


@pytest.mark.slow
class TestPublishedNumbers:
    def test_response_areas(self, full):
        areas = full.reference.areas()
        assert areas[0] == pytest.approx(1.0, abs=0.02)
        assert areas[1] == pytest.approx(0.882, abs=0.01)
        assert areas[1] ** 2 == pytest.approx(0.80, abs=0.03)

    def test_second_response_interior_peak_moves_right(self, full):
        z = full.reference.grid.points
        interior = z > 1.5
        motionless = np.abs(full.reference.responses[1])
        assert z[interior][np.argmax(motionless[interior])] == pytest.approx(3.9, abs=0.2)
        blurred = np.abs(StorageModel.free_expansion(2.0).apply(full.reference).responses[1])
        assert z[interior][np.argmax(blurred[interior])] == pytest.approx(4.6, abs=0.3)

    def test_wide_expansion_washes_out_second_response(self, full):
        z = full.reference.grid.points
        middle = (z >= 2.0) & (z <= 7.0)
        stored = StorageModel.free_expansion(10.0).apply(full.reference)
        assert int(np.argmax(np.abs(stored.responses[0]))) == 0
        motionless = np.abs(full.reference.responses[1])
        blurred = np.abs(stored.responses[1])
        assert blurred[middle].max() < 0.2 * motionless[middle].max()
        inner = np.flatnonzero((blurred[1:-1] > blurred[:-2]) & (blurred[1:-1] >= blurred[2:])) + 1
        assert not np.any(middle[inner])

    @pytest.mark.parametrize(
        "delta_L, q11, q12, q22, eta1, eta2, tol",
        [(2.0, 0.92, 0.11, 0.74, 0.87, 0.46, 0.02), (10.0, 0.68, 0.32, 0.39, 0.55, 0.22, 0.035)],
    )
    def test_free_expansion(self, full, delta_L, q11, q12, q22, eta1, eta2, tol):
        om = _stored_overlap(full, StorageModel.free_expansion(delta_L))
        assert om.Q[0, 0] == pytest.approx(q11, abs=tol)
        assert abs(om.Q[0, 1]) == pytest.approx(q12, abs=tol)
        assert abs(om.Q[1, 0]) == pytest.approx(q12, abs=tol)
        assert om.Q[1, 1] == pytest.approx(q22, abs=tol)
        assert om.asymmetry < 0.02
        assert efficiency_overlap(1, om, full.modes) == pytest.approx(eta1, abs=tol)
        assert efficiency_overlap(2, om, full.modes) == pytest.approx(eta2, abs=tol)

    def test_full_mixing(self, full):
        om = _stored_overlap(full, StorageModel.full_mixing())
        assert om.Q[0, 0] == pytest.approx(0.73, abs=0.02)
        assert abs(om.Q[0, 1]) == pytest.approx(0.56, abs=0.035)
        assert efficiency_overlap(1, om, full.modes) == pytest.approx(0.82, abs=0.02)

    def test_full_mixing_output_has_two_peaks(self, full):
        om = _stored_overlap(full, StorageModel.full_mixing())
        out = np.abs(output_profile(1, om, full.modes).values)
        t = full.modes.grid.points
        inner = np.flatnonzero((out[1:-1] > out[:-2]) & (out[1:-1] >= out[2:])) + 1
        top = sorted(inner[np.argsort(out[inner])[-2:]])
        assert t[top[0]] == pytest.approx(0.6, abs=0.2)
        assert t[top[1]] == pytest.approx(3.4, abs=0.2)
        assert out[top[0]] > out[top[1]]

    @pytest.mark.parametrize("delta_L, eta1, eta2", [(2.0, 0.94, 0.41), (10.0, 0.74, 0.03)])
    def test_optimized_efficiencies(self, full, delta_L, eta1, eta2):
        storage = StorageModel.free_expansion(delta_L)
        new = optimized_cycle(storage.apply(full.reference), full.write, full.modes, 10)
        assert new.efficiencies[0] == pytest.approx(eta1, abs=0.02)
        assert new.efficiencies[1] == pytest.approx(eta2, abs=0.02)

    @pytest.mark.parametrize("storage", STORAGE_MODELS, ids=lambda s: s.label)
    def test_direct_oracle(self, full, storage):
        om = _stored_overlap(full, storage)
        for i, fn in enumerate(full.modes.functions[:2], start=1):
            direct = efficiency_direct(fn, full.write, storage, full.write)
            assert direct == pytest.approx(efficiency_overlap(i, om, full.modes), abs=0.01)
