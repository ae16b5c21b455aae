"""Statevector simulator: gates, overlaps, Haar draws and Born sampling."""
import math

import numpy as np
import pytest

from qsketch.errors import ArgumentError, ResourceError
from qsketch.measurement import sample_clifford
from qsketch.oracle import half_support_pair
from qsketch.statevector import (
    Gate,
    PureState,
    apply_gate,
    apply_gates,
    inner_product,
    measure_computational,
    random_haar_state,
    substream,
    trace_distance,
)

SQRT2_INV = 1 / math.sqrt(2)


def plus(n=1):
    return PureState.from_amplitudes(np.ones(2**n), normalize=True)


# -- gates -----------------------------------------------------------------


def test_h_on_zero_gives_plus():
    out = apply_gate(PureState.basis(1, 0), Gate("H", (0,)))
    assert np.allclose(out.amplitudes, [SQRT2_INV, SQRT2_INV])


def test_s_on_one_gives_i_one():
    out = apply_gate(PureState.basis(1, 1), Gate("S", (0,)))
    assert np.allclose(out.amplitudes, [0, 1j])


def test_x_flips_zero():
    out = apply_gate(PureState.basis(1, 0), Gate("X", (0,)))
    assert np.allclose(out.amplitudes, [0, 1])


def test_qubit_zero_is_most_significant():
    out = apply_gate(PureState.basis(3, 0), Gate("X", (0,)))
    assert out.amplitudes[0b100] == 1


def test_bell_pair():
    s = apply_gates(PureState.basis(2, 0), [Gate("H", (0,)), Gate("CNOT", (0, 1))])
    assert np.allclose(s.amplitudes, [SQRT2_INV, 0, 0, SQRT2_INV])


def test_out_of_range_qubit_rejected():
    with pytest.raises(ArgumentError):
        apply_gate(PureState.basis(2, 0), Gate("H", (2,)))
    with pytest.raises(ArgumentError):
        apply_gate(PureState.basis(2, 0), Gate("CNOT", (0, 5)))


def test_gate_matches_kron_unitary():
    rng = substream(1)
    s = random_haar_state(3, rng)
    g = Gate("SDG", (1,))
    full = np.kron(np.kron(np.eye(2), np.diag([1, -1j])), np.eye(2))
    assert np.allclose(apply_gate(s, g).amplitudes, full @ s.amplitudes)


def test_gates_preserve_norm():
    rng = substream(2)
    s = random_haar_state(5, rng)
    for gate in sample_clifford(5, rng).gates:
        s = apply_gate(s, gate)
        assert abs(np.linalg.norm(s.amplitudes) - 1) < 1e-9


def test_unnormalized_state_rejected():
    with pytest.raises(ArgumentError):
        PureState(1, np.array([1.0, 1.0]))


# -- overlaps and distance ---------------------------------------------------


def test_inner_product_basics():
    phi = random_haar_state(3, substream(3))
    assert inner_product(phi, phi) == pytest.approx(1)
    assert inner_product(PureState.basis(1, 0), PureState.basis(1, 1)) == 0


def test_inner_product_half_support_pair():
    phi, psi = half_support_pair(16)
    assert inner_product(phi, psi) == pytest.approx(0.5, abs=1e-12)


def test_trace_distance_values():
    phi, psi = half_support_pair(16)
    assert trace_distance(phi, phi) == 0
    assert trace_distance(PureState.basis(1, 0), PureState.basis(1, 1)) == 1
    assert trace_distance(phi, psi) == pytest.approx(math.sqrt(0.75), abs=1e-12)


def test_dimension_mismatch():
    with pytest.raises(ArgumentError):
        inner_product(PureState.basis(1), PureState.basis(2))
    with pytest.raises(ArgumentError):
        trace_distance(PureState.basis(1), PureState.basis(2))


def test_trace_distance_symmetric_and_triangle():
    rng = substream(4)
    for _ in range(50):
        a, b, c = (random_haar_state(3, rng) for _ in range(3))
        assert trace_distance(a, b) == pytest.approx(trace_distance(b, a), abs=1e-15)
        assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-9


def test_overlap_invariant_under_shared_unitary():
    rng = substream(5)
    a, b = random_haar_state(4, rng), random_haar_state(4, rng)
    gates = sample_clifford(4, rng).gates
    before = abs(inner_product(a, b))
    after = abs(inner_product(apply_gates(a, gates), apply_gates(b, gates)))
    assert after == pytest.approx(before, abs=1e-9)


# -- Haar draws ----------------------------------------------------------------


def test_haar_first_moment():
    rng = substream(6)
    p0 = [abs(random_haar_state(3, rng).amplitudes[0]) ** 2 for _ in range(10_000)]
    assert np.mean(p0) == pytest.approx(0.125, abs=0.01)


def test_haar_unit_norm():
    rng = substream(7)
    for _ in range(100):
        assert abs(np.linalg.norm(random_haar_state(4, rng).amplitudes) - 1) < 1e-9


def test_haar_determinism():
    a = random_haar_state(6, substream(8))
    b = random_haar_state(6, substream(8))
    assert a.amplitudes.tobytes() == b.amplitudes.tobytes()


def test_haar_cap():
    with pytest.raises(ResourceError):
        random_haar_state(17, substream(0))
    with pytest.raises(ResourceError):
        random_haar_state(5, substream(0), max_qubits=4)


# -- Born sampling -------------------------------------------------------------


def test_measure_basis_state():
    counts = measure_computational(PureState.basis(2, 0), 500, substream(9))
    assert counts[0] == 500 and counts.sum() == 500


def test_measure_plus_is_fair():
    counts = measure_computational(plus(), 100_000, substream(10))
    assert counts[0] / 1e5 == pytest.approx(0.5, abs=0.01)


def test_empirical_converges_to_born():
    s = random_haar_state(4, substream(11))
    gaps = []
    for shots in (1_000, 100_000):
        counts = measure_computational(s, shots, substream(12, shots))
        gaps.append(np.abs(counts / shots - s.probabilities()).sum())
    assert gaps[1] < gaps[0]
    assert gaps[1] < 0.03
