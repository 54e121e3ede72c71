# tests/test_statevec.py
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from services.errors import ConfigurationError
from services.statevec import (
    Gate,
    GateKind,
    StateVector,
    apply_cnot,
    apply_gate,
    apply_rotation,
    expectation_z,
    expectation_z_all,
    fidelity_amplitudes,
    overlap,
    overlap_fidelity,
    z_signs,
    zero_amplitudes,
    zero_state,
)
from tests import oracle

angles = st.floats(min_value=-4 * np.pi, max_value=4 * np.pi, allow_nan=False)


def random_gate(rng, n_qubits):
    kind = GateKind(rng.choice(["RX", "RY", "RZ", "CNOT"]))
    target = int(rng.integers(n_qubits))
    if kind is GateKind.CNOT:
        control = int((target + rng.integers(1, n_qubits)) % n_qubits)
        return Gate.cnot(control, target)
    return Gate(kind, target, angle=float(rng.uniform(-np.pi, np.pi)))


def test_zero_state():
    state = zero_state(3)
    assert state.amplitudes.shape == (8,)
    assert state.amplitudes[0] == 1.0
    assert state.norm() == 1.0
    assert np.allclose(expectation_z_all(state.amplitudes, 3), [1.0, 1.0, 1.0])


@pytest.mark.parametrize("n", [0, 21, -1])
def test_qubit_count_out_of_range(n):
    with pytest.raises(ConfigurationError):
        zero_state(n)


def test_state_size_must_match_qubits():
    with pytest.raises(ConfigurationError):
        StateVector(2, np.zeros(8, dtype=np.complex128))


def test_rx_expectation():
    state = apply_gate(zero_state(1), Gate.rx(0, 0.7))
    assert expectation_z(state, 0) == pytest.approx(0.7648421872844885, abs=1e-12)


def test_ry_probability():
    state = apply_gate(zero_state(1), Gate.ry(0, 1.0))
    assert abs(state.amplitudes[0]) ** 2 == pytest.approx(0.7701511529340699, abs=1e-12)


def test_rz_only_changes_phase():
    plus = apply_gate(zero_state(1), Gate.ry(0, np.pi / 2))
    rotated = apply_gate(plus, Gate.rz(0, 1.3))
    assert np.allclose(np.abs(rotated.amplitudes), np.abs(plus.amplitudes))
    assert rotated.amplitudes[0] == pytest.approx(plus.amplitudes[0] * np.exp(-0.65j))


def test_cnot_uses_low_bit_ordering():
    # Qubit 0 is the least significant bit: |01> has index 1
    state = apply_gate(zero_state(2), Gate.rx(0, np.pi))
    state = apply_gate(state, Gate.cnot(0, 1))
    assert np.isclose(abs(state.amplitudes[3]), 1.0)
    assert expectation_z(state, 0) == pytest.approx(-1.0)
    assert expectation_z(state, 1) == pytest.approx(-1.0)


def test_bell_state():
    state = apply_gate(zero_state(2), Gate.ry(0, np.pi / 2))
    state = apply_gate(state, Gate.cnot(0, 1))
    assert np.allclose(np.abs(state.amplitudes) ** 2, [0.5, 0.0, 0.0, 0.5])
    assert expectation_z(state, 0) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("gate", [Gate.rx(2, 0.1), Gate.cnot(0, 0), Gate.cnot(3, 1), Gate.ry(-1, 0.2)])
def test_invalid_gates(gate):
    with pytest.raises(ConfigurationError):
        apply_gate(zero_state(2), gate)


def test_expectation_qubit_out_of_range():
    with pytest.raises(ConfigurationError):
        expectation_z(zero_state(2), 2)


def test_matches_dense_reference(rng):
    n = 4
    state = zero_state(n)
    reference = state.amplitudes.copy()
    for _ in range(60):
        gate = random_gate(rng, n)
        state = apply_gate(state, gate)
        reference = oracle.gate_matrix(gate.kind, n, gate.target, gate.control, gate.angle) @ reference
    assert np.allclose(state.amplitudes, reference, atol=1e-12)
    assert np.allclose(expectation_z_all(state.amplitudes, n), oracle.z_expectations(reference, n), atol=1e-12)


def test_norm_preserved_on_sixteen_qubits(rng):
    state = zero_state(16)
    for _ in range(200):
        state = apply_gate(state, random_gate(rng, 16))
    assert abs(state.norm() - 1.0) < 1e-10


def test_batched_rotation_matches_single(rng):
    n = 3
    amps = zero_amplitudes(n, (4,))
    angles_ = rng.uniform(-np.pi, np.pi, size=4)
    batched = apply_rotation(amps, n, GateKind.RY, 1, angles_)
    for k, angle in enumerate(angles_):
        single = apply_gate(zero_state(n), Gate.ry(1, angle))
        assert np.allclose(batched[k], single.amplitudes)


def test_cnot_is_self_inverse(rng):
    amps = rng.normal(size=16) + 1j * rng.normal(size=16)
    twice = apply_cnot(apply_cnot(amps, 4, 2, 0), 4, 2, 0)
    assert np.array_equal(twice, amps)


def test_z_sign_table():
    signs = z_signs(2)
    assert signs.tolist() == [[1, -1, 1, -1], [1, 1, -1, -1]]
    assert not signs.flags.writeable


def test_fidelity():
    a = zero_state(2)
    b = apply_gate(a, Gate.rx(1, np.pi))
    assert overlap_fidelity(a, a) == pytest.approx(1.0)
    assert overlap_fidelity(a, b) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ConfigurationError):
        overlap_fidelity(a, zero_state(3))


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from([GateKind.RX, GateKind.RY, GateKind.RZ]), first=angles, second=angles,
       target=st.integers(0, 2))
def test_rotations_compose(kind, first, second, target):
    state = apply_gate(apply_gate(zero_state(3), Gate(kind, target, angle=first)), Gate(kind, target, angle=second))
    combined = apply_gate(zero_state(3), Gate(kind, target, angle=first + second))
    assert np.allclose(state.amplitudes, combined.amplitudes, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(kind=st.sampled_from([GateKind.RX, GateKind.RY, GateKind.RZ]), angle=angles, target=st.integers(0, 2))
def test_rotation_undone_by_negative_angle(kind, angle, target):
    start = apply_gate(apply_gate(zero_state(3), Gate.ry(0, 0.4)), Gate.rx(2, 1.1))
    there = apply_gate(start, Gate(kind, target, angle=angle))
    back = apply_gate(there, Gate(kind, target, angle=-angle))
    assert abs(there.norm() - 1.0) < 1e-12
    assert np.allclose(back.amplitudes, start.amplitudes, atol=1e-12)


@st.composite
def gate_sequences(draw, max_qubits=5, max_gates=30):
    n = draw(st.integers(1, max_qubits))
    kinds = ["RX", "RY", "RZ"] + (["CNOT"] if n > 1 else [])
    gates = []
    for _ in range(draw(st.integers(0, max_gates))):
        kind = GateKind(draw(st.sampled_from(kinds)))
        target = draw(st.integers(0, n - 1))
        if kind is GateKind.CNOT:
            control = draw(st.integers(0, n - 1).filter(lambda c: c != target))
            gates.append(Gate.cnot(control, target))
        else:
            gates.append(Gate(kind, target, angle=draw(angles)))
    return n, gates


@settings(max_examples=60, deadline=None)
@given(sequence=gate_sequences())
def test_gate_sequences_keep_norm_and_bound_z(sequence):
    n, gates = sequence
    state = zero_state(n)
    for gate in gates:
        state = apply_gate(state, gate)
    assert abs(state.norm() - 1.0) < 1e-10
    assert np.all(np.abs(expectation_z_all(state.amplitudes, n)) <= 1.0 + 1e-12)
    for q in range(n):
        assert -1.0 - 1e-12 <= expectation_z(state, q) <= 1.0 + 1e-12


@st.composite
def state_pairs(draw):
    n = draw(st.integers(1, 8))
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    a, b = rng.normal(size=(2, 2 ** n)) + 1j * rng.normal(size=(2, 2 ** n))
    return a / np.linalg.norm(a), b / np.linalg.norm(b)


@settings(max_examples=100, deadline=None)
@given(pair=state_pairs())
def test_fidelity_is_bit_exactly_symmetric(pair):
    a, b = pair
    assert fidelity_amplitudes(a, b) == fidelity_amplitudes(b, a)
    assert overlap(b, a) == np.conj(overlap(a, b))
    assert 0.0 <= fidelity_amplitudes(a, b) <= 1.0 + 1e-12


def test_batched_fidelity_is_bit_exactly_symmetric(rng):
    for n in (2, 4, 8, 12):
        a = rng.normal(size=(50, 2 ** n)) + 1j * rng.normal(size=(50, 2 ** n))
        b = rng.normal(size=(50, 2 ** n)) + 1j * rng.normal(size=(50, 2 ** n))
        a /= np.linalg.norm(a, axis=-1, keepdims=True)
        b /= np.linalg.norm(b, axis=-1, keepdims=True)
        assert np.array_equal(fidelity_amplitudes(a, b), fidelity_amplitudes(b, a))
        assert np.allclose(overlap(a, b), np.einsum("bi,bi->b", np.conj(a), b), atol=1e-12)
