"""
Dense state-vector simulation core.

Amplitudes live in a numpy complex128 array (interleaved real/imag doubles in
one contiguous buffer). Qubit 0 is the least-significant bit of the amplitude
index. Rotations follow exp(-i * angle * P / 2).

The array kernels (`apply_rotation`, `apply_cnot`, `expectation_z_all`, ...)
operate on the last axis and accept any number of leading batch axes, with
angles broadcast against those axes. `StateVector` and the single-state
operations wrap them.
"""
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np

from services.errors import ConfigurationError

MAX_QUBITS = 20

ArrayLike = Union[float, np.ndarray]


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZ = "RZ"
    CNOT = "CNOT"

    @property
    def is_rotation(self) -> bool:
        return self is not GateKind.CNOT


@dataclass(frozen=True)
class Gate:
    """A concrete gate: a rotation on `target` by `angle`, or CNOT(control, target)"""
    kind: GateKind
    target: int
    control: Optional[int] = None
    angle: float = 0.0

    @classmethod
    def rx(cls, target: int, angle: float) -> "Gate":
        return cls(GateKind.RX, target, angle=float(angle))

    @classmethod
    def ry(cls, target: int, angle: float) -> "Gate":
        return cls(GateKind.RY, target, angle=float(angle))

    @classmethod
    def rz(cls, target: int, angle: float) -> "Gate":
        return cls(GateKind.RZ, target, angle=float(angle))

    @classmethod
    def cnot(cls, control: int, target: int) -> "Gate":
        return cls(GateKind.CNOT, target, control=control)


@dataclass(frozen=True)
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if self.amplitudes.shape[-1] != 1 << self.n_qubits:
            raise ConfigurationError(
                f"State of {self.n_qubits} qubits needs {1 << self.n_qubits} amplitudes, "
                f"got {self.amplitudes.shape[-1]}"
            )

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def copy(self) -> "StateVector":
        return StateVector(self.n_qubits, self.amplitudes.copy())


def check_qubit_count(n_qubits: int) -> None:
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"Qubit count must be between 1 and {MAX_QUBITS}, got {n_qubits}")


def check_gate(n_qubits: int, kind: GateKind, target: int, control: Optional[int] = None) -> None:
    if not 0 <= target < n_qubits:
        raise ConfigurationError(f"Target qubit {target} out of range for {n_qubits} qubits")
    if kind is GateKind.CNOT:
        if control is None or not 0 <= control < n_qubits:
            raise ConfigurationError(f"Control qubit {control} out of range for {n_qubits} qubits")
        if control == target:
            raise ConfigurationError(f"CNOT control and target must differ, both are {target}")


def zero_amplitudes(n_qubits: int, batch_shape: tuple = ()) -> np.ndarray:
    check_qubit_count(n_qubits)
    amps = np.zeros(batch_shape + (1 << n_qubits,), dtype=np.complex128)
    amps[..., 0] = 1.0
    return amps


def zero_state(n_qubits: int) -> StateVector:
    """|0...0> on n_qubits qubits"""
    return StateVector(n_qubits, zero_amplitudes(n_qubits))


def _split(amps: np.ndarray, n_qubits: int, target: int) -> np.ndarray:
    # [..., high bits, target bit, low bits]
    return amps.reshape(amps.shape[:-1] + (1 << (n_qubits - 1 - target), 2, 1 << target))


def apply_rotation(amps: np.ndarray, n_qubits: int, kind: GateKind, target: int, angle: ArrayLike) -> np.ndarray:
    """
    Rotate `target` on every state of a batch and return new amplitudes.

    `angle` is a scalar or an array broadcastable against the batch axes of
    `amps` (everything except the last axis).
    """
    half = np.asarray(angle, dtype=np.float64) / 2.0
    half = half.reshape(half.shape + (1, 1))
    v = _split(amps, n_qubits, target)
    a0 = v[..., 0, :]
    a1 = v[..., 1, :]
    out = np.empty(np.broadcast_shapes(v.shape, half.shape[:-2] + (1, 1, 1)), dtype=np.complex128)
    if kind is GateKind.RX:
        c, s = np.cos(half), np.sin(half)
        out[..., 0, :] = c * a0 - 1j * s * a1
        out[..., 1, :] = -1j * s * a0 + c * a1
    elif kind is GateKind.RY:
        c, s = np.cos(half), np.sin(half)
        out[..., 0, :] = c * a0 - s * a1
        out[..., 1, :] = s * a0 + c * a1
    elif kind is GateKind.RZ:
        phase = np.exp(-1j * half)
        out[..., 0, :] = phase * a0
        out[..., 1, :] = np.conj(phase) * a1
    else:
        raise ConfigurationError(f"{kind} is not a rotation")
    return out.reshape(out.shape[:-3] + (1 << n_qubits,))


def apply_generator(amps: np.ndarray, n_qubits: int, kind: GateKind, target: int) -> np.ndarray:
    """Apply the Pauli generator P of a rotation gate (X, Y or Z on `target`)"""
    v = _split(amps, n_qubits, target)
    a0 = v[..., 0, :]
    a1 = v[..., 1, :]
    out = np.empty_like(v)
    if kind is GateKind.RX:
        out[..., 0, :] = a1
        out[..., 1, :] = a0
    elif kind is GateKind.RY:
        out[..., 0, :] = -1j * a1
        out[..., 1, :] = 1j * a0
    elif kind is GateKind.RZ:
        out[..., 0, :] = a0
        out[..., 1, :] = -a1
    else:
        raise ConfigurationError(f"{kind} has no rotation generator")
    return out.reshape(amps.shape)


@lru_cache(maxsize=None)
def _cnot_permutation(n_qubits: int, control: int, target: int) -> np.ndarray:
    index = np.arange(1 << n_qubits, dtype=np.int64)
    flip = (index >> control) & 1
    return index ^ (flip << target)


def apply_cnot(amps: np.ndarray, n_qubits: int, control: int, target: int) -> np.ndarray:
    # Self-inverse permutation of basis states with the control bit set
    return amps[..., _cnot_permutation(n_qubits, control, target)]


def apply_gate_amplitudes(amps: np.ndarray, n_qubits: int, gate: Gate) -> np.ndarray:
    if gate.kind is GateKind.CNOT:
        return apply_cnot(amps, n_qubits, gate.control, gate.target)
    return apply_rotation(amps, n_qubits, gate.kind, gate.target, gate.angle)


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    """Return the state multiplied by the gate's unitary"""
    check_gate(state.n_qubits, gate.kind, gate.target, gate.control)
    return StateVector(state.n_qubits, apply_gate_amplitudes(state.amplitudes, state.n_qubits, gate))


@lru_cache(maxsize=None)
def z_signs(n_qubits: int) -> np.ndarray:
    """[n_qubits, 2^n] table of Z eigenvalues: +1 where the qubit's bit is 0, -1 where it is 1"""
    index = np.arange(1 << n_qubits, dtype=np.int64)
    bits = (index[None, :] >> np.arange(n_qubits)[:, None]) & 1
    signs = 1.0 - 2.0 * bits
    signs.setflags(write=False)
    return signs


def probabilities(amps: np.ndarray) -> np.ndarray:
    return amps.real ** 2 + amps.imag ** 2


def expectation_z_all(amps: np.ndarray, n_qubits: int) -> np.ndarray:
    """<Z_q> for every qubit, shape [..., n_qubits]"""
    return probabilities(amps) @ z_signs(n_qubits).T


def expectation_z(state: StateVector, qubit: int) -> float:
    """Exact <psi| Z_qubit |psi>"""
    if not 0 <= qubit < state.n_qubits:
        raise ConfigurationError(f"Qubit {qubit} out of range for {state.n_qubits} qubits")
    return float(probabilities(state.amplitudes) @ z_signs(state.n_qubits)[qubit])


def _overlap_parts(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    # Swapping a and b returns (re, -im) exactly: products commute and sums keep their order
    ar, ai, br, bi = a.real, a.imag, b.real, b.imag
    re = np.sum(ar * br, axis=-1) + np.sum(ai * bi, axis=-1)
    im = np.sum(ar * bi, axis=-1) - np.sum(ai * br, axis=-1)
    return re, im


def overlap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """<a|b> along the last axis"""
    re, im = _overlap_parts(a, b)
    return re + 1j * im


def fidelity_amplitudes(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|<a|b>|^2 along the last axis, bit-exactly symmetric in a and b"""
    re, im = _overlap_parts(a, b)
    return re * re + im * im


def overlap_fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2 for two pure states"""
    if a.n_qubits != b.n_qubits:
        raise ConfigurationError(f"Cannot compare states of {a.n_qubits} and {b.n_qubits} qubits")
    return float(fidelity_amplitudes(a.amplitudes, b.amplitudes))
