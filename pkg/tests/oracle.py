"""Dense Kronecker-product reference simulator for small circuits"""
from functools import reduce

import numpy as np

from services.circuits import CircuitTemplate, Constant, Data, Param
from services.statevec import GateKind

I2 = np.eye(2, dtype=np.complex128)


def single_qubit_matrix(kind: GateKind, angle: float) -> np.ndarray:
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    if kind is GateKind.RX:
        return np.array([[c, -1j * s], [-1j * s, c]])
    if kind is GateKind.RY:
        return np.array([[c, -s], [s, c]], dtype=np.complex128)
    if kind is GateKind.RZ:
        return np.diag([np.exp(-1j * angle / 2), np.exp(1j * angle / 2)])
    raise ValueError(kind)


def embed(matrix: np.ndarray, target: int, n_qubits: int) -> np.ndarray:
    # Leftmost Kronecker factor is the most significant qubit
    factors = [matrix if q == target else I2 for q in reversed(range(n_qubits))]
    return reduce(np.kron, factors)


def cnot_matrix(control: int, target: int, n_qubits: int) -> np.ndarray:
    dim = 1 << n_qubits
    m = np.zeros((dim, dim), dtype=np.complex128)
    for k in range(dim):
        m[k ^ (((k >> control) & 1) << target), k] = 1.0
    return m


def gate_matrix(kind: GateKind, n_qubits: int, target: int, control=None, angle: float = 0.0) -> np.ndarray:
    if kind is GateKind.CNOT:
        return cnot_matrix(control, target, n_qubits)
    return embed(single_qubit_matrix(kind, angle), target, n_qubits)


def run_template(template: CircuitTemplate, params, patch) -> np.ndarray:
    state = np.zeros(1 << template.n_qubits, dtype=np.complex128)
    state[0] = 1.0
    for op in template.ops:
        source = op.source
        if isinstance(source, Param):
            angle = params[source.index]
        elif isinstance(source, Data):
            angle = source.scale * patch[source.index]
        elif isinstance(source, Constant):
            angle = source.value
        else:
            angle = 0.0
        state = gate_matrix(op.kind, template.n_qubits, op.target, op.control, angle) @ state
    return state


def z_expectations(state: np.ndarray, n_qubits: int) -> np.ndarray:
    out = []
    for q in range(n_qubits):
        z = embed(np.diag([1.0, -1.0]).astype(np.complex128), q, n_qubits)
        out.append(np.vdot(state, z @ state).real)
    return np.array(out)
