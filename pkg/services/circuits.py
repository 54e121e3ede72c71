"""
Circuit templates and their gradient engines.

A template is an ordered list of gates whose angles are resolved at
evaluation time from three sources: constants, patch pixels (angle encoding)
and trainable parameters. Every trainable parameter feeds exactly one
rotation, so the two-term parameter-shift rule is exact.

Batch conventions used by the array-level helpers:
  params   [n_params] or [K, n_params]
  patches  [data_arity] or [B, data_arity]
  states   [K, B, 2^n] with the K / B axes dropped for 1-D inputs
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple, Union

import numpy as np

from services.errors import ConfigurationError
from services.statevec import (
    GateKind,
    StateVector,
    apply_cnot,
    apply_generator,
    apply_rotation,
    check_gate,
    check_qubit_count,
    expectation_z_all,
    fidelity_amplitudes,
    overlap,
    z_signs,
    zero_amplitudes,
)

# Parameter-shift offset for generators with eigenvalues +-1/2
SHIFT = np.pi / 2


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class Data:
    index: int
    scale: float = np.pi


@dataclass(frozen=True)
class Param:
    index: int


AngleSource = Union[Constant, Data, Param]


@dataclass(frozen=True)
class TemplateOp:
    kind: GateKind
    target: int
    control: Optional[int] = None
    source: Optional[AngleSource] = None


@dataclass(frozen=True)
class CircuitTemplate:
    n_qubits: int
    n_params: int
    data_arity: int
    ops: Tuple[TemplateOp, ...]
    param_positions: Tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        check_qubit_count(self.n_qubits)
        object.__setattr__(self, "ops", tuple(self.ops))
        positions = [-1] * self.n_params
        data_seen = set()
        for position, op in enumerate(self.ops):
            check_gate(self.n_qubits, op.kind, op.target, op.control)
            if op.kind is GateKind.CNOT:
                if op.source is not None:
                    raise ConfigurationError("CNOT takes no angle")
                continue
            source = op.source
            if isinstance(source, Param):
                if not 0 <= source.index < self.n_params:
                    raise ConfigurationError(f"Param index {source.index} out of range [0, {self.n_params})")
                if positions[source.index] != -1:
                    raise ConfigurationError(f"Param {source.index} feeds more than one gate")
                positions[source.index] = position
            elif isinstance(source, Data):
                if not 0 <= source.index < self.data_arity:
                    raise ConfigurationError(f"Data index {source.index} out of range [0, {self.data_arity})")
                data_seen.add(source.index)
            elif not isinstance(source, Constant):
                raise ConfigurationError(f"Rotation at position {position} has no angle source")
        missing = [j for j, p in enumerate(positions) if p == -1]
        if missing:
            raise ConfigurationError(f"Params {missing} feed no gate")
        if len(data_seen) != self.data_arity:
            raise ConfigurationError(f"Data indices {sorted(set(range(self.data_arity)) - data_seen)} are never encoded")
        object.__setattr__(self, "param_positions", tuple(positions))

    @property
    def n_gates(self) -> int:
        return len(self.ops)


def build_squanv_template(n_qubits: int, kernel_h: int, kernel_w: int, n_blocks: int) -> CircuitTemplate:
    """
    Angle encoding with data re-uploading followed by hardware-efficient blocks.

    For every upload chunk m, qubit q encodes pixel (m * n_qubits + q) mod arity
    with RY(pi * pixel); the chunk is followed by n_blocks blocks of RX, RY, RZ on
    every qubit and a CNOT ring.
    """
    if n_qubits < 2:
        raise ConfigurationError(f"A filter needs at least 2 qubits, got {n_qubits}")
    if kernel_h < 1 or kernel_w < 1:
        raise ConfigurationError(f"Kernel must be at least 1x1, got {kernel_h}x{kernel_w}")
    if n_blocks < 1:
        raise ConfigurationError(f"Need at least one block, got {n_blocks}")
    arity = kernel_h * kernel_w
    uploads = math.ceil(arity / n_qubits)
    ops: List[TemplateOp] = []
    p = 0
    for m in range(uploads):
        for q in range(n_qubits):
            ops.append(TemplateOp(GateKind.RY, q, source=Data((m * n_qubits + q) % arity, np.pi)))
        for _ in range(n_blocks):
            for q in range(n_qubits):
                ops.append(TemplateOp(GateKind.RX, q, source=Param(p)))
                ops.append(TemplateOp(GateKind.RY, q, source=Param(p + 1)))
                ops.append(TemplateOp(GateKind.RZ, q, source=Param(p + 2)))
                p += 3
            for q in range(n_qubits):
                ops.append(TemplateOp(GateKind.CNOT, (q + 1) % n_qubits, control=q))
    return CircuitTemplate(n_qubits=n_qubits, n_params=p, data_arity=arity, ops=tuple(ops))


def _check_inputs(template: CircuitTemplate, params: np.ndarray, patches: np.ndarray) -> None:
    if params.shape[-1] != template.n_params:
        raise ConfigurationError(f"Template takes {template.n_params} params, got {params.shape[-1]}")
    if patches.shape[-1] != template.data_arity:
        raise ConfigurationError(f"Template encodes {template.data_arity} values per patch, got {patches.shape[-1]}")


def _angle(source: AngleSource, params: np.ndarray, patches: np.ndarray):
    # params [..., P] -> [..., 1] so it broadcasts over the patch axis; patches [B, A] -> [B]
    if isinstance(source, Param):
        return params[..., source.index, None]
    if isinstance(source, Data):
        return source.scale * patches[:, source.index]
    return source.value


def simulate(template: CircuitTemplate, params, patches) -> np.ndarray:
    """Final amplitudes for every (parameter row, patch) pair"""
    params = np.asarray(params, dtype=np.float64)
    patches = np.asarray(patches, dtype=np.float64)
    _check_inputs(template, params, patches)
    single_params = params.ndim == 1
    single_patch = patches.ndim == 1
    params2 = np.atleast_2d(params)
    patches2 = np.atleast_2d(patches)
    n = template.n_qubits
    amps = zero_amplitudes(n)
    for op in template.ops:
        if op.kind is GateKind.CNOT:
            amps = apply_cnot(amps, n, op.control, op.target)
        else:
            amps = apply_rotation(amps, n, op.kind, op.target, _angle(op.source, params2, patches2))
    amps = np.broadcast_to(amps, (params2.shape[0], patches2.shape[0], 1 << n))
    if single_patch:
        amps = amps[:, 0]
    if single_params:
        amps = amps[0]
    return np.ascontiguousarray(amps)


def evaluate(template: CircuitTemplate, params, patch) -> Tuple[np.ndarray, StateVector]:
    """Z-expectation of every qubit for one patch, plus the pre-measurement state"""
    params = np.asarray(params, dtype=np.float64)
    patch = np.asarray(patch, dtype=np.float64)
    if params.ndim != 1 or patch.ndim != 1:
        raise ConfigurationError("evaluate takes one parameter vector and one patch")
    amps = simulate(template, params, patch)
    return expectation_z_all(amps, template.n_qubits), StateVector(template.n_qubits, amps)


def evaluate_batch(template: CircuitTemplate, params, patches) -> Tuple[np.ndarray, np.ndarray]:
    """Features [B, n_qubits] and amplitudes [B, 2^n] for a batch of patches"""
    amps = simulate(template, np.asarray(params, dtype=np.float64), np.atleast_2d(patches))
    return expectation_z_all(amps, template.n_qubits), amps


def _shifted(params: np.ndarray) -> np.ndarray:
    # [2P, P]: rows 0..P-1 shifted up, rows P..2P-1 shifted down
    eye = np.eye(params.shape[-1])
    return np.concatenate([params + SHIFT * eye, params - SHIFT * eye], axis=0)


def jacobian_paramshift_batch(template: CircuitTemplate, params, patches) -> np.ndarray:
    """d<Z_q>/d theta_j for every patch, shape [B, n_params, n_qubits]"""
    params = np.asarray(params, dtype=np.float64)
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    P = template.n_params
    if P == 0:
        return np.zeros((patches.shape[0], 0, template.n_qubits))
    amps = simulate(template, _shifted(params), patches)
    features = expectation_z_all(amps, template.n_qubits)
    grads = (features[:P] - features[P:]) / 2.0
    return np.transpose(grads, (1, 0, 2))


def grad_expectation_paramshift(template: CircuitTemplate, params, patch) -> np.ndarray:
    """[n_params, n_qubits] Jacobian from two shifted evaluations per parameter"""
    patch = np.asarray(patch, dtype=np.float64)
    return jacobian_paramshift_batch(template, params, patch[None, :])[0]


def _adjoint_sweep(template: CircuitTemplate, params: np.ndarray, patches: np.ndarray,
                   psi: np.ndarray, bra: np.ndarray) -> np.ndarray:
    """
    Reverse sweep from the final state `psi` [B, 2^n] and bra O|psi> [..., B, 2^n].

    For U = exp(-i theta P / 2), d<O>/d theta = Im <bra_k| P |psi_k> with both
    vectors taken right after the gate. Returns [..., B, n_params].
    """
    n = template.n_qubits
    grads = np.zeros(bra.shape[:-1] + (template.n_params,))
    for op in reversed(template.ops):
        if op.kind is GateKind.CNOT:
            psi = apply_cnot(psi, n, op.control, op.target)
            bra = apply_cnot(bra, n, op.control, op.target)
            continue
        if isinstance(op.source, Param):
            grads[..., op.source.index] = overlap(bra, apply_generator(psi, n, op.kind, op.target)).imag
        angle = -np.asarray(_angle(op.source, params, patches))
        psi = apply_rotation(psi, n, op.kind, op.target, angle)
        bra = apply_rotation(bra, n, op.kind, op.target, angle)
    return grads


def jacobian_adjoint_batch(template: CircuitTemplate, params, patches) -> np.ndarray:
    """Same values as jacobian_paramshift_batch, one reverse sweep per observable"""
    params = np.asarray(params, dtype=np.float64)
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    _check_inputs(template, params, patches)
    if template.n_params == 0:
        return np.zeros((patches.shape[0], 0, template.n_qubits))
    psi = simulate(template, params, patches)
    signs = z_signs(template.n_qubits)
    bra = psi[None, :, :] * signs[:, None, :]
    grads = _adjoint_sweep(template, params, patches, psi, bra)
    return np.transpose(grads, (1, 2, 0))


def grad_expectation_adjoint(template: CircuitTemplate, params, patch) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float64)
    return jacobian_adjoint_batch(template, params, patch[None, :])[0]


def vjp_adjoint(template: CircuitTemplate, params, patches, cotangent) -> np.ndarray:
    """
    sum_b sum_q cotangent[b, q] * d<Z_q>_b / d theta, with a single reverse sweep.

    The weighted observable sum_q c_q Z_q is diagonal, so its bra is the final
    state scaled elementwise.
    """
    params = np.asarray(params, dtype=np.float64)
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    cotangent = np.atleast_2d(np.asarray(cotangent, dtype=np.float64))
    _check_inputs(template, params, patches)
    if template.n_params == 0:
        return np.zeros(0)
    psi = simulate(template, params, patches)
    bra = psi * (cotangent @ z_signs(template.n_qubits))
    grads = _adjoint_sweep(template, params, patches, psi, bra)
    return grads.sum(axis=0)


def vjp_paramshift(template: CircuitTemplate, params, patches, cotangent) -> np.ndarray:
    jac = jacobian_paramshift_batch(template, params, patches)
    cotangent = np.atleast_2d(np.asarray(cotangent, dtype=np.float64))
    return np.einsum("bpq,bq->p", jac, cotangent)


def fidelity(template: CircuitTemplate, params_a, params_b, patch) -> float:
    """|<psi(a)|psi(b)>|^2 for the same patch fed to both parameter vectors"""
    a = simulate(template, params_a, patch)
    b = simulate(template, params_b, patch)
    return float(fidelity_amplitudes(a, b))


def _check_pair(template: CircuitTemplate, params_a: np.ndarray, params_b: np.ndarray) -> None:
    if params_a.shape != (template.n_params,) or params_b.shape != (template.n_params,):
        raise ConfigurationError(
            f"Both parameter vectors must have {template.n_params} entries, "
            f"got {params_a.shape} and {params_b.shape}"
        )


def fidelity_grads_batch(template: CircuitTemplate, params_a, params_b, patches) -> Tuple[np.ndarray, np.ndarray]:
    """Shift-rule gradients of the per-patch fidelity w.r.t. both vectors, each [B, n_params]"""
    params_a = np.asarray(params_a, dtype=np.float64)
    params_b = np.asarray(params_b, dtype=np.float64)
    patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
    _check_pair(template, params_a, params_b)
    P = template.n_params
    B = patches.shape[0]
    if P == 0:
        return np.zeros((B, 0)), np.zeros((B, 0))
    state_a = simulate(template, params_a, patches)
    state_b = simulate(template, params_b, patches)
    # Phi(a +- s e_j, b) is <psi(a)| projector onto psi(b) |psi(a)>, a Pauli-rotation expectation
    fid_a = fidelity_amplitudes(simulate(template, _shifted(params_a), patches), state_b[None])
    fid_b = fidelity_amplitudes(state_a[None], simulate(template, _shifted(params_b), patches))
    grad_a = ((fid_a[:P] - fid_a[P:]) / 2.0).T
    grad_b = ((fid_b[:P] - fid_b[P:]) / 2.0).T
    return grad_a, grad_b


def grad_fidelity_paramshift(template: CircuitTemplate, params_a, params_b, patch) -> Tuple[np.ndarray, np.ndarray]:
    patch = np.asarray(patch, dtype=np.float64)
    grad_a, grad_b = fidelity_grads_batch(template, params_a, params_b, patch[None, :])
    return grad_a[0], grad_b[0]


def random_params(template: CircuitTemplate, rng: np.random.Generator, count: Optional[int] = None) -> np.ndarray:
    """Uniform angles in [-pi, pi]"""
    shape = (template.n_params,) if count is None else (count, template.n_params)
    return rng.uniform(-np.pi, np.pi, size=shape)


def single_rotation_template(kind: GateKind = GateKind.RY) -> CircuitTemplate:
    """One qubit, one trainable rotation and no data; used by the gradient checks"""
    return CircuitTemplate(n_qubits=1, n_params=1, data_arity=0, ops=(TemplateOp(kind, 0, source=Param(0)),))
