"""
End-to-end network: quanvolution -> flatten (optional 2x2 average pool) ->
dense softmax head, with the classification + fidelity loss and its gradients.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from services.circuits import fidelity_grads_batch, vjp_adjoint, vjp_paramshift
from services.errors import ConfigurationError
from services.quanv import (
    FeatureTensor,
    FilterBank,
    Geometry,
    extract_patches,
    forward,
    mean_pairwise_fidelity,
    pair_weight,
)

logger = logging.getLogger(__name__)

PROBABILITY_FLOOR = 1e-12


class RFMode(str, Enum):
    AS_WRITTEN = "as_written"  # 1 - mean fidelity
    DIVERSITY = "diversity"  # mean fidelity


class GradMode(str, Enum):
    PARAMSHIFT = "paramshift"
    ADJOINT = "adjoint"


@dataclass(frozen=True)
class DenseHead:
    weights: np.ndarray  # [C, D]
    bias: np.ndarray  # [C]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def input_size(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    rf: float
    total: float
    lam: float


@dataclass
class Gradients:
    head_weights: np.ndarray
    head_bias: np.ndarray
    filters: np.ndarray  # [n_f, n_params]

    def as_dict(self):
        return {"filters": self.filters, "head_weights": self.head_weights, "head_bias": self.head_bias}


def pooled_shape(height: int, width: int, pool: bool) -> Tuple[int, int]:
    return (height // 2, width // 2) if pool else (height, width)


def head_input_size(n_filters: int, n_qubits: int, image_shape: Tuple[int, int], geometry: Geometry) -> int:
    h, w = geometry.output_shape(*image_shape)
    if h < 1 or w < 1:
        raise ConfigurationError(f"Image {image_shape} is smaller than the kernel")
    ph, pw = pooled_shape(h, w, geometry.pool)
    if ph < 1 or pw < 1:
        raise ConfigurationError(f"Feature map {h}x{w} is too small to pool")
    return n_filters * n_qubits * ph * pw


def init_head(n_classes: int, input_size: int, rng: np.random.Generator) -> DenseHead:
    """Uniform in [-1/sqrt(D), 1/sqrt(D)]"""
    bound = 1.0 / np.sqrt(input_size)
    return DenseHead(
        weights=rng.uniform(-bound, bound, size=(n_classes, input_size)),
        bias=rng.uniform(-bound, bound, size=n_classes),
    )


def _pool(values: np.ndarray) -> np.ndarray:
    c, h, w = values.shape
    h2, w2 = h // 2, w // 2
    return values[:, :2 * h2, :2 * w2].reshape(c, h2, 2, w2, 2).mean(axis=(2, 4))


def _unpool(grad: np.ndarray, shape: Tuple[int, int, int]) -> np.ndarray:
    c, h, w = shape
    h2, w2 = grad.shape[1], grad.shape[2]
    out = np.zeros(shape)
    out[:, :2 * h2, :2 * w2] = np.repeat(np.repeat(grad, 2, axis=1), 2, axis=2) / 4.0
    return out


def flatten_features(tensor: FeatureTensor, pool: bool) -> np.ndarray:
    values = _pool(tensor.values) if pool else tensor.values
    return values.reshape(-1)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    e = np.exp(shifted)
    return e / np.sum(e)


def _logits(head: DenseHead, x: np.ndarray) -> np.ndarray:
    if x.shape[0] != head.input_size:
        raise ConfigurationError(f"Head expects {head.input_size} features, quanvolution produced {x.shape[0]}")
    return head.weights @ x + head.bias


def features(bank: FilterBank, image: np.ndarray, geometry: Geometry, keep_states: bool = False,
             threads: Optional[int] = None):
    grid = extract_patches(image, geometry.kernel_h, geometry.kernel_w, geometry.stride)
    return forward(bank, grid, keep_states=keep_states, threads=threads)


def predict(bank: FilterBank, head: DenseHead, image: np.ndarray, geometry: Geometry,
            threads: Optional[int] = None) -> np.ndarray:
    """Class probabilities for one image"""
    tensor, _ = features(bank, image, geometry, threads=threads)
    return softmax(_logits(head, flatten_features(tensor, geometry.pool)))


def cross_entropy(probabilities: np.ndarray, label: int) -> float:
    return float(-np.log(max(float(probabilities[label]), PROBABILITY_FLOOR)))


def rf_loss(mean_fidelity: float, mode: RFMode = RFMode.DIVERSITY) -> float:
    mode = RFMode(mode)
    if mode is RFMode.AS_WRITTEN:
        return 1.0 - mean_fidelity
    return mean_fidelity


def rf_loss_slope(mode: RFMode) -> float:
    """d rf_loss / d mean_fidelity"""
    return -1.0 if RFMode(mode) is RFMode.AS_WRITTEN else 1.0


def total_loss(ce_batch_mean: float, rf_batch_mean: float, lam: float) -> LossBreakdown:
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    return LossBreakdown(ce=ce_batch_mean, rf=rf_batch_mean, total=ce_batch_mean + lam * rf_batch_mean, lam=lam)


def _rf_active(bank: FilterBank, lam: float) -> bool:
    if lam < 0:
        raise ConfigurationError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return False
    if bank.n_filters < 2:
        raise ConfigurationError("lambda > 0 needs at least two filters")
    return True


def loss(bank: FilterBank, head: DenseHead, image: np.ndarray, label: int, lam: float,
         rf_mode: RFMode, geometry: Geometry, patch_sample: Sequence[Tuple[int, int]] = ()) -> LossBreakdown:
    """Per-example loss; the fidelity term uses the given patch sample"""
    use_rf = _rf_active(bank, lam)
    tensor, states = features(bank, image, geometry, keep_states=use_rf, threads=1)
    probs = softmax(_logits(head, flatten_features(tensor, geometry.pool)))
    rf = rf_loss(mean_pairwise_fidelity(states, patch_sample), rf_mode) if use_rf else 0.0
    return total_loss(cross_entropy(probs, label), rf, lam)


def backward(bank: FilterBank, head: DenseHead, image: np.ndarray, label: int, lam: float,
             rf_mode: RFMode, grad_mode: GradMode, geometry: Geometry,
             patch_sample: Sequence[Tuple[int, int]] = ()) -> Tuple[Gradients, LossBreakdown]:
    """
    Gradients of ce + lam * rf for one example.

    Head gradients are softmax cross-entropy backprop. Filter gradients chain
    d loss / d <Z> into the circuit (adjoint or parameter-shift); the fidelity
    term is always differentiated with the shift rule on the sampled patches.
    """
    grad_mode = GradMode(grad_mode)
    use_rf = _rf_active(bank, lam)
    grid = extract_patches(image, geometry.kernel_h, geometry.kernel_w, geometry.stride)
    tensor, states = forward(bank, grid, keep_states=use_rf, threads=1)
    x = flatten_features(tensor, geometry.pool)
    probs = softmax(_logits(head, x))
    ce = cross_entropy(probs, label)

    dlogits = probs.copy()
    dlogits[label] -= 1.0
    # Below the floor the clamped loss is flat
    if probs[label] < PROBABILITY_FLOOR:
        dlogits[:] = 0.0
    grad_w = np.outer(dlogits, x)
    grad_b = dlogits
    dx = head.weights.T @ dlogits
    if geometry.pool:
        ph, pw = pooled_shape(tensor.height, tensor.width, True)
        dvalues = _unpool(dx.reshape(tensor.channels, ph, pw), tensor.values.shape)
    else:
        dvalues = dx.reshape(tensor.values.shape)

    n_q = bank.n_qubits
    patches = grid.flat()
    vjp = vjp_adjoint if grad_mode is GradMode.ADJOINT else vjp_paramshift
    grad_filters = np.zeros_like(bank.params)
    for l in range(bank.n_filters):
        cotangent = dvalues[l * n_q:(l + 1) * n_q].reshape(n_q, -1).T
        grad_filters[l] = vjp(bank.template, bank.params[l], patches, cotangent)

    rf = 0.0
    if use_rf:
        rf = rf_loss(mean_pairwise_fidelity(states, patch_sample), rf_mode)
        sampled = np.stack([grid.patches[i, j] for i, j in patch_sample])
        scale = lam * rf_loss_slope(rf_mode) * pair_weight(bank.n_filters) / len(patch_sample)
        for l in range(bank.n_filters):
            for k in range(l + 1, bank.n_filters):
                grad_a, grad_b = fidelity_grads_batch(bank.template, bank.params[l], bank.params[k], sampled)
                grad_filters[l] += scale * grad_a.sum(axis=0)
                grad_filters[k] += scale * grad_b.sum(axis=0)

    return Gradients(head_weights=grad_w, head_bias=grad_b, filters=grad_filters), total_loss(ce, rf, lam)
