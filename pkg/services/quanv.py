"""
Quanvolution layer: sliding-window patches, a bank of circuit filters sharing
one template, and the per-patch filter states the fidelity regulariser needs.
"""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from services.circuits import CircuitTemplate, evaluate_batch
from services.errors import ConfigurationError
from services.statevec import fidelity_amplitudes
from services.workers import parallel_map

logger = logging.getLogger(__name__)

# Kernel shapes for single-filter baselines, kernel area == qubit count
QCNN_KERNELS: Dict[int, Tuple[int, int]] = {
    4: (2, 2),
    8: (2, 4),
    12: (3, 4),
    16: (4, 4),
}


def qcnn_kernel(n_qubits: int) -> Tuple[int, int]:
    if n_qubits not in QCNN_KERNELS:
        raise ConfigurationError(
            f"No kernel mapping for {n_qubits} qubits, supported: {sorted(QCNN_KERNELS)}"
        )
    return QCNN_KERNELS[n_qubits]


@dataclass(frozen=True)
class Geometry:
    """Patch extraction and pooling settings shared by forward, predict and backward"""
    kernel_h: int = 2
    kernel_w: int = 2
    stride: int = 2
    pool: bool = False

    def output_shape(self, height: int, width: int) -> Tuple[int, int]:
        return (height - self.kernel_h) // self.stride + 1, (width - self.kernel_w) // self.stride + 1


@dataclass(frozen=True)
class PatchGrid:
    patches: np.ndarray  # [H', W', kernel_h * kernel_w]
    kernel_h: int
    kernel_w: int
    stride: int

    @property
    def height(self) -> int:
        return self.patches.shape[0]

    @property
    def width(self) -> int:
        return self.patches.shape[1]

    @property
    def arity(self) -> int:
        return self.patches.shape[2]

    def flat(self) -> np.ndarray:
        """Patches in row-major grid order, [H' * W', arity]"""
        return self.patches.reshape(-1, self.arity)


@dataclass(frozen=True)
class FilterBank:
    template: CircuitTemplate
    params: np.ndarray  # [n_f, n_params]

    def __post_init__(self):
        params = np.atleast_2d(np.asarray(self.params, dtype=np.float64))
        if params.shape[0] < 1:
            raise ConfigurationError("A filter bank needs at least one filter")
        if params.shape[1] != self.template.n_params:
            raise ConfigurationError(
                f"Filters need {self.template.n_params} params each, got {params.shape[1]}"
            )
        object.__setattr__(self, "params", params)

    @property
    def n_filters(self) -> int:
        return self.params.shape[0]

    @property
    def n_qubits(self) -> int:
        return self.template.n_qubits

    def with_params(self, params: np.ndarray) -> "FilterBank":
        return FilterBank(self.template, params)


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray  # [n_f * n_q, H', W'], filter-major
    n_filters: int
    n_qubits: int

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def filter_block(self, l: int) -> np.ndarray:
        return self.values[l * self.n_qubits:(l + 1) * self.n_qubits]


def extract_patches(image: np.ndarray, kernel_h: int, kernel_w: int, stride: int) -> PatchGrid:
    """Row-major sliding windows without padding, each flattened row-major"""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ConfigurationError(f"Expected a 2-D image, got shape {image.shape}")
    if stride < 1 or kernel_h < 1 or kernel_w < 1:
        raise ConfigurationError(f"Invalid kernel {kernel_h}x{kernel_w} / stride {stride}")
    height, width = image.shape
    if height < kernel_h or width < kernel_w:
        raise ConfigurationError(f"Image {height}x{width} is smaller than the {kernel_h}x{kernel_w} kernel")
    windows = sliding_window_view(image, (kernel_h, kernel_w))[::stride, ::stride]
    patches = np.ascontiguousarray(windows.reshape(windows.shape[0], windows.shape[1], kernel_h * kernel_w))
    return PatchGrid(patches, kernel_h, kernel_w, stride)


def _template_patches(bank: FilterBank, grid: PatchGrid, cycle_fallback: bool) -> np.ndarray:
    patches = grid.flat()
    arity = bank.template.data_arity
    if grid.arity == arity:
        return patches
    if not cycle_fallback:
        raise ConfigurationError(f"Patches carry {grid.arity} values but the template encodes {arity}")
    return patches[:, np.arange(arity) % grid.arity]


def forward(bank: FilterBank, grid: PatchGrid, keep_states: bool = False,
            cycle_fallback: bool = False, threads: Optional[int] = None) -> Tuple[FeatureTensor, Optional[np.ndarray]]:
    """
    Run every filter over every patch.

    Returns the feature tensor and, when keep_states is set, the filter states
    as amplitudes [n_f, H', W', 2^n_q].
    """
    patches = _template_patches(bank, grid, cycle_fallback)
    n_q = bank.n_qubits

    def run_filter(l: int):
        return evaluate_batch(bank.template, bank.params[l], patches)

    results = parallel_map(run_filter, range(bank.n_filters), threads=threads)
    values = np.empty((bank.n_filters * n_q, grid.height, grid.width))
    states = np.empty((bank.n_filters, grid.height, grid.width, 1 << n_q), dtype=np.complex128) if keep_states else None
    for l, (features, amps) in enumerate(results):
        values[l * n_q:(l + 1) * n_q] = features.T.reshape(n_q, grid.height, grid.width)
        if keep_states:
            states[l] = amps.reshape(grid.height, grid.width, -1)
    return FeatureTensor(values, bank.n_filters, n_q), states


def sample_patches(height: int, width: int, count: int, rng: np.random.Generator) -> List[Tuple[int, int]]:
    """Uniform sample without replacement; count <= 0 or >= grid size takes every patch"""
    total = height * width
    if count <= 0 or count >= total:
        flat = np.arange(total)
    else:
        flat = rng.choice(total, size=count, replace=False)
    return [(int(k) // width, int(k) % width) for k in flat]


def pair_weight(n_filters: int) -> float:
    """Weight of one unordered filter pair in the ordered-pair mean"""
    return 2.0 / (n_filters * (n_filters - 1))


def mean_pairwise_fidelity(states: np.ndarray, patch_sample: Sequence[Tuple[int, int]]) -> float:
    """Mean over sampled patches of the mean fidelity over ordered filter pairs"""
    n_filters = states.shape[0]
    if n_filters < 2:
        raise ConfigurationError("Pairwise fidelity needs at least two filters (use lambda = 0 with one filter)")
    if len(patch_sample) == 0:
        raise ConfigurationError("Patch sample is empty")
    rows = np.array([p[0] for p in patch_sample])
    cols = np.array([p[1] for p in patch_sample])
    picked = states[:, rows, cols]  # [n_f, S, 2^n]
    total = np.zeros(len(patch_sample))
    for l in range(n_filters):
        for k in range(l + 1, n_filters):
            total += fidelity_amplitudes(picked[l], picked[k])
    per_patch = total * pair_weight(n_filters)
    return float(np.mean(per_patch))
