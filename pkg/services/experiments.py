"""
Experiment runs behind the CLI commands: single training runs, the lambda
sweep, the filter / qubit scalability comparison, feature-map export, the
gradient oracle suite and the gradient-variance measurement.
"""
import csv
import logging
import os
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from services import circuits
from services.checkpoint import load_checkpoint, save_checkpoint
from services.circuits import build_squanv_template, random_params
from services.config import ExperimentConfig, apply_overrides, normalise_key
from services.data import ImageDataset, downscale, load_idx, subset
from services.errors import ConfigurationError
from services.model import (
    DenseHead,
    GradMode,
    RFMode,
    backward,
    features,
    head_input_size,
    init_head,
    loss,
)
from services.quanv import FilterBank, Geometry, qcnn_kernel, sample_patches
from services.train import RunMetrics, TrainResult, rf_train

logger = logging.getLogger(__name__)

# Per-filter parameter count the single-filter baselines are sized against

# Keys that may still change after a checkpoint is written: where its data lives
DATA_KEYS = ("source", "data_dir", "train_images", "train_labels", "test_images", "test_labels")
PARAM_BUDGET = 48


def run_dir(output_dir: str, command: str, seed: int) -> str:
    """<output_dir>/<command>/<timestamp>-<seed>, created on demand"""
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = os.path.join(output_dir, command, f"{stamp}-{seed}")
    path = base
    suffix = 1
    while os.path.exists(path):
        path = f"{base}.{suffix}"
        suffix += 1
    os.makedirs(path)
    return path


def geometry_for(config: ExperimentConfig) -> Geometry:
    return Geometry(config.kernel_h, config.kernel_w, config.effective_stride, config.pool)


def prepare_data(config: ExperimentConfig) -> Tuple[ImageDataset, ImageDataset]:
    """Load both splits, downscale, and take the seeded per-class subsets"""
    config.validate_paths()
    paths = config.dataset_paths()
    train = load_idx(paths["train_images"], paths["train_labels"], "train", config.source)
    test = load_idx(paths["test_images"], paths["test_labels"], "test", config.source)
    train = subset(downscale(train, config.downscale), config.train_per_class, config.data_seed)
    test = subset(downscale(test, config.downscale), config.test_per_class, config.data_seed)
    return train, test


def build_model(config: ExperimentConfig, n_classes: int, image_shape: Tuple[int, int], seed: Optional[int] = None):
    """Fresh filter bank and head drawn from the run seed"""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    template = build_squanv_template(config.n_qubits, config.kernel_h, config.kernel_w, config.n_blocks)
    bank = FilterBank(template, random_params(template, rng, config.n_filters))
    size = head_input_size(config.n_filters, config.n_qubits, image_shape, geometry_for(config))
    return bank, init_head(n_classes, size, rng)


def train_run(config: ExperimentConfig, out_dir: str,
              data: Optional[Tuple[ImageDataset, ImageDataset]] = None) -> TrainResult:
    """One training run; writes config.json, metrics.csv and checkpoint.npz into out_dir"""
    config.validate()
    train, test = data if data is not None else prepare_data(config)
    os.makedirs(out_dir, exist_ok=True)
    config.save(os.path.join(out_dir, "config.json"))
    n_classes = max(train.n_classes, test.n_classes)
    bank, head = build_model(config, n_classes, train.image_shape)
    geometry = geometry_for(config)
    logger.info(
        f"Starting training: {config.n_filters} filters x {config.n_qubits} qubits, "
        f"{bank.template.n_params} params per filter, lambda {config.lambda_}, "
        f"{len(train)} train / {len(test)} test images, output {out_dir}"
    )
    result = rf_train(config, train, test, bank, head, geometry, threads=config.threads)
    result.metrics.write_csv(os.path.join(out_dir, "metrics.csv"))
    save_checkpoint(os.path.join(out_dir, "checkpoint.npz"), config.to_dict(), train.image_shape,
                    result.bank, result.head, result.optimizer, result.epoch)
    return result


def _write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _final(metrics: RunMetrics) -> Tuple[float, float]:
    return metrics.final.top1_test, metrics.final.feat_euclid_dist


def sweep_lambda(config: ExperimentConfig, lambdas: Sequence[float], seeds: Sequence[int], out_dir: str) -> List[Dict]:
    """One training run per (lambda, seed); runs.csv plus per-lambda means in aggregate.csv"""
    if not lambdas:
        raise ConfigurationError("Need at least one lambda")
    if not seeds:
        raise ConfigurationError("Need at least one seed")
    members = [config.replace(lambda_=float(lam), seed=int(seed)) for lam in lambdas for seed in seeds]
    for member in members:
        member.validate()
    data = prepare_data(config)
    rows = []
    for member in members:
        name = f"lambda-{member.lambda_}_seed-{member.seed}"
        result = train_run(member, os.path.join(out_dir, name), data)
        top1, dist = _final(result.metrics)
        rows.append({"lambda": member.lambda_, "seed": member.seed, "top1_test": top1, "feat_euclid_dist": dist})
    _write_rows(os.path.join(out_dir, "runs.csv"), ("lambda", "seed", "top1_test", "feat_euclid_dist"),
                [(r["lambda"], r["seed"], r["top1_test"], r["feat_euclid_dist"]) for r in rows])
    aggregate = []
    for lam in dict.fromkeys(float(x) for x in lambdas):
        group = [r for r in rows if r["lambda"] == lam]
        aggregate.append((lam, len(group),
                          float(np.mean([r["top1_test"] for r in group])),
                          float(np.mean([r["feat_euclid_dist"] for r in group]))))
    _write_rows(os.path.join(out_dir, "aggregate.csv"),
                ("lambda", "n_seeds", "top1_test_mean", "feat_euclid_dist_mean"), aggregate)
    logger.info(f"Lambda sweep finished: {len(rows)} runs in {out_dir}")
    return rows


def qcnn_blocks(n_qubits: int) -> int:
    return max(1, round(PARAM_BUDGET / (3 * n_qubits)))


def scalability_members(config: ExperimentConfig, filters: Sequence[int], qubits: Sequence[int],
                        seeds: Sequence[int], lambdas: Optional[Sequence[float]] = None) -> List[Tuple[str, ExperimentConfig]]:
    """Multi-filter runs at the config's qubit count, then single-filter runs with grown kernels"""
    if not seeds:
        raise ConfigurationError("Need at least one seed")
    if not filters and not qubits:
        raise ConfigurationError("Need at least one filter count or qubit count")
    lambdas = [config.lambda_] if not lambdas else list(lambdas)
    members = []
    for n_f in filters:
        for lam in lambdas:
            for seed in seeds:
                members.append(("sqcnn", config.replace(n_filters=int(n_f), lambda_=float(lam), seed=int(seed))))
    for n_q in qubits:
        kernel_h, kernel_w = qcnn_kernel(int(n_q))
        for seed in seeds:
            members.append(("qcnn", config.replace(
                n_filters=1, n_qubits=int(n_q), kernel_h=kernel_h, kernel_w=kernel_w, stride=kernel_w,
                n_blocks=qcnn_blocks(int(n_q)), lambda_=0.0, seed=int(seed),
            )))
    for _, member in members:
        member.validate()
    return members


def scalability(config: ExperimentConfig, filters: Sequence[int], qubits: Sequence[int], seeds: Sequence[int],
                out_dir: str, lambdas: Optional[Sequence[float]] = None) -> List[Dict]:
    members = scalability_members(config, filters, qubits, seeds, lambdas)
    data = prepare_data(config)
    rows = []
    for model, member in members:
        name = f"{model}_nf-{member.n_filters}_nq-{member.n_qubits}_lambda-{member.lambda_}_seed-{member.seed}"
        result = train_run(member, os.path.join(out_dir, name), data)
        rows.append({"model": model, "n_filters": member.n_filters, "n_qubits": member.n_qubits,
                     "lambda": member.lambda_, "seed": member.seed,
                     "top1_train": result.metrics.final.top1_train, "top1_test": result.metrics.final.top1_test})
    columns = ("model", "n_filters", "n_qubits", "lambda", "seed", "top1_train", "top1_test")
    _write_rows(os.path.join(out_dir, "runs.csv"), columns, [tuple(r[c] for c in columns) for r in rows])
    groups: Dict[Tuple, List[Dict]] = {}
    for r in rows:
        groups.setdefault((r["model"], r["n_filters"], r["n_qubits"], r["lambda"]), []).append(r)
    _write_rows(os.path.join(out_dir, "aggregate.csv"),
                ("model", "n_filters", "n_qubits", "lambda", "n_seeds", "top1_test_mean"),
                [key + (len(g), float(np.mean([r["top1_test"] for r in g]))) for key, g in groups.items()])
    logger.info(f"Scalability comparison finished: {len(rows)} runs in {out_dir}")
    return rows


def to_pgm_pixels(values: np.ndarray) -> np.ndarray:
    """Map [-1, 1] onto [0, 255]: -1 -> 0, 0 -> 128, +1 -> 255"""
    scaled = np.floor((np.clip(values, -1.0, 1.0) + 1.0) * 127.5 + 0.5)
    return scaled.astype(np.uint8)


def read_image(path: str, image_shape: Tuple[int, int]) -> np.ndarray:
    """Grayscale image file scaled to [0, 1] and average-pooled down to image_shape"""
    raw = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
    if raw is None:
        raise ConfigurationError(f"Cannot read image file: {path}")
    h, w = raw.shape
    th, tw = image_shape
    if h % th or w % tw or h // th != w // tw:
        raise ConfigurationError(f"Image {h}x{w} cannot be reduced to {th}x{tw}")
    factor = h // th
    return raw.astype(np.float64).reshape(th, factor, tw, factor).mean(axis=(1, 3)) / 255.0


def export_features(checkpoint_path: str, out_dir: str, index: Optional[int] = None,
                    image_path: Optional[str] = None, untrained: bool = False,
                    data_overrides: Optional[Dict[str, Any]] = None, threads: Optional[int] = None) -> List[str]:
    """
    Write one binary PGM per feature channel, named feat_f{l}_q{q}.pgm.

    The model geometry comes from the checkpoint's config echo; data_overrides
    may only relocate the dataset (DATA_KEYS).
    """
    ckpt = load_checkpoint(checkpoint_path)
    config = ExperimentConfig.from_dict(ckpt.config)
    if data_overrides:
        rejected = sorted(k for k in data_overrides if normalise_key(k) not in DATA_KEYS)
        if rejected:
            raise ConfigurationError(f"Only dataset locations can override a checkpoint, got {', '.join(rejected)}")
        apply_overrides(config, data_overrides)
        logger.info(f"Dataset location overridden for {checkpoint_path}: {data_overrides}")
    if image_path:
        image = read_image(image_path, ckpt.image_shape)
    elif index is not None:
        _, test = prepare_data(config)
        if not 0 <= index < len(test):
            raise ConfigurationError(f"Image index {index} out of range for {len(test)} test images")
        image = test.images[index]
    else:
        raise ConfigurationError("Need an image index or an image path")

    template = build_squanv_template(config.n_qubits, config.kernel_h, config.kernel_w, config.n_blocks)
    if untrained:
        bank, _ = build_model(config, ckpt.head.n_classes, ckpt.image_shape)
    else:
        bank = FilterBank(template, ckpt.filter_params)
    tensor, _ = features(bank, image, geometry_for(config), threads=threads)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for l in range(bank.n_filters):
        for q in range(bank.n_qubits):
            path = os.path.join(out_dir, f"feat_f{l}_q{q}.pgm")
            if not cv2.imwrite(path, to_pgm_pixels(tensor.values[l * bank.n_qubits + q])):
                raise ConfigurationError(f"Could not write {path}")
            written.append(path)
    logger.info(f"Wrote {len(written)} feature maps to {out_dir}")
    return written


@dataclass(frozen=True)
class CheckResult:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(self.deviation < self.tolerance)


def _central_difference(f, x: np.ndarray, j: int, h: float) -> float:
    up = x.copy()
    down = x.copy()
    up.flat[j] += h
    down.flat[j] -= h
    return (f(up) - f(down)) / (2 * h)


def gradcheck(config: ExperimentConfig, draws: int = 20, h: float = 1e-5) -> List[CheckResult]:
    """Shift rule vs finite differences, adjoint vs shift rule, and the end-to-end model gradient"""
    rng = np.random.default_rng(config.seed)
    template = build_squanv_template(config.n_qubits, config.kernel_h, config.kernel_w, config.n_blocks)
    shift_fd = adjoint_shift = fid_fd = 0.0
    for _ in range(draws):
        params = random_params(template, rng)
        other = random_params(template, rng)
        patch = rng.uniform(0.0, 1.0, size=template.data_arity)
        shift = circuits.grad_expectation_paramshift(template, params, patch)
        adjoint = circuits.grad_expectation_adjoint(template, params, patch)
        adjoint_shift = max(adjoint_shift, float(np.max(np.abs(adjoint - shift))))
        j = int(rng.integers(template.n_params))
        fd = _central_difference(lambda p: circuits.evaluate(template, p, patch)[0], params, j, h)
        shift_fd = max(shift_fd, float(np.max(np.abs(shift[j] - fd))))
        grad_a, grad_b = circuits.grad_fidelity_paramshift(template, params, other, patch)
        fd_a = _central_difference(lambda p: circuits.fidelity(template, p, other, patch), params, j, h)
        fd_b = _central_difference(lambda p: circuits.fidelity(template, params, p, patch), other, j, h)
        fid_fd = max(fid_fd, abs(grad_a[j] - fd_a), abs(grad_b[j] - fd_b))

    results = [
        CheckResult("expectation: parameter-shift vs finite difference", shift_fd, 1e-6),
        CheckResult("fidelity: parameter-shift vs finite difference", float(fid_fd), 1e-6),
        CheckResult("expectation: adjoint vs parameter-shift", adjoint_shift, 1e-9),
    ]
    results.extend(end_to_end_check(config, rng, h))
    return results


def end_to_end_check(config: ExperimentConfig, rng: np.random.Generator, h: float = 1e-5,
                     size: int = 6, n_filters: int = 2, coordinates: int = 10) -> List[CheckResult]:
    """Full-model gradient on a small random image against central differences"""
    lam = config.lambda_ if config.lambda_ > 0 else 0.5
    geometry = geometry_for(config)
    template = build_squanv_template(config.n_qubits, config.kernel_h, config.kernel_w, config.n_blocks)
    bank = FilterBank(template, random_params(template, rng, n_filters))
    n_classes = 3
    head = init_head(n_classes, head_input_size(n_filters, config.n_qubits, (size, size), geometry), rng)
    image = rng.uniform(0.0, 1.0, size=(size, size))
    label = int(rng.integers(n_classes))
    oh, ow = geometry.output_shape(size, size)
    sample = sample_patches(oh, ow, config.rf_patch_samples, rng)
    rf_mode = RFMode(config.rf_mode)

    def total(filters=bank.params, weights=head.weights):
        return loss(bank.with_params(filters), DenseHead(weights, head.bias), image, label, lam, rf_mode,
                    geometry, sample).total

    results = []
    for mode in GradMode:
        grads, _ = backward(bank, head, image, label, lam, rf_mode, mode, geometry, sample)
        worst = 0.0
        for j in rng.choice(bank.params.size, size=min(coordinates, bank.params.size), replace=False):
            fd = _central_difference(lambda p: total(filters=p), bank.params, int(j), h)
            worst = max(worst, abs(grads.filters.flat[j] - fd))
        for j in rng.choice(head.weights.size, size=min(coordinates, head.weights.size), replace=False):
            fd = _central_difference(lambda w: total(weights=w), head.weights, int(j), h)
            worst = max(worst, abs(grads.head_weights.flat[j] - fd))
        results.append(CheckResult(f"model ({mode.value}): backward vs finite difference", float(worst), 1e-5))
    return results


def grad_variance(qubits: Sequence[int], samples: int, seed: int, out_dir: str) -> List[Tuple[int, int, float, float]]:
    """
    Spread of d<Z_0>/d theta_0 over random initialisations, per qubit count.

    Uses the single-filter baseline template for each qubit count; the shrinking
    variance as qubits grow is the vanishing-gradient trend.
    """
    if not qubits or samples < 2:
        raise ConfigurationError("Need at least one qubit count and two samples")
    rng = np.random.default_rng(seed)
    rows = []
    for n_q in qubits:
        kernel_h, kernel_w = qcnn_kernel(int(n_q))
        template = build_squanv_template(int(n_q), kernel_h, kernel_w, qcnn_blocks(int(n_q)))
        cotangent = np.zeros((1, template.n_qubits))
        cotangent[0, 0] = 1.0
        values = np.array([
            circuits.vjp_adjoint(template, random_params(template, rng), rng.uniform(0.0, 1.0, size=(1, template.data_arity)), cotangent)[0]
            for _ in range(samples)
        ])
        rows.append((int(n_q), template.n_params, float(values.mean()), float(values.var(ddof=1))))
        logger.info(f"{n_q} qubits: gradient variance {rows[-1][3]:.3e} over {samples} samples")
    _write_rows(os.path.join(out_dir, "grad_variance.csv"),
                ("n_qubits", "n_params", "grad_mean", "grad_variance"), rows)
    return rows
