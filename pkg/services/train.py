"""
Reverse-fidelity training: seeded minibatch loop with Adam updates, per-epoch
accuracy and inter-filter feature distance.
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from services.config import TrainConfig
from services.data import ImageDataset
from services.errors import ConfigurationError, DivergenceError
from services.model import DenseHead, GradMode, LossBreakdown, RFMode, backward, features, predict
from services.quanv import FilterBank, Geometry, sample_patches
from services.workers import parallel_map

logger = logging.getLogger(__name__)

METRICS_COLUMNS = ("epoch", "loss_ce", "loss_rf", "loss_total", "top1_train", "top1_test", "feat_euclid_dist")


def adam_step(params: np.ndarray, grads: np.ndarray, m: np.ndarray, v: np.ndarray, lr: float,
              beta1: float, beta2: float, epsilon: float, t: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bias-corrected Adam update; returns new (params, m, v)"""
    if t < 1:
        raise ConfigurationError(f"Adam step counter starts at 1, got {t}")
    m = beta1 * m + (1.0 - beta1) * grads
    v = beta2 * v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return params - lr * m_hat / (np.sqrt(v_hat) + epsilon), m, v


class Adam:
    """Adam over named parameter groups"""

    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        # first and second moment estimates
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
        self.t += 1
        updated = {}
        for k in params:
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            updated[k], self.m[k], self.v[k] = adam_step(
                params[k], grads[k], self.m[k], self.v[k], self.lr, self.beta1, self.beta2, self.epsilon, self.t
            )
        return updated


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss_ce: float
    loss_rf: float
    loss_total: float
    top1_train: float
    top1_test: float
    feat_euclid_dist: float


@dataclass
class RunMetrics:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch <= self.records[-1].epoch:
            raise ConfigurationError(f"Epoch {record.epoch} recorded after epoch {self.records[-1].epoch}")
        self.records.append(record)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(METRICS_COLUMNS)
            for r in self.records:
                writer.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in METRICS_COLUMNS[1:]])


@dataclass
class TrainResult:
    bank: FilterBank
    head: DenseHead
    metrics: RunMetrics
    optimizer: Adam
    epoch: int


def top1_accuracy(bank: FilterBank, head: DenseHead, dataset: ImageDataset, geometry: Geometry,
                  threads: Optional[int] = None) -> float:
    """Percentage of argmax-correct predictions; ties go to the lowest class index"""
    if len(dataset) == 0:
        raise ConfigurationError("Cannot score an empty split")
    probs = parallel_map(lambda image: predict(bank, head, image, geometry, threads=1), dataset.images, threads)
    correct = sum(int(np.argmax(p) == y) for p, y in zip(probs, dataset.labels))
    return 100.0 * correct / len(dataset)


def _pairwise_distance(blocks: np.ndarray) -> float:
    n_filters = blocks.shape[0]
    flat = blocks.reshape(n_filters, -1)
    scale = math.sqrt(flat.shape[1])
    total = 0.0
    pairs = 0
    for l in range(n_filters):
        for k in range(l + 1, n_filters):
            total += float(np.linalg.norm(flat[l] - flat[k])) / scale
            pairs += 1
    return total / pairs


def feature_euclid_distance(bank: FilterBank, dataset: ImageDataset, geometry: Geometry,
                            threads: Optional[int] = None) -> float:
    """Split mean of the pair-mean normalised distance between filters' feature blocks"""
    if bank.n_filters < 2:
        raise ConfigurationError("Feature distance needs at least two filters")
    if len(dataset) == 0:
        raise ConfigurationError("Cannot measure an empty split")

    def per_image(image):
        tensor, _ = features(bank, image, geometry, threads=1)
        return _pairwise_distance(tensor.values.reshape(bank.n_filters, bank.n_qubits, -1))

    distances = parallel_map(per_image, dataset.images, threads)
    return float(np.mean(distances))


def rf_train(config: TrainConfig, train_set: ImageDataset, test_set: ImageDataset, bank: FilterBank,
             head: DenseHead, geometry: Geometry, threads: Optional[int] = None,
             optimizer: Optional[Adam] = None, start_epoch: int = 0,
             on_epoch: Optional[Callable[[TrainResult], None]] = None) -> TrainResult:
    """
    Minibatch training of filters and head on ce + lambda * rf.

    Shuffling and fidelity patch sampling draw from generators seeded by
    (seed, epoch), so a run is reproducible and resumable. Each minibatch is
    evaluated in parallel, reduced in index order, then applied in one Adam step.
    """
    config.validate()
    if len(train_set) == 0:
        raise ConfigurationError("Training split is empty")
    rf_mode = RFMode(config.rf_mode)
    grad_mode = GradMode(config.grad_mode)
    lam = config.lambda_
    if optimizer is None:
        optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.epsilon)
    h, w = geometry.output_shape(*train_set.image_shape)
    metrics = RunMetrics()
    result = TrainResult(bank, head, metrics, optimizer, start_epoch)

    for epoch in range(start_epoch + 1, start_epoch + config.epochs + 1):
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(train_set))
        sums = np.zeros(3)
        for start in range(0, len(order), config.minibatch_size):
            batch = order[start:start + config.minibatch_size]
            samples = [sample_patches(h, w, config.rf_patch_samples, rng) if lam > 0 else () for _ in batch]

            def run(k: int):
                i = batch[k]
                return backward(bank, head, train_set.images[i], int(train_set.labels[i]), lam, rf_mode,
                                grad_mode, geometry, samples[k])

            outputs = parallel_map(run, range(len(batch)), threads)
            grads = {"filters": np.zeros_like(bank.params),
                     "head_weights": np.zeros_like(head.weights),
                     "head_bias": np.zeros_like(head.bias)}
            ce = rf = 0.0
            for g, breakdown in outputs:
                for key, value in g.as_dict().items():
                    grads[key] += value
                ce += breakdown.ce
                rf += breakdown.rf
            n = len(batch)
            step_loss = LossBreakdown(ce / n, rf / n, ce / n + lam * (rf / n), lam)
            if not math.isfinite(step_loss.total):
                raise DivergenceError(f"Loss became {step_loss.total} at epoch {epoch}, step {start // config.minibatch_size + 1}")
            sums += np.array([step_loss.ce, step_loss.rf, step_loss.total]) * n
            logger.debug(f"Epoch {epoch} step {start // config.minibatch_size + 1}: total {step_loss.total:.6f}")

            params = {"filters": bank.params, "head_weights": head.weights, "head_bias": head.bias}
            updated = optimizer.step(params, {k: v / n for k, v in grads.items()})
            if not all(np.all(np.isfinite(v)) for v in updated.values()):
                raise DivergenceError(f"Parameters became non-finite at epoch {epoch}")
            bank = bank.with_params(updated["filters"])
            head = DenseHead(updated["head_weights"], updated["head_bias"])

        loss_ce, loss_rf, loss_total = sums / len(train_set)
        top1_train = top1_accuracy(bank, head, train_set, geometry, threads)
        top1_test = top1_accuracy(bank, head, test_set, geometry, threads) if len(test_set) else float("nan")
        dist = feature_euclid_distance(bank, test_set, geometry, threads) if bank.n_filters > 1 and len(test_set) else float("nan")
        metrics.append(EpochRecord(epoch, float(loss_ce), float(loss_rf), float(loss_total), top1_train, top1_test, dist))
        logger.info(
            f"Epoch {epoch} completed: loss {loss_total:.4f} (ce {loss_ce:.4f}, rf {loss_rf:.4f}), "
            f"train {top1_train:.1f}%, test {top1_test:.1f}%, distance {dist:.4f}"
        )
        result = TrainResult(bank, head, metrics, optimizer, epoch)
        if on_epoch is not None:
            on_epoch(result)

    return result
