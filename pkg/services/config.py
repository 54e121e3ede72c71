"""
Run configuration.

A config is a flat JSON object; every key can be overridden with a
`--key value` flag and flags win. The JSON key for the regulariser weight is
`lambda` (field `lambda_`).
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, Optional

import app
from services.data import split_paths
from services.errors import ConfigurationError
from services.model import GradMode, RFMode

logger = logging.getLogger(__name__)

KEY_ALIASES = {"lambda": "lambda_"}


@dataclass
class TrainConfig:
    epochs: int = 15
    minibatch_size: int = 16
    learning_rate: float = 1e-4
    lambda_: float = 0.5
    rf_mode: str = RFMode.DIVERSITY.value
    grad_mode: str = GradMode.ADJOINT.value
    rf_patch_samples: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.minibatch_size < 1:
            raise ConfigurationError(f"minibatch_size must be >= 1, got {self.minibatch_size}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.lambda_ >= 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lambda_}")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1 or not self.epsilon > 0:
            raise ConfigurationError(f"Invalid Adam constants {self.beta1}, {self.beta2}, {self.epsilon}")
        try:
            RFMode(self.rf_mode)
            GradMode(self.grad_mode)
        except ValueError as e:
            raise ConfigurationError(str(e)) from e


@dataclass
class ExperimentConfig(TrainConfig):
    source: str = "mnist"
    data_dir: str = app.DATA_DIR
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    n_filters: int = 2
    n_qubits: int = 4
    kernel_h: int = 2
    kernel_w: int = 2
    stride: int = 0  # 0 = kernel width
    n_blocks: int = 4
    pool: bool = False
    downscale: int = 2
    train_per_class: int = 30
    test_per_class: int = 20
    data_seed: int = 0
    output_dir: str = app.OUTPUT_DIR
    threads: int = app.THREADS

    @property
    def effective_stride(self) -> int:
        return self.stride if self.stride > 0 else self.kernel_w

    def validate(self) -> None:
        super().validate()
        if self.n_filters < 1:
            raise ConfigurationError(f"n_filters must be >= 1, got {self.n_filters}")
        if self.lambda_ > 0 and self.n_filters < 2:
            raise ConfigurationError(f"lambda = {self.lambda_} needs n_filters >= 2, got {self.n_filters}")
        if self.n_qubits < 2:
            raise ConfigurationError(f"n_qubits must be >= 2, got {self.n_qubits}")
        if self.kernel_h < 1 or self.kernel_w < 1 or self.n_blocks < 1 or self.downscale < 1:
            raise ConfigurationError("kernel dims, n_blocks and downscale must be positive")
        if self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigurationError("per-class counts must be positive")

    def dataset_paths(self) -> Dict[str, str]:
        train_images, train_labels = split_paths(self.data_dir, self.source, "train")
        test_images, test_labels = split_paths(self.data_dir, self.source, "test")
        return {
            "train_images": self.train_images or train_images,
            "train_labels": self.train_labels or train_labels,
            "test_images": self.test_images or test_images,
            "test_labels": self.test_labels or test_labels,
        }

    def validate_paths(self) -> None:
        for key, path in self.dataset_paths().items():
            if not os.path.exists(path):
                raise ConfigurationError(f"Dataset file for {key} not found: {path}")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["lambda"] = data.pop("lambda_")
        return data

    def replace(self, **changes) -> "ExperimentConfig":
        data = asdict(self)
        data.update(changes)
        return ExperimentConfig(**data)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        config = cls()
        apply_overrides(config, data)
        return config

    @classmethod
    def from_sources(cls, json_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> "ExperimentConfig":
        """Defaults, then the JSON file, then flag overrides"""
        config = cls()
        if json_path:
            if not os.path.exists(json_path):
                raise ConfigurationError(f"Config file not found: {json_path}")
            with open(json_path) as f:
                try:
                    data = json.load(f)
                except json.JSONDecodeError as e:
                    raise ConfigurationError(f"{json_path}: invalid JSON: {e}") from e
            if not isinstance(data, dict):
                raise ConfigurationError(f"{json_path}: expected a flat JSON object")
            apply_overrides(config, data)
        if overrides:
            apply_overrides(config, overrides)
        config.validate()
        return config

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def _coerce(value: Any, kind: Any, key: str) -> Any:
    if value is None:
        return None
    try:
        if kind is bool:
            if isinstance(value, str):
                lowered = value.strip().lower()
                if lowered in ("1", "true", "yes", "on"):
                    return True
                if lowered in ("0", "false", "no", "off"):
                    return False
                raise ValueError(value)
            return bool(value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if kind is float:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid value {value!r} for {key}") from e


def normalise_key(raw_key: str) -> str:
    """Flag or JSON key to field name: dashes become underscores, aliases resolve"""
    key = raw_key.replace("-", "_")
    return KEY_ALIASES.get(key, key)


def apply_overrides(config: TrainConfig, values: Dict[str, Any]) -> None:
    known = {f.name: f for f in fields(config)}
    for raw_key, value in values.items():
        key = normalise_key(raw_key)
        if key not in known:
            raise ConfigurationError(f"Unknown config key {raw_key!r}")
        kind = known[key].type
        if kind == Optional[str]:
            kind = str
        setattr(config, key, _coerce(value, kind, raw_key))
