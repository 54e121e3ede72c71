# tests/conftest.py
import gzip
import os
import struct
from pathlib import Path

import numpy as np
import pytest

from services.circuits import build_squanv_template
from services.config import ExperimentConfig
from services.data import ImageDataset


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray, compress: bool = False):
    """Write an image/label pair in IDX format"""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    image_bytes = struct.pack(">4I", 0x00000803, n, rows, cols) + images.tobytes()
    label_bytes = struct.pack(">2I", 0x00000801, len(labels)) + labels.tobytes()
    opener = gzip.compress if compress else (lambda b: b)
    Path(images_path).write_bytes(opener(image_bytes))
    Path(labels_path).write_bytes(opener(label_bytes))


def class_images(labels, size: int, rng: np.random.Generator) -> np.ndarray:
    """Each class lights up a different band of rows, plus a little noise"""
    images = rng.integers(0, 40, size=(len(labels), size, size))
    for k, label in enumerate(labels):
        band = (int(label) * 2) % size
        images[k, band:band + 2, :] = 230
    return images.astype(np.uint8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_template():
    return build_squanv_template(4, 2, 2, 1)


@pytest.fixture
def dataset_dir(tmp_path):
    """Synthetic MNIST-layout directory: 8x8 images, two classes"""
    rng = np.random.default_rng(7)
    root = tmp_path / "data"
    mnist = root / "mnist"
    mnist.mkdir(parents=True)
    train_labels = np.array([0, 1] * 8)
    test_labels = np.array([0, 1] * 4)
    write_idx(mnist / "train-images-idx3-ubyte", mnist / "train-labels-idx1-ubyte",
              class_images(train_labels, 8, rng), train_labels)
    write_idx(mnist / "t10k-images-idx3-ubyte.gz", mnist / "t10k-labels-idx1-ubyte.gz",
              class_images(test_labels, 8, rng), test_labels, compress=True)
    return root


@pytest.fixture
def tiny_config(dataset_dir, tmp_path):
    return ExperimentConfig.from_sources(overrides={
        "data_dir": str(dataset_dir),
        "output_dir": str(tmp_path / "runs"),
        "epochs": 2,
        "minibatch_size": 4,
        "learning_rate": 0.05,
        "lambda": 0.5,
        "n_blocks": 1,
        "train_per_class": 4,
        "test_per_class": 2,
        "rf_patch_samples": 2,
        "threads": 1,
    })


@pytest.fixture
def toy_dataset():
    """Two classes of constant 4x4 images, 20 of each"""
    images = np.concatenate([np.full((20, 4, 4), 0.1), np.full((20, 4, 4), 0.9)])
    labels = np.array([0] * 20 + [1] * 20)
    return ImageDataset(images=images, labels=labels, split="train", source="toy")


@pytest.fixture(autouse=True)
def single_thread_default(monkeypatch):
    # Tests that exercise threading pass an explicit worker count
    monkeypatch.setenv("SQUANV_THREADS", os.getenv("SQUANV_TEST_THREADS", "1"))
