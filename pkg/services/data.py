"""
MNIST / Fashion-MNIST ingestion from IDX files.

IDX layout (big endian):
  i32      magic (0x00000803 images, 0x00000801 labels)
  i32      item count
  i32 x 2  rows, columns (images only)
  u8[]     pixels row-wise, or one label per item
Files may be gzip-compressed; compression is detected from the first two bytes.
"""
import gzip
import logging
import os
import struct
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from services.errors import ConfigurationError, IngestionError

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
GZIP_MAGIC = b"\x1f\x8b"

SOURCES = ("mnist", "fmnist")

# Standard distribution file names, resolved under <data_dir>/<source>/
SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class ImageDataset:
    images: np.ndarray  # [N, H, W] in [0, 1]
    labels: np.ndarray  # [N]
    split: str = "train"
    source: str = "mnist"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ConfigurationError(f"{len(self.images)} images but {len(self.labels)} labels")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_shape(self) -> Tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def _read_bytes(path: str) -> bytes:
    if not os.path.exists(path):
        raise ConfigurationError(f"Dataset file not found: {path}")
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:2] == GZIP_MAGIC:
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as e:
            raise IngestionError(f"{path}: corrupt gzip stream: {e}") from e
    return raw


def _header(raw: bytes, path: str, magic: int, dims: int) -> Tuple[int, ...]:
    size = 4 * (1 + dims)
    if len(raw) < size:
        raise IngestionError(f"{path}: truncated header, expected {size} bytes, got {len(raw)}")
    found, *shape = struct.unpack(f">{1 + dims}I", raw[:size])
    if found != magic:
        raise IngestionError(f"{path}: magic number mismatch at offset 0, expected {magic:#010x}, got {found:#010x}")
    return tuple(shape)


def _payload(raw: bytes, path: str, offset: int, expected: int) -> np.ndarray:
    actual = len(raw) - offset
    if actual < expected:
        raise IngestionError(
            f"{path}: truncated payload at offset {offset}, expected {expected} bytes, got {actual}"
        )
    return np.frombuffer(raw, dtype=np.uint8, count=expected, offset=offset)


def load_idx(images_path: str, labels_path: str, split: str = "train", source: str = "mnist") -> ImageDataset:
    """Read an image/label IDX pair, pixels scaled to [0, 1]"""
    raw_images = _read_bytes(images_path)
    count, rows, cols = _header(raw_images, images_path, IMAGE_MAGIC, 3)
    pixels = _payload(raw_images, images_path, 16, count * rows * cols)

    raw_labels = _read_bytes(labels_path)
    (label_count,) = _header(raw_labels, labels_path, LABEL_MAGIC, 1)
    labels = _payload(raw_labels, labels_path, 8, label_count)

    if count != label_count:
        raise IngestionError(f"{images_path} holds {count} images but {labels_path} holds {label_count} labels")

    images = pixels.reshape(count, rows, cols).astype(np.float64) / 255.0
    logger.info(f"Loaded {count} {source} {split} images of {rows}x{cols} from {images_path}")
    return ImageDataset(images=images, labels=labels.astype(np.int64), split=split, source=source)


def split_paths(data_dir: str, source: str, split: str) -> Tuple[str, str]:
    """Standard file names for a split, preferring an uncompressed copy over .gz"""
    if source not in SOURCES:
        raise ConfigurationError(f"Unknown dataset source {source!r}, expected one of {SOURCES}")
    paths = []
    for name in SPLIT_FILES[split]:
        path = os.path.join(data_dir, source, name)
        if not os.path.exists(path) and os.path.exists(path + ".gz"):
            path += ".gz"
        paths.append(path)
    return paths[0], paths[1]


def downscale(dataset: ImageDataset, factor: int) -> ImageDataset:
    """Non-overlapping factor x factor average pooling"""
    if factor == 1:
        return dataset
    n, h, w = dataset.images.shape
    if factor < 1 or h % factor or w % factor:
        raise ConfigurationError(f"Downscale factor {factor} does not divide {h}x{w}")
    pooled = dataset.images.reshape(n, h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return replace(dataset, images=pooled)


def subset(dataset: ImageDataset, per_class: int, seed: int) -> ImageDataset:
    """First per_class examples of every class after a seeded shuffle"""
    if per_class < 1:
        raise ConfigurationError(f"per_class must be positive, got {per_class}")
    order = np.random.default_rng(seed).permutation(len(dataset))
    classes = np.unique(dataset.labels)
    counts = {int(c): 0 for c in classes}
    picked = []
    for i in order:
        c = int(dataset.labels[i])
        if counts[c] < per_class:
            counts[c] += 1
            picked.append(i)
    short = {c: n for c, n in counts.items() if n < per_class}
    if short:
        raise ConfigurationError(f"Not enough examples for {per_class} per class: {short}")
    picked = np.array(picked, dtype=np.int64)
    return replace(dataset, images=dataset.images[picked], labels=dataset.labels[picked])
