"""
Checkpoint record, stored as a numpy .npz archive.

Format version 1 keys:
  format_version  int
  config_json     JSON echo of the run configuration
  image_shape     [2] input height, width the head was sized for
  filter_params   [n_f, n_params]
  head_weights    [C, D]
  head_bias       [C]
  adam_t          int, Adam step counter
  adam_m_<group>, adam_v_<group>   Adam moments per parameter group
  epoch           int, last completed epoch
Readers accept any file with the same major version.
"""
import json
import logging
import os
import zipfile
from dataclasses import dataclass
from typing import Any, Dict, Tuple

import numpy as np

from services.errors import CheckpointError
from services.model import DenseHead
from services.quanv import FilterBank
from services.train import Adam

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
GROUPS = ("filters", "head_weights", "head_bias")


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    image_shape: Tuple[int, int]
    filter_params: np.ndarray
    head: DenseHead
    optimizer: Adam
    epoch: int


def save_checkpoint(path: str, config: Dict[str, Any], image_shape: Tuple[int, int], bank: FilterBank,
                    head: DenseHead, optimizer: Adam, epoch: int) -> None:
    arrays = {
        "format_version": np.array(FORMAT_VERSION),
        "config_json": np.array(json.dumps(config, sort_keys=True)),
        "image_shape": np.array(image_shape, dtype=np.int64),
        "filter_params": bank.params,
        "head_weights": head.weights,
        "head_bias": head.bias,
        "adam_t": np.array(optimizer.t),
        "epoch": np.array(epoch),
    }
    for group in GROUPS:
        if group in optimizer.m:
            arrays[f"adam_m_{group}"] = optimizer.m[group]
            arrays[f"adam_v_{group}"] = optimizer.v[group]
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info(f"Saved checkpoint to {path} (epoch {epoch})")


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise CheckpointError(f"Checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint format version {version}")
            config = json.loads(str(data["config_json"]))
            optimizer = Adam(
                float(config.get("learning_rate", 1e-4)),
                float(config.get("beta1", 0.9)),
                float(config.get("beta2", 0.999)),
                float(config.get("epsilon", 1e-8)),
            )
            optimizer.t = int(data["adam_t"])
            for group in GROUPS:
                if f"adam_m_{group}" in data:
                    optimizer.m[group] = data[f"adam_m_{group}"].copy()
                    optimizer.v[group] = data[f"adam_v_{group}"].copy()
            shape = data["image_shape"]
            return Checkpoint(
                config=config,
                image_shape=(int(shape[0]), int(shape[1])),
                filter_params=data["filter_params"].copy(),
                head=DenseHead(data["head_weights"].copy(), data["head_bias"].copy()),
                optimizer=optimizer,
                epoch=int(data["epoch"]),
            )
    except CheckpointError:
        raise
    except (KeyError, ValueError, OSError, zipfile.BadZipFile, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt checkpoint: {e}") from e
