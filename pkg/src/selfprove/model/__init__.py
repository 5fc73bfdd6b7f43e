"""Autoregressive model backends and checkpoints."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .base import (AutoregressiveModel, ContextTooLong, Generation, StopRule, WindowExhausted,
                   generate_batch, log_softmax, sample_autoregressive, softmax)
from .neural import TransformerModel
from .tabular import TabularModel

MAGIC = b"SPCKPT01"


def build_model(desc: dict) -> AutoregressiveModel:
    desc = dict(desc)
    backend = desc.pop("backend")
    if backend == "tabular":
        return TabularModel(desc["vocab_size"], desc["order"], desc.get("window", 1 << 30))
    if backend == "neural":
        return TransformerModel(**desc)
    raise ValueError(f"unknown backend {backend!r}")


def save_checkpoint(path, model: AutoregressiveModel, theta: np.ndarray, seed: int, extra: dict | None = None):
    """Header line (JSON: backend descriptor, d, seed) then theta as little-endian float64."""
    header = {"model": model.describe(), "d": int(theta.size), "seed": int(seed)}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    try:
        with open(path, "wb") as f:
            f.write(MAGIC + struct.pack("<Q", len(blob)) + blob)
            f.write(np.asarray(theta, dtype="<f8").tobytes())
    except OSError as e:
        raise OSError(f"cannot write checkpoint {path}: {e}") from e


def load_checkpoint(path):
    """Returns ``(model, theta, header)``."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read checkpoint {path}: {e}") from e
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n])
    theta = np.frombuffer(raw[16 + n:], dtype="<f8").astype(np.float64)
    if theta.size != header["d"]:
        raise ValueError(f"{path}: expected {header['d']} parameters, found {theta.size}")
    return build_model(header["model"]), theta, header


__all__ = ["AutoregressiveModel", "ContextTooLong", "Generation", "StopRule", "TabularModel",
           "TransformerModel", "WindowExhausted", "build_model", "generate_batch", "load_checkpoint",
           "log_softmax", "sample_autoregressive", "save_checkpoint", "softmax"]
