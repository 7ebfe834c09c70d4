"""Atomic file writes and the model checkpoint format."""

from __future__ import annotations

import base64
import contextlib
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .loss import RfibConfig
from .model import ModelParams

CHECKPOINT_FORMAT = "rfib-ckpt-v1"


@contextlib.contextmanager
def atomic_open(path, mode="w", **kwargs):
    """Write to a temp file next to ``path`` and rename it into place on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    with atomic_open(path) as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_checkpoint(path, params: ModelParams, cfg: RfibConfig):
    raw = params.flat.astype("<f8").tobytes()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(cfg),
        "p": params.p,
        "d": params.d,
        "slices": [
            {"name": name, "offset": offset, "shape": list(shape)}
            for name, (offset, shape) in params.slices.items()
        ],
        "params": base64.b64encode(raw).decode("ascii"),
    }
    write_json(path, doc)


def load_checkpoint(path) -> tuple[ModelParams, RfibConfig]:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an {CHECKPOINT_FORMAT} checkpoint")
    try:
        cfg = RfibConfig(**doc["config"])
        flat = np.frombuffer(base64.b64decode(doc["params"]), dtype="<f8").astype(np.float64)
        params = ModelParams(doc["p"], doc["d"], flat)
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
    expected = {s["name"]: (s["offset"], tuple(s["shape"])) for s in doc.get("slices", [])}
    if expected != params.slices:
        raise CheckpointError(f"{path}: slice table does not match the model layout")
    return params, cfg
