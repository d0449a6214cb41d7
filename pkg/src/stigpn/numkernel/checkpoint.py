"""JSON checkpoint files: named arrays plus free-form metadata.

Floats are written with ``repr`` precision, so a save/load round trip is
exact in double precision.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np

FORMAT = "stigpn-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> str:
    body = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "tensors": {
            name: {"shape": list(arr.shape), "values": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in tensors.items()
        },
    }
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def loads(text: str) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    body = json.loads(text)
    if body.get("format") != FORMAT:
        raise CheckpointError(f"not a checkpoint file (format={body.get('format')!r})")
    if body.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {body.get('version')!r}")
    tensors = {}
    for name, entry in body["tensors"].items():
        shape = tuple(entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise CheckpointError(f"{name}: {values.size} values for shape {shape}")
        tensors[name] = values.reshape(shape)
    return tensors, body.get("meta", {})


def save(path: str | Path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    Path(path).write_text(dumps(tensors, meta))


def load(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return loads(Path(path).read_text())
