"""Flat-array checkpoint store shared by every trainable component.

A checkpoint is a directory holding ``manifest.json`` plus one raw binary
file per named array. Arrays are written as little-endian float32, row-major,
no header; the manifest records name, file, and shape, together with the
hyperparameters and period index of whatever produced the checkpoint.

Vector tables (one row per item, e.g. collaborative embeddings) use the same
idea in single-file form: ``<prefix>.json`` listing the item ids in row order
and ``<prefix>.f32`` with the matrix.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.json"
_FORMAT = "dact-arrays-v1"


def _array_filename(name: str) -> str:
    # parameter names contain dots; keep them, they are legal in filenames
    return name.replace("/", "_") + ".f32"


def save_arrays(
    directory: str | Path,
    arrays: dict[str, np.ndarray],
    hyperparameters: dict | None = None,
    period_index: int | None = None,
) -> Path:
    """Write ``arrays`` to ``directory`` and return the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        fname = _array_filename(name)
        arr.tofile(directory / fname)
        entries[name] = {"file": fname, "shape": list(arr.shape), "dtype": "<f4"}
    manifest = {
        "format": _FORMAT,
        "period_index": period_index,
        "hyperparameters": hyperparameters or {},
        "arrays": entries,
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_arrays(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint directory back into (arrays, manifest)."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    if manifest.get("format") != _FORMAT:
        raise ValueError(f"unrecognized checkpoint format in {directory}")
    arrays = {}
    for name, entry in manifest["arrays"].items():
        raw = np.fromfile(directory / entry["file"], dtype="<f4")
        arrays[name] = raw.reshape(entry["shape"])
    return arrays, manifest


def save_vector_table(prefix: str | Path, ids: list[int], matrix: np.ndarray) -> None:
    """Write an (ids, matrix) table as ``<prefix>.json`` + ``<prefix>.f32``."""
    prefix = Path(prefix)
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise ValueError("matrix must be 2-D with one row per id")
    prefix.parent.mkdir(parents=True, exist_ok=True)
    meta = {"format": _FORMAT, "ids": [int(i) for i in ids], "dim": int(matrix.shape[1])}
    Path(str(prefix) + ".json").write_text(
        json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8"
    )
    matrix.tofile(str(prefix) + ".f32")


def load_vector_table(prefix: str | Path) -> tuple[list[int], np.ndarray]:
    meta = json.loads(Path(str(prefix) + ".json").read_text(encoding="utf-8"))
    ids = [int(i) for i in meta["ids"]]
    raw = np.fromfile(str(prefix) + ".f32", dtype="<f4")
    return ids, raw.reshape(len(ids), meta["dim"])
