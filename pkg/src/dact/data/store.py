"""On-disk dataset layout.

A dataset directory holds the full event stream as one TSV, a JSON manifest
with provenance and optional drift labels, and (when available) the item
embedding table. Periods are rebuilt from the stream on load, so the split
logic has a single home.
"""

from __future__ import annotations

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..arrays import load_vector_table, save_vector_table
from .events import DriftSpec, InteractionEvent, PeriodDataset, build_periods

_MANIFEST = "dataset.json"
_EVENTS = "events.tsv"
_EMBED_PREFIX = "embeddings"
_FORMAT = "dact-dataset-v1"


def save_dataset(
    directory: str | Path,
    periods: list[PeriodDataset],
    labels: dict[int, bool] | None = None,
    embeddings: dict[int, np.ndarray] | None = None,
    spec: DriftSpec | None = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    events = [ev for p in periods for ev in p.events]
    with (directory / _EVENTS).open("w") as fh:
        for ev in events:
            fh.write(f"{ev.user_id}\t{ev.item_id}\t{ev.timestamp}\n")

    manifest = {
        "format": _FORMAT,
        "n_periods": len(periods),
        "n_events": len(events),
        "drift_labels": {str(k): v for k, v in labels.items()} if labels else None,
        "spec": asdict(spec) if spec is not None else None,
    }
    (directory / _MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))

    if embeddings:
        ids = sorted(embeddings)
        matrix = np.stack([embeddings[i] for i in ids]).astype(np.float32)
        save_vector_table(directory / _EMBED_PREFIX, ids, matrix)
    return directory


def load_dataset(
    directory: str | Path,
) -> tuple[list[PeriodDataset], dict[int, bool] | None, dict[int, np.ndarray] | None]:
    directory = Path(directory)
    manifest = json.loads((directory / _MANIFEST).read_text())
    if manifest.get("format") != _FORMAT:
        raise ValueError(f"{directory} is not a dataset directory")

    events = []
    with (directory / _EVENTS).open() as fh:
        for line in fh:
            user, item, ts = line.rstrip("\n").split("\t")
            events.append(InteractionEvent(int(user), int(item), int(ts)))
    periods = build_periods(events)

    labels = None
    if manifest.get("drift_labels"):
        labels = {int(k): bool(v) for k, v in manifest["drift_labels"].items()}

    embeddings = None
    if (directory / f"{_EMBED_PREFIX}.json").exists():
        ids, matrix = load_vector_table(directory / _EMBED_PREFIX)
        embeddings = {int(i): matrix[j] for j, i in enumerate(ids)}
    return periods, labels, embeddings
