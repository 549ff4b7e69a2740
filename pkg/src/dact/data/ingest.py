"""Ingest real interaction logs from TSV.

Expected columns: user, item, timestamp (header optional, extra columns
ignored). Users and items are remapped to dense integer ids after k-core
filtering, and the stream is ordered by timestamp with the original row
order breaking ties so re-ingestion is reproducible.
"""

from __future__ import annotations

import csv
from collections import Counter
from pathlib import Path

from .events import InteractionEvent, PeriodDataset, build_periods


def k_core(
    rows: list[tuple[str, str, float]], min_count: int
) -> list[tuple[str, str, float]]:
    """Iteratively drop users and items with fewer than min_count events."""
    while True:
        user_counts = Counter(r[0] for r in rows)
        item_counts = Counter(r[1] for r in rows)
        kept = [
            r
            for r in rows
            if user_counts[r[0]] >= min_count and item_counts[r[1]] >= min_count
        ]
        if len(kept) == len(rows):
            return kept
        rows = kept


def ingest_tsv(
    path: str | Path, min_count: int = 5
) -> tuple[list[PeriodDataset], dict[str, int], dict[str, int]]:
    """Read a TSV log, apply k-core, and split into periods.

    Returns the periods plus the user and item id maps (raw key -> dense id,
    assigned in order of first appearance in the filtered stream).
    """
    path = Path(path)
    rows: list[tuple[str, str, float]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        for raw in reader:
            if len(raw) < 3:
                continue
            user, item, ts = raw[0].strip(), raw[1].strip(), raw[2].strip()
            try:
                ts_val = float(ts)
            except ValueError:
                continue  # header or malformed row
            rows.append((user, item, ts_val))
    if not rows:
        raise ValueError(f"no usable rows in {path}")

    rows = k_core(rows, min_count)
    if not rows:
        raise ValueError(f"k-core at min_count={min_count} removed every row of {path}")
    rows.sort(key=lambda r: r[2])

    user_map: dict[str, int] = {}
    item_map: dict[str, int] = {}
    events = []
    for idx, (user, item, _) in enumerate(rows):
        uid = user_map.setdefault(user, len(user_map))
        iid = item_map.setdefault(item, len(item_map))
        # rank timestamps by (time, original order) so build_periods sees a
        # strictly increasing clock even when the log has ties
        events.append(InteractionEvent(user_id=uid, item_id=iid, timestamp=idx))

    return build_periods(events), user_map, item_map
