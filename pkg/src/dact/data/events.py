"""Core event-stream types and the chronological period structure.

The corpus is a single chronologically sorted list of user-item events.
Periods partition it by interaction count: period 0 takes the first 60% and
periods 1..4 take 10% each. Inside each period, every user's last two items
are held out as validation and test targets (leave-one-out); everything
earlier is training material.
"""

from __future__ import annotations

from dataclasses import dataclass, field

SPLIT_TENTHS = (6, 7, 8, 9, 10)  # cumulative tenths: 60/10/10/10/10


@dataclass(frozen=True)
class InteractionEvent:
    """One timestamped user-item interaction."""

    user_id: int
    item_id: int
    timestamp: int

    def __post_init__(self) -> None:
        if self.user_id < 0 or self.item_id < 0:
            raise ValueError("user_id and item_id must be non-negative")


@dataclass(frozen=True)
class DriftSpec:
    """Configuration for the synthetic drifting-interaction generator.

    Items live in ``n_clusters`` latent interest clusters and users sample
    mostly within their home cluster. A ``drift_fraction`` of items migrate
    to a different cluster (and optionally gain ``popularity_shift`` extra
    sampling weight) from ``drift_period`` onward, while their semantic
    embeddings stay fixed: behaviour drifts, content does not.
    """

    n_users: int
    n_items: int
    n_clusters: int
    drift_fraction: float
    drift_period: int
    popularity_shift: float
    seed: int
    # generator knobs beyond the headline scenario
    events_per_user: int = 100
    within_noise: float = 0.1
    cold_item_fraction: float = 0.05
    new_user_fraction: float = 0.05
    d_sem: int = 64
    embed_noise: float = 0.1
    n_periods: int = 5

    def validate(self) -> None:
        if not 0.0 <= self.drift_fraction <= 1.0:
            raise ValueError("drift_fraction must lie in [0, 1]")
        if self.n_clusters > self.n_items:
            raise ValueError("n_clusters cannot exceed n_items")
        if self.n_users <= 0 or self.n_items <= 0 or self.n_clusters <= 0:
            raise ValueError("n_users, n_items, n_clusters must be positive")
        if self.popularity_shift < 0:
            raise ValueError("popularity_shift must be non-negative")
        if self.drift_period < 0 or self.drift_period >= self.n_periods:
            raise ValueError("drift_period must name a valid period index")
        if self.n_periods != len(SPLIT_TENTHS):
            raise ValueError("the period protocol is fixed at five periods")

    @property
    def n_drifting(self) -> int:
        return int(round(self.drift_fraction * self.n_items))


@dataclass
class UserSplit:
    """Leave-one-out split of one user's items within a period."""

    train: list[int] = field(default_factory=list)
    val: int | None = None
    test: int | None = None


@dataclass
class PeriodDataset:
    """One chronological slice of the stream plus its per-user structure.

    ``user_sequences`` orders each user's items within the period;
    ``prior_items`` carries the same user's items from earlier periods so
    training contexts can reach back across the boundary (targets never do).
    ``new_items`` are items first observed in this period.
    """

    period_index: int
    events: list[InteractionEvent]
    item_set: set[int]
    user_sequences: dict[int, list[int]]
    splits: dict[int, UserSplit]
    prior_items: dict[int, list[int]] = field(default_factory=dict)
    new_items: set[int] = field(default_factory=set)

    @property
    def n_events(self) -> int:
        return len(self.events)


def period_boundaries(n_events: int) -> list[int]:
    """Cumulative event-count boundaries for the 60/10/10/10/10 split.

    Pure integer arithmetic so the boundaries are exactly reproducible:
    boundary k sits at ``(n_events * tenths_k) // 10``.
    """
    return [0] + [(n_events * t) // 10 for t in SPLIT_TENTHS]


def _split_sequence(items: list[int]) -> UserSplit:
    if len(items) >= 2:
        return UserSplit(train=items[:-2], val=items[-2], test=items[-1])
    return UserSplit(train=list(items), val=None, test=None)


def build_periods(events: list[InteractionEvent]) -> list[PeriodDataset]:
    """Partition a sorted event stream into the five-period structure."""
    for a, b in zip(events, events[1:]):
        if b.timestamp < a.timestamp:
            raise ValueError("events must be sorted by timestamp")
    bounds = period_boundaries(len(events))
    periods: list[PeriodDataset] = []
    seen_items: set[int] = set()
    history: dict[int, list[int]] = {}
    for p in range(len(bounds) - 1):
        chunk = events[bounds[p] : bounds[p + 1]]
        sequences: dict[int, list[int]] = {}
        items: set[int] = set()
        for ev in chunk:
            sequences.setdefault(ev.user_id, []).append(ev.item_id)
            items.add(ev.item_id)
        splits = {u: _split_sequence(seq) for u, seq in sequences.items()}
        prior = {u: list(history.get(u, [])) for u in sequences}
        periods.append(
            PeriodDataset(
                period_index=p,
                events=chunk,
                item_set=items,
                user_sequences=sequences,
                splits=splits,
                prior_items=prior,
                new_items=items - seen_items,
            )
        )
        seen_items |= items
        for u, seq in sequences.items():
            history.setdefault(u, []).extend(seq)
    return periods
