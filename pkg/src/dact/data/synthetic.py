"""Synthetic drifting-interaction generator.

Items belong to latent interest clusters; each user samples mostly within a
home cluster, with a small uniform noise floor. A labelled subset of items
migrates to a different cluster from ``drift_period`` onward and optionally
gains extra sampling weight, so their behavioural neighbourhood moves while
their semantic embedding (cluster centroid + item noise) stays put. Every
draw comes from one seeded generator, so the whole corpus is a pure function
of the ``DriftSpec``.
"""

from __future__ import annotations

import numpy as np

from .events import DriftSpec, InteractionEvent, PeriodDataset, build_periods, period_boundaries


def _weighted_sample_distinct(
    rng: np.random.Generator, weights: np.ndarray, k: int
) -> np.ndarray:
    """Draw k distinct indices with probability proportional to weights.

    Exponential-key trick: index i survives with key Exp(1)/w_i, the k
    smallest keys form a weighted sample without replacement.
    """
    candidates = np.flatnonzero(weights > 0)
    k = min(k, len(candidates))
    if k == 0:
        return np.empty(0, dtype=int)
    keys = rng.exponential(size=len(candidates)) / weights[candidates]
    return candidates[np.argpartition(keys, k - 1)[:k]]


def generate_synthetic(
    spec: DriftSpec,
) -> tuple[list[PeriodDataset], dict[int, bool], dict[int, np.ndarray]]:
    """Build the period-wise corpus, drift labels, and item embeddings."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    n_items, n_users = spec.n_items, spec.n_users
    base_cluster = np.arange(n_items) % spec.n_clusters

    drift_ids = rng.choice(n_items, size=spec.n_drifting, replace=False)
    is_drifting = np.zeros(n_items, dtype=bool)
    is_drifting[drift_ids] = True
    # migrate to a uniformly random *other* cluster
    target_cluster = base_cluster.copy()
    if spec.n_clusters > 1:
        hops = rng.integers(1, spec.n_clusters, size=len(drift_ids))
        target_cluster[drift_ids] = (base_cluster[drift_ids] + hops) % spec.n_clusters

    # cold items appear only from their intro period on; drifting items stay warm
    item_intro = np.zeros(n_items, dtype=int)
    n_cold = int(round(spec.cold_item_fraction * n_items))
    cold_pool = np.setdiff1d(np.arange(n_items), drift_ids)
    if n_cold > 0 and len(cold_pool) > 0:
        cold_ids = rng.choice(cold_pool, size=min(n_cold, len(cold_pool)), replace=False)
        item_intro[cold_ids] = 1 + np.arange(len(cold_ids)) % (spec.n_periods - 1)

    user_home = np.arange(n_users) % spec.n_clusters
    user_intro = np.zeros(n_users, dtype=int)
    n_new_users = int(round(spec.new_user_fraction * n_users))
    if n_new_users > 0:
        new_users = rng.choice(n_users, size=n_new_users, replace=False)
        user_intro[new_users] = 1 + np.arange(n_new_users) % (spec.n_periods - 1)

    total_events = n_users * spec.events_per_user
    bounds = period_boundaries(total_events)

    events: list[InteractionEvent] = []
    clock = 0
    for p in range(spec.n_periods):
        n_period = bounds[p + 1] - bounds[p]
        active_users = np.flatnonzero(user_intro <= p)
        active_items = item_intro <= p
        cluster_now = np.where(is_drifting & (p >= spec.drift_period), target_cluster, base_cluster)

        popularity = np.ones(n_items)
        if p >= spec.drift_period:
            popularity[is_drifting] += spec.popularity_shift

        # split the period's events across active users
        counts = rng.multinomial(n_period, np.full(len(active_users), 1.0 / len(active_users)))

        per_user_items: dict[int, list[int]] = {}
        for u, n_u in zip(active_users, counts):
            if n_u == 0:
                continue
            home = user_home[u]
            in_cluster = (cluster_now == home) & active_items
            n_active = int(active_items.sum())
            weights = np.where(active_items, spec.within_noise / n_active, 0.0)
            if in_cluster.any():
                weights = weights + np.where(
                    in_cluster, (1.0 - spec.within_noise) / in_cluster.sum(), 0.0
                )
            weights = weights * popularity
            chosen = _weighted_sample_distinct(rng, weights, int(n_u))
            rng.shuffle(chosen)
            per_user_items[int(u)] = [int(i) for i in chosen]

        # interleave users while preserving each user's own order
        slots = np.concatenate(
            [np.full(len(v), u, dtype=int) for u, v in per_user_items.items()]
        ) if per_user_items else np.empty(0, dtype=int)
        rng.shuffle(slots)
        cursors = {u: 0 for u in per_user_items}
        for u in slots:
            u = int(u)
            item = per_user_items[u][cursors[u]]
            cursors[u] += 1
            events.append(InteractionEvent(user_id=u, item_id=item, timestamp=clock))
            clock += 1

    periods = build_periods(events)

    labels = {i: bool(is_drifting[i]) for i in range(n_items)}
    centroids = rng.normal(size=(spec.n_clusters, spec.d_sem))
    embeddings = {
        i: (centroids[base_cluster[i]] + spec.embed_noise * rng.normal(size=spec.d_sem)).astype(
            np.float32
        )
        for i in range(n_items)
    }
    return periods, labels, embeddings
