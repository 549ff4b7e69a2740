import numpy as np
import pytest

from dact.data import (
    DriftSpec,
    InteractionEvent,
    build_periods,
    build_training_windows,
    generate_synthetic,
    ingest_tsv,
    k_core,
    load_dataset,
    period_boundaries,
    save_dataset,
)


def make_spec(**overrides):
    base = dict(
        n_users=50, n_items=80, n_clusters=4, drift_fraction=0.2,
        drift_period=2, popularity_shift=0.5, seed=11, events_per_user=40,
    )
    base.update(overrides)
    return DriftSpec(**base)


class TestPeriodBoundaries:
    def test_even_thousand(self):
        assert period_boundaries(1000) == [0, 600, 700, 800, 900, 1000]

    def test_integer_arithmetic_exact(self):
        n = 997
        bounds = period_boundaries(n)
        assert bounds == [0] + [(n * t) // 10 for t in (6, 7, 8, 9, 10)]
        assert bounds[-1] == n
        assert all(a <= b for a, b in zip(bounds, bounds[1:]))

    def test_small_counts(self):
        assert period_boundaries(9) == [0, 5, 6, 7, 8, 9]
        assert period_boundaries(0) == [0, 0, 0, 0, 0, 0]


class TestBuildPeriods:
    def test_leave_one_out_positions(self):
        events = [InteractionEvent(0, i, t) for t, i in enumerate([3, 1, 4, 1, 5])]
        # single period's worth: pad with another user's events to keep p0 only
        periods = build_periods(events)
        split = periods[0].splits[0]
        seq = periods[0].user_sequences[0]
        assert split.val == seq[-2]
        assert split.test == seq[-1]
        assert split.train == seq[:-2]

    def test_single_event_user_has_no_eval(self):
        events = [InteractionEvent(u, u, t) for t, u in enumerate(range(10))]
        periods = build_periods(events)
        for p in periods:
            for split in p.splits.values():
                assert split.val is None and split.test is None
                assert len(split.train) == 1

    def test_prior_items_accumulate_in_order(self):
        # user 0 interacts across all periods; everyone else fills space
        events = []
        t = 0
        for block in range(10):
            events.append(InteractionEvent(0, 100 + block, t)); t += 1
            for u in range(1, 10):
                events.append(InteractionEvent(u, u, t)); t += 1
        periods = build_periods(events)
        seen = []
        for p in periods:
            assert p.prior_items[0] == seen
            seen.extend(p.user_sequences[0])

    def test_new_items_tracks_first_appearance(self):
        events = [InteractionEvent(0, i % 3, t) for t, i in enumerate(range(20))]
        events.append(InteractionEvent(0, 99, 20))
        periods = build_periods(events)
        assert 99 in periods[-1].new_items
        assert all(99 not in p.item_set for p in periods[:-1])
        assert periods[0].new_items == periods[0].item_set

    def test_rejects_unsorted(self):
        events = [InteractionEvent(0, 0, 5), InteractionEvent(0, 1, 3)]
        with pytest.raises(ValueError):
            build_periods(events)


class TestSyntheticGenerator:
    def test_deterministic(self):
        a, la, ea = generate_synthetic(make_spec())
        b, lb, eb = generate_synthetic(make_spec())
        assert la == lb
        assert [p.events for p in a] == [p.events for p in b]
        assert all(np.array_equal(ea[i], eb[i]) for i in ea)

    def test_seed_changes_stream(self):
        a, _, _ = generate_synthetic(make_spec())
        b, _, _ = generate_synthetic(make_spec(seed=12))
        assert [p.events for p in a] != [p.events for p in b]

    def test_drift_count_exact(self):
        spec = make_spec(n_items=200, drift_fraction=0.2)
        _, labels, _ = generate_synthetic(spec)
        assert sum(labels.values()) == 40

    def test_no_repeats_within_user_period(self):
        periods, _, _ = generate_synthetic(make_spec())
        for p in periods:
            for seq in p.user_sequences.values():
                assert len(seq) == len(set(seq))

    def test_boundaries_match_protocol(self):
        spec = make_spec()
        periods, _, _ = generate_synthetic(spec)
        total = sum(p.n_events for p in periods)
        bounds = period_boundaries(total)
        assert [p.n_events for p in periods] == [
            bounds[i + 1] - bounds[i] for i in range(5)
        ]

    def test_embeddings_cluster_by_content(self):
        spec = make_spec()
        _, _, emb = generate_synthetic(spec)
        # items sharing a home cluster sit near a common centroid
        items = sorted(emb)
        for i in items[: spec.n_clusters]:
            same = [j for j in items if j % spec.n_clusters == i % spec.n_clusters and j != i]
            other = [j for j in items if j % spec.n_clusters != i % spec.n_clusters]
            d_same = np.mean([np.linalg.norm(emb[i] - emb[j]) for j in same])
            d_other = np.mean([np.linalg.norm(emb[i] - emb[j]) for j in other])
            assert d_same < d_other

    def test_drift_moves_cooccurrence_neighbourhood(self):
        """After the drift period, a drifting item's strongest co-occurrence
        cluster is no longer its original one, while stationary items stay put.

        Clusters follow the generator's home convention (item id modulo the
        cluster count); co-occurrence is counted inside a +-3 window of each
        user's period-1 sequence with drift planted at period 1.
        """
        spec = make_spec(n_users=120, n_items=80, events_per_user=50, drift_period=1)
        periods, labels, _ = generate_synthetic(spec)

        def cooccurrence_by_cluster(period, item):
            counts = np.zeros(spec.n_clusters)
            for seq in period.user_sequences.values():
                for pos, it in enumerate(seq):
                    if it != item:
                        continue
                    for j in range(max(0, pos - 3), min(len(seq), pos + 4)):
                        if j != pos:
                            counts[seq[j] % spec.n_clusters] += 1
            return counts

        drifted = [i for i, d in labels.items() if d]
        stable = [i for i, d in labels.items() if not d][: len(drifted)]
        moved = sum(
            np.argmax(cooccurrence_by_cluster(periods[1], i)) != i % spec.n_clusters
            for i in drifted
            if cooccurrence_by_cluster(periods[1], i).sum() > 0
        )
        stayed = sum(
            np.argmax(cooccurrence_by_cluster(periods[1], i)) == i % spec.n_clusters
            for i in stable
            if cooccurrence_by_cluster(periods[1], i).sum() > 0
        )
        assert moved >= 0.8 * len(drifted)
        assert stayed >= 0.8 * len(stable)

    def test_validation_rejects_bad_specs(self):
        with pytest.raises(ValueError):
            make_spec(drift_fraction=1.2).validate()
        with pytest.raises(ValueError):
            make_spec(n_clusters=1000).validate()
        with pytest.raises(ValueError):
            make_spec(drift_period=7).validate()


class TestTrainingWindows:
    def test_count_law(self):
        periods, _, _ = generate_synthetic(make_spec())
        for period in periods:
            windows = build_training_windows(period, "train", max_len=50)
            expected = 0
            for user, split in period.splits.items():
                if period.prior_items.get(user):
                    expected += len(split.train)
                else:
                    expected += max(0, len(split.train) - 1)
            assert len(windows) == expected

    def test_prefix_order_and_truncation(self):
        events = [InteractionEvent(0, i, i) for i in range(10)]
        period = build_periods(events)[0]  # items 0..5 fall into period 0
        seq = period.user_sequences[0]
        windows = build_training_windows(period, "train", max_len=2)
        assert windows[0] == ([seq[0]], seq[1])
        assert all(len(ctx) <= 2 for ctx, _ in windows)
        assert windows[-1] == (seq[-5:-3], seq[-3])

    def test_eval_windows_use_full_history(self):
        periods, _, _ = generate_synthetic(make_spec())
        period = periods[1]
        for split_name, pick in (("val", lambda s: s.val), ("test", lambda s: s.test)):
            windows = build_training_windows(period, split_name, max_len=100)
            by_target = {}
            for user, split in sorted(period.splits.items()):
                target = pick(split)
                ctx = list(period.prior_items.get(user, [])) + split.train
                if split_name == "test" and split.val is not None:
                    ctx.append(split.val)
                if target is not None and ctx:
                    by_target.setdefault(user, (ctx[-100:], target))
            assert windows == [by_target[u] for u in sorted(by_target)]

    def test_train_targets_never_held_out(self):
        periods, _, _ = generate_synthetic(make_spec())
        for period in periods:
            held = {
                (u, s.val) for u, s in period.splits.items() if s.val is not None
            } | {(u, s.test) for u, s in period.splits.items() if s.test is not None}
            for user, split in period.splits.items():
                for target in split.train:
                    assert (user, target) not in held

    def test_rejects_unknown_split(self):
        periods, _, _ = generate_synthetic(make_spec())
        with pytest.raises(ValueError):
            build_training_windows(periods[0], "eval")


class TestStore:
    def test_roundtrip(self, tmp_path):
        spec = make_spec()
        periods, labels, emb = generate_synthetic(spec)
        save_dataset(tmp_path / "ds", periods, labels=labels, embeddings=emb, spec=spec)
        loaded, loaded_labels, loaded_emb = load_dataset(tmp_path / "ds")
        assert [p.events for p in loaded] == [p.events for p in periods]
        assert loaded_labels == labels
        assert all(np.array_equal(loaded_emb[i], emb[i]) for i in emb)
        assert [p.splits for p in loaded] == [p.splits for p in periods]

    def test_roundtrip_without_extras(self, tmp_path):
        periods, _, _ = generate_synthetic(make_spec())
        save_dataset(tmp_path / "ds", periods)
        loaded, labels, emb = load_dataset(tmp_path / "ds")
        assert labels is None and emb is None
        assert sum(p.n_events for p in loaded) == sum(p.n_events for p in periods)

    def test_rejects_foreign_directory(self, tmp_path):
        (tmp_path / "dataset.json").write_text("{}")
        with pytest.raises(ValueError):
            load_dataset(tmp_path)


class TestIngest:
    def test_k_core_matches_hand_run(self):
        rows = [
            ("u1", "a", 1.0), ("u1", "b", 2.0), ("u1", "c", 3.0),
            ("u1", "a", 4.0), ("u1", "b", 5.0),
            ("u2", "a", 6.0), ("u2", "b", 7.0), ("u2", "c", 8.0),
            ("u2", "b", 9.0), ("u2", "a", 10.0),
            ("u3", "c", 11.0), ("u3", "d", 12.0),
        ]
        # round 1 drops u3 (2 events) and d (1); c then has 2 events and falls
        # in round 2, leaving u1 and u2 on items a and b only
        kept = k_core(rows, min_count=3)
        assert {(u, i) for u, i, _ in kept} == {
            ("u1", "a"), ("u1", "b"), ("u2", "a"), ("u2", "b")
        }
        assert len(kept) == 8

    def test_ingest_remaps_and_orders(self, tmp_path):
        path = tmp_path / "log.tsv"
        lines = ["user\titem\tts"]  # header should be skipped
        for t in range(6):
            lines.append(f"alice\tx\t{10 + t}")
            lines.append(f"bob\ty\t{10 + t}")
        # a timestamp tie between the two users resolves by original order
        path.write_text("\n".join(lines) + "\n")
        periods, user_map, item_map = ingest_tsv(path, min_count=3)
        assert user_map == {"alice": 0, "bob": 1}
        assert item_map == {"x": 0, "y": 1}
        events = [ev for p in periods for ev in p.events]
        assert [ev.timestamp for ev in events] == list(range(12))
        assert [ev.user_id for ev in events][:2] == [0, 1]

    def test_ingest_rejects_empty(self, tmp_path):
        path = tmp_path / "log.tsv"
        path.write_text("no\tusable\trows_here\n")
        with pytest.raises(ValueError):
            ingest_tsv(path, min_count=100)
