import numpy as np
import pytest

from dact.cf import CfTable, cosine_shift, ranking_auc, train_cf, _skipgram_pairs
from dact.data import InteractionEvent, build_periods, generate_synthetic, DriftSpec


def toy_period(sequences):
    events = []
    t = 0
    for _ in range(12):  # repeat so every item lands in period 0 comfortably
        for user, seq in enumerate(sequences):
            for item in seq:
                events.append(InteractionEvent(user, item, t))
                t += 1
    return build_periods(events)[0]


class TestPairEnumeration:
    def test_window_oracle(self):
        pairs = _skipgram_pairs({0: [10, 11, 12]}, window=3)
        assert pairs.tolist() == [
            [10, 11], [10, 12], [11, 10], [11, 12], [12, 10], [12, 11]
        ]

    def test_window_clips_at_edges(self):
        pairs = _skipgram_pairs({0: [5, 6, 7]}, window=1)
        assert pairs.tolist() == [[5, 6], [6, 5], [6, 7], [7, 6]]

    def test_multiple_users_sorted(self):
        pairs = _skipgram_pairs({1: [3, 4], 0: [1, 2]}, window=2)
        assert pairs.tolist() == [[1, 2], [2, 1], [3, 4], [4, 3]]

    def test_no_pairs_raises(self):
        with pytest.raises(ValueError):
            _skipgram_pairs({0: [1], 1: [2]}, window=3)


class TestTrainCf:
    def test_deterministic(self):
        period = toy_period([[1, 2, 3], [2, 3, 4]])
        a = train_cf(period, dim=8, epochs=3, seed=5)
        b = train_cf(period, dim=8, epochs=3, seed=5)
        assert a.ids == b.ids
        assert np.array_equal(a.vectors, b.vectors)

    def test_unit_norm(self):
        period = toy_period([[1, 2, 3, 4], [3, 4, 5, 6]])
        table = train_cf(period, dim=8, epochs=2, seed=0)
        norms = np.linalg.norm(table.vectors, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)

    def test_cooccurring_pairs_align(self):
        # items 1+2 and 3+4 co-occur only within their own pair; filler users
        # give negative sampling something to push against
        sequences = [[1, 2], [1, 2], [3, 4], [3, 4]]
        sequences += [[5 + ((u + k) % 8) for k in range(4)] for u in range(6)]
        period = toy_period(sequences)
        table = train_cf(period, dim=8, epochs=40, seed=3)
        sim = table.vectors @ table.vectors.T
        idx = table._index
        within = min(sim[idx[1], idx[2]], sim[idx[3], idx[4]])
        across = max(sim[idx[1], idx[3]], sim[idx[1], idx[4]], sim[idx[2], idx[3]])
        assert within > across + 0.2

    def test_warm_start_preserves_unmatched_geometry(self):
        period = toy_period([[1, 2, 3], [2, 3, 4]])
        warm = train_cf(period, dim=8, epochs=4, seed=1)
        cold = train_cf(period, dim=8, epochs=0, seed=2)
        warmed = train_cf(period, dim=8, epochs=0, seed=2, warm=warm)
        # zero epochs: warm rows should pass straight through
        for item in warm.ids:
            assert np.allclose(warmed.vector(item), warm.vector(item), atol=1e-6)
        assert cold.ids == warmed.ids

    def test_warm_start_dim_mismatch(self):
        period = toy_period([[1, 2], [2, 3]])
        warm = train_cf(period, dim=4, epochs=1, seed=0)
        with pytest.raises(ValueError):
            train_cf(period, dim=8, epochs=1, seed=0, warm=warm)

    def test_synthetic_clusters_recovered(self):
        spec = DriftSpec(
            n_users=80, n_items=80, n_clusters=4, drift_fraction=0.0,
            drift_period=2, popularity_shift=0.0, seed=9, events_per_user=30,
        )
        periods, _, _ = generate_synthetic(spec)
        table = train_cf(periods[0], dim=16, epochs=40, seed=0)
        sim = table.vectors @ table.vectors.T
        idx = table._index
        same, diff = [], []
        for i in table.ids:
            for j in table.ids:
                if i < j:
                    bucket = same if i % 4 == j % 4 else diff
                    bucket.append(sim[idx[i], idx[j]])
        assert np.mean(same) > np.mean(diff) + 0.3


class TestCfTable:
    def test_lookup_and_matrix(self):
        table = CfTable(ids=[7, 3], vectors=np.eye(2, dtype=np.float32))
        assert 7 in table and 3 in table and 11 not in table
        assert np.allclose(table.vector(3), [0.0, 1.0])
        mat = table.matrix_for([3, 7])
        assert np.allclose(mat, [[0.0, 1.0], [1.0, 0.0]])

    def test_matrix_for_unknown_item(self):
        table = CfTable(ids=[1], vectors=np.ones((1, 3), dtype=np.float32))
        with pytest.raises(KeyError):
            table.matrix_for([2])

    def test_save_load_roundtrip(self, tmp_path):
        vecs = np.random.default_rng(0).normal(size=(4, 6)).astype(np.float32)
        table = CfTable(ids=[5, 1, 9, 2], vectors=vecs)
        table.save(tmp_path / "cf")
        loaded = CfTable.load(tmp_path / "cf")
        assert loaded.ids == table.ids
        assert np.array_equal(loaded.vectors, table.vectors)


class TestCosineShift:
    def test_hand_values(self):
        prev = CfTable(ids=[1, 2], vectors=np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32))
        cur = CfTable(ids=[2, 3], vectors=np.array([[1.0, 0.0], [1.0, 1.0]], dtype=np.float32))
        shift = cosine_shift(prev, cur)
        assert set(shift) == {2}
        assert shift[2] == pytest.approx(0.0, abs=1e-6)

    def test_identical_tables(self):
        vecs = np.array([[0.6, 0.8], [1.0, 0.0]], dtype=np.float32)
        table = CfTable(ids=[4, 5], vectors=vecs)
        shift = cosine_shift(table, table)
        assert shift == pytest.approx({4: 1.0, 5: 1.0})


class TestRankingAuc:
    def test_hand_oracle_with_ties(self):
        scores = {1: 0.9, 2: 0.5, 3: 0.5, 4: 0.1}
        labels = {1: True, 2: True, 3: False, 4: False}
        # pairs: (1,3)=1, (1,4)=1, (2,3)=0.5 tie, (2,4)=1 -> 3.5/4
        assert ranking_auc(scores, labels) == pytest.approx(0.875)

    def test_perfect_and_inverted(self):
        scores = {i: float(i) for i in range(6)}
        labels = {i: i >= 3 for i in range(6)}
        assert ranking_auc(scores, labels) == pytest.approx(1.0)
        inverted = {i: not v for i, v in labels.items()}
        assert ranking_auc(scores, inverted) == pytest.approx(0.0)

    def test_all_tied_is_half(self):
        scores = {i: 0.5 for i in range(4)}
        labels = {0: True, 1: True, 2: False, 3: False}
        assert ranking_auc(scores, labels) == pytest.approx(0.5)

    def test_requires_both_classes(self):
        with pytest.raises(ValueError):
            ranking_auc({1: 0.2, 2: 0.3}, {1: True, 2: True})

    def test_ignores_items_missing_labels(self):
        scores = {1: 0.9, 2: 0.1, 3: 0.5}
        labels = {1: True, 2: False}
        assert ranking_auc(scores, labels) == pytest.approx(1.0)
