import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from dact.grm import (
    BOS,
    EOS,
    PAD,
    EvalRecord,
    Grm,
    GrmConfig,
    IdentifierTrie,
    TokenVocab,
    _pad_batch,
    encode_history,
    evaluate,
    load_grm,
    recommend_batch,
    save_grm,
    topk_metrics,
    train_grm,
)

TINY = GrmConfig(width=32, n_layers=1, n_heads=2, ff_mult=2, max_seq=64)


def toy_world(n_items=12, n_levels=2, codebook_size=3, seed=0):
    """Distinct identifiers for a small catalog plus vocab and trie."""
    rng = np.random.default_rng(seed)
    identifiers = {}
    used = set()
    suffix_count = {}
    for item in range(n_items):
        while True:
            path = tuple(int(c) for c in rng.integers(0, codebook_size, n_levels))
            suffix = suffix_count.get(path, 0)
            if (path, suffix) not in used:
                break
        used.add((path, suffix))
        suffix_count[path] = suffix + 1
        identifiers[item] = path + (suffix,)
    vocab = TokenVocab(n_levels, codebook_size)
    vocab.ensure_suffixes(identifiers)
    trie = IdentifierTrie(identifiers, vocab)
    return identifiers, vocab, trie


class TestTokenVocab:
    def test_size_arithmetic(self):
        assert TokenVocab(3, 64, n_suffixes=2).size == 3 + 3 * 64 + 2

    def test_reserved_tokens(self):
        assert (PAD, BOS, EOS) == (0, 1, 2)
        vocab = TokenVocab(2, 4)
        assert vocab.code_token(0, 0) == 3

    def test_code_tokens_distinct_and_contiguous(self):
        vocab = TokenVocab(3, 5, n_suffixes=2)
        tokens = [
            vocab.code_token(level, code)
            for level in range(3)
            for code in range(5)
        ]
        assert tokens == list(range(3, 18))
        assert vocab.suffix_token(0) == 18
        assert vocab.suffix_token(1) == 19

    def test_range_errors(self):
        vocab = TokenVocab(2, 4)
        with pytest.raises(ValueError):
            vocab.code_token(0, 4)
        with pytest.raises(ValueError):
            vocab.code_token(2, 0)
        with pytest.raises(ValueError):
            vocab.suffix_token(1)

    def test_item_tokens(self):
        vocab = TokenVocab(2, 4, n_suffixes=3)
        assert vocab.item_tokens((1, 2, 2)) == [4, 9, 13]
        with pytest.raises(ValueError):
            vocab.item_tokens((1, 2))

    def test_ensure_suffixes_grows_monotonically(self):
        vocab = TokenVocab(2, 4)
        vocab.ensure_suffixes({1: (0, 0, 4)})
        assert vocab.n_suffixes == 5
        vocab.ensure_suffixes({1: (0, 0, 1)})
        assert vocab.n_suffixes == 5


class TestIdentifierTrie:
    def test_walk_recovers_every_item(self):
        identifiers, vocab, trie = toy_world()
        for item, ident in identifiers.items():
            node = trie.root
            for token in vocab.item_tokens(ident):
                node = node[token]
            assert trie.item_at(node) == item

    def test_children_sorted(self):
        _, _, trie = toy_world(seed=1)
        stack = [trie.root]
        while stack:
            node = stack.pop()
            kids = trie.children(node)
            assert kids == sorted(kids)
            stack.extend(node[t] for t in kids)

    def test_duplicate_identifier_rejected(self):
        vocab = TokenVocab(2, 3)
        with pytest.raises(ValueError, match="duplicate"):
            IdentifierTrie({1: (0, 1, 0), 2: (0, 1, 0)}, vocab)

    def test_depth(self):
        _, vocab, trie = toy_world(n_levels=3, codebook_size=4)
        assert trie.depth == 4


class TestEncodeHistory:
    def test_flattens_most_recent(self):
        vocab = TokenVocab(2, 4, n_suffixes=2)
        ids = {1: (0, 1, 0), 2: (2, 3, 1), 3: (1, 1, 0)}
        tokens = encode_history([1, 2, 3], ids, vocab, max_items=2)
        assert tokens == vocab.item_tokens(ids[2]) + vocab.item_tokens(ids[3])

    def test_shorter_history_kept_whole(self):
        vocab = TokenVocab(1, 2, n_suffixes=1)
        ids = {5: (1, 0)}
        assert encode_history([5], ids, vocab, max_items=10) == vocab.item_tokens(ids[5])


class TestGrmModel:
    def test_forward_shape_and_determinism(self):
        a = Grm(20, TINY, seed=3)
        b = Grm(20, TINY, seed=3)
        x = torch.randint(0, 20, (4, 9), generator=torch.Generator().manual_seed(0))
        assert a(x).shape == (4, 9, 20)
        assert torch.allclose(a(x), b(x), atol=1e-7)

    def test_max_seq_enforced(self):
        grm = Grm(10, TINY)
        with pytest.raises(ValueError, match="max_seq"):
            grm(torch.zeros(1, TINY.max_seq + 1, dtype=torch.long))

    def test_causal_masking(self):
        grm = Grm(15, TINY, seed=4)
        x = torch.randint(3, 15, (1, 8))
        full = grm(x)
        y = x.clone()
        y[0, -1] = (y[0, -1] + 1) % 15
        changed = grm(y)
        # positions before the edit see identical prefixes
        assert torch.allclose(full[0, :-1], changed[0, :-1], atol=1e-6)
        assert not torch.allclose(full[0, -1], changed[0, -1], atol=1e-6)

    def test_initial_nll_near_uniform(self):
        vocab_size = 200
        grm = Grm(vocab_size, seed=5)
        x = torch.randint(0, vocab_size, (8, 20), generator=torch.Generator().manual_seed(1))
        logits = grm(x[:, :-1])
        nll = F.cross_entropy(logits.reshape(-1, vocab_size), x[:, 1:].reshape(-1))
        assert abs(nll.item() - math.log(vocab_size)) < 0.05 * math.log(vocab_size)

    def test_grow_vocab_preserves_old_logits(self):
        grm = Grm(12, TINY, seed=6)
        x = torch.randint(0, 12, (2, 6))
        before = grm(x)
        grm.grow_vocab(17, seed=7)
        after = grm(x)
        assert grm.vocab_size == 17
        assert after.shape == (2, 6, 17)
        assert torch.allclose(after[:, :, :12], before, atol=1e-6)

    def test_grow_vocab_rejects_shrink(self):
        grm = Grm(12, TINY)
        with pytest.raises(ValueError):
            grm.grow_vocab(11)
        grm.grow_vocab(12)  # same size is a no-op
        assert grm.vocab_size == 12

    def test_pad_batch(self):
        tokens, last = _pad_batch([[1, 2, 3], [4]])
        assert tokens.tolist() == [[1, 2, 3], [4, PAD, PAD]]
        assert last.tolist() == [2, 0]

    def test_save_load_roundtrip(self, tmp_path):
        grm = Grm(25, TINY, seed=8)
        save_grm(tmp_path / "grm", grm)
        loaded = load_grm(tmp_path / "grm")
        x = torch.randint(0, 25, (3, 7))
        assert torch.allclose(loaded(x), grm(x), atol=1e-7)


def exhaustive_rank(grm, identifiers, vocab, context_tokens):
    """Score every item by teacher-forced sequence log-probability."""
    scored = []
    for item in sorted(identifiers):
        tokens = vocab.item_tokens(identifiers[item])
        seq = [BOS, *context_tokens, EOS, *tokens]
        x = torch.tensor([seq])
        with torch.no_grad():
            logp = F.log_softmax(grm(x[:, :-1]).double(), dim=-1)
        start = 1 + len(context_tokens) + 1
        score = sum(
            float(logp[0, start - 1 + j, tok]) for j, tok in enumerate(tokens)
        )
        scored.append((score, tokens, item))
    scored.sort(key=lambda s: (-s[0], s[1]))
    return scored


class TestRecommendBatch:
    def test_beam_matches_exhaustive_oracle(self):
        identifiers, vocab, trie = toy_world(n_items=10, seed=2)
        grm = Grm(vocab.size, TINY, seed=9)
        contexts = [
            encode_history([3, 1], identifiers, vocab),
            encode_history([7], identifiers, vocab),
        ]
        got = recommend_batch(grm, trie, contexts, k=10, beam_size=10)
        for ctx, recs in zip(contexts, got):
            oracle = exhaustive_rank(grm, identifiers, vocab, ctx)
            assert [item for item, _ in recs] == [item for _, _, item in oracle]
            for (_, score), (oscore, _, _) in zip(recs, oracle):
                assert score == pytest.approx(oscore, abs=1e-6)

    def test_batch_composition_independence(self):
        identifiers, vocab, trie = toy_world(n_items=8, seed=3)
        grm = Grm(vocab.size, TINY, seed=10)
        a = encode_history([2], identifiers, vocab)
        b = encode_history([5, 6], identifiers, vocab)
        together = recommend_batch(grm, trie, [a, b], k=5, beam_size=6)
        alone = [
            recommend_batch(grm, trie, [a], k=5, beam_size=6)[0],
            recommend_batch(grm, trie, [b], k=5, beam_size=6)[0],
        ]
        for x, y in zip(together, alone):
            assert [i for i, _ in x] == [i for i, _ in y]

    def test_k_truncates(self):
        identifiers, vocab, trie = toy_world(n_items=9, seed=4)
        grm = Grm(vocab.size, TINY, seed=11)
        ctx = encode_history([0], identifiers, vocab)
        recs = recommend_batch(grm, trie, [ctx], k=3, beam_size=6)[0]
        assert len(recs) == 3


class TestTopkMetrics:
    def test_closed_forms(self):
        out = topk_metrics([1, None], ks=(5,))
        assert out["hr@5"] == pytest.approx(0.5)
        assert out["ndcg@5"] == pytest.approx(0.5)

    def test_rank_three_gain(self):
        out = topk_metrics([3], ks=(5, 10))
        assert out["ndcg@5"] == pytest.approx(1.0 / math.log2(4.0))
        assert out["ndcg@5"] == pytest.approx(0.5)

    def test_rank_outside_k(self):
        out = topk_metrics([7], ks=(5, 10))
        assert out["hr@5"] == 0.0
        assert out["hr@10"] == 1.0
        assert out["ndcg@10"] == pytest.approx(1.0 / math.log2(8.0))

    def test_all_missed(self):
        out = topk_metrics([None, None], ks=(5,))
        assert out["hr@5"] == out["ndcg@5"] == 0.0

    def test_ndcg_bounded_by_hr_and_k_monotone(self):
        rng = np.random.default_rng(0)
        ranks = [int(r) if r < 15 else None for r in rng.integers(1, 20, 50)]
        out = topk_metrics(ranks, ks=(5, 10))
        assert out["ndcg@5"] <= out["hr@5"]
        assert out["ndcg@10"] <= out["hr@10"]
        assert out["hr@5"] <= out["hr@10"]
        assert out["ndcg@5"] <= out["ndcg@10"]

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            topk_metrics([])


class TestTrainAndEvaluate:
    def test_steps_zero_identity(self):
        grm = Grm(30, TINY, seed=12)
        out = train_grm(grm, [([3], [4])], steps=0)
        assert out is not grm
        for (k, a), (_, b) in zip(out.state_dict().items(), grm.state_dict().items()):
            assert torch.equal(a, b), k

    def test_deterministic(self):
        identifiers, vocab, _ = toy_world(n_items=6, seed=5)
        examples = [
            (vocab.item_tokens(identifiers[0]), vocab.item_tokens(identifiers[1])),
            (vocab.item_tokens(identifiers[2]), vocab.item_tokens(identifiers[3])),
        ]
        grm = Grm(vocab.size, TINY, seed=13)
        a = train_grm(grm, examples, steps=20, batch_size=4, seed=3)
        b = train_grm(grm, examples, steps=20, batch_size=4, seed=3)
        for (k, pa), (_, pb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(pa, pb), k

    def test_divergence_raises(self):
        grm = Grm(10, TINY, seed=14)
        with pytest.raises(RuntimeError, match="diverged"):
            train_grm(grm, [([3], [4])], steps=300, lr=1e8)

    def test_overfits_small_catalog_to_rank_one(self):
        identifiers, vocab, trie = toy_world(n_items=5, seed=6)
        pairs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]
        examples = [
            (encode_history([a], identifiers, vocab), vocab.item_tokens(identifiers[b]))
            for a, b in pairs
        ]
        grm = Grm(vocab.size, TINY, seed=15)
        trained = train_grm(grm, examples, steps=400, batch_size=5, lr=3e-3, seed=0)
        windows = [([a], b) for a, b in pairs]
        metrics, records = evaluate(
            trained, trie, windows, identifiers, vocab, ks=(1, 5), beam_size=5
        )
        assert metrics["hr@1"] == 1.0
        assert all(r.rank == 1 for r in records)

    def test_evaluate_consistent_with_recommend(self):
        identifiers, vocab, trie = toy_world(n_items=8, seed=7)
        grm = Grm(vocab.size, TINY, seed=16)
        windows = [([2, 3], 5), ([1], 0)]
        metrics, records = evaluate(grm, trie, windows, identifiers, vocab)
        assert metrics["n_users"] == 2.0
        for (ctx, target), rec in zip(windows, records):
            direct = recommend_batch(
                grm, trie, [encode_history(ctx, identifiers, vocab)], k=10, beam_size=10
            )[0]
            assert rec.recommended == [i for i, _ in direct]
            expected_rank = (
                rec.recommended.index(target) + 1 if target in rec.recommended else None
            )
            assert rec.rank == expected_rank
