"""Generative recommender over identifier tokens.

Items are referenced by their hierarchical identifiers, flattened into a
token stream: a user's history is the concatenation of the identifier tokens
of the items they interacted with, and recommendation is autoregressive
generation of the next identifier, beam-searched under a trie so only
sequences that decode to real items are ever produced.

The vocabulary is position-structured: one token per (level, code) pair plus
a growable block of dedup-suffix tokens, and the special PAD/BOS/EOS ids.
Vocabulary growth only appends rows, so existing token embeddings keep their
meaning across periods.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .arrays import load_arrays, save_arrays

PAD, BOS, EOS = 0, 1, 2
_LEAF = -1


class TokenVocab:
    """Maps identifier components to token ids and back."""

    def __init__(self, n_levels: int, codebook_size: int, n_suffixes: int = 1):
        if n_suffixes < 1:
            raise ValueError("need at least one suffix token")
        self.n_levels = n_levels
        self.codebook_size = codebook_size
        self.n_suffixes = n_suffixes

    @property
    def size(self) -> int:
        return 3 + self.n_levels * self.codebook_size + self.n_suffixes

    def code_token(self, level: int, code: int) -> int:
        if not 0 <= code < self.codebook_size or not 0 <= level < self.n_levels:
            raise ValueError(f"code {code} at level {level} outside vocabulary")
        return 3 + level * self.codebook_size + code

    def suffix_token(self, suffix: int) -> int:
        if not 0 <= suffix < self.n_suffixes:
            raise ValueError(f"suffix {suffix} outside vocabulary")
        return 3 + self.n_levels * self.codebook_size + suffix

    def item_tokens(self, identifier: tuple[int, ...]) -> list[int]:
        """Token sequence of one identifier: L code tokens plus the suffix."""
        if len(identifier) != self.n_levels + 1:
            raise ValueError("identifier must have one entry per level plus a suffix")
        tokens = [self.code_token(level, c) for level, c in enumerate(identifier[:-1])]
        tokens.append(self.suffix_token(identifier[-1]))
        return tokens

    def ensure_suffixes(self, identifiers: dict[int, tuple[int, ...]]) -> None:
        """Grow the suffix block to cover every suffix in the map."""
        if identifiers:
            self.n_suffixes = max(self.n_suffixes, max(i[-1] for i in identifiers.values()) + 1)


class IdentifierTrie:
    """Prefix tree over identifier token sequences, one leaf per item."""

    def __init__(self, identifiers: dict[int, tuple[int, ...]], vocab: TokenVocab):
        self.depth = vocab.n_levels + 1
        self.root: dict = {}
        for item in sorted(identifiers):
            node = self.root
            for token in vocab.item_tokens(identifiers[item]):
                node = node.setdefault(token, {})
            if _LEAF in node:
                raise ValueError(f"duplicate identifier for items {node[_LEAF]} and {item}")
            node[_LEAF] = item

    def children(self, node: dict) -> list[int]:
        return sorted(t for t in node if t != _LEAF)

    def item_at(self, node: dict) -> int:
        return node[_LEAF]


def encode_history(
    items: list[int],
    identifiers: dict[int, tuple[int, ...]],
    vocab: TokenVocab,
    max_items: int = 10,
) -> list[int]:
    """Flatten the most recent ``max_items`` items into identifier tokens."""
    tokens: list[int] = []
    for item in items[-max_items:]:
        tokens.extend(vocab.item_tokens(identifiers[item]))
    return tokens


@dataclass
class GrmConfig:
    width: int = 128
    n_layers: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    max_seq: int = 128


class _Block(nn.Module):
    def __init__(self, config: GrmConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.width)
        self.attn = nn.MultiheadAttention(config.width, config.n_heads, batch_first=True)
        self.ln2 = nn.LayerNorm(config.width)
        self.ff = nn.Sequential(
            nn.Linear(config.width, config.ff_mult * config.width),
            nn.GELU(),
            nn.Linear(config.ff_mult * config.width, config.width),
        )

    def forward(self, x: torch.Tensor, causal: torch.Tensor) -> torch.Tensor:
        h = self.ln1(x)
        a, _ = self.attn(h, h, h, attn_mask=causal, need_weights=False)
        x = x + a
        return x + self.ff(self.ln2(x))


class Grm(nn.Module):
    """Decoder-only transformer with a tied input/output embedding."""

    def __init__(self, vocab_size: int, config: GrmConfig | None = None, seed: int = 0):
        super().__init__()
        self.config = config or GrmConfig()
        gen = torch.Generator().manual_seed(seed)
        self.token_emb = nn.Parameter(
            0.02 * torch.randn(vocab_size, self.config.width, generator=gen)
        )
        self.pos_emb = nn.Parameter(
            0.02 * torch.randn(self.config.max_seq, self.config.width, generator=gen)
        )
        self.blocks = nn.ModuleList(_Block(self.config) for _ in range(self.config.n_layers))
        self.ln_f = nn.LayerNorm(self.config.width)
        for name, p in self.named_parameters():
            if "emb" in name:
                continue
            if p.dim() >= 2:
                nn.init.kaiming_uniform_(p, a=5**0.5, generator=gen)
            elif "bias" in name:
                nn.init.zeros_(p)

    @property
    def vocab_size(self) -> int:
        return self.token_emb.shape[0]

    def grow_vocab(self, new_size: int, seed: int = 0) -> None:
        """Append embedding rows for new tokens; existing rows are kept."""
        if new_size < self.vocab_size:
            raise ValueError("vocabulary can only grow")
        if new_size == self.vocab_size:
            return
        gen = torch.Generator().manual_seed(seed)
        extra = 0.02 * torch.randn(
            new_size - self.vocab_size, self.config.width, generator=gen
        )
        self.token_emb = nn.Parameter(torch.cat([self.token_emb.data, extra]))

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        b, t = tokens.shape
        if t > self.config.max_seq:
            raise ValueError(f"sequence length {t} exceeds max_seq {self.config.max_seq}")
        x = self.token_emb[tokens] + self.pos_emb[:t]
        causal = torch.triu(torch.ones(t, t, dtype=torch.bool), diagonal=1)
        for block in self.blocks:
            x = block(x, causal)
        return self.ln_f(x) @ self.token_emb.T


def _pad_batch(rows: list[list[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    """Right-pad token rows; also return each row's last real index."""
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), PAD, dtype=torch.long)
    last = torch.empty(len(rows), dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.as_tensor(r)
        last[i] = len(r) - 1
    return out, last


def train_grm(
    grm: Grm,
    examples: list[tuple[list[int], list[int]]],
    steps: int = 1000,
    batch_size: int = 48,
    lr: float = 1e-3,
    seed: int = 0,
) -> Grm:
    """Train a copy on (context tokens, target tokens) examples and return it.

    Each example becomes ``[BOS] ctx [EOS] target``; the loss covers only the
    target-token positions, i.e. the model is asked to spell out the next
    item's identifier after the end-of-history marker. ``steps=0`` returns an
    untouched copy.
    """
    model = copy.deepcopy(grm)
    if steps <= 0 or not examples:
        return model
    gen = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr)
    for step in range(steps):
        idx = torch.randint(0, len(examples), (batch_size,), generator=gen)
        seqs, starts = [], []
        for i in idx.tolist():
            ctx, tgt = examples[i]
            seqs.append([BOS, *ctx, EOS, *tgt])
            starts.append(1 + len(ctx) + 1)  # index of the first target token
        tokens, _ = _pad_batch(seqs)
        logits = model(tokens[:, :-1])
        labels = tokens[:, 1:]
        mask = torch.zeros_like(labels, dtype=torch.bool)
        for row, (start, seq) in enumerate(zip(starts, seqs)):
            mask[row, start - 1 : len(seq) - 1] = True
        loss = F.cross_entropy(logits[mask], labels[mask])
        if not torch.isfinite(loss):
            raise RuntimeError(f"recommender training diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
    return model


@torch.no_grad()
def recommend_batch(
    grm: Grm,
    trie: IdentifierTrie,
    contexts: list[list[int]],
    k: int = 10,
    beam_size: int = 10,
    chunk_rows: int = 512,
) -> list[list[tuple[int, float]]]:
    """Trie-constrained beam search for a batch of users.

    Returns, per user, up to ``k`` (item, sequence log-probability) pairs in
    descending score order. Ties break toward the lexicographically smaller
    token path, which makes results independent of batch composition.
    """
    grm.eval()
    prefixes = [[BOS, *ctx, EOS] for ctx in contexts]
    # beams per user: (score, path tokens, trie node)
    beams: list[list[tuple[float, list[int], dict]]] = [
        [(0.0, [], trie.root)] for _ in contexts
    ]
    for _ in range(trie.depth):
        rows, owners = [], []
        for u, user_beams in enumerate(beams):
            for b, (_, path, _) in enumerate(user_beams):
                rows.append(prefixes[u] + path)
                owners.append((u, b))
        logp_rows = []
        for start in range(0, len(rows), chunk_rows):
            tokens, last = _pad_batch(rows[start : start + chunk_rows])
            logits = grm(tokens)
            at_last = logits[torch.arange(len(last)), last]
            logp_rows.append(F.log_softmax(at_last.double(), dim=-1))
        logp = torch.cat(logp_rows)

        candidates: list[list[tuple[float, list[int], dict]]] = [[] for _ in contexts]
        for row, (u, b) in enumerate(owners):
            score, path, node = beams[u][b]
            for token in trie.children(node):
                candidates[u].append(
                    (score + float(logp[row, token]), path + [token], node[token])
                )
        for u, cand in enumerate(candidates):
            cand.sort(key=lambda c: (-c[0], c[1]))
            beams[u] = cand[:beam_size]

    results = []
    for user_beams in beams:
        results.append([(trie.item_at(node), score) for score, _, node in user_beams[:k]])
    return results


def topk_metrics(ranks: list[int | None], ks: tuple[int, ...] = (5, 10)) -> dict[str, float]:
    """HR@k and NDCG@k from 1-based target ranks (None = not retrieved)."""
    if not ranks:
        raise ValueError("no ranks to aggregate")
    out: dict[str, float] = {}
    arr = np.array([r if r is not None else np.inf for r in ranks], dtype=np.float64)
    for k in ks:
        hit = arr <= k
        out[f"hr@{k}"] = float(hit.mean())
        gains = np.zeros_like(arr)
        gains[hit] = 1.0 / np.log2(arr[hit] + 1)
        out[f"ndcg@{k}"] = float(gains.mean())
    return out


@dataclass
class EvalRecord:
    """One user's evaluation outcome."""

    target: int
    recommended: list[int]
    rank: int | None  # 1-based position of the target, None if missed


def evaluate(
    grm: Grm,
    trie: IdentifierTrie,
    windows: list[tuple[list[int], int]],
    identifiers: dict[int, tuple[int, ...]],
    vocab: TokenVocab,
    ks: tuple[int, ...] = (5, 10),
    beam_size: int = 10,
    max_items: int = 10,
    batch_users: int = 64,
) -> tuple[dict[str, float], list[EvalRecord]]:
    """Rank each window's target via beam search and aggregate HR/NDCG."""
    records: list[EvalRecord] = []
    for start in range(0, len(windows), batch_users):
        chunk = windows[start : start + batch_users]
        contexts = [encode_history(ctx, identifiers, vocab, max_items) for ctx, _ in chunk]
        recs = recommend_batch(grm, trie, contexts, k=max(ks), beam_size=beam_size)
        for (ctx, target), rec in zip(chunk, recs):
            items = [item for item, _ in rec]
            rank = items.index(target) + 1 if target in items else None
            records.append(EvalRecord(target=target, recommended=items, rank=rank))
    metrics = topk_metrics([r.rank for r in records], ks)
    metrics["n_users"] = float(len(records))
    return metrics, records


def save_grm(directory, grm: Grm, period_index: int | None = None) -> None:
    arrays = {f"grm.{k}": v.detach().cpu().numpy() for k, v in grm.state_dict().items()}
    cfg = grm.config
    hyper = {
        "kind": "grm",
        "vocab_size": grm.vocab_size,
        "config": {
            "width": cfg.width,
            "n_layers": cfg.n_layers,
            "n_heads": cfg.n_heads,
            "ff_mult": cfg.ff_mult,
            "max_seq": cfg.max_seq,
        },
    }
    save_arrays(directory, arrays, hyperparameters=hyper, period_index=period_index)


def load_grm(directory) -> Grm:
    arrays, manifest = load_arrays(directory)
    hyper = manifest["hyperparameters"]
    model = Grm(hyper["vocab_size"], GrmConfig(**hyper["config"]))
    state = {k.removeprefix("grm."): torch.from_numpy(v.copy()) for k, v in arrays.items()}
    model.load_state_dict(state)
    return model
