"""Collaborative item vectors from skip-gram with negative sampling.

Each period gets its own table, trained on that period's user sequences and
warm-started from the previous period so an item's vector moves only as far
as its behavioural neighbourhood does. Rows are unit-normalized on output;
downstream code treats them as cosine-space anchors.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arrays import load_vector_table, save_vector_table
from .data import PeriodDataset

_CHUNK = 4096


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # logistic via tanh, stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _scatter_mean_step(table: np.ndarray, rows: np.ndarray, grads: np.ndarray,
                       eta: float) -> None:
    """Descend each touched row by the mean gradient of its occurrences.

    A popular item can appear hundreds of times in one chunk; stepping by the
    summed gradient would multiply its learning rate by that count and blow
    up small catalogs, so rows take one bounded mean step instead.
    """
    counts = np.bincount(rows, minlength=table.shape[0])[rows]
    np.add.at(table, rows, -eta * grads / counts[:, None])


@dataclass
class CfTable:
    """Unit-norm collaborative vectors keyed by item id."""

    ids: list[int]
    vectors: np.ndarray  # [n, dim] float32, unit rows

    def __post_init__(self) -> None:
        self._index = {int(i): j for j, i in enumerate(self.ids)}
        if self.vectors.shape[0] != len(self.ids):
            raise ValueError("one vector row per id required")

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __contains__(self, item: int) -> bool:
        return int(item) in self._index

    def vector(self, item: int) -> np.ndarray:
        return self.vectors[self._index[int(item)]]

    def matrix_for(self, items: list[int]) -> np.ndarray:
        """Stack vectors for the given items, in the given order."""
        return self.vectors[[self._index[int(i)] for i in items]]

    def save(self, prefix: str | Path) -> None:
        save_vector_table(prefix, self.ids, self.vectors)

    @classmethod
    def load(cls, prefix: str | Path) -> "CfTable":
        ids, matrix = load_vector_table(prefix)
        return cls(ids=ids, vectors=matrix)


def _skipgram_pairs(sequences: dict[int, list[int]], window: int) -> np.ndarray:
    """All (center, context) pairs within +-window inside each user sequence."""
    pairs = []
    for user in sorted(sequences):
        seq = sequences[user]
        for i, center in enumerate(seq):
            lo = max(0, i - window)
            for j in range(lo, min(len(seq), i + window + 1)):
                if j != i:
                    pairs.append((center, seq[j]))
    if not pairs:
        raise ValueError("no skip-gram pairs; sequences are too short")
    return np.asarray(pairs, dtype=np.int64)


def train_cf(
    period: PeriodDataset,
    dim: int = 32,
    window: int = 3,
    negatives: int = 5,
    epochs: int = 12,
    lr: float = 0.5,
    seed: int = 0,
    warm: CfTable | None = None,
) -> CfTable:
    """Train one period's table, optionally warm-started from the last one."""
    rng = np.random.default_rng(seed)
    ids = sorted(period.item_set)
    index = {i: j for j, i in enumerate(ids)}
    n = len(ids)

    w_in = (rng.random((n, dim)).astype(np.float64) - 0.5) / dim
    w_out = np.zeros((n, dim), dtype=np.float64)
    if warm is not None:
        if warm.dim != dim:
            raise ValueError(f"warm-start dim {warm.dim} != requested dim {dim}")
        for item, row in index.items():
            if item in warm:
                w_in[row] = warm.vector(item)

    pairs = _skipgram_pairs(period.user_sequences, window)
    pairs = np.stack([np.vectorize(index.__getitem__)(pairs[:, 0]),
                      np.vectorize(index.__getitem__)(pairs[:, 1])], axis=1)

    counts = np.bincount(pairs[:, 0], minlength=n).astype(np.float64)
    noise = counts**0.75
    noise /= noise.sum()

    n_pairs = len(pairs)
    total_steps = epochs * ((n_pairs + _CHUNK - 1) // _CHUNK)
    step = 0
    for _ in range(epochs):
        order = rng.permutation(n_pairs)
        for start in range(0, n_pairs, _CHUNK):
            chunk = pairs[order[start : start + _CHUNK]]
            centers, contexts = chunk[:, 0], chunk[:, 1]
            b = len(chunk)
            eta = lr * max(1.0 - step / total_steps, 0.05)
            step += 1

            neg = rng.choice(n, size=(b, negatives), p=noise)
            v = w_in[centers]  # [b, d]
            u_pos = w_out[contexts]
            u_neg = w_out[neg]  # [b, k, d]

            g_pos = _sigmoid(np.sum(v * u_pos, axis=1)) - 1.0  # [b]
            g_neg = _sigmoid(np.einsum("bd,bkd->bk", v, u_neg))  # [b, k]

            grad_v = g_pos[:, None] * u_pos + np.einsum("bk,bkd->bd", g_neg, u_neg)
            _scatter_mean_step(w_in, centers, grad_v, eta)
            _scatter_mean_step(w_out, contexts, g_pos[:, None] * v, eta)
            _scatter_mean_step(
                w_out,
                neg.reshape(-1),
                (g_neg[:, :, None] * v[:, None, :]).reshape(-1, dim),
                eta,
            )

    norms = np.linalg.norm(w_in, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return CfTable(ids=ids, vectors=(w_in / norms).astype(np.float32))


def cosine_shift(prev: CfTable, cur: CfTable) -> dict[int, float]:
    """Cosine similarity between each shared item's old and new vector."""
    shared = [i for i in cur.ids if i in prev]
    a = prev.matrix_for(shared).astype(np.float64)
    b = cur.matrix_for(shared).astype(np.float64)
    sims = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return {i: float(s) for i, s in zip(shared, sims)}


def ranking_auc(scores: dict[int, float], labels: dict[int, bool]) -> float:
    """AUC of scores against boolean labels over their shared keys.

    Computed from average ranks (Mann-Whitney), so ties contribute 0.5.
    """
    keys = [k for k in scores if k in labels]
    y = np.asarray([labels[k] for k in keys], dtype=bool)
    s = np.asarray([scores[k] for k in keys], dtype=np.float64)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s), dtype=np.float64)
    ranks[order] = np.arange(1, len(s) + 1)
    # average ranks within tied groups
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        if j > i:
            ranks[order[i : j + 1]] = 0.5 * (i + j) + 1
        i = j + 1
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
