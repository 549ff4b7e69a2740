"""Drift identification from collaborative-behaviour mismatch.

For each item we form a query out of three views of how its tokenized
representation relates to the current collaborative vector: the old
representation's elementwise product with it, the current one's, and the raw
representation delta. A small learnable slot memory (keys attended over,
values pooled) feeds a sigmoid head that emits a drift confidence in (0, 1).

The module trains end to end with the continual tokenizer objective; at
inference (scoring items for a report) it is a pure function of its inputs.
Memories are warm-started across periods so learned drift signatures carry
forward.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .arrays import load_arrays, save_arrays


@dataclass
class CdimConfig:
    n_slots: int = 32
    code_dim: int = 32  # query dim is three times this
    head_hidden: int = 32
    attn_temperature: float = 0.5

    @property
    def query_dim(self) -> int:
        return 3 * self.code_dim

    def validate(self) -> None:
        if self.n_slots < 1:
            raise ValueError("need at least one memory slot")
        if self.attn_temperature <= 0:
            raise ValueError("attn_temperature must be positive")


def build_query(
    r_prev: torch.Tensor, r_cur: torch.Tensor, h: torch.Tensor
) -> torch.Tensor:
    """Concatenate [r_prev * h, r_cur * h, r_cur - r_prev] per item.

    ``r_cur`` is detached here: drift confidence must read the current
    representation without steering it. ``h`` is unit-normalized so the
    products live on a comparable scale across items.
    """
    if not (r_prev.shape == r_cur.shape == h.shape):
        raise ValueError("r_prev, r_cur, h must share shape [B, d]")
    r_cur = r_cur.detach()
    h = F.normalize(h, dim=-1, eps=1e-12)
    return torch.cat([r_prev * h, r_cur * h, r_cur - r_prev], dim=-1)


class PatternMemory(nn.Module):
    """Learnable key/value slots plus the confidence head."""

    def __init__(self, config: CdimConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        gen = torch.Generator().manual_seed(seed)
        d = config.query_dim
        self.keys = nn.Parameter(torch.randn(config.n_slots, d, generator=gen) / d**0.5)
        self.values = nn.Parameter(torch.randn(config.n_slots, d, generator=gen) / d**0.5)
        self.head = nn.Sequential(
            nn.Linear(d, config.head_hidden), nn.Tanh(), nn.Linear(config.head_hidden, 1)
        )
        for p in self.head.parameters():
            if p.dim() >= 2:
                nn.init.kaiming_uniform_(p, a=5**0.5, generator=gen)
            else:
                nn.init.zeros_(p)

    def confidence(self, query: torch.Tensor) -> torch.Tensor:
        """Drift confidence per query row, each strictly inside (0, 1)."""
        attn = F.softmax(query @ self.keys.T / self.config.attn_temperature, dim=-1)
        pooled = attn @ self.values
        return torch.sigmoid(self.head(pooled).squeeze(-1))

    def forward(
        self, r_prev: torch.Tensor, r_cur: torch.Tensor, h: torch.Tensor
    ) -> torch.Tensor:
        return self.confidence(build_query(r_prev, r_cur, h))

    def warm_start(self, previous: "PatternMemory") -> None:
        """Copy a previous period's slots and head into this memory."""
        if previous.config.query_dim != self.config.query_dim or (
            previous.config.n_slots != self.config.n_slots
        ):
            raise ValueError("warm start requires matching slot geometry")
        self.load_state_dict(copy.deepcopy(previous.state_dict()))


def confidence_regularizer(confidences: torch.Tensor) -> torch.Tensor:
    """Mean squared confidence; keeps scores from saturating uninformatively."""
    return confidences.pow(2).mean()


def save_memory(directory: str | Path, memory: PatternMemory, period_index: int | None = None) -> None:
    arrays = {f"cdim.{k}": v.detach().cpu().numpy() for k, v in memory.state_dict().items()}
    cfg = memory.config
    hyper = {
        "kind": "cdim",
        "config": {
            "n_slots": cfg.n_slots,
            "code_dim": cfg.code_dim,
            "head_hidden": cfg.head_hidden,
            "attn_temperature": cfg.attn_temperature,
        },
    }
    save_arrays(directory, arrays, hyperparameters=hyper, period_index=period_index)


def load_memory(directory: str | Path) -> PatternMemory:
    arrays, manifest = load_arrays(directory)
    mem = PatternMemory(CdimConfig(**manifest["hyperparameters"]["config"]))
    state = {k.removeprefix("cdim."): torch.from_numpy(v.copy()) for k, v in arrays.items()}
    mem.load_state_dict(state)
    return mem
