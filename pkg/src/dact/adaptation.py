"""Continual tokenizer adaptation with a drift/stationary split.

Each period, items are scored by the pattern memory and the top fraction by
confidence form the drifting set; the rest are stationary. Drifting items
minimize the plain tokenizer loss against the newest collaborative vectors,
stationary items add an anchoring penalty toward their previous-period
representation. The hard membership mask is used in the forward pass, while
a straight-through gate lets both branch losses reach the confidence scores:
an item whose anchored (stationary) loss is hard to minimize pushes its own
confidence up, one that is cheap to keep stationary pushes it down. Two
global terms complete the objective: a KL penalty holding first-level
assignment distributions near the previous period's snapshot, and a mean
squared-confidence regularizer.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import numpy as np
import torch

from .cdim import PatternMemory, confidence_regularizer
from .cf import CfTable
from .tokenizer import Tokenizer


@dataclass
class LossWeights:
    """Weights of the continual adaptation objective."""

    cf: float = 0.02  # collaborative alignment inside both branch losses
    commitment: float = 0.25  # encoder-side quantization weight
    anchor: float = 1.0  # anchoring strength on stationary items
    stable: float = 0.1  # stationary branch weight in the total
    global_kl: float = 5.0  # first-level assignment stability weight
    reg: float = 0.001  # confidence regularizer weight
    k_ratio: float = 0.3  # fraction of each batch treated as drifting
    kl_temperature: float = 1.0  # temperature of the assignment distributions

    def validate(self) -> None:
        for name in ("cf", "commitment", "anchor", "stable", "global_kl", "reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 < self.k_ratio < 1.0:
            raise ValueError("k_ratio must lie strictly in (0, 1)")
        if self.kl_temperature <= 0:
            raise ValueError("kl_temperature must be positive")


@dataclass
class DriftPartition:
    """Hard drift/stationary split of one batch."""

    drift_items: list[int]
    stable_items: list[int]
    mask: torch.Tensor  # [B] bool, True on drifting rows

    def __post_init__(self) -> None:
        if set(self.drift_items) & set(self.stable_items):
            raise ValueError("drift and stationary sets must be disjoint")


def split_topk(
    confidences: torch.Tensor, items: list[int], k_ratio: float
) -> DriftPartition:
    """Top-ceil(k_ratio * B) items by confidence; ties go to lower item id."""
    if len(items) < 2:
        raise ValueError("need at least two items to split")
    if not 0.0 < k_ratio < 1.0:
        raise ValueError("k_ratio must lie strictly in (0, 1)")
    b = len(items)
    k = math.ceil(k_ratio * b)
    conf = confidences.detach().cpu().numpy().astype(np.float64)
    ids = np.asarray(items, dtype=np.int64)
    order = np.lexsort((ids, -conf))  # descending confidence, ascending id
    chosen = order[:k]
    mask = torch.zeros(b, dtype=torch.bool, device=confidences.device)
    mask[torch.from_numpy(np.ascontiguousarray(chosen))] = True
    return DriftPartition(
        drift_items=[items[i] for i in sorted(chosen)],
        stable_items=[items[i] for i in sorted(order[k:])],
        mask=mask,
    )


@dataclass
class AdaptationSnapshot:
    """Frozen view of the previous period's tokenizer on a fixed item list.

    ``r_prev`` rows are the assembled quantized representations and
    ``probs_prev`` the first-level assignment distributions, both computed
    once under the old parameters. Items new to the period simply run
    through the old tokenizer like everything else.
    """

    items: list[int]
    r_prev: torch.Tensor  # [n, d]
    probs_prev: torch.Tensor  # [n, M]

    def __post_init__(self) -> None:
        self._row = {int(it): j for j, it in enumerate(self.items)}

    def rows(self, items: list[int]) -> torch.Tensor:
        return torch.as_tensor([self._row[int(i)] for i in items])


@torch.no_grad()
def snapshot_state(
    tokenizer: Tokenizer,
    items: list[int],
    embeddings: dict[int, np.ndarray],
    kl_temperature: float,
    batch_size: int = 512,
) -> AdaptationSnapshot:
    z = torch.from_numpy(np.stack([embeddings[i] for i in items])).float()
    reps, probs = [], []
    for start in range(0, len(items), batch_size):
        chunk = z[start : start + batch_size]
        reps.append(tokenizer.tokenize(chunk).assembled)
        probs.append(tokenizer.level_one_probs(chunk, kl_temperature))
    return AdaptationSnapshot(
        items=list(items),
        r_prev=torch.cat(reps).clone(),
        probs_prev=torch.cat(probs).clone(),
    )


@dataclass
class ObjectiveTerms:
    """Scalar pieces of the adaptation objective for one batch."""

    drift: torch.Tensor
    stable: torch.Tensor
    global_kl: torch.Tensor
    reg: torch.Tensor
    total: torch.Tensor
    partition: DriftPartition
    confidences: torch.Tensor


def overall_objective(
    tokenizer: Tokenizer,
    memory: PatternMemory,
    z: torch.Tensor,
    h: torch.Tensor,
    r_prev: torch.Tensor,
    probs_prev: torch.Tensor,
    items: list[int],
    weights: LossWeights,
) -> ObjectiveTerms:
    """Assemble the full gated objective for one batch of items."""
    weights.validate()
    terms = tokenizer.loss_terms(z, h)
    per_item = terms.recon + terms.quant + weights.cf * terms.align
    anchor = (terms.result.assembled_ste - r_prev).pow(2).sum(dim=1)
    per_item_stable = per_item + weights.anchor * anchor

    conf = memory(r_prev, terms.result.assembled_ste, h)
    part = split_topk(conf, items, weights.k_ratio)
    m = part.mask.float()
    gate_drift = m + conf - conf.detach()
    gate_stable = (1.0 - m) + conf.detach() - conf

    n_d = int(part.mask.sum())
    n_s = len(items) - n_d
    zero = torch.zeros((), dtype=per_item.dtype)
    drift = (gate_drift * per_item).sum() / n_d if n_d else zero
    stable = (gate_stable * per_item_stable).sum() / n_s if n_s else zero

    logp_cur = tokenizer.level_one_log_probs(z, weights.kl_temperature)
    kl_rows = torch.special.xlogy(probs_prev, probs_prev) - probs_prev * logp_cur
    global_kl = kl_rows.sum(dim=1).mean()
    reg = confidence_regularizer(conf)

    total = drift + weights.stable * stable + weights.global_kl * global_kl + weights.reg * reg
    for name, value in (
        ("drift", drift), ("stable", stable), ("global_kl", global_kl), ("reg", reg),
    ):
        if not torch.isfinite(value):
            raise RuntimeError(f"adaptation objective term {name!r} is not finite")
    return ObjectiveTerms(
        drift=drift, stable=stable, global_kl=global_kl, reg=reg,
        total=total, partition=part, confidences=conf,
    )


@dataclass
class AdaptResult:
    tokenizer: Tokenizer
    memory: PatternMemory
    confidences: dict[int, float]
    partition: DriftPartition  # split of the full item list at the end


def adapt_period(
    tokenizer: Tokenizer,
    memory: PatternMemory,
    items: list[int],
    embeddings: dict[int, np.ndarray],
    cf_table: CfTable,
    weights: LossWeights | None = None,
    steps: int = 5000,
    batch_size: int = 64,
    lr: float = 1e-4,
    seed: int = 0,
) -> AdaptResult:
    """Run one period of drift-aware adaptation and return trained copies.

    The snapshot of previous-period representations and first-level
    assignment distributions is taken once, before any update, and stays
    constant. With ``steps=0`` the returned tokenizer and memory equal their
    inputs and only the confidences are computed.
    """
    weights = weights or LossWeights()
    weights.validate()
    items = list(items)
    snap = snapshot_state(tokenizer, items, embeddings, weights.kl_temperature)

    tok = copy.deepcopy(tokenizer)
    tok.config.commitment = weights.commitment
    tok.config.cf_weight = weights.cf
    mem = copy.deepcopy(memory)

    z_all = torch.from_numpy(np.stack([embeddings[i] for i in items])).float()
    h_all = torch.from_numpy(cf_table.matrix_for(items)).float()

    if steps > 0:
        gen = torch.Generator().manual_seed(seed)
        opt = torch.optim.AdamW(list(tok.parameters()) + list(mem.parameters()), lr=lr)
        n = len(items)
        take = min(batch_size, n)
        for _ in range(steps):
            idx = torch.randperm(n, generator=gen)[:take]
            rows = idx.tolist()
            out = overall_objective(
                tok, mem,
                z_all[idx], h_all[idx],
                snap.r_prev[idx], snap.probs_prev[idx],
                [items[i] for i in rows], weights,
            )
            opt.zero_grad()
            out.total.backward()
            opt.step()

    with torch.no_grad():
        conf_all = mem(snap.r_prev, tok.tokenize(z_all).assembled, h_all)
    confidences = {int(i): float(c) for i, c in zip(items, conf_all)}
    partition = split_topk(conf_all, items, weights.k_ratio)
    return AdaptResult(tokenizer=tok, memory=mem, confidences=confidences, partition=partition)
