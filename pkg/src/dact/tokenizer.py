"""Residual-quantizing item tokenizer with collaborative alignment.

An item's content embedding is encoded to a latent, then greedily quantized
against L codebooks: each level picks the nearest code, subtracts it, and
hands the residual to the next level. The code index path is the item's
identifier prefix; a dedup suffix separates items that share a full path.

Gradient routing follows the usual recipe for hard quantization:

* the chain subtracts detached code rows, so residuals are a function of the
  encoder alone;
* reconstruction and alignment losses see the assembled vector through a
  straight-through estimator (gradients reach the encoder, not codebooks);
* the quantization loss trains codebooks toward residuals (stopped) and
  commits the encoder toward its codes (commitment weight).
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .arrays import load_arrays, save_arrays


@dataclass
class TokenizerConfig:
    n_levels: int = 3
    codebook_size: int = 64
    code_dim: int = 32
    input_dim: int = 64
    hidden_dims: tuple[int, ...] = (128, 64)
    temperature: float = 1.0  # soft-assignment softmax temperature
    commitment: float = 0.25  # encoder-side weight inside the quantization loss
    cf_weight: float = 0.02  # collaborative alignment weight

    def validate(self) -> None:
        if self.n_levels < 1 or self.codebook_size < 2:
            raise ValueError("need at least one level and two codes")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass
class TokenizeResult:
    """Everything one forward tokenization produces."""

    codes: torch.Tensor  # [B, L] long
    latents: torch.Tensor  # [B, d] encoder output, first-level input
    assembled: torch.Tensor  # [B, d] sum of chosen code rows (codebook grads)
    assembled_ste: torch.Tensor  # [B, d] straight-through view (encoder grads)
    final_residual: torch.Tensor  # [B, d] what is left after the last level
    probs: list[torch.Tensor] = field(default_factory=list)  # per level [B, M]


@dataclass
class LossBreakdown:
    """Per-item loss vectors, each shaped [B]."""

    recon: torch.Tensor
    quant: torch.Tensor
    align: torch.Tensor
    result: TokenizeResult

    def total(self, cf_weight: float) -> torch.Tensor:
        return (self.recon + self.quant + cf_weight * self.align).mean()


def _mlp(dims: list[int]) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i, (a, b) in enumerate(zip(dims, dims[1:])):
        layers.append(nn.Linear(a, b))
        if i < len(dims) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


def _seed_module(module: nn.Module, gen: torch.Generator) -> None:
    for p in module.parameters():
        if p.dim() >= 2:
            nn.init.kaiming_uniform_(p, a=5**0.5, generator=gen)
        else:
            nn.init.uniform_(p, -0.05, 0.05, generator=gen)


class Tokenizer(nn.Module):
    """Encoder, decoder, and a stack of residual codebooks."""

    def __init__(self, config: TokenizerConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        gen = torch.Generator().manual_seed(seed)
        enc_dims = [config.input_dim, *config.hidden_dims, config.code_dim]
        self.encoder = _mlp(enc_dims)
        self.decoder = _mlp(list(reversed(enc_dims)))
        _seed_module(self.encoder, gen)
        _seed_module(self.decoder, gen)
        books = 0.1 * torch.randn(
            config.n_levels, config.codebook_size, config.code_dim, generator=gen
        )
        self.codebooks = nn.Parameter(books)

    def encode(self, z: torch.Tensor) -> torch.Tensor:
        return self.encoder(z)

    def assign_level(
        self, residual: torch.Tensor, level: int, temperature: float | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Nearest-code indices and soft assignment probabilities at a level.

        Ties on distance resolve to the lowest code index.
        """
        book = self.codebooks[level]  # [M, d]
        dist = torch.cdist(residual, book).pow(2)  # [B, M]
        temp = self.config.temperature if temperature is None else temperature
        probs = F.softmax(-dist / temp, dim=1)
        is_min = dist == dist.min(dim=1, keepdim=True).values
        idx = torch.arange(book.shape[0], device=dist.device).expand_as(dist)
        codes = torch.where(is_min, idx, book.shape[0]).min(dim=1).values
        return codes, probs

    def tokenize(self, z: torch.Tensor) -> TokenizeResult:
        """Run the residual chain over a batch of content embeddings."""
        v = self.encode(z)
        latents = v
        codes, probs = [], []
        assembled = torch.zeros_like(v)
        for level in range(self.config.n_levels):
            c, p = self.assign_level(v, level)
            codes.append(c)
            probs.append(p)
            chosen = self.codebooks[level][c]  # live rows: quantization loss path
            assembled = assembled + chosen
            v = v - chosen.detach()  # chain stays an encoder-only function
        assembled_ste = latents + (assembled - latents).detach()
        return TokenizeResult(
            codes=torch.stack(codes, dim=1),
            latents=latents,
            assembled=assembled,
            assembled_ste=assembled_ste,
            final_residual=v,
            probs=probs,
        )

    def level_one_probs(self, z: torch.Tensor, temperature: float) -> torch.Tensor:
        """Soft assignment at the first level under an explicit temperature."""
        _, probs = self.assign_level(self.encode(z), 0, temperature=temperature)
        return probs

    def level_one_log_probs(self, z: torch.Tensor, temperature: float) -> torch.Tensor:
        """Log of ``level_one_probs``, computed stably."""
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        dist = torch.cdist(self.encode(z), self.codebooks[0]).pow(2)
        return F.log_softmax(-dist / temperature, dim=1)

    def loss_terms(
        self, z: torch.Tensor, cf_vectors: torch.Tensor | None = None
    ) -> LossBreakdown:
        """Per-item reconstruction, quantization, and alignment losses.

        The alignment term is an in-batch contrastive loss: each item's
        collaborative vector should prefer its own assembled representation
        over every other item's. It couples items through the denominator, so
        it is zero for a batch of one and skipped when no vectors are given.
        """
        result = self.tokenize(z)
        recon = (z - self.decoder(result.assembled_ste)).pow(2).sum(dim=1)

        quant = torch.zeros_like(recon)
        v = result.latents
        for level in range(self.config.n_levels):
            chosen = self.codebooks[level][result.codes[:, level]]
            quant = quant + (v.detach() - chosen).pow(2).sum(dim=1)
            quant = quant + self.config.commitment * (v - chosen.detach()).pow(2).sum(dim=1)
            v = v - chosen.detach()

        if cf_vectors is None:
            align = torch.zeros_like(recon)
        else:
            r = F.normalize(result.assembled_ste, dim=1, eps=1e-12)
            h = F.normalize(cf_vectors, dim=1, eps=1e-12)
            sim = r @ h.T  # sim[j, i] = cos(r_j, h_i)
            align = -(sim.diagonal() - torch.logsumexp(sim, dim=0))
        return LossBreakdown(recon=recon, quant=quant, align=align, result=result)


def _data_init_codebooks(
    tok: Tokenizer, z: torch.Tensor, gen: torch.Generator
) -> None:
    """Seed each level's codebook from actual residuals at that level."""
    with torch.no_grad():
        v = tok.encode(z)
        m = tok.config.codebook_size
        for level in range(tok.config.n_levels):
            pick = torch.randint(0, v.shape[0], (m,), generator=gen)
            noise = 0.01 * torch.randn(m, v.shape[1], generator=gen)
            tok.codebooks[level] = v[pick] + noise
            c, _ = tok.assign_level(v, level)
            v = v - tok.codebooks[level][c]


def _reseed_dead_codes(
    tok: Tokenizer, usage: torch.Tensor, z: torch.Tensor, gen: torch.Generator
) -> int:
    """Move never-used code rows onto random residuals seen at their level."""
    reseeded = 0
    with torch.no_grad():
        v = tok.encode(z)
        for level in range(tok.config.n_levels):
            dead = torch.nonzero(usage[level] == 0).flatten()
            if len(dead) > 0:
                pick = torch.randint(0, v.shape[0], (len(dead),), generator=gen)
                noise = 0.01 * torch.randn(len(dead), v.shape[1], generator=gen)
                tok.codebooks[level][dead] = v[pick] + noise
                reseeded += len(dead)
            c, _ = tok.assign_level(v, level)
            v = v - tok.codebooks[level][c]
    return reseeded


def pretrain(
    tokenizer: Tokenizer,
    embeddings: torch.Tensor,
    cf_matrix: torch.Tensor | None = None,
    steps: int = 6000,
    batch_size: int = 64,
    lr: float = 1e-3,
    seed: int = 0,
    reseed_every: int | None = 200,
    data_init: bool = True,
) -> Tokenizer:
    """Train a copy of the tokenizer on an item corpus and return it.

    ``embeddings`` is the [n, input_dim] content matrix; ``cf_matrix`` the
    row-aligned collaborative vectors (optional). With ``steps=0`` this is an
    identity: the returned copy equals the input parameter for parameter.
    Dead codes are periodically reseeded onto live residuals so the whole
    codebook stays in play; pass ``reseed_every=None`` together with
    ``data_init=False`` to get a plain fine-tune of the given parameters.
    """
    tok = copy.deepcopy(tokenizer)
    if steps <= 0:
        return tok
    gen = torch.Generator().manual_seed(seed)
    if data_init:
        _data_init_codebooks(tok, embeddings, gen)
    opt = torch.optim.AdamW(tok.parameters(), lr=lr)
    n = embeddings.shape[0]
    usage = torch.zeros(tok.config.n_levels, tok.config.codebook_size, dtype=torch.long)
    use_cf = cf_matrix is not None and tok.config.cf_weight > 0

    for step in range(steps):
        idx = torch.randint(0, n, (min(batch_size, n),), generator=gen)
        batch = embeddings[idx]
        terms = tok.loss_terms(batch, cf_matrix[idx] if use_cf else None)
        loss = terms.total(tok.config.cf_weight if use_cf else 0.0)
        if not torch.isfinite(loss):
            raise RuntimeError(f"tokenizer pretraining diverged at step {step}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        for level in range(tok.config.n_levels):
            usage[level].index_add_(
                0, terms.result.codes[:, level], torch.ones(len(idx), dtype=torch.long)
            )
        if reseed_every is not None and (step + 1) % reseed_every == 0:
            _reseed_dead_codes(tok, usage, embeddings, gen)
            usage.zero_()
    return tok


@torch.no_grad()
def tokenize_items(
    tokenizer: Tokenizer, embeddings: torch.Tensor, batch_size: int = 512
) -> np.ndarray:
    """Code paths for an item matrix, shape [n, L], computed in batches."""
    out = []
    for start in range(0, embeddings.shape[0], batch_size):
        out.append(tokenizer.tokenize(embeddings[start : start + batch_size]).codes)
    return torch.cat(out).cpu().numpy()


def dedup_suffixes(items: list[int], codes: np.ndarray) -> dict[int, tuple[int, ...]]:
    """Append a per-path suffix so every identifier is unique.

    Items sharing a full code path get suffixes 0, 1, 2, ... in item-id
    order, which keeps the assignment reproducible.
    """
    order = np.argsort(np.asarray(items, dtype=np.int64), kind="mergesort")
    taken: dict[tuple[int, ...], int] = {}
    ids: dict[int, tuple[int, ...]] = {}
    for row in order:
        path = tuple(int(c) for c in codes[row])
        suffix = taken.get(path, 0)
        taken[path] = suffix + 1
        ids[items[row]] = path + (suffix,)
    return ids


def assign_identifiers(
    tokenizer: Tokenizer, items: list[int], embeddings: dict[int, np.ndarray]
) -> dict[int, tuple[int, ...]]:
    """Full identifiers (L code levels + dedup suffix) for the given items."""
    if not items:
        return {}
    z = torch.from_numpy(np.stack([embeddings[i] for i in items])).float()
    codes = tokenize_items(tokenizer, z)
    return dedup_suffixes(list(items), codes)


def write_identifiers(path: str | Path, identifiers: dict[int, tuple[int, ...]]) -> None:
    """Write ``item<TAB>c1,...,cL,suffix`` rows, sorted by item id."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for item in sorted(identifiers):
            fh.write(f"{item}\t{','.join(str(c) for c in identifiers[item])}\n")


def save_tokenizer(directory: str | Path, tokenizer: Tokenizer, period_index: int | None = None) -> None:
    arrays = {f"tokenizer.{k}": v.detach().cpu().numpy() for k, v in tokenizer.state_dict().items()}
    cfg = tokenizer.config
    hyper = {
        "kind": "tokenizer",
        "config": {
            "n_levels": cfg.n_levels,
            "codebook_size": cfg.codebook_size,
            "code_dim": cfg.code_dim,
            "input_dim": cfg.input_dim,
            "hidden_dims": list(cfg.hidden_dims),
            "temperature": cfg.temperature,
            "commitment": cfg.commitment,
            "cf_weight": cfg.cf_weight,
        },
    }
    save_arrays(directory, arrays, hyperparameters=hyper, period_index=period_index)


def load_tokenizer(directory: str | Path) -> Tokenizer:
    arrays, manifest = load_arrays(directory)
    raw = manifest["hyperparameters"]["config"]
    raw["hidden_dims"] = tuple(raw["hidden_dims"])
    tok = Tokenizer(TokenizerConfig(**raw))
    state = {k.removeprefix("tokenizer."): torch.from_numpy(v.copy()) for k, v in arrays.items()}
    tok.load_state_dict(state)
    return tok
