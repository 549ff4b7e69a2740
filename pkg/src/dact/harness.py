"""Period-wise experiment harness.

One run walks the five-period protocol for each requested seed and mode:
period 0 pretrains the collaborative vectors, tokenizer, and recommender
(shared by every mode of that seed), then periods 1-4 update state according
to the mode and evaluate on that period's held-out targets.

Modes:

* ``frozen``  - nothing updates; new items get identifiers from the frozen
  tokenizer.
* ``ft-tok``  - the tokenizer is naively fine-tuned each period and every
  known item is retokenized from scratch; the recommender is frozen.
* ``ft-grm``  - the recommender is fine-tuned each period; identifiers stay
  frozen-extended.
* ``ft-both`` - naive tokenizer fine-tune plus recommender fine-tune.
* ``dact``    - drift-aware adaptation, conditional reassignment, and a
  recommender fine-tune.

Every period/mode writes one JSON report; a completed (seed, mode) pair is
skipped on rerun, so interrupted runs resume where they stopped.
"""

from __future__ import annotations

import copy
import json
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch

from .adaptation import LossWeights, adapt_period
from .cdim import CdimConfig, PatternMemory
from .cf import CfTable, ranking_auc, train_cf
from .data import (
    DriftSpec,
    PeriodDataset,
    build_training_windows,
    generate_synthetic,
    ingest_tsv,
    load_dataset,
)
from .grm import (
    Grm,
    GrmConfig,
    IdentifierTrie,
    TokenVocab,
    encode_history,
    evaluate,
    load_grm,
    save_grm,
    train_grm,
)
from .reassign import ReassignmentReport, change_report, extend_identifiers, reassign
from .tokenizer import (
    Tokenizer,
    TokenizerConfig,
    assign_identifiers,
    load_tokenizer,
    pretrain,
    save_tokenizer,
    write_identifiers,
)

ALL_MODES = ("frozen", "ft-tok", "ft-grm", "ft-both", "dact")


@dataclass
class RunConfig:
    """Flat bundle of every knob one experiment needs."""

    out_dir: str = "runs/out"
    modes: tuple[str, ...] = ALL_MODES
    seeds: tuple[int, ...] = (0,)
    with_grm: bool = True  # False runs the tokenizer lane only (no evals)

    # data
    source: str = "synthetic"  # or "tsv" / "dataset"
    data_path: str | None = None
    embeddings_path: str | None = None
    min_count: int = 5
    n_users: int = 200
    n_items: int = 200
    n_clusters: int = 8
    drift_fraction: float = 0.2
    drift_period: int = 2
    popularity_shift: float = 0.5
    events_per_user: int = 60
    within_noise: float = 0.1
    cold_item_fraction: float = 0.05
    new_user_fraction: float = 0.05
    d_sem: int = 64
    embed_noise: float = 0.1

    # collaborative vectors
    cf_dim: int = 32
    cf_window: int = 3
    cf_negatives: int = 5
    cf_epochs: int = 12
    cf_lr: float = 0.5

    # tokenizer
    n_levels: int = 3
    codebook_size: int = 64
    code_dim: int = 32
    temperature: float = 1.0
    pretrain_steps: int = 6000
    pretrain_lr: float = 1e-3
    tokenizer_batch: int = 64

    # adaptation (and the naive fine-tune baseline, same step budget)
    adapt_steps: int = 5000
    adapt_lr: float = 1e-4
    adapt_batch: int = 64
    n_slots: int = 32
    head_hidden: int = 32
    attn_temperature: float = 0.5

    # objective weights
    cf_weight: float = 0.02
    commitment: float = 0.25
    anchor: float = 1.0
    stable: float = 0.1
    global_kl: float = 5.0
    reg: float = 0.001
    k_ratio: float = 0.3
    kl_temperature: float = 1.0

    # recommender
    grm_width: int = 128
    grm_layers: int = 2
    grm_heads: int = 4
    grm_steps: int = 1000
    grm_lr: float = 1e-3
    grm_ft_steps: int = 300
    grm_ft_lr: float = 1e-4
    grm_batch: int = 48
    max_context_items: int = 10
    beam_size: int = 10
    eval_ks: tuple[int, ...] = (5, 10)

    _SECTIONS = ("data", "cf", "tokenizer", "adaptation", "weights", "grm")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "RunConfig":
        """Build from a (possibly nested) TOML-style mapping; unknown keys fail."""
        flat: dict = {}
        for key, value in mapping.items():
            if key in cls._SECTIONS:
                if not isinstance(value, dict):
                    raise ValueError(f"section {key!r} must be a table")
                flat.update(value)
            else:
                flat[key] = value
        known = {f.name for f in fields(cls) if not f.name.startswith("_")}
        unknown = set(flat) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for name in ("modes", "seeds", "eval_ks"):
            if name in flat:
                flat[name] = tuple(flat[name])
        cfg = cls(**flat)
        for mode in cfg.modes:
            if mode not in ALL_MODES:
                raise ValueError(f"unknown mode {mode!r}; choose from {ALL_MODES}")
        return cfg

    @classmethod
    def from_toml(cls, path: str | Path) -> "RunConfig":
        if sys.version_info >= (3, 11):
            import tomllib as toml
        else:
            import tomli as toml
        with Path(path).open("rb") as fh:
            return cls.from_mapping(toml.load(fh))

    def drift_spec(self, seed: int) -> DriftSpec:
        return DriftSpec(
            n_users=self.n_users, n_items=self.n_items, n_clusters=self.n_clusters,
            drift_fraction=self.drift_fraction, drift_period=self.drift_period,
            popularity_shift=self.popularity_shift, seed=seed,
            events_per_user=self.events_per_user, within_noise=self.within_noise,
            cold_item_fraction=self.cold_item_fraction,
            new_user_fraction=self.new_user_fraction, d_sem=self.d_sem,
            embed_noise=self.embed_noise,
        )

    def tokenizer_config(self) -> TokenizerConfig:
        return TokenizerConfig(
            n_levels=self.n_levels, codebook_size=self.codebook_size,
            code_dim=self.code_dim, input_dim=self.d_sem,
            temperature=self.temperature, commitment=self.commitment,
            cf_weight=self.cf_weight,
        )

    def cdim_config(self) -> CdimConfig:
        return CdimConfig(
            n_slots=self.n_slots, code_dim=self.code_dim,
            head_hidden=self.head_hidden, attn_temperature=self.attn_temperature,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            cf=self.cf_weight, commitment=self.commitment, anchor=self.anchor,
            stable=self.stable, global_kl=self.global_kl, reg=self.reg,
            k_ratio=self.k_ratio, kl_temperature=self.kl_temperature,
        )

    def grm_config(self) -> GrmConfig:
        return GrmConfig(width=self.grm_width, n_layers=self.grm_layers, n_heads=self.grm_heads)


def load_run_data(
    config: RunConfig, seed: int
) -> tuple[list[PeriodDataset], dict[int, bool] | None, dict[int, np.ndarray]]:
    """Materialize periods, optional drift labels, and item embeddings."""
    if config.source == "synthetic":
        return generate_synthetic(config.drift_spec(seed))
    if config.source == "dataset":
        periods, labels, embeddings = load_dataset(config.data_path)
    elif config.source == "tsv":
        periods, _, _ = ingest_tsv(config.data_path, min_count=config.min_count)
        labels, embeddings = None, None
    else:
        raise ValueError(f"unknown data source {config.source!r}")
    if embeddings is None:
        # no content features available: seeded random stand-ins
        rng = np.random.default_rng(seed)
        all_items = sorted(set().union(*(p.item_set for p in periods)))
        embeddings = {
            i: rng.normal(size=config.d_sem).astype(np.float32) for i in all_items
        }
    return periods, labels, embeddings


def _item_matrix(items: list[int], embeddings: dict[int, np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack([embeddings[i] for i in items])).float()


@torch.no_grad()
def mean_alignment(
    tokenizer: Tokenizer,
    items: list[int],
    embeddings: dict[int, np.ndarray],
    cf_table: CfTable,
) -> float:
    """Mean cosine between assembled representations and current CF vectors."""
    items = [i for i in items if i in cf_table]
    r = tokenizer.tokenize(_item_matrix(items, embeddings)).assembled
    h = torch.from_numpy(cf_table.matrix_for(items)).float()
    r = torch.nn.functional.normalize(r, dim=1, eps=1e-12)
    h = torch.nn.functional.normalize(h, dim=1, eps=1e-12)
    return float((r * h).sum(dim=1).mean())


@torch.no_grad()
def _representation_pca(
    tokenizer: Tokenizer,
    items: list[int],
    embeddings: dict[int, np.ndarray],
    labels: dict[int, bool] | None,
) -> dict:
    """Project assembled representations to 2-D for the report scatter."""
    r = tokenizer.tokenize(_item_matrix(items, embeddings)).assembled.numpy()
    centered = r - r.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    xy = centered @ vt[:2].T
    out = {"items": [int(i) for i in items], "xy": np.round(xy, 4).tolist()}
    if labels is not None:
        out["drifting"] = [bool(labels.get(i, False)) for i in items]
    return out


def _grm_examples(
    period: PeriodDataset,
    identifiers: dict[int, tuple[int, ...]],
    vocab: TokenVocab,
    max_items: int,
) -> list[tuple[list[int], list[int]]]:
    windows = build_training_windows(period, "train", max_len=max_items)
    return [
        (encode_history(ctx, identifiers, vocab, max_items), vocab.item_tokens(identifiers[t]))
        for ctx, t in windows
    ]


@dataclass
class SeedState:
    """Mutable state threaded through one mode's period loop."""

    tokenizer: Tokenizer
    memory: PatternMemory
    grm: Grm | None
    vocab: TokenVocab | None
    identifiers: dict[int, tuple[int, ...]]


@dataclass
class SharedP0:
    periods: list[PeriodDataset]
    labels: dict[int, bool] | None
    embeddings: dict[int, np.ndarray]
    cf_tables: list[CfTable]
    tokenizer: Tokenizer
    grm: Grm | None
    vocab: TokenVocab | None
    identifiers: dict[int, tuple[int, ...]]
    warm_items: set[int]
    p0_report: dict


def _evaluate_period(
    config: RunConfig,
    state: SeedState,
    period: PeriodDataset,
    warm_items: set[int],
) -> dict:
    trie = IdentifierTrie(state.identifiers, state.vocab)
    windows = build_training_windows(period, "test", max_len=config.max_context_items)
    metrics, records = evaluate(
        state.grm, trie, windows, state.identifiers, state.vocab,
        ks=config.eval_ks, beam_size=config.beam_size,
        max_items=config.max_context_items,
    )
    out = {"metrics": metrics}
    warm_ranks = [r.rank for r in records if r.target in warm_items]
    cold_ranks = [r.rank for r in records if r.target not in warm_items]
    from .grm import topk_metrics

    out["warm"] = topk_metrics(warm_ranks, config.eval_ks) if warm_ranks else None
    out["cold"] = topk_metrics(cold_ranks, config.eval_ks) if cold_ranks else None
    return out


def _write_report(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _prepare_shared(config: RunConfig, seed: int, seed_dir: Path) -> SharedP0:
    periods, labels, embeddings = load_run_data(config, seed)
    ckpt = seed_dir / "checkpoints"

    cf_tables: list[CfTable] = []
    for p in periods:
        prefix = ckpt / f"cf_p{p.period_index}"
        if Path(str(prefix) + ".json").exists():
            cf_tables.append(CfTable.load(prefix))
            continue
        table = train_cf(
            p, dim=config.cf_dim, window=config.cf_window,
            negatives=config.cf_negatives, epochs=config.cf_epochs,
            lr=config.cf_lr, seed=seed * 100 + p.period_index,
            warm=cf_tables[-1] if cf_tables else None,
        )
        table.save(prefix)
        cf_tables.append(table)

    items0 = sorted(periods[0].item_set)
    tok_dir = ckpt / "tokenizer_p0"
    if (tok_dir / "manifest.json").exists():
        tokenizer = load_tokenizer(tok_dir)
    else:
        base = Tokenizer(config.tokenizer_config(), seed=seed * 100 + 1)
        tokenizer = pretrain(
            base, _item_matrix(items0, embeddings),
            torch.from_numpy(cf_tables[0].matrix_for(items0)).float(),
            steps=config.pretrain_steps, batch_size=config.tokenizer_batch,
            lr=config.pretrain_lr, seed=seed * 100 + 2,
        )
        save_tokenizer(tok_dir, tokenizer, period_index=0)

    identifiers = assign_identifiers(tokenizer, items0, embeddings)
    write_identifiers(seed_dir / "identifiers" / "period_0.tsv", identifiers)

    grm = vocab = None
    p0_report: dict = {"period": 0, "seed": seed}
    if config.with_grm:
        vocab = TokenVocab(config.n_levels, config.codebook_size)
        vocab.ensure_suffixes(identifiers)
        grm_dir = ckpt / "grm_p0"
        if (grm_dir / "manifest.json").exists():
            grm = load_grm(grm_dir)
        else:
            grm = train_grm(
                Grm(vocab.size, config.grm_config(), seed=seed * 100 + 3),
                _grm_examples(periods[0], identifiers, vocab, config.max_context_items),
                steps=config.grm_steps, batch_size=config.grm_batch,
                lr=config.grm_lr, seed=seed * 100 + 4,
            )
            save_grm(grm_dir, grm, period_index=0)
        state = SeedState(tokenizer, PatternMemory(config.cdim_config()), grm, vocab, identifiers)
        t0 = time.perf_counter()
        p0_report.update(_evaluate_period(config, state, periods[0], set(items0)))
        p0_report["timings"] = {"evaluate": time.perf_counter() - t0}
    p0_report["cosine_alignment"] = mean_alignment(tokenizer, items0, embeddings, cf_tables[0])
    p0_report["n_items"] = len(items0)

    return SharedP0(
        periods=periods, labels=labels, embeddings=embeddings, cf_tables=cf_tables,
        tokenizer=tokenizer, grm=grm, vocab=vocab, identifiers=identifiers,
        warm_items=set(items0), p0_report=p0_report,
    )


def _update_tokenizer(
    config: RunConfig, mode: str, state: SeedState, shared: SharedP0,
    period: PeriodDataset, seed: int,
) -> tuple[dict | None, ReassignmentReport | None, dict[int, float] | None]:
    """Apply the mode's tokenizer/identifier update for one period.

    Returns (timings, change report, drift confidences).
    """
    p = period.period_index
    items = sorted(period.item_set)
    cf_table = shared.cf_tables[p]
    timings: dict[str, float] = {}
    confidences = None

    t0 = time.perf_counter()
    if mode in ("frozen", "ft-grm"):
        report = None
        t1 = time.perf_counter()
        state.identifiers = extend_identifiers(
            state.tokenizer, items, shared.embeddings, state.identifiers
        )
        timings["identifier_update"] = time.perf_counter() - t1
    elif mode in ("ft-tok", "ft-both"):
        state.tokenizer = pretrain(
            state.tokenizer, _item_matrix(items, shared.embeddings),
            torch.from_numpy(cf_table.matrix_for(items)).float(),
            steps=config.adapt_steps, batch_size=config.adapt_batch,
            lr=config.adapt_lr, seed=seed * 100 + 10 + p,
            reseed_every=None, data_init=False,
        )
        timings["tokenizer_update"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        known = sorted(set(state.identifiers) | set(items))
        fresh = assign_identifiers(state.tokenizer, known, shared.embeddings)
        report = change_report(state.identifiers, fresh, config.n_levels)
        state.identifiers = fresh
        timings["identifier_update"] = time.perf_counter() - t1
    elif mode == "dact":
        result = adapt_period(
            state.tokenizer, state.memory, items, shared.embeddings, cf_table,
            weights=config.loss_weights(), steps=config.adapt_steps,
            batch_size=config.adapt_batch, lr=config.adapt_lr,
            seed=seed * 100 + 10 + p,
        )
        state.tokenizer, state.memory = result.tokenizer, result.memory
        confidences = result.confidences
        timings["tokenizer_update"] = time.perf_counter() - t0
        t1 = time.perf_counter()
        state.identifiers, report = reassign(
            state.tokenizer, items, shared.embeddings, state.identifiers
        )
        timings["identifier_update"] = time.perf_counter() - t1
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return timings, report, confidences


def run_mode(config: RunConfig, shared: SharedP0, mode: str, seed: int, seed_dir: Path) -> None:
    """Walk periods 1-4 for one mode, writing a report JSON per period."""
    reports_dir = seed_dir / "reports"
    done = all(
        (reports_dir / f"period_{p}_{mode}.json").exists() for p in range(len(shared.periods))
    )
    if done:
        return

    state = SeedState(
        tokenizer=copy.deepcopy(shared.tokenizer),
        memory=PatternMemory(config.cdim_config(), seed=seed * 100 + 5),
        grm=copy.deepcopy(shared.grm),
        vocab=copy.deepcopy(shared.vocab),
        identifiers=dict(shared.identifiers),
    )
    _write_report(reports_dir / f"period_0_{mode}.json", {**shared.p0_report, "mode": mode})

    for period in shared.periods[1:]:
        p = period.period_index
        payload: dict = {"seed": seed, "mode": mode, "period": p}
        timings, report, confidences = _update_tokenizer(
            config, mode, state, shared, period, seed
        )
        payload["timings"] = timings or {}

        if report is not None:
            payload["change_rates"] = {
                "layer_rates": report.layer_rates,
                "overall_rate": report.overall_rate,
                "n_with_previous": report.n_with_previous,
                "kept": report.kept,
                "recomputed": report.recomputed,
                "fresh": report.fresh,
            }
        if confidences is not None:
            payload["confidences"] = {str(k): v for k, v in confidences.items()}
            if shared.labels is not None:
                payload["drift_auc"] = ranking_auc(confidences, shared.labels)
            payload["representation_pca"] = _representation_pca(
                state.tokenizer, sorted(period.item_set), shared.embeddings, shared.labels
            )

        if config.with_grm:
            state.vocab.ensure_suffixes(state.identifiers)
            state.grm.grow_vocab(state.vocab.size, seed=seed * 100 + 20 + p)
            if mode in ("ft-grm", "ft-both", "dact"):
                t0 = time.perf_counter()
                state.grm = train_grm(
                    state.grm,
                    _grm_examples(period, state.identifiers, state.vocab, config.max_context_items),
                    steps=config.grm_ft_steps, batch_size=config.grm_batch,
                    lr=config.grm_ft_lr, seed=seed * 100 + 30 + p,
                )
                payload["timings"]["grm_update"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            payload.update(_evaluate_period(config, state, period, shared.warm_items))
            payload["timings"]["evaluate"] = time.perf_counter() - t0

        payload["cosine_alignment"] = mean_alignment(
            state.tokenizer, sorted(period.item_set), shared.embeddings, shared.cf_tables[p]
        )
        payload["n_items"] = len(period.item_set)
        write_identifiers(
            seed_dir / "identifiers" / f"period_{p}_{mode}.tsv", state.identifiers
        )
        _write_report(reports_dir / f"period_{p}_{mode}.json", payload)


def run(config: RunConfig) -> Path:
    """Execute the full seed x mode matrix and return the output directory."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for seed in config.seeds:
        seed_dir = out / f"seed_{seed}"
        shared = _prepare_shared(config, seed, seed_dir)
        for mode in config.modes:
            run_mode(config, shared, mode, seed, seed_dir)
    from .reports import emit_reports

    emit_reports(out)
    return out
