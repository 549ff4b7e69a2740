"""Command-line entry points.

Subcommands mirror the pipeline stages: data generation/ingest, per-period
collaborative vector training, the tokenizer-only adaptation lane, the full
experiment matrix, and report rendering. Set ``DACT_SEED`` to override the
seed list of any invocation.
"""

from __future__ import annotations

import argparse
import os
from pathlib import Path


def _seed_override(seeds: tuple[int, ...]) -> tuple[int, ...]:
    env = os.environ.get("DACT_SEED")
    return (int(env),) if env else seeds


def _cmd_data_gen(args: argparse.Namespace) -> None:
    from .data import DriftSpec, generate_synthetic, save_dataset

    seed = int(os.environ.get("DACT_SEED", args.seed))
    spec = DriftSpec(
        n_users=args.users, n_items=args.items, n_clusters=args.clusters,
        drift_fraction=args.drift_fraction, drift_period=args.drift_period,
        popularity_shift=args.popularity_shift, seed=seed,
        events_per_user=args.events_per_user,
    )
    periods, labels, embeddings = generate_synthetic(spec)
    save_dataset(args.out, periods, labels=labels, embeddings=embeddings, spec=spec)
    print(f"wrote {sum(p.n_events for p in periods)} events over "
          f"{len(periods)} periods to {args.out}")


def _cmd_data_ingest(args: argparse.Namespace) -> None:
    from .data import ingest_tsv, save_dataset

    periods, user_map, item_map = ingest_tsv(args.input, min_count=args.min_count)
    save_dataset(args.out, periods)
    print(f"ingested {sum(p.n_events for p in periods)} events, "
          f"{len(user_map)} users, {len(item_map)} items -> {args.out}")


def _cmd_cf_train(args: argparse.Namespace) -> None:
    from .cf import train_cf
    from .data import load_dataset

    periods, _, _ = load_dataset(args.data)
    seed = int(os.environ.get("DACT_SEED", args.seed))
    out = Path(args.out)
    table = None
    for period in periods:
        table = train_cf(
            period, dim=args.dim, epochs=args.epochs, lr=args.lr,
            seed=seed * 100 + period.period_index, warm=table,
        )
        table.save(out / f"cf_p{period.period_index}")
    print(f"wrote {len(periods)} period tables to {out}")


def _load_config(path: str):
    from .harness import RunConfig

    config = RunConfig.from_toml(path)
    config.seeds = _seed_override(config.seeds)
    return config


def _cmd_adapt(args: argparse.Namespace) -> None:
    from .harness import run

    config = _load_config(args.config)
    config.with_grm = False
    out = run(config)
    print(f"tokenizer-lane run complete: {out}")


def _cmd_run(args: argparse.Namespace) -> None:
    from .harness import run

    out = run(_load_config(args.config))
    print(f"run complete: {out}")


def _cmd_report(args: argparse.Namespace) -> None:
    from .reports import emit_reports

    emit_reports(args.dir)
    print(f"tables and plots rendered under {args.dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dact", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    data = sub.add_parser("data", help="generate or ingest interaction data")
    data_sub = data.add_subparsers(dest="data_command", required=True)

    gen = data_sub.add_parser("gen", help="generate a synthetic drifting corpus")
    gen.add_argument("--out", required=True)
    gen.add_argument("--users", type=int, default=200)
    gen.add_argument("--items", type=int, default=200)
    gen.add_argument("--clusters", type=int, default=8)
    gen.add_argument("--drift-fraction", type=float, default=0.2)
    gen.add_argument("--drift-period", type=int, default=2)
    gen.add_argument("--popularity-shift", type=float, default=0.5)
    gen.add_argument("--events-per-user", type=int, default=60)
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=_cmd_data_gen)

    ingest = data_sub.add_parser("ingest", help="ingest a user/item/timestamp TSV")
    ingest.add_argument("--input", required=True)
    ingest.add_argument("--out", required=True)
    ingest.add_argument("--min-count", type=int, default=5)
    ingest.set_defaults(func=_cmd_data_ingest)

    cf = sub.add_parser("cf", help="collaborative vector utilities")
    cf_sub = cf.add_subparsers(dest="cf_command", required=True)
    cf_train = cf_sub.add_parser("train", help="train per-period item vectors")
    cf_train.add_argument("--data", required=True, help="dataset directory")
    cf_train.add_argument("--out", required=True)
    cf_train.add_argument("--dim", type=int, default=32)
    cf_train.add_argument("--epochs", type=int, default=12)
    cf_train.add_argument("--lr", type=float, default=0.5)
    cf_train.add_argument("--seed", type=int, default=0)
    cf_train.set_defaults(func=_cmd_cf_train)

    adapt = sub.add_parser("adapt", help="tokenizer-lane run (no recommender)")
    adapt.add_argument("--config", required=True)
    adapt.set_defaults(func=_cmd_adapt)

    run_p = sub.add_parser("run", help="full experiment matrix from a TOML config")
    run_p.add_argument("--config", required=True)
    run_p.set_defaults(func=_cmd_run)

    report = sub.add_parser("report", help="re-render tables and plots")
    report.add_argument("--dir", required=True)
    report.set_defaults(func=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
