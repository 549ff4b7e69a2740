"""Aggregate run reports into tables and plots.

Reads every ``seed_*/reports/period_*_*.json`` under a run directory and
emits CSV tables plus a handful of matplotlib figures. This module only
consumes the JSON files, so ``dact report --dir`` can re-render outputs
without touching any model state.
"""

from __future__ import annotations

import csv
import json
import statistics
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _load_reports(out_dir: Path) -> list[dict]:
    reports = []
    for path in sorted(out_dir.glob("seed_*/reports/period_*_*.json")):
        payload = json.loads(path.read_text())
        payload.setdefault("seed", int(path.parts[-3].removeprefix("seed_")))
        reports.append(payload)
    if not reports:
        raise FileNotFoundError(f"no period reports found under {out_dir}")
    return reports


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    return (
        statistics.fmean(values),
        statistics.stdev(values) if len(values) > 1 else 0.0,
    )


def _metrics_table(reports: list[dict], out_dir: Path) -> None:
    header = [
        "seed", "mode", "period", "n_users",
        "hr@5", "ndcg@5", "hr@10", "ndcg@10",
        "warm_hr@10", "cold_hr@10", "cosine_alignment", "drift_auc",
    ]
    rows = []
    for r in sorted(reports, key=lambda r: (r["seed"], r["mode"], r["period"])):
        m = r.get("metrics") or {}
        warm, cold = r.get("warm") or {}, r.get("cold") or {}
        rows.append([
            r["seed"], r["mode"], r["period"], m.get("n_users", ""),
            m.get("hr@5", ""), m.get("ndcg@5", ""), m.get("hr@10", ""), m.get("ndcg@10", ""),
            warm.get("hr@10", ""), cold.get("hr@10", ""),
            r.get("cosine_alignment", ""), r.get("drift_auc", ""),
        ])
    _write_csv(out_dir / "tables" / "metrics.csv", header, rows)


def _change_rates_table(reports: list[dict], out_dir: Path) -> None:
    with_rates = [r for r in reports if "change_rates" in r]
    n_levels = max(
        (len(r["change_rates"]["layer_rates"]) for r in with_rates), default=0
    )
    header = ["seed", "mode", "period"] + [
        f"layer_{i + 1}_rate" for i in range(n_levels)
    ] + ["overall_rate", "n_with_previous", "kept", "recomputed", "fresh"]
    rows = []
    for r in sorted(with_rates, key=lambda r: (r["seed"], r["mode"], r["period"])):
        c = r["change_rates"]
        rows.append(
            [r["seed"], r["mode"], r["period"], *c["layer_rates"],
             c["overall_rate"], c["n_with_previous"], c["kept"], c["recomputed"], c["fresh"]]
        )
    _write_csv(out_dir / "tables" / "change_rates.csv", header, rows)


def _summary_table(reports: list[dict], out_dir: Path) -> None:
    groups: dict[tuple[str, int], list[dict]] = {}
    for r in reports:
        if r.get("metrics"):
            groups.setdefault((r["mode"], r["period"]), []).append(r)
    header = ["mode", "period", "n_seeds", "hr@10_mean", "hr@10_std", "ndcg@10_mean", "ndcg@10_std"]
    rows = []
    for (mode, period), rs in sorted(groups.items()):
        hr_m, hr_s = _mean_std([r["metrics"]["hr@10"] for r in rs])
        nd_m, nd_s = _mean_std([r["metrics"]["ndcg@10"] for r in rs])
        rows.append([mode, period, len(rs), hr_m, hr_s, nd_m, nd_s])
    _write_csv(out_dir / "tables" / "summary.csv", header, rows)


def _time_ratio_table(reports: list[dict], out_dir: Path) -> None:
    """Per-mode update cost (training + identifier work, evaluation excluded).

    Ratios are normalized by the ft-grm mode when it was run, since that is
    the cheapest update that still retrains the recommender.
    """
    per_seed_mode: dict[tuple[int, str], float] = {}
    for r in reports:
        cost = sum(v for k, v in (r.get("timings") or {}).items() if k != "evaluate")
        key = (r["seed"], r["mode"])
        per_seed_mode[key] = per_seed_mode.get(key, 0.0) + cost
    by_mode: dict[str, list[float]] = {}
    for (_, mode), cost in per_seed_mode.items():
        by_mode.setdefault(mode, []).append(cost)
    baseline = _mean_std(by_mode["ft-grm"])[0] if "ft-grm" in by_mode else None
    header = ["mode", "mean_update_seconds", "std", "ratio_vs_ft-grm"]
    rows = []
    for mode, costs in sorted(by_mode.items()):
        mean, std = _mean_std(costs)
        ratio = mean / baseline if baseline else ""
        rows.append([mode, mean, std, ratio])
    _write_csv(out_dir / "tables" / "time_ratios.csv", header, rows)


def _curve_by_mode(reports: list[dict], value_key: str) -> dict[str, dict[int, tuple[float, float]]]:
    groups: dict[tuple[str, int], list[float]] = {}
    for r in reports:
        value = r.get(value_key)
        if isinstance(value, dict):
            value = value.get("hr@10")
        if value is None or value == "":
            continue
        groups.setdefault((r["mode"], r["period"]), []).append(float(value))
    curves: dict[str, dict[int, tuple[float, float]]] = {}
    for (mode, period), values in groups.items():
        curves.setdefault(mode, {})[period] = _mean_std(values)
    return curves


def _plot_curves(
    curves: dict[str, dict[int, tuple[float, float]]], title: str, ylabel: str, path: Path
) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for mode in sorted(curves):
        periods = sorted(curves[mode])
        means = [curves[mode][p][0] for p in periods]
        stds = [curves[mode][p][1] for p in periods]
        ax.errorbar(periods, means, yerr=stds, marker="o", capsize=3, label=mode)
    ax.set_xlabel("period")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.set_xticks(sorted({p for c in curves.values() for p in c}))
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _plot_pca(reports: list[dict], out_dir: Path) -> None:
    """Scatter of tokenizer representations at the latest period with one."""
    candidates = [r for r in reports if "representation_pca" in r]
    if not candidates:
        return
    r = max(candidates, key=lambda r: (r["period"], -r["seed"]))
    pca = r["representation_pca"]
    xy = pca["xy"]
    xs, ys = [p[0] for p in xy], [p[1] for p in xy]
    fig, ax = plt.subplots(figsize=(5, 5))
    if "drifting" in pca:
        drifting = pca["drifting"]
        for flag, color, label in ((False, "tab:blue", "stationary"), (True, "tab:red", "drifting")):
            sel = [i for i, d in enumerate(drifting) if d == flag]
            ax.scatter([xs[i] for i in sel], [ys[i] for i in sel], s=12, c=color, label=label, alpha=0.7)
        ax.legend()
    else:
        ax.scatter(xs, ys, s=12, alpha=0.7)
    ax.set_title(f"item representations (PCA), seed {r['seed']} period {r['period']}")
    fig.tight_layout()
    path = out_dir / "plots" / "representation_pca.png"
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emit_reports(out_dir: str | Path) -> None:
    """Build all tables and plots for a finished (or partial) run."""
    out_dir = Path(out_dir)
    reports = _load_reports(out_dir)

    _metrics_table(reports, out_dir)
    _change_rates_table(reports, out_dir)
    _summary_table(reports, out_dir)
    _time_ratio_table(reports, out_dir)

    hr_curves = _curve_by_mode([r for r in reports if r.get("metrics")], "metrics")
    if hr_curves:
        _plot_curves(hr_curves, "held-out hit rate", "HR@10", out_dir / "plots" / "hr10.png")
    cos_curves = _curve_by_mode(reports, "cosine_alignment")
    if cos_curves:
        _plot_curves(
            cos_curves, "tokenizer/collaborative alignment", "mean cosine",
            out_dir / "plots" / "cosine_alignment.png",
        )
    auc_curves = _curve_by_mode(reports, "drift_auc")
    if auc_curves:
        _plot_curves(auc_curves, "drift identification", "AUC", out_dir / "plots" / "drift_auc.png")

    rate_reports = [
        {**r, "overall_rate": r["change_rates"]["overall_rate"]}
        for r in reports if "change_rates" in r
    ]
    rate_curves = _curve_by_mode(rate_reports, "overall_rate")
    if rate_curves:
        _plot_curves(
            rate_curves, "identifier churn", "overall change rate",
            out_dir / "plots" / "change_rates.png",
        )
    _plot_pca(reports, out_dir)
