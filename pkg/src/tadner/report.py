"""Evaluation report rendering: JSON, aligned text table, TSV, and figures."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import AggregateStats, ErrorBreakdown, MetricsSummary, aggregate


@dataclass(frozen=True)
class EpisodeResult:
    index: int
    metrics: MetricsSummary | None
    breakdown: ErrorBreakdown | None
    error: str | None = None


def _aggregate_block(results) -> dict:
    ok = [r for r in results if r.metrics is not None]
    block = {}
    for metric in ("precision", "recall", "f1"):
        if ok:
            stats = aggregate([getattr(r.metrics, metric) for r in ok])
        else:
            stats = AggregateStats(0.0, 0.0, 0)
        block[metric] = {"mean": stats.mean, "std": stats.std, "n": stats.n}
    return block


def _total_breakdown(results) -> dict:
    totals = {"fp_span": 0, "fp_type": 0, "fn_span": 0, "fn_type": 0, "total_false": 0}
    for r in results:
        if r.breakdown is None:
            continue
        for key in totals:
            totals[key] += getattr(r.breakdown, key)
    return totals


def report_payload(results, config_echo: dict | None = None) -> dict:
    episodes = []
    for r in results:
        entry: dict = {"index": r.index, "error": r.error}
        if r.metrics is not None:
            entry.update(asdict(r.metrics))
        if r.breakdown is not None:
            entry["breakdown"] = asdict(r.breakdown)
        episodes.append(entry)
    return {
        "episodes": episodes,
        "aggregate": _aggregate_block(results),
        "error_breakdown": _total_breakdown(results),
        "config": config_echo or {},
    }


def render_text_table(payload: dict) -> str:
    header = f"{'episode':>8} {'P':>8} {'R':>8} {'F1':>8} {'TP':>5} {'FP':>5} {'FN':>5}  error"
    lines = [header, "-" * len(header)]
    for ep in payload["episodes"]:
        if ep.get("error"):
            lines.append(f"{ep['index']:>8} {'-':>8} {'-':>8} {'-':>8} {'-':>5} {'-':>5} {'-':>5}  {ep['error']}")
        else:
            lines.append(
                f"{ep['index']:>8} {ep['precision']:>8.4f} {ep['recall']:>8.4f} "
                f"{ep['f1']:>8.4f} {ep['tp']:>5} {ep['fp']:>5} {ep['fn']:>5}"
            )
    agg = payload["aggregate"]
    lines.append("-" * len(header))
    lines.append(
        "    mean "
        + " ".join(f"{agg[m]['mean']:>8.4f}" for m in ("precision", "recall", "f1"))
    )
    lines.append(
        "     std "
        + " ".join(f"{agg[m]['std']:>8.4f}" for m in ("precision", "recall", "f1"))
    )
    bd = payload["error_breakdown"]
    lines.append(
        f"errors: fp_span={bd['fp_span']} fp_type={bd['fp_type']} "
        f"fn_span={bd['fn_span']} fn_type={bd['fn_type']} total={bd['total_false']}"
    )
    return "\n".join(lines) + "\n"


def render_tsv(payload: dict) -> str:
    rows = ["index\tprecision\trecall\tf1\ttp\tfp\tfn\terror"]
    for ep in payload["episodes"]:
        if ep.get("error"):
            rows.append(f"{ep['index']}\t\t\t\t\t\t\t{ep['error']}")
        else:
            rows.append(
                f"{ep['index']}\t{ep['precision']!r}\t{ep['recall']!r}\t{ep['f1']!r}"
                f"\t{ep['tp']}\t{ep['fp']}\t{ep['fn']}\t"
            )
    return "\n".join(rows) + "\n"


def _save_figures(payload: dict, out_dir: Path) -> list[Path]:
    written = []
    scored = [ep for ep in payload["episodes"] if not ep.get("error")]

    fig, ax = plt.subplots(figsize=(6.0, 3.2), constrained_layout=True)
    if scored:
        xs = [ep["index"] for ep in scored]
        ax.bar(xs, [ep["f1"] for ep in scored], color="#4878a8")
        mean = payload["aggregate"]["f1"]["mean"]
        ax.axhline(mean, color="#b04030", linestyle="--", linewidth=1, label=f"mean {mean:.3f}")
        ax.legend(loc="lower right", fontsize=8)
    ax.set_xlabel("episode")
    ax.set_ylabel("micro F1")
    ax.set_ylim(0.0, 1.05)
    path = out_dir / "f1_per_episode.png"
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
    written.append(path)

    bd = payload["error_breakdown"]
    fig, ax = plt.subplots(figsize=(4.8, 3.2), constrained_layout=True)
    keys = ["fp_span", "fp_type", "fn_span", "fn_type"]
    ax.bar(range(len(keys)), [bd[k] for k in keys], color=["#4878a8", "#86b0d0", "#b04030", "#d08070"])
    ax.set_xticks(range(len(keys)), keys)
    ax.set_ylabel("count")
    path = out_dir / "error_breakdown.png"
    fig.savefig(path, dpi=150, metadata={"Software": None})
    plt.close(fig)
    written.append(path)
    return written


def write_report(results, out_dir, config_echo: dict | None = None, figures: bool = True) -> dict:
    """Write report.json, report.txt, report.tsv, and PNG figures into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = report_payload(results, config_echo)
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "report.txt").write_text(render_text_table(payload), encoding="utf-8")
    (out_dir / "report.tsv").write_text(render_tsv(payload), encoding="utf-8")
    if figures:
        _save_figures(payload, out_dir)
    return payload
