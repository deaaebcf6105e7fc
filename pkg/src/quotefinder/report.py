"""Run artifacts: prediction/gold files, evaluation reports, figures.

The evaluate path writes four files next to each other: the run's
predictions (JSON Lines), a machine-readable report (JSON), a plain-text
table pair (paragraph ranking + span prediction), and a PNG histogram of
the distance between each wrong top-1 paragraph and the nearest positive.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import QuoteGold, QuotePrediction, RankingEval, SpanEval

# ---------------------------------------------------------------------------
# Prediction / gold files
# ---------------------------------------------------------------------------


def write_predictions_jsonl(path: str | Path, predictions: Sequence[QuotePrediction]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(json.dumps({
                "quote_id": p.quote_id,
                "ranking": list(p.ranking),
                "spans": [list(s) if s is not None else None for s in p.spans],
                "span_tokens": [list(t) if t is not None else None for t in p.span_tokens],
            }) + "\n")


def read_predictions_jsonl(path: str | Path) -> list[QuotePrediction]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        out.append(QuotePrediction(
            quote_id=raw["quote_id"],
            ranking=tuple(raw["ranking"]),
            spans=tuple(tuple(s) if s is not None else None for s in raw.get("spans", [])),
            span_tokens=tuple(tuple(t) if t is not None else None
                              for t in raw.get("span_tokens", [])),
        ))
    return out


def write_gold_jsonl(path: str | Path, gold: Sequence[QuoteGold]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for g in gold:
            fh.write(json.dumps({
                "quote_id": g.quote_id,
                "positives": list(g.positives),
                "gold_tokens": list(g.gold_tokens),
            }) + "\n")


def read_gold_jsonl(path: str | Path) -> list[QuoteGold]:
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        raw = json.loads(line)
        out.append(QuoteGold(
            quote_id=raw["quote_id"],
            positives=tuple(raw["positives"]),
            gold_tokens=tuple(raw["gold_tokens"]),
        ))
    return out


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


def build_report(
    run_id: str,
    split: str,
    ranking: RankingEval,
    span_by_setting: Mapping[str, SpanEval],
    significance: Sequence[Mapping] = (),
) -> dict:
    return {
        "run_id": run_id,
        "split": split,
        "map": ranking.map,
        "acc": {str(k): v for k, v in sorted(ranking.acc.items())},
        "em": {setting: e.em for setting, e in span_by_setting.items()},
        "f1": {setting: e.f1 for setting, e in span_by_setting.items()},
        "significance": list(significance),
    }


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(r[i])) for r in (header, *rows)) for i in range(len(header))]
    lines = ["  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in (header, *rows)]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines)


def render_ranking_table(rows: Sequence[tuple[str, RankingEval]]) -> str:
    header = ("Method", "mAP", "Acc@1", "Acc@3", "Acc@5")
    body = [
        (name, f"{e.map:.3f}", f"{e.acc[1]:.3f}", f"{e.acc[3]:.3f}", f"{e.acc[5]:.3f}")
        for name, e in rows
    ]
    return "Paragraph ranking results\n" + _table(header, body)


def render_span_table(rows: Sequence[tuple[str, Mapping[str, SpanEval]]]) -> str:
    header = ("Method", "EM Positive", "EM Top", "F1 Positive", "F1 Top")
    body = []
    for name, settings in rows:
        positive, top = settings.get("positive"), settings.get("top")
        body.append((
            name,
            f"{positive.em:.3f}" if positive else "-",
            f"{top.em:.3f}" if top else "-",
            f"{positive.f1:.3f}" if positive else "-",
            f"{top.f1:.3f}" if top else "-",
        ))
    return "Span prediction results\n" + _table(header, body)


def render_ablation_table(
    base_name: str,
    base: Mapping[str, float],
    variants: Sequence[tuple[str, Mapping[str, float]]],
) -> str:
    """Delta table: one row per variant, one column per metric, values
    relative to the base run."""
    columns = list(base.keys())
    header = ("Variant", *columns)
    body = [(base_name, *(f"{base[c]:.3f}" for c in columns))]
    for name, values in variants:
        body.append((name, *(f"{values[c] - base[c]:+.3f}" for c in columns)))
    return "Context ablations\n" + _table(header, body)


def write_report_files(
    out_dir: str | Path,
    report: dict,
    ranking_rows: Sequence[tuple[str, RankingEval]],
    span_rows: Sequence[tuple[str, Mapping[str, SpanEval]]],
    distance_histogram: Mapping[int, float] | None = None,
) -> dict[str, Path]:
    """Write report.json / report.txt / rank_distance.png; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"json": out_dir / "report.json", "text": out_dir / "report.txt"}
    paths["json"].write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")
    text = render_ranking_table(ranking_rows) + "\n\n" + render_span_table(span_rows) + "\n"
    paths["text"].write_text(text, encoding="utf-8")
    if distance_histogram is not None:
        paths["figure"] = out_dir / "rank_distance.png"
        render_distance_figure(distance_histogram, paths["figure"])
    return paths


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_distance_figure(histogram: Mapping[int, float], path: str | Path) -> None:
    """Bar chart of the wrong-top-1 distance distribution."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    distances = sorted(histogram)
    ax.bar(distances, [histogram[d] for d in distances], color="#4878a8")
    ax.set_xlabel("Distance to nearest positive paragraph")
    ax.set_ylabel("Fraction of misranked quotes")
    ax.set_title("Where the top-1 paragraph lands when it is wrong")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_ablation_figure(
    base: Mapping[str, float],
    variants: Sequence[tuple[str, Mapping[str, float]]],
    path: str | Path,
) -> None:
    """Grouped bars of metric deltas per ablation variant."""
    columns = list(base.keys())
    names = [name for name, _ in variants]
    width = 0.8 / max(1, len(columns))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for c, column in enumerate(columns):
        offsets = [i + c * width for i in range(len(names))]
        deltas = [values[column] - base[column] for _, values in variants]
        ax.bar(offsets, deltas, width=width, label=column)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(names))])
    ax.set_xticklabels(names)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("Delta vs full model")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
