"""Late fusion of paragraph and span scores, and the (alpha, beta) grid.

Both model families emit one raw score per paragraph (the span family via
its best span). Each score list becomes a posterior through a softmax over
this document's paragraphs, and the combined confidence of a paragraph is

    p_span ** alpha * p_paragraph ** beta

computed in log space with a -745 floor so zero posteriors cannot poison
the product (0 ** 0 == 1). The exponents come from an exhaustive search
over {0, 0.5, ..., 10} x {0, 0.5, ..., 10} on dev.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics
from .corpus import QuoteQuery, SourceDocument
from .errors import ValidationError
from .pararank import ParagraphModel, score_paragraphs
from .spanpred import SpanModel, SpanPrediction, best_spans

GRID_VALUES = tuple(0.5 * k for k in range(21))  # 0, 0.5, ..., 10
LOG_FLOOR = -745.0


@dataclass(frozen=True)
class FusionWeights:
    alpha: float  # span exponent
    beta: float   # paragraph exponent

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("fusion exponents must be non-negative")


@dataclass(frozen=True)
class Recommendation:
    paragraph_index: int
    span: SpanPrediction | None
    p_paragraph: float
    p_span: float
    fused: float


def softmax(scores: Sequence[float] | np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValidationError("softmax over an empty score list")
    high = scores.max()
    if high == -np.inf:  # no paragraph produced a score; fall back to uniform
        return np.full(scores.shape, 1.0 / scores.size)
    exp = np.exp(scores - high)
    return exp / exp.sum()


def paragraph_posteriors(raw_scores: Sequence[float] | np.ndarray) -> np.ndarray:
    """Softmax over the scores of all paragraphs of one document."""
    return softmax(raw_scores)


def span_posteriors(best_span_scores: Sequence[float] | np.ndarray) -> np.ndarray:
    """Softmax over the maximum-scoring span in each paragraph (missing
    spans enter as -inf and receive posterior 0)."""
    return softmax(best_span_scores)


def _log_floor(p: float) -> float:
    if p < 0.0 or p > 1.0 + 1e-12:
        raise ValidationError(f"posterior {p} outside [0, 1]")
    return LOG_FLOOR if p <= 0.0 else max(math.log(p), LOG_FLOOR)


def fuse(p_span: float, p_paragraph: float, weights: FusionWeights) -> float:
    return math.exp(weights.alpha * _log_floor(p_span) + weights.beta * _log_floor(p_paragraph))


def fused_log_scores(
    p_span: np.ndarray, p_paragraph: np.ndarray, weights: FusionWeights
) -> np.ndarray:
    """Log of the fused score per paragraph (same ordering as fuse)."""
    log_span = np.maximum(np.log(np.maximum(p_span, 0.0), where=p_span > 0,
                                 out=np.full_like(p_span, LOG_FLOOR, dtype=np.float64)), LOG_FLOOR)
    log_para = np.maximum(np.log(np.maximum(p_paragraph, 0.0), where=p_paragraph > 0,
                                 out=np.full_like(p_paragraph, LOG_FLOOR, dtype=np.float64)), LOG_FLOOR)
    return weights.alpha * log_span + weights.beta * log_para


def fused_order(p_span: np.ndarray, p_paragraph: np.ndarray, weights: FusionWeights) -> list[int]:
    """Paragraph indices by fused score, descending, ties by index."""
    log_scores = fused_log_scores(np.asarray(p_span, dtype=np.float64),
                                  np.asarray(p_paragraph, dtype=np.float64), weights)
    return sorted(range(log_scores.size), key=lambda i: (-log_scores[i], i))


def recommend(
    query: QuoteQuery,
    doc: SourceDocument,
    paragraph_model: ParagraphModel,
    span_model: SpanModel,
    weights: FusionWeights,
    top_k: int | None = None,
) -> list[Recommendation]:
    """Fused ranking of a document's paragraphs with their best spans."""
    raw_paragraph = score_paragraphs(query, doc, paragraph_model)
    spans = best_spans(query, doc, span_model)
    raw_span = [s.raw_score if s is not None else -np.inf for s in spans]
    p_para = paragraph_posteriors(raw_paragraph)
    p_span = span_posteriors(raw_span)
    order = fused_order(p_span, p_para, weights)
    if top_k is not None:
        order = order[: max(1, top_k)]
    return [
        Recommendation(
            paragraph_index=i,
            span=spans[i],
            p_paragraph=float(p_para[i]),
            p_span=float(p_span[i]),
            fused=fuse(float(p_span[i]), float(p_para[i]), weights),
        )
        for i in order
    ]


# ---------------------------------------------------------------------------
# Dev cache and grid search
# ---------------------------------------------------------------------------


@dataclass
class DevCacheRecord:
    """Per-quote posteriors cached for the grid search.

    ``positives``/``gold_tokens``/``span_tokens`` extend the minimal cache
    schema so the search is self-contained for both tuning metrics.
    """

    quote_id: str
    p_paragraph: list[float]
    p_span: list[float]
    best_spans: list[tuple[int, int] | None]
    positives: tuple[int, ...] = ()
    gold_tokens: tuple[str, ...] = ()
    span_tokens: list[tuple[str, ...] | None] = field(default_factory=list)


def write_dev_cache(path: str | Path, records: Sequence[DevCacheRecord]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "quote_id": r.quote_id,
                "p_paragraph": r.p_paragraph,
                "p_span": r.p_span,
                "best_spans": [list(s) if s is not None else None for s in r.best_spans],
                "positives": list(r.positives),
                "gold_tokens": list(r.gold_tokens),
                "span_tokens": [list(t) if t is not None else None for t in r.span_tokens],
            }) + "\n")


def read_dev_cache(path: str | Path) -> list[DevCacheRecord]:
    records = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            raw = json.loads(line)
            records.append(DevCacheRecord(
                quote_id=raw["quote_id"],
                p_paragraph=[float(x) for x in raw["p_paragraph"]],
                p_span=[float(x) for x in raw["p_span"]],
                best_spans=[tuple(s) if s is not None else None for s in raw["best_spans"]],
                positives=tuple(raw.get("positives", ())),
                gold_tokens=tuple(raw.get("gold_tokens", ())),
                span_tokens=[tuple(t) if t is not None else None
                             for t in raw.get("span_tokens", [])],
            ))
    return records


def _grid_metric(records: Sequence[DevCacheRecord], weights: FusionWeights, metric: str) -> float:
    values = []
    for r in records:
        order = fused_order(np.array(r.p_span), np.array(r.p_paragraph), weights)
        if metric == "map":
            values.append(metrics.average_precision(order, r.positives))
        elif metric == "f1_top":
            top = order[: len(r.positives)]
            predicted: list[str] = []
            for index in top:
                tokens = r.span_tokens[index] if index < len(r.span_tokens) else None
                if tokens:
                    predicted.extend(tokens)
            values.append(metrics.bow_f1(predicted, r.gold_tokens))
        else:
            raise ValidationError(f"unknown grid metric {metric!r}")
    return float(np.mean(values))


def grid_search(records: Sequence[DevCacheRecord], metric: str = "map") -> FusionWeights:
    """Exhaustive search over the 21x21 exponent grid; ties prefer smaller
    (beta, alpha)."""
    if not records:
        raise ValidationError("grid search requires a non-empty dev set")
    best: tuple[float, float, float] | None = None  # (-metric, beta, alpha)
    for beta in GRID_VALUES:
        for alpha in GRID_VALUES:
            value = _grid_metric(records, FusionWeights(alpha, beta), metric)
            key = (-value, beta, alpha)
            if best is None or key < best:
                best = key
    return FusionWeights(alpha=best[2], beta=best[1])
