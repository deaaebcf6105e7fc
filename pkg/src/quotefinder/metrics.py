"""Evaluation: ranking metrics, span metrics, significance, error analysis.

Ranking quality is mean average precision plus top-k accuracy (a quote
counts for k when at least one positive paragraph ranks in the top k).
Span quality is exact match and bag-of-words F1 (multiset counts,
lowercased, punctuation kept), macro-averaged over quotes, in two settings:

  positive  the prediction on the known positive paragraph(s)
  top       the prediction on the top ranked paragraph(s)

Quotes spanning p positive paragraphs concatenate their gold parts in
paragraph order; the top-setting prediction concatenates the predicted
spans of the top p ranked paragraphs in rank order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import Corpus
from .errors import ValidationError

ACCURACY_KS = (1, 3, 5)


@dataclass(frozen=True)
class QuotePrediction:
    """One quote's model output: a paragraph ranking and a best span per
    paragraph (``span_tokens``/``spans`` aligned with paragraph index)."""

    quote_id: str
    ranking: tuple[int, ...]
    spans: tuple[tuple[int, int] | None, ...] = ()
    span_tokens: tuple[tuple[str, ...] | None, ...] = ()


@dataclass(frozen=True)
class QuoteGold:
    quote_id: str
    positives: tuple[int, ...]
    gold_tokens: tuple[str, ...]


@dataclass
class RankingEval:
    map: float
    acc: dict[int, float]
    per_quote_ap: list[float] = field(default_factory=list)


@dataclass
class SpanEval:
    setting: str
    em: float
    f1: float
    per_quote_em: list[float] = field(default_factory=list)
    per_quote_f1: list[float] = field(default_factory=list)


def average_precision(ranking: Sequence[int], positives: Sequence[int]) -> float:
    """Mean over positives of the precision at each positive's rank."""
    positive_set = set(positives)
    if not positive_set:
        raise ValidationError("average precision needs a non-empty positive set")
    if not positive_set.issubset(ranking):
        missing = sorted(positive_set.difference(ranking))
        raise ValidationError(f"positives {missing} missing from the ranking")
    hits = 0
    total = 0.0
    for position, index in enumerate(ranking, start=1):
        if index in positive_set:
            hits += 1
            total += hits / position
    return total / len(positive_set)


def top_k_accuracy(
    rankings: Sequence[Sequence[int]], positives: Sequence[Sequence[int]], k: int
) -> float:
    """Fraction of quotes with at least one positive ranked in the top k."""
    if k < 1:
        raise ValidationError("k must be at least 1")
    if len(rankings) != len(positives):
        raise ValidationError("rankings and positives must pair up")
    hits = sum(
        1 for ranking, pos in zip(rankings, positives) if set(ranking[:k]) & set(pos)
    )
    return hits / len(rankings) if rankings else 0.0


def exact_match(predicted: Sequence[str], gold: Sequence[str]) -> int:
    return int([t.lower() for t in predicted] == [t.lower() for t in gold])


def bow_f1(predicted: Sequence[str], gold: Sequence[str]) -> float:
    """Harmonic mean of multiset token precision and recall."""
    if not predicted or not gold:
        return 0.0
    pred_bag = Counter(t.lower() for t in predicted)
    gold_bag = Counter(t.lower() for t in gold)
    overlap = sum((pred_bag & gold_bag).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(pred_bag.values())
    recall = overlap / sum(gold_bag.values())
    return 2 * precision * recall / (precision + recall)


def _concat_tokens(
    prediction: QuotePrediction, paragraph_indices: Sequence[int]
) -> list[str]:
    tokens: list[str] = []
    for index in paragraph_indices:
        if index < len(prediction.span_tokens):
            part = prediction.span_tokens[index]
            if part:
                tokens.extend(part)
    return tokens


def predicted_tokens(prediction: QuotePrediction, gold: QuoteGold, setting: str) -> list[str]:
    """The evaluated token sequence for one quote under a setting."""
    p = len(gold.positives)
    if setting == "positive":
        return _concat_tokens(prediction, sorted(gold.positives))
    if setting == "top":
        return _concat_tokens(prediction, prediction.ranking[:p])
    raise ValidationError(f"unknown setting {setting!r}; expected 'positive' or 'top'")


def evaluate_run(
    predictions: Sequence[QuotePrediction],
    gold: Sequence[QuoteGold],
    setting: str = "top",
) -> tuple[RankingEval, SpanEval]:
    by_id: dict[str, QuotePrediction] = {p.quote_id: p for p in predictions}
    aps: list[float] = []
    rankings: list[tuple[int, ...]] = []
    positives: list[tuple[int, ...]] = []
    ems: list[float] = []
    f1s: list[float] = []
    for g in gold:
        if g.quote_id not in by_id:
            raise ValidationError(f"missing prediction for quote {g.quote_id!r}")
        prediction = by_id[g.quote_id]
        aps.append(average_precision(prediction.ranking, g.positives))
        rankings.append(prediction.ranking)
        positives.append(g.positives)
        predicted = predicted_tokens(prediction, g, setting)
        ems.append(float(exact_match(predicted, g.gold_tokens)))
        f1s.append(bow_f1(predicted, g.gold_tokens))
    ranking_eval = RankingEval(
        map=float(np.mean(aps)) if aps else 0.0,
        acc={k: top_k_accuracy(rankings, positives, k) for k in ACCURACY_KS},
        per_quote_ap=aps,
    )
    span_eval = SpanEval(
        setting=setting,
        em=float(np.mean(ems)) if ems else 0.0,
        f1=float(np.mean(f1s)) if f1s else 0.0,
        per_quote_em=ems,
        per_quote_f1=f1s,
    )
    return ranking_eval, span_eval


def permutation_test(
    a: Sequence[float], b: Sequence[float], iterations: int = 10000, seed: int = 0
) -> float:
    """Two-sided paired sign-flip permutation p-value for the mean difference."""
    if len(a) != len(b):
        raise ValidationError("paired samples must have equal length")
    if len(a) == 0:
        raise ValidationError("empty samples")
    diffs = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    observed = abs(diffs.mean())
    rng = np.random.default_rng(seed)
    signs = rng.choice((-1.0, 1.0), size=(iterations, diffs.size))
    permuted = np.abs((signs * diffs).mean(axis=1))
    return float((1 + np.sum(permuted >= observed)) / (1 + iterations))


def rank_distance_histogram(
    predictions: Sequence[QuotePrediction], gold: Sequence[QuoteGold]
) -> dict[int, float]:
    """Distribution of |top-1 paragraph - nearest positive| over the quotes
    whose top-1 paragraph is not a positive."""
    by_id = {p.quote_id: p for p in predictions}
    counts: Counter[int] = Counter()
    for g in gold:
        prediction = by_id.get(g.quote_id)
        if prediction is None or not prediction.ranking:
            continue
        top = prediction.ranking[0]
        if top in g.positives:
            continue
        counts[min(abs(top - p) for p in g.positives)] += 1
    total = sum(counts.values())
    return {d: counts[d] / total for d in sorted(counts)} if total else {}


@dataclass(frozen=True)
class MisrankedSample:
    quote_id: str
    title: str
    context: str
    paragraph_index: int
    paragraph_text: str


def display_context(sentences: Sequence[Sequence[str]], budget: int = 100) -> str:
    """Trailing context rounded up to a sentence boundary: whole sentences
    from the end until at least ``budget`` word tokens are covered."""
    kept: list[Sequence[str]] = []
    count = 0
    for sentence in reversed(sentences):
        kept.append(sentence)
        count += len(sentence)
        if count >= budget:
            break
    return " ".join(" ".join(s) for s in reversed(kept))


def sample_misranked(
    predictions: Sequence[QuotePrediction],
    gold: Sequence[QuoteGold],
    corpus: Corpus,
    n: int,
    seed: int = 0,
) -> list[MisrankedSample]:
    """Seeded uniform sample of quotes whose top-1 paragraph is wrong,
    formatted for human review."""
    by_id = {p.quote_id: p for p in predictions}
    quote_by_id = {q.quote_id: q for q in corpus.quotes}
    candidates: list[tuple[QuoteGold, QuotePrediction]] = []
    for g in gold:
        prediction = by_id.get(g.quote_id)
        if prediction is None or not prediction.ranking:
            continue
        if prediction.ranking[0] not in g.positives:
            candidates.append((g, prediction))
    if n > len(candidates):
        raise ValidationError(
            f"requested {n} misranked quotes but only {len(candidates)} available"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(candidates), size=n, replace=False)
    samples = []
    for index in sorted(int(c) for c in chosen):
        g, prediction = candidates[index]
        quote = quote_by_id[g.quote_id]
        article = corpus.article_for(quote)
        source = corpus.source_for(quote)
        top = prediction.ranking[0]
        samples.append(MisrankedSample(
            quote_id=g.quote_id,
            title=" ".join(article.title),
            context=display_context(article.sentences[: quote.quote_sentence_index]),
            paragraph_index=top,
            paragraph_text=source.paragraphs[top].raw_text,
        ))
    return samples
