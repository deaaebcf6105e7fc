"""Paragraph scoring: neural rank head, listwise loss, TF-IDF and BM25.

The neural scorer encodes each (query, paragraph) pair independently and
takes the dot product of a single task vector with the pooled output. The
listwise training loss is the negative log-likelihood of the positive
paragraph under a softmax over the scores of one positive plus n sampled
negatives.

Lexical baselines treat the single source document as the collection: IDF
statistics are computed over its paragraphs only, and the baseline query is
the title plus the last 40 context word tokens, lowercased.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch
from torch import nn

from .corpus import QuoteQuery, SourceDocument
from .encoder import Caps, DEFAULT_CAPS, SubwordVocab, TransformerEncoder, batch_tensors, pack_input
from .errors import ValidationError

BASELINE_CONTEXT_TAIL = 40


@dataclass
class Ranking:
    """Paragraph indices with scores, sorted descending, ties by index."""

    query_id: str | None
    entries: tuple[tuple[int, float], ...]

    @property
    def order(self) -> tuple[int, ...]:
        return tuple(index for index, _ in self.entries)

    def rank_of(self, paragraph_index: int) -> int:
        """1-based rank of a paragraph."""
        for position, (index, _) in enumerate(self.entries, start=1):
            if index == paragraph_index:
                return position
        raise ValidationError(f"paragraph {paragraph_index} not present in ranking")


def rank(query_id: str | None, scores: Sequence[float]) -> Ranking:
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return Ranking(query_id=query_id, entries=tuple((i, float(scores[i])) for i in order))


# ---------------------------------------------------------------------------
# Neural scorer
# ---------------------------------------------------------------------------


class RankHead(nn.Module):
    """Single task vector; score of a pair is its dot product with pooled."""

    def __init__(self, hidden_size: int, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.vector = nn.Parameter(torch.randn(hidden_size, generator=generator) * 0.02)

    def forward(self, pooled: torch.Tensor) -> torch.Tensor:
        return pooled @ self.vector


@dataclass
class ParagraphModel:
    """Everything needed to score paragraphs for a live query."""

    encoder: TransformerEncoder
    head: RankHead
    vocab: SubwordVocab
    caps: Caps = Caps(*DEFAULT_CAPS)


def score_paragraphs(
    query: QuoteQuery, doc: SourceDocument, model: ParagraphModel, batch_size: int = 32
) -> list[float]:
    """One independent score per paragraph (no cross-paragraph interaction)."""
    packed = [pack_input(query, p, model.vocab, model.caps) for p in doc.paragraphs]
    scores: list[float] = []
    was_training = model.encoder.training
    model.encoder.eval()
    try:
        with torch.no_grad():
            for start in range(0, len(packed), batch_size):
                chunk = packed[start : start + batch_size]
                ids, segments, mask = batch_tensors(chunk, model.vocab.pad_id)
                pooled = model.encoder(ids, segments, mask)[:, 0]
                scores.extend(model.head(pooled).tolist())
    finally:
        if was_training:
            model.encoder.train()
    if not all(math.isfinite(s) for s in scores):
        raise ValidationError("non-finite paragraph score")
    return scores


def neural_rank(query: QuoteQuery, doc: SourceDocument, model: ParagraphModel,
                query_id: str | None = None) -> Ranking:
    return rank(query_id, score_paragraphs(query, doc, model))


def listwise_loss(scores: torch.Tensor | Sequence[float], positive_position: int) -> torch.Tensor:
    """NLL of the positive under a softmax over the n+1 scores."""
    if not isinstance(scores, torch.Tensor):
        scores = torch.tensor(scores, dtype=torch.float64)
    if scores.dim() != 1 or scores.numel() < 2:
        raise ValidationError("listwise loss needs a 1-D list of at least 2 scores")
    if not 0 <= positive_position < scores.numel():
        raise ValidationError(f"positive position {positive_position} out of range")
    return torch.logsumexp(scores, dim=0) - scores[positive_position]


# ---------------------------------------------------------------------------
# Lexical baselines
# ---------------------------------------------------------------------------


def baseline_query_terms(query: QuoteQuery, context_tail: int = BASELINE_CONTEXT_TAIL) -> list[str]:
    tail = list(query.left_context)[-context_tail:] if context_tail else []
    return [t.lower() for t in (*query.title, *tail)]


def _paragraph_term_counts(doc: SourceDocument) -> list[Counter[str]]:
    return [Counter(t.lower() for t in p.tokens) for p in doc.paragraphs]


def _document_frequency(counts: list[Counter[str]]) -> Counter[str]:
    df: Counter[str] = Counter()
    for counter in counts:
        df.update(counter.keys())
    return df


def tfidf_vector(terms: Sequence[str] | Counter[str], df: Counter[str], n_docs: int) -> dict[str, float]:
    """Smoothed TF-IDF weights: tf * (ln((1 + N) / (1 + df)) + 1)."""
    counts = terms if isinstance(terms, Counter) else Counter(terms)
    return {
        term: count * (math.log((1 + n_docs) / (1 + df[term])) + 1.0)
        for term, count in counts.items()
    }


def cosine(a: dict[str, float], b: dict[str, float]) -> float:
    norm_a = math.sqrt(sum(v * v for v in a.values()))
    norm_b = math.sqrt(sum(v * v for v in b.values()))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    if len(a) > len(b):
        a, b = b, a
    dot = sum(value * b[term] for term, value in a.items() if term in b)
    return dot / (norm_a * norm_b)


def tfidf_scores(query: QuoteQuery, doc: SourceDocument) -> list[float]:
    counts = _paragraph_term_counts(doc)
    df = _document_frequency(counts)
    n = len(doc.paragraphs)
    query_vec = tfidf_vector(baseline_query_terms(query), df, n)
    return [cosine(query_vec, tfidf_vector(c, df, n)) for c in counts]


def tfidf_rank(query: QuoteQuery, doc: SourceDocument, query_id: str | None = None) -> Ranking:
    return rank(query_id, tfidf_scores(query, doc))


def bm25_scores(
    query: QuoteQuery, doc: SourceDocument, k1: float = 1.2, b: float = 0.75
) -> list[float]:
    """Okapi BM25 with document = paragraph, collection = this source's
    paragraphs, and a non-negative IDF floor."""
    counts = _paragraph_term_counts(doc)
    df = _document_frequency(counts)
    n = len(doc.paragraphs)
    lengths = [len(p.tokens) for p in doc.paragraphs]
    avg_len = sum(lengths) / n
    terms = baseline_query_terms(query)
    scores = []
    for counter, length in zip(counts, lengths):
        score = 0.0
        for term in terms:
            tf = counter.get(term, 0)
            if tf == 0:
                continue
            idf = max(0.0, math.log((n - df[term] + 0.5) / (df[term] + 0.5)))
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length / avg_len))
        scores.append(score)
    return scores


def bm25_rank(
    query: QuoteQuery, doc: SourceDocument, k1: float = 1.2, b: float = 0.75,
    query_id: str | None = None,
) -> Ranking:
    return rank(query_id, bm25_scores(query, doc, k1, b))


# ---------------------------------------------------------------------------
# Score dumps for offline analysis
# ---------------------------------------------------------------------------


def dump_scores(path: str | Path, rows: Sequence[tuple[str, str, Sequence[float]]]) -> None:
    """Append-style JSONL dump: {"quote_id", "scorer", "scores": [...]}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for quote_id, scorer, scores in rows:
            fh.write(json.dumps({
                "quote_id": quote_id,
                "scorer": scorer,
                "scores": [float(s) for s in scores],
            }) + "\n")
