"""Negative paragraph sampling and listwise training example assembly.

Each training example pairs the positive paragraph with n negatives drawn
from the same source document, without replacement, under one of three
weighting schemes:

  uniform     equal weight
  positional  weight(i) proportional to 1 / (1 + |i - positive|)
  tfidf       weight(i) proportional to max(cos(query, paragraph_i), 1e-6)
              using the same per-document TF-IDF vectors as the baselines

The positive's position inside the assembled list is shuffled so the loss
cannot learn positional shortcuts.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from .corpus import QuoteQuery, SourceDocument
from .errors import ValidationError
from .pararank import (
    _document_frequency,
    _paragraph_term_counts,
    baseline_query_terms,
    cosine,
    tfidf_vector,
)

SCHEMES = ("uniform", "tfidf", "positional")
TFIDF_WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True)
class SamplingConfig:
    n: int
    scheme: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError("n must be at least 1")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")


@dataclass(frozen=True)
class ListwiseExample:
    query: QuoteQuery
    paragraphs: tuple[int, ...]
    positive_position: int
    gold_span: tuple[int, int]  # paragraph-local inclusive token offsets

    def __post_init__(self):
        if len(set(self.paragraphs)) != len(self.paragraphs):
            raise ValidationError("paragraph indices must be distinct")
        if not 0 <= self.positive_position < len(self.paragraphs):
            raise ValidationError("positive position out of range")


def derive_seed(global_seed: int, key: str) -> int:
    """Stable per-quote seed; Python's hash() is salted per process."""
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return (global_seed ^ int.from_bytes(digest, "big")) % (2**63)


def negative_weights(
    doc: SourceDocument, positive: int, scheme: str, query: QuoteQuery | None
) -> dict[int, float]:
    """Unnormalized sampling weight of every non-positive paragraph."""
    candidates = [i for i in range(len(doc.paragraphs)) if i != positive]
    if scheme == "uniform":
        return {i: 1.0 for i in candidates}
    if scheme == "positional":
        return {i: 1.0 / (1.0 + abs(i - positive)) for i in candidates}
    if scheme == "tfidf":
        if query is None:
            raise ValidationError("tfidf scheme requires the quote query")
        counts = _paragraph_term_counts(doc)
        df = _document_frequency(counts)
        n_docs = len(doc.paragraphs)
        query_vec = tfidf_vector(baseline_query_terms(query), df, n_docs)
        return {
            i: max(cosine(query_vec, tfidf_vector(counts[i], df, n_docs)), TFIDF_WEIGHT_FLOOR)
            for i in candidates
        }
    raise ValidationError(f"unknown scheme {scheme!r}")


def _sample(
    doc: SourceDocument,
    positive: int,
    cfg: SamplingConfig,
    query: QuoteQuery | None,
    rng: np.random.Generator,
) -> list[int]:
    if not 0 <= positive < len(doc.paragraphs):
        raise ValidationError(f"positive index {positive} outside document {doc.id!r}")
    if len(doc.paragraphs) < 2:
        warnings.warn(f"document {doc.id!r} has a single paragraph; no negatives available")
        return []
    weights = negative_weights(doc, positive, cfg.scheme, query)
    candidates = sorted(weights)
    probs = np.array([weights[i] for i in candidates], dtype=np.float64)
    probs /= probs.sum()
    k = min(cfg.n, len(candidates))
    chosen = rng.choice(len(candidates), size=k, replace=False, p=probs)
    return [candidates[int(c)] for c in chosen]


def sample_negatives(
    doc: SourceDocument, positive: int, cfg: SamplingConfig, query: QuoteQuery | None = None
) -> list[int]:
    """Draw min(n, len-1) distinct negatives; deterministic given cfg.seed."""
    return _sample(doc, positive, cfg, query, np.random.default_rng(cfg.seed))


def assemble_example(
    query: QuoteQuery,
    doc: SourceDocument,
    positive: int,
    gold_span: tuple[int, int],
    cfg: SamplingConfig,
) -> ListwiseExample:
    rng = np.random.default_rng(cfg.seed)
    negatives = _sample(doc, positive, cfg, query, rng)
    position = int(rng.integers(0, len(negatives) + 1))
    paragraphs = negatives[:position] + [positive] + negatives[position:]
    return ListwiseExample(
        query=query,
        paragraphs=tuple(paragraphs),
        positive_position=position,
        gold_span=(int(gold_span[0]), int(gold_span[1])),
    )
