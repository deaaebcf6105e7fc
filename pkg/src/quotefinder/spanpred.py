"""Span scoring heads, training losses, and valid-span decoding.

Two training objectives share one head:

  positive-only  NLL of the gold start/end under softmaxes over every
                 position of the single positive packed input.
  shared-norm    the softmax denominator additionally sums over every
                 position of the n sampled negative inputs, making span
                 scores comparable across paragraphs.

Decoding scores a span (i, j) as start_logit[i] + end_logit[j], restricted
to the paragraph portion of the packed input, valid when j > i (j >= i with
allow_equal). Ties break to the smallest i, then smallest j.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .corpus import QuoteQuery, SourceDocument
from .encoder import (
    Caps,
    DEFAULT_CAPS,
    EncoderOutput,
    PackedInput,
    SubwordVocab,
    TransformerEncoder,
    batch_tensors,
    map_span,
    pack_input,
)
from .errors import QuoteFinderError, ValidationError


class NoValidSpanError(QuoteFinderError):
    """The paragraph admits no span under the validity rule."""


class SpanHead(nn.Module):
    """Start and end scoring vectors applied to per-position vectors."""

    def __init__(self, hidden_size: int, seed: int = 0):
        super().__init__()
        generator = torch.Generator().manual_seed(seed)
        self.start = nn.Parameter(torch.randn(hidden_size, generator=generator) * 0.02)
        self.end = nn.Parameter(torch.randn(hidden_size, generator=generator) * 0.02)


@dataclass(frozen=True)
class SpanPrediction:
    paragraph_index: int
    start: int        # packed-sequence piece positions
    end: int
    token_start: int  # original paragraph token offsets
    token_end: int
    raw_score: float


@dataclass
class SpanModel:
    encoder: TransformerEncoder
    head: SpanHead
    vocab: SubwordVocab
    caps: Caps = Caps(*DEFAULT_CAPS)
    allow_equal: bool = False
    max_span_pieces: int | None = None


def span_logits(output: EncoderOutput, head: SpanHead) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-position start and end logits (dot products with the head)."""
    vectors = output.token_vectors
    start = vectors @ head.start.to(vectors.dtype)
    end = vectors @ head.end.to(vectors.dtype)
    return start, end


def _nll_at(logits: torch.Tensor, gold: int) -> torch.Tensor:
    return torch.logsumexp(logits, dim=0) - logits[gold]


def _check_gold(gold: tuple[int, int], length: int,
                paragraph_piece_range: tuple[int, int] | None) -> None:
    start, end = gold
    if not (0 <= start < length and 0 <= end < length):
        raise ValidationError(f"gold span ({start}, {end}) outside the packed input")
    if paragraph_piece_range is not None:
        first, last = paragraph_piece_range
        if not (first <= start <= last and first <= end <= last):
            raise ValidationError(
                f"gold span ({start}, {end}) outside paragraph range ({first}, {last})"
            )


def positive_only_loss(
    start_logits: torch.Tensor | Sequence[float],
    end_logits: torch.Tensor | Sequence[float],
    gold: tuple[int, int],
    paragraph_piece_range: tuple[int, int] | None = None,
) -> torch.Tensor:
    """Average NLL of the gold start and end, normalized over every
    position of this single packed input."""
    if not isinstance(start_logits, torch.Tensor):
        start_logits = torch.tensor(start_logits, dtype=torch.float64)
    if not isinstance(end_logits, torch.Tensor):
        end_logits = torch.tensor(end_logits, dtype=torch.float64)
    _check_gold(gold, start_logits.numel(), paragraph_piece_range)
    return 0.5 * (_nll_at(start_logits, gold[0]) + _nll_at(end_logits, gold[1]))


def shared_norm_loss(
    start_logits_per_pair: Sequence[torch.Tensor | Sequence[float]],
    end_logits_per_pair: Sequence[torch.Tensor | Sequence[float]],
    positive_pair: int,
    gold: tuple[int, int],
    paragraph_piece_range: tuple[int, int] | None = None,
) -> torch.Tensor:
    """Average NLL of the gold start and end with the softmax denominator
    shared across every position of all n+1 packed inputs.

    ``gold`` indexes positions of the positive pair's own logits.
    """
    if len(start_logits_per_pair) != len(end_logits_per_pair) or not start_logits_per_pair:
        raise ValidationError("need matching, non-empty per-pair logit lists")
    if not 0 <= positive_pair < len(start_logits_per_pair):
        raise ValidationError(f"positive pair {positive_pair} out of range")
    starts = [
        s if isinstance(s, torch.Tensor) else torch.tensor(s, dtype=torch.float64)
        for s in start_logits_per_pair
    ]
    ends = [
        e if isinstance(e, torch.Tensor) else torch.tensor(e, dtype=torch.float64)
        for e in end_logits_per_pair
    ]
    _check_gold(gold, starts[positive_pair].numel(), paragraph_piece_range)
    offset = sum(s.numel() for s in starts[:positive_pair])
    all_starts = torch.cat(starts) if len(starts) > 1 else starts[0]
    all_ends = torch.cat(ends) if len(ends) > 1 else ends[0]
    return 0.5 * (_nll_at(all_starts, offset + gold[0]) + _nll_at(all_ends, offset + gold[1]))


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


def decode_best_span(
    start_logits: Sequence[float] | torch.Tensor | np.ndarray,
    end_logits: Sequence[float] | torch.Tensor | np.ndarray,
    packed: PackedInput,
    allow_equal: bool = False,
    max_len: int | None = None,
    paragraph_index: int = 0,
) -> SpanPrediction:
    """Best-scoring valid span inside the paragraph portion of the input.

    Linear scan: for each end position the best admissible start so far is
    tracked with a monotonic deque (window-limited when max_len is set).
    """
    start = np.asarray(
        start_logits.detach() if isinstance(start_logits, torch.Tensor) else start_logits,
        dtype=np.float64,
    )
    end = np.asarray(
        end_logits.detach() if isinstance(end_logits, torch.Tensor) else end_logits,
        dtype=np.float64,
    )
    if start.shape != end.shape or start.ndim != 1:
        raise ValidationError("start and end logits must be equal-length 1-D arrays")
    first, last = packed.paragraph_piece_range
    if last >= start.size:
        raise ValidationError("logits do not cover the packed sequence")
    if max_len is not None and max_len < 1:
        raise ValidationError("max_len must be positive")

    best: tuple[float, int, int] | None = None
    window: deque[int] = deque()  # start candidates, logits non-increasing
    next_i = first
    for j in range(first, last + 1):
        latest_start = j if allow_equal else j - 1
        while next_i <= min(latest_start, last):
            while window and start[window[-1]] < start[next_i]:
                window.pop()
            window.append(next_i)
            next_i += 1
        if max_len is not None:
            while window and window[0] < j - max_len + 1:
                window.popleft()
        if not window:
            continue
        i = window[0]
        score = float(start[i] + end[j])
        if best is None or score > best[0]:
            best = (score, i, j)

    if best is None:
        raise NoValidSpanError(
            f"no valid span in paragraph range ({first}, {last}) with allow_equal={allow_equal}"
        )
    score, i, j = best
    token_start, token_end = map_span((i, j), packed)
    return SpanPrediction(
        paragraph_index=paragraph_index,
        start=i,
        end=j,
        token_start=token_start,
        token_end=token_end,
        raw_score=score,
    )


def best_spans(
    query: QuoteQuery, doc: SourceDocument, model: SpanModel, batch_size: int = 32
) -> list[SpanPrediction | None]:
    """Best span per paragraph, aligned with paragraph index; None where the
    paragraph admits no valid span."""
    packed = [pack_input(query, p, model.vocab, model.caps) for p in doc.paragraphs]
    predictions: list[SpanPrediction | None] = []
    was_training = model.encoder.training
    model.encoder.eval()
    try:
        with torch.no_grad():
            for chunk_start in range(0, len(packed), batch_size):
                chunk = packed[chunk_start : chunk_start + batch_size]
                ids, segments, mask = batch_tensors(chunk, model.vocab.pad_id)
                hidden = model.encoder(ids, segments, mask)
                start_all = hidden @ model.head.start
                end_all = hidden @ model.head.end
                for row, p in enumerate(chunk):
                    length = len(p)
                    try:
                        predictions.append(decode_best_span(
                            start_all[row, :length],
                            end_all[row, :length],
                            p,
                            allow_equal=model.allow_equal,
                            max_len=model.max_span_pieces,
                            paragraph_index=chunk_start + row,
                        ))
                    except NoValidSpanError:
                        predictions.append(None)
    finally:
        if was_training:
            model.encoder.train()
    return predictions


def rank_spans(
    query: QuoteQuery, doc: SourceDocument, model: SpanModel, batch_size: int = 32
) -> list[SpanPrediction]:
    """One best span per paragraph, ranked by raw score (before softmax)."""
    found = [s for s in best_spans(query, doc, model, batch_size) if s is not None]
    return sorted(found, key=lambda s: (-s.raw_score, s.paragraph_index))
