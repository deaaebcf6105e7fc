"""Training loops for the three model kinds, search, and ablations.

Kinds:

  paragraph          listwise NLL over 1 positive + n sampled negatives
  span_positive_only start/end NLL on positive pairs alone (n ignored)
  span_shared_norm   start/end NLL with the softmax shared over all n+1

One training row is one listwise example (so a batch holds
batch_size * (n+1) packed sequences). Negatives are resampled each epoch
from per-record derived seeds, the optimizer is Adam with gradients
clipped at global norm 1.0, and after every epoch the dev metric (mAP for
the paragraph kind, top-setting F1 for span kinds) decides the checkpoint
kept.
"""

from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import fusion, metrics
from .corpus import (
    AlignedQuote,
    Corpus,
    DatasetSplit,
    QuoteQuery,
    build_quote_query,
    expand_multiparagraph,
    gold_span_tokens,
)
from .encoder import (
    Caps,
    DEFAULT_CAPS,
    EncoderConfig,
    PackedInput,
    SubwordVocab,
    TransformerEncoder,
    batch_tensors,
    pack_input,
    token_span_to_pieces,
)
from .errors import QuoteFinderError, ValidationError
from .pararank import ParagraphModel, RankHead, listwise_loss, score_paragraphs
from .sampling import ListwiseExample, SamplingConfig, assemble_example, derive_seed
from .spanpred import SpanHead, SpanModel, best_spans, shared_norm_loss

logger = logging.getLogger(__name__)

MODEL_KINDS = ("paragraph", "span_positive_only", "span_shared_norm")


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str
    batch_size: int = 32
    learning_rate: float = 1e-3
    max_epochs: int = 4
    n_negatives: int = 12
    scheme: str = "uniform"
    title_cap: int = DEFAULT_CAPS[0]
    context_cap: int = DEFAULT_CAPS[1]
    paragraph_cap: int = DEFAULT_CAPS[2]
    seed: int = 0
    early_stopping_metric: str = "auto"

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValidationError(f"unknown model kind {self.model_kind!r}")
        if self.batch_size < 1 or self.max_epochs < 0:
            raise ValidationError("batch_size must be >= 1 and max_epochs >= 0")

    @property
    def caps(self) -> Caps:
        return Caps(self.title_cap, self.context_cap, self.paragraph_cap)

    @property
    def dev_metric_name(self) -> str:
        if self.early_stopping_metric != "auto":
            return self.early_stopping_metric
        return "map" if self.model_kind == "paragraph" else "f1_top"

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "max_epochs": self.max_epochs,
            "n_negatives": self.n_negatives,
            "scheme": self.scheme,
            "title_cap": self.title_cap,
            "context_cap": self.context_cap,
            "paragraph_cap": self.paragraph_cap,
            "seed": self.seed,
            "early_stopping_metric": self.early_stopping_metric,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass
class Checkpoint:
    kind: str
    encoder_config: EncoderConfig
    encoder_state: dict
    head_state: dict
    train_config: dict
    history: list[dict]
    best_epoch: int
    vocab_hash: str
    caps: Caps


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> None:
    torch.save({
        "format": 1,
        "kind": checkpoint.kind,
        "encoder_config": checkpoint.encoder_config.to_dict(),
        "encoder_state": checkpoint.encoder_state,
        "head_state": checkpoint.head_state,
        "train_config": checkpoint.train_config,
        "history": checkpoint.history,
        "best_epoch": checkpoint.best_epoch,
        "vocab_hash": checkpoint.vocab_hash,
        "caps": list(checkpoint.caps),
    }, path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = torch.load(path, weights_only=True)
    return Checkpoint(
        kind=data["kind"],
        encoder_config=EncoderConfig.from_dict(data["encoder_config"]),
        encoder_state=data["encoder_state"],
        head_state=data["head_state"],
        train_config=data["train_config"],
        history=data["history"],
        best_epoch=data["best_epoch"],
        vocab_hash=data["vocab_hash"],
        caps=Caps(*data["caps"]),
    )


def _check_vocab(checkpoint: Checkpoint, vocab: SubwordVocab) -> None:
    if checkpoint.vocab_hash != vocab.content_hash():
        raise ValidationError("checkpoint was trained with a different vocabulary")


def paragraph_model_from(checkpoint: Checkpoint, vocab: SubwordVocab) -> ParagraphModel:
    if checkpoint.kind != "paragraph":
        raise ValidationError(f"checkpoint kind {checkpoint.kind!r} is not a paragraph model")
    _check_vocab(checkpoint, vocab)
    encoder = TransformerEncoder(checkpoint.encoder_config)
    encoder.load_state_dict(checkpoint.encoder_state)
    head = RankHead(checkpoint.encoder_config.hidden_size)
    head.load_state_dict(checkpoint.head_state)
    encoder.eval()
    return ParagraphModel(encoder=encoder, head=head, vocab=vocab, caps=checkpoint.caps)


def span_model_from(checkpoint: Checkpoint, vocab: SubwordVocab) -> SpanModel:
    if checkpoint.kind not in ("span_positive_only", "span_shared_norm"):
        raise ValidationError(f"checkpoint kind {checkpoint.kind!r} is not a span model")
    _check_vocab(checkpoint, vocab)
    encoder = TransformerEncoder(checkpoint.encoder_config)
    encoder.load_state_dict(checkpoint.encoder_state)
    head = SpanHead(checkpoint.encoder_config.hidden_size)
    head.load_state_dict(checkpoint.head_state)
    encoder.eval()
    return SpanModel(encoder=encoder, head=head, vocab=vocab, caps=checkpoint.caps)


# ---------------------------------------------------------------------------
# Training data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainRecord:
    """One positive (query, paragraph, local span) after multi-paragraph
    expansion; negatives are sampled independently per record."""

    quote_id: str
    part: int
    source_id: str
    query: QuoteQuery
    positive: int
    span: tuple[int, int]


@dataclass
class Row:
    """One listwise example packed and ready for a forward pass."""

    packed: list[PackedInput]
    positive_position: int
    gold_pieces: tuple[int, int] | None


def build_records(quotes: Sequence[AlignedQuote], corpus: Corpus) -> list[TrainRecord]:
    records = []
    for quote in quotes:
        article = corpus.article_for(quote)
        source = corpus.source_for(quote)
        query = build_quote_query(article, quote)
        for part, piece in enumerate(expand_multiparagraph(quote, source)):
            records.append(TrainRecord(
                quote_id=quote.quote_id,
                part=part,
                source_id=source.id,
                query=query,
                positive=piece.paragraph_index,
                span=(piece.span_start, piece.span_end),
            ))
    return records


def _example_for(record: TrainRecord, corpus: Corpus, n: int, scheme: str, seed: int) -> ListwiseExample:
    if n == 0:
        return ListwiseExample(
            query=record.query, paragraphs=(record.positive,),
            positive_position=0, gold_span=record.span,
        )
    cfg = SamplingConfig(n=n, scheme=scheme, seed=seed)
    return assemble_example(record.query, corpus.sources[record.source_id],
                            record.positive, record.span, cfg)


def build_rows(
    records: Sequence[TrainRecord],
    corpus: Corpus,
    cfg: TrainConfig,
    vocab: SubwordVocab,
    epoch: int,
    need_gold: bool,
) -> list[Row]:
    """Pack one row per record; rows whose gold span falls past the
    paragraph cap are dropped (they cannot supervise the span heads)."""
    n = 0 if cfg.model_kind == "span_positive_only" else cfg.n_negatives
    rows: list[Row] = []
    dropped = 0
    for record in records:
        seed = derive_seed(cfg.seed, f"{record.quote_id}:{record.part}:{epoch}")
        example = _example_for(record, corpus, n, cfg.scheme, seed)
        doc = corpus.sources[record.source_id]
        packed = [pack_input(example.query, doc.paragraphs[i], vocab, cfg.caps)
                  for i in example.paragraphs]
        gold_pieces = None
        if need_gold:
            try:
                gold_pieces = token_span_to_pieces(
                    example.gold_span, packed[example.positive_position])
            except ValidationError:
                dropped += 1
                continue
        rows.append(Row(packed=packed, positive_position=example.positive_position,
                        gold_pieces=gold_pieces))
    if dropped:
        logger.info("dropped %d rows with spans beyond the paragraph cap", dropped)
    return rows


def compute_batch_loss(
    encoder: TransformerEncoder,
    head: RankHead | SpanHead,
    kind: str,
    rows: Sequence[Row],
    vocab: SubwordVocab,
) -> torch.Tensor:
    """Mean loss over rows; all rows' sequences share one forward pass."""
    flat = [p for row in rows for p in row.packed]
    ids, segments, mask = batch_tensors(flat, vocab.pad_id)
    hidden = encoder(ids, segments, mask)
    losses = []
    offset = 0
    if kind == "paragraph":
        scores = hidden[:, 0] @ head.vector
        for row in rows:
            width = len(row.packed)
            losses.append(listwise_loss(scores[offset : offset + width], row.positive_position))
            offset += width
    else:
        start_all = hidden @ head.start
        end_all = hidden @ head.end
        for row in rows:
            width = len(row.packed)
            starts = [start_all[offset + k, : len(p)] for k, p in enumerate(row.packed)]
            ends = [end_all[offset + k, : len(p)] for k, p in enumerate(row.packed)]
            positive_packed = row.packed[row.positive_position]
            losses.append(shared_norm_loss(
                starts, ends, row.positive_position, row.gold_pieces,
                paragraph_piece_range=positive_packed.paragraph_piece_range,
            ))
            offset += width
    return torch.stack(losses).mean()


# ---------------------------------------------------------------------------
# Prediction plumbing shared by dev metrics, evaluation, and serving
# ---------------------------------------------------------------------------


def gold_for_quotes(quotes: Sequence[AlignedQuote], corpus: Corpus) -> list[metrics.QuoteGold]:
    return [
        metrics.QuoteGold(
            quote_id=q.quote_id,
            positives=q.positive_paragraphs,
            gold_tokens=gold_span_tokens(q, corpus.source_for(q)),
        )
        for q in quotes
    ]


def _span_fields(doc, spans):
    offsets = tuple((s.token_start, s.token_end) if s is not None else None for s in spans)
    tokens = tuple(
        tuple(doc.paragraphs[i].tokens[s.token_start : s.token_end + 1]) if s is not None else None
        for i, s in enumerate(spans)
    )
    return offsets, tokens


def run_predictions(
    quotes: Sequence[AlignedQuote],
    corpus: Corpus,
    paragraph_model: ParagraphModel | None = None,
    span_model: SpanModel | None = None,
    weights: fusion.FusionWeights | None = None,
) -> list[metrics.QuotePrediction]:
    """Per-quote ranking + spans for whichever models are supplied.

    Both models + weights -> fused ranking; paragraph only -> score
    ranking; span only -> ranking by best-span raw score.
    """
    if paragraph_model is None and span_model is None:
        raise ValidationError("need at least one model")
    predictions = []
    for quote in quotes:
        article = corpus.article_for(quote)
        doc = corpus.source_for(quote)
        query = build_quote_query(article, quote)
        spans = best_spans(query, doc, span_model) if span_model is not None else None
        para_scores = (score_paragraphs(query, doc, paragraph_model)
                       if paragraph_model is not None else None)
        if para_scores is not None and spans is not None and weights is not None:
            span_scores = [s.raw_score if s is not None else -np.inf for s in spans]
            order = fusion.fused_order(
                fusion.span_posteriors(span_scores),
                fusion.paragraph_posteriors(para_scores),
                weights,
            )
        elif para_scores is not None:
            order = sorted(range(len(doc.paragraphs)), key=lambda i: (-para_scores[i], i))
        else:
            span_scores = [s.raw_score if s is not None else -np.inf for s in spans]
            order = sorted(range(len(doc.paragraphs)), key=lambda i: (-span_scores[i], i))
        offsets, tokens = _span_fields(doc, spans) if spans is not None else ((), ())
        predictions.append(metrics.QuotePrediction(
            quote_id=quote.quote_id,
            ranking=tuple(order),
            spans=offsets,
            span_tokens=tokens,
        ))
    return predictions


def build_dev_cache(
    quotes: Sequence[AlignedQuote],
    corpus: Corpus,
    paragraph_model: ParagraphModel,
    span_model: SpanModel,
) -> list[fusion.DevCacheRecord]:
    records = []
    for quote in quotes:
        article = corpus.article_for(quote)
        doc = corpus.source_for(quote)
        query = build_quote_query(article, quote)
        para_scores = score_paragraphs(query, doc, paragraph_model)
        spans = best_spans(query, doc, span_model)
        span_scores = [s.raw_score if s is not None else -np.inf for s in spans]
        offsets, tokens = _span_fields(doc, spans)
        records.append(fusion.DevCacheRecord(
            quote_id=quote.quote_id,
            p_paragraph=[float(p) for p in fusion.paragraph_posteriors(para_scores)],
            p_span=[float(p) for p in fusion.span_posteriors(span_scores)],
            best_spans=list(offsets),
            positives=quote.positive_paragraphs,
            gold_tokens=gold_span_tokens(quote, doc),
            span_tokens=list(tokens),
        ))
    return records


def _dev_metric(
    name: str,
    quotes: Sequence[AlignedQuote],
    corpus: Corpus,
    paragraph_model: ParagraphModel | None,
    span_model: SpanModel | None,
) -> float:
    if not quotes:
        return 0.0
    predictions = run_predictions(quotes, corpus, paragraph_model, span_model)
    gold = gold_for_quotes(quotes, corpus)
    ranking_eval, span_eval = metrics.evaluate_run(predictions, gold, setting="top")
    return ranking_eval.map if name == "map" else span_eval.f1


# ---------------------------------------------------------------------------
# The training loop
# ---------------------------------------------------------------------------


def train(
    corpus: Corpus,
    train_split: DatasetSplit,
    dev_split: DatasetSplit,
    cfg: TrainConfig,
    vocab: SubwordVocab,
    encoder_config: EncoderConfig | None = None,
    log_path: str | Path | None = None,
) -> Checkpoint:
    """Gradient training of one model kind; returns the best-dev epoch."""
    if not train_split.quotes:
        raise ValidationError("empty training split")
    if encoder_config is None:
        encoder_config = EncoderConfig(vocab_size=len(vocab), seed=cfg.seed)
    torch.manual_seed(derive_seed(cfg.seed, "train-loop"))

    encoder = TransformerEncoder(encoder_config)
    if cfg.model_kind == "paragraph":
        head: RankHead | SpanHead = RankHead(encoder_config.hidden_size, seed=cfg.seed + 1)
    else:
        head = SpanHead(encoder_config.hidden_size, seed=cfg.seed + 1)
    need_gold = cfg.model_kind != "paragraph"

    records = build_records(train_split.quotes, corpus)
    optimizer = torch.optim.Adam(
        list(encoder.parameters()) + list(head.parameters()), lr=cfg.learning_rate
    )

    def snapshot():
        return (
            copy.deepcopy(encoder.state_dict()),
            copy.deepcopy(head.state_dict()),
        )

    def bundle():
        if cfg.model_kind == "paragraph":
            return ParagraphModel(encoder, head, vocab, cfg.caps), None
        return None, SpanModel(encoder, head, vocab, cfg.caps)

    metric_name = cfg.dev_metric_name
    history: list[dict] = []
    best_state = snapshot()  # the initialized model, returned when max_epochs == 0
    best_metric = -float("inf")
    best_epoch = 0

    log_fh = Path(log_path).open("w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, cfg.max_epochs + 1):
            rows = build_rows(records, corpus, cfg, vocab, epoch, need_gold)
            if not rows:
                raise QuoteFinderError("no usable training rows (all spans truncated?)")
            shuffle_rng = np.random.default_rng(derive_seed(cfg.seed, f"shuffle:{epoch}"))
            order = shuffle_rng.permutation(len(rows))
            encoder.train()
            total_loss = 0.0
            batches = 0
            for start in range(0, len(order), cfg.batch_size):
                batch = [rows[i] for i in order[start : start + cfg.batch_size]]
                optimizer.zero_grad()
                loss = compute_batch_loss(encoder, head, cfg.model_kind, batch, vocab)
                if not torch.isfinite(loss):
                    raise QuoteFinderError(
                        f"non-finite loss at epoch {epoch}, batch {batches}: {loss.item()!r}"
                    )
                loss.backward()
                torch.nn.utils.clip_grad_norm_(
                    list(encoder.parameters()) + list(head.parameters()), 1.0
                )
                optimizer.step()
                total_loss += float(loss.item())
                batches += 1
            encoder.eval()
            train_loss = total_loss / max(1, batches)

            paragraph_model, span_model = bundle()
            dev_metric = _dev_metric(metric_name, dev_split.quotes, corpus,
                                     paragraph_model, span_model)
            entry = {"epoch": epoch, "train_loss": train_loss, "dev_metric": dev_metric}
            history.append(entry)
            if log_fh:
                log_fh.write(json.dumps(entry) + "\n")
                log_fh.flush()
            logger.info("epoch %d: loss %.4f, dev %s %.4f", epoch, train_loss,
                        metric_name, dev_metric)
            if dev_metric > best_metric or not dev_split.quotes:
                best_metric = dev_metric
                best_epoch = epoch
                best_state = snapshot()
    finally:
        if log_fh:
            log_fh.close()

    return Checkpoint(
        kind=cfg.model_kind,
        encoder_config=encoder_config,
        encoder_state=best_state[0],
        head_state=best_state[1],
        train_config=cfg.to_dict(),
        history=history,
        best_epoch=best_epoch,
        vocab_hash=vocab.content_hash(),
        caps=cfg.caps,
    )


# ---------------------------------------------------------------------------
# Hyperparameter search
# ---------------------------------------------------------------------------


PAPER_GRID = {
    "batch_size": (16, 32),
    "learning_rate": (5e-5, 3e-5, 2e-5),
    "n_negatives": (3, 6, 9, 12),
}


def expand_grid(grid: dict[str, Sequence]) -> list[dict]:
    cells: list[dict] = [{}]
    for key, values in grid.items():
        cells = [{**cell, key: value} for cell in cells for value in values]
    return cells


def hyperparameter_search(
    corpus: Corpus,
    train_split: DatasetSplit,
    dev_split: DatasetSplit,
    base: TrainConfig,
    grid: dict[str, Sequence],
    vocab: SubwordVocab,
    encoder_config: EncoderConfig | None = None,
) -> tuple[TrainConfig, Checkpoint, list[dict]]:
    """Train every grid cell; select by dev metric, ties preferring smaller
    n_negatives then smaller batch_size. Failed cells are logged and the
    grid continues."""
    cells = expand_grid(grid)
    if not cells:
        raise ValidationError("empty hyperparameter grid")
    table: list[dict] = []
    best: tuple[float, int, int, TrainConfig, Checkpoint] | None = None
    for cell in cells:
        cfg = replace(base, **cell)
        try:
            checkpoint = train(corpus, train_split, dev_split, cfg, vocab, encoder_config)
        except QuoteFinderError as exc:
            logger.warning("grid cell %s failed: %s", cell, exc)
            table.append({**cell, "dev_metric": None, "error": str(exc)})
            continue
        dev_metric = (checkpoint.history[checkpoint.best_epoch - 1]["dev_metric"]
                      if checkpoint.history and checkpoint.best_epoch >= 1 else 0.0)
        table.append({**cell, "dev_metric": dev_metric})
        key = (-dev_metric, cfg.n_negatives, cfg.batch_size)
        if best is None or key < (-best[0], best[1], best[2]):
            best = (dev_metric, cfg.n_negatives, cfg.batch_size, cfg, checkpoint)
    if best is None:
        raise QuoteFinderError("every grid cell failed")
    return best[3], best[4], table


# ---------------------------------------------------------------------------
# Ablations
# ---------------------------------------------------------------------------


DEFAULT_VARIANTS: tuple[tuple[str, Caps], ...] = (
    ("no_title", Caps(0, DEFAULT_CAPS[1], DEFAULT_CAPS[2])),
    ("context_50", Caps(DEFAULT_CAPS[0], 50, DEFAULT_CAPS[2])),
    ("context_25", Caps(DEFAULT_CAPS[0], 25, DEFAULT_CAPS[2])),
    ("context_10", Caps(DEFAULT_CAPS[0], 10, DEFAULT_CAPS[2])),
)

ABLATION_METRICS = ("acc@1", "acc@5", "f1_positive", "f1_top")


def _combined_metrics(
    quotes, corpus, paragraph_model, span_model, weights
) -> dict[str, float]:
    predictions = run_predictions(quotes, corpus, paragraph_model, span_model, weights)
    gold = gold_for_quotes(quotes, corpus)
    ranking_eval, span_top = metrics.evaluate_run(predictions, gold, setting="top")
    _, span_positive = metrics.evaluate_run(predictions, gold, setting="positive")
    return {
        "acc@1": ranking_eval.acc[1],
        "acc@5": ranking_eval.acc[5],
        "f1_positive": span_positive.f1,
        "f1_top": span_top.f1,
    }


def run_ablation(
    corpus: Corpus,
    train_split: DatasetSplit,
    dev_split: DatasetSplit,
    vocab: SubwordVocab,
    base_paragraph: Checkpoint,
    base_span: Checkpoint,
    weights: fusion.FusionWeights,
    variants: Sequence[tuple[str, Caps]] = DEFAULT_VARIANTS,
) -> dict:
    """Retrain both models per context variant, recombine with the base
    fusion weights, and report metric deltas against the full model."""
    base_metrics = _combined_metrics(
        dev_split.quotes, corpus,
        paragraph_model_from(base_paragraph, vocab),
        span_model_from(base_span, vocab),
        weights,
    )
    variant_rows: list[tuple[str, dict[str, float]]] = []
    for name, caps in variants:
        cfg_p = replace(TrainConfig.from_dict(base_paragraph.train_config),
                        title_cap=caps.title, context_cap=caps.context,
                        paragraph_cap=caps.paragraph)
        cfg_s = replace(TrainConfig.from_dict(base_span.train_config),
                        title_cap=caps.title, context_cap=caps.context,
                        paragraph_cap=caps.paragraph)
        ckpt_p = train(corpus, train_split, dev_split, cfg_p, vocab,
                       base_paragraph.encoder_config)
        ckpt_s = train(corpus, train_split, dev_split, cfg_s, vocab,
                       base_span.encoder_config)
        values = _combined_metrics(
            dev_split.quotes, corpus,
            paragraph_model_from(ckpt_p, vocab),
            span_model_from(ckpt_s, vocab),
            weights,
        )
        variant_rows.append((name, values))
    return {
        "base": {"name": "full", "metrics": base_metrics},
        "variants": [
            {
                "name": name,
                "metrics": values,
                "deltas": {k: values[k] - base_metrics[k] for k in base_metrics},
            }
            for name, values in variant_rows
        ],
    }
