"""Corpus data model: source documents, articles, aligned quotes.

Input files are pre-tokenized JSON Lines (word tokenization and sentence
segmentation happen upstream):

  sources:  {"id", "date", "paragraphs": [[token, ...], ...]}
  articles: {"id", "date", "source_id", "title": [token, ...],
             "sentences": [[token, ...], ...],
             "quotes": [{"sentence_index", "positive_paragraphs": [int, ...],
                         "span_start", "span_end"}]}

Span offsets are inclusive token indices into the concatenation of the
quote's positive paragraphs. Dates are ISO-8601 strings compared lexically.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import IngestionError, SplitViolationError, ValidationError

logger = logging.getLogger(__name__)

_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
# Word tokenizer for raw strings arriving over the service API; corpus files
# are pre-tokenized and never pass through this.
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize_text(text: str) -> tuple[str, ...]:
    """Split a raw string into word tokens (punctuation kept as tokens)."""
    return tuple(_TOKEN_RE.findall(text))


@dataclass(frozen=True)
class SourceParagraph:
    index: int
    tokens: tuple[str, ...]
    raw_text: str


@dataclass(frozen=True)
class SourceDocument:
    id: str
    date: str
    paragraphs: tuple[SourceParagraph, ...]

    def paragraph_tokens(self, index: int) -> tuple[str, ...]:
        return self.paragraphs[index].tokens


@dataclass(frozen=True)
class Article:
    id: str
    date: str
    title: tuple[str, ...]
    sentences: tuple[tuple[str, ...], ...]
    source_id: str


@dataclass(frozen=True)
class AlignedQuote:
    """Ground-truth link between one article sentence and its source span.

    ``span_start``/``span_end`` are inclusive token offsets within the
    concatenation of the positive paragraphs' tokens.
    """

    quote_id: str
    article_id: str
    quote_sentence_index: int
    positive_paragraphs: tuple[int, ...]
    span_start: int
    span_end: int


@dataclass(frozen=True)
class QuoteQuery:
    """Query side of one recommendation point: title + left context."""

    title: tuple[str, ...]
    left_context: tuple[str, ...]


@dataclass(frozen=True)
class SpanPart:
    """One positive paragraph's share of a quote span (paragraph-local)."""

    paragraph_index: int
    span_start: int
    span_end: int


@dataclass
class Corpus:
    sources: dict[str, SourceDocument]
    articles: dict[str, Article]
    quotes: list[AlignedQuote]
    rejected_multi_source: tuple[str, ...] = ()

    def article_for(self, quote: AlignedQuote) -> Article:
        return self.articles[quote.article_id]

    def source_for(self, quote: AlignedQuote) -> SourceDocument:
        return self.sources[self.articles[quote.article_id].source_id]


@dataclass
class DatasetSplit:
    name: str
    quotes: list[AlignedQuote] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.quotes)


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------


def _read_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}: line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise IngestionError(f"{path}: line {lineno}: record is not an object")
            yield lineno, record


def _require(record: dict, key: str, path: Path, lineno: int):
    if key not in record:
        raise IngestionError(f"{path}: line {lineno}: missing field {key!r}")
    return record[key]


def _check_date(date: str, what: str) -> str:
    if not isinstance(date, str) or not _DATE_RE.match(date):
        raise ValidationError(f"{what}: date {date!r} is not ISO-8601 (YYYY-MM-DD)")
    return date


def source_from_payload(record: dict, where: str = "payload") -> SourceDocument:
    """Validate one source record (also the POST /sources body schema)."""
    if not isinstance(record, dict):
        raise IngestionError(f"{where}: source record is not an object")
    for key in ("id", "date", "paragraphs"):
        if key not in record:
            raise IngestionError(f"{where}: missing field {key!r}")
    sid = record["id"]
    date = _check_date(record["date"], f"source {sid!r}")
    raw_paragraphs = record["paragraphs"]
    if not isinstance(raw_paragraphs, list) or not raw_paragraphs:
        raise ValidationError(f"source {sid!r}: paragraphs must be a non-empty list")
    paragraphs = []
    for idx, tokens in enumerate(raw_paragraphs):
        if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
            raise ValidationError(f"source {sid!r}: paragraph {idx} must be a non-empty token list")
        paragraphs.append(SourceParagraph(index=idx, tokens=tuple(tokens), raw_text=" ".join(tokens)))
    return SourceDocument(id=str(sid), date=date, paragraphs=tuple(paragraphs))


def _parse_article(record: dict, path: Path, lineno: int) -> tuple[Article, list[dict]]:
    aid = str(_require(record, "id", path, lineno))
    date = _check_date(_require(record, "date", path, lineno), f"article {aid!r}")
    source_id = str(_require(record, "source_id", path, lineno))
    title = _require(record, "title", path, lineno)
    sentences = _require(record, "sentences", path, lineno)
    quotes = _require(record, "quotes", path, lineno)
    if not isinstance(title, list) or not all(isinstance(t, str) for t in title):
        raise IngestionError(f"{path}: line {lineno}: title must be a token list")
    if not isinstance(sentences, list) or not all(isinstance(s, list) for s in sentences):
        raise IngestionError(f"{path}: line {lineno}: sentences must be a list of token lists")
    if not isinstance(quotes, list):
        raise IngestionError(f"{path}: line {lineno}: quotes must be a list")
    article = Article(
        id=aid,
        date=date,
        title=tuple(title),
        sentences=tuple(tuple(s) for s in sentences),
        source_id=source_id,
    )
    return article, quotes


def validate_quote(quote: AlignedQuote, article: Article, source: SourceDocument) -> None:
    """Check one aligned quote against its article and source document."""
    qid = quote.quote_id
    if not 0 <= quote.quote_sentence_index < len(article.sentences):
        raise ValidationError(
            f"quote {qid!r}: sentence_index {quote.quote_sentence_index} outside article "
            f"({len(article.sentences)} sentences)"
        )
    positives = quote.positive_paragraphs
    if not positives:
        raise ValidationError(f"quote {qid!r}: positive_paragraphs is empty")
    if list(positives) != sorted(positives):
        raise ValidationError(f"quote {qid!r}: positive_paragraphs not sorted")
    if len(positives) > 1 and any(b - a != 1 for a, b in zip(positives, positives[1:])):
        raise ValidationError(f"quote {qid!r}: positive_paragraphs not contiguous: {positives}")
    for p in positives:
        if not 0 <= p < len(source.paragraphs):
            raise ValidationError(f"quote {qid!r}: paragraph index {p} outside source {source.id!r}")
    lengths = [len(source.paragraphs[p].tokens) for p in positives]
    total = sum(lengths)
    if not 0 <= quote.span_start <= quote.span_end:
        raise ValidationError(f"quote {qid!r}: span ({quote.span_start}, {quote.span_end}) is not ordered")
    if quote.span_end >= total:
        raise ValidationError(
            f"quote {qid!r}: span end {quote.span_end} beyond concatenated paragraph length {total}"
        )
    if len(positives) > 1:
        # A multi-paragraph span must touch every listed paragraph.
        if quote.span_start > lengths[0] - 1:
            raise ValidationError(f"quote {qid!r}: span does not start inside paragraph {positives[0]}")
        if quote.span_end < total - lengths[-1]:
            raise ValidationError(f"quote {qid!r}: span does not reach paragraph {positives[-1]}")


def ingest_corpus(sources_path: str | Path, articles_path: str | Path) -> Corpus:
    """Load and cross-validate a corpus from the two JSON Lines files.

    Articles whose records disagree on ``source_id`` (multi-source articles)
    are rejected with a warning; every other inconsistency raises.
    """
    sources_path, articles_path = Path(sources_path), Path(articles_path)
    sources: dict[str, SourceDocument] = {}
    for lineno, record in _read_jsonl(sources_path):
        doc = source_from_payload(record, f"{sources_path}: line {lineno}")
        if doc.id in sources:
            raise ValidationError(f"duplicate source id {doc.id!r} at {sources_path}:{lineno}")
        sources[doc.id] = doc

    seen: dict[str, tuple[Article, list[dict], int]] = {}
    rejected: list[str] = []
    for lineno, record in _read_jsonl(articles_path):
        article, raw_quotes = _parse_article(record, articles_path, lineno)
        if article.id in seen:
            prior = seen[article.id][0]
            if prior.source_id != article.source_id:
                if article.id not in rejected:
                    rejected.append(article.id)
                    logger.warning(
                        "article %r quotes multiple sources (%r, %r); rejected",
                        article.id, prior.source_id, article.source_id,
                    )
                continue
            raise ValidationError(f"duplicate article id {article.id!r} at {articles_path}:{lineno}")
        seen[article.id] = (article, raw_quotes, lineno)

    articles: dict[str, Article] = {}
    quotes: list[AlignedQuote] = []
    for aid, (article, raw_quotes, lineno) in seen.items():
        if aid in rejected:
            continue
        if article.source_id not in sources:
            raise ValidationError(
                f"article {aid!r}: unknown source id {article.source_id!r} ({articles_path}:{lineno})"
            )
        source = sources[article.source_id]
        articles[aid] = article
        for k, raw in enumerate(raw_quotes):
            if not isinstance(raw, dict):
                raise IngestionError(f"{articles_path}: line {lineno}: quote {k} is not an object")
            try:
                quote = AlignedQuote(
                    quote_id=f"{aid}:q{k}",
                    article_id=aid,
                    quote_sentence_index=int(raw["sentence_index"]),
                    positive_paragraphs=tuple(int(p) for p in raw["positive_paragraphs"]),
                    span_start=int(raw["span_start"]),
                    span_end=int(raw["span_end"]),
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise IngestionError(f"{articles_path}: line {lineno}: malformed quote {k}: {exc}") from exc
            validate_quote(quote, article, source)
            quotes.append(quote)

    return Corpus(sources=sources, articles=articles, quotes=quotes, rejected_multi_source=tuple(rejected))


# ---------------------------------------------------------------------------
# Quote queries, splits, span expansion
# ---------------------------------------------------------------------------


def build_quote_query(article: Article, quote: AlignedQuote) -> QuoteQuery:
    """Title plus the concatenation of all sentences before the quoting one."""
    if quote.article_id != article.id:
        raise ValidationError(f"quote {quote.quote_id!r} does not belong to article {article.id!r}")
    idx = quote.quote_sentence_index
    if not 0 <= idx < len(article.sentences):
        raise ValidationError(f"quote {quote.quote_id!r}: sentence index {idx} out of range")
    left: list[str] = []
    for sentence in article.sentences[:idx]:
        left.extend(sentence)
    return QuoteQuery(title=article.title, left_context=tuple(left))


def split_by_date(
    corpus: Corpus, train_end: str, dev_end: str
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Partition quotes by source publication date.

    train: date <= train_end; dev: train_end < date <= dev_end; test: later.
    Fails if any article would contribute quotes to two splits.
    """
    _check_date(train_end, "train_end")
    _check_date(dev_end, "dev_end")
    if not train_end < dev_end:
        raise ValidationError(f"train_end {train_end!r} must precede dev_end {dev_end!r}")

    splits = (DatasetSplit("train"), DatasetSplit("dev"), DatasetSplit("test"))
    assignment: dict[str, set[str]] = {}
    for quote in corpus.quotes:
        date = corpus.source_for(quote).date
        if date <= train_end:
            split = splits[0]
        elif date <= dev_end:
            split = splits[1]
        else:
            split = splits[2]
        split.quotes.append(quote)
        assignment.setdefault(quote.article_id, set()).add(split.name)
    # Defensive: single-source articles cannot actually straddle a boundary,
    # but the invariant is checked rather than assumed.
    check_split_assignment(assignment)
    return splits


def check_split_assignment(assignment: dict[str, set[str]]) -> None:
    """Fail if any article's quotes land in more than one split."""
    offenders = sorted(aid for aid, names in assignment.items() if len(names) > 1)
    if offenders:
        raise SplitViolationError(
            "articles quote sources on both sides of a split boundary: " + ", ".join(offenders)
        )


def expand_multiparagraph(quote: AlignedQuote, source: SourceDocument) -> list[SpanPart]:
    """Break a quote into one paragraph-local record per positive paragraph."""
    parts: list[SpanPart] = []
    offset = 0
    for p in quote.positive_paragraphs:
        length = len(source.paragraphs[p].tokens)
        lo, hi = offset, offset + length - 1
        start = max(quote.span_start, lo)
        end = min(quote.span_end, hi)
        if start > end:
            raise ValidationError(f"quote {quote.quote_id!r}: span does not intersect paragraph {p}")
        parts.append(SpanPart(paragraph_index=p, span_start=start - offset, span_end=end - offset))
        offset += length
    return parts


def gold_span_tokens(quote: AlignedQuote, source: SourceDocument) -> tuple[str, ...]:
    """Tokens of the quote span, concatenated across its positive paragraphs."""
    tokens: list[str] = []
    for part in expand_multiparagraph(quote, source):
        tokens.extend(source.paragraphs[part.paragraph_index].tokens[part.span_start : part.span_end + 1])
    return tuple(tokens)


# ---------------------------------------------------------------------------
# Writers (fixture generation, split exports)
# ---------------------------------------------------------------------------


def write_sources_jsonl(path: str | Path, sources: Iterable[SourceDocument]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for doc in sources:
            fh.write(json.dumps({
                "id": doc.id,
                "date": doc.date,
                "paragraphs": [list(p.tokens) for p in doc.paragraphs],
            }) + "\n")


def write_articles_jsonl(path: str | Path, corpus: Corpus) -> None:
    by_article: dict[str, list[AlignedQuote]] = {}
    for quote in corpus.quotes:
        by_article.setdefault(quote.article_id, []).append(quote)
    with Path(path).open("w", encoding="utf-8") as fh:
        for aid, article in corpus.articles.items():
            fh.write(json.dumps({
                "id": article.id,
                "date": article.date,
                "source_id": article.source_id,
                "title": list(article.title),
                "sentences": [list(s) for s in article.sentences],
                "quotes": [
                    {
                        "sentence_index": q.quote_sentence_index,
                        "positive_paragraphs": list(q.positive_paragraphs),
                        "span_start": q.span_start,
                        "span_end": q.span_end,
                    }
                    for q in by_article.get(aid, [])
                ],
            }) + "\n")
