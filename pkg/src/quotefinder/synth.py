"""Synthetic corpus with planted lexical quote signals for sanity runs.

Each source document has one quotable paragraph, identifiable by content:
it carries start/end marker tokens ("spotlight" ... "wrapup") around the
planted span. The marked position varies across sources, so models must
read the paragraph text rather than memorize positions. Query-side and
paragraph-side vocabularies are disjoint, which keeps bag-of-words
baselines at zero similarity everywhere (their rankings collapse to the
index tie-break).
"""

from __future__ import annotations

import numpy as np

from .corpus import AlignedQuote, Article, Corpus, SourceDocument, SourceParagraph

SPAN_START, SPAN_END = 2, 5  # planted span inside the marked paragraph
QUOTES_PER_SOURCE = 10

def _marked_position(source_index: int, n_train: int, n_dev: int, n_paragraphs: int) -> int:
    """Spread marked positions over all slots in train; pin them late in
    dev/test so the index tie-break cannot flatter baselines."""
    if source_index < n_train:
        return (3 * source_index + 1) % n_paragraphs
    if source_index < n_train + n_dev:
        late = (n_paragraphs - 2, n_paragraphs // 2)
        return late[(source_index - n_train) % 2]
    late = (n_paragraphs - 1, n_paragraphs // 2 + 1)
    return late[(source_index - n_train - n_dev) % 2]


def _filler(source_index: int, paragraph_index: int, slot: int) -> str:
    return f"f{(7 * source_index + 3 * paragraph_index + slot) % 20}"


def _paragraph_tokens(source_index: int, paragraph_index: int, marked: bool) -> tuple[str, ...]:
    f = lambda slot: _filler(source_index, paragraph_index, slot)
    if marked:
        return (f(0), f(1), "spotlight", f(2), f(3), "wrapup", f(4))
    return tuple(f(slot) for slot in range(7))


def _source_date(source_index: int, n_train: int, n_dev: int) -> str:
    if source_index < n_train:
        return f"2010-{1 + source_index // 27:02d}-{1 + source_index % 27:02d}"
    if source_index < n_train + n_dev:
        offset = source_index - n_train
        return f"2013-01-{1 + offset % 27:02d}"
    offset = source_index - n_train - n_dev
    return f"2014-01-{1 + offset % 27:02d}"


def generate_corpus(
    n_sources: int = 20,
    n_paragraphs: int = 10,
    n_train_sources: int = 16,
    n_dev_sources: int = 2,
    quotes_per_source: int = QUOTES_PER_SOURCE,
    seed: int = 0,
) -> Corpus:
    """~n_sources * quotes_per_source quotes, one marked paragraph each."""
    rng = np.random.default_rng(seed)
    sources: dict[str, SourceDocument] = {}
    articles: dict[str, Article] = {}
    quotes: list[AlignedQuote] = []
    if n_paragraphs < 3:
        raise ValueError("need at least 3 paragraphs per source")
    for s in range(n_sources):
        sid = f"src{s:03d}"
        marked = _marked_position(s, n_train_sources, n_dev_sources, n_paragraphs)
        paragraphs = tuple(
            SourceParagraph(
                index=p,
                tokens=_paragraph_tokens(s, p, marked=(p == marked)),
                raw_text=" ".join(_paragraph_tokens(s, p, marked=(p == marked))),
            )
            for p in range(n_paragraphs)
        )
        date = _source_date(s, n_train_sources, n_dev_sources)
        sources[sid] = SourceDocument(id=sid, date=date, paragraphs=paragraphs)
        for k in range(quotes_per_source):
            aid = f"art{s:03d}_{k:02d}"
            filler = f"noise{int(rng.integers(0, 5))}"
            articles[aid] = Article(
                id=aid,
                date=date,
                title=("briefing", f"topic{s % 7}"),
                sentences=(
                    ("talking", "about", f"topic{s % 7}", filler),
                    ("quoted", "next"),
                ),
                source_id=sid,
            )
            quotes.append(AlignedQuote(
                quote_id=f"{aid}:q0",
                article_id=aid,
                quote_sentence_index=1,
                positive_paragraphs=(marked,),
                span_start=SPAN_START,
                span_end=SPAN_END,
            ))
    return Corpus(sources=sources, articles=articles, quotes=quotes)


SPLIT_BOUNDS = ("2012-12-31", "2013-12-31")  # train_end, dev_end for the dates above
