"""Shared fixtures: a small planted-signal corpus with trained checkpoints.

Also prints one PASS/FAIL line per acceptance criterion while the
acceptance module runs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import pytest

from quotefinder import synth, trainer
from quotefinder.corpus import Corpus, DatasetSplit, split_by_date, write_articles_jsonl, write_sources_jsonl
from quotefinder.encoder import EncoderConfig, SubwordVocab, build_vocab


@dataclass
class Pipeline:
    """A miniature trained pipeline shared across service/CLI tests."""

    corpus: Corpus
    splits: tuple[DatasetSplit, DatasetSplit, DatasetSplit]
    vocab: SubwordVocab
    root: Path
    sources_path: Path
    articles_path: Path
    vocab_path: Path
    paragraph_ckpt: Path
    span_ckpt: Path


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory) -> Pipeline:
    root = tmp_path_factory.mktemp("pipeline")
    corpus = synth.generate_corpus(
        n_sources=8, n_paragraphs=6, n_train_sources=6, n_dev_sources=1,
        quotes_per_source=4, seed=0,
    )
    splits = split_by_date(corpus, *synth.SPLIT_BOUNDS)
    vocab = build_vocab(corpus, 200)

    sources_path = root / "sources.jsonl"
    articles_path = root / "articles.jsonl"
    vocab_path = root / "vocab.txt"
    write_sources_jsonl(sources_path, corpus.sources.values())
    write_articles_jsonl(articles_path, corpus)
    vocab.save(vocab_path)

    encoder_config = EncoderConfig(vocab_size=len(vocab), hidden_size=32, num_layers=2,
                                   num_heads=4, ff_size=128, seed=0)
    paragraph_ckpt = root / "paragraph.pt"
    span_ckpt = root / "span.pt"
    cfg_p = trainer.TrainConfig(model_kind="paragraph", batch_size=8, learning_rate=2e-3,
                                max_epochs=2, n_negatives=3, seed=0)
    cfg_s = trainer.TrainConfig(model_kind="span_shared_norm", batch_size=8,
                                learning_rate=2e-3, max_epochs=2, n_negatives=3, seed=0)
    trainer.save_checkpoint(
        trainer.train(corpus, splits[0], splits[1], cfg_p, vocab, encoder_config),
        paragraph_ckpt,
    )
    trainer.save_checkpoint(
        trainer.train(corpus, splits[0], splits[1], cfg_s, vocab, encoder_config),
        span_ckpt,
    )
    return Pipeline(
        corpus=corpus, splits=splits, vocab=vocab, root=root,
        sources_path=sources_path, articles_path=articles_path, vocab_path=vocab_path,
        paragraph_ckpt=paragraph_ckpt, span_ckpt=span_ckpt,
    )


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    sys.stderr.write(f"[acceptance] {status} {name}\n")
