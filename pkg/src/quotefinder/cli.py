"""Command line entry points.

Every subcommand is a thin wrapper over one module operation. A --config
JSON file (flat keys matching the flag names) supplies defaults; explicit
flags win. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import fusion, metrics, recsvc, report, trainer
from .corpus import Corpus, DatasetSplit, ingest_corpus, split_by_date
from .encoder import (
    DEFAULT_CAPS,
    MAX_PACKED_LEN,
    EncoderConfig,
    SubwordVocab,
    build_vocab,
    iter_corpus_tokens,
)
from .errors import QuoteFinderError
from .pararank import bm25_rank, tfidf_rank
from .trainer import TrainConfig, gold_for_quotes, load_checkpoint, run_predictions

log = logging.getLogger("quotefinder")


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    return json.loads(Path(path).read_text(encoding="utf-8"))


def _merged(args: argparse.Namespace, config: dict, key: str, default=None):
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _encoder_config(config: dict, vocab: SubwordVocab, seed: int) -> EncoderConfig:
    return EncoderConfig(
        vocab_size=len(vocab),
        hidden_size=int(config.get("hidden_size", 64)),
        num_layers=int(config.get("num_layers", 2)),
        num_heads=int(config.get("num_heads", 4)),
        ff_size=int(config.get("ff_size", 256)),
        max_len=int(config.get("max_len", MAX_PACKED_LEN)),
        dropout=float(config.get("dropout", 0.1)),
        seed=seed,
    )


def _ingest(args, config) -> Corpus:
    return ingest_corpus(_merged(args, config, "sources"), _merged(args, config, "articles"))


def _splits(args, config, corpus: Corpus) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    return split_by_date(
        corpus,
        _merged(args, config, "train_end"),
        _merged(args, config, "dev_end"),
    )


def _split_by_name(splits, name: str) -> DatasetSplit:
    for split in splits:
        if split.name == name:
            return split
    raise QuoteFinderError(f"unknown split {name!r}")


def _train_config(args, config, kind_required=True) -> TrainConfig:
    kind = _merged(args, config, "model_kind")
    if kind is None and kind_required:
        raise QuoteFinderError("--model-kind is required")
    return TrainConfig(
        model_kind=kind or "paragraph",
        batch_size=int(_merged(args, config, "batch_size", 32)),
        learning_rate=float(_merged(args, config, "lr", 1e-3)),
        max_epochs=int(_merged(args, config, "max_epochs", 4)),
        n_negatives=int(_merged(args, config, "n_negatives", 12)),
        scheme=_merged(args, config, "scheme", "uniform"),
        title_cap=int(_merged(args, config, "title_cap", DEFAULT_CAPS[0])),
        context_cap=int(_merged(args, config, "context_cap", DEFAULT_CAPS[1])),
        paragraph_cap=int(_merged(args, config, "paragraph_cap", DEFAULT_CAPS[2])),
        seed=int(_merged(args, config, "seed", 0)),
        early_stopping_metric=_merged(args, config, "early_stopping_metric", "auto"),
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config)
    summary = {
        "sources": len(corpus.sources),
        "articles": len(corpus.articles),
        "quotes": len(corpus.quotes),
        "rejected_multi_source": list(corpus.rejected_multi_source),
    }
    text = json.dumps(summary, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_split(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config)
    splits = _splits(args, config, corpus)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for split in splits:
        gold = gold_for_quotes(split.quotes, corpus)
        report.write_gold_jsonl(out_dir / f"gold_{split.name}.jsonl", gold)
        summary[split.name] = len(split.quotes)
    (out_dir / "splits.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_build_vocab(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config)
    train_end = _merged(args, config, "train_end")
    if train_end:
        kept_sources = {sid for sid, doc in corpus.sources.items() if doc.date <= train_end}
        tokens = []
        for sid in kept_sources:
            for paragraph in corpus.sources[sid].paragraphs:
                tokens.extend(paragraph.tokens)
        for article in corpus.articles.values():
            if article.source_id in kept_sources:
                tokens.extend(article.title)
                for sentence in article.sentences:
                    tokens.extend(sentence)
    else:
        tokens = list(iter_corpus_tokens(corpus))
    vocab = build_vocab(tokens, int(_merged(args, config, "vocab_size", 2000)))
    vocab.save(args.out)
    print(f"wrote {len(vocab)} pieces to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config)
    splits = _splits(args, config, corpus)
    vocab = SubwordVocab.load(_merged(args, config, "vocab"))
    cfg = _train_config(args, config)
    checkpoint = trainer.train(
        corpus, splits[0], splits[1], cfg, vocab,
        encoder_config=_encoder_config(config, vocab, cfg.seed),
        log_path=_merged(args, config, "log"),
    )
    trainer.save_checkpoint(checkpoint, args.out)
    best = checkpoint.history[checkpoint.best_epoch - 1] if checkpoint.history else None
    print(json.dumps({"out": str(args.out), "best_epoch": checkpoint.best_epoch,
                      "dev_metric": best["dev_metric"] if best else None}))
    return 0


def cmd_grid_search(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config)
    splits = _splits(args, config, corpus)
    vocab = SubwordVocab.load(_merged(args, config, "vocab"))
    base = _train_config(args, config)
    grid = {
        "batch_size": config.get("grid_batch_size", list(trainer.PAPER_GRID["batch_size"])),
        "learning_rate": config.get("grid_lr", list(trainer.PAPER_GRID["learning_rate"])),
    }
    if base.model_kind != "span_positive_only":
        grid["n_negatives"] = config.get("grid_n_negatives",
                                         list(trainer.PAPER_GRID["n_negatives"]))
    best_cfg, checkpoint, table = trainer.hyperparameter_search(
        corpus, splits[0], splits[1], base, grid, vocab,
        encoder_config=_encoder_config(config, vocab, base.seed),
    )
    if args.out:
        trainer.save_checkpoint(checkpoint, args.out)
    print(json.dumps({"best": best_cfg.to_dict(), "table": table}, indent=2))
    return 0


def _predictions_from_models(args, config, corpus, quotes):
    vocab = SubwordVocab.load(_merged(args, config, "vocab"))
    paragraph_model = span_model = None
    paragraph_ckpt = _merged(args, config, "paragraph_ckpt")
    span_ckpt = _merged(args, config, "span_ckpt")
    if paragraph_ckpt:
        paragraph_model = trainer.paragraph_model_from(load_checkpoint(paragraph_ckpt), vocab)
    if span_ckpt:
        span_model = trainer.span_model_from(load_checkpoint(span_ckpt), vocab)
    weights = None
    alpha, beta = _merged(args, config, "alpha"), _merged(args, config, "beta")
    if alpha is not None and beta is not None:
        weights = fusion.FusionWeights(float(alpha), float(beta))
    predictions = run_predictions(quotes, corpus, paragraph_model, span_model, weights)
    return predictions, paragraph_model, span_model


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    out_dir = Path(args.out or "eval_out")
    run_id = _merged(args, config, "run_id", "run")
    seed = int(_merged(args, config, "seed", 0))

    corpus = quotes = None
    baselines: list[tuple[str, metrics.RankingEval]] = []
    significance: list[dict] = []

    if args.run and args.gold:
        predictions = report.read_predictions_jsonl(args.run)
        gold = report.read_gold_jsonl(args.gold)
        split_name = _merged(args, config, "split", "custom")
    elif _merged(args, config, "sources") and _merged(args, config, "articles"):
        corpus = _ingest(args, config)
        splits = _splits(args, config, corpus)
        split_name = _merged(args, config, "split", "test")
        quotes = _split_by_name(splits, split_name).quotes
        gold = gold_for_quotes(quotes, corpus)
        predictions, paragraph_model, span_model = _predictions_from_models(
            args, config, corpus, quotes)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_predictions_jsonl(out_dir / "run.jsonl", predictions)
        report.write_gold_jsonl(out_dir / "gold.jsonl", gold)
        if paragraph_model is not None and span_model is not None:
            cache = trainer.build_dev_cache(quotes, corpus, paragraph_model, span_model)
            fusion.write_dev_cache(out_dir / "posteriors.jsonl", cache)
    else:
        raise QuoteFinderError("evaluate needs either --run/--gold or --sources/--articles")

    ranking_eval, span_top = metrics.evaluate_run(predictions, gold, setting="top")
    _, span_positive = metrics.evaluate_run(predictions, gold, setting="positive")

    if corpus is not None and quotes is not None:
        for name, ranker in (("tfidf", tfidf_rank), ("bm25", bm25_rank)):
            rows = []
            for quote in quotes:
                article = corpus.article_for(quote)
                doc = corpus.source_for(quote)
                from .corpus import build_quote_query

                ranking = ranker(build_quote_query(article, quote), doc)
                rows.append(metrics.QuotePrediction(quote_id=quote.quote_id,
                                                    ranking=ranking.order))
            baseline_eval, _ = metrics.evaluate_run(rows, gold, setting="top")
            baselines.append((name, baseline_eval))
            significance.append({
                "baseline": name,
                "metric": "average_precision",
                "p_value": metrics.permutation_test(
                    ranking_eval.per_quote_ap, baseline_eval.per_quote_ap, seed=seed),
            })

    report_data = report.build_report(
        run_id, split_name, ranking_eval,
        {"positive": span_positive, "top": span_top}, significance,
    )
    histogram = metrics.rank_distance_histogram(predictions, gold)
    paths = report.write_report_files(
        out_dir, report_data,
        [(run_id, ranking_eval), *baselines],
        [(run_id, {"positive": span_positive, "top": span_top})],
        distance_histogram=histogram,
    )
    print(json.dumps(report_data, indent=2, sort_keys=True))
    log.info("report files: %s", {k: str(v) for k, v in paths.items()})
    return 0


def cmd_fuse(args) -> int:
    config = _load_config(args.config)
    records = fusion.read_dev_cache(_merged(args, config, "dev_cache"))
    metric = _merged(args, config, "metric", "map")
    weights = fusion.grid_search(records, metric=metric)
    result = {"alpha": weights.alpha, "beta": weights.beta, "metric": metric,
              "grid_points": len(fusion.GRID_VALUES) ** 2}
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config)
    splits = _splits(args, config, corpus)
    vocab = SubwordVocab.load(_merged(args, config, "vocab"))
    weights = fusion.FusionWeights(float(_merged(args, config, "alpha", 1.0)),
                                   float(_merged(args, config, "beta", 1.0)))
    result = trainer.run_ablation(
        corpus, splits[0], splits[1], vocab,
        load_checkpoint(_merged(args, config, "paragraph_ckpt")),
        load_checkpoint(_merged(args, config, "span_ckpt")),
        weights,
    )
    out_dir = Path(args.out or "ablation_out")
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n",
                                           encoding="utf-8")
    base = result["base"]["metrics"]
    variants = [(v["name"], v["metrics"]) for v in result["variants"]]
    table = report.render_ablation_table("full", base, variants)
    (out_dir / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    report.render_ablation_figure(base, variants, out_dir / "ablation.png")
    print(table)
    return 0


def cmd_sample_misranked(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config)
    predictions = report.read_predictions_jsonl(_merged(args, config, "run"))
    gold = report.read_gold_jsonl(_merged(args, config, "gold"))
    samples = metrics.sample_misranked(
        predictions, gold, corpus,
        n=int(_merged(args, config, "n", 10)),
        seed=int(_merged(args, config, "seed", 0)),
    )
    lines = [json.dumps({
        "quote_id": s.quote_id,
        "title": s.title,
        "context": s.context,
        "paragraph_index": s.paragraph_index,
        "paragraph_text": s.paragraph_text,
    }) for s in samples]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_serve(args) -> int:
    config = _load_config(args.config)
    app = recsvc.create_app(_merged(args, config, "data_dir"))
    paragraph_ckpt = _merged(args, config, "paragraph_ckpt")
    span_ckpt = _merged(args, config, "span_ckpt")
    if paragraph_ckpt and span_ckpt:
        recsvc.load_model(
            app, paragraph_ckpt, span_ckpt, _merged(args, config, "vocab"),
            fusion.FusionWeights(float(_merged(args, config, "alpha", 1.0)),
                                 float(_merged(args, config, "beta", 1.0))),
        )
    port = _merged(args, config, "port")
    recsvc.serve(app, port=int(port) if port is not None else None)
    return 0


def cmd_recommend(args) -> int:
    config = _load_config(args.config)
    corpus = _ingest(args, config) if _merged(args, config, "articles") else None
    if corpus is not None:
        sources = corpus.sources
    else:
        sources = {
            doc.id: doc
            for doc in (ingest_sources_only(_merged(args, config, "sources")))
        }
    source_id = _merged(args, config, "source_id")
    if source_id not in sources:
        raise QuoteFinderError(f"unknown source id {source_id!r}")
    doc = sources[source_id]
    vocab = SubwordVocab.load(_merged(args, config, "vocab"))
    paragraph_model = trainer.paragraph_model_from(
        load_checkpoint(_merged(args, config, "paragraph_ckpt")), vocab)
    span_model = trainer.span_model_from(
        load_checkpoint(_merged(args, config, "span_ckpt")), vocab)
    weights = fusion.FusionWeights(float(_merged(args, config, "alpha", 1.0)),
                                   float(_merged(args, config, "beta", 1.0)))
    from .corpus import QuoteQuery, tokenize_text

    query = QuoteQuery(title=tokenize_text(args.title or ""),
                       left_context=tokenize_text(args.context or ""))
    recommendations = fusion.recommend(query, doc, paragraph_model, span_model, weights,
                                       top_k=int(_merged(args, config, "top_k", 5)))
    payload = [{
        "paragraph_index": r.paragraph_index,
        "paragraph_text": doc.paragraphs[r.paragraph_index].raw_text,
        "span": None if r.span is None else {
            "token_start": r.span.token_start,
            "token_end": r.span.token_end,
            "text": " ".join(doc.paragraphs[r.paragraph_index]
                             .tokens[r.span.token_start : r.span.token_end + 1]),
        },
        "p_paragraph": r.p_paragraph,
        "p_span": r.p_span,
        "fused": r.fused,
    } for r in recommendations]
    print(json.dumps({"recommendations": payload}, indent=2))
    return 0


def ingest_sources_only(path: str):
    from .corpus import _read_jsonl, source_from_payload

    for lineno, record in _read_jsonl(path):
        yield source_from_payload(record, f"{path}: line {lineno}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sources", help="sources JSONL file")
    p.add_argument("--articles", help="articles JSONL file")


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-end", dest="train_end", help="last train date (inclusive)")
    p.add_argument("--dev-end", dest="dev_end", help="last dev date (inclusive)")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--vocab", help="vocabulary file")
    p.add_argument("--paragraph-ckpt", dest="paragraph_ckpt")
    p.add_argument("--span-ckpt", dest="span_ckpt")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quotefinder",
                                     description="context-aware quote recommendation")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        p.add_argument("--config", help="JSON config file; flags override its keys")
        p.add_argument("--seed", type=int, help="global random seed")
        return p

    p = command("ingest", cmd_ingest, "validate corpus files and print a summary")
    _add_corpus_flags(p)
    p.add_argument("--out")

    p = command("split", cmd_split, "date-based train/dev/test split; writes gold files")
    _add_corpus_flags(p)
    _add_split_flags(p)
    p.add_argument("--out")

    p = command("build-vocab", cmd_build_vocab, "train the subword vocabulary")
    _add_corpus_flags(p)
    _add_split_flags(p)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--out", required=True)

    p = command("train", cmd_train, "train one model kind")
    _add_corpus_flags(p)
    _add_split_flags(p)
    p.add_argument("--vocab")
    p.add_argument("--model-kind", dest="model_kind", choices=trainer.MODEL_KINDS)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--n-negatives", dest="n_negatives", type=int)
    p.add_argument("--scheme", choices=("uniform", "tfidf", "positional"))
    p.add_argument("--title-cap", dest="title_cap", type=int)
    p.add_argument("--context-cap", dest="context_cap", type=int)
    p.add_argument("--paragraph-cap", dest="paragraph_cap", type=int)
    p.add_argument("--log")
    p.add_argument("--out", required=True)

    p = command("grid-search", cmd_grid_search, "hyperparameter grid over batch/lr/n")
    _add_corpus_flags(p)
    _add_split_flags(p)
    p.add_argument("--vocab")
    p.add_argument("--model-kind", dest="model_kind", choices=trainer.MODEL_KINDS)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--out")

    p = command("evaluate", cmd_evaluate, "evaluate a run file or checkpoints")
    _add_corpus_flags(p)
    _add_split_flags(p)
    _add_model_flags(p)
    p.add_argument("--run", help="predictions JSONL (file mode)")
    p.add_argument("--gold", help="gold JSONL (file mode)")
    p.add_argument("--split", choices=("train", "dev", "test"))
    p.add_argument("--run-id", dest="run_id")
    p.add_argument("--out")

    p = command("fuse", cmd_fuse, "grid-search fusion exponents on a dev cache")
    p.add_argument("--dev-cache", dest="dev_cache", required=True)
    p.add_argument("--metric", choices=("map", "f1_top"))
    p.add_argument("--out")

    p = command("ablate", cmd_ablate, "context ablations against a base pipeline")
    _add_corpus_flags(p)
    _add_split_flags(p)
    _add_model_flags(p)
    p.add_argument("--out")

    p = command("sample-misranked", cmd_sample_misranked,
                 "sample wrong-top-1 quotes for human review")
    _add_corpus_flags(p)
    p.add_argument("--run", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("-n", type=int)
    p.add_argument("--out")

    p = command("serve", cmd_serve, "run the HTTP recommendation service")
    _add_model_flags(p)
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--port", type=int)

    p = command("recommend", cmd_recommend, "one-shot recommendation for a query")
    _add_corpus_flags(p)
    _add_model_flags(p)
    p.add_argument("--source-id", dest="source_id", required=True)
    p.add_argument("--title")
    p.add_argument("--context")
    p.add_argument("--top-k", dest="top_k", type=int)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except QuoteFinderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
