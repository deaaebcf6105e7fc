"""HTTP recommendation service.

Endpoints (JSON over HTTP; errors are {"error", "detail"}):

  POST /sources          index one source document (corpus schema) -> {"id"}
  GET  /sources          list indexed sources
  GET  /sources/{id}     full document
  POST /recommend        fused paragraph + span recommendations
  GET  /healthz          {"status", "model_loaded"}

Sources persist as one JSON file per document under QF_DATA_DIR and are
reloaded on restart. The serving model (paragraph checkpoint + span
checkpoint + fusion weights) is swapped atomically: requests in flight
keep the model object they started with.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import trainer
from .corpus import QuoteQuery, SourceDocument, source_from_payload, tokenize_text
from .errors import QuoteFinderError, ValidationError
from .fusion import FusionWeights, recommend
from .pararank import ParagraphModel
from .encoder import SubwordVocab
from .spanpred import SpanModel

DEFAULT_TOP_K = 5


class SourceStore:
    """Directory-backed map of source documents (one JSON file each)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._documents: dict[str, SourceDocument] = {}
        for path in sorted(self.root.glob("*.json")):
            record = json.loads(path.read_text(encoding="utf-8"))
            doc = source_from_payload(record, str(path))
            self._documents[doc.id] = doc

    def __contains__(self, source_id: str) -> bool:
        return source_id in self._documents

    def get(self, source_id: str) -> SourceDocument | None:
        return self._documents.get(source_id)

    def list(self) -> list[dict]:
        return [
            {"id": doc.id, "date": doc.date, "paragraph_count": len(doc.paragraphs)}
            for doc in sorted(self._documents.values(), key=lambda d: d.id)
        ]

    def add(self, payload: dict) -> str:
        doc = source_from_payload(payload, "request body")
        with self._lock:
            if doc.id in self._documents:
                raise FileExistsError(doc.id)
            path = self.root / f"{doc.id}.json"
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(payload), encoding="utf-8")
            tmp.rename(path)
            self._documents[doc.id] = doc
        return doc.id


@dataclass
class ServingModel:
    paragraph: ParagraphModel
    span: SpanModel
    weights: FusionWeights
    vocab_hash: str


def build_serving_model(
    paragraph_ckpt: str | Path,
    span_ckpt: str | Path,
    vocab_path: str | Path,
    weights: FusionWeights,
) -> ServingModel:
    """Load both checkpoints against one vocabulary; hashes must agree."""
    vocab = SubwordVocab.load(vocab_path)
    ckpt_p = trainer.load_checkpoint(paragraph_ckpt)
    ckpt_s = trainer.load_checkpoint(span_ckpt)
    if ckpt_p.vocab_hash != ckpt_s.vocab_hash:
        raise ValidationError("paragraph and span checkpoints use different vocabularies")
    paragraph = trainer.paragraph_model_from(ckpt_p, vocab)
    span = trainer.span_model_from(ckpt_s, vocab)
    return ServingModel(paragraph=paragraph, span=span, weights=weights,
                        vocab_hash=ckpt_p.vocab_hash)


class RecommendBody(BaseModel):
    source_id: str
    title: str = ""
    context: str = ""
    top_k: int = Field(default=DEFAULT_TOP_K, ge=1)
    include_spans: bool = True


def _error(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


def create_app(data_dir: str | Path | None = None) -> FastAPI:
    if data_dir is None:
        data_dir = os.environ.get("QF_DATA_DIR", "./qf_data")
    app = FastAPI(title="quotefinder")
    # the companion editor UI is served from a different origin
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    app.state.store = SourceStore(Path(data_dir) / "sources")
    app.state.model = None

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(request: Request, exc: RequestValidationError):
        return _error(422, "validation", str(exc.errors()))

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_loaded": app.state.model is not None}

    @app.post("/sources", status_code=201)
    def index_source(payload: dict):
        try:
            source_id = app.state.store.add(payload)
        except FileExistsError as exc:
            return _error(409, "conflict", f"source id {exc.args[0]!r} already indexed")
        except QuoteFinderError as exc:
            return _error(422, "validation", str(exc))
        return {"id": source_id}

    @app.get("/sources")
    def list_sources():
        return app.state.store.list()

    @app.get("/sources/{source_id}")
    def get_source(source_id: str):
        doc = app.state.store.get(source_id)
        if doc is None:
            return _error(404, "not_found", f"unknown source id {source_id!r}")
        return {
            "id": doc.id,
            "date": doc.date,
            "paragraphs": [list(p.tokens) for p in doc.paragraphs],
        }

    @app.post("/recommend")
    def recommend_quotes(body: RecommendBody):
        model: ServingModel | None = app.state.model
        if model is None:
            return _error(503, "service_unavailable", "no model loaded")
        doc = app.state.store.get(body.source_id)
        if doc is None:
            return _error(404, "not_found", f"unknown source id {body.source_id!r}")
        query = QuoteQuery(title=tokenize_text(body.title),
                           left_context=tokenize_text(body.context))
        recommendations = recommend(query, doc, model.paragraph, model.span,
                                    model.weights, top_k=body.top_k)
        payload = []
        for rec in recommendations:
            paragraph = doc.paragraphs[rec.paragraph_index]
            span = None
            if body.include_spans and rec.span is not None:
                span = {
                    "token_start": rec.span.token_start,
                    "token_end": rec.span.token_end,
                    "text": " ".join(paragraph.tokens[rec.span.token_start : rec.span.token_end + 1]),
                }
            payload.append({
                "paragraph_index": rec.paragraph_index,
                "paragraph_text": paragraph.raw_text,
                "span": span,
                "p_paragraph": rec.p_paragraph,
                "p_span": rec.p_span,
                "fused": rec.fused,
            })
        return {"recommendations": payload}

    return app


def load_model(
    app: FastAPI,
    paragraph_ckpt: str | Path,
    span_ckpt: str | Path,
    vocab_path: str | Path,
    weights: FusionWeights,
) -> dict:
    """Atomically swap the serving model; the old one keeps serving until
    the new one is fully built."""
    model = build_serving_model(paragraph_ckpt, span_ckpt, vocab_path, weights)
    app.state.model = model  # single reference assignment: atomic under the GIL
    return {"status": "ok", "vocab_hash": model.vocab_hash}


def serve(app: FastAPI, port: int | None = None, host: str = "127.0.0.1") -> None:
    import uvicorn

    if port is None:
        port = int(os.environ.get("QF_PORT", "8080"))
    uvicorn.run(app, host=host, port=port)
