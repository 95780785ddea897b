"""HTTP service exposing the disagreement queue for human correction.

Every mutation is appended to the store (flush + fsync) before the response
is sent, so acknowledged corrections survive a crash at any point.  The
server also serves the review UI's static assets when a build is available,
keeping deployment a single process.
"""

from __future__ import annotations

import logging
import os
import socket
import threading
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from .corpus import LAYER_CORRECTED, Dataset, LabelScheme, Sentence, Span, spans_to_tags
from .errors import BindError, NerError, UnknownLabelError
from .pipeline import (
    STATUS_CORRECTED,
    STATUS_PENDING,
    STATUS_SKIPPED,
    DisagreementRecord,
    append_records,
    apply_corrections,
    load_store,
    queue_order,
)

log = logging.getLogger(__name__)

DEFAULT_BIND = "127.0.0.1:8787"
ENV_STORE = "REVIEW_STORE"
ENV_BIND = "REVIEW_BIND"

_FALLBACK_PAGE = """<!doctype html>
<html><head><meta charset="utf-8"><title>review server</title></head>
<body><h1>Review server is running</h1>
<p>No UI build found. Build the frontend and pass its dist directory via
<code>--ui-dir</code>, or use the JSON API under <code>/api/</code>.</p>
</body></html>
"""


class ReviewStore:
    """In-memory view over the append-only store; single-writer, durable appends."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.records: dict[str, DisagreementRecord] = (
            load_store(self.path) if self.path.exists() else {}
        )
        self._lock = threading.Lock()

    def get(self, sentence_id: str) -> DisagreementRecord | None:
        return self.records.get(sentence_id)

    def queue(self, status: str, limit: int | None = None) -> tuple[list[DisagreementRecord], int]:
        matching = [r for r in self.records.values() if r.status == status]
        ordered = queue_order(matching)
        total = len(ordered)
        if limit is not None:
            ordered = ordered[:limit]
        return ordered, total

    def progress(self) -> dict:
        counts = {STATUS_PENDING: 0, STATUS_CORRECTED: 0, STATUS_SKIPPED: 0}
        for record in self.records.values():
            counts[record.status] += 1
        counts["total"] = len(self.records)
        return counts

    def commit(self, record: DisagreementRecord) -> None:
        """Durably append the new record state, then expose it to readers."""
        with self._lock:
            append_records(self.path, [record], fsync=True)
            self.records[record.sentence_id] = record


def export_corrected(store_path: str | Path, coarse: Dataset | None = None) -> Dataset:
    """Corrected dataset from the latest status of every resolved record.

    Pending records are excluded (with a warning).  With a coarse dataset
    the result matches ``pipeline.apply_corrections`` exactly; without one,
    sentences are reconstructed from the records' own text.
    """
    records = load_store(store_path)
    pending = sum(r.status == STATUS_PENDING for r in records.values())
    if pending:
        log.warning("%d records are still pending and were not exported", pending)
    resolved = [r for r in records.values() if r.status != STATUS_PENDING]
    if coarse is not None:
        return apply_corrections(coarse, resolved)
    resolved.sort(key=lambda r: r.sentence_id)
    dataset = Dataset([Sentence(r.sentence_id, r.text) for r in resolved])
    dataset.add_layer(LAYER_CORRECTED, {
        r.sentence_id: (r.corrected_spans if r.status == STATUS_CORRECTED else r.coarse_spans) or []
        for r in resolved
    })
    return dataset


def _record_json(record: DisagreementRecord) -> dict:
    return record.to_json()


def _parse_spans(raw, scheme: LabelScheme, text: str) -> list[Span]:
    spans = []
    for obj in raw:
        label = str(obj.get("label", scheme.labels[0]))
        if not scheme.has_label(label):
            raise UnknownLabelError(f"label {label!r} not in scheme {list(scheme.labels)}")
        spans.append(Span(int(obj["start"]), int(obj["end"]), label))
    # Validation parity: whatever the server accepts, spans_to_tags accepts.
    spans_to_tags(len(text), spans, scheme)
    return spans


def create_app(
    store_path: str | Path,
    dataset_path: str | Path | None = None,
    labels: Sequence[str] = ("COM",),
    ui_dir: str | Path | None = None,
) -> FastAPI:
    """Build the review application over an existing disagreement store."""
    store = ReviewStore(store_path)
    scheme = LabelScheme(labels)
    if dataset_path is not None:
        # Cross-check that records refer to known sentences with matching text.
        from .corpus import load_dataset

        dataset = load_dataset(dataset_path)
        for record in store.records.values():
            if dataset.has_sentence(record.sentence_id):
                text = dataset.sentence(record.sentence_id).text
                if text != record.text:
                    log.warning("record %s text differs from dataset", record.sentence_id)

    app = FastAPI(title="disagreement review", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.get("/api/queue")
    def api_queue(status: str = STATUS_PENDING, limit: int = 50):
        if status not in (STATUS_PENDING, STATUS_CORRECTED, STATUS_SKIPPED):
            return JSONResponse({"error": "ValueError", "detail": f"unknown status {status!r}"},
                                status_code=422)
        records, total = store.queue(status, limit)
        return {"records": [_record_json(r) for r in records], "total": total}

    @app.get("/api/record/{sentence_id}")
    def api_record(sentence_id: str):
        record = store.get(sentence_id)
        if record is None:
            return JSONResponse({"error": "UnknownSentenceError",
                                 "detail": f"no record for {sentence_id!r}"}, status_code=404)
        return _record_json(record)

    @app.post("/api/record/{sentence_id}/correction")
    async def api_correct(sentence_id: str, request: Request):
        record = store.get(sentence_id)
        if record is None:
            return JSONResponse({"error": "UnknownSentenceError",
                                 "detail": f"no record for {sentence_id!r}"}, status_code=404)
        try:
            body = await request.json()
        except Exception as exc:  # noqa: BLE001
            return JSONResponse({"error": "ParseError", "detail": str(exc)}, status_code=422)
        annotator = str(body.get("annotator_id") or "anonymous")
        try:
            spans = _parse_spans(body.get("spans", []), scheme, record.text)
        except NerError as exc:
            return JSONResponse({"error": type(exc).__name__, "detail": str(exc)},
                                status_code=422)
        except (KeyError, TypeError, ValueError) as exc:
            return JSONResponse({"error": type(exc).__name__, "detail": str(exc)},
                                status_code=422)
        updated = record.resolved(spans, annotator)
        store.commit(updated)
        return _record_json(updated)

    @app.post("/api/record/{sentence_id}/skip")
    async def api_skip(sentence_id: str, request: Request):
        record = store.get(sentence_id)
        if record is None:
            return JSONResponse({"error": "UnknownSentenceError",
                                 "detail": f"no record for {sentence_id!r}"}, status_code=404)
        try:
            body = await request.json()
        except Exception:  # noqa: BLE001 - skip works without a body
            body = {}
        annotator = str(body.get("annotator_id") or "anonymous")
        updated = record.resolved(None, annotator, skipped=True)
        store.commit(updated)
        return _record_json(updated)

    @app.get("/api/progress")
    def api_progress():
        return store.progress()

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return _FALLBACK_PAGE

    return app


def parse_bind(bind: str) -> tuple[str, int]:
    host, _, port = bind.rpartition(":")
    if not host or not port.isdigit():
        raise BindError(f"bind address must look like host:port, got {bind!r}")
    return host, int(port)


def serve(
    store_path: str | Path,
    dataset_path: str | Path | None = None,
    bind: str | None = None,
    labels: Sequence[str] = ("COM",),
    ui_dir: str | Path | None = None,
) -> None:
    """Run the review service until shutdown (SIGINT/SIGTERM)."""
    import uvicorn

    bind = bind or os.environ.get(ENV_BIND) or DEFAULT_BIND
    host, port = parse_bind(bind)
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    try:
        probe.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        probe.bind((host, port))
    except OSError as exc:
        raise BindError(f"cannot bind {bind}: {exc}") from exc
    finally:
        probe.close()

    app = create_app(store_path, dataset_path, labels=labels, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="info")
