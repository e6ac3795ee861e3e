"""JSON API over a triage session file, consumed by the annotation UI.

Single-writer semantics: every annotation POST is applied to the in-memory
session and flushed to the session file before the response returns, so
the file always reflects what the UI has seen.
"""
from __future__ import annotations

import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.responses import HTMLResponse, JSONResponse
from pydantic import BaseModel

from .triage import ReportError, TriageSession, ValidationError, frequency_report


class AnnotationBody(BaseModel):
    tags: list[str]


def _error(code: str, message: str, status: int) -> JSONResponse:
    return JSONResponse({"code": code, "message": message}, status_code=status)


def create_app(session_path: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    session_path = Path(session_path)
    session = TriageSession.load(session_path)
    write_lock = threading.Lock()
    app = FastAPI(title="toxens triage")

    @app.exception_handler(ValidationError)
    async def _validation(request: Request, exc: ValidationError):
        return _error("validation_error", str(exc), 400)

    @app.exception_handler(ReportError)
    async def _report(request: Request, exc: ReportError):
        return _error("report_error", str(exc), 409)

    @app.get("/api/session")
    def get_session():
        annotated, total = session.progress()
        return {
            "session_id": session.session_id,
            "focal_class": session.focal_class,
            "kind": session.kind,
            "taxonomy": list(session.taxonomy),
            "population_size": session.population_size,
            "annotated": annotated,
            "total": total,
        }

    @app.get("/api/items")
    def get_items(offset: int = 0, limit: int = 50):
        window = session.items[offset:offset + limit]
        return {
            "offset": offset,
            "total": len(session.items),
            "items": [
                {
                    "id": item.id,
                    "text": item.text,
                    "gold": item.gold,
                    "score": item.score,
                    "annotated": item.id in session.annotations,
                    "tags": session.annotations.get(item.id),
                }
                for item in window
            ],
        }

    @app.post("/api/items/{item_id}/annotation")
    def post_annotation(item_id: str, body: AnnotationBody):
        with write_lock:
            session.record_annotation(item_id, body.tags)
            session.save(session_path)
        annotated, total = session.progress()
        return {"ok": True, "annotated": annotated, "total": total,
                "tags": session.annotations[item_id]}

    @app.get("/api/report")
    def get_report():
        return frequency_report(session)

    if ui_dir is not None:
        index = Path(ui_dir) / "index.html"
        bundle = Path(ui_dir) / "app.js"

        @app.get("/", response_class=HTMLResponse)
        def ui_index():
            return index.read_text(encoding="utf-8")

        @app.get("/app.js")
        def ui_bundle():
            from fastapi.responses import Response
            return Response(bundle.read_text(encoding="utf-8"),
                            media_type="text/javascript")

    return app
