"""FastAPI service exposing the attribution engine to long-running clients.

Endpoints mirror the CLI subcommands one-to-one; both go through the same
handlers, so a sweep fetched over HTTP is byte-identical to `ebe sweep`.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse, Response

from ..errors import EbeError, IoError
from . import handlers
from .models import (
    AttributeRequest,
    AttributeResponse,
    ErrorBody,
    IndexRequest,
    IndexSummary,
    ReportRequest,
    SweepRequest,
    SweepResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="ebe",
        description="Example-based explanations via exact cosine k-NN "
        "over per-layer embeddings",
    )

    @app.exception_handler(EbeError)
    async def ebe_error_handler(request: Request, exc: EbeError) -> JSONResponse:
        status = 500 if isinstance(exc, IoError) else 400
        body = ErrorBody(
            kind=type(exc).__name__, error=str(exc), exit_code=exc.exit_code
        )
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/index", response_model=IndexSummary)
    def index(request: IndexRequest) -> IndexSummary:
        return handlers.handle_index(request)

    @app.post("/attribute", response_model=AttributeResponse)
    def attribute(request: AttributeRequest) -> AttributeResponse:
        return handlers.handle_attribute(request)

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(request: SweepRequest) -> SweepResponse:
        return handlers.handle_sweep(request)

    @app.post("/sweep.csv")
    def sweep_csv(request: SweepRequest) -> Response:
        return PlainTextResponse(handlers.handle_sweep(request).csv)

    @app.post("/report")
    def report(request: ReportRequest) -> Response:
        return Response(
            content=handlers.handle_report(request).html, media_type="text/html"
        )

    return app
