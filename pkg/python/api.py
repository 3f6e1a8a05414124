"""
DeskMT: Translation Server
==========================
FastAPI service exposing a loaded model (or ensemble) over REST.

Endpoints:
- POST /translate: batch translation, order preserved
- GET /health: status and configuration echo
- GET /metrics: Prometheus metrics

Decoding runs in a bounded thread pool over a shared, read-only model;
every request gets private decoder state.

Author: DeskMT Team
Date: 2026-02-10
"""

import asyncio
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

from fastapi import FastAPI, HTTPException, Request, status
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from prometheus_fastapi_instrumentator import Instrumentator
from pydantic import ValidationError
import uvicorn

from config import BeamConfig, ServerSettings
from decoding import Translator
from errors import ConfigurationError
from logging_config import get_logger, hash_sensitive_data
from models import ErrorResponse, HealthResponse, TranslateRequest, TranslateResponse

logger = get_logger("deskmt.api")

API_VERSION = "1.0.0"


def _error(status_code: int, detail: str) -> JSONResponse:
    return JSONResponse(
        status_code=status_code,
        content=ErrorResponse(detail=detail, status_code=status_code).model_dump(),
    )


def create_app(translator: Translator, settings: Optional[ServerSettings] = None) -> FastAPI:
    """
    Build the application around an already loaded translator.

    Args:
        translator: model(s) and vocabularies; never mutated by requests
        settings: server settings (beam, alpha, max_batch, workers)
    """
    settings = settings or ServerSettings()
    executor = ThreadPoolExecutor(max_workers=settings.workers, thread_name_prefix="deskmt-decode")

    app = FastAPI(
        title="DeskMT Translation API",
        description="Neural machine translation over a Transformer model or ensemble",
        version=API_VERSION,
    )
    app.state.translator = translator
    app.state.settings = settings
    app.state.executor = executor

    # Prometheus Monitoring
    Instrumentator().instrument(app).expose(app, include_in_schema=False)

    # Request Logging Middleware
    @app.middleware("http")
    async def log_requests(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        logger.info(
            f"{request.method} {request.url.path} -> {response.status_code} "
            f"({(time.perf_counter() - start) * 1000:.1f} ms)"
        )
        return response

    # Custom Exception Handlers
    @app.exception_handler(RequestValidationError)
    async def request_validation_handler(request: Request, exc: RequestValidationError):
        """Malformed bodies are client errors (400, not FastAPI's default 422)"""
        logger.warning(f"Validation error: {exc.errors()}")
        first = exc.errors()[0] if exc.errors() else {}
        where = ".".join(str(p) for p in first.get("loc", ()) if p != "body")
        return _error(status.HTTP_400_BAD_REQUEST,
                      f"Invalid request: {where + ': ' if where else ''}{first.get('msg', 'malformed body')}")

    @app.exception_handler(ValidationError)
    async def validation_exception_handler(request: Request, exc: ValidationError):
        logger.warning(f"Validation error: {exc.errors()}")
        return _error(status.HTTP_400_BAD_REQUEST, "Invalid request data")

    @app.exception_handler(HTTPException)
    async def http_exception_handler(request: Request, exc: HTTPException):
        logger.warning(f"HTTP exception: {exc.status_code} - {exc.detail}")
        return _error(exc.status_code, str(exc.detail))

    @app.exception_handler(Exception)
    async def general_exception_handler(request: Request, exc: Exception):
        logger.error(f"Unexpected error: {exc}", exc_info=True)
        return _error(status.HTTP_500_INTERNAL_SERVER_ERROR, "Internal server error")

    @app.on_event("shutdown")
    async def shutdown_event():
        executor.shutdown(wait=False)

    # Endpoints
    @app.get("/health", response_model=HealthResponse, tags=["System"])
    async def health_check():
        """Answered on the event loop, so it stays responsive while decoding runs."""
        return HealthResponse(status="ok", model=translator.name, beam=settings.beam)

    @app.post("/translate", response_model=TranslateResponse, tags=["Translation"],
              responses={400: {"model": ErrorResponse}, 413: {"model": ErrorResponse},
                         500: {"model": ErrorResponse}})
    async def translate(body: TranslateRequest):
        """
        Translate a batch of sentences.

        Returns:
            Translations aligned index-for-index with ``text``
        """
        if len(body.text) > settings.max_batch:
            raise HTTPException(
                status_code=status.HTTP_413_REQUEST_ENTITY_TOO_LARGE,
                detail=f"batch of {len(body.text)} sentences exceeds the limit of {settings.max_batch}",
            )
        beam = settings.beam if body.beam is None else body.beam
        alpha = settings.alpha if body.alpha is None else body.alpha
        logger.info(
            f"Translate request: {len(body.text)} sentences, beam={beam}, alpha={alpha}, "
            f"text_hash={hash_sensitive_data(body.text)}"
        )
        if not body.text:
            return TranslateResponse(translations=[])
        loop = asyncio.get_running_loop()
        translations = await loop.run_in_executor(executor, translator.translate, body.text, beam, alpha)
        return TranslateResponse(translations=translations)

    return app


def load_translator(settings: ServerSettings) -> Translator:
    """Translator over the configured model files with the server's default beam settings."""
    if not settings.models or not settings.src_vocab or not settings.tgt_vocab:
        raise ConfigurationError("serve needs at least one model and both vocabulary files")
    return Translator.from_files(
        settings.models, settings.src_vocab, settings.tgt_vocab,
        beam=BeamConfig(beam_size=settings.beam, alpha=settings.alpha, max_len=settings.max_len),
    )


def serve(settings: ServerSettings) -> None:
    """Load the configured models and run uvicorn until interrupted."""
    translator = load_translator(settings)
    app = create_app(translator, settings)
    logger.info("=" * 50)
    logger.info(f"DeskMT server on {settings.addr}:{settings.port} (model {translator.name})")
    logger.info("=" * 50)
    uvicorn.run(app, host=settings.addr, port=settings.port, log_level="info")
