"""
FastAPI application serving a trained checkpoint.

The model is loaded once at startup from ``settings.checkpoint_dir``; without
one the app still answers ``/health`` and model routes return 503.
"""
import time
from contextlib import asynccontextmanager

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from captrfuse.api import inference
from captrfuse.config import settings
from captrfuse.exceptions import CaptrFuseError
from captrfuse.logger import log
from captrfuse.models.api import HealthResponse
from captrfuse.services.inference_service import InferenceService

QUIET_PATHS = {"/health", "/favicon.ico"}


@asynccontextmanager
async def lifespan(app: FastAPI):
    log.info(f"Starting {settings.app_name} v{settings.app_version}")

    if getattr(app.state, "inference_service", None) is None and settings.checkpoint_dir is not None:
        try:
            app.state.inference_service = InferenceService.from_checkpoint(settings.checkpoint_dir)
        except CaptrFuseError as e:
            log.error(f"Checkpoint {settings.checkpoint_dir} not served: {e}")

    yield

    app.state.inference_service = None
    log.info(f"{settings.app_name} stopped")


app = FastAPI(
    title=settings.app_name,
    version=settings.app_version,
    description="Image captioning and target sentiment classification",
    lifespan=lifespan,
)
app.state.inference_service = None


@app.middleware("http")
async def time_requests(request: Request, call_next):
    if request.url.path in QUIET_PATHS:
        return await call_next(request)

    started = time.perf_counter()
    response = await call_next(request)
    elapsed = time.perf_counter() - started
    response.headers["X-Process-Time"] = f"{elapsed:.6f}"
    log.info(f"{request.method} {request.url.path} -> {response.status_code} in {elapsed * 1000:.1f}ms")
    return response


@app.exception_handler(CaptrFuseError)
async def domain_error_handler(request: Request, exc: CaptrFuseError):
    log.warning(f"{request.url.path}: {type(exc).__name__}: {exc}")
    return JSONResponse(status_code=400, content={"detail": f"Invalid request: {exc}"})


@app.exception_handler(Exception)
async def unexpected_error_handler(request: Request, exc: Exception):
    log.exception(f"Unhandled error on {request.url.path}")
    detail = str(exc) if settings.debug else "Internal server error"
    return JSONResponse(status_code=500, content={"detail": detail})


@app.get("/health", response_model=HealthResponse)
async def health():
    service = app.state.inference_service
    loaded = service is not None and service.health_check()
    return HealthResponse(
        status="healthy",
        version=settings.app_version,
        model_loaded=loaded,
        mode=service.mode if loaded else None,
    )


app.include_router(inference.router, prefix="/api/v1", tags=["inference"])


if __name__ == "__main__":
    import uvicorn

    uvicorn.run("captrfuse.main:app", host=settings.host, port=settings.port, log_level=settings.log_level.lower())
