"""HTTP service wrapping the pseudo-label toolkit.

One POST endpoint per pipeline stage plus ``pipeline`` and ``overlay``.
Every endpoint takes a batch of manifest paths and an output directory;
the arrays themselves stay on disk in the interchange formats, so
requests and responses carry only paths and summary numbers.

Input problems map to 422, protocol misuse (stage ordering) to 409.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from importlib.metadata import PackageNotFoundError, version

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from ..errors import ContractViolation, InputError, ToolkitError
from ..pipeline import PipelineConfig, run_many, run_overlay
from .schemas import (
    ErrorResponse,
    HealthResponse,
    ManifestResult,
    StageRequest,
    StageResponse,
)

try:
    _VERSION = version("splabel")
except PackageNotFoundError:  # running from a source tree
    _VERSION = "0.0.0"

# endpoint name -> pipeline stage selection (None = configured stages)
_COMMANDS = {
    "affinity": ("affinity",),
    "multicut": ("multicut",),
    "filter": ("filter",),
    "superpixel": ("superpixel",),
    "sgm-loss": ("sgm",),
    "stability": ("stability",),
    "adaptive-loss": ("adaptive",),
    "pipeline": None,
}


def _run_command(command: str, req: StageRequest) -> StageResponse:
    cfg = PipelineConfig.from_dict(req.config or {})
    if command == "overlay":
        if req.jobs == 1 or len(req.manifests) <= 1:
            results = [run_overlay(p, req.out) for p in req.manifests]
        else:
            with ThreadPoolExecutor(max_workers=req.jobs) as pool:
                futures = [pool.submit(run_overlay, p, req.out) for p in req.manifests]
                results = [f.result() for f in futures]
        payload = [
            ManifestResult(image_id=r["image_id"], summary=r) for r in results
        ]
    else:
        stages = _COMMANDS[command]
        results = run_many(cfg, req.manifests, req.out, stages=stages, jobs=req.jobs)
        payload = [
            ManifestResult(image_id=r["image_id"], summary=r["stages"])
            for r in results
        ]
    return StageResponse(command=command, results=payload)


def create_app() -> FastAPI:
    app = FastAPI(
        title="splabel",
        version=_VERSION,
        description="Pseudo-label generation, filtering, and loss service",
    )

    @app.exception_handler(ToolkitError)
    async def _toolkit_error(request: Request, exc: ToolkitError):
        if isinstance(exc, ContractViolation):
            status = 409
        elif isinstance(exc, InputError):
            status = 422
        else:
            status = 422
        body = ErrorResponse(error=type(exc).__name__, detail=str(exc))
        return JSONResponse(status_code=status, content=body.model_dump())

    @app.get("/v1/health", response_model=HealthResponse)
    async def health():
        return HealthResponse(status="ok", version=_VERSION)

    def _register(command: str):
        @app.post(
            f"/v1/{command}",
            response_model=StageResponse,
            responses={409: {"model": ErrorResponse}, 422: {"model": ErrorResponse}},
            name=command,
        )
        def endpoint(req: StageRequest, _command=command) -> StageResponse:
            # sync endpoint: FastAPI dispatches to its worker pool, keeping
            # the event loop free while numpy crunches
            return _run_command(_command, req)

    for cmd in (*_COMMANDS, "overlay"):
        _register(cmd)
    return app
