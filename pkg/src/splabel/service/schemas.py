"""Request/response models for the HTTP service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class StageRequest(BaseModel):
    """Run one stage (or the whole pipeline) over a batch of manifests."""

    manifests: list[str] = Field(min_length=1, description="Manifest JSON paths")
    out: str = Field(description="Output directory root")
    config: dict | None = Field(
        default=None, description="PipelineConfig overrides (hyperparams, k_target, stages)"
    )
    jobs: int = Field(default=1, ge=1, description="Concurrent manifest bound")


class ManifestResult(BaseModel):
    image_id: str
    summary: dict


class StageResponse(BaseModel):
    command: str
    results: list[ManifestResult]


class ErrorResponse(BaseModel):
    error: str
    detail: str


class HealthResponse(BaseModel):
    status: str
    version: str
