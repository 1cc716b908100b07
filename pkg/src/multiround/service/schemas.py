"""Request and response bodies for the HTTP service."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field

from ..models import AnswerKind, Verdict
from ..orchestrator import RunSummary
from ..sftgen import SftSummary


class HealthResponse(BaseModel):
    status: Literal["ok"] = "ok"
    version: str


class RunRequest(BaseModel):
    """Start (or continue) an evaluation run from a config document."""

    config: dict
    run_dir: str | None = None
    run_id: str | None = None
    rounds: int | None = Field(default=None, ge=1)
    backend: Literal["mock", "live"] | None = None
    concurrency: int | None = Field(default=None, ge=1)
    seed: int | None = None
    wait: bool = True


class ResumeRequest(BaseModel):
    """Continue a run directory; optionally re-validate against a config."""

    run_dir: str
    config: dict | None = None
    rounds: int | None = Field(default=None, ge=1)
    backend: Literal["mock", "live"] | None = None
    concurrency: int | None = Field(default=None, ge=1)
    seed: int | None = None
    wait: bool = True


class RunStatusResponse(BaseModel):
    run_id: str
    state: Literal["running", "completed", "truncated", "failed"]
    run_dir: str | None = None
    summary: RunSummary | None = None
    error: str | None = None


class ReportRequest(BaseModel):
    run_dir: str


class ReportResponse(BaseModel):
    markdown: str
    csv: str
    plots: dict
    analysis: dict
    files: list[str]


class AnalyzeRequest(BaseModel):
    run_dir: str
    keywords: list[str] | None = None


class AnalyzeResponse(BaseModel):
    analysis: dict


class SimulateRequest(BaseModel):
    """Predict round accuracies for a two-state answer process."""

    p1: float = Field(ge=0.0, le=1.0)
    t_cc: float = Field(ge=0.0, le=1.0)
    t_ic: float = Field(ge=0.0, le=1.0)
    rounds: int = Field(default=4, ge=1, le=10_000)
    seed: int = 0
    counts: dict[str, int] | None = None


class FittedTransitions(BaseModel):
    t_cc: float | None
    t_ic: float | None


class SimulateResponse(BaseModel):
    rounds: list[int]
    accuracies: list[float]
    fixed_point: float | None
    fitted: FittedTransitions | None = None


class VerifyRequest(BaseModel):
    extracted: str | None
    gold: str = Field(min_length=1)
    kind: AnswerKind


class VerifyResponse(BaseModel):
    verdict: Verdict


class SftGenRequest(BaseModel):
    config: dict
    out: str
    max_rounds: int = Field(default=4, ge=1)
    run_dir: str | None = None
    run_id: str | None = None


class SftGenResponse(BaseModel):
    summary: SftSummary
