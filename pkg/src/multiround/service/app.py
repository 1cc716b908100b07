"""HTTP service exposing runs, reports, analysis, simulation, and SFT generation.

All heavy work happens in the core package; handlers translate request
bodies into core calls and domain errors into status codes. A run request
can either block until done (``wait: true``, the default) or return
immediately with a job the client polls via ``GET /runs/{run_id}``.
"""

from __future__ import annotations

import threading
import uuid

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..analysis import DEFAULT_KEYWORDS
from ..config import ConfigError, apply_overrides, parse_config
from ..datasets import DatasetError
from ..models import MockModelSpec, TrajectoryLabel
from ..orchestrator import (
    RunSummary,
    analyze_run_dir,
    execute_run,
    report_run_dir,
    resume_run,
)
from ..sftgen import run_sft_generation
from ..simulator import accuracy_series, fit_transitions, fixed_point
from ..store import StoreError
from ..verification import verify
from . import schemas


class _Job:
    """Mutable status of one background run."""

    def __init__(self, run_id: str):
        self.run_id = run_id
        self.lock = threading.Lock()
        self.state = "running"
        self.summary: RunSummary | None = None
        self.error: str | None = None

    def finish(self, summary: RunSummary) -> None:
        with self.lock:
            self.summary = summary
            self.state = "completed" if summary.completed else "truncated"

    def fail(self, error: str) -> None:
        with self.lock:
            self.error = error
            self.state = "failed"

    def status(self) -> schemas.RunStatusResponse:
        with self.lock:
            return schemas.RunStatusResponse(
                run_id=self.run_id,
                state=self.state,
                run_dir=self.summary.run_dir if self.summary else None,
                summary=self.summary,
                error=self.error,
            )


def create_app() -> FastAPI:
    app = FastAPI(title="multiround", version=__version__)
    jobs: dict[str, _Job] = {}
    app.state.jobs = jobs

    @app.exception_handler(ConfigError)
    @app.exception_handler(DatasetError)
    def _config_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.exception_handler(StoreError)
    def _store_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(ValueError)
    def _value_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(version=__version__)

    @app.post("/runs", response_model=schemas.RunStatusResponse)
    def start_run(body: schemas.RunRequest) -> schemas.RunStatusResponse:
        config = apply_overrides(
            parse_config(body.config),
            rounds=body.rounds,
            backend=body.backend,
            concurrency=body.concurrency,
            seed=body.seed,
        )
        run_id = body.run_id or uuid.uuid4().hex[:12]
        if body.wait:
            summary = execute_run(config, run_dir=body.run_dir, run_id=run_id)
            return _status_for(summary)
        job = _Job(run_id)
        jobs[run_id] = job

        def work() -> None:
            try:
                job.finish(execute_run(config, run_dir=body.run_dir, run_id=run_id))
            except Exception as exc:  # surfaced through job state, not logs
                job.fail(f"{type(exc).__name__}: {exc}")

        threading.Thread(target=work, name=f"run-{run_id}", daemon=True).start()
        return job.status()

    @app.get("/runs/{run_id}", response_model=schemas.RunStatusResponse)
    def run_status(run_id: str) -> schemas.RunStatusResponse:
        job = jobs.get(run_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown run id {run_id!r}")
        return job.status()

    @app.post("/runs/resume", response_model=schemas.RunStatusResponse)
    def resume(body: schemas.ResumeRequest) -> schemas.RunStatusResponse:
        config = None
        if body.config is not None:
            config = apply_overrides(
                parse_config(body.config),
                rounds=body.rounds,
                backend=body.backend,
                concurrency=body.concurrency,
                seed=body.seed,
            )
        elif any(v is not None for v in (body.rounds, body.backend, body.seed)):
            raise HTTPException(
                status_code=422,
                detail="rounds/backend/seed overrides on resume require the "
                "original config document to validate against",
            )
        summary = resume_run(
            body.run_dir, config=config, concurrency=body.concurrency
        )
        return _status_for(summary)

    @app.post("/reports", response_model=schemas.ReportResponse)
    def report(body: schemas.ReportRequest) -> schemas.ReportResponse:
        bundle, files = report_run_dir(body.run_dir)
        return schemas.ReportResponse(
            markdown=bundle.markdown,
            csv=bundle.csv,
            plots=bundle.plots,
            analysis=bundle.analysis,
            files=[str(f) for f in files],
        )

    @app.post("/analyze", response_model=schemas.AnalyzeResponse)
    def analyze(body: schemas.AnalyzeRequest) -> schemas.AnalyzeResponse:
        keywords = body.keywords if body.keywords else list(DEFAULT_KEYWORDS)
        return schemas.AnalyzeResponse(
            analysis=analyze_run_dir(body.run_dir, keywords)
        )

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(body: schemas.SimulateRequest) -> schemas.SimulateResponse:
        spec = MockModelSpec(
            p1=body.p1, t_cc=body.t_cc, t_ic=body.t_ic, seed=body.seed
        )
        fitted = None
        if body.counts is not None:
            try:
                counts = {TrajectoryLabel(k): v for k, v in body.counts.items()}
            except ValueError as exc:
                raise HTTPException(
                    status_code=422,
                    detail=f"counts keys must be CC/CI/IC/II: {exc}",
                ) from exc
            estimate = fit_transitions(counts)
            fitted = schemas.FittedTransitions(
                t_cc=estimate.t_cc, t_ic=estimate.t_ic
            )
        return schemas.SimulateResponse(
            rounds=list(range(1, body.rounds + 1)),
            accuracies=accuracy_series(spec, body.rounds),
            fixed_point=fixed_point(spec),
            fitted=fitted,
        )

    @app.post("/verify", response_model=schemas.VerifyResponse)
    def verify_answer(body: schemas.VerifyRequest) -> schemas.VerifyResponse:
        return schemas.VerifyResponse(
            verdict=verify(body.extracted, body.gold, body.kind)
        )

    @app.post("/sft/generate", response_model=schemas.SftGenResponse)
    def sft_generate(body: schemas.SftGenRequest) -> schemas.SftGenResponse:
        config = parse_config(body.config)
        summary = run_sft_generation(
            config,
            body.max_rounds,
            body.out,
            run_dir=body.run_dir,
            run_id=body.run_id,
        )
        return schemas.SftGenResponse(summary=summary)

    return app


def _status_for(summary: RunSummary) -> schemas.RunStatusResponse:
    return schemas.RunStatusResponse(
        run_id=summary.run_id,
        state="completed" if summary.completed else "truncated",
        run_dir=summary.run_dir,
        summary=summary,
        error=None,
    )
