"""Distilling verified fine-tuning examples out of multi-round chains.

Each task is attempted for up to ``max_rounds`` rounds and contributes an
example only if some round verifies correct; the example keeps that round's
prompt (with the embedded previous answer, when past round 1), thinking,
and answer. Nothing unverified is ever emitted.
"""

from __future__ import annotations

import logging
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from pydantic import BaseModel

from .backends import BackendError, CompletionBackend, CompletionTag
from .config import RunConfig, resolve_params
from .datasets import dataset_sha256, group_by_benchmark, load_tasks
from .models import (
    Benchmark,
    RunManifest,
    SamplingParams,
    SftRecord,
    StoredRound,
    TaskSpec,
    Verdict,
)
from .orchestrator import assemble_response, build_backend, check_manifest_identity
from .prompting import build_round_prompt
from .store import MANIFEST_NAME, RunStore, canonical_json
from .verification import CodeVerifierHook

log = logging.getLogger(__name__)


class SftSummary(BaseModel):
    total_tasks: int
    emitted: int
    yield_fraction: float
    rounds_used_counts: dict[int, int]
    failed_tasks: int
    out_path: str


def generate_verified_example(
    task: TaskSpec,
    params: SamplingParams,
    backend: CompletionBackend,
    max_rounds: int,
    *,
    store: RunStore | None = None,
    code_hook: CodeVerifierHook | None = None,
) -> SftRecord | None:
    """First correct round of one chain as an SFT example, or None.

    None means every round came back wrong or a backend failure ended the
    chain early; either way the task contributes nothing.
    """
    if max_rounds < 1:
        raise ValueError("max_rounds must be at least 1")
    prev_answer: str | None = None
    prev_correct: bool | None = None
    for round_no in range(1, max_rounds + 1):
        prompt = build_round_prompt(task.prompt, prev_answer)
        response = None
        if store is not None:
            cached = store.get(task.id, 0, round_no)
            if cached is not None and cached.prompt_used == prompt:
                response = cached.to_response()
        if response is None:
            tag = CompletionTag(task.id, 0, round_no)
            try:
                completion = backend.complete(task, prompt, params, tag, prev_correct)
            except BackendError as exc:
                log.warning("task %s: no example, backend failed: %s", task.id, exc)
                return None
            response = assemble_response(task, round_no, prompt, completion, code_hook)
            if store is not None:
                store.append(
                    StoredRound.from_response(response, task.id, 0, task.benchmark)
                )
        if response.verdict is Verdict.CORRECT:
            return SftRecord(
                task_id=task.id,
                prompt=response.prompt_used,
                thinking=response.thinking,
                answer=response.answer,
                rounds_used=round_no,
            )
        prev_answer = response.answer
        prev_correct = False
    return None


def generate_dataset(
    tasks: list[TaskSpec],
    params: SamplingParams,
    backend: CompletionBackend,
    max_rounds: int,
    out: Path | str,
    *,
    store: RunStore | None = None,
    concurrency: int = 8,
    code_hook: CodeVerifierHook | None = None,
) -> SftSummary:
    """Write verified examples for every yielding task to a JSONL file.

    Examples are emitted in task order regardless of completion order, so
    the output is deterministic for a deterministic backend. An empty task
    list is not an error; it produces an empty file.
    """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rounds_used_counts: dict[int, int] = {}
    emitted = 0
    failed = 0

    def job(task: TaskSpec) -> SftRecord | None:
        return generate_verified_example(
            task, params, backend, max_rounds, store=store, code_hook=code_hook
        )

    with out.open("w", encoding="utf-8") as fh:
        if tasks:
            with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
                futures = [pool.submit(job, task) for task in tasks]
                for future in futures:
                    record = future.result()
                    if record is None:
                        failed += 1
                        continue
                    emitted += 1
                    rounds_used_counts[record.rounds_used] = (
                        rounds_used_counts.get(record.rounds_used, 0) + 1
                    )
                    fh.write(canonical_json(record.model_dump(mode="json")) + "\n")
                    fh.flush()
    return SftSummary(
        total_tasks=len(tasks),
        emitted=emitted,
        yield_fraction=emitted / len(tasks) if tasks else 0.0,
        rounds_used_counts=dict(sorted(rounds_used_counts.items())),
        failed_tasks=failed,
        out_path=str(out),
    )


def run_sft_generation(
    config: RunConfig,
    max_rounds: int,
    out: Path | str,
    *,
    run_dir: Path | str | None = None,
    run_id: str | None = None,
    created_at: float | None = None,
    backend: CompletionBackend | None = None,
    code_hook: CodeVerifierHook | None = None,
) -> SftSummary:
    """Config-driven entry point: dataset file in, example file plus store out.

    The store makes generation resumable exactly like evaluation runs:
    rounds already drawn are reused, so re-running after an interruption
    only requests what is missing and rewrites the output file in full.
    """
    tasks = load_tasks(config.dataset)
    if backend is None:
        backend = build_backend(config)
    if code_hook is None and config.verifier_hook:
        code_hook = CodeVerifierHook(
            config.verifier_hook, config.concurrency, config.verifier_timeout
        )
    params = resolve_params(config, Benchmark.CUSTOM).model_copy(
        update={"n_rounds": max_rounds, "samples_per_task": 1}
    )
    run_id = run_id or uuid.uuid4().hex[:12]
    run_dir = (
        Path(run_dir) if run_dir is not None else Path(config.output_dir) / run_id
    )
    manifest = RunManifest(
        run_id=run_id,
        model_id=backend.model_id,
        backend=backend.describe(),
        dataset_path=str(config.dataset),
        dataset_sha256=dataset_sha256(config.dataset),
        params_by_benchmark={
            b.value: params for b in group_by_benchmark(tasks)
        },
        created_at=created_at if created_at is not None else time.time(),
        mode="sft",
    )
    if (run_dir / MANIFEST_NAME).exists():
        store = RunStore.open(run_dir)
        check_manifest_identity(store.manifest, manifest)
    else:
        store = RunStore.create(run_dir, manifest)
    summary = generate_dataset(
        tasks,
        params,
        backend,
        max_rounds,
        out,
        store=store,
        concurrency=config.concurrency,
        code_hook=code_hook,
    )
    store.finalize()
    return summary
