"""Driving chains across rounds, with caching, resume, and reports.

A chain is strictly sequential: round n's prompt embeds round n-1's answer,
so rounds of one chain never overlap. Parallelism comes from running many
chains at once in a thread pool. Every completed round is persisted before
the next request, which is what makes interrupted runs resumable: on the
next invocation any stored record whose prompt matches the rebuilt prompt
is reused instead of re-requested.
"""

from __future__ import annotations

import logging
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from pydantic import BaseModel

from .analysis import DEFAULT_KEYWORDS, build_analysis
from .backends import (
    BackendError,
    CompletionBackend,
    CompletionTag,
    Completion,
    MockBackend,
    OpenAICompatibleClient,
)
from .config import ConfigError, RunConfig, resolve_params
from .datasets import dataset_sha256, group_by_benchmark, load_tasks
from .metrics import benchmark_round_score, global_average
from .models import (
    Benchmark,
    Chain,
    MockModelSpec,
    RoundResponse,
    RunManifest,
    SamplingParams,
    StoredRound,
    TaskSpec,
    TokenSource,
    Verdict,
)
from .prompting import build_round_prompt, split_thinking
from .reports import ReportBundle, render_report, write_report_bundle
from .store import MANIFEST_NAME, RunStore
from .verification import CodeVerifierHook, grade_answer

log = logging.getLogger(__name__)

_IDENTITY_FIELDS = (
    "model_id",
    "backend",
    "dataset_sha256",
    "params_by_benchmark",
    "mode",
)


class RunSummary(BaseModel):
    """What a finished (or interrupted) run looks like from the outside."""

    run_id: str
    run_dir: str
    completed: bool
    truncated_chains: int
    quarantined: int
    requests_made: int
    record_count: int
    expected_records: int
    n_rounds: int
    scores: dict[str, dict[int, float]]
    averages: dict[int, float]
    report_files: list[str]


def build_backend(config: RunConfig) -> CompletionBackend:
    if config.backend.type == "mock":
        mock = config.backend.mock
        return MockBackend(
            MockModelSpec(p1=mock.p1, t_cc=mock.t_cc, t_ic=mock.t_ic, seed=mock.seed),
            model=config.backend.model,
        )
    return OpenAICompatibleClient(
        base_url=config.backend.base_url or "",
        model=config.backend.model,
        credential_env=config.backend.credential_env,
        max_in_flight=config.concurrency,
        timeout=config.backend.timeout,
    )


def backend_from_manifest(manifest: RunManifest) -> CompletionBackend:
    """Reconstruct the backend a run was created with, from its manifest."""
    info = dict(manifest.backend)
    kind = info.get("type")
    if kind == "mock":
        return MockBackend(
            MockModelSpec(
                p1=float(info["p1"]),
                t_cc=float(info["t_cc"]),
                t_ic=float(info["t_ic"]),
                seed=int(info["seed"]),
            ),
            model=str(info.get("model", manifest.model_id)),
        )
    if kind == "live":
        return OpenAICompatibleClient(
            base_url=str(info["base_url"]),
            model=str(info["model"]),
            credential_env=str(info["credential_env"])
            if info.get("credential_env")
            else None,
        )
    raise ConfigError(f"manifest names an unknown backend type: {kind!r}")


def assemble_response(
    task: TaskSpec,
    round_no: int,
    prompt: str,
    completion: Completion,
    code_hook: CodeVerifierHook | None = None,
) -> RoundResponse:
    """Grade one completion into a stored round.

    Backends that return reasoning in a separate field get it folded back
    into ``raw`` inside think markers, so raw text alone always reproduces
    the thinking/answer split.
    """
    if completion.reasoning is not None:
        thinking = completion.reasoning.strip()
        answer = completion.raw.strip()
        raw = f"<think>{completion.reasoning}</think>{completion.raw}"
    else:
        raw = completion.raw
        thinking, answer = split_thinking(raw)
    extracted, verdict = grade_answer(task, answer, code_hook)
    if completion.completion_tokens is not None:
        tokens, source = completion.completion_tokens, TokenSource.API_USAGE
    else:
        tokens, source = len(raw.split()), TokenSource.WHITESPACE_FALLBACK
    return RoundResponse(
        round=round_no,
        prompt_used=prompt,
        raw=raw,
        thinking=thinking,
        answer=answer,
        extracted=extracted,
        completion_tokens=tokens,
        token_source=source,
        verdict=verdict,
        truncated=completion.truncated,
    )


def run_chain(
    task: TaskSpec,
    params: SamplingParams,
    chain_index: int,
    backend: CompletionBackend,
    *,
    store: RunStore | None = None,
    code_hook: CodeVerifierHook | None = None,
) -> Chain:
    """Run one chain for up to params.n_rounds rounds, reusing cached rounds.

    A permanent backend failure truncates the chain at the rounds completed
    so far; everything already graded stays persisted.
    """
    responses: list[RoundResponse] = []
    prev_answer: str | None = None
    prev_correct: bool | None = None
    for round_no in range(1, params.n_rounds + 1):
        prompt = build_round_prompt(task.prompt, prev_answer)
        response: RoundResponse | None = None
        if store is not None:
            cached = store.get(task.id, chain_index, round_no)
            if cached is not None and cached.prompt_used == prompt:
                response = cached.to_response()
        if response is None:
            tag = CompletionTag(task.id, chain_index, round_no)
            try:
                completion = backend.complete(task, prompt, params, tag, prev_correct)
            except BackendError as exc:
                log.error(
                    "chain %s/%d truncated at round %d: %s",
                    task.id,
                    chain_index,
                    round_no,
                    exc,
                )
                break
            response = assemble_response(task, round_no, prompt, completion, code_hook)
            if store is not None:
                store.append(
                    StoredRound.from_response(
                        response, task.id, chain_index, task.benchmark
                    )
                )
        responses.append(response)
        prev_answer = response.answer
        prev_correct = response.verdict is Verdict.CORRECT
    return Chain(task_id=task.id, chain_index=chain_index, rounds=tuple(responses))


def run_benchmark(
    tasks: list[TaskSpec],
    params: SamplingParams,
    backend: CompletionBackend,
    *,
    store: RunStore | None = None,
    concurrency: int = 8,
    code_hook: CodeVerifierHook | None = None,
) -> list[Chain]:
    """Run samples_per_task chains for every task, bounded by concurrency."""
    jobs = [
        (task, chain_index)
        for task in tasks
        for chain_index in range(params.samples_per_task)
    ]
    if concurrency <= 1:
        return [
            run_chain(task, params, ci, backend, store=store, code_hook=code_hook)
            for task, ci in jobs
        ]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [
            pool.submit(
                run_chain, task, params, ci, backend, store=store, code_hook=code_hook
            )
            for task, ci in jobs
        ]
        return [f.result() for f in futures]


def execute_run(
    config: RunConfig,
    *,
    run_dir: Path | str | None = None,
    run_id: str | None = None,
    created_at: float | None = None,
    backend: CompletionBackend | None = None,
    code_hook: CodeVerifierHook | None = None,
) -> RunSummary:
    """Run the configured dataset end to end and write reports.

    Pointing this at a directory that already holds a partial run with the
    same identity continues it; a directory from different settings is
    refused rather than mixed.
    """
    tasks = load_tasks(config.dataset)
    if backend is None:
        backend = build_backend(config)
    if code_hook is None and config.verifier_hook:
        code_hook = CodeVerifierHook(
            config.verifier_hook, config.concurrency, config.verifier_timeout
        )
    groups = group_by_benchmark(tasks)
    params_by = {b.value: resolve_params(config, b) for b in groups}
    run_id = run_id or uuid.uuid4().hex[:12]
    run_dir = Path(run_dir) if run_dir is not None else Path(config.output_dir) / run_id
    manifest = RunManifest(
        run_id=run_id,
        model_id=backend.model_id,
        backend=backend.describe(),
        dataset_path=str(config.dataset),
        dataset_sha256=dataset_sha256(config.dataset),
        params_by_benchmark=params_by,
        created_at=created_at if created_at is not None else time.time(),
        mode="eval",
    )
    if (run_dir / MANIFEST_NAME).exists():
        store = RunStore.open(run_dir)
        check_manifest_identity(store.manifest, manifest)
    else:
        store = RunStore.create(run_dir, manifest)
    return _drive(store, tasks, backend, config.concurrency, code_hook)


def resume_run(
    run_dir: Path | str,
    *,
    backend: CompletionBackend | None = None,
    config: RunConfig | None = None,
    concurrency: int | None = None,
    code_hook: CodeVerifierHook | None = None,
) -> RunSummary:
    """Continue a run directory from whatever records it already holds.

    The manifest is the source of truth; when a config is passed along, its
    resolved identity must match the manifest or the resume is refused.
    Resuming an already complete run makes no requests and simply
    regenerates the summary and reports.
    """
    store = RunStore.open(run_dir)
    manifest = store.manifest
    if config is not None:
        tasks = load_tasks(config.dataset)
        rebuilt_backend = backend or build_backend(config)
        rebuilt = RunManifest(
            run_id=manifest.run_id,
            model_id=rebuilt_backend.model_id,
            backend=rebuilt_backend.describe(),
            dataset_path=str(config.dataset),
            dataset_sha256=dataset_sha256(config.dataset),
            params_by_benchmark={
                b.value: resolve_params(config, b)
                for b in group_by_benchmark(tasks)
            },
            created_at=manifest.created_at,
            mode=manifest.mode,
        )
        check_manifest_identity(manifest, rebuilt)
        backend = rebuilt_backend
        if concurrency is None:
            concurrency = config.concurrency
        if code_hook is None and config.verifier_hook:
            code_hook = CodeVerifierHook(
                config.verifier_hook, config.concurrency, config.verifier_timeout
            )
    else:
        tasks = load_tasks(manifest.dataset_path)
        if dataset_sha256(manifest.dataset_path) != manifest.dataset_sha256:
            raise ConfigError(
                f"dataset {manifest.dataset_path} changed since the run was "
                "created (hash mismatch); refusing to resume"
            )
        if backend is None:
            backend = backend_from_manifest(manifest)
    return _drive(store, tasks, backend, concurrency or 8, code_hook)


def _drive(
    store: RunStore,
    tasks: list[TaskSpec],
    backend: CompletionBackend,
    concurrency: int,
    code_hook: CodeVerifierHook | None,
) -> RunSummary:
    manifest = store.manifest
    counting = _CountingBackend(backend)
    groups = group_by_benchmark(tasks)
    chains: list[Chain] = []
    n_rounds = 1
    expected = 0
    for benchmark in sorted(groups, key=lambda b: b.value):
        params = manifest.params_by_benchmark.get(benchmark.value)
        if params is None:
            raise ConfigError(
                f"dataset contains benchmark {benchmark.value!r} that the run "
                "manifest has no parameters for"
            )
        n_rounds = max(n_rounds, params.n_rounds)
        expected += len(groups[benchmark]) * params.samples_per_task * params.n_rounds
        chains.extend(
            run_benchmark(
                groups[benchmark],
                params,
                counting,
                store=store,
                concurrency=concurrency,
                code_hook=code_hook,
            )
        )
    benchmark_of = {task.id: task.benchmark for task in tasks}
    complete = [c for c in chains if len(c.rounds) == n_rounds]
    truncated = len(chains) - len(complete)
    completed = truncated == 0 and store.count() == expected
    if completed:
        store.finalize()

    by_benchmark: dict[str, list[Chain]] = {}
    for chain in complete:
        by_benchmark.setdefault(benchmark_of[chain.task_id].value, []).append(chain)
    scores = {
        name: {
            r: benchmark_round_score(group, r) for r in range(1, n_rounds + 1)
        }
        for name, group in sorted(by_benchmark.items())
    }
    averages = (
        {
            r: global_average([scores[name][r] for name in scores])
            for r in range(1, n_rounds + 1)
        }
        if scores
        else {}
    )
    note = None
    if truncated:
        note = (
            f"{truncated} of {len(chains)} chains stopped early on permanent "
            "backend failures; scores cover complete chains only."
        )
    elif not completed:
        note = "run records are incomplete; scores cover complete chains only."
    bundle = render_report(complete, benchmark_of, n_rounds, note=note)
    files = write_report_bundle(store.reports_dir, bundle)
    return RunSummary(
        run_id=manifest.run_id,
        run_dir=str(store.run_dir),
        completed=completed,
        truncated_chains=truncated,
        quarantined=store.quarantined,
        requests_made=counting.count,
        record_count=store.count(),
        expected_records=expected,
        n_rounds=n_rounds,
        scores=scores,
        averages=averages,
        report_files=[str(p) for p in files],
    )


def _complete_chains(store: RunStore) -> tuple[list[Chain], dict[str, Benchmark], int, str | None]:
    """Complete chains of a stored run, with a note when some are partial."""
    params = store.manifest.params_by_benchmark.values()
    if not params:
        raise ConfigError(f"{store.run_dir}: manifest lists no benchmarks")
    n_rounds = max(p.n_rounds for p in params)
    chains = store.chains()
    complete = [c for c in chains if len(c.rounds) >= n_rounds]
    note = None
    if len(complete) < len(chains):
        note = (
            f"{len(chains) - len(complete)} of {len(chains)} stored chains are "
            "incomplete; scores cover complete chains only."
        )
    return complete, store.benchmark_of(), n_rounds, note


def report_run_dir(
    run_dir: Path | str, *, write: bool = True
) -> tuple["ReportBundle", list[Path]]:
    """Re-render the report bundle for an existing run directory."""
    store = RunStore.open(run_dir)
    complete, benchmark_of, n_rounds, note = _complete_chains(store)
    bundle = render_report(complete, benchmark_of, n_rounds, note=note)
    files = write_report_bundle(store.reports_dir, bundle) if write else []
    return bundle, files


def analyze_run_dir(
    run_dir: Path | str, keywords: list[str] | None = None
) -> dict[str, object]:
    """Trajectory, hedge-word, and length analysis for a stored run."""
    store = RunStore.open(run_dir)
    complete, benchmark_of, n_rounds, _ = _complete_chains(store)
    if not complete:
        raise ValueError(f"{run_dir}: no complete chains to analyze")
    return build_analysis(
        complete, benchmark_of, n_rounds, keywords or DEFAULT_KEYWORDS
    )


def check_manifest_identity(stored: RunManifest, requested: RunManifest) -> None:
    mismatches = []
    for field in _IDENTITY_FIELDS:
        if getattr(stored, field) != getattr(requested, field):
            mismatches.append(
                f"{field}: run has {getattr(stored, field)!r}, "
                f"requested {getattr(requested, field)!r}"
            )
    if mismatches:
        raise ConfigError(
            "run directory does not match the requested settings; refusing to "
            "mix records: " + "; ".join(mismatches)
        )


class _CountingBackend:
    """Pass-through wrapper that counts completion requests."""

    def __init__(self, inner: CompletionBackend):
        self._inner = inner
        self._lock = threading.Lock()
        self.count = 0

    @property
    def model_id(self) -> str:
        return self._inner.model_id

    def describe(self) -> dict[str, object]:
        return self._inner.describe()

    def complete(self, *args, **kwargs) -> Completion:
        with self._lock:
            self.count += 1
        return self._inner.complete(*args, **kwargs)
