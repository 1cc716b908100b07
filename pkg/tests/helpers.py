"""Shared test utilities: task factories, scripted backends, dataset files."""

from __future__ import annotations

import json
import threading
from pathlib import Path

from multiround.backends import (
    BackendError,
    Completion,
    CompletionTag,
    PermanentBackendError,
)
from multiround.config import RunConfig, parse_config
from multiround.models import AnswerKind, Benchmark, SamplingParams, TaskSpec


def make_task(
    task_id: str = "t1",
    benchmark: Benchmark = Benchmark.MATH500,
    prompt: str = "Compute the value.",
    gold: str = "7",
    kind: AnswerKind = AnswerKind.INTEGER,
) -> TaskSpec:
    return TaskSpec(
        id=task_id, benchmark=benchmark, prompt=prompt, gold=gold, answer_kind=kind
    )


def integer_tasks(count: int, benchmark: Benchmark = Benchmark.MATH500) -> list[TaskSpec]:
    return [
        make_task(f"task-{i:04d}", benchmark, f"Problem number {i}.", str(i % 97 + 1))
        for i in range(count)
    ]


def write_dataset(path: Path, tasks: list[TaskSpec]) -> Path:
    lines = [json.dumps(t.model_dump(mode="json")) for t in tasks]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def config_for(dataset: Path, **overrides: object) -> RunConfig:
    doc: dict[str, object] = {
        "dataset": str(dataset),
        "backend": {"type": "mock", "mock": {"p1": 0.6, "t_cc": 0.95, "t_ic": 0.3, "seed": 1}},
        "sampling": {"samples_per_task": 2, "n_rounds": 2},
        "concurrency": 4,
    }
    doc.update(overrides)
    return parse_config(doc)


def correct_answer_text(task: TaskSpec) -> str:
    from multiround.backends import _answer_text

    return _answer_text(task, correct=True)


def wrong_answer_text(task: TaskSpec) -> str:
    from multiround.backends import _answer_text

    return _answer_text(task, correct=False)


class ScriptedBackend:
    """Backend whose per-round correctness is dictated by a script.

    ``script[(task_id, round)]`` decides whether that round answers
    correctly; missing keys raise so tests notice unexpected requests.
    """

    def __init__(self, script: dict[tuple[str, int], bool], model: str = "scripted"):
        self.script = dict(script)
        self.calls: list[CompletionTag] = []
        self.prompts: dict[tuple[str, int, int], str] = {}
        self._model = model
        self._lock = threading.Lock()

    @property
    def model_id(self) -> str:
        return self._model

    def describe(self) -> dict[str, object]:
        return {"type": "mock", "model": self._model, "p1": 1.0, "t_cc": 1.0, "t_ic": 1.0, "seed": 0}

    def complete(self, task, prompt, params, tag, prev_correct) -> Completion:
        with self._lock:
            self.calls.append(tag)
            self.prompts[(tag.task_id, tag.chain_index, tag.round)] = prompt
        correct = self.script[(tag.task_id, tag.round)]
        answer = correct_answer_text(task) if correct else wrong_answer_text(task)
        raw = f"<think>\nplan briefly\n</think>\n{answer}"
        return Completion(raw=raw, completion_tokens=len(raw.split()))


class FailingBackend:
    """Fails permanently for selected (task, round) keys, else delegates."""

    def __init__(self, inner, fail_at: set[tuple[str, int]]):
        self._inner = inner
        self.fail_at = set(fail_at)

    @property
    def model_id(self) -> str:
        return self._inner.model_id

    def describe(self) -> dict[str, object]:
        return self._inner.describe()

    def complete(self, task, prompt, params, tag, prev_correct) -> Completion:
        if (tag.task_id, tag.round) in self.fail_at:
            raise PermanentBackendError(f"scripted failure for {tag.task_id} r{tag.round}")
        return self._inner.complete(task, prompt, params, tag, prev_correct)


class ExplodingBackend:
    """Delegates until ``allowed`` completions have happened, then raises.

    Raises a plain RuntimeError (not a BackendError), simulating a hard
    interruption of the process rather than a request failure.
    """

    def __init__(self, inner, allowed: int):
        self._inner = inner
        self._lock = threading.Lock()
        self.remaining = allowed

    @property
    def model_id(self) -> str:
        return self._inner.model_id

    def describe(self) -> dict[str, object]:
        return self._inner.describe()

    def complete(self, task, prompt, params, tag, prev_correct) -> Completion:
        with self._lock:
            if self.remaining <= 0:
                raise RuntimeError("interrupted")
            self.remaining -= 1
        return self._inner.complete(task, prompt, params, tag, prev_correct)


def default_params(**overrides: object) -> SamplingParams:
    fields: dict[str, object] = {"samples_per_task": 1, "n_rounds": 2}
    fields.update(overrides)
    return SamplingParams(**fields)
