"""Loading task datasets from JSON-Lines files."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from pydantic import ValidationError

from .models import Benchmark, TaskSpec


class DatasetError(Exception):
    """A dataset file is missing, malformed, or internally inconsistent."""


def dataset_sha256(path: Path | str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_tasks(path: Path | str) -> list[TaskSpec]:
    """Read one TaskSpec per line, failing loudly with the offending line number.

    Duplicate task ids are rejected: chain records are keyed by task id, so
    two tasks sharing one would silently overwrite each other's results.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    tasks: list[TaskSpec] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            try:
                task = TaskSpec.model_validate(data)
            except ValidationError as exc:
                raise DatasetError(f"{path}:{lineno}: {_summarize(exc)}") from exc
            if task.id in seen:
                raise DatasetError(f"{path}:{lineno}: duplicate task id {task.id!r}")
            seen.add(task.id)
            tasks.append(task)
    if not tasks:
        raise DatasetError(f"{path}: dataset contains no tasks")
    return tasks


def group_by_benchmark(tasks: list[TaskSpec]) -> dict[Benchmark, list[TaskSpec]]:
    """Partition tasks by benchmark, preserving file order within each group."""
    groups: dict[Benchmark, list[TaskSpec]] = {}
    for task in tasks:
        groups.setdefault(task.benchmark, []).append(task)
    return groups


def _summarize(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "task"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)
