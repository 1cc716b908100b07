"""Append-only on-disk store for run records, resumable and self-healing.

Layout under a run directory:

    manifest.json                      run identity (model, dataset, params)
    records/{benchmark}/{round}/*.jsonl   one flattened record per line
    quarantine/                        unparseable lines moved aside on load
    reports/                           rendered report bundle

Records are written append-only through a single lock; duplicate
(task, chain, round) keys are resolved last-wins on load. ``finalize``
compacts every shard into a sorted, deduplicated, canonically serialized
file so that two runs producing the same records yield byte-identical
stores regardless of completion order or interruptions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
from pathlib import Path

from pydantic import ValidationError

from .models import Benchmark, Chain, RunManifest, StoredRound

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RECORDS_DIR = "records"
REPORTS_DIR = "reports"
QUARANTINE_DIR = "quarantine"
_SHARD_NAME = "records.jsonl"

Key = tuple[str, int, int]  # (task_id, chain_index, round)


class StoreError(Exception):
    """The run directory is missing, already in use, or inconsistent."""


def canonical_json(data: object) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class RunStore:
    def __init__(self, run_dir: Path, manifest: RunManifest):
        self.run_dir = run_dir
        self.manifest = manifest
        self._lock = threading.Lock()
        self._index: dict[Key, StoredRound] = {}
        self.quarantined = 0

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(cls, run_dir: Path | str, manifest: RunManifest) -> "RunStore":
        run_dir = Path(run_dir)
        manifest_path = run_dir / MANIFEST_NAME
        if manifest_path.exists():
            raise StoreError(f"run directory already initialized: {run_dir}")
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / RECORDS_DIR).mkdir(exist_ok=True)
        payload = json.dumps(manifest.model_dump(mode="json"), sort_keys=True, indent=2)
        _atomic_write(manifest_path, payload + "\n")
        return cls(run_dir, manifest)

    @classmethod
    def open(cls, run_dir: Path | str) -> "RunStore":
        run_dir = Path(run_dir)
        manifest_path = run_dir / MANIFEST_NAME
        if not manifest_path.is_file():
            raise StoreError(f"no manifest found in {run_dir}")
        try:
            manifest = RunManifest.model_validate_json(manifest_path.read_text("utf-8"))
        except (ValidationError, ValueError) as exc:
            raise StoreError(f"{manifest_path}: invalid manifest: {exc}") from exc
        store = cls(run_dir, manifest)
        store._load()
        return store

    # -- writing -------------------------------------------------------------

    def append(self, record: StoredRound) -> None:
        """Persist one record immediately; the in-memory index keeps last-wins."""
        shard = self._shard_path(record.benchmark.value, record.round)
        line = canonical_json(record.model_dump(mode="json"))
        with self._lock:
            shard.parent.mkdir(parents=True, exist_ok=True)
            with shard.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
            self._index[(record.task_id, record.chain_index, record.round)] = record

    def finalize(self) -> None:
        """Compact every shard: deduplicated, sorted by (task, chain), canonical."""
        with self._lock:
            by_shard: dict[tuple[str, int], list[StoredRound]] = {}
            for record in self._index.values():
                by_shard.setdefault((record.benchmark.value, record.round), []).append(
                    record
                )
            for (benchmark, round_no), records in by_shard.items():
                records.sort(key=lambda r: (r.task_id, r.chain_index))
                shard = self._shard_path(benchmark, round_no)
                lines = [canonical_json(r.model_dump(mode="json")) for r in records]
                _atomic_write(shard, "\n".join(lines) + "\n")
                for extra in shard.parent.glob("*.jsonl"):
                    if extra != shard:
                        extra.unlink()

    # -- reading -------------------------------------------------------------

    def get(self, task_id: str, chain_index: int, round: int) -> StoredRound | None:
        with self._lock:
            return self._index.get((task_id, chain_index, round))

    def count(self) -> int:
        with self._lock:
            return len(self._index)

    def records(self) -> list[StoredRound]:
        with self._lock:
            return list(self._index.values())

    def chains(self) -> list[Chain]:
        """Reconstruct chains from stored records.

        Only the contiguous prefix of rounds starting at 1 is kept for each
        chain, sorted by (task_id, chain_index) for determinism.
        """
        by_chain: dict[tuple[str, int], dict[int, StoredRound]] = {}
        with self._lock:
            for (task_id, chain_index, round_no), record in self._index.items():
                by_chain.setdefault((task_id, chain_index), {})[round_no] = record
        chains = []
        for (task_id, chain_index), rounds in sorted(by_chain.items()):
            responses = []
            round_no = 1
            while round_no in rounds:
                responses.append(rounds[round_no].to_response())
                round_no += 1
            if responses:
                chains.append(
                    Chain(task_id=task_id, chain_index=chain_index, rounds=tuple(responses))
                )
        return chains

    def benchmark_of(self) -> dict[str, Benchmark]:
        with self._lock:
            return {r.task_id: r.benchmark for r in self._index.values()}

    def cache_identities(self) -> list[tuple[object, ...]]:
        """Per-record identity tuples; a completed store never has duplicates."""
        identities = []
        for record in self.records():
            params = self.manifest.params_by_benchmark.get(record.benchmark.value)
            identities.append(
                (
                    self.manifest.model_id,
                    hashlib.sha256(record.prompt_used.encode("utf-8")).hexdigest(),
                    canonical_json(params.model_dump(mode="json")) if params else None,
                    record.chain_index,
                    record.round,
                )
            )
        return identities

    @property
    def reports_dir(self) -> Path:
        path = self.run_dir / REPORTS_DIR
        path.mkdir(exist_ok=True)
        return path

    # -- internals -----------------------------------------------------------

    def _shard_path(self, benchmark: str, round_no: int) -> Path:
        return self.run_dir / RECORDS_DIR / benchmark / str(round_no) / _SHARD_NAME

    def _load(self) -> None:
        records_root = self.run_dir / RECORDS_DIR
        if not records_root.is_dir():
            return
        for shard in sorted(records_root.glob("*/*/*.jsonl")):
            good_lines: list[str] = []
            bad_lines: list[str] = []
            with shard.open(encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = self._parse_line(line)
                    if record is None:
                        bad_lines.append(line.rstrip("\n"))
                        continue
                    good_lines.append(line.rstrip("\n"))
                    self._index[
                        (record.task_id, record.chain_index, record.round)
                    ] = record
            if bad_lines:
                self._quarantine(shard, bad_lines, good_lines)

    def _parse_line(self, line: str) -> StoredRound | None:
        try:
            return StoredRound.model_validate_json(line)
        except (ValidationError, ValueError):
            return None

    def _quarantine(self, shard: Path, bad_lines: list[str], good_lines: list[str]) -> None:
        """Move unparseable lines out of a shard so they are re-requested once."""
        quarantine_dir = self.run_dir / QUARANTINE_DIR
        quarantine_dir.mkdir(exist_ok=True)
        rel = shard.relative_to(self.run_dir / RECORDS_DIR)
        target = quarantine_dir / "__".join(rel.parts)
        with target.open("a", encoding="utf-8") as fh:
            for line in bad_lines:
                fh.write(line + "\n")
        body = "\n".join(good_lines) + "\n" if good_lines else ""
        _atomic_write(shard, body)
        self.quarantined += len(bad_lines)
        log.warning(
            "%s: quarantined %d unparseable line(s) to %s",
            shard,
            len(bad_lines),
            target,
        )


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    os.replace(tmp, path)
