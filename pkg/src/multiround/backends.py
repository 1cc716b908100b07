"""Completion backends: an OpenAI-compatible HTTP client and a deterministic mock.

Both expose the same ``complete`` call so the orchestrator never knows which
one it is driving. The mock draws correctness from a two-state process
(first-round accuracy plus two transition probabilities) using counter-based
hashing, so a given (seed, task, chain, round, previous verdict) always
produces byte-identical output with no shared RNG state across threads.
"""

from __future__ import annotations

import hashlib
import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import httpx

from .models import AnswerKind, Benchmark, MockModelSpec, SamplingParams, TaskSpec

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 6
BACKOFF_BASE_SECONDS = 1.0
BACKOFF_FACTOR = 2.0
DEFAULT_CREDENTIAL_ENV = "OPENAI_API_KEY"


class BackendError(Exception):
    """A completion could not be obtained; the chain cannot continue."""


class PermanentBackendError(BackendError):
    """The request was rejected in a way retrying will not fix (e.g. 400)."""


class RetriesExhaustedError(BackendError):
    """Transient failures persisted through every allowed attempt."""


@dataclass(frozen=True)
class CompletionTag:
    """Coordinates of one request, used for mock determinism and logging."""

    task_id: str
    chain_index: int
    round: int


@dataclass(frozen=True)
class Completion:
    """What a backend returns before grading: text plus transport metadata."""

    raw: str
    reasoning: str | None = None
    completion_tokens: int | None = None
    truncated: bool = False


class CompletionBackend(Protocol):
    def complete(
        self,
        task: TaskSpec,
        prompt: str,
        params: SamplingParams,
        tag: CompletionTag,
        prev_correct: bool | None,
    ) -> Completion: ...

    def describe(self) -> dict[str, object]: ...

    @property
    def model_id(self) -> str: ...


class OpenAICompatibleClient:
    """Chat-completions client with bounded concurrency and retry with backoff.

    Transient failures (timeouts, connection errors, HTTP 5xx, HTTP 429) are
    retried up to ``MAX_ATTEMPTS`` total attempts with exponentially growing
    jittered delays; other 4xx responses fail permanently. The transport,
    sleep function, and jitter RNG are injectable so tests run without a
    network or a clock.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        credential_env: str | None = DEFAULT_CREDENTIAL_ENV,
        api_key: str | None = None,
        max_in_flight: int = 8,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if api_key is None and credential_env:
            api_key = os.environ.get(credential_env)
        headers = {}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._model = model
        self._client = httpx.Client(
            base_url=base_url, headers=headers, timeout=timeout, transport=transport
        )
        self._base_url = base_url
        self._credential_env = credential_env
        self._slots = threading.Semaphore(max_in_flight)
        self._sleep = sleeper
        self._rng = rng or random.Random()

    @property
    def model_id(self) -> str:
        return self._model

    def describe(self) -> dict[str, object]:
        # The credential itself never goes in a manifest, only the env var name.
        return {
            "type": "live",
            "base_url": self._base_url,
            "model": self._model,
            "credential_env": self._credential_env,
        }

    def complete(
        self,
        task: TaskSpec,
        prompt: str,
        params: SamplingParams,
        tag: CompletionTag,
        prev_correct: bool | None,
    ) -> Completion:
        body = {
            "model": self._model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        with self._slots:
            last_error = ""
            for attempt in range(MAX_ATTEMPTS):
                try:
                    response = self._client.post("/chat/completions", json=body)
                except httpx.TransportError as exc:
                    last_error = f"transport error: {exc}"
                else:
                    if response.status_code == 200:
                        return self._parse(response, tag)
                    if response.status_code != 429 and response.status_code < 500:
                        raise PermanentBackendError(
                            f"{tag.task_id}[{tag.chain_index}] round {tag.round}: "
                            f"HTTP {response.status_code}: {response.text[:200]}"
                        )
                    last_error = f"HTTP {response.status_code}"
                if attempt + 1 < MAX_ATTEMPTS:
                    delay = self._backoff_delay(attempt)
                    log.warning(
                        "%s[%d] round %d attempt %d failed (%s); retrying in %.2fs",
                        tag.task_id,
                        tag.chain_index,
                        tag.round,
                        attempt + 1,
                        last_error,
                        delay,
                    )
                    self._sleep(delay)
        raise RetriesExhaustedError(
            f"{tag.task_id}[{tag.chain_index}] round {tag.round}: "
            f"gave up after {MAX_ATTEMPTS} attempts ({last_error})"
        )

    def close(self) -> None:
        self._client.close()

    def _backoff_delay(self, attempt: int) -> float:
        # Jitter in [0.5, 1.0) of the exponential step keeps growth visible
        # while desynchronizing concurrent retries.
        step = BACKOFF_BASE_SECONDS * (BACKOFF_FACTOR**attempt)
        return step * (0.5 + 0.5 * self._rng.random())

    def _parse(self, response: httpx.Response, tag: CompletionTag) -> Completion:
        try:
            data = response.json()
            choice = data["choices"][0]
            message = choice["message"]
        except (ValueError, LookupError, TypeError) as exc:
            raise PermanentBackendError(
                f"{tag.task_id}[{tag.chain_index}] round {tag.round}: "
                f"malformed completion payload: {exc}"
            ) from exc
        content = message.get("content") or ""
        reasoning = message.get("reasoning_content")
        usage = data.get("usage") or {}
        tokens = usage.get("completion_tokens")
        if not isinstance(tokens, int) or tokens < 0:
            tokens = None
        return Completion(
            raw=content,
            reasoning=reasoning,
            completion_tokens=tokens,
            truncated=choice.get("finish_reason") == "length",
        )


class MockBackend:
    """Offline backend emitting synthetic reasoning traces and answers.

    Correctness of each round is drawn by hashing (seed, task, chain, round),
    with probability p1 for round 1 and t_cc/t_ic afterwards depending on the
    previous round's verdict. Correct answers restate the task's gold answer
    in the shape graders expect for its kind; wrong answers are a
    deterministic perturbation of gold that still extracts cleanly.
    """

    def __init__(self, spec: MockModelSpec, model: str = "mock-reasoner"):
        self.spec = spec
        self._model = model

    @property
    def model_id(self) -> str:
        return self._model

    def describe(self) -> dict[str, object]:
        return {
            "type": "mock",
            "model": self._model,
            "p1": self.spec.p1,
            "t_cc": self.spec.t_cc,
            "t_ic": self.spec.t_ic,
            "seed": self.spec.seed,
        }

    def complete(
        self,
        task: TaskSpec,
        prompt: str,
        params: SamplingParams,
        tag: CompletionTag,
        prev_correct: bool | None,
    ) -> Completion:
        if tag.round == 1 or prev_correct is None:
            p = self.spec.p1
        elif prev_correct:
            p = self.spec.t_cc
        else:
            p = self.spec.t_ic
        correct = self._unit(tag, "draw") < p
        thinking = self._thinking(tag)
        answer = _answer_text(task, correct)
        raw = f"<think>\n{thinking}\n</think>\n{answer}"
        return Completion(raw=raw, completion_tokens=len(raw.split()))

    def _unit(self, tag: CompletionTag, salt: str) -> float:
        key = f"{self.spec.seed}|{tag.task_id}|{tag.chain_index}|{tag.round}|{salt}"
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") / 2**64

    def _thinking(self, tag: CompletionTag) -> str:
        """Synthetic reasoning whose hedge-word counts shrink round over round."""
        bits = int(self._unit(tag, "style") * 2**30)
        n_but = bits % 4
        n_wait = (bits >> 2) % 4
        n_maybe = (bits >> 4) % 3
        n_therefore = (bits >> 6) % 3
        n_pad = max(1, 8 - 2 * (tag.round - 1) + ((bits >> 8) % 4))
        lines = [
            f"Step {i + 1}: examine the subproblem and simplify the current form."
            for i in range(n_pad)
        ]
        lines.extend(["But the first estimate could be off."] * n_but)
        lines.extend(["Wait, check the edge case once more."] * n_wait)
        lines.extend(["Maybe another route gets there faster."] * n_maybe)
        lines.extend(["Therefore the value follows directly."] * n_therefore)
        return "\n".join(lines)


def _answer_text(task: TaskSpec, correct: bool) -> str:
    gold = task.gold.strip()
    if task.answer_kind is AnswerKind.INTEGER:
        value = int(gold)
        if not correct:
            value = (value + 1) % 1000 if task.benchmark is Benchmark.AIME24 else value + 1
        return f"The final answer is $\\boxed{{{value}}}$."
    if task.answer_kind is AnswerKind.EXPRESSION:
        expr = gold if correct else f"{gold}+1"
        return f"The final answer is $\\boxed{{{expr}}}$."
    if task.answer_kind is AnswerKind.CHOICE:
        letter = gold.upper()
        if not correct:
            letter = "ABCD"[("ABCD".index(letter) + 1) % 4]
        return f"The answer is ({letter})."
    body = gold if correct else f"{gold}\n# deliberately broken variant"
    return f"Here is the solution:\n```python\n{body}\n```"
