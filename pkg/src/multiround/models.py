"""Core domain types for multi-round evaluation runs.

Everything that crosses a module boundary is an immutable pydantic model so
records can be serialized, stored, and reloaded without drift: round-tripping
any of these types through JSON yields an equal value.
"""

from __future__ import annotations

from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Benchmark(str, Enum):
    AIME24 = "aime24"
    MATH500 = "math500"
    GPQA_DIAMOND = "gpqa_diamond"
    LIVECODEBENCH = "livecodebench"
    CUSTOM = "custom"


class AnswerKind(str, Enum):
    INTEGER = "integer"
    EXPRESSION = "expression"
    CHOICE = "choice"
    CODE = "code"


class Verdict(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    UNVERIFIABLE = "unverifiable"


class TokenSource(str, Enum):
    API_USAGE = "api_usage"
    WHITESPACE_FALLBACK = "whitespace_fallback"


class TrajectoryLabel(str, Enum):
    """Correctness transition between two rounds of the same chain.

    First letter is the earlier round, second the later one, so IC means
    "incorrect earlier, correct later". Unverifiable rounds count as
    incorrect for labeling purposes.
    """

    IC = "IC"
    II = "II"
    CC = "CC"
    CI = "CI"


#: Default number of independent chains sampled per task, by benchmark.
DEFAULT_SAMPLES_PER_TASK: dict[Benchmark, int] = {
    Benchmark.AIME24: 32,
    Benchmark.MATH500: 4,
    Benchmark.GPQA_DIAMOND: 8,
    Benchmark.LIVECODEBENCH: 8,
    Benchmark.CUSTOM: 8,
}

DEFAULT_TEMPERATURE = 0.6
DEFAULT_TOP_P = 0.95
DEFAULT_MAX_TOKENS = 32768
DEFAULT_ROUNDS = 2

_CHOICES = ("A", "B", "C", "D")


class FrozenModel(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class TaskSpec(FrozenModel):
    """One evaluation item: a prompt plus a gold answer and how to check it."""

    id: str = Field(min_length=1)
    benchmark: Benchmark
    prompt: str = Field(min_length=1)
    gold: str = Field(min_length=1)
    answer_kind: AnswerKind

    @model_validator(mode="after")
    def _check_gold(self) -> "TaskSpec":
        if self.answer_kind is AnswerKind.INTEGER:
            try:
                value = int(self.gold.strip())
            except ValueError:
                raise ValueError(
                    f"task {self.id!r}: gold {self.gold!r} is not an integer"
                )
            if self.benchmark is Benchmark.AIME24 and not 0 <= value <= 999:
                raise ValueError(
                    f"task {self.id!r}: aime24 answers must lie in [0, 999], got {value}"
                )
        elif self.answer_kind is AnswerKind.CHOICE:
            if self.gold.strip().upper() not in _CHOICES:
                raise ValueError(
                    f"task {self.id!r}: choice gold must be one of A-D, got {self.gold!r}"
                )
        return self


class SamplingParams(FrozenModel):
    """Decoding and repetition settings for one benchmark group."""

    temperature: float = Field(default=DEFAULT_TEMPERATURE, ge=0.0)
    top_p: float = Field(default=DEFAULT_TOP_P, gt=0.0, le=1.0)
    max_tokens: int = Field(default=DEFAULT_MAX_TOKENS, ge=1)
    samples_per_task: int = Field(default=8, ge=1)
    n_rounds: int = Field(default=DEFAULT_ROUNDS, ge=1)

    @classmethod
    def for_benchmark(cls, benchmark: Benchmark, **overrides: object) -> "SamplingParams":
        """Benchmark defaults, with any explicit overrides applied on top."""
        fields: dict[str, object] = {
            "samples_per_task": DEFAULT_SAMPLES_PER_TASK[benchmark]
        }
        fields.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**fields)


class RoundResponse(FrozenModel):
    """Everything recorded about a single round of a single chain.

    ``raw`` preserves the full model output; ``thinking`` and ``answer`` are
    the two segments it splits into, and ``extracted``/``verdict`` are the
    grading results recomputable from ``answer`` alone.
    """

    round: int = Field(ge=1)
    prompt_used: str
    raw: str
    thinking: str
    answer: str
    extracted: str | None
    completion_tokens: int = Field(ge=0)
    token_source: TokenSource
    verdict: Verdict
    truncated: bool = False


class Chain(FrozenModel):
    """One task attempt followed over consecutive rounds."""

    task_id: str
    chain_index: int = Field(ge=0)
    rounds: tuple[RoundResponse, ...]

    @model_validator(mode="after")
    def _check_rounds(self) -> "Chain":
        for i, response in enumerate(self.rounds, start=1):
            if response.round != i:
                raise ValueError(
                    f"chain {self.task_id}/{self.chain_index}: rounds must be "
                    f"contiguous from 1, found {response.round} at position {i}"
                )
        return self

    def response_at(self, round: int) -> RoundResponse | None:
        if 1 <= round <= len(self.rounds):
            return self.rounds[round - 1]
        return None


class StoredRound(RoundResponse):
    """A RoundResponse flattened with its chain coordinates for JSONL storage."""

    task_id: str
    chain_index: int = Field(ge=0)
    benchmark: Benchmark

    def to_response(self) -> RoundResponse:
        return RoundResponse.model_validate(
            self.model_dump(include=set(RoundResponse.model_fields))
        )

    @classmethod
    def from_response(
        cls, response: RoundResponse, task_id: str, chain_index: int, benchmark: Benchmark
    ) -> "StoredRound":
        return cls(
            task_id=task_id,
            chain_index=chain_index,
            benchmark=benchmark,
            **response.model_dump(),
        )


class MockModelSpec(FrozenModel):
    """Two-state accuracy process driving the deterministic mock backend.

    A round-1 answer is correct with probability ``p1``; later rounds are
    correct with probability ``t_cc`` after a correct round and ``t_ic``
    after an incorrect one.
    """

    p1: float = Field(ge=0.0, le=1.0)
    t_cc: float = Field(ge=0.0, le=1.0)
    t_ic: float = Field(ge=0.0, le=1.0)
    seed: int = 0


class SftRecord(FrozenModel):
    """One verified fine-tuning example distilled from a chain."""

    task_id: str
    prompt: str
    thinking: str
    answer: str
    rounds_used: int = Field(ge=1)


class RunManifest(FrozenModel):
    """Identity of a run directory: what was run, against what, and how."""

    run_id: str
    model_id: str
    backend: dict[str, object]
    dataset_path: str
    dataset_sha256: str
    params_by_benchmark: dict[str, SamplingParams]
    created_at: float
    mode: str = "eval"
