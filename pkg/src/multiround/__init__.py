"""Multi-round re-answering harness for reasoning models.

Run a model repeatedly on the same task, feeding each round the previous
round's answer, then score, analyze, and distill the resulting chains.
"""

__version__ = "0.1.0"

from .models import (
    AnswerKind,
    Benchmark,
    Chain,
    MockModelSpec,
    RoundResponse,
    SamplingParams,
    SftRecord,
    TaskSpec,
    TokenSource,
    TrajectoryLabel,
    Verdict,
)

__all__ = [
    "__version__",
    "AnswerKind",
    "Benchmark",
    "Chain",
    "MockModelSpec",
    "RoundResponse",
    "SamplingParams",
    "SftRecord",
    "TaskSpec",
    "TokenSource",
    "TrajectoryLabel",
    "Verdict",
]
