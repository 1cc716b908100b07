"""Accuracy metrics and the reporting-grade rounding they are displayed with.

Scores flow through three levels: per-task pass@1 (mean over that task's
chains), per-benchmark score (mean over tasks, as a percentage), and the
global average (unweighted mean over benchmarks). Intermediate values stay
unrounded; only displayed numbers are rounded, half away from zero, to one
decimal. ``round(77.95) == 78.0`` here, where Python's builtin banker's
rounding would give 77.9 via float artifacts.
"""

from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal
from statistics import fmean
from typing import Iterable, Sequence

from .models import Chain, Verdict


def round_half_away_from_zero(value: float, ndigits: int = 1) -> float:
    """Round with ties going away from zero, via exact decimal arithmetic.

    The float is converted through its shortest repr so that 77.95 means
    77.95, not the underlying binary 77.9499... expansion.
    """
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(str(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def mean_rounded(values: Iterable[float], ndigits: int = 1) -> float:
    """Decimal-exact mean of the inputs, rounded half away from zero."""
    decimals = [Decimal(str(v)) for v in values]
    if not decimals:
        raise ValueError("mean of empty sequence")
    mean = sum(decimals) / len(decimals)
    quantum = Decimal(1).scaleb(-ndigits)
    return float(mean.quantize(quantum, rounding=ROUND_HALF_UP))


def pass_at_1(verdicts: Sequence[Verdict]) -> float:
    """Fraction of verdicts that are correct; unverifiable counts as wrong."""
    if not verdicts:
        raise ValueError("pass@1 of zero verdicts is undefined")
    return sum(v is Verdict.CORRECT for v in verdicts) / len(verdicts)


def benchmark_round_score(chains: Sequence[Chain], round: int) -> float:
    """Percentage score for one benchmark at one round, unrounded.

    Chains are grouped by task; each task contributes its pass@1 equally
    regardless of how many chains it has. Every chain must contain the
    requested round: a missing round means the run is incomplete and the
    score would silently skew, so it is an error naming the culprit.
    """
    if not chains:
        raise ValueError("no chains to score")
    by_task: dict[str, list[Verdict]] = {}
    for chain in chains:
        response = chain.response_at(round)
        if response is None:
            raise ValueError(
                f"chain {chain.task_id}/{chain.chain_index} has no round {round}"
            )
        by_task.setdefault(chain.task_id, []).append(response.verdict)
    return 100.0 * fmean(pass_at_1(v) for v in by_task.values())


def global_average(scores: Sequence[float]) -> float:
    """Unweighted mean over benchmark scores, rounded to one decimal.

    With a single benchmark this reduces to rounding that benchmark's score.
    """
    if not scores:
        raise ValueError("global average of zero benchmarks is undefined")
    return mean_rounded(scores)
