"""Behavioral analysis of chains: trajectories, hedge words, output length.

These functions answer how answers change across rounds (correct-to-correct
and friends), how often hedging words like "but" and "wait" appear in each
round's text, and how long responses are per benchmark. All of them treat
unverifiable rounds as incorrect, matching the accuracy metrics.
"""

from __future__ import annotations

import re
from statistics import fmean
from typing import Mapping, Sequence

from pydantic import BaseModel

from .metrics import mean_rounded, round_half_away_from_zero
from .models import Benchmark, Chain, TokenSource, TrajectoryLabel, Verdict

DEFAULT_KEYWORDS = ("but", "wait", "maybe", "therefore")

_LABEL_BY_PAIR = {
    (False, True): TrajectoryLabel.IC,
    (False, False): TrajectoryLabel.II,
    (True, True): TrajectoryLabel.CC,
    (True, False): TrajectoryLabel.CI,
}


class LengthStats(BaseModel):
    """Completion-token statistics for one round."""

    per_benchmark: dict[str, float]
    overall: float
    fallback_fraction: float


def trajectory_label(chain: Chain, round_a: int, round_b: int) -> TrajectoryLabel:
    """Label one chain's correctness transition from round_a to round_b."""
    if not round_a < round_b:
        raise ValueError(f"rounds must be ordered, got {round_a} >= {round_b}")
    first = chain.response_at(round_a)
    second = chain.response_at(round_b)
    if first is None or second is None:
        missing = round_a if first is None else round_b
        raise ValueError(
            f"chain {chain.task_id}/{chain.chain_index} has no round {missing}"
        )
    return _LABEL_BY_PAIR[
        (first.verdict is Verdict.CORRECT, second.verdict is Verdict.CORRECT)
    ]


def classify_trajectories(
    chains: Sequence[Chain], round_a: int, round_b: int
) -> dict[TrajectoryLabel, int]:
    """Count chains per transition label; all four labels always present."""
    counts = {label: 0 for label in TrajectoryLabel}
    for chain in chains:
        counts[trajectory_label(chain, round_a, round_b)] += 1
    return counts


def identity_score(counts: Mapping[TrajectoryLabel, int]) -> float:
    """Percentage of chains that are correct at the later round (CC + IC)."""
    total = sum(counts.values())
    if total == 0:
        raise ValueError("no chains classified")
    return 100.0 * (counts[TrajectoryLabel.CC] + counts[TrajectoryLabel.IC]) / total


def count_keyword(text: str, keyword: str) -> int:
    """Whole-word, case-insensitive occurrences of keyword in text."""
    pattern = re.compile(
        rf"(?<![A-Za-z]){re.escape(keyword)}(?![A-Za-z])", re.IGNORECASE
    )
    return sum(1 for _ in pattern.finditer(text))


def word_frequencies(
    chains: Sequence[Chain],
    round: int,
    keywords: Sequence[str] = DEFAULT_KEYWORDS,
) -> dict[str, float]:
    """Mean per-response occurrence count of each keyword at one round.

    Counting covers the full response text, thinking plus answer.
    """
    if not keywords:
        raise ValueError("at least one keyword is required")
    if not chains:
        raise ValueError("no chains to analyze")
    totals = {kw: 0 for kw in keywords}
    for chain in chains:
        response = chain.response_at(round)
        if response is None:
            raise ValueError(
                f"chain {chain.task_id}/{chain.chain_index} has no round {round}"
            )
        text = response.thinking + "\n" + response.answer
        for kw in keywords:
            totals[kw] += count_keyword(text, kw)
    return {kw: total / len(chains) for kw, total in totals.items()}


def length_stats(
    chains: Sequence[Chain],
    round: int,
    benchmark_of: Mapping[str, Benchmark],
) -> LengthStats:
    """Mean completion tokens at one round, per benchmark and overall.

    Per-benchmark means are rounded to one decimal; the overall figure is
    the rounded mean of those rounded values, mirroring how the accuracy
    average is displayed. fallback_fraction reports how many of the counts
    came from whitespace splitting rather than API usage data, since mixing
    the two sources skews comparisons.
    """
    token_counts: dict[str, list[int]] = {}
    fallbacks = 0
    total = 0
    for chain in chains:
        response = chain.response_at(round)
        if response is None:
            raise ValueError(
                f"chain {chain.task_id}/{chain.chain_index} has no round {round}"
            )
        benchmark = benchmark_of.get(chain.task_id)
        if benchmark is None:
            raise ValueError(f"no benchmark known for task {chain.task_id}")
        token_counts.setdefault(benchmark.value, []).append(response.completion_tokens)
        fallbacks += response.token_source is TokenSource.WHITESPACE_FALLBACK
        total += 1
    if not token_counts:
        raise ValueError("no chains to analyze")
    per_benchmark = {
        name: round_half_away_from_zero(fmean(counts))
        for name, counts in sorted(token_counts.items())
    }
    return LengthStats(
        per_benchmark=per_benchmark,
        overall=mean_rounded(per_benchmark.values()),
        fallback_fraction=fallbacks / total,
    )


def build_analysis(
    chains: Sequence[Chain],
    benchmark_of: Mapping[str, Benchmark],
    n_rounds: int,
    keywords: Sequence[str] = DEFAULT_KEYWORDS,
) -> dict[str, object]:
    """Full analysis document over complete chains, JSON-serializable.

    Contains per-round word frequencies and length statistics, and for each
    adjacent round pair the trajectory counts plus word frequencies within
    each trajectory group. Single-round runs get empty transition sections.
    """
    rounds = list(range(1, n_rounds + 1))
    doc: dict[str, object] = {
        "rounds": rounds,
        "keywords": list(keywords),
        "word_frequencies": {
            str(r): word_frequencies(chains, r, keywords) for r in rounds
        },
        "lengths": {
            str(r): length_stats(chains, r, benchmark_of).model_dump() for r in rounds
        },
        "transitions": {},
    }
    transitions: dict[str, object] = {}
    for round_a in rounds[:-1]:
        round_b = round_a + 1
        counts = classify_trajectories(chains, round_a, round_b)
        groups: dict[str, object] = {}
        for label in TrajectoryLabel:
            members = [
                c for c in chains if trajectory_label(c, round_a, round_b) is label
            ]
            if members:
                groups[label.value] = {
                    str(r): word_frequencies(members, r, keywords)
                    for r in (round_a, round_b)
                }
            else:
                groups[label.value] = {}
        transitions[f"{round_a}->{round_b}"] = {
            "counts": {label.value: n for label, n in counts.items()},
            "identity_score": identity_score(counts),
            "word_frequencies_by_group": groups,
        }
    doc["transitions"] = transitions
    return doc
