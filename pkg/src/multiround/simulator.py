"""Closed-form and brute-force accuracy predictions for the two-state model.

Round accuracy follows the recurrence a(1) = p1, a(m+1) = a(m) * t_cc +
(1 - a(m)) * t_ic, which contracts toward the fixed point t_ic /
(1 - t_cc + t_ic) whenever that denominator is positive. The brute-force
enumerator exists purely as an independent oracle for the recurrence.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping

from .models import MockModelSpec, TrajectoryLabel

_BRUTE_FORCE_LIMIT = 20


@dataclass(frozen=True)
class TransitionEstimate:
    """Transition probabilities fitted from observed trajectory counts.

    A probability is None when its conditioning event never occurred
    (no correct first rounds for t_cc, none incorrect for t_ic).
    """

    t_cc: float | None
    t_ic: float | None


def expected_accuracy(spec: MockModelSpec, n_rounds: int) -> float:
    """Probability the round-n answer is correct, via the recurrence."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be at least 1")
    acc = spec.p1
    for _ in range(n_rounds - 1):
        acc = acc * spec.t_cc + (1.0 - acc) * spec.t_ic
    return acc


def accuracy_series(spec: MockModelSpec, n_rounds: int) -> list[float]:
    """Expected accuracy for every round from 1 through n_rounds."""
    if n_rounds < 1:
        raise ValueError("n_rounds must be at least 1")
    series = [spec.p1]
    for _ in range(n_rounds - 1):
        acc = series[-1]
        series.append(acc * spec.t_cc + (1.0 - acc) * spec.t_ic)
    return series


def brute_force_accuracy(spec: MockModelSpec, n_rounds: int) -> float:
    """Round-n accuracy by summing the probability of every correctness path.

    Exponential in n_rounds, so refuses beyond 20 rounds; uses exact float
    summation so it can serve as a 1e-12-tight oracle for the recurrence.
    """
    if n_rounds < 1:
        raise ValueError("n_rounds must be at least 1")
    if n_rounds > _BRUTE_FORCE_LIMIT:
        raise ValueError(
            f"brute force over {n_rounds} rounds would enumerate "
            f"2^{n_rounds} paths; limit is {_BRUTE_FORCE_LIMIT}"
        )
    terms = []
    for path in itertools.product((False, True), repeat=n_rounds):
        if not path[-1]:
            continue
        prob = spec.p1 if path[0] else 1.0 - spec.p1
        for prev, cur in zip(path, path[1:]):
            step = spec.t_cc if prev else spec.t_ic
            prob *= step if cur else 1.0 - step
        terms.append(prob)
    return math.fsum(terms)


def fixed_point(spec: MockModelSpec) -> float | None:
    """Limit of the accuracy recurrence, or None when every point is fixed.

    The denominator 1 - t_cc + t_ic vanishes only for t_cc=1, t_ic=0, where
    accuracy never moves and no single limit exists.
    """
    denominator = 1.0 - spec.t_cc + spec.t_ic
    if denominator == 0.0:
        return None
    return spec.t_ic / denominator


def fit_transitions(counts: Mapping[TrajectoryLabel, int]) -> TransitionEstimate:
    """Estimate t_cc and t_ic from trajectory counts between two rounds."""
    cc = counts.get(TrajectoryLabel.CC, 0)
    ci = counts.get(TrajectoryLabel.CI, 0)
    ic = counts.get(TrajectoryLabel.IC, 0)
    ii = counts.get(TrajectoryLabel.II, 0)
    if any(n < 0 for n in (cc, ci, ic, ii)):
        raise ValueError("trajectory counts must be non-negative")
    t_cc = cc / (cc + ci) if cc + ci else None
    t_ic = ic / (ic + ii) if ic + ii else None
    return TransitionEstimate(t_cc=t_cc, t_ic=t_ic)
