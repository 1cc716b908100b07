"""Rendering a run into a report bundle: markdown, CSV, and plot data.

Displayed numbers are rounded half away from zero to one decimal. The
average column is defined over the *rounded* per-benchmark scores, so the
markdown table and the CSV stay consistent: rounding the CSV's unrounded
average reproduces the markdown average exactly.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .analysis import DEFAULT_KEYWORDS, build_analysis
from .metrics import benchmark_round_score, round_half_away_from_zero
from .models import Benchmark, Chain

_MD_HEADER = "# Multi-round evaluation report"


@dataclass(frozen=True)
class ReportBundle:
    markdown: str
    csv: str
    plots: dict
    analysis: dict


def render_report(
    chains: Sequence[Chain],
    benchmark_of: Mapping[str, Benchmark],
    n_rounds: int,
    *,
    keywords: Sequence[str] = DEFAULT_KEYWORDS,
    note: str | None = None,
) -> ReportBundle:
    """Build the full report bundle from complete chains.

    ``note`` is surfaced as a warning banner, used when truncated chains
    were excluded and the scores cover only part of the run.
    """
    rounds = list(range(1, n_rounds + 1))
    by_benchmark: dict[str, list[Chain]] = {}
    for chain in chains:
        benchmark = benchmark_of.get(chain.task_id)
        if benchmark is None:
            raise ValueError(f"no benchmark known for task {chain.task_id}")
        by_benchmark.setdefault(benchmark.value, []).append(chain)
    names = sorted(by_benchmark)

    raw_scores: dict[str, dict[int, float]] = {
        name: {r: benchmark_round_score(group, r) for r in rounds}
        for name, group in by_benchmark.items()
    }
    rounded_scores = {
        name: {r: round_half_away_from_zero(score) for r, score in per_round.items()}
        for name, per_round in raw_scores.items()
    }
    # Exact mean of the rounded cells; its 1-decimal rounding is what the
    # markdown table displays.
    averages_exact = {
        r: _exact_mean([rounded_scores[name][r] for name in names]) for r in rounds
    } if names else {}
    averages_display = {
        r: round_half_away_from_zero(v) for r, v in averages_exact.items()
    }

    analysis = (
        build_analysis(chains, benchmark_of, n_rounds, keywords)
        if chains
        else {
            "rounds": [],
            "keywords": list(keywords),
            "word_frequencies": {},
            "lengths": {},
            "transitions": {},
        }
    )
    markdown = _render_markdown(
        names, rounds, rounded_scores, averages_display, analysis, note
    )
    csv_text = _render_csv(names, rounds, raw_scores, averages_exact)
    plots = {
        "accuracy": {
            "rounds": rounds,
            "series": {name: [raw_scores[name][r] for r in rounds] for name in names},
            "average": [averages_exact[r] for r in rounds] if names else [],
        },
        "word_frequencies": analysis["word_frequencies"],
        "lengths": analysis["lengths"],
        "transitions": {
            pair: data["counts"]
            for pair, data in analysis["transitions"].items()  # type: ignore[union-attr]
        },
    }
    return ReportBundle(markdown=markdown, csv=csv_text, plots=plots, analysis=analysis)


def write_report_bundle(reports_dir: Path, bundle: ReportBundle) -> list[Path]:
    """Write the bundle deterministically; same records, same bytes."""
    reports_dir.mkdir(parents=True, exist_ok=True)
    files = {
        "report.md": bundle.markdown,
        "scores.csv": bundle.csv,
        "plots.json": json.dumps(bundle.plots, sort_keys=True, indent=2) + "\n",
        "analysis.json": json.dumps(bundle.analysis, sort_keys=True, indent=2) + "\n",
    }
    written = []
    for name, content in files.items():
        path = reports_dir / name
        path.write_text(content, encoding="utf-8")
        written.append(path)
    return written


def _exact_mean(values: Sequence[float]) -> float:
    # One decimal digit in, exact decimal mean out (e.g. 77.95, never
    # 77.94999...), so the CSV column rounds cleanly to the displayed value.
    return float(sum(Decimal(str(v)) for v in values) / len(values))


def _render_markdown(
    names: Sequence[str],
    rounds: Sequence[int],
    rounded_scores: Mapping[str, Mapping[int, float]],
    averages: Mapping[int, float],
    analysis: Mapping[str, object],
    note: str | None,
) -> str:
    out = io.StringIO()
    out.write(_MD_HEADER + "\n")
    if note:
        out.write(f"\n> **Warning:** {note}\n")
    out.write("\n## Accuracy by round (pass@1, %)\n\n")
    if names:
        out.write("| Round | " + " | ".join(names) + " | Average |\n")
        out.write("|" + " --- |" * (len(names) + 2) + "\n")
        for r in rounds:
            cells = [f"{rounded_scores[name][r]:.1f}" for name in names]
            out.write(f"| {r} | " + " | ".join(cells) + f" | {averages[r]:.1f} |\n")
    else:
        out.write("No complete chains to score.\n")

    transitions = analysis.get("transitions") or {}
    if transitions:
        out.write("\n## Answer trajectories\n\n")
        out.write("| Rounds | CC | CI | IC | II | Correct at later round (%) |\n")
        out.write("|" + " --- |" * 6 + "\n")
        for pair in sorted(transitions):
            data = transitions[pair]
            counts = data["counts"]
            score = round_half_away_from_zero(data["identity_score"])
            out.write(
                f"| {pair} | {counts['CC']} | {counts['CI']} | {counts['IC']} | "
                f"{counts['II']} | {score:.1f} |\n"
            )

    lengths = analysis.get("lengths") or {}
    if lengths:
        out.write("\n## Completion length (tokens)\n\n")
        out.write("| Round | " + " | ".join(names) + " | Overall | Fallback counts |\n")
        out.write("|" + " --- |" * (len(names) + 3) + "\n")
        for r in rounds:
            stats = lengths[str(r)]
            cells = [
                _format_opt(stats["per_benchmark"].get(name)) for name in names
            ]
            out.write(
                f"| {r} | "
                + " | ".join(cells)
                + f" | {stats['overall']:.1f} | {stats['fallback_fraction']:.2%} |\n"
            )

    frequencies = analysis.get("word_frequencies") or {}
    if frequencies:
        keywords = analysis["keywords"]
        out.write("\n## Hedge-word frequency (mean occurrences per response)\n\n")
        out.write("| Round | " + " | ".join(keywords) + " |\n")
        out.write("|" + " --- |" * (len(keywords) + 1) + "\n")
        for r in rounds:
            per_round = frequencies[str(r)]
            cells = [f"{per_round[kw]:.2f}" for kw in keywords]
            out.write(f"| {r} | " + " | ".join(cells) + " |\n")
    return out.getvalue()


def _format_opt(value: float | None) -> str:
    return f"{value:.1f}" if value is not None else "-"


def _render_csv(
    names: Sequence[str],
    rounds: Sequence[int],
    raw_scores: Mapping[str, Mapping[int, float]],
    averages: Mapping[int, float],
) -> str:
    if not names:
        return "round,average\n"
    lines = ["round," + ",".join(names) + ",average"]
    for r in rounds:
        cells = [str(raw_scores[name][r]) for name in names]
        lines.append(f"{r}," + ",".join(cells) + f",{averages[r]}")
    return "\n".join(lines) + "\n"
