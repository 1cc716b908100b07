"""Release gate: ten end-to-end checks, one printed verdict line each.

Every test announces its outcome on the real terminal (bypassing pytest's
capture) as ``[acceptance NN] PASS/FAIL <what was checked>`` so the gate is
scannable even under quiet output. The whole module runs offline and in
well under a minute.
"""

from __future__ import annotations

import doctest
import json
import math
import random
import threading
import time
from contextlib import contextmanager
from decimal import Decimal
from pathlib import Path

import httpx
import pytest

import multiround.prompting as prompting
from multiround.analysis import classify_trajectories, identity_score, length_stats
from multiround.backends import OpenAICompatibleClient
from multiround.config import parse_config
from multiround.extraction import extract_boxed, extract_final_answer
from multiround.metrics import global_average
from multiround.models import (
    AnswerKind,
    Benchmark,
    Chain,
    MockModelSpec,
    RoundResponse,
    SftRecord,
    TokenSource,
    TrajectoryLabel,
    Verdict,
)
from multiround.orchestrator import build_backend, execute_run, resume_run
from multiround.prompting import build_round_prompt
from multiround.sftgen import run_sft_generation
from multiround.simulator import accuracy_series, brute_force_accuracy, expected_accuracy
from multiround.store import RunStore
from multiround.verification import normalize_expression, verify

from helpers import ExplodingBackend, integer_tasks, write_dataset


@contextmanager
def announced(capsys, number: int, description: str):
    """Print one PASS/FAIL line per check, visible through pytest capture."""
    ok = False
    try:
        yield
        ok = True
    finally:
        with capsys.disabled():
            status = "PASS" if ok else "FAIL"
            print(f"[acceptance {number:02d}] {status} {description}", flush=True)


def mock_config_doc(dataset: Path, mock: dict, sampling: dict) -> dict:
    return {
        "dataset": str(dataset),
        "backend": {"type": "mock", "mock": mock},
        "sampling": sampling,
        "concurrency": 8,
    }


# --- 1: the re-answer prompt template, byte for byte ---------------------

ROUND2_GOLDEN = (
    b"Q\nThe assistant's previous answer is: <answer> 4 </answer>, "
    b"and please re-answer."
)


def test_01_round_prompt_template_is_byte_exact(capsys):
    with announced(capsys, 1, "re-answer prompt template is byte-exact"):
        built = build_round_prompt("Q", "4").encode("utf-8")
        assert built == ROUND2_GOLDEN

        examples = [
            example
            for test in doctest.DocTestFinder().find(prompting)
            for example in test.examples
        ]
        assert len(examples) >= 2
        documented = eval(examples[1].want.strip())  # noqa: S307 - our own docstring
        assert documented.encode("utf-8") == ROUND2_GOLDEN

        failures, _ = doctest.testmod(prompting, verbose=False)
        assert failures == 0


# --- 2: benchmark-average arithmetic over four-score rows ----------------

# Each row: four benchmark scores and the one-decimal average they must
# reproduce. Row four averages to exactly 77.95 and is the reason ties
# round half away from zero instead of to even.
ACCURACY_ROWS = [
    ((79.7, 97.6, 74.0, 65.3), 79.2),
    ((82.0, 97.6, 74.8, 67.1), 80.4),
    ((80.3, 97.2, 65.9, 63.0), 76.6),
    ((82.1, 97.8, 67.2, 64.7), 78.0),
    ((82.8, 97.8, 67.5, 65.2), 78.3),
    ((83.1, 97.7, 68.1, 66.0), 78.7),
    ((72.0, 96.0, 60.1, 57.0), 71.3),
    ((75.1, 96.3, 61.3, 57.6), 72.6),
    ((56.9, 93.4, 49.2, 35.0), 58.6),
    ((58.4, 93.9, 49.4, 36.7), 59.6),
    ((72.8, 96.2, 62.3, 58.3), 72.4),
    ((76.7, 97.2, 62.8, 60.2), 74.2),
]


def test_02_global_average_reproduces_reference_rows(capsys):
    with announced(
        capsys, 2, "global average reproduces all twelve reference score rows"
    ):
        for cells, expected in ACCURACY_ROWS:
            assert global_average(cells) == expected, (cells, expected)


# --- 3: completion-length aggregation and round-over-round deltas --------

LENGTH_CELLS = {
    1: {"aime24": 13566.1, "math500": 8489.9, "gpqa_diamond": 13860.5, "livecodebench": 4473.0},
    2: {"aime24": 9607.9, "math500": 5540.4, "gpqa_diamond": 11043.9, "livecodebench": 3200.9},
    3: {"aime24": 8630.0, "math500": 5287.7, "gpqa_diamond": 10368.0, "livecodebench": 3012.7},
    4: {"aime24": 8654.8, "math500": 4948.0, "gpqa_diamond": 9674.5, "livecodebench": 2920.8},
}
LENGTH_OVERALL = {1: 10097.4, 2: 7348.3, 3: 6824.6, 4: 6549.5}


def length_fixture_chains() -> tuple[list[Chain], dict[str, Benchmark]]:
    """Ten chains per benchmark whose token means equal the cells exactly.

    Token counts are integers, so each one-decimal mean is realized by
    spreading the exact total over ten chains.
    """
    chains: list[Chain] = []
    benchmark_of: dict[str, Benchmark] = {}
    for name in LENGTH_CELLS[1]:
        for index in range(10):
            rounds = []
            for round_no in range(1, 5):
                total = int(Decimal(str(LENGTH_CELLS[round_no][name])) * 10)
                base, rem = divmod(total, 10)
                tokens = base + (1 if index < rem else 0)
                rounds.append(
                    RoundResponse(
                        round=round_no,
                        prompt_used="p",
                        raw="r",
                        thinking="t",
                        answer="1",
                        extracted="1",
                        completion_tokens=tokens,
                        token_source=TokenSource.API_USAGE,
                        verdict=Verdict.CORRECT,
                    )
                )
            task_id = f"{name}-{index}"
            benchmark_of[task_id] = Benchmark(name)
            chains.append(Chain(task_id=task_id, chain_index=0, rounds=tuple(rounds)))
    return chains, benchmark_of


def test_03_length_aggregation_matches_reference_means(capsys):
    with announced(
        capsys, 3, "length aggregation reproduces reference round means and deltas"
    ):
        chains, benchmark_of = length_fixture_chains()
        overall: dict[int, float] = {}
        for round_no in range(1, 5):
            stats = length_stats(chains, round_no, benchmark_of)
            assert stats.per_benchmark == LENGTH_CELLS[round_no]
            assert stats.overall == LENGTH_OVERALL[round_no]
            assert stats.fallback_fraction == 0.0
            overall[round_no] = stats.overall
        deltas = {
            r: Decimal(str(overall[r])) - Decimal(str(overall[r + 1]))
            for r in (1, 2, 3)
        }
        assert deltas[1] == Decimal("2749.1")
        assert deltas[2] == Decimal("523.7")
        assert deltas[3] == Decimal("275.1")


# --- 4: closed-form accuracy versus brute-force enumeration --------------


def test_04_expected_accuracy_equals_brute_force(capsys):
    with announced(
        capsys,
        4,
        "closed-form accuracy equals brute-force enumeration (200 specs, n<=12)",
    ):
        rng = random.Random(20250825)
        for _ in range(200):
            spec = MockModelSpec(
                p1=rng.random(), t_cc=rng.random(), t_ic=rng.random()
            )
            for n_rounds in range(1, 13):
                closed = expected_accuracy(spec, n_rounds)
                enumerated = brute_force_accuracy(spec, n_rounds)
                assert abs(closed - enumerated) <= 1e-12, (spec, n_rounds)


# --- 5 and 6: a real mock run against the two-state process --------------

CONVERGENCE_SPEC = MockModelSpec(p1=0.6, t_cc=0.95, t_ic=0.3, seed=13)
CONVERGENCE_TASKS = 200
CONVERGENCE_CHAINS_PER_TASK = 8
CONVERGENCE_ROUNDS = 4


@pytest.fixture(scope="module")
def convergence_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("convergence")
    dataset = write_dataset(root / "tasks.jsonl", integer_tasks(CONVERGENCE_TASKS))
    config = parse_config(
        mock_config_doc(
            dataset,
            {"p1": 0.6, "t_cc": 0.95, "t_ic": 0.3, "seed": 13},
            {
                "samples_per_task": CONVERGENCE_CHAINS_PER_TASK,
                "n_rounds": CONVERGENCE_ROUNDS,
            },
        )
    )
    summary = execute_run(config, run_dir=root / "run", run_id="conv", created_at=0.0)
    chains = RunStore.open(root / "run").chains()
    return summary, chains


def test_05_mock_run_tracks_recurrence_within_three_se(capsys, convergence_run):
    with announced(
        capsys,
        5,
        "mock run scores stay within 3 SE of the recurrence; identity holds exactly",
    ):
        summary, chains = convergence_run
        n_chains = CONVERGENCE_TASKS * CONVERGENCE_CHAINS_PER_TASK
        assert len(chains) == n_chains
        assert summary.completed

        expected = accuracy_series(CONVERGENCE_SPEC, CONVERGENCE_ROUNDS)
        assert expected == pytest.approx([0.6, 0.69, 0.7485, 0.786525])
        for round_no, target in zip(range(1, 5), expected):
            se = math.sqrt(target * (1 - target) / n_chains)
            observed = summary.scores["math500"][round_no] / 100.0
            assert abs(observed - target) <= 3 * se, (round_no, observed, target)

        counts = classify_trajectories(chains, 1, 2)
        correct_late = sum(
            chain.response_at(2).verdict is Verdict.CORRECT for chain in chains
        )
        correct_both = sum(
            chain.response_at(1).verdict is Verdict.CORRECT
            and chain.response_at(2).verdict is Verdict.CORRECT
            for chain in chains
        )
        assert counts[TrajectoryLabel.CC] == correct_both
        assert counts[TrajectoryLabel.IC] == correct_late - correct_both
        assert identity_score(counts) == 100.0 * correct_late / n_chains


def test_06_trajectory_labels_partition_chains(capsys, convergence_run):
    with announced(
        capsys, 6, "trajectory labels partition chains for every adjacent round pair"
    ):
        _, chains = convergence_run
        for round_a in range(1, CONVERGENCE_ROUNDS):
            counts = classify_trajectories(chains, round_a, round_a + 1)
            assert set(counts) == set(TrajectoryLabel)
            assert sum(counts.values()) == len(chains)


# --- 7: interruption and resume leave identical bytes behind -------------


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        str(path.relative_to(root)): path.read_bytes()
        for path in sorted(root.rglob("*"))
        if path.is_file()
    }


def test_07_interrupted_run_resumes_byte_identical(capsys, tmp_path):
    with announced(
        capsys, 7, "interrupted run resumes to byte-identical store and reports"
    ):
        dataset = write_dataset(tmp_path / "tasks.jsonl", integer_tasks(12))
        config = parse_config(
            mock_config_doc(
                dataset,
                {"p1": 0.6, "t_cc": 0.95, "t_ic": 0.3, "seed": 7},
                {"samples_per_task": 2, "n_rounds": 3},
            )
        )

        baseline = tmp_path / "baseline"
        summary = execute_run(config, run_dir=baseline, run_id="gate", created_at=0.0)
        assert summary.completed

        interrupted = tmp_path / "interrupted"
        exploding = ExplodingBackend(build_backend(config), allowed=20)
        with pytest.raises(RuntimeError):
            execute_run(
                config,
                run_dir=interrupted,
                run_id="gate",
                created_at=0.0,
                backend=exploding,
            )
        partial = RunStore.open(interrupted).count()
        assert 0 < partial < summary.record_count

        resumed = resume_run(interrupted, config=config)
        assert resumed.completed
        assert resumed.record_count == summary.record_count
        assert tree_bytes(baseline) == tree_bytes(interrupted)


# --- 8: extraction and normalization properties ---------------------------

NORMALIZE_CORPUS = [
    "\\frac{3}{4}",
    "\\frac{1}{x^{2}}",
    "\\dfrac{a+b}{c-d}",
    "\\tfrac{22}{7}",
    "\\sqrt{2}",
    "\\sqrt{\\frac{1}{2}}",
    "\\frac{\\sqrt{2}}{2}",
    "12\\text{ cm}",
    "\\text{hello world}",
    "\\left(\\frac{1}{2}, 3\\right)",
    "x \\, + \\; y",
    "$\\frac{5}{8}$",
    "SIN(x) + COS(y)",
    "\\frac{\\frac{1}{2}}{\\frac{3}{4}}",
    "2^{10} - 24",
    "0.75",
    "-3/8",
    "\\pi r^2",
    "e^{i\\pi}",
    "\\frac12",
    "\\sqrt[3]{8}",
    "1,000,000",
    "  spaced   out  ",
    "",
]


def balanced(segment: str) -> bool:
    depth = 0
    for char in segment:
        if char == "{":
            depth += 1
        elif char == "}":
            depth -= 1
            if depth < 0:
                return False
    return depth == 0


def oracle_boxed(text: str) -> str | None:
    """Brute-force reference: try every candidate end for the last marker."""
    marker = "\\boxed{"
    start = text.rfind(marker)
    if start == -1:
        return None
    body = text[start + len(marker):]
    for end in range(len(body)):
        if body[end] == "}" and balanced(body[:end]):
            return body[:end]
    return None


def nested_payload(rng: random.Random, depth: int) -> str:
    if depth == 0:
        return rng.choice(["7", "x", "", "a+b", "\\frac{1}{2}"])
    left = rng.choice(["", "pre ", "{unclosed "])
    right = rng.choice(["", " post", "} extra"])
    return left + "{" + nested_payload(rng, depth - 1) + "}" + right


def test_08_extraction_and_normalization_properties(capsys):
    with announced(
        capsys,
        8,
        "boxed fuzz matches oracle; normalization idempotent; 3/4 == 0.75",
    ):
        rng = random.Random(8873)
        for _ in range(400):
            pieces = []
            for _ in range(rng.randint(1, 3)):
                if rng.random() < 0.35:
                    pieces.append(
                        rng.choice(["x+y", "see \\boxed", "{", "}", "42", ""])
                    )
                else:
                    depth = rng.randint(0, 6)
                    pieces.append("\\boxed{" + nested_payload(rng, depth) + "}")
            text = " ".join(pieces)
            assert extract_boxed(text) == oracle_boxed(text), repr(text)

        for expr in NORMALIZE_CORPUS:
            once = normalize_expression(expr)
            assert normalize_expression(once) == once, repr(expr)

        assert verify("\\frac{3}{4}", "0.75", AnswerKind.EXPRESSION) is Verdict.CORRECT


# --- 9: verified-data yield follows the generating process ---------------


def test_09_sft_yield_matches_process_law(capsys, tmp_path):
    with announced(
        capsys,
        9,
        "verified-data yield within 3 sigma of 0.875; every record re-verifies",
    ):
        tasks = integer_tasks(2000)
        dataset = write_dataset(tmp_path / "tasks.jsonl", tasks)
        config = parse_config(
            mock_config_doc(
                dataset,
                {"p1": 0.5, "t_cc": 0.9, "t_ic": 0.5, "seed": 5},
                {"samples_per_task": 1, "n_rounds": 3},
            )
        )
        out = tmp_path / "sft.jsonl"
        summary = run_sft_generation(
            config, 3, out, run_dir=tmp_path / "sft-run", run_id="sft", created_at=0.0
        )

        # With three tries at 0.5 each, a task yields unless all three miss.
        target = 1 - (1 - 0.5) * (1 - 0.5) * (1 - 0.5)
        assert target == 0.875
        sigma = math.sqrt(target * (1 - target) / len(tasks))
        assert abs(summary.yield_fraction - target) <= 3 * sigma

        by_id = {task.id: task for task in tasks}
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == summary.emitted
        for line in lines:
            record = SftRecord(**json.loads(line))
            task = by_id[record.task_id]
            extracted = extract_final_answer(record.answer, task.answer_kind)
            assert verify(extracted, task.gold, task.answer_kind) is Verdict.CORRECT


# --- 10: live-client contract against a fake transport --------------------


def test_10_live_client_contract_offline(capsys, tmp_path, monkeypatch):
    with announced(
        capsys,
        10,
        "in-flight bound respected, 429s retried with backoff, one record per key",
    ):
        monkeypatch.setenv("OPENAI_API_KEY", "gate-key")
        tasks = integer_tasks(6)
        dataset = write_dataset(tmp_path / "tasks.jsonl", tasks)
        config = parse_config(
            {
                "dataset": str(dataset),
                "backend": {
                    "type": "live",
                    "base_url": "http://gate.invalid/v1",
                    "model": "live-model",
                },
                "sampling": {"samples_per_task": 2, "n_rounds": 2},
                "concurrency": 8,
            }
        )

        lock = threading.Lock()
        state = {"in_flight": 0, "peak": 0, "total": 0, "rate_limits_left": 2}

        def handler(request: httpx.Request) -> httpx.Response:
            with lock:
                state["total"] += 1
                state["in_flight"] += 1
                state["peak"] = max(state["peak"], state["in_flight"])
                rate_limited = state["rate_limits_left"] > 0
                if rate_limited:
                    state["rate_limits_left"] -= 1
            try:
                if rate_limited:
                    return httpx.Response(429, json={"error": "slow down"})
                time.sleep(0.004)
                return httpx.Response(
                    200,
                    json={
                        "choices": [
                            {
                                "message": {
                                    "content": (
                                        "<think>\nreasoning\n</think>\n"
                                        "The final answer is $\\boxed{5}$."
                                    )
                                },
                                "finish_reason": "stop",
                            }
                        ],
                        "usage": {"completion_tokens": 11},
                    },
                )
            finally:
                with lock:
                    state["in_flight"] -= 1

        delays: list[float] = []
        client = OpenAICompatibleClient(
            "http://gate.invalid/v1",
            "live-model",
            api_key="gate-key",
            max_in_flight=3,
            transport=httpx.MockTransport(handler),
            sleeper=delays.append,
            rng=random.Random(11),
        )
        run_dir = tmp_path / "run"
        summary = execute_run(
            config, run_dir=run_dir, run_id="live", created_at=0.0, backend=client
        )

        expected_records = len(tasks) * 2 * 2
        assert summary.completed
        assert summary.record_count == expected_records
        assert state["total"] == expected_records + 2
        assert state["peak"] <= 3
        assert state["peak"] >= 2

        assert len(delays) == 2
        # Attempt zero stays in [0.5, 1.0); a same-request second retry
        # would land in [1.0, 2.0). Either way growth stays bounded.
        assert all(0.5 <= delay < 2.0 for delay in delays)
        assert min(delays) < 1.0

        identities = RunStore.open(run_dir).cache_identities()
        assert len(identities) == expected_records
        assert len(set(identities)) == expected_records
