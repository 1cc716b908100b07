"""Deciding whether an extracted answer matches the gold answer.

Every comparison returns a three-way verdict: correct, incorrect, or
unverifiable. Unverifiable covers missing extractions, unparseable values,
and code tasks without a configured checker; downstream accuracy metrics
count it the same as incorrect, but keeping it distinct preserves the
signal in stored records.
"""

from __future__ import annotations

import ast
import json
import logging
import math
import re
import subprocess
import threading

from .extraction import extract_final_answer, parse_integer
from .models import AnswerKind, Benchmark, TaskSpec, Verdict

log = logging.getLogger(__name__)

_FUNCTION_NAMES = frozenset(
    {"sqrt", "sin", "cos", "tan", "log", "ln", "exp", "abs", "min", "max"}
)
_FUNC_CALL = re.compile(r"([A-Za-z]+)\(")
_WORD = re.compile(r"[A-Za-z]+")

_CHOICES = frozenset("ABCD")

_REL_TOL = 1e-6


def normalize_expression(expr: str) -> str:
    """Reduce a LaTeX-ish expression to a canonical comparable string.

    Applied to both sides before comparison: strips layout commands
    (``\\left``, ``\\right``, thin spaces, dollar signs), keeps alphabetic
    ``\\text{...}`` content and drops the rest, rewrites ``\\frac{a}{b}``
    to ``(a)/(b)`` and ``\\sqrt{a}`` to ``sqrt(a)`` recursively, removes
    all whitespace, and lowercases known function names before an open
    parenthesis. The result is a fixed point of this function.
    """
    s = expr.strip()
    for junk in ("\\left", "\\right", "\\,", "\\;", "$"):
        s = s.replace(junk, "")
    s = _rewrite_latex(s)
    s = "".join(s.split())
    return _FUNC_CALL.sub(_lower_known_function, s)


def try_evaluate(normalized: str) -> float | None:
    """Numeric value of a normalized expression, or None when not evaluable.

    Only plain arithmetic, ``^``/``**`` powers, ``sqrt``, and ``pi`` are
    recognized; anything else (free variables, unsupported calls, syntax
    errors, non-finite results) yields None.
    """
    if not normalized:
        return None
    source = normalized.replace("^", "**")
    try:
        tree = ast.parse(source, mode="eval")
    except (SyntaxError, ValueError, MemoryError, RecursionError):
        return None
    try:
        value = _eval_node(tree.body)
    except (ArithmeticError, ValueError, RecursionError):
        return None
    # Negative bases with fractional exponents produce complex values.
    if not isinstance(value, float) or not math.isfinite(value):
        return None
    return value


def verify(
    extracted: str | None,
    gold: str,
    kind: AnswerKind,
    *,
    task_id: str = "",
    code_hook: "CodeVerifierHook | None" = None,
) -> Verdict:
    """Compare an extracted answer to gold under the rules for its kind."""
    if extracted is None:
        return Verdict.UNVERIFIABLE
    if kind is AnswerKind.INTEGER:
        extracted_value = parse_integer(extracted)
        if extracted_value is None:
            return Verdict.UNVERIFIABLE
        gold_value = parse_integer(gold)
        if gold_value is None:
            raise ValueError(f"gold {gold!r} is not an integer")
        return Verdict.CORRECT if extracted_value == gold_value else Verdict.INCORRECT
    if kind is AnswerKind.CHOICE:
        letter = _canonical_choice(extracted)
        if letter is None:
            return Verdict.UNVERIFIABLE
        return (
            Verdict.CORRECT
            if letter == gold.strip().upper()
            else Verdict.INCORRECT
        )
    if kind is AnswerKind.EXPRESSION:
        left = normalize_expression(extracted)
        right = normalize_expression(gold)
        if left == right:
            return Verdict.CORRECT
        lv = try_evaluate(left)
        rv = try_evaluate(right)
        if lv is not None and rv is not None:
            if math.isclose(lv, rv, rel_tol=_REL_TOL, abs_tol=0.0):
                return Verdict.CORRECT
        return Verdict.INCORRECT
    # code
    if code_hook is None:
        return Verdict.UNVERIFIABLE
    return code_hook.run(task_id, extracted, gold)


def grade_answer(
    task: TaskSpec,
    answer_text: str,
    code_hook: "CodeVerifierHook | None" = None,
) -> tuple[str | None, Verdict]:
    """Extract from an answer segment and verify against the task's gold.

    aime24 answers are integers in [0, 999] by construction, so an
    extraction outside that range is treated as a failed extraction
    (unverifiable) rather than a wrong answer.
    """
    extracted = extract_final_answer(answer_text, task.answer_kind)
    if (
        extracted is not None
        and task.benchmark is Benchmark.AIME24
        and task.answer_kind is AnswerKind.INTEGER
    ):
        value = parse_integer(extracted)
        if value is None or not 0 <= value <= 999:
            return extracted, Verdict.UNVERIFIABLE
    verdict = verify(
        extracted, task.gold, task.answer_kind, task_id=task.id, code_hook=code_hook
    )
    return extracted, verdict


class CodeVerifierHook:
    """External checker for code answers, invoked once per comparison.

    The configured shell command receives ``{"task_id", "extracted",
    "gold"}`` as JSON on stdin and reports through its exit status:
    0 correct, 1 incorrect, 2 unverifiable. Any other outcome (timeout,
    spawn failure, unexpected status) is unverifiable with a logged
    warning. At most ``max_concurrency`` invocations run at once.
    """

    def __init__(self, command: str, max_concurrency: int = 8, timeout: float = 60.0):
        if not command:
            raise ValueError("verifier command must be non-empty")
        self.command = command
        self.timeout = timeout
        self._slots = threading.Semaphore(max_concurrency)

    def run(self, task_id: str, extracted: str, gold: str) -> Verdict:
        payload = json.dumps(
            {"task_id": task_id, "extracted": extracted, "gold": gold}
        ).encode("utf-8")
        with self._slots:
            try:
                proc = subprocess.run(
                    self.command,
                    shell=True,
                    input=payload,
                    capture_output=True,
                    timeout=self.timeout,
                )
            except subprocess.TimeoutExpired:
                log.warning("verifier timed out after %.0fs for task %s", self.timeout, task_id)
                return Verdict.UNVERIFIABLE
            except OSError as exc:
                log.warning("verifier failed to start for task %s: %s", task_id, exc)
                return Verdict.UNVERIFIABLE
        if proc.returncode == 0:
            return Verdict.CORRECT
        if proc.returncode == 1:
            return Verdict.INCORRECT
        if proc.returncode != 2:
            log.warning(
                "verifier exited %d for task %s; treating as unverifiable",
                proc.returncode,
                task_id,
            )
        return Verdict.UNVERIFIABLE


def _rewrite_latex(s: str) -> str:
    """Recursively rewrite \\frac, \\sqrt, and \\text commands."""
    out: list[str] = []
    i = 0
    n = len(s)
    while i < n:
        if s[i] == "\\":
            handled, replacement, i_next = _try_command(s, i)
            if handled:
                out.append(replacement)
                i = i_next
                continue
        out.append(s[i])
        i += 1
    return "".join(out)


def _try_command(s: str, i: int) -> tuple[bool, str, int]:
    for name in ("\\dfrac", "\\tfrac", "\\frac"):
        if s.startswith(name, i):
            groups = _take_groups(s, i + len(name), 2)
            if groups is not None:
                (num, den), end = groups
                return True, f"({_rewrite_latex(num)})/({_rewrite_latex(den)})", end
            return False, "", i
    if s.startswith("\\sqrt", i):
        groups = _take_groups(s, i + len("\\sqrt"), 1)
        if groups is not None:
            (radicand,), end = groups
            return True, f"sqrt({_rewrite_latex(radicand)})", end
        return False, "", i
    if s.startswith("\\text", i):
        groups = _take_groups(s, i + len("\\text"), 1)
        if groups is not None:
            (inner,), end = groups
            word = inner.strip()
            return True, word if _WORD.fullmatch(word) else "", end
        return False, "", i
    return False, "", i


def _take_groups(s: str, i: int, count: int) -> tuple[tuple[str, ...], int] | None:
    """Parse ``count`` consecutive brace groups starting at ``i``, skipping
    whitespace between them. None when the groups are missing or unbalanced."""
    groups: list[str] = []
    for _ in range(count):
        while i < len(s) and s[i].isspace():
            i += 1
        if i >= len(s) or s[i] != "{":
            return None
        depth = 1
        j = i + 1
        while j < len(s):
            if s[j] == "{":
                depth += 1
            elif s[j] == "}":
                depth -= 1
                if depth == 0:
                    break
            j += 1
        if depth != 0:
            return None
        groups.append(s[i + 1 : j])
        i = j + 1
    return tuple(groups), i


def _lower_known_function(match: re.Match[str]) -> str:
    name = match.group(1)
    if name.lower() in _FUNCTION_NAMES:
        return name.lower() + "("
    return match.group(0)


def _canonical_choice(text: str) -> str | None:
    t = text.strip().upper()
    if t.startswith("(") and t.endswith(")"):
        t = t[1:-1].strip()
    t = t.rstrip(".").strip()
    if len(t) == 1 and t in _CHOICES:
        return t
    return None


_BIN_OPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a**b,
}


def _eval_node(node: ast.AST) -> float:
    if isinstance(node, ast.BinOp) and type(node.op) in _BIN_OPS:
        return _BIN_OPS[type(node.op)](_eval_node(node.left), _eval_node(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        value = _eval_node(node.operand)
        return value if isinstance(node.op, ast.UAdd) else -value
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.Name) and node.id == "pi":
        return math.pi
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id == "sqrt"
        and len(node.args) == 1
        and not node.keywords
    ):
        return math.sqrt(_eval_node(node.args[0]))
    raise ValueError(f"unsupported construct: {ast.dump(node)[:60]}")
