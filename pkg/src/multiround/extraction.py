"""Pulling a candidate final answer out of an answer segment.

Extraction never raises on messy input: anything unextractable is ``None``
and grading treats it as unverifiable. All extractors prefer the *last*
plausible occurrence, since models frequently restate intermediate values
before committing to a final one.
"""

from __future__ import annotations

import re

from .models import AnswerKind

_BOXED = "\\boxed{"

# A run of digits with optional sign, not embedded in a word, identifier, or
# decimal number. A trailing period is fine ("the answer is 42.") as long as
# no digit follows it.
_INT_TOKEN = re.compile(r"(?<![\w.])[-+]?\d+(?!\w)(?!\.\d)")

# Explicit answer statements take precedence over stray letters.
_CHOICE_STRONG = (
    re.compile(r"answer\s+is\s*:?\s*\*{0,2}\(?([A-D])\)?", re.IGNORECASE),
    re.compile(r"answer\s*:\s*\*{0,2}\(?([A-D])\)?", re.IGNORECASE),
    re.compile(r"option\s+\(?([A-D])\)?", re.IGNORECASE),
    re.compile(r"\(([A-D])\)"),
)
_CHOICE_BARE = re.compile(r"(?<![A-Za-z])([A-Da-d])(?![A-Za-z])")

_FENCED_BLOCK = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_boxed(answer: str) -> str | None:
    """Content of the last ``\\boxed{...}``, balancing nested braces.

    Only the final occurrence is considered; if its braces never balance the
    result is None rather than a fallback to an earlier occurrence.
    """
    start = answer.rfind(_BOXED)
    if start == -1:
        return None
    depth = 1
    chars: list[str] = []
    for ch in answer[start + len(_BOXED):]:
        if ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return "".join(chars)
        chars.append(ch)
    return None


def parse_integer(text: str) -> int | None:
    """Interpret text as one integer, tolerating spacing, commas, and x.0 forms."""
    cleaned = text.strip().strip("$").replace("\\,", "").replace(" ", "")
    if re.fullmatch(r"[-+]?\d{1,3}(,\d{3})+", cleaned):
        cleaned = cleaned.replace(",", "")
    try:
        return int(cleaned)
    except ValueError:
        pass
    try:
        value = float(cleaned)
    except (ValueError, OverflowError):
        return None
    if value.is_integer():
        return int(value)
    return None


def extract_final_answer(answer: str, kind: AnswerKind) -> str | None:
    """Extract the final answer candidate for the given answer kind.

    integer: boxed content when it parses as an integer, else the last
    standalone integer token anywhere in the answer, canonicalized.
    expression: boxed content, verbatim (normalization happens at verify
    time).
    choice: the last A-D letter, preferring explicit statements such as
    "the answer is C", "(C)", or "option C" over bare letters.
    code: the body of the last complete fenced code block.
    """
    if kind is AnswerKind.INTEGER:
        boxed = extract_boxed(answer)
        if boxed is not None:
            value = parse_integer(boxed)
            if value is not None:
                return str(value)
        return _last_integer_token(answer)
    if kind is AnswerKind.EXPRESSION:
        return extract_boxed(answer)
    if kind is AnswerKind.CHOICE:
        return _extract_choice(answer)
    return _extract_code(answer)


def _last_integer_token(text: str) -> str | None:
    last: str | None = None
    for match in _INT_TOKEN.finditer(text):
        last = match.group(0)
    if last is None:
        return None
    return str(int(last))


def _extract_choice(text: str) -> str | None:
    best_pos = -1
    best: str | None = None
    for pattern in _CHOICE_STRONG:
        for match in pattern.finditer(text):
            if match.start(1) > best_pos:
                best_pos = match.start(1)
                best = match.group(1)
    if best is not None:
        return best.upper()
    for match in _CHOICE_BARE.finditer(text):
        best = match.group(1)
    return best.upper() if best is not None else None


def _extract_code(text: str) -> str | None:
    last: str | None = None
    for match in _FENCED_BLOCK.finditer(text):
        last = match.group(1)
    if last is None:
        return None
    return last[:-1] if last.endswith("\n") else last
