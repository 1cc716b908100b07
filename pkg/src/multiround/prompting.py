"""Prompt construction for re-answer rounds and splitting of model output.

The round-n prompt format is fixed: the original user prompt, a single
newline, then a sentence quoting the previous answer inside ``<answer>``
tags and asking the model to re-answer. Byte-exact stability of this
format matters because cached records are matched against rebuilt prompts.
"""

from __future__ import annotations

_REANSWER_TEMPLATE = (
    "The assistant's previous answer is: <answer> {answer} </answer>, "
    "and please re-answer."
)

_THINK_OPEN = "<think>"
_THINK_CLOSE = "</think>"


def build_round_prompt(user_prompt: str, prev_answer: str | None = None) -> str:
    """Return the prompt for a round: round 1 if ``prev_answer`` is None.

    Round 1 is the user prompt unchanged. Later rounds append exactly one
    newline plus the re-answer instruction quoting the previous answer.

    >>> build_round_prompt("Q")
    'Q'
    >>> build_round_prompt("Q", "4")
    "Q\\nThe assistant's previous answer is: <answer> 4 </answer>, and please re-answer."
    """
    if not user_prompt:
        raise ValueError("user_prompt must be non-empty")
    if prev_answer is None:
        return user_prompt
    return user_prompt + "\n" + _REANSWER_TEMPLATE.format(answer=prev_answer)


def split_thinking(raw: str) -> tuple[str, str]:
    """Split raw output into (thinking, answer) at the last ``</think>``.

    Text before the last closing tag is the thinking segment, with a single
    leading ``<think>`` stripped if present; text after it is the answer.
    Both segments are whitespace-trimmed. Output with no closing tag is all
    answer and no thinking.
    """
    idx = raw.rfind(_THINK_CLOSE)
    if idx == -1:
        return "", raw.strip()
    head = raw[:idx].strip()
    if head.startswith(_THINK_OPEN):
        head = head[len(_THINK_OPEN):]
    return head.strip(), raw[idx + len(_THINK_CLOSE):].strip()
