"""Teacher-output parsing and answer-containment rules.

A generation is accepted only when it carries complete question/answer
tags and a boxed answer whose content parses as a plain number or
fraction. Rejection is a value (None), not an error: the orchestrator's
resample loop treats it as one failed try.
"""

from __future__ import annotations

import re
from fractions import Fraction

QUESTION_RE = re.compile(r"<question>(.*?)</question>", re.DOTALL)
ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
BOXED_RE = re.compile(r"\\boxed\{([^{}]*)\}")


def parse_boxed_value(content: str) -> str | None:
    """Normalize boxed content to a canonical numeric string, or None."""
    text = content.strip()
    if not text:
        return None
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        try:
            value = Fraction(str(float(text)))
        except (ValueError, OverflowError):
            return None
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def parse_teacher_output(text: str) -> dict | None:
    """Extract a question/answer pair, or reject with None.

    Requires opening and closing question tags, opening and closing
    answer tags, a boxed answer inside the answer block, and boxed
    content that parses as a number.
    """
    question_match = QUESTION_RE.search(text)
    if question_match is None:
        return None
    answer_match = ANSWER_RE.search(text)
    if answer_match is None:
        return None
    boxed_match = BOXED_RE.search(answer_match.group(1))
    if boxed_match is None:
        return None
    value = parse_boxed_value(boxed_match.group(1))
    if value is None:
        return None
    question = question_match.group(1).strip()
    if not question:
        return None
    return {"question": question, "answer": value}


def answer_in_text(key: str, completion: str) -> bool:
    """Whitespace-stripped containment of the key in the raw completion."""
    needle = "".join(key.split())
    if not needle:
        return False
    haystack = "".join(completion.split())
    return needle in haystack
