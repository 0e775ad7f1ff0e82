"""Pull tagged segments out of model responses."""

from __future__ import annotations

import re
from dataclasses import dataclass

KNOWN_TAGS = ("strategy", "task_instruction", "deduction", "final_answer")

_PATTERNS = {
    tag: re.compile(rf"<{tag}>((?:(?!<{tag}>|</{tag}>).)*)</{tag}>", re.DOTALL)
    for tag in KNOWN_TAGS
}


@dataclass(frozen=True)
class TaggedResponse:
    raw: str
    strategy: str | None = None
    task_instruction: str | None = None
    deduction: str | None = None
    final_answer: str | None = None


def extract(raw: str, tag: str) -> str | None:
    """Content of the last well-formed ``<tag>...</tag>`` pair, trimmed.

    A well-formed pair has no other opening or closing tag of the same name
    inside it. Matching is exact and case-sensitive. Returns None when no
    pair exists.
    """
    if tag not in KNOWN_TAGS:
        raise ValueError(f"unknown tag: {tag!r}")
    pattern = _PATTERNS[tag]
    last = None
    for last in pattern.finditer(raw):
        pass
    return None if last is None else last.group(1).strip()


def parse_response(raw: str) -> TaggedResponse:
    return TaggedResponse(raw=raw, **{tag: extract(raw, tag) for tag in KNOWN_TAGS})
