"""Meta-prompt templates and slot rendering.

Template texts live as UTF-8 files under ``template_files/`` and carry
positional ``{}`` / ``{ }`` markers exactly as printed. Each kind maps the
markers onto named slots so callers never deal with positions.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

SLOT_MARKER = re.compile(r"\{ ?\}")


class TemplateError(ValueError):
    pass


class MissingSlot(TemplateError):
    def __init__(self, name: str):
        super().__init__(f"missing required slot: {name}")
        self.name = name


class UnfilledSlot(TemplateError):
    pass


class EmptyPairs(TemplateError):
    pass


class TemplateKind(enum.Enum):
    STRATEGY_DESIGN = "strategy_design"
    INDUCT_BASELINE = "induct_baseline"
    STRATEGY_INDUCTION = "strategy_induction"
    INFERENCE_ZCOT = "inference_zcot"
    INFERENCE_SCOT = "inference_scot"
    INFERENCE_INDUCED = "inference_induced"

    @property
    def is_inference(self) -> bool:
        return self.value.startswith("inference_")


# Slot order follows marker order in each file.
_SLOTS: dict[TemplateKind, tuple[str, ...]] = {
    TemplateKind.STRATEGY_DESIGN: ("task_information", "answer_format", "question"),
    TemplateKind.INDUCT_BASELINE: ("task_information", "answer_format", "examples_block"),
    TemplateKind.STRATEGY_INDUCTION: ("task_information", "answer_format", "examples_block"),
    TemplateKind.INFERENCE_ZCOT: ("instruction", "answer_format"),
    TemplateKind.INFERENCE_SCOT: ("instruction", "answer_format"),
    TemplateKind.INFERENCE_INDUCED: ("instruction", "answer_format"),
}

# Inference prompts end with the new question and an answer cue.
_QUESTION_BLOCK = {
    TemplateKind.INFERENCE_ZCOT: "question_cot",
    TemplateKind.INFERENCE_SCOT: "question_cot",
    TemplateKind.INFERENCE_INDUCED: "question_induced",
}


@dataclass(frozen=True)
class SlotValues:
    task_information: str | None = None
    answer_format: str | None = None
    question: str | None = None
    examples_block: str | None = None
    instruction: str | None = None


@dataclass(frozen=True)
class PromptText:
    text: str
    slots_filled: tuple[str, ...] = field(default=())

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


@lru_cache(maxsize=None)
def template_text(name: str) -> str:
    """Raw fixture text for a template file stem (e.g. ``"inference_zcot"``)."""
    path = resources.files("strategy_induct") / "template_files" / f"{name}.txt"
    return path.read_text(encoding="utf-8").replace("\r\n", "\n")


def required_slots(kind: TemplateKind) -> tuple[str, ...]:
    slots = _SLOTS[kind]
    if kind.is_inference:
        slots = slots + ("question",)
    return slots


def _fill(template: str, values: Sequence[str]) -> str:
    pieces = SLOT_MARKER.split(template)
    if len(pieces) - 1 != len(values):
        raise UnfilledSlot(
            f"template has {len(pieces) - 1} markers but {len(values)} values were supplied"
        )
    out = [pieces[0]]
    for value, tail in zip(values, pieces[1:]):
        out.append(value)
        out.append(tail)
    return "".join(out)


def render(kind: TemplateKind, slots: SlotValues) -> PromptText:
    names = required_slots(kind)
    for name in names:
        if getattr(slots, name) is None:
            raise MissingSlot(name)

    text = _fill(template_text(kind.value), [getattr(slots, n) for n in _SLOTS[kind]])
    if kind.is_inference:
        block = _fill(template_text(_QUESTION_BLOCK[kind]), [slots.question])
        text = f"{text}\n\n{block}"
    return PromptText(text=text, slots_filled=names)


_PAIR_RE = re.compile(
    r"Question (\d+):\n<question>\n(.*?)\n</question>\nStrategy \1:\n<strategy>\n(.*?)\n</strategy>",
    re.DOTALL,
)
_QUESTION_RE = re.compile(r"Question (\d+):\n<question>\n(.*?)\n</question>", re.DOTALL)


def serialize_pairs(pairs: Sequence) -> str:
    """Join strategy-question pairs into the ``<examples>`` body.

    Accepts anything with ``question`` and ``strategy`` attributes. Blocks are
    numbered from 1 and separated by a blank line; input order is kept.
    """
    if not pairs:
        raise EmptyPairs("at least one strategy-question pair is required")
    blocks = [
        f"Question {i}:\n<question>\n{p.question}\n</question>\n"
        f"Strategy {i}:\n<strategy>\n{p.strategy}\n</strategy>"
        for i, p in enumerate(pairs, start=1)
    ]
    return "\n\n".join(blocks)


def parse_pairs(block: str) -> list[tuple[str, str]]:
    """Inverse of :func:`serialize_pairs`, returning ``(question, strategy)`` tuples."""
    return [(m.group(2), m.group(3)) for m in _PAIR_RE.finditer(block)]


def serialize_questions(questions: Sequence[str]) -> str:
    if not questions:
        raise EmptyPairs("at least one question is required")
    return "\n\n".join(
        f"Question {i}:\n<question>\n{q}\n</question>" for i, q in enumerate(questions, start=1)
    )


def parse_questions(block: str) -> list[str]:
    return [m.group(2) for m in _QUESTION_RE.finditer(block)]
