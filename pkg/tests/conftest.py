import hashlib
import re

import pytest

from strategy_induct.datasets import QAItem, TaskSpec
from strategy_induct.gateway import CostLedger, Gateway, MockBackend, ResponseCache, mock_profile

_QUESTION = re.compile(r"\[Question\]\n(.*?)\n\[Answer\]", re.DOTALL)
_STRATEGY_Q = re.compile(r"<question>\n(.*?)\n</question>\Z", re.DOTALL)
_SUM = re.compile(r"What is (\d+) \+ (\d+)\?")


def _h(text: str) -> int:
    return int(hashlib.sha256(text.encode()).hexdigest(), 16)


def responder(req) -> str:
    """Deterministic stand-in model: strategies, instructions and arithmetic answers.

    Answers are wrong for roughly a third of prompts, keyed on the prompt hash,
    so different methods get different but reproducible accuracies.
    """
    prompt = req.prompt
    if prompt.startswith("You are tasked with designing a strategy"):
        q = _STRATEGY_Q.search(prompt).group(1)
        return f"Plan:\n<strategy>\nStep 1: Parse '{q}'.\nStep 2: Add the numbers.\n</strategy>"
    if "<task_instruction>\n{Your task instruction" in prompt:
        tag = _h(prompt + req.profile.model_name) % 10_000
        return (
            "<task_instruction>\n### Task Content:\nAdd two integers.\n"
            f"### Operational Steps:\n1. Read both numbers.\n2. Add them. (variant {tag})\n"
            "</task_instruction>"
        )
    m = _QUESTION.search(prompt)
    if m:
        s = _SUM.search(m.group(1))
        answer = int(s.group(1)) + int(s.group(2)) if s else 0
        if _h(prompt + req.profile.model_name) % 3 == 0:
            answer += 1
        return f"<deduction>\nAdding.\n</deduction>\n<final_answer>\n{answer}\n</final_answer>"
    return "unrecognised prompt"


def synthetic_task(name: str, m: int = 25, with_gold: bool = True, seed: int = 0) -> TaskSpec:
    items = []
    for i in range(m):
        x, y = (i * 7 + seed * 13) % 50, (i * 11 + seed * 5) % 40
        items.append(QAItem(id=f"{name}-{i:03d}", question=f"What is {x} + {y}?", gold=str(x + y) if with_gold else None))
    return TaskSpec(task=name, short_phrase="Integer Addition", answer_format="a single integer",
                    match_policy="numeric", items=tuple(items))


@pytest.fixture
def mock_backend():
    return MockBackend(responder=responder)


@pytest.fixture
def gateway(tmp_path, mock_backend):
    return Gateway(backends={"mock": mock_backend}, cache=ResponseCache(tmp_path / "cache"), ledger=CostLedger())


@pytest.fixture
def model():
    return mock_profile("mock-a")


_acceptance_lines: list[str] = []


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    for key, value in report.user_properties:
        if key == "criterion":
            status = "PASS" if report.passed else "FAIL"
            _acceptance_lines.append(f"[{status}] {value}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda l: int(l.split("#")[1].split(" ")[0])):
            terminalreporter.write_line(line)
