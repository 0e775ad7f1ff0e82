"""Strategy, induct and inference stages plus the three baselines."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from .datasets import QAItem, TaskSpec, sample_items, slugify
from .gateway import BudgetExceeded, CompletionRequest, Gateway, ModelProfile, atomic_write_text, prompt_digest
from .tags import extract
from .templates import SlotValues, TemplateKind, render, serialize_pairs, serialize_questions

log = logging.getLogger(__name__)

DEFAULT_N = 3
DEFAULT_SAMPLE_SIZE = 25
INDUCTION_SALT = "induct"
EVALUATION_SALT = "eval"


class PipelineError(RuntimeError):
    pass


class StrategyExtractionFailed(PipelineError):
    def __init__(self, item_id: str):
        super().__init__(f"no <strategy> block for item {item_id!r}")
        self.item_id = item_id


class InstructionExtractionFailed(PipelineError):
    pass


class ItemFailed(PipelineError):
    def __init__(self, item_id: str, cause: Exception):
        super().__init__(f"item {item_id!r}: {cause}")
        self.item_id = item_id
        self.cause = cause


class Method(str, enum.Enum):
    ZCOT = "zcot"
    SCOT = "scot"
    INDUCT = "induct"
    STRATEGY_INDUCT = "strategy_induct"

    @property
    def task_level(self) -> bool:
        return self in (Method.INDUCT, Method.STRATEGY_INDUCT)

    @property
    def inference_kind(self) -> TemplateKind:
        return {
            Method.ZCOT: TemplateKind.INFERENCE_ZCOT,
            Method.SCOT: TemplateKind.INFERENCE_SCOT,
            Method.INDUCT: TemplateKind.INFERENCE_INDUCED,
            Method.STRATEGY_INDUCT: TemplateKind.INFERENCE_INDUCED,
        }[self]


@dataclass(frozen=True)
class StrategyPair:
    question: str
    strategy: str


@dataclass(frozen=True)
class InducedPrompt:
    instruction: str
    task: str
    method: Method
    inducing_model: str
    n: int
    seed: int
    source_item_ids: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "method": self.method.value,
            "inducing_model": self.inducing_model,
            "n": self.n,
            "seed": self.seed,
            "source_item_ids": list(self.source_item_ids),
            "instruction": self.instruction,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "InducedPrompt":
        return cls(
            instruction=doc["instruction"],
            task=doc["task"],
            method=Method(doc["method"]),
            inducing_model=doc["inducing_model"],
            n=doc["n"],
            seed=doc["seed"],
            source_item_ids=tuple(doc["source_item_ids"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n"

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class InferenceRecord:
    task: str
    item_id: str
    method: Method
    inference_model: str
    inducing_model: str | None
    n: int | None
    prompt_digest: str
    raw_response: str
    final_answer: str | None
    correct: bool | None = None

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["method"] = self.method.value
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "InferenceRecord":
        doc = dict(doc)
        doc["method"] = Method(doc["method"])
        return cls(**doc)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), ensure_ascii=False, sort_keys=True)


@dataclass(frozen=True)
class StageConfig:
    n: int = DEFAULT_N
    seed: int = 0
    sample_size: int | None = DEFAULT_SAMPLE_SIZE
    extraction_retries: int = 1
    workers: int = 4
    temperature: float = 0.0
    top_p: float = 1.0


def _complete(gateway: Gateway, model: ModelProfile, prompt: str, cfg: StageConfig, attempt: int = 0) -> str:
    req = CompletionRequest(
        profile=model, prompt=prompt, temperature=cfg.temperature, top_p=cfg.top_p, attempt=attempt
    )
    return gateway.complete(req).text


def _complete_and_extract(
    gateway: Gateway, model: ModelProfile, prompt: str, tag: str, cfg: StageConfig
) -> str | None:
    for attempt in range(cfg.extraction_retries + 1):
        found = extract(_complete(gateway, model, prompt, cfg, attempt), tag)
        if found:
            return found
    return None


def induction_items(task: TaskSpec, n: int, seed: int) -> list[QAItem]:
    return sample_items(task, n, seed, salt=INDUCTION_SALT)


def evaluation_items(task: TaskSpec, sample_size: int | None, seed: int) -> list[QAItem]:
    """Evaluation subset in canonical id order; all items when the task is small."""
    if sample_size is None or sample_size >= len(task.items):
        chosen = list(task.items)
    else:
        chosen = sample_items(task, sample_size, seed, salt=EVALUATION_SALT)
    return sorted(chosen, key=lambda it: it.id)


def run_strategy_stage(
    task: TaskSpec,
    n: int,
    seed: int,
    model: ModelProfile,
    gateway: Gateway,
    cfg: StageConfig = StageConfig(),
) -> list[StrategyPair]:
    """One strategy per sampled question, in sampling order.

    Any question whose response lacks a ``<strategy>`` block (after the
    configured re-asks) aborts the stage, so the pair count is always ``n``.
    """
    items = induction_items(task, n, seed)

    def one(item: QAItem) -> StrategyPair:
        prompt = render(
            TemplateKind.STRATEGY_DESIGN,
            SlotValues(
                task_information=task.short_phrase,
                answer_format=task.answer_format,
                question=item.question,
            ),
        ).text
        strategy = _complete_and_extract(gateway, model, prompt, "strategy", cfg)
        if not strategy:
            raise StrategyExtractionFailed(item.id)
        return StrategyPair(question=item.question, strategy=strategy)

    with ThreadPoolExecutor(max_workers=max(1, min(cfg.workers, n))) as pool:
        return list(pool.map(one, items))


def run_induct_stage(
    task: TaskSpec,
    method: Method,
    model: ModelProfile,
    gateway: Gateway,
    *,
    pairs: Sequence[StrategyPair] = (),
    questions: Sequence[QAItem] = (),
    n: int,
    seed: int,
    cfg: StageConfig = StageConfig(),
) -> InducedPrompt:
    """Induce one task instruction.

    STRATEGY_INDUCT consumes strategy-question pairs; INDUCT consumes the
    example questions alone.
    """
    if method is Method.STRATEGY_INDUCT:
        if not pairs:
            raise PipelineError("strategy induction needs at least one strategy-question pair")
        kind, block = TemplateKind.STRATEGY_INDUCTION, serialize_pairs(pairs)
    elif method is Method.INDUCT:
        if not questions:
            raise PipelineError("instruction induction needs at least one question")
        kind, block = TemplateKind.INDUCT_BASELINE, serialize_questions([q.question for q in questions])
    else:
        raise PipelineError(f"{method.value} is an instance-level method and has no induct stage")

    prompt = render(
        kind,
        SlotValues(task_information=task.short_phrase, answer_format=task.answer_format, examples_block=block),
    ).text
    instruction = _complete_and_extract(gateway, model, prompt, "task_instruction", cfg)
    if not instruction:
        raise InstructionExtractionFailed(f"no <task_instruction> block for task {task.name!r}")
    return InducedPrompt(
        instruction=instruction,
        task=task.name,
        method=method,
        inducing_model=model.name,
        n=n,
        seed=seed,
        source_item_ids=tuple(q.id for q in questions),
    )


def induce(
    task: TaskSpec,
    method: Method,
    model: ModelProfile,
    gateway: Gateway,
    cfg: StageConfig = StageConfig(),
) -> InducedPrompt:
    questions = induction_items(task, cfg.n, cfg.seed)
    pairs: list[StrategyPair] = []
    if method is Method.STRATEGY_INDUCT:
        pairs = run_strategy_stage(task, cfg.n, cfg.seed, model, gateway, cfg)
    return run_induct_stage(
        task, method, model, gateway, pairs=pairs, questions=questions, n=cfg.n, seed=cfg.seed, cfg=cfg
    )


def inference_prompt(instruction: str, method: Method, question: str, answer_format: str) -> str:
    return render(
        method.inference_kind,
        SlotValues(instruction=instruction, answer_format=answer_format, question=question),
    ).text


def run_inference(
    instruction: str,
    method: Method,
    item: QAItem,
    task: TaskSpec,
    model: ModelProfile,
    gateway: Gateway,
    cfg: StageConfig = StageConfig(),
    induced: InducedPrompt | None = None,
) -> InferenceRecord:
    """Answer one question.

    Instance-level methods pass the Short Phrase as ``instruction``; task-level
    methods pass the induced instruction. A missing ``<final_answer>`` is kept
    as None and never re-asked.
    """
    prompt = inference_prompt(instruction, method, item.question, task.answer_format)
    raw = _complete(gateway, model, prompt, cfg)
    return InferenceRecord(
        task=task.name,
        item_id=item.id,
        method=method,
        inference_model=model.name,
        inducing_model=induced.inducing_model if induced else None,
        n=induced.n if induced else None,
        prompt_digest=prompt_digest(prompt),
        raw_response=raw,
        final_answer=extract(raw, "final_answer"),
    )


class PromptStore:
    """Induced prompts on disk, one JSON file per (task, method, inducing model, n, seed)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)

    def path(self, task: str, method: Method, inducing_model: str, n: int, seed: int) -> Path:
        name = f"{slugify(task)}__{method.value}__{slugify(inducing_model)}__n{n}__seed{seed}.json"
        return self.directory / name

    def get(self, task: str, method: Method, inducing_model: str, n: int, seed: int) -> InducedPrompt | None:
        p = self.path(task, method, inducing_model, n, seed)
        if not p.exists():
            return None
        return InducedPrompt.from_json(json.loads(p.read_text(encoding="utf-8")))

    def put(self, prompt: InducedPrompt) -> Path:
        p = self.path(prompt.task, prompt.method, prompt.inducing_model, prompt.n, prompt.seed)
        atomic_write_text(p, prompt.dumps())
        return p


@dataclass
class MethodRun:
    records: list[InferenceRecord]
    induced: InducedPrompt | None = None
    failures: list[ItemFailed] = field(default_factory=list)


def obtain_induced(
    task: TaskSpec,
    method: Method,
    inducing_model: ModelProfile,
    gateway: Gateway,
    cfg: StageConfig,
    store: PromptStore | None = None,
) -> InducedPrompt:
    if store is not None:
        found = store.get(task.name, method, inducing_model.name, cfg.n, cfg.seed)
        if found is not None:
            return found
    prompt = induce(task, method, inducing_model, gateway, cfg)
    if store is not None:
        store.put(prompt)
    return prompt


def run_method(
    method: Method,
    task: TaskSpec,
    inducing_model: ModelProfile | None,
    inference_model: ModelProfile,
    gateway: Gateway,
    cfg: StageConfig = StageConfig(),
    store: PromptStore | None = None,
) -> MethodRun:
    """All evaluated items of one task under one method.

    Task-level methods induce once (or reuse ``store``) and share the
    instruction across items. Item failures are collected, not raised;
    induction failures propagate.
    """
    induced = None
    if method.task_level:
        if inducing_model is None:
            raise PipelineError(f"{method.value} needs an inducing model")
        induced = obtain_induced(task, method, inducing_model, gateway, cfg, store)
        instruction = induced.instruction
    else:
        instruction = task.short_phrase

    items = evaluation_items(task, cfg.sample_size, cfg.seed)

    def one(item: QAItem):
        try:
            return run_inference(instruction, method, item, task, inference_model, gateway, cfg, induced)
        except BudgetExceeded:
            raise
        except Exception as exc:  # fail-soft per item
            log.warning("inference failed for %s/%s: %s", task.name, item.id, exc)
            return ItemFailed(item.id, exc)

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
        results = list(pool.map(one, items))

    records = [r for r in results if isinstance(r, InferenceRecord)]
    failures = [r for r in results if isinstance(r, ItemFailed)]
    records.sort(key=lambda r: r.item_id)
    return MethodRun(records=records, induced=induced, failures=failures)
