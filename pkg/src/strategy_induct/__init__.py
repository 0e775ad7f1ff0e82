"""Question-only task instruction induction via per-question strategies."""

from .datasets import QAItem, TaskSpec, build_cipher_tasks, load_tasks, rot_decode, rot_encode, sample_items
from .gateway import Completion, CompletionRequest, Gateway, MockBackend, ModelProfile, ResponseCache
from .pipeline import InducedPrompt, InferenceRecord, Method, StageConfig, StrategyPair, run_method
from .tags import extract, parse_response
from .templates import SlotValues, TemplateKind, render, serialize_pairs

__version__ = "0.1.0"

__all__ = [
    "QAItem", "TaskSpec", "build_cipher_tasks", "load_tasks", "rot_decode", "rot_encode", "sample_items",
    "Completion", "CompletionRequest", "Gateway", "MockBackend", "ModelProfile", "ResponseCache",
    "InducedPrompt", "InferenceRecord", "Method", "StageConfig", "StrategyPair", "run_method",
    "extract", "parse_response", "SlotValues", "TemplateKind", "render", "serialize_pairs",
]
