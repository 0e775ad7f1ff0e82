"""Answer matching, accuracy and the comparison aggregates.

Accuracies are kept as exact fractions. Percentages are rounded to two
decimals (half-up) only when rendered or when settings are compared, which
is the precision the published tables use.
"""

from __future__ import annotations

import csv
import enum
import io
import re
from collections import OrderedDict
from dataclasses import dataclass, replace
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

from .datasets import TaskSpec
from .pipeline import InferenceRecord


class EvaluationError(ValueError):
    pass


class MissingGold(EvaluationError):
    pass


class MisalignedSettings(EvaluationError):
    pass


class MissingCell(EvaluationError):
    pass


class MissingBaseline(EvaluationError):
    pass


class MatchPolicy(str, enum.Enum):
    OPTION_LETTER = "option"
    EXACT_NORMALIZED = "exact"
    NUMERIC_TOLERANT = "numeric"


_OPTION_RE = re.compile(r"^\(?([A-Za-z])\)?(?=$|[\s.:,)\]])")
_GOLD_OPTION_RE = re.compile(r"^\(?[A-Z]\)?$")
_NUMBER_RE = re.compile(r"^[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$")


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def _option_letter(text: str) -> str | None:
    m = _OPTION_RE.match(text.strip())
    return m.group(1).casefold() if m else None


def _number(text: str) -> float | None:
    cleaned = text.strip().replace(",", "").rstrip(".")
    if not _NUMBER_RE.match(cleaned):
        return None
    return float(cleaned)


def match_answer(
    extracted: str | None,
    gold: str,
    policy: MatchPolicy = MatchPolicy.EXACT_NORMALIZED,
    epsilon: float = 1e-6,
) -> bool:
    if not gold:
        raise EvaluationError("gold answer must be non-empty")
    if extracted is None:
        return False
    policy = MatchPolicy(policy)
    if policy is MatchPolicy.OPTION_LETTER:
        got, want = _option_letter(extracted), _option_letter(gold)
        if got is None or want is None:
            return _normalize(extracted) == _normalize(gold)
        return got == want
    if policy is MatchPolicy.NUMERIC_TOLERANT:
        got, want = _number(extracted), _number(gold)
        if got is None or want is None:
            return False
        return abs(got - want) <= epsilon
    return _normalize(extracted) == _normalize(gold)


def resolve_policy(task: TaskSpec) -> MatchPolicy:
    """Per-task override, else option letters for multiple choice, else exact."""
    if task.match_policy:
        return MatchPolicy(task.match_policy)
    golds = [it.gold for it in task.items if it.gold]
    if golds and all(_GOLD_OPTION_RE.match(g.strip()) for g in golds):
        if any("(A)" in it.question for it in task.items):
            return MatchPolicy.OPTION_LETTER
    return MatchPolicy.EXACT_NORMALIZED


def percent(accuracy: Fraction) -> Decimal:
    """Accuracy as a percentage rounded half-up to two decimals."""
    value = Decimal(accuracy.numerator) * 100 / Decimal(accuracy.denominator)
    return value.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


def points(delta: Fraction) -> Decimal:
    """Accuracy difference in percentage points, two decimals."""
    sign = -1 if delta < 0 else 1
    return sign * percent(abs(delta))


@dataclass(frozen=True)
class SettingResult:
    model: str
    dataset: str
    method: str
    accuracy: Fraction
    correct: int | None = None
    item_count: int | None = None
    inducing_model: str | None = None

    @classmethod
    def from_counts(cls, model: str, dataset: str, method: str, correct: int, item_count: int, **kw):
        if item_count <= 0:
            raise EvaluationError("item_count must be positive")
        return cls(model, dataset, str(method), Fraction(correct, item_count), correct, item_count, **kw)

    @classmethod
    def from_percent(cls, model: str, dataset: str, method: str, pct: str | Decimal, **kw):
        return cls(model, dataset, str(method), Fraction(Decimal(str(pct))) / 100, **kw)

    @property
    def percent(self) -> Decimal:
        return percent(self.accuracy)

    @property
    def key(self) -> tuple[str, str]:
        return (self.model, self.dataset)


@dataclass(frozen=True)
class WTLRecord:
    wins: int
    ties: int
    losses: int

    def __str__(self) -> str:
        return f"{self.wins}-{self.ties}-{self.losses}"

    @property
    def total(self) -> int:
        return self.wins + self.ties + self.losses


def score_records(
    records: Sequence[InferenceRecord], task: TaskSpec, policy: MatchPolicy | None = None
) -> list[InferenceRecord]:
    policy = policy or resolve_policy(task)
    golds = {it.id: it.gold for it in task.items}
    scored = []
    for rec in records:
        gold = golds.get(rec.item_id)
        if not gold:
            raise MissingGold(f"task {task.name!r}: no gold answer for item {rec.item_id!r}")
        scored.append(replace(rec, correct=match_answer(rec.final_answer, gold, policy)))
    return scored


def accuracy(
    records: Sequence[InferenceRecord], task: TaskSpec, policy: MatchPolicy | None = None
) -> SettingResult:
    if not records:
        raise EvaluationError(f"task {task.name!r}: no records to score")
    scored = score_records(records, task, policy)
    first = scored[0]
    return SettingResult.from_counts(
        model=first.inference_model,
        dataset=task.name,
        method=first.method.value,
        correct=sum(1 for r in scored if r.correct),
        item_count=len(scored),
        inducing_model=first.inducing_model,
    )


def pooled(results: Iterable[SettingResult], dataset: str) -> SettingResult:
    """Micro-average over several tasks (total correct / total items)."""
    results = list(results)
    if not results or any(r.item_count is None for r in results):
        raise EvaluationError("pooling needs count-backed results")
    first = results[0]
    return SettingResult.from_counts(
        first.model,
        dataset,
        first.method,
        sum(r.correct for r in results),
        sum(r.item_count for r in results),
        inducing_model=first.inducing_model,
    )


def win_tie_lose(ours: Sequence[SettingResult], baseline: Sequence[SettingResult]) -> WTLRecord:
    """Compare aligned (model, dataset) settings at two-decimal percentage precision."""
    if len(ours) != len(baseline):
        raise MisalignedSettings(f"{len(ours)} settings vs {len(baseline)}")
    base = {r.key: r for r in baseline}
    if len(base) != len(baseline) or len({r.key for r in ours}) != len(ours):
        raise MisalignedSettings("duplicate (model, dataset) settings")
    wins = ties = losses = 0
    for r in ours:
        if r.key not in base:
            raise MisalignedSettings(f"no baseline for setting {r.key}")
        a, b = r.percent, base[r.key].percent
        if a > b:
            wins += 1
        elif a == b:
            ties += 1
        else:
            losses += 1
    return WTLRecord(wins, ties, losses)


@dataclass(frozen=True)
class Matrix:
    """Dense labelled grid of exact accuracy deltas."""

    rows: tuple[str, ...]
    cols: tuple[str, ...]
    cells: Mapping[tuple[str, str], Fraction]

    def __getitem__(self, key: tuple[str, str]) -> Fraction:
        return self.cells[key]

    def __neg__(self) -> "Matrix":
        return Matrix(self.rows, self.cols, {k: -v for k, v in self.cells.items()})

    def to_csv(self, corner: str = "") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([corner, *self.cols])
        for r in self.rows:
            w.writerow([r, *(str(points(self.cells[(r, c)])) for c in self.cols)])
        return buf.getvalue()


def _accuracy_of(value) -> Fraction:
    return value.accuracy if isinstance(value, SettingResult) else Fraction(value)


def _ordered(keys: Iterable[Hashable]) -> tuple:
    return tuple(OrderedDict.fromkeys(keys))


def delta_matrix(
    results: Mapping[tuple[str, str], Mapping[str, SettingResult | Fraction]],
    method_a: str,
    method_b: str,
    rows: Sequence[str] | None = None,
    cols: Sequence[str] | None = None,
) -> Matrix:
    """Cell (model, subtask) = accuracy(method_a) - accuracy(method_b); positive means method_a wins."""
    rows = tuple(rows) if rows is not None else _ordered(k[0] for k in results)
    cols = tuple(cols) if cols is not None else _ordered(k[1] for k in results)
    cells = {}
    for r in rows:
        for c in cols:
            by_method = results.get((r, c))
            if by_method is None or method_a not in by_method or method_b not in by_method:
                raise MissingCell(f"missing {method_a}/{method_b} for ({r}, {c})")
            cells[(r, c)] = _accuracy_of(by_method[method_a]) - _accuracy_of(by_method[method_b])
    return Matrix(rows, cols, cells)


def cross_model_grid(
    results: Mapping[tuple[str, str], SettingResult | Fraction],
    baselines: Mapping[str, SettingResult | Fraction],
) -> Matrix:
    """Rows are inducing models, columns inference models; cell = induced accuracy minus the
    inference model's own baseline."""
    rows = _ordered(k[0] for k in results)
    cols = _ordered(k[1] for k in results)
    cells = {}
    for (inducer, inferer), value in results.items():
        if inferer not in baselines:
            raise MissingBaseline(f"no baseline for inference model {inferer!r}")
        cells[(inducer, inferer)] = _accuracy_of(value) - _accuracy_of(baselines[inferer])
    missing = [(r, c) for r in rows for c in cols if (r, c) not in cells]
    if missing:
        raise MissingCell(f"cross-model grid is not rectangular, missing {missing[:3]}")
    return Matrix(rows, cols, cells)


def ablation_table(results: Mapping[tuple[str, int], SettingResult | Fraction], ns: Sequence[int]) -> str:
    """CSV with one row per model and one accuracy column per N."""
    models = _ordered(k[0] for k in results)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", *(f"N={n}" for n in ns)])
    for m in models:
        row = [m]
        for n in ns:
            if (m, n) not in results:
                raise MissingCell(f"no result for model {m!r} at N={n}")
            row.append(str(percent(_accuracy_of(results[(m, n)]))))
        w.writerow(row)
    return buf.getvalue()


def settings_csv(results: Iterable[SettingResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "inducing_model", "dataset", "method", "correct", "item_count", "accuracy_pct"])
    for r in results:
        w.writerow(
            [r.model, r.inducing_model or "", r.dataset, r.method,
             "" if r.correct is None else r.correct,
             "" if r.item_count is None else r.item_count,
             str(r.percent)]
        )
    return buf.getvalue()


# --- published-table fixtures -----------------------------------------------


def load_published_table(path: str | Path | None = None, name: str = "table1.csv") -> list[SettingResult]:
    """Read a ``model,dataset,method,accuracy`` CSV of published percentages."""
    if path is None:
        from importlib import resources

        text = (resources.files("strategy_induct") / "data" / name).read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    return [
        SettingResult.from_percent(row["model"], row["dataset"], row["method"], row["accuracy"])
        for row in reader
    ]


def select(results: Iterable[SettingResult], method: str, models: Iterable[str] | None = None) -> list[SettingResult]:
    keep = set(models) if models is not None else None
    return [r for r in results if r.method == method and (keep is None or r.model in keep)]
