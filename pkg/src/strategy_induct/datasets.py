"""Task files, seeded sampling and the shift-cipher benchmark."""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

CIPHER_TASK = "Shift Cipher"
CIPHER_ANSWER_FORMAT = "a single lowercase word"
CIPHER_WORD_LENGTH = 7

_WORD_RE = re.compile(r"[a-z]+")


class DatasetError(ValueError):
    pass


class SchemaError(DatasetError):
    def __init__(self, file: str | Path, field_name: str, detail: str = ""):
        msg = f"{file}: bad or missing field {field_name!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.file = str(file)
        self.field = field_name


class DuplicateId(DatasetError):
    pass


class NotEnoughItems(DatasetError):
    pass


class BadAlphabet(DatasetError):
    pass


class BadShift(DatasetError):
    pass


class BadWordLength(DatasetError):
    pass


@dataclass(frozen=True)
class QAItem:
    id: str
    question: str
    gold: str | None = None


@dataclass(frozen=True)
class TaskSpec:
    task: str
    answer_format: str
    items: tuple[QAItem, ...]
    subtask: str | None = None
    short_phrase: str = ""
    short_phrase_optional: bool = False
    match_policy: str | None = None

    def __post_init__(self):
        if not self.items:
            raise DatasetError(f"task {self.name!r} has no items")
        seen: set[str] = set()
        for item in self.items:
            if item.id in seen:
                raise DuplicateId(f"task {self.name!r}: duplicate item id {item.id!r}")
            seen.add(item.id)
        if not self.short_phrase and not self.short_phrase_optional:
            raise DatasetError(
                f"task {self.name!r} has an empty short_phrase but does not mark it optional"
            )

    @property
    def name(self) -> str:
        return self.subtask or self.task

    def without_gold(self) -> "TaskSpec":
        return replace(self, items=tuple(replace(i, gold=None) for i in self.items))

    def item(self, item_id: str) -> QAItem:
        for it in self.items:
            if it.id == item_id:
                return it
        raise KeyError(item_id)

    def to_json(self) -> dict:
        doc = {
            "task": self.task,
            "subtask": self.subtask,
            "short_phrase": self.short_phrase,
            "answer_format": self.answer_format,
            "items": [asdict(i) for i in self.items],
        }
        if self.short_phrase_optional:
            doc["short_phrase_optional"] = True
        if self.match_policy:
            doc["match_policy"] = self.match_policy
        return doc


def _require(doc: dict, key: str, kind, path: Path, optional: bool = False):
    if key not in doc or doc[key] is None:
        if optional:
            return None
        raise SchemaError(path, key)
    if not isinstance(doc[key], kind):
        raise SchemaError(path, key, f"expected {getattr(kind, '__name__', kind)}")
    return doc[key]


def parse_task(doc: dict, path: Path | str = "<memory>") -> TaskSpec:
    path = Path(path)
    if not isinstance(doc, dict):
        raise SchemaError(path, "<root>", "expected an object")
    task = _require(doc, "task", str, path)
    subtask = _require(doc, "subtask", str, path, optional=True)
    answer_format = _require(doc, "answer_format", str, path)
    optional_phrase = bool(doc.get("short_phrase_optional", False))
    short_phrase = _require(doc, "short_phrase", str, path, optional=optional_phrase) or ""
    match_policy = _require(doc, "match_policy", str, path, optional=True)
    raw_items = _require(doc, "items", list, path)
    if not raw_items:
        raise SchemaError(path, "items", "must be non-empty")

    items = []
    for n, raw in enumerate(raw_items):
        if not isinstance(raw, dict):
            raise SchemaError(path, f"items[{n}]", "expected an object")
        item_id = raw.get("id")
        if isinstance(item_id, int):
            item_id = str(item_id)
        if not isinstance(item_id, str) or not item_id:
            raise SchemaError(path, f"items[{n}].id")
        question = raw.get("question")
        if not isinstance(question, str):
            raise SchemaError(path, f"items[{n}].question")
        gold = raw.get("gold")
        if gold is not None and not isinstance(gold, str):
            raise SchemaError(path, f"items[{n}].gold", "expected a string")
        items.append(QAItem(id=item_id, question=question, gold=gold))

    try:
        return TaskSpec(
            task=task,
            subtask=subtask,
            short_phrase=short_phrase,
            short_phrase_optional=optional_phrase,
            answer_format=answer_format,
            match_policy=match_policy,
            items=tuple(items),
        )
    except DuplicateId as exc:
        raise DuplicateId(f"{path}: {exc}") from None
    except DatasetError as exc:
        raise SchemaError(path, "short_phrase", str(exc)) from None


def load_task_file(path: str | Path) -> TaskSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(path, "<root>", f"invalid JSON: {exc}") from None
    return parse_task(doc, path)


def load_tasks(path: str | Path) -> list[TaskSpec]:
    """Load every ``*.json`` task file under ``path`` in filename order.

    Fails on the first malformed file. Task names must be unique across the
    directory.
    """
    path = Path(path)
    if path.is_file():
        return [load_task_file(path)]
    if not path.is_dir():
        raise DatasetError(f"no such task directory: {path}")
    tasks = [load_task_file(p) for p in sorted(path.glob("*.json"))]
    names = [t.name for t in tasks]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DuplicateId(f"{path}: duplicate task names {dupes}")
    return tasks


def write_task_file(task: TaskSpec, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / f"{slugify(task.name)}.json"
    path.write_text(json.dumps(task.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def slugify(name: str) -> str:
    slug = re.sub(r"[^0-9A-Za-z]+", "_", name).strip("_").lower()
    return slug or "task"


def sample_items(task: TaskSpec, n: int, seed: int, salt: str = "") -> list[QAItem]:
    """Draw ``n`` distinct items without replacement.

    The draw depends only on the item ids, ``n``, ``seed`` and ``salt``; the
    order of items in the file does not matter.
    """
    if n < 1 or n > len(task.items):
        raise NotEnoughItems(f"task {task.name!r}: cannot sample {n} of {len(task.items)} items")
    pool = sorted(task.items, key=lambda it: it.id)
    rng = random.Random(f"{seed}:{salt}")
    return rng.sample(pool, n)


# --- shift cipher -----------------------------------------------------------


@dataclass(frozen=True)
class CipherInstance:
    plaintext: str
    k: int
    ciphertext: str = field(default="")

    def __post_init__(self):
        if not self.ciphertext:
            object.__setattr__(self, "ciphertext", rot_encode(self.plaintext, self.k))


def _check(word: str, k: int) -> None:
    if not _WORD_RE.fullmatch(word):
        raise BadAlphabet(f"only lowercase a-z is allowed: {word!r}")
    if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= 25:
        raise BadShift(f"shift must be an integer in [1, 25], got {k!r}")


def _shift(word: str, k: int) -> str:
    a = ord("a")
    return "".join(chr((ord(c) - a + k) % 26 + a) for c in word)


def rot_encode(word: str, k: int) -> str:
    _check(word, k)
    return _shift(word, k)


def rot_decode(word: str, k: int) -> str:
    _check(word, k)
    return _shift(word, -k)


def cipher_task_name(k: int) -> str:
    return f"{CIPHER_TASK} – ROT-{k}"


def build_cipher_tasks(words: Sequence[str], ks: Iterable[int]) -> list[TaskSpec]:
    for w in words:
        if len(w) != CIPHER_WORD_LENGTH:
            raise BadWordLength(f"cipher words must have {CIPHER_WORD_LENGTH} letters: {w!r}")
        _check(w, 1)
    tasks = []
    for k in ks:
        _check("a", k)
        items = tuple(
            QAItem(id=f"rot{k:02d}-{i:03d}", question=rot_encode(w, k), gold=w)
            for i, w in enumerate(words)
        )
        tasks.append(
            TaskSpec(
                task=CIPHER_TASK,
                subtask=cipher_task_name(k),
                short_phrase=CIPHER_TASK,
                answer_format=CIPHER_ANSWER_FORMAT,
                match_policy="exact",
                items=items,
            )
        )
    return tasks


def read_word_corpus(path: str | Path | None = None) -> list[str]:
    """One word per line; blank lines and ``#`` comments are skipped."""
    if path is None:
        text = (resources.files("strategy_induct") / "data" / "cipher_words.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    words = []
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.append(line)
    return words


