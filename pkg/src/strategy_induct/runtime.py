"""Run configuration, manifest and the stage commands behind the CLI.

A run directory holds::

    manifest.json        config snapshot + per-entry status
    induced/             induced-prompt artifacts
    records/             inference records, one JSON line per item
    reports/             report.json, accuracy.csv, matrices, ablation table
    errors.json          failures from the last command
    logs/ledger.jsonl    cost rows (varies with cache state; not part of the report)
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Sequence

import filelock

from . import evaluation as ev
from .datasets import TaskSpec, build_cipher_tasks, load_tasks, read_word_corpus, slugify, write_task_file
from .gateway import (
    BudgetExceeded,
    CostLedger,
    Gateway,
    MockBackend,
    ModelProfile,
    ResponseCache,
    atomic_write_text,
    load_profiles,
)
from .pipeline import (
    DEFAULT_N,
    DEFAULT_SAMPLE_SIZE,
    InferenceRecord,
    Method,
    PromptStore,
    StageConfig,
    obtain_induced,
    run_method,
)

log = logging.getLogger(__name__)

STATUS_ORDER = {"pending": 0, "induced": 1, "inferred": 2, "evaluated": 3}


class RunError(RuntimeError):
    exit_code = 1


class ConfigError(RunError):
    exit_code = 2


class NothingToEvaluate(RunError):
    pass


@dataclass
class RunConfig:
    tasks: str
    methods: list[str] = field(default_factory=lambda: [m.value for m in Method])
    inference_models: list[str] = field(default_factory=list)
    inducing_models: list[str] = field(default_factory=list)
    pairing: str = "self"
    profiles: str | None = None
    mock_script: str | None = None
    n: int = DEFAULT_N
    n_values: list[int] | None = None
    seed: int = 0
    sample_size: int | None = DEFAULT_SAMPLE_SIZE
    budget_cap: str | None = None
    extraction_retries: int = 1
    workers: int = 4
    cache_dir: str = "cache"
    out_dir: str = "run"
    dataset: str | None = None

    def __post_init__(self):
        try:
            self.methods = [Method(m).value for m in self.methods]
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.pairing not in ("self", "cross"):
            raise ConfigError(f"pairing must be 'self' or 'cross', got {self.pairing!r}")
        if not self.inference_models:
            raise ConfigError("at least one inference model is required")
        if self.n < 1 or any(n < 1 for n in self.ns):
            raise ConfigError("n must be >= 1")

    @property
    def ns(self) -> list[int]:
        return list(self.n_values) if self.n_values else [self.n]

    @property
    def dataset_name(self) -> str:
        return self.dataset or Path(self.tasks).name

    def stage_config(self, n: int) -> StageConfig:
        return StageConfig(
            n=n,
            seed=self.seed,
            sample_size=self.sample_size,
            extraction_retries=self.extraction_retries,
            workers=self.workers,
        )

    def model_pairs(self) -> list[tuple[str, str]]:
        if self.pairing == "self":
            return [(m, m) for m in self.inference_models]
        inducers = self.inducing_models or self.inference_models
        return [(a, b) for a in inducers for b in self.inference_models]

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "RunConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(doc)

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def snapshot(self) -> dict:
        return asdict(self)


@dataclass
class Entry:
    task: str
    method: str
    inducing_model: str | None
    inference_model: str
    n: int | None
    status: str = "pending"
    induced: str | None = None
    records: str | None = None
    result: dict | None = None
    error: str | None = None

    @property
    def key(self) -> str:
        return "|".join(
            [self.task, self.method, self.inducing_model or "-", self.inference_model,
             "-" if self.n is None else str(self.n)]
        )

    def advance(self, status: str) -> None:
        if status != "failed" and self.status != "failed" and STATUS_ORDER[status] < STATUS_ORDER[self.status]:
            raise RunError(f"{self.key}: cannot move from {self.status} back to {status}")
        self.status = status
        if status != "failed":
            self.error = None

    def fail(self, error: str) -> None:
        self.status = "failed"
        self.error = error


class Manifest:
    def __init__(self, path: Path, config: dict, entries: dict[str, Entry], profiles: dict | None = None):
        self.path = path
        self.config = config
        self.entries = entries
        self.profiles = profiles or {}

    @classmethod
    def open(cls, out_dir: Path, config: RunConfig, tasks: Sequence[TaskSpec],
             profiles: dict[str, ModelProfile] | None = None) -> "Manifest":
        path = out_dir / "manifest.json"
        entries: dict[str, Entry] = {}
        if path.exists():
            doc = json.loads(path.read_text(encoding="utf-8"))
            entries = {k: Entry(**v) for k, v in doc["entries"].items()}
        for entry in plan_entries(config, tasks):
            entries.setdefault(entry.key, entry)
        used = {*config.inference_models, *config.inducing_models}
        table = {
            name: {"provider_id": p.provider_id, "model_name": p.model_name}
            for name, p in sorted((profiles or {}).items()) if name in used
        }
        manifest = cls(path, config.snapshot(), entries, table)
        manifest.save()
        return manifest

    def save(self) -> None:
        doc = {
            "config": self.config,
            "profiles": self.profiles,
            "entries": {k: asdict(self.entries[k]) for k in sorted(self.entries)},
        }
        atomic_write_text(self.path, json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True) + "\n")

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.entries[k] for k in sorted(self.entries))


def plan_entries(config: RunConfig, tasks: Sequence[TaskSpec]) -> list[Entry]:
    entries = []
    for task in tasks:
        for method in map(Method, config.methods):
            if method.task_level:
                for inducer, inferer in config.model_pairs():
                    for n in config.ns:
                        entries.append(Entry(task.name, method.value, inducer, inferer, n))
            else:
                for inferer in config.inference_models:
                    entries.append(Entry(task.name, method.value, None, inferer, None))
    return entries


class Run:
    """Everything one command needs: config, tasks, gateway, manifest, lock."""

    def __init__(self, config: RunConfig, gateway: Gateway | None = None,
                 profiles: dict[str, ModelProfile] | None = None):
        self.config = config
        self.out_dir = Path(config.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.tasks = {t.name: t for t in load_tasks(config.tasks)}
        self.profiles = profiles if profiles is not None else self._load_profiles()
        missing = [
            m for m in {*config.inference_models, *config.inducing_models} if m not in self.profiles
        ]
        if missing:
            raise ConfigError(f"unknown model profiles: {sorted(missing)}")
        self.gateway = gateway if gateway is not None else self._build_gateway()
        self.store = PromptStore(self.out_dir / "induced")
        self.errors: list[dict] = []
        self._lock = filelock.FileLock(str(self.out_dir / ".lock"), timeout=0)

    def _load_profiles(self) -> dict[str, ModelProfile]:
        if self.config.profiles:
            return load_profiles(self.config.profiles)
        # Without a profile file every model name is a mock model.
        names = {*self.config.inference_models, *self.config.inducing_models}
        return {n: ModelProfile(name=n, provider_id="mock", model_name=n) for n in names}

    def _build_gateway(self) -> Gateway:
        backends = {}
        if self.config.mock_script:
            backends["mock"] = MockBackend.from_file(self.config.mock_script)
        return Gateway(
            backends=backends,
            cache=ResponseCache(self.config.cache_dir),
            ledger=CostLedger(),
            budget_cap=self.config.budget_cap,
        )

    def __enter__(self) -> "Run":
        try:
            self._lock.acquire()
        except filelock.Timeout:
            raise ConfigError(f"run directory {self.out_dir} is locked by another process") from None
        self.manifest = Manifest.open(self.out_dir, self.config, list(self.tasks.values()), self.profiles)
        self._ledger_start = len(self.gateway.ledger.rows)
        return self

    def __exit__(self, *exc) -> None:
        try:
            self.manifest.save()
            atomic_write_text(
                self.out_dir / "errors.json", json.dumps(self.errors, indent=2, ensure_ascii=False) + "\n"
            )
            self._flush_ledger()
        finally:
            self._lock.release()

    def _flush_ledger(self) -> None:
        rows = self.gateway.ledger.rows[self._ledger_start:]
        if not rows:
            return
        path = self.out_dir / "logs" / "ledger.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("a", encoding="utf-8") as fh:
            for r in rows:
                doc = asdict(r)
                doc["cost"] = str(r.cost)
                fh.write(json.dumps(doc, sort_keys=True) + "\n")

    def record_error(self, entry: Entry, exc: BaseException) -> None:
        entry.fail(f"{type(exc).__name__}: {exc}")
        self.errors.append({"entry": entry.key, "error": entry.error})
        self.manifest.save()

    def profile(self, name: str | None) -> ModelProfile | None:
        return None if name is None else self.profiles[name]

    def records_path(self, entry: Entry) -> Path:
        parts = [slugify(entry.task), entry.method, slugify(entry.inducing_model or "none"),
                 slugify(entry.inference_model)]
        if entry.n is not None:
            parts.append(f"n{entry.n}")
        return self.out_dir / "records" / ("__".join(parts) + ".jsonl")


def _write_records(path: Path, records: Sequence[InferenceRecord]) -> None:
    atomic_write_text(path, "".join(r.dumps() + "\n" for r in records))


def read_records(path: str | Path) -> list[InferenceRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [InferenceRecord.from_json(json.loads(line)) for line in lines if line.strip()]


@dataclass
class CommandResult:
    processed: int = 0
    failed: int = 0
    budget_hit: bool = False
    messages: list[str] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 1 if (self.failed or self.budget_hit) else 0


def cmd_induce(config: RunConfig, gateway: Gateway | None = None, **kw) -> CommandResult:
    """Strategy + induct stages for every task-level entry not yet induced."""
    result = CommandResult()
    with Run(config, gateway, **kw) as run:
        for entry in run.manifest:
            if entry.n is None or (entry.status != "failed" and STATUS_ORDER[entry.status] >= 1):
                continue
            task = run.tasks[entry.task]
            try:
                induced = obtain_induced(
                    task, Method(entry.method), run.profile(entry.inducing_model),
                    run.gateway, config.stage_config(entry.n), run.store,
                )
            except BudgetExceeded as exc:
                run.record_error(entry, exc)
                result.budget_hit = True
                result.failed += 1
                break
            except Exception as exc:
                run.record_error(entry, exc)
                result.failed += 1
                continue
            entry.induced = str(run.store.path(induced.task, induced.method, induced.inducing_model,
                                               induced.n, induced.seed).relative_to(run.out_dir))
            entry.advance("induced")
            run.manifest.save()
            result.processed += 1
    return result


def cmd_infer(config: RunConfig, gateway: Gateway | None = None, **kw) -> CommandResult:
    """Inference for every entry not yet inferred; task-level entries induce first if needed."""
    result = CommandResult()
    with Run(config, gateway, **kw) as run:
        for entry in run.manifest:
            if entry.status != "failed" and STATUS_ORDER[entry.status] >= 2:
                continue
            task = run.tasks[entry.task]
            method = Method(entry.method)
            cfg = config.stage_config(entry.n if entry.n is not None else config.n)
            try:
                outcome = run_method(
                    method, task, run.profile(entry.inducing_model), run.profile(entry.inference_model),
                    run.gateway, cfg, run.store,
                )
            except BudgetExceeded as exc:
                run.record_error(entry, exc)
                result.budget_hit = True
                result.failed += 1
                break
            except Exception as exc:
                run.record_error(entry, exc)
                result.failed += 1
                continue
            path = run.records_path(entry)
            _write_records(path, outcome.records)
            entry.records = str(path.relative_to(run.out_dir))
            if outcome.induced is not None:
                p = run.store.path(outcome.induced.task, outcome.induced.method,
                                   outcome.induced.inducing_model, outcome.induced.n, outcome.induced.seed)
                entry.induced = str(p.relative_to(run.out_dir))
            if outcome.failures:
                budget = any(isinstance(f.cause, BudgetExceeded) for f in outcome.failures)
                run.record_error(entry, RunError("; ".join(str(f) for f in outcome.failures)))
                result.failed += 1
                if budget:
                    result.budget_hit = True
                    break
                continue
            entry.advance("inferred")
            run.manifest.save()
            result.processed += 1
    return result


def cmd_eval(config: RunConfig, gateway: Gateway | None = None, **kw) -> CommandResult:
    """Score inferred records against gold answers."""
    result = CommandResult()
    with Run(config, gateway, **kw) as run:
        todo = [e for e in run.manifest if e.status == "inferred"]
        done = [e for e in run.manifest if e.status == "evaluated"]
        if not todo and not done:
            raise NothingToEvaluate("nothing to evaluate: no inference records in this run directory")
        for entry in todo:
            task = run.tasks[entry.task]
            path = run.out_dir / entry.records
            try:
                scored = ev.score_records(read_records(path), task)
                setting = ev.accuracy(scored, task)
            except Exception as exc:
                run.record_error(entry, exc)
                result.failed += 1
                continue
            _write_records(path, scored)
            entry.result = {"correct": setting.correct, "item_count": setting.item_count}
            entry.advance("evaluated")
            run.manifest.save()
            result.processed += 1
    return result


def _setting(entry: Entry) -> ev.SettingResult:
    return ev.SettingResult.from_counts(
        entry.inference_model, entry.task, entry.method,
        entry.result["correct"], entry.result["item_count"],
        inducing_model=entry.inducing_model,
    )


def build_report(config: RunConfig, entries: Sequence[Entry]) -> tuple[dict, dict[str, str]]:
    """Report document plus auxiliary CSV files keyed by file name."""
    evaluated = [e for e in entries if e.status == "evaluated"]
    if not evaluated:
        raise NothingToEvaluate("nothing to report: no evaluated entries")
    files: dict[str, str] = {}
    settings = []
    for e in sorted(evaluated, key=lambda e: e.key):
        s = _setting(e)
        settings.append({
            "task": e.task, "method": e.method, "inducing_model": e.inducing_model,
            "inference_model": e.inference_model, "n": e.n,
            "correct": s.correct, "item_count": s.item_count, "accuracy_pct": str(s.percent),
        })
    files["accuracy.csv"] = ev.settings_csv(_setting(e) for e in sorted(evaluated, key=lambda e: e.key))

    def self_results(method: str, n: int | None) -> list[ev.SettingResult]:
        out = []
        for e in evaluated:
            if e.method != method or e.n != n:
                continue
            if Method(method).task_level and e.inducing_model != e.inference_model:
                continue
            out.append(_setting(e))
        return out

    main_n = config.n if config.n in config.ns else config.ns[0]
    baselines = {m: self_results(m, None) for m in ("zcot", "scot")}
    baselines["induct"] = self_results("induct", main_n)
    ours = self_results("strategy_induct", main_n)

    comparisons = {}
    for name, base in baselines.items():
        base_keys = {r.key for r in base}
        mine = [r for r in ours if r.key in base_keys]
        if mine:
            mine_keys = {r.key for r in mine}
            comparisons[f"strategy_induct_vs_{name}"] = str(
                ev.win_tie_lose(mine, [r for r in base if r.key in mine_keys])
            )
            cells = {}
            for r in mine:
                cells.setdefault((r.model, r.dataset), {})["strategy_induct"] = r
            for r in base:
                if (r.model, r.dataset) in cells:
                    cells[(r.model, r.dataset)][name] = r
            matrix = ev.delta_matrix(cells, "strategy_induct", name)
            files[f"delta_strategy_induct_vs_{name}.csv"] = matrix.to_csv("model")

    pooled = {}
    groups: dict[tuple, list[ev.SettingResult]] = {}
    for e in evaluated:
        groups.setdefault((e.method, e.inducing_model or "", e.inference_model, e.n or 0), []).append(_setting(e))
    for (method, inducer, inferer, n), rs in sorted(groups.items()):
        p = ev.pooled(rs, config.dataset_name)
        pooled["|".join([method, inducer or "-", inferer, str(n or "-")])] = {
            "correct": p.correct, "item_count": p.item_count, "accuracy_pct": str(p.percent),
        }

    doc = {
        "dataset": config.dataset_name,
        "seed": config.seed,
        "n": main_n,
        "settings": settings,
        "pooled": pooled,
        "win_tie_lose": comparisons,
    }

    if config.pairing == "cross":
        zcot = {}
        for inferer in config.inference_models:
            rs = [r for r in baselines["zcot"] if r.model == inferer]
            if rs:
                zcot[inferer] = ev.pooled(rs, config.dataset_name)
        cross = {}
        for (method, inducer, inferer, n), rs in groups.items():
            if method == "strategy_induct" and n == main_n:
                cross[(inducer, inferer)] = ev.pooled(rs, config.dataset_name)
        if cross and zcot:
            grid = ev.cross_model_grid(cross, zcot)
            files["cross_model.csv"] = grid.to_csv("inducing_model")
            doc["cross_model"] = {f"{r}->{c}": str(ev.points(grid[(r, c)])) for r in grid.rows for c in grid.cols}

    if len(config.ns) > 1:
        table = {}
        for (method, inducer, inferer, n), rs in groups.items():
            if method == "strategy_induct" and inducer == inferer:
                table[(inferer, n)] = ev.pooled(rs, config.dataset_name)
        if table:
            files["ablation.csv"] = ev.ablation_table(table, config.ns)
            doc["ablation"] = {
                m: {f"N={n}": str(table[(m, n)].percent) for n in config.ns if (m, n) in table}
                for m in config.inference_models
            }
    return doc, files


def cmd_report(config: RunConfig, gateway: Gateway | None = None, **kw) -> CommandResult:
    result = CommandResult()
    with Run(config, gateway, **kw) as run:
        doc, files = build_report(config, list(run.manifest))
        reports = run.out_dir / "reports"
        atomic_write_text(reports / "report.json", json.dumps(doc, indent=2, ensure_ascii=False, sort_keys=True) + "\n")
        for name, text in files.items():
            atomic_write_text(reports / name, text)
        result.processed = len(doc["settings"])
        result.messages = [f"{k}: {v}" for k, v in sorted(doc["win_tie_lose"].items())]
    return result


def cmd_all(config: RunConfig, gateway: Gateway | None = None, **kw) -> CommandResult:
    total = CommandResult()
    for cmd in (cmd_induce, cmd_infer, cmd_eval, cmd_report):
        r = cmd(config, gateway, **kw)
        total.processed += r.processed
        total.failed += r.failed
        total.messages.extend(r.messages)
        if r.budget_hit:
            total.budget_hit = True
            break
    return total


def cmd_gen_cipher(out_dir: str | Path, words: str | Path | None = None, ks: Sequence[int] = range(1, 26)) -> list[Path]:
    tasks = build_cipher_tasks(read_word_corpus(words), list(ks))
    return [write_task_file(t, out_dir) for t in tasks]


SMALL_MODELS = ("Llama 3.1 8B", "Mistral Nemo 12B", "Gemini 1.5 Flash 8B", "Gemini 2.0 Flash Lite", "GPT-4o mini")


def cmd_replay_table1(fixture: str | Path | None = None) -> list[str]:
    """Recompute the headline win-tie-lose records from a transcribed results table."""
    table = ev.load_published_table(fixture)
    ours = ev.select(table, "strategy_induct")
    lines = []
    for label, method in (("ZCoT", "zcot"), ("INDUCT", "induct"), ("SCoT", "scot")):
        lines.append(f"vs {label}: {ev.win_tie_lose(ours, ev.select(table, method))}")
    small = ev.win_tie_lose(ev.select(table, "strategy_induct", SMALL_MODELS), ev.select(table, "induct", SMALL_MODELS))
    lines.append(f"small models vs INDUCT: {small}")
    return lines
