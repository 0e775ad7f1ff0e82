import json

import pytest

from strategy_induct.datasets import write_task_file
from strategy_induct.gateway import CostLedger, Gateway, MockBackend, ResponseCache
from strategy_induct.runtime import (
    ConfigError,
    Entry,
    NothingToEvaluate,
    RunConfig,
    RunError,
    cmd_all,
    cmd_eval,
    cmd_induce,
    cmd_infer,
    cmd_report,
    plan_entries,
)

from conftest import responder, synthetic_task


class Counting:
    def __init__(self, fn=responder):
        self.inner = MockBackend(responder=fn)
        self.calls = 0

    def send(self, req):
        self.calls += 1
        return self.inner.send(req)


def make_tasks(root, count=2, m=25):
    d = root / "tasks"
    for i in range(count):
        write_task_file(synthetic_task(f"task{i}", m=m, seed=i), d)
    return d


def config(tmp_path, tasks, **kw):
    base = dict(tasks=str(tasks), inference_models=["mock-a"], cache_dir=str(tmp_path / "cache"),
                out_dir=str(tmp_path / "run"), workers=2)
    base.update(kw)
    return RunConfig(**base)


def gateway_for(tmp_path, backend, **kw):
    return Gateway(backends={"mock": backend}, cache=ResponseCache(tmp_path / "cache"), ledger=CostLedger(), **kw)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(tasks="x", inference_models=[])
    with pytest.raises(ConfigError):
        RunConfig(tasks="x", inference_models=["a"], methods=["bogus"])
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"tasks": "x", "inference_models": ["a"], "colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig(tasks="x", inference_models=["a"], n=0)


def test_config_from_file_with_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"tasks": "t", "inference_models": ["a"], "n": 5}))
    cfg = RunConfig.from_file(path, n=1, seed=9)
    assert (cfg.n, cfg.seed) == (1, 9)


def test_plan_counts(tmp_path):
    tasks = [synthetic_task("a"), synthetic_task("b")]
    cfg = RunConfig(tasks="x", inference_models=["m1", "m2"], n_values=[1, 3])
    entries = plan_entries(cfg, tasks)
    # per task: zcot+scot per model (4) + two task-level methods x 2 models x 2 Ns (8)
    assert len(entries) == 2 * 12


def test_cross_pairs():
    cfg = RunConfig(tasks="x", inference_models=["a", "b"], inducing_models=["c"], pairing="cross")
    assert cfg.model_pairs() == [("c", "a"), ("c", "b")]


def test_entry_status_is_monotone():
    e = Entry("t", "zcot", None, "m", None)
    e.advance("inferred")
    with pytest.raises(RunError):
        e.advance("induced")
    e.fail("boom")
    e.advance("pending")
    assert e.status == "pending" and e.error is None


def test_full_run_and_idempotent_rerun(tmp_path):
    tasks = make_tasks(tmp_path)
    cfg = config(tmp_path, tasks)
    backend = Counting()
    result = cmd_all(cfg, gateway_for(tmp_path, backend))
    assert result.exit_code == 0 and result.failed == 0
    # per task: zcot 25 + scot 25 + induct (1 + 25) + strategy_induct (3 + 1 + 25)
    assert backend.calls == 2 * (25 + 25 + 26 + 29)
    report = (tmp_path / "run" / "reports" / "report.json").read_text()
    doc = json.loads(report)
    assert set(doc["win_tie_lose"]) == {"strategy_induct_vs_zcot", "strategy_induct_vs_scot", "strategy_induct_vs_induct"}
    assert len(doc["settings"]) == 8

    again = Counting()
    rerun = cmd_all(cfg, gateway_for(tmp_path, again))
    assert again.calls == 0 and rerun.exit_code == 0
    assert (tmp_path / "run" / "reports" / "report.json").read_text() == report


def test_manifest_lists_every_entry(tmp_path):
    tasks = make_tasks(tmp_path, count=1)
    cmd_all(config(tmp_path, tasks), gateway_for(tmp_path, Counting()))
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert {e["status"] for e in manifest["entries"].values()} == {"evaluated"}
    assert manifest["config"]["n"] == 3


def test_induce_then_infer_reuses_prompt(tmp_path):
    tasks = make_tasks(tmp_path, count=1)
    cfg = config(tmp_path, tasks, methods=["strategy_induct"])
    first = Counting()
    assert cmd_induce(cfg, gateway_for(tmp_path, first)).processed == 1
    assert first.calls == 4
    second = Counting()
    gw = Gateway(backends={"mock": second}, cache=ResponseCache(tmp_path / "fresh-cache"))
    cmd_infer(cfg, gw)
    assert second.calls == 25


def test_eval_with_nothing_inferred(tmp_path):
    tasks = make_tasks(tmp_path, count=1)
    with pytest.raises(NothingToEvaluate):
        cmd_eval(config(tmp_path, tasks), gateway_for(tmp_path, Counting()))


def test_report_without_eval(tmp_path):
    tasks = make_tasks(tmp_path, count=1)
    cfg = config(tmp_path, tasks, methods=["zcot"])
    cmd_infer(cfg, gateway_for(tmp_path, Counting()))
    with pytest.raises(NothingToEvaluate):
        cmd_report(cfg, gateway_for(tmp_path, Counting()))


def test_budget_cap_partial_then_resume(tmp_path):
    tasks = make_tasks(tmp_path, count=2)
    profiles = tmp_path / "profiles.json"
    profiles.write_text(json.dumps({"profiles": [
        {"name": "mock-a", "provider_id": "mock", "model_name": "mock-a",
         "price_in": "1000", "price_out": "1000", "max_output_tokens": 10}]}))
    cfg = config(tmp_path, tasks, methods=["zcot"], profiles=str(profiles), workers=1)
    capped = Counting()
    gw = gateway_for(tmp_path, capped, budget_cap="0.5")
    result = cmd_all(cfg, gw)
    assert result.budget_hit and result.exit_code == 1
    assert 0 < capped.calls < 50
    errors = json.loads((tmp_path / "run" / "errors.json").read_text())
    assert errors and "BudgetExceeded" in errors[0]["error"]

    resumed = Counting()
    done = cmd_all(cfg, gateway_for(tmp_path, resumed))
    assert done.exit_code == 0
    assert resumed.calls == 50 - capped.calls


def test_bbh_shape_call_bound(tmp_path):
    tasks = make_tasks(tmp_path, count=23, m=5)
    cfg = config(tmp_path, tasks, methods=["strategy_induct"], sample_size=5)
    backend = Counting()
    result = cmd_induce(cfg, gateway_for(tmp_path, backend))
    assert result.processed == 23
    assert backend.calls <= 23 * 4
    assert len(list((tmp_path / "run" / "induced").glob("*.json"))) == 23


def test_failed_task_does_not_stop_others(tmp_path):
    from strategy_induct.pipeline import induction_items

    tasks = make_tasks(tmp_path, count=2)
    poisoned = {it.question for it in induction_items(synthetic_task("task1", seed=1), 3, 0)}
    poisoned -= {it.question for it in induction_items(synthetic_task("task0", seed=0), 3, 0)}

    def fn(req):
        if "designing a strategy" in req.prompt and any(q in req.prompt for q in poisoned):
            return "no tag"
        return responder(req)

    cfg = config(tmp_path, tasks, methods=["strategy_induct"], extraction_retries=0)
    result = cmd_induce(cfg, gateway_for(tmp_path, Counting(fn)))
    assert (result.processed, result.failed, result.exit_code) == (1, 1, 1)
    errors = json.loads((tmp_path / "run" / "errors.json").read_text())
    assert errors[0]["entry"].startswith("task1|") and "StrategyExtractionFailed" in errors[0]["error"]


def test_lock_prevents_concurrent_runs(tmp_path):
    import filelock

    tasks = make_tasks(tmp_path, count=1)
    cfg = config(tmp_path, tasks, methods=["zcot"])
    (tmp_path / "run").mkdir()
    with filelock.FileLock(str(tmp_path / "run" / ".lock")):
        with pytest.raises(ConfigError, match="locked"):
            cmd_infer(cfg, gateway_for(tmp_path, Counting()))


def test_n_ablation_report(tmp_path):
    tasks = make_tasks(tmp_path, count=2, m=10)
    cfg = config(tmp_path, tasks, methods=["strategy_induct"], n_values=[1, 3, 5], sample_size=10)
    cmd_all(cfg, gateway_for(tmp_path, Counting()))
    lines = (tmp_path / "run" / "reports" / "ablation.csv").read_text().splitlines()
    assert lines[0] == "model,N=1,N=3,N=5"
    assert len(lines) == 2 and lines[1].startswith("mock-a,")


def test_cross_model_report(tmp_path):
    tasks = make_tasks(tmp_path, count=1)
    cfg = config(tmp_path, tasks, methods=["zcot", "strategy_induct"], inference_models=["a", "b"], pairing="cross")
    cmd_all(cfg, gateway_for(tmp_path, Counting()))
    lines = (tmp_path / "run" / "reports" / "cross_model.csv").read_text().splitlines()
    assert lines[0] == "inducing_model,a,b"
    assert [l.split(",")[0] for l in lines[1:]] == ["a", "b"]


def test_manifest_and_ledger_name_provider(tmp_path):
    tasks = make_tasks(tmp_path, count=1, m=2)
    cmd_infer(config(tmp_path, tasks, methods=["zcot"]), gateway_for(tmp_path, Counting()))
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["profiles"] == {"mock-a": {"provider_id": "mock", "model_name": "mock-a"}}
    rows = [json.loads(l) for l in (tmp_path / "run" / "logs" / "ledger.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and {r["provider_id"] for r in rows} == {"mock"}


def snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and "logs" not in p.parts and p.name != ".lock"}


def test_out_dir_rebuilds_from_warm_cache(tmp_path):
    import shutil

    tasks = make_tasks(tmp_path, count=2, m=6)
    cfg = config(tmp_path, tasks, n_values=[1, 3], sample_size=6)
    cmd_all(cfg, gateway_for(tmp_path, Counting()))
    before = snapshot(tmp_path / "run")
    shutil.rmtree(tmp_path / "run")
    warm = Counting()
    cmd_all(cfg, gateway_for(tmp_path, warm))
    assert warm.calls == 0
    assert snapshot(tmp_path / "run") == before
