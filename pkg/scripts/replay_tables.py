"""Recompute every published win-tie-lose record and cross-model cell from the bundled tables.

    python scripts/replay_tables.py
"""

from decimal import Decimal

from strategy_induct import evaluation as ev
from strategy_induct.runtime import SMALL_MODELS


def wtl(table, a, b, models=None):
    return str(ev.win_tie_lose(ev.select(table, a, models), ev.select(table, b, models)))


def cell(table, model, dataset, method):
    return next(r for r in table if (r.model, r.dataset, r.method) == (model, dataset, method))


def main():
    t1 = ev.load_published_table(name="table1.csv")
    print("main table (60 settings)")
    for base in ("zcot", "induct", "scot"):
        print(f"  strategy_induct vs {base}: {wtl(t1, 'strategy_induct', base)}")
    print(f"  small models vs induct: {wtl(t1, 'strategy_induct', 'induct', SMALL_MODELS)}")
    for effort in ("low", "medium", "high"):
        model = [f"GPT o3 mini ({effort})"]
        print(f"  o3-mini {effort} vs zcot: {wtl(t1, 'strategy_induct', 'zcot', model)}")

    t2 = ev.load_published_table(name="table2.csv")
    print("N ablation (BBH-Induct)")
    print(f"  N=3 vs N=1: {wtl(t2, 'N=3', 'N=1')}")
    print(f"  N=3 vs N=5: {wtl(t2, 'N=3', 'N=5')}")

    nr = ev.load_published_table(name="table_nonreasoning.csv")
    print("non-reasoning subtasks")
    for base in ("induct", "zcot"):
        print(f"  strategy_induct vs {base}: {wtl(nr, 'strategy_induct', base)}")
    for dataset in sorted({r.dataset for r in nr}):
        sub = [r for r in nr if r.dataset == dataset]
        print(f"  {dataset} vs zcot: {wtl(sub, 'strategy_induct', 'zcot')}")

    base = cell(t1, "GPT-4o", "BBH-Induct", "zcot")
    ours = cell(t1, "GPT-4o", "BBH-Induct", "strategy_induct")
    grid = ev.cross_model_grid({("GPT-4o", "GPT-4o"): ours}, {"GPT-4o": base})
    print(f"cross-model GPT-4o self cell: {ev.points(grid[('GPT-4o', 'GPT-4o')])}")
    assert ev.points(grid[("GPT-4o", "GPT-4o")]) == Decimal("3.53")


if __name__ == "__main__":
    main()
