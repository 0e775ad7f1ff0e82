"""``strategy-induct`` command line.

Exit codes: 0 success, 1 partial failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import runtime
from .datasets import DatasetError

RUN_COMMANDS = {
    "induce": runtime.cmd_induce,
    "infer": runtime.cmd_infer,
    "eval": runtime.cmd_eval,
    "report": runtime.cmd_report,
    "run": runtime.cmd_all,
}


def _csv(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _ints(value: str) -> list[int]:
    out = []
    for part in _csv(value):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its keys")
    p.add_argument("--tasks", help="directory of task JSON files")
    p.add_argument("--methods", type=_csv, help="comma list of zcot,scot,induct,strategy_induct")
    p.add_argument("--inference-models", type=_csv, dest="inference_models")
    p.add_argument("--inducing-models", type=_csv, dest="inducing_models")
    p.add_argument("--pairing", choices=["self", "cross"])
    p.add_argument("--profiles", help="model profile JSON file")
    p.add_argument("--mock-script", dest="mock_script", help="scripted responses for the mock provider")
    p.add_argument("--n", type=int)
    p.add_argument("--n-values", type=_ints, dest="n_values", help="e.g. 1,3,5 for the N ablation")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-size", type=int, dest="sample_size")
    p.add_argument("--budget-cap", dest="budget_cap")
    p.add_argument("--extraction-retries", type=int, dest="extraction_retries")
    p.add_argument("--workers", type=int)
    p.add_argument("--cache-dir", dest="cache_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--dataset")


_RUN_KEYS = (
    "tasks", "methods", "inference_models", "inducing_models", "pairing", "profiles", "mock_script",
    "n", "n_values", "seed", "sample_size", "budget_cap", "extraction_retries", "workers",
    "cache_dir", "out_dir", "dataset",
)


def config_from_args(args: argparse.Namespace) -> runtime.RunConfig:
    overrides = {k: getattr(args, k) for k in _RUN_KEYS if getattr(args, k) is not None}
    if args.config:
        return runtime.RunConfig.from_file(args.config, **overrides)
    if "tasks" not in overrides:
        raise runtime.ConfigError("--tasks or --config is required")
    return runtime.RunConfig.from_dict(overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strategy-induct", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in RUN_COMMANDS:
        _add_run_flags(sub.add_parser(name))

    gen = sub.add_parser("gen-cipher", help="write shift-cipher task files")
    gen.add_argument("--out-dir", required=True, dest="out_dir")
    gen.add_argument("--words", help="word corpus, one 7-letter word per line (default: bundled)")
    gen.add_argument("--ks", type=_ints, default=list(range(1, 26)), help="shifts, e.g. 1-25 or 1,3,13")

    replay = sub.add_parser("replay-table1", help="recompute win-tie-lose records from a results table")
    replay.add_argument("--fixture", help="CSV model,dataset,method,accuracy (default: bundled)")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")

    try:
        if args.command == "gen-cipher":
            paths = runtime.cmd_gen_cipher(args.out_dir, args.words, args.ks)
            print(f"wrote {len(paths)} task files to {args.out_dir}")
            return 0
        if args.command == "replay-table1":
            for line in runtime.cmd_replay_table1(args.fixture):
                print(line)
            return 0

        config = config_from_args(args)
        result = RUN_COMMANDS[args.command](config)
    except runtime.RunError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (DatasetError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    for line in result.messages:
        print(line)
    print(f"{args.command}: {result.processed} done, {result.failed} failed"
          + (" (budget cap reached)" if result.budget_hit else ""))
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
