"""End-to-end offline run on shift-cipher tasks with a toy stand-in model.

The toy model answers instance-level prompts by assuming a shift of 3. When
the prompt carries an induced instruction it tries every shift and keeps the
first one that yields a corpus word, so task-level methods score higher. The
numbers say nothing about real models; the point is to exercise every stage,
the manifest, the cache and the report.

    python scripts/offline_cipher_demo.py --out /tmp/cipher-demo --ks 1,3,13 --n-values 1,3,5
"""

import argparse
import json
import re
from pathlib import Path

from strategy_induct.datasets import read_word_corpus, rot_decode
from strategy_induct.gateway import CostLedger, Gateway, MockBackend, ResponseCache
from strategy_induct.runtime import RunConfig, cmd_all, cmd_gen_cipher

WORDS = set(read_word_corpus())
QUESTION = re.compile(r"\[Question\]\n(.*?)\n\[Answer\]", re.DOTALL)


def toy_model(req) -> str:
    prompt = req.prompt
    if prompt.startswith("You are tasked with designing a strategy"):
        return "<strategy>\n1. Try each shift.\n2. Keep the one that gives an English word.\n</strategy>"
    if "<task_instruction>\n{Your task instruction" in prompt:
        return ("<task_instruction>\n### Task Content:\nDecode a shifted word.\n"
                "### Operational Steps:\n1. Try shifts 1 to 25.\n2. Keep the English word.\n</task_instruction>")
    word = QUESTION.search(prompt).group(1).strip()
    guess = rot_decode(word, 3)
    if "Operational Steps" in prompt:
        guess = next((rot_decode(word, k) for k in range(1, 26) if rot_decode(word, k) in WORDS), guess)
    return f"<deduction>\nshifted back\n</deduction>\n<final_answer>{guess}</final_answer>"


def parse_ints(text):
    return [int(v) for v in text.split(",") if v]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="cipher-demo")
    ap.add_argument("--ks", type=parse_ints, default=[1, 3, 13])
    ap.add_argument("--n-values", type=parse_ints, default=[3])
    ap.add_argument("--models", default="toy-a,toy-b")
    args = ap.parse_args()

    out = Path(args.out)
    cmd_gen_cipher(out / "tasks", ks=args.ks)
    cfg = RunConfig(
        tasks=str(out / "tasks"),
        inference_models=args.models.split(","),
        n=args.n_values[0] if len(args.n_values) == 1 else 3,
        n_values=args.n_values if len(args.n_values) > 1 else None,
        cache_dir=str(out / "cache"),
        out_dir=str(out / "run"),
        dataset="Shift Cipher",
    )
    gateway = Gateway(backends={"mock": MockBackend(responder=toy_model)},
                      cache=ResponseCache(cfg.cache_dir), ledger=CostLedger())
    result = cmd_all(cfg, gateway)
    for line in result.messages:
        print(line)
    report = json.loads((out / "run" / "reports" / "report.json").read_text())
    for key, row in sorted(report["pooled"].items()):
        print(f"{key}: {row['accuracy_pct']}")
    print(f"provider calls: {gateway.provider_calls}; reports in {out / 'run' / 'reports'}")
    return result.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
