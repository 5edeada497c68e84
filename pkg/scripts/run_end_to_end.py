#!/usr/bin/env python3
"""Full offline walkthrough: simulate -> generate -> validate -> score.

Everything runs against the deterministic mock backend, so the run is
reproducible and needs no credentials.  Outputs land in ./e2e_out.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

from egoscene.cli import main


def run(*argv) -> None:
    code = main([str(a) for a in argv])
    if code != 0:
        sys.exit(code)


if __name__ == "__main__":
    out = Path("e2e_out")
    out.mkdir(exist_ok=True)
    data = out / "dataset.jsonl"

    run("simulate", "--seed", 7, "--n-scenes", 5, "--out", data)
    run("gen-data", "--dataset", data, "--backend", "mock", "--out", out / "gen")
    run("validate-cot", out / "gen" / "sft.jsonl", "--field", "target_text")
    run("score", "--predictions", out / "gen" / "sft.jsonl", "--out", out / "report")

    # quick audit of a synthetic rollout group using the configured defaults
    group = {
        "question_id": "demo",
        "epsilon": 0.2,
        "beta": 1e-4,
        "rollouts": [
            {
                "response_text": "",
                "reward": r,
                "policy_logprobs": [-1.0, -2.0],
                "old_logprobs": [-1.0, -2.0],
                "ref_logprobs": [-1.1, -2.2],
            }
            for r in (1.0, 0.0, 1.0, 0.0)
        ],
    }
    groups = out / "groups.jsonl"
    groups.write_text(json.dumps(group) + "\n")
    run("grpo-check", groups, "--out", out / "audit.jsonl")
    print(f"\nall artifacts in {out.resolve()}")
