#!/usr/bin/env python3
"""End-to-end experiment driver: synth -> structure-reports -> pretrain-mae ->
pretrain-clip -> eval-zeroshot -> eval-retrieval -> eval-cac -> finetune.

Runs each stage through the CLI so every output directory is self-describing.
Any extra arguments are forwarded to every stage (e.g. --config, --set).

    python scripts/run_pipeline.py --out runs/full
    python scripts/run_pipeline.py --out runs/quick --set synth.n_cases=48 \
        --set synth.train_cases=32 --set mae.epochs=2 --set clip.epochs=2
"""

import sys
import time

from cardioclip.cli import main

STAGES = (
    "synth",
    "structure-reports",
    "pretrain-mae",
    "pretrain-clip",
    "eval-zeroshot",
    "eval-retrieval",
    "eval-cac",
    "finetune",
)

if __name__ == "__main__":
    passthrough = sys.argv[1:]
    t0 = time.time()
    for stage in STAGES:
        print(f"=== {stage} [{time.time() - t0:.0f}s] ===", flush=True)
        code = main([stage, *passthrough])
        if code != 0:
            print(f"stage {stage} failed with exit code {code}", file=sys.stderr)
            sys.exit(code)
    print(f"pipeline complete in {time.time() - t0:.0f}s")
