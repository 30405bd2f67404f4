#!/usr/bin/env python3
"""
Train and score on the synthetic jitter task; with --ablation compare
cstm_only, mcb and mcb+AD averaged over seeds 0, 1 and 2.
"""

import argparse
import sys
from pathlib import Path
from statistics import mean

project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

from app.schemas.config import MotionMode
from app.tasks.pipeline_tasks import toy_experiment_task
from app.utils.logger import get_loggers

logger = get_loggers("ToyExperiment")

VARIANTS = [
    ("cstm_only", MotionMode.CSTM_ONLY, False),
    ("mcb", MotionMode.MCB, False),
    ("mcb+AD", MotionMode.MCB, True),
]


def main():
    parser = argparse.ArgumentParser(description="Synthetic forgery toy experiment")
    parser.add_argument("--work-dir", default="toy_runs")
    parser.add_argument("--steps", type=int, default=2000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--ablation", action="store_true")
    args = parser.parse_args()

    if not args.ablation:
        result = toy_experiment_task(args.work_dir, seed=args.seed, steps=args.steps)
        print("=" * 40)
        for key, value in result.items():
            print(f"{key:<14} {'-' if value is None else f'{value:.4f}'}")
        if result.get("clue_fake"):
            print(f"clue ratio real/fake: {result['clue_real'] / result['clue_fake']:.3f}")
        return

    aucs = {}
    for name, mode, ad_enabled in VARIANTS:
        runs = [toy_experiment_task(args.work_dir, mode=mode, ad_enabled=ad_enabled, seed=s, steps=args.steps)
                for s in (0, 1, 2)]
        aucs[name] = mean(r["auc"] for r in runs)
        logger.info(f"{name}: per-seed AUC {[round(r['auc'], 4) for r in runs]}")
    print("=" * 40)
    for name, value in aucs.items():
        print(f"{name:<10} mean AUC {value:.4f}")


if __name__ == "__main__":
    main()
