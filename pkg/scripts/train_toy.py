"""Train the desk model on the 200/50 synthetic split and report val mIoU.

    python3 scripts/train_toy.py --out runs/toy [--iters 2000] [--seed 0]
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from spacemesh.config import ModelConfig, TrainConfig
from spacemesh.experiments import TOY_CLASSES, toy_dataset, train_toy


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/toy")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    data = toy_dataset(out / "data")
    run = train_toy(
        data,
        ModelConfig(num_classes=TOY_CLASSES, seed=args.seed),
        replace(TrainConfig(), max_iter=args.iters, seed=args.seed),
        out_dir=out,
    )
    ratio = run.final_loss / run.initial_loss
    print(f"val mIoU {run.report.final_miou:.4f}")
    print(f"loss {run.initial_loss:.4f} -> {run.final_loss:.4f} ({ratio:.1%})")
    print(f"{run.seconds:.0f} s; log and checkpoint in {out}")


if __name__ == "__main__":
    main()
