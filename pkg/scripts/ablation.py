"""Head / SpaM / attention ablation on the synthetic split, three seeds each.

    python3 scripts/ablation.py --out runs/ablation.csv [--iters 2000]

Twelve full runs take about two hours on one core.
"""

import argparse
import logging
from pathlib import Path

from spacemesh.experiments import run_ablation, toy_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/ablation.csv")
    p.add_argument("--data", default="runs/toy/data")
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    args = p.parse_args()
    logging.basicConfig(level=logging.WARNING)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    print(run_ablation(toy_dataset(args.data), tuple(args.seeds), args.iters, args.out), end="")


if __name__ == "__main__":
    main()
