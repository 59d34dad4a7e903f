"""Toy training run and the head/SpaM/attention ablation on synthetic shapes."""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ModelConfig, TrainConfig
from .data_io import _atomic_write, read_manifest
from .model import SpaceMeshLab
from .synth import synth_dataset
from .train import TrainReport, train_loop

TOY_TRAIN, TOY_VAL, TOY_SIZE, TOY_CLASSES = 200, 50, 64, 4

ABLATION = (
    ("baseline-ASPP", dict(head="aspp", spam=False, attention=False)),
    ("+SpaM", dict(head="aspp", spam=True, attention=False)),
    ("+SpaM+SCA/CCA", dict(head="aspp", spam=True, attention=True)),
    ("MetroCon2", dict(head="metrocon", spam=True, attention=True)),
)


def toy_dataset(root, seed: int = 0) -> tuple:
    """Render (or reuse) the 200/50 split; returns ``(train, val)`` arrays."""
    manifest = Path(root) / "manifest.txt"
    if not manifest.exists():
        synth_dataset(TOY_TRAIN + TOY_VAL, TOY_SIZE, TOY_SIZE, TOY_CLASSES, seed, root, n_val=TOY_VAL)
    m = read_manifest(manifest)
    return m.load_split("train"), m.load_split("val")


@dataclass
class ToyRun:
    report: TrainReport
    seconds: float
    params: int

    @property
    def initial_loss(self) -> float:
        return self.report.losses[0]

    @property
    def final_loss(self) -> float:
        # mean of the last 50 iterations; single batches are noisy
        return float(np.mean(self.report.losses[-50:]))


def train_toy(data: tuple, model_cfg: ModelConfig = None, train_cfg: TrainConfig = None, out_dir=None) -> ToyRun:
    model_cfg = model_cfg or ModelConfig(num_classes=TOY_CLASSES)
    train_cfg = train_cfg or TrainConfig()
    model = SpaceMeshLab(model_cfg)
    start = time.perf_counter()
    report = train_loop(model, data[0], train_cfg, data[1], out_dir=out_dir)
    return ToyRun(report, time.perf_counter() - start, model.num_parameters())


def run_ablation(data: tuple, seeds=(0, 1, 2), max_iter: int = 2000, out_csv=None) -> str:
    """Train every ablation variant for every seed; returns the CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["variant", "seed", "iters", "params", "val_miou", "initial_loss", "final_loss", "seconds"])
    for name, overrides in ABLATION:
        for seed in seeds:
            mcfg = replace(ModelConfig(num_classes=TOY_CLASSES), seed=seed, **overrides)
            tcfg = replace(TrainConfig(), seed=seed, max_iter=max_iter, eval_every=0)
            run = train_toy(data, mcfg, tcfg)
            writer.writerow([name, seed, max_iter, run.params, f"{run.report.final_miou:.6f}",
                             f"{run.initial_loss:.6f}", f"{run.final_loss:.6f}", f"{run.seconds:.1f}"])
    if out_csv is not None:
        _atomic_write(Path(out_csv), buf.getvalue().encode("utf-8"))
    return buf.getvalue()
