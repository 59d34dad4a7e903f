"""Losses, SGD with poly decay, mIoU, multi-scale/flip inference and the training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import functional as F
from .config import TrainConfig, TtaConfig
from .data_io import _atomic_write, save_checkpoint
from .tensor import Tensor, no_grad

log = logging.getLogger(__name__)

LOG_HEADER = ("iter", "lr", "loss", "aux_loss", "miou")


def poly_lr(it: int, cfg: TrainConfig) -> float:
    if not 0 <= it <= cfg.max_iter:
        raise ValueError(f"iteration {it} outside [0, {cfg.max_iter}]")
    return cfg.lr0 * (1.0 - it / cfg.max_iter) ** cfg.poly_power


def total_loss(main: Tensor, aux: Optional[Tensor], labels: np.ndarray, cfg: TrainConfig) -> tuple:
    """``(total, main_ce, aux_ce)`` with total = CE(main) + aux_weight * CE(aux)."""
    main_ce = F.cross_entropy(main, labels, cfg.ignore_index)
    if aux is None or cfg.aux_weight == 0:
        return main_ce, main_ce, None
    aux_ce = F.cross_entropy(aux, labels, cfg.ignore_index)
    return main_ce + aux_ce * cfg.aux_weight, main_ce, aux_ce


class SGD:
    """Momentum SGD with coupled weight decay: v = m*v + g + wd*p; p -= lr*v."""

    def __init__(self, named_params, momentum: float = 0.9, weight_decay: float = 1e-4):
        self.params = list(named_params)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = [np.zeros_like(p.data) for _, p in self.params]

    def step(self, lr: float) -> None:
        if lr < 0:
            raise ValueError(f"negative learning rate {lr}")
        for name, p in self.params:
            if p.grad is not None and not np.isfinite(p.grad).all():
                bad = int((~np.isfinite(p.grad)).sum())
                raise FloatingPointError(f"non-finite gradient in {name} ({bad} entries)")
        for (_, p), v in zip(self.params, self.velocity):
            g = p.grad if p.grad is not None else 0.0
            v *= self.momentum
            v += g
            v += self.weight_decay * p.data
            p.data = (p.data - np.float32(lr) * v).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_index: int = 255) -> np.ndarray:
    """K x K counts, rows = ground truth, columns = prediction."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gt = np.asarray(gt).ravel().astype(np.int64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction and label sizes differ: {pred.size} vs {gt.size}")
    keep = gt != ignore_index
    pred, gt = pred[keep], gt[keep]
    if gt.size and (gt.min() < 0 or gt.max() >= num_classes or pred.min() < 0 or pred.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    return np.bincount(gt * num_classes + pred, minlength=num_classes ** 2).reshape(num_classes, num_classes)


def iou_from_confusion(conf: np.ndarray) -> tuple:
    """Per-class IoU (NaN where a class is absent from both sides) and their mean."""
    tp = np.diag(conf).astype(np.float64)
    denom = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / np.maximum(denom, 1), np.nan)
    present = denom > 0
    if not present.any():
        warnings.warn("mIoU over an empty set of pixels; reporting 0", RuntimeWarning, stacklevel=2)
        return iou, 0.0
    return iou, float(iou[present].mean())


def miou(pred: np.ndarray, gt: np.ndarray, num_classes: int, ignore_index: int = 255) -> tuple:
    return iou_from_confusion(confusion_matrix(pred, gt, num_classes, ignore_index))


def argmax_labels(logits) -> np.ndarray:
    """Class map from (N, K, H, W) logits; ties go to the lower index."""
    return np.argmax(getattr(logits, "data", logits), axis=1)


def snap_to_16(h: int, w: int) -> tuple:
    if h < 16 or w < 16:
        raise ValueError(f"dims ({h}, {w}) below 16")
    return (h // 16) * 16, (w // 16) * 16


def tta_plan(h: int, w: int, cfg: TtaConfig) -> list:
    """``(h', w', flipped)`` for every forward of one image, in order."""
    cfg.validate()
    plan = []
    for s in cfg.scales:
        size = snap_to_16(max(16, int(round(h * s))), max(16, int(round(w * s))))
        plan.append((*size, False))
        if cfg.flip:
            plan.append((*size, True))
    return plan


def tta_predict(model: Callable, image, cfg: TtaConfig) -> Tensor:
    """Mean of eval logits over scales (and mirrors), resized back to the input size.

    ``model`` maps an (N, C, h, w) tensor to logits at that size, e.g.
    ``SpaceMeshLab.predict``.
    """
    x = image if isinstance(image, Tensor) else Tensor(image)
    _, _, h, w = x.shape
    total = None
    plan = tta_plan(h, w, cfg)
    with no_grad():
        for sh, sw, flipped in plan:
            xi = F.bilinear_resize(x, sh, sw)
            if flipped:
                xi = F.flip_horizontal(xi)
            y = model(xi)
            if flipped:
                y = F.flip_horizontal(y)
            y = F.bilinear_resize(y, h, w)
            total = y.data.copy() if total is None else total + y.data
    return Tensor(total / np.float32(len(plan)))


def evaluate(model, images: np.ndarray, labels: np.ndarray, num_classes: int,
             tta: Optional[TtaConfig] = None, batch: int = 8, ignore_index: int = 255) -> tuple:
    """Global-confusion mIoU of ``model`` over a dataset; restores the training flag."""
    was_training = model.training
    model.eval()
    conf = np.zeros((num_classes, num_classes), np.int64)
    try:
        with no_grad():
            for i in range(0, len(images), batch):
                x = Tensor(images[i : i + batch])
                logits = tta_predict(model.predict, x, tta) if tta is not None else model(x)[0]
                conf += confusion_matrix(argmax_labels(logits), labels[i : i + batch], num_classes, ignore_index)
    finally:
        model.train(was_training)
    iou, mean = iou_from_confusion(conf)
    return iou, mean, conf


@dataclass
class TrainReport:
    lrs: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    aux_losses: list = field(default_factory=list)
    evals: dict = field(default_factory=dict)  # iter -> mIoU

    @property
    def final_miou(self) -> Optional[float]:
        return self.evals[max(self.evals)] if self.evals else None

    def csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(LOG_HEADER)
        for i, (lr, loss, aux) in enumerate(zip(self.lrs, self.losses, self.aux_losses)):
            m = self.evals.get(i)
            writer.writerow([i, repr(lr), repr(loss), "" if aux is None else repr(aux), "" if m is None else repr(m)])
        return buf.getvalue()


class Batches:
    """Seeded epoch-wise shuffling with optional random horizontal flips."""

    def __init__(self, images: np.ndarray, labels: np.ndarray, batch: int, seed: int, flip: bool = True):
        if len(images) == 0:
            raise ValueError("empty training set")
        if len(images) != len(labels):
            raise ValueError("images and labels differ in count")
        self.images, self.labels = images, labels
        self.batch, self.flip = batch, flip
        self.rng = np.random.default_rng(seed)
        self.order = np.empty(0, np.int64)

    def next(self) -> tuple:
        while len(self.order) < self.batch:
            self.order = np.concatenate([self.order, self.rng.permutation(len(self.images))])
        idx, self.order = self.order[: self.batch], self.order[self.batch :]
        x, y = self.images[idx].copy(), self.labels[idx].copy()
        if self.flip:
            mirror = self.rng.random(self.batch) < 0.5
            x[mirror] = x[mirror][..., ::-1]
            y[mirror] = y[mirror][..., ::-1]
        return x, y


def train_loop(model, train_data: tuple, cfg: TrainConfig, val_data: Optional[tuple] = None,
               out_dir=None, on_iter: Optional[Callable] = None) -> TrainReport:
    """Train ``model`` in place for ``cfg.max_iter`` iterations.

    Evaluates on ``val_data`` every ``cfg.eval_every`` iterations and after
    the last one. With ``out_dir`` writes ``train_log.csv`` and
    ``checkpoint.smck`` there.
    """
    cfg.validate()
    images, labels = train_data
    num_classes = model.cfg.num_classes
    batches = Batches(images, labels, cfg.batch, cfg.seed, cfg.flip)
    opt = SGD(model.named_parameters(), cfg.momentum, cfg.weight_decay)
    report = TrainReport()
    model.train()
    for it in range(cfg.max_iter):
        lr = poly_lr(it, cfg)
        x, y = batches.next()
        try:
            main, aux = model(Tensor(x))
            loss, main_ce, aux_ce = total_loss(main, aux, y, cfg)
            if not math.isfinite(loss.item()):
                raise FloatingPointError("non-finite loss")
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
        except FloatingPointError as exc:
            log.error("numerical failure at iteration %d: %s", it, exc)
            raise FloatingPointError(f"iteration {it}: {exc}") from exc
        report.lrs.append(lr)
        report.losses.append(main_ce.item())
        report.aux_losses.append(None if aux_ce is None else aux_ce.item())
        last = it == cfg.max_iter - 1
        if val_data is not None and (last or (cfg.eval_every and (it + 1) % cfg.eval_every == 0)):
            _, m, _ = evaluate(model, *val_data, num_classes, ignore_index=cfg.ignore_index)
            report.evals[it] = m
            log.info("iter %d lr %.5f loss %.4f val mIoU %.4f", it, lr, report.losses[-1], m)
        if on_iter is not None:
            on_iter(it, report)
    if out_dir is not None:
        out = Path(out_dir)
        _atomic_write(out / "train_log.csv", report.csv_text().encode("utf-8"))
        save_checkpoint(out / "checkpoint.smck", model)
    return report
