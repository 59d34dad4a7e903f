"""Meshgrid atrous convolution consensus head and the ASPP baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import functional as F
from .nn import BatchNorm2d, ConvBNReLU, Module, kaiming
from .tensor import Parameter, Tensor

CHANNEL_BUDGET = 1280

# Per-branch depths reported for the three ablated rate sets; these override
# the rounding rule (6,12,18 would otherwise round to 142).
TABLE_DEPTHS = {
    ((6, 12, 18), (6, 12, 18)): 144,
    (tuple(range(1, 10)), tuple(range(1, 10))): 16,
    (tuple(range(1, 19)), tuple(range(1, 19))): 4,
}


@dataclass
class DilationGrid:
    rates_v: tuple
    rates_h: tuple
    depth: int
    pairs: list = field(default_factory=list)

    @property
    def branches(self) -> int:
        return len(self.pairs)

    @property
    def total_channels(self) -> int:
        return self.depth * self.branches


def build_grid(rates_v: Sequence[int], rates_h: Sequence[int], total_budget: int = CHANNEL_BUDGET) -> DilationGrid:
    """All (vertical, horizontal) rate pairs, vertical rate outer.

    Per-branch depth is ``round(total_budget / (M * N))`` with ties to even,
    except for the tabulated rate sets at the default budget.
    """
    rates_v = tuple(int(r) for r in rates_v)
    rates_h = tuple(int(r) for r in rates_h)
    if not rates_v or not rates_h:
        raise ValueError("rate lists must be non-empty")
    if min(rates_v + rates_h) < 1:
        raise ValueError("dilation rates must be >= 1")
    if len(set(rates_v)) != len(rates_v) or len(set(rates_h)) != len(rates_h):
        raise ValueError("duplicate dilation rates")
    pairs = [(i, j) for i in rates_v for j in rates_h]
    depth = None
    if total_budget == CHANNEL_BUDGET:
        depth = TABLE_DEPTHS.get((rates_v, rates_h))
    if depth is None:
        depth = max(1, round(total_budget / len(pairs)))
    return DilationGrid(rates_v, rates_h, depth, pairs)


def parse_rates(text: str) -> tuple:
    """'1..18' or '6,12,18' -> tuple of ints."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(int(t) for t in text.split(",") if t.strip())


class MetroCon(Module):
    """One 3x3 atrous conv per rate pair, each scaled by a trainable confidence.

    Branch k computes ``s_k * relu(bn(conv_{(i,j)}(x)))`` with padding equal
    to the dilation, and the branch outputs are concatenated in pair order.
    """

    def __init__(self, in_ch: int, pairs: Sequence[tuple], depth: int, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.pairs = [tuple(int(v) for v in p) for p in pairs]
        if not self.pairs:
            raise ValueError("MetroCon needs at least one rate pair")
        if len(set(self.pairs)) != len(self.pairs):
            raise ValueError("duplicate rate pairs")
        self.in_ch = in_ch
        self.depth = depth
        b = len(self.pairs)
        self.weight = Parameter(kaiming(rng, (b, depth, in_ch, 3, 3), in_ch * 9))
        self.bn = BatchNorm2d(b * depth)
        self.confidence = Parameter(np.ones(b, np.float32))

    @classmethod
    def from_grid(cls, in_ch: int, grid: DilationGrid, rng=None) -> "MetroCon":
        return cls(in_ch, grid.pairs, grid.depth, rng)

    @property
    def out_channels(self) -> int:
        return len(self.pairs) * self.depth

    @property
    def segment(self) -> int:
        return self.depth

    def branch_conv(self, k: int) -> F.ConvParams:
        d = self.pairs[k]
        return F.ConvParams(Tensor(self.weight.data[k]), None, 1, d, d)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(f"MetroCon expects {self.in_ch} channels, got {x.shape[1]}")
        n, _, h, w = x.shape
        b = len(self.pairs)
        y = F.dilated_conv_bank(x, self.weight, self.pairs)
        y = F.relu(self.bn(y))
        y = y.reshape(n, b, self.depth, h, w) * self.confidence.reshape(1, b, 1, 1, 1)
        return y.reshape(n, b * self.depth, h, w)

    def without_branch(self, k: int) -> "MetroCon":
        """Copy of this head with branch ``k`` deleted; other weights unchanged."""
        keep = [i for i in range(len(self.pairs)) if i != k]
        sel = np.concatenate([np.arange(i * self.depth, (i + 1) * self.depth) for i in keep])
        head = MetroCon.__new__(MetroCon)
        head.pairs = [self.pairs[i] for i in keep]
        head.in_ch = self.in_ch
        head.depth = self.depth
        head.weight = Parameter(self.weight.data[keep].copy())
        head.bn = BatchNorm2d(len(keep) * self.depth)
        for name in ("gamma", "beta"):
            getattr(head.bn, name).data = getattr(self.bn, name).data[sel].copy()
        for name in ("running_mean", "running_var"):
            getattr(head.bn, name).data = getattr(self.bn, name).data[sel].copy()
        head.confidence = Parameter(self.confidence.data[keep].copy())
        head.training = self.training
        head.bn.training = self.bn.training
        return head

    def macs(self, h: int, w: int) -> int:
        return len(self.pairs) * self.depth * self.in_ch * 9 * h * w


class ASPP(Module):
    """1x1 conv, three atrous 3x3 convs and an image-pool branch, concatenated
    and projected back to ``width`` channels."""

    def __init__(self, in_ch: int, width: int = 256, rates: Sequence[int] = (6, 12, 18), rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_ch = in_ch
        self.width = width
        self.rates = tuple(rates)
        self.b0 = ConvBNReLU(in_ch, width, 1, rng)
        self.atrous = [ConvBNReLU(in_ch, width, 3, rng, dilation=r) for r in self.rates]
        self.image_pool = ConvBNReLU(in_ch, width, 1, rng)
        self.project = ConvBNReLU(width * (2 + len(self.rates)), width, 1, rng)

    @property
    def concat_channels(self) -> int:
        return self.width * (2 + len(self.rates))

    @property
    def out_channels(self) -> int:
        return self.width

    @property
    def segment(self) -> int:
        return self.width

    def branches(self, x: Tensor) -> list:
        n, _, h, w = x.shape
        outs = [self.b0(x)] + [m(x) for m in self.atrous]
        pooled = self.image_pool(F.pool(x, "avg", "spatial"))
        outs.append(F.bilinear_resize(pooled, h, w))
        return outs

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.in_ch:
            raise ValueError(f"ASPP expects {self.in_ch} channels, got {x.shape[1]}")
        return self.project(F.concat_channels(self.branches(x)))

    def macs(self, h: int, w: int) -> int:
        c, wd = self.in_ch, self.width
        return (c * wd * h * w) * (1 + 9 * len(self.rates)) + c * wd + self.concat_channels * wd * h * w


def count_params(head: Module) -> int:
    """Exact trainable scalar count of a head."""
    return head.num_parameters()


def parity_report(in_ch: int, grid: DilationGrid, feat_hw: tuple = (4, 4), aspp_width: int = 256,
                  rng: Optional[np.random.Generator] = None) -> list:
    """Rows comparing a MetroCon head built from ``grid`` with ASPP."""
    h, w = feat_hw
    metro = MetroCon.from_grid(in_ch, grid, rng)
    aspp = ASPP(in_ch, aspp_width, rng=rng)
    return [
        {
            "head": "metrocon",
            "branches": grid.branches,
            "depth": grid.depth,
            "concat": grid.total_channels,
            "params": count_params(metro),
            "macs": metro.macs(h, w),
        },
        {
            "head": "aspp",
            "branches": 2 + len(aspp.rates),
            "depth": aspp_width,
            "concat": aspp.concat_channels,
            "params": count_params(aspp),
            "macs": aspp.macs(h, w),
        },
    ]
