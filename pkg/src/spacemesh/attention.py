"""Grouped spatial (SCA) and channel (CCA) context gates.

Both gates treat the channels as ``groups`` independent heads. SCA builds an
avg map and a max map per head, runs a grouped k x k convolution (two maps in,
one gate out per head) and multiplies every channel of the head by the
sigmoid gate. CCA pools each channel over space, runs the avg and max vectors
through a shared grouped bottleneck, and scales each channel by the sigmoid
of the summed result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import functional as F
from .nn import Conv2d, Module
from .tensor import Tensor


@dataclass
class AttentionConfig:
    groups: int = 4
    sca_kernel: int = 7
    cca_reduction: int = 4

    def validate(self, channels: int) -> None:
        if self.groups < 1 or channels % self.groups:
            raise ValueError(f"attention groups={self.groups} does not divide {channels} channels")
        if self.sca_kernel % 2 == 0:
            raise ValueError(f"SCA kernel must be odd, got {self.sca_kernel}")
        per_group = channels // self.groups
        if self.cca_reduction < 1 or self.cca_reduction > per_group or per_group % self.cca_reduction:
            raise ValueError(
                f"CCA reduction {self.cca_reduction} must divide the {per_group} channels per group"
            )


class SCA(Module):
    def __init__(self, channels: int, cfg: AttentionConfig = AttentionConfig(), rng=None):
        if cfg.groups < 1 or channels % cfg.groups or cfg.sca_kernel % 2 == 0:
            raise ValueError(f"SCA: bad config {cfg} for {channels} channels")
        self.channels = channels
        self.groups = cfg.groups
        self.conv = Conv2d(2 * cfg.groups, cfg.groups, cfg.sca_kernel, rng, groups=cfg.groups, bias=True)

    def gate(self, x: Tensor) -> Tensor:
        """Sigmoid gate of shape (N, groups, H, W)."""
        n, c, h, w = x.shape
        g = self.groups
        avg = F.pool(x, "avg", "channel", g)
        mx = F.pool(x, "max", "channel", g)
        # [avg_0..avg_{G-1}, max_0..max_{G-1}] -> [avg_0, max_0, avg_1, max_1, ...]
        maps = F.concat_channels([avg, mx]).reshape(n, 2, g, h, w)
        maps = F.transpose(maps, (0, 2, 1, 3, 4)).reshape(n, 2 * g, h, w)
        return F.sigmoid(self.conv(maps))

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.channels:
            raise ValueError(f"SCA built for {self.channels} channels, got {c}")
        g = self.groups
        gate = self.gate(x).reshape(n, g, 1, h, w)
        return (x.reshape(n, g, c // g, h, w) * gate).reshape(n, c, h, w)


class CCA(Module):
    def __init__(self, channels: int, cfg: AttentionConfig = AttentionConfig(), rng=None):
        cfg.validate(channels)
        self.channels = channels
        hidden = channels // cfg.cca_reduction
        self.fc1 = Conv2d(channels, hidden, 1, rng, groups=cfg.groups, bias=True)
        self.fc2 = Conv2d(hidden, channels, 1, rng, groups=cfg.groups, bias=True)

    def _mlp(self, v: Tensor) -> Tensor:
        return self.fc2(F.relu(self.fc1(v)))

    def gate(self, x: Tensor) -> Tensor:
        """Sigmoid gate of shape (N, C, 1, 1)."""
        avg = F.pool(x, "avg", "spatial")
        mx = F.pool(x, "max", "spatial")
        return F.sigmoid(self._mlp(avg) + self._mlp(mx))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels:
            raise ValueError(f"CCA built for {self.channels} channels, got {x.shape[1]}")
        return x * self.gate(x)


def zero_parameters(module: Module) -> None:
    for p in module.parameters():
        p.data = np.zeros_like(p.data)
