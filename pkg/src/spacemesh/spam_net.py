"""Residual backbone, the full-resolution SpaM stream and their exchange paths.

The backbone runs stem -> stages at cumulative strides (4, 4, 8, 16, 16) by
default. The SpaM stream keeps the input resolution and has one
conv-BN-ReLU block per backbone stage. After every stage whose cumulative
stride is a power of the shuffle factor the two streams trade features:

* backbone -> SpaM: 1x1 adapter, then one (pixel shuffle, SCA) step per
  factor of the stride, added to the SpaM stream;
* SpaM -> backbone: one (pixel un-shuffle, CCA) step per factor, then a 1x1
  adapter, added to the backbone stream before the next stage.

The adapter sits at the wide end of each chain so that channel counts stay
divisible through the rearrangements. A stage at stride 8 cannot be reached
with factor-4 steps and is skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import functional as F
from .attention import CCA, SCA, AttentionConfig
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Module
from .rearrange import pixel_shuffle, pixel_unshuffle
from .tensor import Tensor


@dataclass
class BackboneConfig:
    in_channels: int = 3
    widths: tuple = (16, 16, 32, 64, 64)
    strides: tuple = (4, 1, 2, 2, 1)
    dilations: tuple = (1, 1, 1, 1, 2)
    blocks: int = 1
    output_stride: int = 16

    def cumulative_strides(self) -> tuple:
        out, acc = [], 1
        for s in self.strides:
            acc *= s
            out.append(acc)
        return tuple(out)

    def validate(self) -> None:
        if not (len(self.widths) == len(self.strides) == len(self.dilations)):
            raise ValueError("widths, strides and dilations must have one entry per stage")
        if self.strides[0] not in (1, 2, 4):
            raise ValueError("stem stride must be 1, 2 or 4")
        if self.cumulative_strides()[-1] != self.output_stride:
            raise ValueError(
                f"cumulative stride {self.cumulative_strides()[-1]} != output_stride {self.output_stride}"
            )


@dataclass
class SpamConfig:
    width: int = 8
    factor: int = 4
    enabled: bool = True
    attention: bool = True


def exchange_steps(cum_stride: int, factor: int) -> int:
    """Number of factor-``factor`` rearrangements bridging ``cum_stride``; 0 if none can."""
    steps, s = 0, cum_stride
    while s > 1 and s % factor == 0:
        s //= factor
        steps += 1
    return steps if s == 1 else 0


class ResidualBlock(Module):
    def __init__(self, in_ch, out_ch, stride=1, dilation=1, rng=None):
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, dilation=dilation)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, dilation=dilation)
        self.bn2 = BatchNorm2d(out_ch)
        if stride != 1 or in_ch != out_ch:
            self.skip = Conv2d(in_ch, out_ch, 1, rng, stride=stride, padding=0)
            self.skip_bn = BatchNorm2d(out_ch)
        else:
            self.skip = None

    def forward(self, x: Tensor) -> Tensor:
        y = F.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        s = self.skip_bn(self.skip(x)) if self.skip is not None else x
        return F.relu(y + s)


class Stem(Module):
    def __init__(self, in_ch, out_ch, stride, rng=None):
        if stride == 4:
            self.layers = [ConvBNReLU(in_ch, out_ch, 3, rng, stride=2), ConvBNReLU(out_ch, out_ch, 3, rng, stride=2)]
        else:
            self.layers = [ConvBNReLU(in_ch, out_ch, 3, rng, stride=stride)]

    def forward(self, x: Tensor) -> Tensor:
        for m in self.layers:
            x = m(x)
        return x


class Stage(Module):
    def __init__(self, in_ch, out_ch, stride, dilation, blocks, rng=None):
        self.blocks = [ResidualBlock(in_ch, out_ch, stride, dilation, rng)]
        self.blocks += [ResidualBlock(out_ch, out_ch, 1, dilation, rng) for _ in range(blocks - 1)]

    def forward(self, x: Tensor) -> Tensor:
        for b in self.blocks:
            x = b(x)
        return x


class Backbone(Module):
    def __init__(self, cfg: BackboneConfig = BackboneConfig(), rng=None):
        cfg.validate()
        self.cfg = cfg
        w = cfg.widths
        self.stages = [Stem(cfg.in_channels, w[0], cfg.strides[0], rng)]
        for s in range(1, len(w)):
            self.stages.append(Stage(w[s - 1], w[s], cfg.strides[s], cfg.dilations[s], cfg.blocks, rng))

    def forward(self, x: Tensor) -> list:
        """All stage outputs, shallow to deep."""
        os_ = self.cfg.output_stride
        if x.shape[2] % os_ or x.shape[3] % os_:
            raise ValueError(f"input dims {x.shape[2:]} not divisible by output stride {os_}")
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class ToSpam(Module):
    """Backbone feature -> SpaM resolution and width."""

    def __init__(self, in_ch, spam_width, factor, steps, attention, att_cfg, rng=None):
        self.factor = factor
        self.adapter = Conv2d(in_ch, spam_width * factor ** (2 * steps), 1, rng)
        chans = [spam_width * factor ** (2 * (steps - 1 - s)) for s in range(steps)]
        self.gates = [SCA(c, att_cfg, rng) for c in chans] if attention else []
        self.steps = steps

    def forward(self, x: Tensor) -> Tensor:
        y = self.adapter(x)
        for s in range(self.steps):
            y = pixel_shuffle(y, self.factor)
            if self.gates:
                y = self.gates[s](y)
        return y


class ToBackbone(Module):
    """SpaM feature -> backbone resolution and width."""

    def __init__(self, spam_width, out_ch, factor, steps, attention, att_cfg, rng=None):
        self.factor = factor
        chans = [spam_width * factor ** (2 * (s + 1)) for s in range(steps)]
        self.gates = [CCA(c, att_cfg, rng) for c in chans] if attention else []
        self.adapter = Conv2d(chans[-1], out_ch, 1, rng)
        self.steps = steps

    def forward(self, m: Tensor) -> Tensor:
        y = m
        for s in range(self.steps):
            y = pixel_unshuffle(y, self.factor)
            if self.gates:
                y = self.gates[s](y)
        return self.adapter(y)


class SpamNet(Module):
    """Backbone plus the SpaM stream with mutual exchange."""

    def __init__(
        self,
        bb_cfg: BackboneConfig = BackboneConfig(),
        spam_cfg: SpamConfig = SpamConfig(),
        att_cfg: AttentionConfig = AttentionConfig(),
        rng=None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.bb_cfg = bb_cfg
        self.spam_cfg = spam_cfg
        self.backbone = Backbone(bb_cfg, rng)
        cum = bb_cfg.cumulative_strides()
        self.exchange_stages = tuple(
            s for s, c in enumerate(cum) if exchange_steps(c, spam_cfg.factor) > 0
        ) if spam_cfg.enabled else ()
        if spam_cfg.enabled:
            w = spam_cfg.width
            self.spam_stem = Conv2d(bb_cfg.in_channels, w, 3, rng)
            self.spam_blocks = [ConvBNReLU(w, w, 3, rng) for _ in bb_cfg.widths]
            self.to_spam = []
            self.to_backbone = []
            for s in self.exchange_stages:
                steps = exchange_steps(cum[s], spam_cfg.factor)
                c = bb_cfg.widths[s]
                self.to_spam.append(ToSpam(c, w, spam_cfg.factor, steps, spam_cfg.attention, att_cfg, rng))
                self.to_backbone.append(
                    ToBackbone(w, c, spam_cfg.factor, steps, spam_cfg.attention, att_cfg, rng)
                )

    def forward(self, x: Tensor) -> tuple:
        """Returns (backbone stage features, final SpaM feature or None)."""
        if not self.spam_cfg.enabled:
            return self.backbone(x), None
        os_ = self.bb_cfg.output_stride
        if x.shape[2] % os_ or x.shape[3] % os_:
            raise ValueError(f"input dims {x.shape[2:]} not divisible by output stride {os_}")
        b = x
        m = self.spam_stem(x)
        feats = []
        k = 0
        for s, stage in enumerate(self.backbone.stages):
            b = stage(b)
            m = self.spam_blocks[s](m)
            if k < len(self.exchange_stages) and self.exchange_stages[k] == s:
                m_next = m + self.to_spam[k](b)
                b = b + self.to_backbone[k](m)
                m = m_next
                k += 1
            feats.append(b)
        return feats, m

    def zero_exchange(self) -> None:
        """Zero the adapters so both exchange paths add exactly nothing."""
        for path in list(getattr(self, "to_spam", [])) + list(getattr(self, "to_backbone", [])):
            path.adapter.weight.data = np.zeros_like(path.adapter.weight.data)


class AuxHead(Module):
    """FCN branch on the last backbone block: 3x3 conv-BN-ReLU, 1x1 classifier, upsample."""

    def __init__(self, in_ch, mid_ch, num_classes, rng=None):
        self.conv = ConvBNReLU(in_ch, mid_ch, 3, rng)
        self.classifier = Conv2d(mid_ch, num_classes, 1, rng, bias=True, init_std=0.01)

    def forward(self, feat: Tensor, out_hw: Optional[tuple] = None) -> Tensor:
        y = self.classifier(self.conv(feat))
        if out_hw is not None:
            y = F.bilinear_resize(y, *out_hw)
        return y
