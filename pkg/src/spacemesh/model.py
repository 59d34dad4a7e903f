"""Decoder and full SpaceMeshLab assembly."""

from __future__ import annotations

import copy
from typing import Optional

import numpy as np

from . import functional as F
from .attention import CCA, SCA, AttentionConfig
from .config import ModelConfig
from .metrocon import ASPP, MetroCon, build_grid
from .nn import BatchNorm2d, Conv2d, ConvBNReLU, Module, kaiming
from .rearrange import pixel_shuffle, pixel_unshuffle
from .spam_net import AuxHead, SpamNet
from .tensor import Parameter, Tensor


class Decoder(Module):
    """Brings the stride-16 context and the stride-1 SpaM feature to stride 4,
    concatenates them, and classifies.

    The context path is a 1x1 projection (reduced segment by segment, see
    ``segmented_pointwise_conv``) followed by pixel shuffle and SCA; the SpaM
    path is pixel un-shuffle followed by CCA. Without SpaM the low-level input
    is the backbone's stride-4 feature, used as is.
    """

    def __init__(
        self,
        head_ch: int,
        head_segment: int,
        low_ch: int,
        num_classes: int,
        spam: bool = True,
        attention: bool = True,
        att_cfg: AttentionConfig = AttentionConfig(),
        factor: int = 4,
        proj_width: int = 256,
        width: int = 64,
        rng=None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        if proj_width % (factor * factor):
            raise ValueError(f"head projection width {proj_width} not divisible by {factor * factor}")
        self.factor = factor
        self.head_segment = head_segment
        self.spam = spam
        self.project = Parameter(kaiming(rng, (proj_width, head_ch, 1, 1), head_ch))
        self.project_bn = BatchNorm2d(proj_width)
        shuffled = proj_width // (factor * factor)
        self.head_gate = SCA(shuffled, att_cfg, rng) if attention else None
        low_out = low_ch * factor * factor if spam else low_ch
        self.low_gate = CCA(low_out, att_cfg, rng) if (attention and spam) else None
        self.fuse1 = ConvBNReLU(shuffled + low_out, width, 3, rng)
        self.fuse2 = ConvBNReLU(width, width, 3, rng)
        self.classifier = Conv2d(width, num_classes, 1, rng, bias=True, init_std=0.01)

    def forward(self, head_out: Tensor, low: Tensor, out_hw: tuple) -> Tensor:
        r = self.factor
        h = F.segmented_pointwise_conv(head_out, self.project, None, self.head_segment)
        h = F.relu(self.project_bn(h))
        h = pixel_shuffle(h, r)
        if self.head_gate is not None:
            h = self.head_gate(h)
        if self.spam:
            if low.shape[2] != head_out.shape[2] * r * r or low.shape[3] != head_out.shape[3] * r * r:
                raise ValueError(
                    f"SpaM feature {low.shape[2:]} is not {r * r}x the context feature {head_out.shape[2:]}"
                )
            low = pixel_unshuffle(low, r)
            if self.low_gate is not None:
                low = self.low_gate(low)
        if low.shape[2:] != h.shape[2:]:
            raise ValueError(f"decoder inputs meet at {h.shape[2:]} vs {low.shape[2:]}")
        y = self.fuse2(self.fuse1(F.concat_channels([h, low])))
        return F.bilinear_resize(self.classifier(y), *out_hw)


class SpaceMeshLab(Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        bb = cfg.backbone()
        self.encoder = SpamNet(bb, cfg.spam_config(), cfg.attention_config(), rng)
        c_top = bb.widths[-1]
        if cfg.head == "metrocon":
            grid = build_grid(cfg.rates_v, cfg.rates_h, cfg.channel_budget)
            self.head = MetroCon.from_grid(c_top, grid, rng)
        elif cfg.head == "aspp":
            self.head = ASPP(c_top, cfg.aspp_width, cfg.aspp_rates, rng)
        else:
            raise ValueError(f"unknown head {cfg.head!r}")
        cum = bb.cumulative_strides()
        stride4 = [s for s, c in enumerate(cum) if c == cfg.shuffle_factor]
        if not cfg.spam and not stride4:
            raise ValueError("without SpaM the decoder needs a backbone stage at stride 4")
        self.low_stage = stride4[-1] if stride4 else None
        low_ch = cfg.spam_width if cfg.spam else bb.widths[self.low_stage]
        self.decoder = Decoder(
            self.head.out_channels,
            self.head.segment,
            low_ch,
            cfg.num_classes,
            spam=cfg.spam,
            attention=cfg.attention,
            att_cfg=cfg.attention_config(),
            factor=cfg.shuffle_factor,
            proj_width=cfg.head_proj,
            width=cfg.decoder_width,
            rng=rng,
        )
        self.aux = AuxHead(c_top, cfg.aux_width, cfg.num_classes, rng)

    def forward(self, x: Tensor) -> tuple:
        """Returns ``(main_logits, aux_logits)`` in training mode and
        ``(main_logits, None)`` in eval mode, both at input resolution."""
        if not isinstance(x, Tensor):
            x = Tensor(x)
        _, _, h, w = x.shape
        if h % 16 or w % 16:
            raise ValueError(f"input ({h}, {w}) must be a multiple of 16; see snap_to_16")
        feats, m = self.encoder(x)
        ctx = self.head(feats[-1])
        low = m if self.cfg.spam else feats[self.low_stage]
        logits = self.decoder(ctx, low, (h, w))
        if not self.training:
            return logits, None
        return logits, self.aux(feats[-1], (h, w))

    def predict(self, x: Tensor) -> Tensor:
        """Eval-mode main logits."""
        return self.eval()(x)[0]

    def without_branch(self, k: int) -> "SpaceMeshLab":
        """Copy with MetroCon branch ``k`` deleted; every other weight shared by value."""
        if not isinstance(self.head, MetroCon):
            raise TypeError("branch removal needs a MetroCon head")
        other = copy.deepcopy(self)
        d = self.head.depth
        other.head = self.head.without_branch(k)
        keep = np.r_[0 : k * d, (k + 1) * d : self.head.out_channels]
        other.decoder.project = Parameter(self.decoder.project.data[:, keep].copy())
        return other
