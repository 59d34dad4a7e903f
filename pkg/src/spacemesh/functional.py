"""Differentiable numeric kernels on :class:`~spacemesh.tensor.Tensor`.

All kernels take and return NCHW tensors unless stated otherwise. Each one
computes its forward pass with numpy and registers a backward closure via
``make_result``. Reductions whose order matters for bit-exact reproducibility
(branch-wise accumulation, batch-norm moments) are written so each output
element's summation order depends only on its own inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .tensor import Tensor, as_tensor, make_result

IGNORE_INDEX = 255
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pair(v) -> tuple:
    if isinstance(v, (int, np.integer)):
        return (int(v), int(v))
    a, b = v
    return (int(a), int(b))


def _acc(t, g: np.ndarray) -> None:
    if isinstance(t, Tensor) and t.requires_grad:
        t._accumulate(g)


def _data(v):
    return v.data if isinstance(v, Tensor) else v


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _tensors(*vs) -> list:
    return [v for v in vs if isinstance(v, Tensor)]


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad + bd

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return make_result(np.asarray(out), _tensors(a, b), backward, "add")


def sub(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad - bd

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return make_result(np.asarray(out), _tensors(a, b), backward, "sub")


def mul(a, b) -> Tensor:
    ad, bd = _data(a), _data(b)
    out = ad * bd

    def backward(g):
        if isinstance(a, Tensor) and a.requires_grad:
            a._accumulate(_unbroadcast(g * bd, a.shape))
        if isinstance(b, Tensor) and b.requires_grad:
            b._accumulate(_unbroadcast(g * ad, b.shape))

    return make_result(np.asarray(out), _tensors(a, b), backward, "mul")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    mask = xd > 0
    out = np.where(mask, xd, xd.dtype.type(0))

    def backward(g):
        _acc(x, g * mask)

    return make_result(out, [x], backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    e = np.exp(-np.abs(xd))
    out = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(xd.dtype, copy=False)

    def backward(g):
        _acc(x, g * out * (1.0 - out))

    return make_result(out, [x], backward, "sigmoid")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)

    def backward(g):
        _acc(x, g.reshape(src))

    return make_result(out, [x], backward, "reshape")


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(x, np.broadcast_to(g, shape))

    return make_result(out, [x], backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))
    shape = x.shape
    count = x.data.size // max(out.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(x, np.broadcast_to(g / count, shape))

    return make_result(out, [x], backward, "mean")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))

    def backward(g):
        _acc(x, g.transpose(inverse))

    return make_result(out, [x], backward, "transpose")


def flip_horizontal(x: Tensor) -> Tensor:
    out = np.ascontiguousarray(x.data[..., ::-1])

    def backward(g):
        _acc(x, g[..., ::-1])

    return make_result(out, [x], backward, "flip")


# --------------------------------------------------------------------------
# convolution
# --------------------------------------------------------------------------


def conv_output_hw(h: int, w: int, kernel, stride=1, padding=0, dilation=1) -> tuple:
    kh, kw = _pair(kernel)
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    eh = (kh - 1) * dh + 1
    ew = (kw - 1) * dw + 1
    return (h + 2 * ph - eh) // sh + 1, (w + 2 * pw - ew) // sw + 1


def _im2col(xp: np.ndarray, kh, kw, sh, sw, dh, dw, ho, wo) -> np.ndarray:
    n, c = xp.shape[:2]
    s0, s1, s2, s3 = xp.strides
    view = as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(s0, s1, s2 * dh, s3 * dw, s2 * sh, s3 * sw),
        writeable=False,
    )
    return view.reshape(n, c * kh * kw, ho * wo)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride=1,
    padding=0,
    dilation=1,
    groups: int = 1,
) -> Tensor:
    """Cross-correlation with per-axis stride, zero padding and dilation.

    ``weight`` has shape ``(C_out, C_in // groups, k_h, k_w)``. Dilation
    ``(i, j)`` spaces the taps ``i`` rows and ``j`` columns apart.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    co, cg, kh, kw = weight.shape
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    if min(sh, sw, dh, dw) < 1 or min(ph, pw) < 0:
        raise ValueError("stride and dilation must be >= 1 and padding >= 0")
    if groups < 1 or c % groups or co % groups:
        raise ValueError(f"groups={groups} must divide C_in={c} and C_out={co}")
    if cg * groups != c:
        raise ValueError(f"weight expects {cg * groups} input channels, input has {c}")
    ho, wo = conv_output_hw(h, w, (kh, kw), (sh, sw), (ph, pw), (dh, dw))
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output size ({ho}, {wo}) is not positive")
    if bias is not None and bias.shape != (co,):
        raise ValueError(f"bias shape {bias.shape} does not match C_out={co}")

    xd = x.data
    pointwise = kh == kw == 1 and sh == sw == 1 and ph == pw == 0
    if pointwise:
        xp = xd
        cols = xd.reshape(n, c, h * w)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else xd
        cols = _im2col(xp, kh, kw, sh, sw, dh, dw, ho, wo)
    k = cg * kh * kw
    length = ho * wo
    cols_g = cols.reshape(n, groups, k, length)
    w_g = weight.data.reshape(groups, co // groups, k)
    out = np.matmul(w_g, cols_g).reshape(n, co, ho, wo)
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)

    def backward(g):
        g_g = g.reshape(n, groups, co // groups, length)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            gw = np.matmul(g_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
            weight._accumulate(gw.reshape(weight.shape))
        if x.requires_grad:
            dcols = np.matmul(w_g.transpose(0, 2, 1), g_g)
            if pointwise:
                x._accumulate(dcols.reshape(n, c, h, w))
                return
            dcols = dcols.reshape(n, c, kh, kw, ho, wo)
            dxp = np.zeros(xp.shape, dtype=dcols.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[
                        :,
                        :,
                        i * dh : i * dh + sh * (ho - 1) + 1 : sh,
                        j * dw : j * dw + sw * (wo - 1) + 1 : sw,
                    ] += dcols[:, :, i, j]
            x._accumulate(dxp[:, :, ph : ph + h, pw : pw + w])

    parents = [x, weight] + ([bias] if bias is not None else [])
    return make_result(out, parents, backward, "conv2d")


@dataclass
class ConvParams:
    """Weights plus geometry of one convolution."""

    weight: Tensor
    bias: Optional[Tensor] = None
    stride: tuple = (1, 1)
    padding: tuple = (0, 0)
    dilation: tuple = (1, 1)
    groups: int = 1

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        self.dilation = _pair(self.dilation)
        if min(self.dilation) < 1:
            raise ValueError(f"dilation {self.dilation} must be >= 1 on both axes")

    def effective_extent(self) -> tuple:
        kh, kw = self.weight.shape[2:]
        return (kh - 1) * self.dilation[0] + 1, (kw - 1) * self.dilation[1] + 1

    def output_hw(self, h: int, w: int) -> tuple:
        return conv_output_hw(h, w, self.weight.shape[2:], self.stride, self.padding, self.dilation)

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)


@lru_cache(maxsize=64)
def _bank_plan(dilations: tuple, kh: int, kw: int, h: int, w: int):
    # (branch, tap) pairs whose shifted window touches real input; taps that
    # land entirely in the zero padding contribute nothing and are skipped.
    offsets: dict = {}
    pairs = []
    for b, (di, dj) in enumerate(dilations):
        for ky in range(kh):
            dy = (ky - kh // 2) * di
            if abs(dy) >= h:
                continue
            for kx in range(kw):
                dx = (kx - kw // 2) * dj
                if abs(dx) >= w:
                    continue
                o = offsets.setdefault((dy, dx), len(offsets))
                pairs.append((o, b, ky, kx))
    pairs.sort()
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 4)
    p_off, p_b, p_ky, p_kx = arr.T
    starts = np.flatnonzero(np.r_[True, p_off[1:] != p_off[:-1]])
    offset_list = sorted(offsets, key=offsets.get)
    return offset_list, p_off, p_b, p_ky, p_kx, p_ky * kw + p_kx, starts


def dilated_conv_bank(x: Tensor, weight: Tensor, dilations: Sequence[tuple]) -> Tensor:
    """Run one 'same'-padded convolution per dilation pair on a shared input.

    ``weight`` has shape ``(B, depth, C_in, k_h, k_w)`` with one kernel stack
    per entry of ``dilations``; the output concatenates the B branch outputs
    along channels in order, giving ``B * depth`` channels. Branch ``b``'s
    output equals ``conv2d(x, weight[b], padding=dilations[b],
    dilation=dilations[b])`` for 3x3 kernels, and is computed independently
    of every other branch.
    """
    dilations = tuple(_pair(d) for d in dilations)
    n, c, h, w = x.shape
    nb, depth, cin, kh, kw = weight.shape
    if nb != len(dilations):
        raise ValueError(f"{nb} kernel stacks for {len(dilations)} dilation pairs")
    if cin != c:
        raise ValueError(f"bank expects {cin} input channels, input has {c}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("bank kernels must have odd size")
    offsets, p_off, p_b, p_ky, p_kx, p_tap, starts = _bank_plan(dilations, kh, kw, h, w)
    taps = kh * kw
    npix = n * h * w

    xd = x.data
    xp = np.pad(xd, ((0, 0), (0, 0), (h - 1, h - 1), (w - 1, w - 1)))
    shifted = np.stack(
        [xp[:, :, h - 1 + dy : 2 * h - 1 + dy, w - 1 + dx : 2 * w - 1 + dx] for dy, dx in offsets]
    )
    shifted = shifted.transpose(0, 2, 1, 3, 4).reshape(len(offsets), c, npix)
    wd = weight.data
    w_pairs = wd[p_b, :, :, p_ky, p_kx]
    y_pairs = np.matmul(w_pairs, shifted[p_off])
    full = np.zeros((nb, taps, depth, npix), dtype=y_pairs.dtype)
    full[p_b, p_tap] = y_pairs
    acc = full[:, 0].copy()
    for t in range(1, taps):
        acc += full[:, t]
    out = np.ascontiguousarray(acc.reshape(nb * depth, n, h, w).transpose(1, 0, 2, 3))

    def backward(g):
        g_y = g.transpose(1, 0, 2, 3).reshape(nb, depth, npix)
        g_pairs = g_y[p_b]
        if weight.requires_grad:
            gw_pairs = np.matmul(g_pairs, shifted[p_off].transpose(0, 2, 1))
            gw = np.zeros(wd.shape, dtype=gw_pairs.dtype)
            gw[p_b, :, :, p_ky, p_kx] = gw_pairs
            weight._accumulate(gw)
        if x.requires_grad:
            gs_pairs = np.matmul(w_pairs.transpose(0, 2, 1), g_pairs)
            gs = np.add.reduceat(gs_pairs, starts, axis=0)
            gs = gs.reshape(len(offsets), c, n, h, w).transpose(0, 2, 1, 3, 4)
            gxp = np.zeros(xp.shape, dtype=gs.dtype)
            for o, (dy, dx) in enumerate(offsets):
                gxp[:, :, h - 1 + dy : 2 * h - 1 + dy, w - 1 + dx : 2 * w - 1 + dx] += gs[o]
            x._accumulate(gxp[:, :, h - 1 : 2 * h - 1, w - 1 : 2 * w - 1])

    return make_result(out, [x, weight], backward, "dilated_conv_bank")


def segmented_pointwise_conv(
    x: Tensor, weight: Tensor, bias: Optional[Tensor], segment: int
) -> Tensor:
    """1x1 convolution whose channel reduction runs segment by segment.

    The input channels are split into consecutive blocks of ``segment``
    channels; each block's partial product is formed separately and the
    partials are summed strictly left to right. Dropping a block whose input
    is all zeros therefore leaves the output bit-identical.
    """
    n, c, h, w = x.shape
    co = weight.shape[0]
    if weight.shape[1:] not in ((c, 1, 1), (c,)):
        raise ValueError(f"weight shape {weight.shape} does not fit {c} input channels")
    if segment < 1 or c % segment:
        raise ValueError(f"segment size {segment} does not divide {c} channels")
    nseg = c // segment
    npix = n * h * w
    xs = x.data.reshape(n, nseg, segment, h * w).transpose(1, 2, 0, 3).reshape(nseg, segment, npix)
    ws = np.ascontiguousarray(weight.data.reshape(co, nseg, segment).transpose(1, 0, 2))
    partial = np.matmul(ws, xs)
    acc = partial[0].copy()
    for k in range(1, nseg):
        acc += partial[k]
    out = np.ascontiguousarray(acc.reshape(co, n, h, w).transpose(1, 0, 2, 3))
    if bias is not None:
        out = out + bias.data.reshape(1, co, 1, 1)

    def backward(g):
        gt = g.transpose(1, 0, 2, 3).reshape(co, npix)
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        if weight.requires_grad:
            gws = np.matmul(gt[None], xs.transpose(0, 2, 1))
            weight._accumulate(gws.transpose(1, 0, 2).reshape(weight.shape))
        if x.requires_grad:
            gxs = np.matmul(ws.transpose(0, 2, 1), gt[None])
            gx = gxs.reshape(nseg, segment, n, h * w).transpose(2, 0, 1, 3).reshape(n, c, h, w)
            x._accumulate(gx)

    parents = [x, weight] + ([bias] if bias is not None else [])
    return make_result(out, parents, backward, "segmented_pointwise_conv")


# --------------------------------------------------------------------------
# normalization, pooling, resampling
# --------------------------------------------------------------------------


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch normalization.

    Training mode normalizes with the batch moments and updates the running
    statistics in place; eval mode reads the running statistics and never
    writes them.
    """
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(f"gamma/beta must have length {c}")
    m = n * h * w
    xt = x.data.transpose(1, 0, 2, 3).reshape(c, m)
    if training:
        if m == 0:
            raise ValueError("batch_norm in training mode needs a non-empty batch")
        mu = xt.mean(axis=1)
        xc = xt - mu[:, None]
        var = (xc * xc).mean(axis=1)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mu = running_mean
        var = running_var
        xc = xt - mu[:, None]
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[:, None]
    yt = gamma.data[:, None] * xhat + beta.data[:, None]
    out = np.ascontiguousarray(yt.reshape(c, n, h, w).transpose(1, 0, 2, 3))

    def backward(g):
        gt = g.transpose(1, 0, 2, 3).reshape(c, m)
        if beta.requires_grad:
            beta._accumulate(gt.sum(axis=1))
        if gamma.requires_grad:
            gamma._accumulate((gt * xhat).sum(axis=1))
        if x.requires_grad:
            dxhat = gt * gamma.data[:, None]
            if training:
                dx = (inv[:, None] / m) * (
                    m * dxhat
                    - dxhat.sum(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
                )
            else:
                dx = dxhat * inv[:, None]
            x._accumulate(dx.reshape(c, n, h, w).transpose(1, 0, 2, 3))

    return make_result(out, [x, gamma, beta], backward, "batch_norm")


def pool(x: Tensor, kind: str = "avg", reduce: str = "spatial", groups: int = 1) -> Tensor:
    """Average or max pooling over space or over channel groups.

    ``reduce="spatial"`` gives ``(N, C, 1, 1)``; ``reduce="channel"`` splits
    the channels into ``groups`` consecutive groups and reduces each, giving
    ``(N, groups, H, W)``. Max routes its gradient to the first maximizer.
    """
    if kind not in ("avg", "max"):
        raise ValueError(f"unknown pool kind {kind!r}")
    n, c, h, w = x.shape
    if groups < 1 or c % groups:
        raise ValueError(f"groups={groups} does not divide {c} channels")
    xd = x.data
    if reduce == "spatial":
        flat = xd.reshape(n, c, h * w)
        out_shape = (n, c, 1, 1)
    elif reduce == "channel":
        flat = xd.reshape(n, groups, c // groups, h * w).transpose(0, 1, 3, 2)
        out_shape = (n, groups, h, w)
    else:
        raise ValueError(f"unknown pool reduce axis {reduce!r}")
    span = flat.shape[-1]
    if kind == "avg":
        out = flat.mean(axis=-1)
    else:
        idx = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    out = np.ascontiguousarray(out.reshape(out_shape))

    def backward(g):
        if not x.requires_grad:
            return
        gf = g.reshape(flat.shape[:-1])
        if kind == "avg":
            gflat = np.broadcast_to((gf / span)[..., None], flat.shape)
        else:
            gflat = np.zeros(flat.shape, dtype=g.dtype)
            np.put_along_axis(gflat, idx[..., None], gf[..., None], axis=-1)
        if reduce == "spatial":
            x._accumulate(np.reshape(gflat, (n, c, h, w)))
        else:
            x._accumulate(np.ascontiguousarray(gflat.transpose(0, 1, 3, 2)).reshape(n, c, h, w))

    return make_result(out, [x], backward, f"{kind}_pool")


def _resize_axis(in_size: int, out_size: int, align_corners: bool):
    d = np.arange(out_size, dtype=np.float64)
    if align_corners:
        src = d * ((in_size - 1) / (out_size - 1)) if out_size > 1 else np.zeros_like(d)
    else:
        src = np.maximum((d + 0.5) * (in_size / out_size) - 0.5, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), in_size - 1)
    i1 = np.minimum(i0 + 1, in_size - 1)
    frac = src - i0
    mat = np.zeros((out_size, in_size))
    np.add.at(mat, (np.arange(out_size), i0), 1.0 - frac)
    np.add.at(mat, (np.arange(out_size), i1), frac)
    return i0, i1, frac, mat


def bilinear_resize(x: Tensor, out_h: int, out_w: int, align_corners: bool = False) -> Tensor:
    """Bilinear resampling to ``(out_h, out_w)``.

    Half-pixel centers by default, with source coordinates clamped to the
    input. Each axis is interpolated as ``a + f * (b - a)`` so constant
    inputs come back exactly.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize target ({out_h}, {out_w}) must be positive")
    n, c, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return make_result(x.data.copy(), [x], lambda g: _acc(x, g), "resize")
    dt = x.data.dtype
    i0h, i1h, fh, mh = _resize_axis(h, out_h, align_corners)
    i0w, i1w, fw, mw = _resize_axis(w, out_w, align_corners)
    xd = x.data
    a, b = xd[:, :, i0h, :], xd[:, :, i1h, :]
    t = a + fh.astype(dt)[:, None] * (b - a)
    a, b = t[..., i0w], t[..., i1w]
    out = np.ascontiguousarray(a + fw.astype(dt) * (b - a))
    mh = mh.astype(dt)
    mw = mw.astype(dt)

    def backward(g):
        if x.requires_grad:
            x._accumulate(np.matmul(mh.T, np.matmul(g, mw)))

    return make_result(out, [x], backward, "resize")


# --------------------------------------------------------------------------
# structure
# --------------------------------------------------------------------------


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ValueError("concat_channels needs at least one tensor")
    n, _, h, w = xs[0].shape
    for t in xs:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ValueError(f"cannot concat {t.shape} with {xs[0].shape}: N,H,W must match")
    out = np.concatenate([t.data for t in xs], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])

    def backward(g):
        for t, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            _acc(t, g[:, lo:hi])

    return make_result(out, xs, backward, "concat")


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = np.ascontiguousarray(x.data[:, start:stop])
    shape = x.shape

    def backward(g):
        if x.requires_grad:
            full = np.zeros(shape, dtype=g.dtype)
            full[:, start:stop] = g
            x._accumulate(full)

    return make_result(out, [x], backward, "slice")


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-likelihood over pixels whose label is not ignored.

    Returns 0 (with zero gradient) when every pixel is ignored.
    """
    z = logits.data
    n, k, h, w = z.shape
    labels = np.asarray(labels)
    if labels.shape != (n, h, w):
        raise ValueError(f"labels shape {labels.shape} does not match logits {z.shape}")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise ValueError(f"label {int(labels[bad][0])} outside [0, {k}) and not ignore_index")
    count = int(valid.sum())
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    s = ez.sum(axis=1, keepdims=True)
    logp = z - zmax - np.log(s)
    lab = np.where(valid, labels, 0).astype(np.int64)
    picked = np.take_along_axis(logp, lab[:, None], axis=1)[:, 0]
    if count:
        loss = -np.sum(picked[valid], dtype=np.float64) / count
    else:
        loss = 0.0
    out = np.array(loss, dtype=z.dtype)

    def backward(g):
        if not logits.requires_grad or count == 0:
            if logits.requires_grad:
                logits._accumulate(np.zeros_like(z))
            return
        p = ez / s
        np.put_along_axis(p, lab[:, None], np.take_along_axis(p, lab[:, None], axis=1) - 1.0, axis=1)
        p *= (valid[:, None] * (float(g) / count)).astype(p.dtype)
        logits._accumulate(p)

    return make_result(out, [logits], backward, "cross_entropy")
