"""Pixel shuffle / un-shuffle: lossless channel <-> space rearrangement.

Index mapping (row-major within each r x r cell)::

    shuffled[n, c, h*r + a, w*r + b] == x[n, c*r*r + a*r + b, h, w]
"""

from __future__ import annotations

from .tensor import Tensor, make_result


def _check_factor(r: int) -> None:
    if int(r) != r or r < 1:
        raise ValueError(f"shuffle factor must be a positive integer, got {r}")


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """(N, C*r^2, H, W) -> (N, C, H*r, W*r)."""
    _check_factor(r)
    n, c, h, w = x.shape
    if c % (r * r):
        raise ValueError(f"pixel_shuffle: {c} channels not divisible by r^2={r * r}")
    co = c // (r * r)
    out = x.data.reshape(n, co, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, co, h * r, w * r)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(n, co, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w))

    return make_result(out, [x], backward, "pixel_shuffle")


def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(N, C, H*r, W*r) -> (N, C*r^2, H, W); exact inverse of :func:`pixel_shuffle`."""
    _check_factor(r)
    n, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ValueError(f"pixel_unshuffle: spatial dims ({hr}, {wr}) not divisible by r={r}")
    h, w = hr // r, wr // r
    out = x.data.reshape(n, c, h, r, w, r).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * r * r, h, w)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(n, c, r, r, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, hr, wr))

    return make_result(out, [x], backward, "pixel_unshuffle")
