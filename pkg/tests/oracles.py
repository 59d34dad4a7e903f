"""Slow, obviously-correct reference implementations used only by the tests."""

import math

import numpy as np


def conv2d_loops(x, w, b=None, stride=(1, 1), padding=(0, 0), dilation=(1, 1), groups=1):
    """Cross-correlation by explicit loops over every index, in float64."""
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    n, c, h, wd = x.shape
    co, cg, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    dh, dw = dilation
    ho = (h + 2 * ph - dh * (kh - 1) - 1) // sh + 1
    wo = (wd + 2 * pw - dw * (kw - 1) - 1) // sw + 1
    opg = co // groups
    out = np.zeros((n, co, ho, wo))
    for ni in range(n):
        for o in range(co):
            g = o // opg
            for y in range(ho):
                for xx in range(wo):
                    acc = 0.0 if b is None else float(b[o])
                    for ci in range(cg):
                        for i in range(kh):
                            for j in range(kw):
                                r = y * sh - ph + i * dh
                                s = xx * sw - pw + j * dw
                                if 0 <= r < h and 0 <= s < wd:
                                    acc += w[o, ci, i, j] * x[ni, g * cg + ci, r, s]
                    out[ni, o, y, xx] = acc
    return out


def shuffle_loops(x, r):
    n, c, h, w = x.shape
    out = np.zeros((n, c // (r * r), h * r, w * r), x.dtype)
    for ni in range(n):
        for ci in range(c // (r * r)):
            for y in range(h):
                for xx in range(w):
                    for a in range(r):
                        for b in range(r):
                            out[ni, ci, y * r + a, xx * r + b] = x[ni, ci * r * r + a * r + b, y, xx]
    return out


def miou_sets(pred, gt, k, ignore=255):
    """IoU per class from explicit pixel-coordinate sets."""
    pred = np.asarray(pred).ravel()
    gt = np.asarray(gt).ravel()
    valid = {i for i in range(gt.size) if gt[i] != ignore}
    ious = []
    for c in range(k):
        p = {i for i in valid if pred[i] == c}
        g = {i for i in valid if gt[i] == c}
        union = p | g
        ious.append(len(p & g) / len(union) if union else float("nan"))
    present = [v for v in ious if not math.isnan(v)]
    return ious, (sum(present) / len(present) if present else 0.0)


def resize_1d(v, out):
    """Half-pixel linear resampling of one row with edge clamping."""
    n = len(v)
    res = []
    for i in range(out):
        s = (i + 0.5) * n / out - 0.5
        s = min(max(s, 0.0), n - 1)
        lo = int(math.floor(s))
        hi = min(lo + 1, n - 1)
        f = s - lo
        res.append(v[lo] * (1 - f) + v[hi] * f)
    return res


def cross_entropy_pixel(logits, label):
    m = max(logits)
    z = sum(math.exp(v - m) for v in logits)
    return -(logits[label] - m - math.log(z))
