"""Central-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def relative_error(g_fd: np.ndarray, g_ad: np.ndarray) -> float:
    """Max over elements of |fd - ad| / max(|fd|, |ad|, 1e-8)."""
    g_fd = np.asarray(g_fd, dtype=np.float64)
    g_ad = np.asarray(g_ad, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(g_fd), np.abs(g_ad)), 1e-8)
    return float(np.max(np.abs(g_fd - g_ad) / denom)) if g_fd.size else 0.0


def _sample(size: int, max_elems: Optional[int], rng) -> np.ndarray:
    if max_elems is None or size <= max_elems:
        return np.arange(size)
    rng = np.random.default_rng(rng)
    return np.sort(rng.choice(size, max_elems, replace=False))


def _scalar(y: Tensor) -> float:
    if y.data.size != 1:
        raise ValueError("gradient check needs a scalar-valued function")
    v = float(np.asarray(y.data, dtype=np.float64).reshape(-1)[0])
    if not np.isfinite(v):
        raise FloatingPointError("function under check returned a non-finite value")
    return v


def grad_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-3,
    max_elems: Optional[int] = None,
    seed: int = 0,
    fd_dtype=np.float64,
) -> float:
    """Compare the tape gradient of scalar ``f`` at ``x`` with central differences.

    The tape gradient is computed in ``x``'s own precision (float32 by
    default). Finite differences are evaluated in ``fd_dtype``; numpy
    promotion carries a float64 input through every op, so the difference
    quotient is not swamped by float32 rounding of ``f``.

    Returns the maximum relative error over the checked elements.
    """
    xd = np.asarray(x.data if isinstance(x, Tensor) else x)
    if xd.dtype not in (np.float32, np.float64):
        xd = xd.astype(np.float32)

    xt = Tensor(xd.copy(), requires_grad=True, dtype=xd.dtype)
    y = f(xt)
    _scalar(y)
    y.backward()
    g_ad = xt.grad if xt.grad is not None else np.zeros_like(xd)

    idx = _sample(xd.size, max_elems, seed)
    base = xd.astype(fd_dtype)
    g_fd = np.empty(len(idx))
    with no_grad():
        for k, i in enumerate(idx):
            xp = base.copy().reshape(-1)
            xp[i] += eps
            fp = _scalar(f(Tensor(xp.reshape(xd.shape), dtype=fd_dtype)))
            xp[i] -= 2 * eps
            fm = _scalar(f(Tensor(xp.reshape(xd.shape), dtype=fd_dtype)))
            g_fd[k] = (fp - fm) / (2 * eps)
    return relative_error(g_fd, g_ad.reshape(-1)[idx])


def grad_check_params(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-3,
    max_elems: Optional[int] = 8,
    seed: int = 0,
    fd_dtype=np.float64,
) -> dict:
    """Check the gradient of a closure w.r.t. each tensor in ``params``.

    ``loss_fn`` must rebuild the scalar from the current ``.data`` of the
    parameters on each call. Returns ``{index: max_relative_error}``.
    """
    for p in params:
        p.grad = None
    y = loss_fn()
    _scalar(y)
    y.backward()
    ad = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    errors = {}
    with no_grad():
        for pi, p in enumerate(params):
            orig = p.data
            idx = _sample(orig.size, max_elems, seed + pi)
            base = orig.astype(fd_dtype).reshape(-1)
            g_fd = np.empty(len(idx))
            try:
                for k, i in enumerate(idx):
                    pert = base.copy()
                    pert[i] += eps
                    p.data = pert.reshape(orig.shape)
                    fp = _scalar(loss_fn())
                    pert[i] -= 2 * eps
                    p.data = pert.reshape(orig.shape)
                    fm = _scalar(loss_fn())
                    g_fd[k] = (fp - fm) / (2 * eps)
            finally:
                p.data = orig
            errors[pi] = relative_error(g_fd, ad[pi].reshape(-1)[idx])
    return errors
