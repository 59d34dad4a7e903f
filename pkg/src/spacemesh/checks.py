"""Finite-difference gradient checks for each building block.

Every check builds a small instance, projects its output onto a fixed random
tensor to get a scalar, and compares the float32 tape gradient with float64
central differences for the input and for each parameter.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import functional as F
from .attention import CCA, SCA, AttentionConfig
from .config import ModelConfig
from .gradcheck import grad_check, grad_check_params
from .metrocon import MetroCon, build_grid
from .model import Decoder, SpaceMeshLab
from .nn import BatchNorm2d, Module
from .tensor import Parameter, Tensor


def _projector(shape, rng) -> Tensor:
    return Tensor(rng.standard_normal(shape))


def _check_module(module: Module, make_out: Callable, x: np.ndarray, rng, eps=1e-3, max_elems=24) -> float:
    """Max relative error over the input and every parameter of ``module``."""
    probe = make_out(Tensor(x))
    r = _projector(probe.shape, rng)

    def loss_of(xt):
        return F.sum(F.mul(make_out(xt), r))

    worst = grad_check(loss_of, x, eps=eps, max_elems=max_elems)
    params = [p for _, p in module.named_parameters()]
    xt = Tensor(x)
    errs = grad_check_params(lambda: loss_of(xt), params, eps=eps, max_elems=max_elems)
    return max([worst, *errs.values()])


def check_conv(rng) -> float:
    w = Parameter(rng.standard_normal((6, 2, 3, 3)).astype(np.float32) * 0.3)
    b = Parameter(rng.standard_normal(6).astype(np.float32))
    holder = Module()
    holder.w, holder.b = w, b
    x = rng.standard_normal((2, 4, 9, 11)).astype(np.float32)
    return _check_module(holder, lambda t: F.conv2d(t, w, b, (2, 1), (2, 3), (2, 3), groups=2), x, rng)


def check_batchnorm(rng) -> float:
    bn = BatchNorm2d(3)
    bn.gamma.data = rng.uniform(0.5, 1.5, 3).astype(np.float32)
    bn.beta.data = rng.standard_normal(3).astype(np.float32)
    x = rng.standard_normal((3, 3, 4, 4)).astype(np.float32)
    return _check_module(bn, bn, x, rng)


def check_sca(rng) -> float:
    m = SCA(8, AttentionConfig(groups=4, sca_kernel=3), rng)
    x = rng.standard_normal((2, 8, 6, 6)).astype(np.float32)
    return _check_module(m, m, x, rng, eps=1e-4)


def check_cca(rng) -> float:
    m = CCA(16, AttentionConfig(groups=4, cca_reduction=4), rng)
    x = rng.standard_normal((2, 16, 5, 5)).astype(np.float32)
    return _check_module(m, m, x, rng, eps=1e-4)


def check_metrocon(rng) -> float:
    grid = build_grid((1, 2), (1, 3), total_budget=8)
    m = MetroCon.from_grid(3, grid, rng)
    m.confidence.data = rng.uniform(0.5, 1.5, 4).astype(np.float32)
    x = rng.standard_normal((2, 3, 6, 7)).astype(np.float32)
    return _check_module(m, m, x, rng, eps=1e-4)


def check_decoder(rng) -> float:
    att = AttentionConfig(groups=2, sca_kernel=3, cca_reduction=2)
    dec = Decoder(8, 4, 2, 3, spam=True, attention=True, att_cfg=att, factor=2, proj_width=8, width=4, rng=rng)
    head = Tensor(rng.standard_normal((2, 8, 2, 2)).astype(np.float32))
    low = rng.standard_normal((2, 2, 8, 8)).astype(np.float32)
    return _check_module(dec, lambda t: dec(head, t, (8, 8)), low, rng, eps=1e-4)


def tiny_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(
        num_classes=3,
        widths=(4, 4, 8, 8, 8),
        spam_width=2,
        groups=2,
        sca_kernel=3,
        cca_reduction=2,
        rates_v=(1, 2),
        rates_h=(1, 2),
        channel_budget=8,
        head_proj=32,
        decoder_width=4,
        aux_width=4,
        seed=seed,
    )


def check_full_model(rng) -> float:
    model = SpaceMeshLab(tiny_model_config(int(rng.integers(1 << 16))))
    # 32x32 keeps four values per channel in the deepest batch norm; at 16x16
    # it would normalize two values and every upstream gradient would vanish.
    x = rng.standard_normal((2, 3, 32, 32)).astype(np.float32)
    labels = rng.integers(0, 3, (2, 32, 32))

    def loss_of(xt):
        main, aux = model(xt)
        return F.add(F.cross_entropy(main, labels), F.mul(F.cross_entropy(aux, labels), 0.4))

    # Thousands of ReLUs sit downstream of every weight; a small step keeps
    # the float64 differences from straddling a kink.
    worst = grad_check(loss_of, x, eps=1e-5, max_elems=16)
    params = [p for _, p in model.named_parameters()]
    xt = Tensor(x)
    errs = grad_check_params(lambda: loss_of(xt), params, eps=1e-5, max_elems=4)
    return max([worst, *errs.values()])


CHECKS = (
    ("conv2d", check_conv),
    ("batch_norm", check_batchnorm),
    ("sca", check_sca),
    ("cca", check_cca),
    ("metrocon_2x2", check_metrocon),
    ("decoder", check_decoder),
    ("full_model", check_full_model),
)


def run_gradchecks(seed: int = 0) -> list:
    """``[(name, max relative error)]`` for every check."""
    return [(name, fn(np.random.default_rng(seed + i))) for i, (name, fn) in enumerate(CHECKS)]
