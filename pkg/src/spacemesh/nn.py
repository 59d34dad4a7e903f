"""Parameter containers and the small set of layers the model is built from."""

from __future__ import annotations

from typing import Iterator, Optional

import numpy as np

from . import functional as F
from .tensor import Parameter, Tensor


class Buffer:
    """Non-trainable state saved alongside parameters (e.g. running stats)."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        self.data = np.asarray(data, dtype=np.float32)


class Module:
    """Base container. Parameters, buffers and child modules are discovered
    from instance attributes in assignment order, which fixes the
    enumeration order used by checkpoints."""

    training: bool = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self):
        for name, v in vars(self).items():
            if isinstance(v, (Parameter, Buffer, Module)):
                yield name, v
            elif isinstance(v, (list, tuple)) and v and all(isinstance(m, Module) for m in v):
                for i, m in enumerate(v):
                    yield f"{name}.{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, v in self._children():
            full = f"{prefix}{name}"
            if isinstance(v, Parameter):
                yield full, v
            elif isinstance(v, Module):
                yield from v.named_parameters(full + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name, v in self._children():
            full = f"{prefix}{name}"
            if isinstance(v, Buffer):
                yield full, v
            elif isinstance(v, Module):
                yield from v.named_buffers(full + ".")

    def named_state(self) -> Iterator[tuple]:
        """Parameters then buffers, each in enumeration order."""
        yield from self.named_parameters()
        yield from self.named_buffers()

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, v in self._children():
            if isinstance(v, Module):
                yield from v.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))


def kaiming(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / max(fan_in, 1))).astype(np.float32)


class Conv2d(Module):
    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        kernel: int = 3,
        rng: Optional[np.random.Generator] = None,
        stride=1,
        padding=None,
        dilation=1,
        groups: int = 1,
        bias: bool = False,
        init_std: Optional[float] = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        if in_ch % groups or out_ch % groups:
            raise ValueError(f"groups={groups} must divide {in_ch} and {out_ch}")
        self.stride = stride
        self.dilation = F._pair(dilation)
        if padding is None:
            padding = (self.dilation[0] * (kernel // 2), self.dilation[1] * (kernel // 2))
        self.padding = padding
        self.groups = groups
        shape = (out_ch, in_ch // groups, kernel, kernel)
        fan_in = (in_ch // groups) * kernel * kernel
        if init_std is None:
            w = kaiming(rng, shape, fan_in)
        else:
            w = (rng.standard_normal(shape) * init_std).astype(np.float32)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_ch, np.float32)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding, self.dilation, self.groups)


class BatchNorm2d(Module):
    def __init__(self, ch: int):
        self.gamma = Parameter(np.ones(ch, np.float32))
        self.beta = Parameter(np.zeros(ch, np.float32))
        self.running_mean = Buffer(np.zeros(ch, np.float32))
        self.running_var = Buffer(np.ones(ch, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return F.batch_norm(
            x, self.gamma, self.beta, self.running_mean.data, self.running_var.data, self.training
        )


class ConvBNReLU(Module):
    """conv -> batch norm -> ReLU."""

    def __init__(self, in_ch, out_ch, kernel=3, rng=None, stride=1, dilation=1):
        self.conv = Conv2d(in_ch, out_ch, kernel, rng, stride=stride, dilation=dilation)
        self.bn = BatchNorm2d(out_ch)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.bn(self.conv(x)))
