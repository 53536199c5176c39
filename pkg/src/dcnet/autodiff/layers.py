"""Parameterised layers and the module/parameter registry."""
from __future__ import annotations

from collections import OrderedDict
from typing import Iterator, Optional

import numpy as np

from . import ops
from .tensor import Tensor


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: Optional[str] = None):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """Truncated-normal He initialisation (resample beyond two standard deviations)."""
    std = np.sqrt(2.0 / fan_in) / 0.87962566103423978
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


class Module:
    """Container that registers parameters, buffers and child modules by attribute name."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, key, value):
        if isinstance(value, Parameter):
            if any(value is p for p in self._params.values()):
                raise ValueError(f"parameter {key!r} registered twice")
            self._params[key] = value
        elif isinstance(value, Module):
            self._modules[key] = value
        object.__setattr__(self, key, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def add_module(self, name: str, module: "Module") -> "Module":
        setattr(self, name, module)
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen = set()
        for name, p in self._named(prefix, "_params"):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        yield from self._named(prefix, "_buffers")

    def _named(self, prefix, attr):
        for name, v in getattr(self, attr).items():
            yield prefix + name, v
        for mname, mod in self._modules.items():
            yield from mod._named(prefix + mname + ".", attr)

    def modules(self) -> Iterator["Module"]:
        yield self
        for mod in self._modules.values():
            yield from mod.modules()

    def train(self, mode: bool = True) -> "Module":
        for mod in self.modules():
            object.__setattr__(mod, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((k, p.data) for k, p in self.named_parameters())
        state.update((k, b) for k, b in self.named_buffers())
        return state

    def load_state_dict(self, state: dict) -> None:
        for k, p in self.named_parameters():
            if k not in state:
                raise KeyError(f"missing parameter {k!r}")
            if state[k].shape != p.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for k, b in self.named_buffers():
            if k in state:
                b[...] = state[k]

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    def __init__(self, cin: int, cout: int, k: int = 3, stride: int = 1, dilation: int = 1,
                 bias: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.dilation = stride, dilation
        self.padding = "same"
        self.weight = Parameter(he_normal(rng, (k, k, cin, cout), k * k * cin))
        if bias:
            self.bias = Parameter(np.zeros(cout))
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride,
                          dilation=self.dilation, padding=self.padding)

    def macs(self, h: int, w: int) -> int:
        return (h // self.stride) * (w // self.stride) * self.k * self.k * self.cin * self.cout


class Linear(Module):
    def __init__(self, cin: int, cout: int, bias: bool = True, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.cin, self.cout = cin, cout
        self.weight = Parameter(he_normal(rng, (cin, cout), cin))
        if bias:
            self.bias = Parameter(np.zeros(cout))
        else:
            object.__setattr__(self, "bias", None)

    def forward(self, x):
        y = ops.matmul(x, self.weight)
        return y if self.bias is None else ops.add(y, self.bias)


class BatchNorm(Module):
    def __init__(self, c: int, momentum: float = 0.9, eps: float = 1e-5):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.ones(c))
        self.beta = Parameter(np.zeros(c))
        self.register_buffer("running_mean", np.zeros(c))
        self.register_buffer("running_var", np.ones(c))

    def forward(self, x):
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class ConvUnit(Module):
    """Convolution, batch normalisation and ReLU: the ``f_{a x a}`` building block.

    The convolution has no bias: batch normalisation would cancel it exactly.
    """

    def __init__(self, cin: int, cout: int, k: int = 3, dilation: int = 1,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(cin, cout, k, dilation=dilation, bias=False, rng=rng)
        self.bn = BatchNorm(cout)

    def forward(self, x):
        return ops.relu(self.bn(self.conv(x)))


def set_padding(module: Module, mode: str) -> None:
    """Switch every convolution under ``module`` to ``"same"`` or ``"cyclic"`` padding."""
    for m in module.modules():
        if isinstance(m, Conv2d) and m.padding != "valid":
            m.padding = mode
