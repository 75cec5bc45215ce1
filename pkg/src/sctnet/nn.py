"""Layers and parameter containers built on the autograd Tensor."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class Module:
    """Base container tracking parameters and child modules by attribute."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def trainable_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, p in self.named_parameters():
            if p.requires_grad:
                yield name, p

    def load_param_arrays(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        """Overwrite parameter data in place from a name -> array mapping."""
        for name, p in self.named_parameters(prefix):
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            src = arrays[name]
            if src.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name!r}: expected shape {p.data.shape}, got {src.shape}")
            p.data = src.astype(p.data.dtype, copy=True)


def he_normal(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Seeded He-normal initializer used for every convolution and linear map."""
    std = np.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv2d(Module):
    """3x3 (same, zero or reflect padded) or 1x1 convolution, stride 1."""

    def __init__(self, c_in: int, c_out: int, kernel_size: int = 3,
                 pad_mode: str = "zero", rng: np.random.Generator | None = None,
                 trainable: bool = True, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        k = kernel_size
        w = he_normal(rng, (c_out, c_in, k, k), fan_in=c_in * k * k, dtype=dtype)
        self.weight = Tensor(w, requires_grad=trainable)
        self.bias = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=trainable)
        self.pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return ag.conv2d(x, self.weight, self.bias, pad_mode=self.pad_mode)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = Tensor(he_normal(rng, (d_in, d_out), fan_in=d_in, dtype=dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.weight) + self.bias
