"""Layers and parameter bookkeeping on top of the autodiff tape.

Modules own Parameters (tensors with requires_grad=True) and discover them
by walking their attributes in insertion order, so parameter ordering is
deterministic given an identical construction path. Initialization draws
from an explicit numpy Generator; two modules built with equally seeded
generators are bitwise identical.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Parameter(Tensor):
    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


def _scan(name, attr):
    if isinstance(attr, Parameter):
        yield name, attr
    elif isinstance(attr, Module):
        yield from attr.named_parameters(name + ".")
    elif isinstance(attr, (list, tuple)):
        for i, item in enumerate(attr):
            yield from _scan(f"{name}.{i}", item)


class Module:
    """Base class: parameter discovery, state dicts, temporary param swaps."""

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix: str = ""):
        for name, attr in self.__dict__.items():
            yield from _scan(f"{prefix}{name}", attr)

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict):
        named = dict(self.named_parameters())
        missing = sorted(set(named) - set(state))
        extra = sorted(set(state) - set(named))
        if missing or extra:
            raise ValueError(f"state dict mismatch: missing={missing}, unexpected={extra}")
        for name, p in named.items():
            if state[name].shape != p.data.shape:
                raise ValueError(
                    f"shape mismatch for {name}: checkpoint {state[name].shape}, model {p.data.shape}"
                )
            p.data = state[name].astype(p.data.dtype, copy=True)

    @contextlib.contextmanager
    def using_params(self, values: dict):
        """Temporarily swap in another parameter set (e.g. a teacher copy)."""
        named = dict(self.named_parameters())
        if set(values) != set(named):
            raise ValueError("parameter set is not congruent with this module")
        saved = {name: p.data for name, p in named.items()}
        for name, p in named.items():
            if values[name].shape != p.data.shape:
                raise ValueError(f"shape mismatch for {name}")
            p.data = values[name]
        try:
            yield
        finally:
            for name, p in named.items():
                p.data = saved[name]


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 bias: bool = True, zero_init: bool = False, dtype=np.float32):
        if zero_init:
            w = np.zeros((in_features, out_features))
        else:
            w = rng.standard_normal((in_features, out_features)) / np.sqrt(in_features)
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(out_features, dtype=dtype)) if bias else None

    def forward(self, x):
        out = ad.matmul(x, self.weight)
        if self.bias is not None:
            out = ad.add(out, self.bias)
        return out


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 rng: np.random.Generator, stride: int = 1, padding: int | None = None,
                 bias: bool = True, zero_init: bool = False, dtype=np.float32):
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        fan_in = in_channels * kernel_size * kernel_size
        if zero_init:
            w = np.zeros((out_channels, in_channels, kernel_size, kernel_size))
        else:
            w = rng.standard_normal((out_channels, in_channels, kernel_size, kernel_size)) / np.sqrt(fan_in)
        self.weight = Parameter(w.astype(dtype))
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, bias=self.bias, stride=self.stride, padding=self.padding)


class GroupNorm(Module):
    def __init__(self, channels: int, num_groups: int = 8, eps: float = 1e-5, dtype=np.float32):
        if channels % num_groups:
            raise ValueError(f"channels {channels} not divisible by {num_groups} groups")
        self.num_groups = num_groups
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))

    def forward(self, x):
        b, c, h, w = x.shape
        g = self.num_groups
        grouped = ad.reshape(x, (b, g, (c // g) * h * w))
        mean = ad.tmean(grouped, axis=2, keepdims=True)
        centered = ad.sub(grouped, mean)
        var = ad.tmean(ad.mul(centered, centered), axis=2, keepdims=True)
        normed = ad.mul(centered, ad.power(ad.add(var, self.eps), -0.5))
        normed = ad.reshape(normed, (b, c, h, w))
        gamma = ad.reshape(self.gamma, (1, c, 1, 1))
        beta = ad.reshape(self.beta, (1, c, 1, 1))
        return ad.add(ad.mul(normed, gamma), beta)


class SelfAttention2d(Module):
    """Single-head attention over spatial positions, residual, zero-init out."""

    def __init__(self, channels: int, rng: np.random.Generator, num_groups: int = 8, dtype=np.float32):
        self.channels = channels
        self.norm = GroupNorm(channels, num_groups=num_groups, dtype=dtype)
        self.q = Conv2d(channels, channels, 1, rng, bias=True, dtype=dtype)
        self.k = Conv2d(channels, channels, 1, rng, bias=True, dtype=dtype)
        self.v = Conv2d(channels, channels, 1, rng, bias=True, dtype=dtype)
        # Zero-init projection: the block starts as the identity.
        self.proj = Conv2d(channels, channels, 1, rng, bias=True, zero_init=True, dtype=dtype)

    def forward(self, x):
        b, c, h, w = x.shape
        normed = self.norm(x)
        q = ad.transpose(ad.reshape(self.q(normed), (b, c, h * w)), (0, 2, 1))
        k = ad.reshape(self.k(normed), (b, c, h * w))
        v = ad.transpose(ad.reshape(self.v(normed), (b, c, h * w)), (0, 2, 1))
        attn = ad.softmax(ad.mul(ad.matmul(q, k), 1.0 / float(c) ** 0.5), axis=-1)
        out = ad.transpose(ad.matmul(attn, v), (0, 2, 1))
        out = self.proj(ad.reshape(out, (b, c, h, w)))
        return ad.add(x, out)
