"""Layers and parameter containers built on the tape autodiff core."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, ShapeMismatch, concat, relu, softmax


class Parameter(Tensor):
    """Trainable tensor with a model-unique name."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name


class Module:
    """Minimal container: tracks child modules and parameters by attribute."""

    def parameters(self) -> list[Parameter]:
        out, seen = [], set()
        for v in self.__dict__.values():
            items = v if isinstance(v, (list, tuple)) else [v]
            for item in items:
                if isinstance(item, Parameter) and id(item) not in seen:
                    seen.add(id(item))
                    out.append(item)
                elif isinstance(item, Module):
                    for p in item.parameters():
                        if id(p) not in seen:
                            seen.add(id(p))
                            out.append(p)
        return out

    def named_parameters(self) -> dict[str, Parameter]:
        params = {}
        for p in self.parameters():
            if p.name in params:
                raise ValueError(f"duplicate parameter name {p.name!r}")
            params[p.name] = p
        return params

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    def __init__(self, din: int, dout: int, rng: np.random.Generator,
                 name: str):
        self.W = Parameter(_uniform_init(rng, (din, dout), din), f"{name}.W")
        self.b = Parameter(_uniform_init(rng, (dout,), din), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.W.shape[0]:
            raise ShapeMismatch(
                f"linear expects inner dim {self.W.shape[0]}, got {x.shape}")
        return x @ self.W + self.b


class MLP(Module):
    """Stack of linear layers with ReLU between hidden layers."""

    def __init__(self, dims: list[int], rng: np.random.Generator, name: str):
        self.layers = [Linear(a, b, rng, f"{name}.l{i}")
                       for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i + 1 < len(self.layers):
                x = relu(x)
        return x


class CausalConv1d(Module):
    """Dilated causal 1-D convolution over [..., T, Cin] inputs.

    Left-pads with (k-1)*dilation zeros so output position t only depends on
    input positions <= t.
    """

    def __init__(self, cin: int, cout: int, kernel: int, dilation: int,
                 rng: np.random.Generator, name: str):
        if dilation < 1 or kernel < 1:
            raise ValueError("kernel and dilation must be >= 1")
        fan_in = kernel * cin
        self.kernel = kernel
        self.dilation = dilation
        self.taps = [Parameter(_uniform_init(rng, (cin, cout), fan_in),
                               f"{name}.w{j}") for j in range(kernel)]
        self.b = Parameter(_uniform_init(rng, (cout,), fan_in), f"{name}.b")

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.taps[0].shape[0]:
            raise ShapeMismatch(
                f"conv expects {self.taps[0].shape[0]} channels, got {x.shape}")
        T = x.shape[-2]
        pad_len = (self.kernel - 1) * self.dilation
        if pad_len:
            pad = Tensor(np.zeros(x.shape[:-2] + (pad_len, x.shape[-1])))
            xp = concat([pad, x], axis=-2)
        else:
            xp = x
        # Tap j sees input shifted left by (kernel-1-j)*dilation.
        out = None
        for j, w in enumerate(self.taps):
            start = j * self.dilation
            seg = xp.slice((Ellipsis, slice(start, start + T), slice(None)))
            term = seg @ w
            out = term if out is None else out + term
        return out + self.b


class TCNBlock(Module):
    """Residual block: dilated causal conv + ReLU, 1x1 skip when dims change."""

    def __init__(self, cin: int, cout: int, kernel: int, dilation: int,
                 rng: np.random.Generator, name: str):
        self.conv = CausalConv1d(cin, cout, kernel, dilation, rng,
                                 f"{name}.conv")
        self.proj = Linear(cin, cout, rng, f"{name}.proj") if cin != cout \
            else None

    def __call__(self, x: Tensor) -> Tensor:
        y = relu(self.conv(x))
        skip = self.proj(x) if self.proj is not None else x
        return y + skip


def cross_attention_head(q: Tensor, K: Tensor, V: Tensor) -> Tensor:
    """softmax(q K^T / sqrt(dk)) V for a single query row."""
    dk = q.shape[-1]
    if K.shape[-1] != dk or V.shape[-1] != dk:
        raise ShapeMismatch(f"attention dims q={q.shape} K={K.shape} V={V.shape}")
    scores = (q @ K.T) * (1.0 / np.sqrt(dk))
    return softmax(scores, axis=-1) @ V
