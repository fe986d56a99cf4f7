"""Reverse-mode tape autodiff over dense float64 numpy arrays.

Everything is eager: each op computes its forward value immediately and
records a backward closure. `Tensor.backward()` topologically sorts the tape
and accumulates exact gradients. A global no-grad switch disables tape
recording for inference-only passes.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


_grad_enabled = True


@contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad and _grad_enabled
        self._backward = None
        self._parents = ()

    # -- construction helpers -------------------------------------------
    @staticmethod
    def _wrap(other):
        return other if isinstance(other, Tensor) else Tensor(other)

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(p for p in parents if p.requires_grad)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={self.requires_grad})"

    # -- arithmetic ------------------------------------------------------
    def __add__(self, other):
        other = self._wrap(other)
        out_data = self.data + other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return self._result(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g, a=self):
            a._accum(-g)
        return self._result(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-self._wrap(other))

    def __rsub__(self, other):
        return self._wrap(other) + (-self)

    def __mul__(self, other):
        other = self._wrap(other)
        out_data = self.data * other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return self._result(out_data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._wrap(other)
        out_data = self.data / other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / (b.data ** 2), b.shape))

        return self._result(out_data, (self, other), backward)

    def __matmul__(self, other):
        other = self._wrap(other)
        if self.shape[-1] != other.shape[-2 if other.ndim > 1 else 0]:
            raise ShapeMismatch(f"matmul {self.shape} @ {other.shape}")
        out_data = self.data @ other.data

        def backward(g, a=self, b=other):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 \
                    else np.outer(g, b.data) if a.data.ndim > 1 else g * b.data
                a._accum(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                gb = np.swapaxes(a.data, -1, -2) @ g if a.data.ndim > 1 \
                    else np.outer(a.data, g)
                b._accum(_unbroadcast(gb, b.shape))

        return self._result(out_data, (self, other), backward)

    def pow_const(self, p: float) -> "Tensor":
        out_data = self.data ** p

        def backward(g, a=self):
            a._accum(g * p * a.data ** (p - 1))

        return self._result(out_data, (self,), backward)

    def square(self) -> "Tensor":
        return self * self

    # -- shape ops ---------------------------------------------------------
    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out_data = self.data.reshape(shape)

        def backward(g, a=self):
            a._accum(g.reshape(old))

        return self._result(out_data, (self,), backward)

    def swapaxes(self, ax1: int, ax2: int) -> "Tensor":
        out_data = np.swapaxes(self.data, ax1, ax2)

        def backward(g, a=self):
            a._accum(np.swapaxes(g, ax1, ax2))

        return self._result(out_data, (self,), backward)

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def slice(self, key) -> "Tensor":
        out_data = self.data[key]

        def backward(g, a=self):
            full = np.zeros_like(a.data)
            full[key] = g
            a._accum(full)

        return self._result(out_data, (self,), backward)

    def __getitem__(self, key):
        return self.slice(key)

    # -- reductions ------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g, a=self):
            if axis is None:
                a._accum(np.broadcast_to(g, a.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accum(np.broadcast_to(gg, a.shape).copy())

        return self._result(out_data, (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            n = self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- nonlinearities ----------------------------------------------------
    def relu(self) -> "Tensor":
        out_data = np.maximum(self.data, 0.0)

        def backward(g, a=self):
            a._accum(g * (a.data > 0.0))

        return self._result(out_data, (self,), backward)

    def tanh(self) -> "Tensor":
        out_data = np.tanh(self.data)

        def backward(g, a=self, od=out_data):
            a._accum(g * (1.0 - od ** 2))

        return self._result(out_data, (self,), backward)

    def exp(self) -> "Tensor":
        out_data = np.exp(self.data)

        def backward(g, a=self, od=out_data):
            a._accum(g * od)

        return self._result(out_data, (self,), backward)

    def log(self) -> "Tensor":
        out_data = np.log(self.data)

        def backward(g, a=self):
            a._accum(g / a.data)

        return self._result(out_data, (self,), backward)

    def sigmoid(self) -> "Tensor":
        if not np.isfinite(self.data).all():
            raise NonFiniteInput("sigmoid input is not finite")
        # Stable piecewise form: exp of a non-positive argument only.
        e = np.exp(-np.abs(self.data))
        out_data = np.where(self.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        # Keep the open-interval contract even when exp underflows.
        out_data = np.clip(out_data, 5e-324, 1.0 - 1e-16)

        def backward(g, a=self, od=out_data):
            a._accum(g * od * (1.0 - od))

        return self._result(out_data, (self,), backward)

    # -- autograd machinery ----------------------------------------------
    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            if self.size != 1:
                raise ValueError("backward() without grad on non-scalar")
            grad = np.ones_like(self.data)
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self._accum(np.asarray(grad, dtype=np.float64))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._wrap(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g, ts=tensors, offs=offsets):
        for t, lo, hi in zip(ts, offs[:-1], offs[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accum(g[tuple(idx)])

    return Tensor._result(out_data, tuple(tensors), backward)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [Tensor._wrap(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def backward(g, ts=tensors):
        for i, t in enumerate(ts):
            if t.requires_grad:
                t._accum(np.take(g, i, axis=axis))

    return Tensor._result(out_data, tuple(tensors), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along `axis`; output rows sum to 1."""
    x = Tensor._wrap(x)
    if not np.isfinite(x.data).all():
        raise NonFiniteInput("softmax input is not finite")
    m = Tensor(x.data.max(axis=axis, keepdims=True))  # constant shift
    e = (x - m).exp()
    return e / e.sum(axis=axis, keepdims=True)


def sigmoid(x: Tensor) -> Tensor:
    return Tensor._wrap(x).sigmoid()


def relu(x: Tensor) -> Tensor:
    return Tensor._wrap(x).relu()


def conv2d(x: Tensor, w: Tensor, stride: int = 1) -> Tensor:
    """2D convolution (valid padding): x [B,H,W,Cin], w [k,k,Cin,Cout]."""
    k = w.shape[0]
    B, H, W, Cin = x.shape
    if w.shape[2] != Cin:
        raise ShapeMismatch(f"conv2d channels {w.shape} vs input {x.shape}")
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    view = np.lib.stride_tricks.sliding_window_view(x.data, (k, k), axis=(1, 2))
    view = view[:, ::stride, ::stride]            # [B,Ho,Wo,Cin,k,k]
    cols = view.transpose(0, 1, 2, 4, 5, 3).reshape(B * Ho * Wo, k * k * Cin)
    wmat = w.data.reshape(k * k * Cin, w.shape[3])
    out_data = (cols @ wmat).reshape(B, Ho, Wo, w.shape[3])

    def backward(g, a=x, b=w, cols=cols):
        gmat = g.reshape(B * Ho * Wo, -1)
        if b.requires_grad:
            b._accum((cols.T @ gmat).reshape(b.shape))
        if a.requires_grad:
            gcols = (gmat @ wmat.T).reshape(B, Ho, Wo, k, k, Cin)
            gx = np.zeros_like(a.data)
            for i in range(k):
                for j in range(k):
                    gx[:, i:i + Ho * stride:stride,
                       j:j + Wo * stride:stride] += gcols[:, :, :, i, j]
            a._accum(gx)

    return Tensor._result(out_data, (x, w), backward)
