"""Reverse-mode differentiation over the ops the segmentation network uses.

Each op returns a ``Tensor`` that remembers its parents and a closure that
pushes its gradient back to them. ``Tensor.backward`` walks the graph in
reverse topological order.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from ..errors import ShapeMismatch


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.data.shape}, dtype={self.data.dtype})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                if node._parents:
                    # interior gradients are not needed once propagated
                    node.grad = None


def parameter(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, spec: F.ConvSpec) -> Tensor:
    out, cols = F.conv2d_forward_cols(x.data, w.data, None if b is None else b.data, spec)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx, gw, gb = F.conv2d_backward(g, x.data, w.data, spec, cols=cols)
        x._accumulate(gx)
        w._accumulate(gw)
        if b is not None:
            b._accumulate(gb)

    return Tensor(out, _parents=parents, _backward=backward)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None, spec: F.ConvSpec, output_padding=(0, 0)) -> Tensor:
    out = F.conv_transpose2d_forward(x.data, w.data, None if b is None else b.data, spec, output_padding)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        gx, gw, gb = F.conv_transpose2d_backward(g, x.data, w.data, spec, output_padding)
        x._accumulate(gx)
        w._accumulate(gw)
        if b is not None:
            b._accumulate(gb)

    return Tensor(out, _parents=parents, _backward=backward)


def max_pool2d(x: Tensor, window=2, stride=None, padding=(0, 0, 0, 0), dilation=1) -> Tensor:
    out, argmax = F.maxpool2d_forward(x.data, window, stride, padding, dilation)
    shape = x.data.shape

    def backward(g):
        x._accumulate(F.maxpool2d_backward(g, argmax, shape))

    return Tensor(out, _parents=(x,), _backward=backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        x._accumulate(g * mask)

    return Tensor(out, _parents=(x,), _backward=backward)


def concat(tensors, axis=1) -> Tensor:
    tensors = tuple(tensors)
    shapes = [t.data.shape for t in tensors]
    for s in shapes[1:]:
        if s[:axis] + s[axis + 1:] != shapes[0][:axis] + shapes[0][axis + 1:]:
            raise ShapeMismatch(f"cannot concatenate shapes {shapes} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [s[axis] for s in shapes])

    def backward(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return Tensor(out, _parents=tensors, _backward=backward)


def softmax_cross_entropy(logits: Tensor, targets, ignore_class=None) -> Tensor:
    loss, grad = F.softmax_cross_entropy(logits.data, targets, ignore_class)

    def backward(g):
        logits._accumulate(grad * g)

    return Tensor(np.asarray(loss, dtype=logits.data.dtype), _parents=(logits,), _backward=backward)
