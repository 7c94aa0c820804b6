"""Forward and backward kernels on plain numpy arrays (NCHW layout).

Convolution weights are (out_channels, in_channels, kh, kw); transposed
convolution weights are (in_channels, out_channels, kh, kw), so a conv and
its transpose share one weight array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from ..errors import EmptyOutput, ShapeMismatch, TargetOutOfRange


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: tuple[int, int] = (1, 1)

    def __post_init__(self):
        for name in ("kernel", "stride", "padding", "dilation"):
            object.__setattr__(self, name, _pair(getattr(self, name)))
        if min(self.in_channels, self.out_channels, *self.kernel, *self.stride, *self.dilation) < 1:
            raise ShapeMismatch(f"invalid conv spec {self}")
        if min(self.padding) < 0:
            raise ShapeMismatch(f"padding must be >= 0 in {self}")

    def output_dims(self, height: int, width: int) -> tuple[int, int]:
        return tuple(
            (i + 2 * p - d * (k - 1) - 1) // s + 1
            for i, p, d, k, s in zip((height, width), self.padding, self.dilation, self.kernel, self.stride)
        )

    def transposed_output_dims(self, height: int, width: int, output_padding=(0, 0)) -> tuple[int, int]:
        op = _pair(output_padding)
        return tuple(
            (i - 1) * s - 2 * p + d * (k - 1) + 1 + o
            for i, p, d, k, s, o in zip((height, width), self.padding, self.dilation, self.kernel, self.stride, op)
        )

    def _geom(self):
        (kh, kw), (sh, sw), (ph, pw), (dh, dw) = self.kernel, self.stride, self.padding, self.dilation
        return kh, kw, sh, sw, ph, pw, dh, dw


def _check_conv(x, w, spec):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"expected 4-D input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != spec.in_channels or w.shape != (spec.out_channels, spec.in_channels, *spec.kernel):
        raise ShapeMismatch(f"input {x.shape} / weights {w.shape} do not match {spec}")
    oh, ow = spec.output_dims(x.shape[2], x.shape[3])
    if oh < 1 or ow < 1:
        raise EmptyOutput(f"{spec} on {x.shape[2]}x{x.shape[3]} input yields {oh}x{ow}")
    return oh, ow


def conv2d_forward_cols(x, w, b, spec: ConvSpec):
    """Forward pass that also returns the patch matrix needed by backward."""
    oh, ow = _check_conv(x, w, spec)
    n = x.shape[0]
    cols = kernels.im2col(x, *spec._geom(), oh, ow)
    out = w.reshape(spec.out_channels, -1) @ cols
    if b is not None:
        out += b.reshape(-1, 1)
    out = out.reshape(spec.out_channels, n, oh, ow).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def conv2d_forward(x, w, b, spec: ConvSpec) -> np.ndarray:
    return conv2d_forward_cols(x, w, b, spec)[0]


def conv2d_backward(grad_out, x, w, spec: ConvSpec, cols=None):
    """Return (grad_input, grad_weights, grad_bias) for ``conv2d_forward``."""
    oh, ow = _check_conv(x, w, spec)
    n, c, h, wd = x.shape
    if grad_out.shape != (n, spec.out_channels, oh, ow):
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not match output {(n, spec.out_channels, oh, ow)}")
    if cols is None:
        cols = kernels.im2col(x, *spec._geom(), oh, ow)
    g = grad_out.transpose(1, 0, 2, 3).reshape(spec.out_channels, -1)
    grad_w = (g @ cols.T).reshape(w.shape)
    grad_b = g.sum(axis=1)
    grad_cols = w.reshape(spec.out_channels, -1).T @ g
    grad_x = kernels.col2im(grad_cols, n, c, h, wd, *spec._geom(), oh, ow)
    return grad_x, grad_w, grad_b


def _check_transposed(x, w, spec, output_padding):
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"expected 4-D input and weights, got {x.shape} and {w.shape}")
    if x.shape[1] != spec.in_channels or w.shape != (spec.in_channels, spec.out_channels, *spec.kernel):
        raise ShapeMismatch(f"input {x.shape} / weights {w.shape} do not match transposed {spec}")
    op = _pair(output_padding)
    if any(o >= max(s, d) for o, s, d in zip(op, spec.stride, spec.dilation)):
        raise ShapeMismatch(f"output padding {op} must be smaller than stride or dilation")
    oh, ow = spec.transposed_output_dims(x.shape[2], x.shape[3], op)
    if oh < 1 or ow < 1:
        raise EmptyOutput(f"transposed {spec} on {x.shape[2]}x{x.shape[3]} yields {oh}x{ow}")
    return oh, ow


def conv_transpose2d_forward(x, w, b, spec: ConvSpec, output_padding=(0, 0)) -> np.ndarray:
    """Transposed convolution: the input-gradient of ``conv2d`` with the same kernel."""
    oh, ow = _check_transposed(x, w, spec, output_padding)
    n, cin, h, wd = x.shape
    x_mat = x.transpose(1, 0, 2, 3).reshape(cin, -1)
    cols = w.reshape(cin, -1).T @ x_mat
    out = kernels.col2im(cols, n, spec.out_channels, oh, ow, *spec._geom(), h, wd)
    if b is not None:
        out += b.reshape(1, -1, 1, 1)
    return out


def conv_transpose2d_backward(grad_out, x, w, spec: ConvSpec, output_padding=(0, 0)):
    oh, ow = _check_transposed(x, w, spec, output_padding)
    n, cin, h, wd = x.shape
    if grad_out.shape != (n, spec.out_channels, oh, ow):
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not match output {(n, spec.out_channels, oh, ow)}")
    cols = kernels.im2col(grad_out, *spec._geom(), h, wd)
    w_mat = w.reshape(cin, -1)
    grad_x = (w_mat @ cols).reshape(cin, n, h, wd).transpose(1, 0, 2, 3)
    x_mat = x.transpose(1, 0, 2, 3).reshape(cin, -1)
    grad_w = (x_mat @ cols.T).reshape(w.shape)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def maxpool_output_dims(height, width, window, stride, padding, dilation):
    """``padding`` is (top, bottom, left, right)."""
    (kh, kw), (sh, sw), (dh, dw) = _pair(window), _pair(stride), _pair(dilation)
    pt, pb, pl, pr = padding
    oh = (height + pt + pb - dh * (kh - 1) - 1) // sh + 1
    ow = (width + pl + pr - dw * (kw - 1) - 1) // sw + 1
    return oh, ow


def maxpool2d_forward(x, window=2, stride=None, padding=(0, 0, 0, 0), dilation=1):
    """Max pooling; returns (output, argmax) where argmax holds flat h*W+w input indices.

    Ties go to the first element in row-major window order. Padding cells
    never win.
    """
    if x.ndim != 4:
        raise ShapeMismatch(f"expected NCHW input, got {x.shape}")
    window = _pair(window)
    stride = window if stride is None else _pair(stride)
    dilation = _pair(dilation)
    pt, pb, pl, pr = padding
    if max(pt, pb) >= dilation[0] * (window[0] - 1) + 1 or max(pl, pr) >= dilation[1] * (window[1] - 1) + 1:
        raise ShapeMismatch(f"padding {padding} would create all-padding windows")
    oh, ow = maxpool_output_dims(x.shape[2], x.shape[3], window, stride, padding, dilation)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"pool window {window} larger than input {x.shape[2:]}")
    return kernels.maxpool_forward(x, window[0], window[1], stride[0], stride[1], pt, pl, dilation[0], dilation[1], oh, ow)


def maxpool2d_backward(grad_out, argmax, input_shape):
    if grad_out.shape != argmax.shape:
        raise ShapeMismatch(f"grad_out {grad_out.shape} does not match argmax {argmax.shape}")
    return kernels.maxpool_backward(grad_out, argmax, input_shape[2], input_shape[3])


def softmax(logits, axis=1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_cross_entropy(logits, targets, ignore_class=None):
    """Mean pixel cross-entropy over non-ignored pixels and its logit gradient.

    ``logits`` is (N, C, H, W); ``targets`` is (N, H, W) integer class ids.
    """
    if logits.ndim != 4 or targets.shape != (logits.shape[0], *logits.shape[2:]):
        raise ShapeMismatch(f"logits {logits.shape} and targets {targets.shape} disagree")
    n_classes = logits.shape[1]
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size and (targets.min() < 0 or targets.max() >= n_classes):
        raise TargetOutOfRange(f"targets span [{targets.min()}, {targets.max()}] for {n_classes} classes")
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    mask = np.ones(targets.shape, dtype=bool) if ignore_class is None else targets != ignore_class
    count = int(mask.sum())
    picked = np.take_along_axis(log_p, targets[:, None], axis=1)[:, 0]
    if count == 0:
        return 0.0, np.zeros_like(logits)
    loss = -float(picked[mask].sum(dtype=np.float64)) / count
    grad = np.exp(log_p)
    onehot = np.zeros_like(grad)
    np.put_along_axis(onehot, targets[:, None], 1.0, axis=1)
    grad -= onehot
    grad *= (mask[:, None] / count).astype(logits.dtype)
    return loss, grad
