"""Backend selection for the hot loops.

The compiled extension is preferred; the numpy fallback is used when it is
missing or when the environment variable ``LULCSEG_PURE_PYTHON`` is set to a
non-empty value other than ``0``. Both backends return identical results
(up to float summation order in ``col2im``/``maxpool_backward``).
"""

import os

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_FORCE_PURE = os.environ.get("LULCSEG_PURE_PYTHON", "") not in ("", "0")

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels

BACKEND = "python" if (_FORCE_PURE or _ckernels is None) else "cython"
_impl = BACKENDS[BACKEND]


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return _impl
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def im2col(x, kh, kw, sh, sw, ph, pw, dh, dw, oh, ow):
    return _impl.im2col(np.ascontiguousarray(x), kh, kw, sh, sw, ph, pw, dh, dw, oh, ow)


def col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw, dh, dw, oh, ow):
    return _impl.col2im(np.ascontiguousarray(cols), n, c, h, w, kh, kw, sh, sw, ph, pw, dh, dw, oh, ow)


def maxpool_forward(x, kh, kw, sh, sw, pt, pl, dh, dw, oh, ow):
    return _impl.maxpool_forward(np.ascontiguousarray(x), kh, kw, sh, sw, pt, pl, dh, dw, oh, ow)


def maxpool_backward(grad_out, idx, h, w):
    return _impl.maxpool_backward(
        np.ascontiguousarray(grad_out), np.ascontiguousarray(idx, dtype=np.int64), h, w
    )


def confusion_counts(truth, pred, num_classes):
    truth = np.ascontiguousarray(truth, dtype=np.int64).ravel()
    pred = np.ascontiguousarray(pred, dtype=np.int64).ravel()
    return _impl.confusion_counts(truth, pred, num_classes)


def histogram(samples, nbins, valid=None):
    samples = np.ascontiguousarray(samples).ravel()
    if valid is not None:
        valid = np.ascontiguousarray(valid, dtype=np.uint8).ravel()
    return _impl.histogram(samples, nbins, valid)


def vote_accumulate(votes, labels, row, col):
    _impl.vote_accumulate(votes, np.ascontiguousarray(labels, dtype=np.int64), row, col)
