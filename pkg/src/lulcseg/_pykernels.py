"""Pure numpy implementations of the hot loops.

Same signatures and results as the compiled ``_ckernels`` module; used when
the extension is not built or ``LULCSEG_PURE_PYTHON`` is set.
"""

import numpy as np


def im2col(x, kh, kw, sh, sw, ph, pw, dh, dw, oh, ow):
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = np.empty((c, kh, kw, n, oh, ow), dtype=x.dtype)
    for i in range(kh):
        y0 = i * dh
        for j in range(kw):
            x0 = j * dw
            patch = xp[:, :, y0:y0 + sh * (oh - 1) + 1:sh, x0:x0 + sw * (ow - 1) + 1:sw]
            cols[:, i, j] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * oh * ow)


def col2im(cols, n, c, h, w, kh, kw, sh, sw, ph, pw, dh, dw, oh, ow):
    cols6 = cols.reshape(c, kh, kw, n, oh, ow)
    xp = np.zeros((n, c, h + 2 * ph, w + 2 * pw), dtype=cols.dtype)
    for i in range(kh):
        y0 = i * dh
        for j in range(kw):
            x0 = j * dw
            xp[:, :, y0:y0 + sh * (oh - 1) + 1:sh, x0:x0 + sw * (ow - 1) + 1:sw] += (
                cols6[:, i, j].transpose(1, 0, 2, 3)
            )
    return np.ascontiguousarray(xp[:, :, ph:ph + h, pw:pw + w])


def maxpool_forward(x, kh, kw, sh, sw, pt, pl, dh, dw, oh, ow):
    n, c, h, w = x.shape
    # enough bottom/right padding for every window the caller asked for
    pb = max(0, (oh - 1) * sh + (kh - 1) * dh + 1 - pt - h)
    pr = max(0, (ow - 1) * sw + (kw - 1) * dw + 1 - pl - w)
    xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)), constant_values=-np.inf)
    rows = np.arange(-pt, h + pb)
    colsi = np.arange(-pl, w + pr)
    stack = np.empty((kh * kw, n, c, oh, ow), dtype=x.dtype)
    where = np.empty((kh * kw, oh, ow), dtype=np.int64)
    k = 0
    for i in range(kh):
        y0 = i * dh
        ys = slice(y0, y0 + sh * (oh - 1) + 1, sh)
        for j in range(kw):
            x0 = j * dw
            xs = slice(x0, x0 + sw * (ow - 1) + 1, sw)
            stack[k] = xp[:, :, ys, xs]
            where[k] = rows[ys][:, None] * w + colsi[xs][None, :]
            k += 1
    # argmax returns the first maximum, i.e. row-major order inside the window
    best = np.argmax(stack, axis=0)
    out = np.take_along_axis(stack, best[None], axis=0)[0]
    oy = np.arange(oh)[:, None]
    ox = np.arange(ow)[None, :]
    idx = where[best, oy, ox]
    return np.ascontiguousarray(out), np.ascontiguousarray(idx.astype(np.int64))


def maxpool_backward(grad_out, idx, h, w):
    n, c, oh, ow = grad_out.shape
    flat_idx = (np.arange(n * c, dtype=np.int64)[:, None] * (h * w) + idx.reshape(n * c, -1)).ravel()
    grad = np.bincount(flat_idx, weights=grad_out.ravel(), minlength=n * c * h * w)
    return grad.astype(grad_out.dtype).reshape(n, c, h, w)


def confusion_counts(truth, pred, num_classes):
    codes = truth.astype(np.int64) * num_classes + pred.astype(np.int64)
    return np.bincount(codes, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


def histogram(samples, nbins, valid):
    if valid is not None:
        samples = samples[valid.astype(bool)]
    return np.bincount(samples.astype(np.int64), minlength=nbins)[:nbins].astype(np.int64)


def vote_accumulate(votes, labels, row, col):
    t_h, t_w = labels.shape
    yy, xx = np.indices((t_h, t_w))
    votes[labels, yy + row, xx + col] += 1
