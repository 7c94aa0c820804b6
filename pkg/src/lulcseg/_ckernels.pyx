# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: patch extraction for convolution, max pooling,
confusion counting, histograms and stitch voting.

Mirrors ``_pykernels`` one-to-one.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double

ctypedef fused sample_t:
    cnp.uint8_t
    cnp.uint16_t


def im2col(const real[:, :, :, ::1] x, int kh, int kw, int sh, int sw, int ph, int pw,
           int dh, int dw, int oh, int ow):
    cdef Py_ssize_t n_img = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t c, i, j, n, oy, ox, row, col, iy, x0, lo, hi
    if real is float:
        out = np.empty((C * kh * kw, n_img * oh * ow), dtype=np.float32)
    else:
        out = np.empty((C * kh * kw, n_img * oh * ow), dtype=np.float64)
    cdef real[:, ::1] cols = out
    with nogil:
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    # output columns [lo, hi) read inside the image for this kernel column
                    x0 = j * dw - pw
                    lo = 0
                    while lo < ow and x0 + lo * sw < 0:
                        lo += 1
                    hi = ow
                    while hi > lo and x0 + (hi - 1) * sw >= W:
                        hi -= 1
                    col = 0
                    for n in range(n_img):
                        for oy in range(oh):
                            iy = oy * sh - ph + i * dh
                            if iy < 0 or iy >= H:
                                for ox in range(ow):
                                    cols[row, col + ox] = 0
                            else:
                                for ox in range(lo):
                                    cols[row, col + ox] = 0
                                for ox in range(lo, hi):
                                    cols[row, col + ox] = x[n, c, iy, x0 + ox * sw]
                                for ox in range(hi, ow):
                                    cols[row, col + ox] = 0
                            col += ow
    return out


def col2im(const real[:, ::1] cols, int n_img, int C, int H, int W, int kh, int kw,
           int sh, int sw, int ph, int pw, int dh, int dw, int oh, int ow):
    cdef Py_ssize_t c, i, j, n, oy, ox, row, col, iy, x0, lo, hi
    if real is float:
        out = np.zeros((n_img, C, H, W), dtype=np.float32)
    else:
        out = np.zeros((n_img, C, H, W), dtype=np.float64)
    cdef real[:, :, :, ::1] x = out
    with nogil:
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    row = (c * kh + i) * kw + j
                    x0 = j * dw - pw
                    lo = 0
                    while lo < ow and x0 + lo * sw < 0:
                        lo += 1
                    hi = ow
                    while hi > lo and x0 + (hi - 1) * sw >= W:
                        hi -= 1
                    col = 0
                    for n in range(n_img):
                        for oy in range(oh):
                            iy = oy * sh - ph + i * dh
                            if 0 <= iy < H:
                                for ox in range(lo, hi):
                                    x[n, c, iy, x0 + ox * sw] += cols[row, col + ox]
                            col += ow
    return out


def maxpool_forward(const real[:, :, :, ::1] x, int kh, int kw, int sh, int sw, int pt, int pl,
                    int dh, int dw, int oh, int ow):
    cdef Py_ssize_t n_img = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t n, c, oy, ox, i, j, iy, ix, best_idx
    cdef real best, v
    cdef bint found
    if real is float:
        out = np.empty((n_img, C, oh, ow), dtype=np.float32)
    else:
        out = np.empty((n_img, C, oh, ow), dtype=np.float64)
    idx = np.empty((n_img, C, oh, ow), dtype=np.int64)
    cdef real[:, :, :, ::1] o = out
    cdef cnp.int64_t[:, :, :, ::1] rec = idx
    with nogil:
        for n in range(n_img):
            for c in range(C):
                for oy in range(oh):
                    for ox in range(ow):
                        found = False
                        best = 0
                        best_idx = -1
                        for i in range(kh):
                            iy = oy * sh - pt + i * dh
                            if iy < 0 or iy >= H:
                                continue
                            for j in range(kw):
                                ix = ox * sw - pl + j * dw
                                if ix < 0 or ix >= W:
                                    continue
                                v = x[n, c, iy, ix]
                                # strict comparison keeps the first maximum
                                if not found or v > best:
                                    best = v
                                    best_idx = iy * W + ix
                                    found = True
                        o[n, c, oy, ox] = best
                        rec[n, c, oy, ox] = best_idx
    return out, idx


def maxpool_backward(const real[:, :, :, ::1] grad_out, const cnp.int64_t[:, :, :, ::1] idx, int H, int W):
    cdef Py_ssize_t n_img = grad_out.shape[0], C = grad_out.shape[1]
    cdef Py_ssize_t oh = grad_out.shape[2], ow = grad_out.shape[3]
    cdef Py_ssize_t n, c, oy, ox, k
    if real is float:
        out = np.zeros((n_img, C, H, W), dtype=np.float32)
    else:
        out = np.zeros((n_img, C, H, W), dtype=np.float64)
    cdef real[:, :, :, ::1] g = out
    with nogil:
        for n in range(n_img):
            for c in range(C):
                for oy in range(oh):
                    for ox in range(ow):
                        k = idx[n, c, oy, ox]
                        g[n, c, k // W, k % W] += grad_out[n, c, oy, ox]
    return out


def confusion_counts(const cnp.int64_t[::1] truth, const cnp.int64_t[::1] pred, int num_classes):
    out = np.zeros((num_classes, num_classes), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] cm = out
    cdef Py_ssize_t k, n = truth.shape[0]
    with nogil:
        for k in range(n):
            cm[truth[k], pred[k]] += 1
    return out


def histogram(const sample_t[::1] samples, int nbins, valid):
    out = np.zeros(nbins, dtype=np.int64)
    cdef cnp.int64_t[::1] h = out
    cdef Py_ssize_t k, n = samples.shape[0]
    cdef const cnp.uint8_t[::1] m
    if valid is None:
        with nogil:
            for k in range(n):
                if samples[k] < nbins:
                    h[samples[k]] += 1
    else:
        m = np.ascontiguousarray(valid, dtype=np.uint8)
        with nogil:
            for k in range(n):
                if m[k] and samples[k] < nbins:
                    h[samples[k]] += 1
    return out


def vote_accumulate(cnp.int32_t[:, :, ::1] votes, const cnp.int64_t[:, ::1] labels, int row, int col):
    cdef Py_ssize_t y, x
    with nogil:
        for y in range(labels.shape[0]):
            for x in range(labels.shape[1]):
                votes[labels[y, x], row + y, col + x] += 1
