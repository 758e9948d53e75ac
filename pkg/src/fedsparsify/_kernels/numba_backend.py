"""Numba-compiled kernel implementations.

Loop nests keep the innermost index on the contiguous axis so LLVM can
vectorize them; compiled functions are cached on disk. Semantics match
``numpy_backend`` (first-max tie break in pooling, exact zero handling in
CSR rows) to within float summation order.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _conv3d_forward(xp, w, b, out):
    n, co, od, oh, ow = out.shape
    ci = xp.shape[1]
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    for s in range(n):
        for o in range(co):
            acc = np.zeros((od, oh, ow), dtype=xp.dtype)
            for c in range(ci):
                for a in range(kd):
                    for e in range(kh):
                        for f in range(kw):
                            wv = w[o, c, a, e, f]
                            for i in range(od):
                                for j in range(oh):
                                    row = xp[s, c, i + a, j + e]
                                    arow = acc[i, j]
                                    for k in range(ow):
                                        arow[k] += row[k + f] * wv
            for i in range(od):
                for j in range(oh):
                    for k in range(ow):
                        out[s, o, i, j, k] = acc[i, j, k] + b[o]


def conv3d_forward(xp, w, b):
    n, ci, dp, hp, wp = xp.shape
    co, _, kd, kh, kw = w.shape
    out = np.empty((n, co, dp - kd + 1, hp - kh + 1, wp - kw + 1), dtype=xp.dtype)
    _conv3d_forward(xp, w, b, out)
    return out


@njit(cache=True)
def _conv3d_weight_grad(xp, dy, dw, db):
    n, co, od, oh, ow = dy.shape
    ci = xp.shape[1]
    kd, kh, kw = dw.shape[2], dw.shape[3], dw.shape[4]
    for o in range(co):
        bacc = 0.0
        for s in range(n):
            for i in range(od):
                for j in range(oh):
                    for k in range(ow):
                        bacc += dy[s, o, i, j, k]
        db[o] = bacc
        for c in range(ci):
            for a in range(kd):
                for e in range(kh):
                    for f in range(kw):
                        acc = 0.0
                        for s in range(n):
                            for i in range(od):
                                for j in range(oh):
                                    drow = dy[s, o, i, j]
                                    xrow = xp[s, c, i + a, j + e]
                                    for k in range(ow):
                                        acc += drow[k] * xrow[k + f]
                        dw[o, c, a, e, f] = acc


def conv3d_weight_grad(xp, dy):
    n, co, od, oh, ow = dy.shape
    ci = xp.shape[1]
    kd = xp.shape[2] - od + 1
    kh = xp.shape[3] - oh + 1
    kw = xp.shape[4] - ow + 1
    dw = np.empty((co, ci, kd, kh, kw), dtype=xp.dtype)
    db = np.empty(co, dtype=xp.dtype)
    _conv3d_weight_grad(xp, dy, dw, db)
    return dw, db


@njit(cache=True)
def _conv3d_input_grad(dy, w, dxp):
    n, co, od, oh, ow = dy.shape
    ci = w.shape[1]
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    for s in range(n):
        for c in range(ci):
            for o in range(co):
                for a in range(kd):
                    for e in range(kh):
                        for f in range(kw):
                            wv = w[o, c, a, e, f]
                            for i in range(od):
                                for j in range(oh):
                                    drow = dy[s, o, i, j]
                                    xrow = dxp[s, c, i + a, j + e]
                                    for k in range(ow):
                                        xrow[k + f] += drow[k] * wv


def conv3d_input_grad(dy, w, xp_shape):
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    _conv3d_input_grad(dy, w, dxp)
    return dxp


@njit(cache=True)
def _maxpool3d(x, wd, wh, ww, out, idx):
    n, c, od, oh, ow = out.shape
    for s in range(n):
        for ch in range(c):
            for i in range(od):
                for j in range(oh):
                    for k in range(ow):
                        best = x[s, ch, i * wd, j * wh, k * ww]
                        bestp = 0
                        p = 0
                        for a in range(wd):
                            for e in range(wh):
                                for f in range(ww):
                                    v = x[s, ch, i * wd + a, j * wh + e, k * ww + f]
                                    if v > best:
                                        best = v
                                        bestp = p
                                    p += 1
                        out[s, ch, i, j, k] = best
                        idx[s, ch, i, j, k] = bestp


def maxpool3d_forward(x, window):
    wd, wh, ww = window
    n, c, d, h, w = x.shape
    out = np.empty((n, c, d // wd, h // wh, w // ww), dtype=x.dtype)
    idx = np.empty(out.shape, dtype=np.int64)
    _maxpool3d(x, wd, wh, ww, out, idx)
    return out, idx


@njit(cache=True)
def _maxpool3d_backward(dy, idx, wd, wh, ww, dx):
    n, c, od, oh, ow = dy.shape
    for s in range(n):
        for ch in range(c):
            for i in range(od):
                for j in range(oh):
                    for k in range(ow):
                        p = idx[s, ch, i, j, k]
                        f = p % ww
                        e = (p // ww) % wh
                        a = p // (ww * wh)
                        dx[s, ch, i * wd + a, j * wh + e, k * ww + f] = dy[s, ch, i, j, k]


def maxpool3d_backward(dy, idx, x_shape, window):
    wd, wh, ww = window
    dx = np.zeros(x_shape, dtype=dy.dtype)
    _maxpool3d_backward(dy, idx, wd, wh, ww, dx)
    return dx


@njit(cache=True)
def _csr_matvec(indptr, indices, data, x, y):
    for r in range(y.shape[0]):
        acc = 0.0
        for p in range(indptr[r], indptr[r + 1]):
            acc += data[p] * x[indices[p]]
        y[r] = acc


def csr_matvec(indptr, indices, data, x):
    y = np.empty(len(indptr) - 1, dtype=x.dtype)
    _csr_matvec(indptr, indices, data, x, y)
    return y


@njit(cache=True)
def _csr_matmul(indptr, indices, data, dense, out):
    m = dense.shape[1]
    for r in range(out.shape[0]):
        for col in range(m):
            out[r, col] = 0.0
        for p in range(indptr[r], indptr[r + 1]):
            v = data[p]
            row = dense[indices[p]]
            orow = out[r]
            for col in range(m):
                orow[col] += v * row[col]


def csr_matmul(indptr, indices, data, dense):
    out = np.empty((len(indptr) - 1, dense.shape[1]), dtype=dense.dtype)
    _csr_matmul(indptr, indices, data, dense, out)
    return out
