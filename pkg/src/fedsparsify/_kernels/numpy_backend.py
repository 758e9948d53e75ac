"""Pure-numpy kernel implementations.

Convolutions go through an im2col lowering so the contraction runs in BLAS.
CSR products accumulate in float64 (bincount / cumulative sums), which
handles empty rows exactly. All functions preserve the input floating dtype.
"""

import numpy as np


def _im2col(xp: np.ndarray, kd: int, kh: int, kw: int) -> np.ndarray:
    """Patch matrix of a padded input: (n, ci*kd*kh*kw, OD*OH*OW)."""
    n, ci, dp, hp, wp = xp.shape
    od, oh, ow = dp - kd + 1, hp - kh + 1, wp - kw + 1
    cols = np.empty((n, ci, kd, kh, kw, od, oh, ow), dtype=xp.dtype)
    for a in range(kd):
        for e in range(kh):
            for f in range(kw):
                cols[:, :, a, e, f] = xp[:, :, a : a + od, e : e + oh, f : f + ow]
    return cols.reshape(n, ci * kd * kh * kw, od * oh * ow)


def conv3d_forward(xp: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, ci, dp, hp, wp = xp.shape
    co, _, kd, kh, kw = w.shape
    od, oh, ow = dp - kd + 1, hp - kh + 1, wp - kw + 1
    cols = _im2col(xp, kd, kh, kw)
    out = np.matmul(w.reshape(co, -1), cols)
    out = out.reshape(n, co, od, oh, ow)
    return out + b.reshape(1, co, 1, 1, 1)


def conv3d_weight_grad(xp: np.ndarray, dy: np.ndarray):
    n, co, od, oh, ow = dy.shape
    ci = xp.shape[1]
    kd = xp.shape[2] - od + 1
    kh = xp.shape[3] - oh + 1
    kw = xp.shape[4] - ow + 1
    cols = _im2col(xp, kd, kh, kw)
    dyf = dy.reshape(n, co, od * oh * ow)
    dw = np.einsum("nos,nks->ok", dyf, cols).reshape(co, ci, kd, kh, kw)
    db = dy.sum(axis=(0, 2, 3, 4))
    return dw.astype(xp.dtype, copy=False), db.astype(xp.dtype, copy=False)


def conv3d_input_grad(dy: np.ndarray, w: np.ndarray, xp_shape) -> np.ndarray:
    n, co, od, oh, ow = dy.shape
    _, ci, kd, kh, kw = w.shape
    dcols = np.einsum("ok,nos->nks", w.reshape(co, -1), dy.reshape(n, co, -1))
    dcols = dcols.reshape(n, ci, kd, kh, kw, od, oh, ow)
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    for a in range(kd):
        for e in range(kh):
            for f in range(kw):
                dxp[:, :, a : a + od, e : e + oh, f : f + ow] += dcols[:, :, a, e, f]
    return dxp


def maxpool3d_forward(x: np.ndarray, window):
    wd, wh, ww = window
    n, c, d, h, w = x.shape
    od, oh, ow = d // wd, h // wh, w // ww
    v = x.reshape(n, c, od, wd, oh, wh, ow, ww)
    v = v.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, od, oh, ow, wd * wh * ww)
    idx = v.argmax(axis=-1).astype(np.int64)  # first max wins ties
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool3d_backward(dy: np.ndarray, idx: np.ndarray, x_shape, window) -> np.ndarray:
    wd, wh, ww = window
    n, c, d, h, w = x_shape
    od, oh, ow = d // wd, h // wh, w // ww
    windows = np.zeros((n, c, od, oh, ow, wd * wh * ww), dtype=dy.dtype)
    np.put_along_axis(windows, idx[..., None], dy[..., None], axis=-1)
    windows = windows.reshape(n, c, od, oh, ow, wd, wh, ww)
    return windows.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(x_shape)


def csr_matvec(indptr, indices, data, x):
    rows = np.repeat(np.arange(len(indptr) - 1), np.diff(indptr))
    y = np.bincount(rows, weights=data * x[indices], minlength=len(indptr) - 1)
    return y.astype(x.dtype, copy=False)


def csr_matmul(indptr, indices, data, dense):
    prods = (data[:, None] * dense[indices]).astype(np.float64, copy=False)
    sums = np.zeros((len(data) + 1, dense.shape[1]), dtype=np.float64)
    np.cumsum(prods, axis=0, out=sums[1:])
    out = sums[indptr[1:]] - sums[indptr[:-1]]
    return out.astype(dense.dtype, copy=False)
