"""Pure-NumPy convolution kernels (fallback backend).

Forward/backward for 2-D valid convolution in NCHW layout, implemented via
strided patch views and BLAS matmuls.
"""

import numpy as np


def _patches(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, H, W) -> view (N, OH, OW, C, KH, KW), no copy
    n, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    sn, sc, sh, sw = x.strides
    return np.lib.stride_tricks.as_strided(
        x,
        shape=(n, oh, ow, c, kh, kw),
        strides=(sn, sh * stride, sw * stride, sc, sh, sw),
        writeable=False,
    )


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    n = x.shape[0]
    f, c, kh, kw = w.shape
    p = _patches(x, kh, kw, stride)
    oh, ow = p.shape[1], p.shape[2]
    cols = p.reshape(n * oh * ow, c * kh * kw)
    y = cols @ w.reshape(f, -1).T + b
    return np.ascontiguousarray(y.reshape(n, oh, ow, f).transpose(0, 3, 1, 2))


def conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int, dy: np.ndarray):
    """Gradients w.r.t. input, weights and bias for conv2d_forward."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    dy = np.ascontiguousarray(dy, dtype=np.float64)
    n, c, _, _ = x.shape
    f, _, kh, kw = w.shape
    _, _, oh, ow = dy.shape

    p = _patches(x, kh, kw, stride)
    cols = p.reshape(n * oh * ow, c * kh * kw)
    dy_cols = dy.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)

    dw = (dy_cols.T @ cols).reshape(f, c, kh, kw)
    db = dy_cols.sum(axis=0)

    dpatch = (dy_cols @ w.reshape(f, -1)).reshape(n, oh, ow, c, kh, kw)
    dx = np.zeros_like(x)
    # scatter-add per kernel offset; strided slices within one offset are disjoint
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += dpatch[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return dx, dw, db
