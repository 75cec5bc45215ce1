"""Pure-numpy implementations of the hot kernels.

Reference semantics for the numba backend; selected at runtime when
SCTNET_BACKEND=numpy or when numba is unavailable.
"""

import numpy as np

NAME = "numpy"


def im2col3x3(x):
    """Unfold 3x3 patches of a pre-padded NCHW tensor into GEMM columns.

    Rows are ordered channel-major: row index = c * 9 + (ki * 3 + kj),
    matching weights flattened with ``w.reshape(c_out, c_in * 9)``.
    Returns an array of shape (B, C*9, OH*OW) with OH = H-2, OW = W-2.
    """
    b, c, h, w = x.shape
    oh, ow = h - 2, w - 2
    cols = np.empty((b, c, 9, oh, ow), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, :, ki * 3 + kj] = x[:, :, ki:ki + oh, kj:kj + ow]
    return cols.reshape(b, c * 9, oh * ow)


def maxpool2x2(x):
    """2x2/stride-2 max pooling.

    Returns (pooled, idx) where idx in {0..3} records the winning window
    position (ki*2 + kj); ties resolve to the first position in scan order
    so both backends stay bit-identical.
    """
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    windows = x.reshape(b, c, h2, 2, w2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(b, c, h2, w2, 4)
    idx = np.argmax(windows, axis=-1).astype(np.uint8)
    out = np.take_along_axis(windows, idx[..., None].astype(np.int64), axis=-1)
    return np.ascontiguousarray(out[..., 0]), idx


def maxpool2x2_backward(dy, idx):
    """Scatter pooled gradients back to the argmax positions."""
    b, c, h2, w2 = dy.shape
    dwin = np.zeros((b, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None].astype(np.int64), dy[..., None], axis=-1)
    dx = dwin.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(dx.reshape(b, c, h2 * 2, w2 * 2))


def bilinear_warp(img, flow):
    """Backward-warp a (C, H, W) image by a (2, H, W) flow of (dx, dy) pixels.

    Output pixel p samples the source at p + flow(p) with bilinear
    interpolation. Returns (warped, valid) where valid marks sample points
    that fall inside the frame; invalid outputs are zero.
    """
    c, h, w = img.shape
    xs = np.arange(w, dtype=flow.dtype)[None, :] + flow[0]
    ys = np.arange(h, dtype=flow.dtype)[:, None] + flow[1]
    valid = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)

    x0 = np.clip(np.floor(xs), 0, w - 1)
    y0 = np.clip(np.floor(ys), 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    fx = np.clip(xs, 0, w - 1) - x0
    fy = np.clip(ys, 0, h - 1) - y0
    x0i, x1i = x0.astype(np.int64), x1.astype(np.int64)
    y0i, y1i = y0.astype(np.int64), y1.astype(np.int64)

    w00 = (1 - fy) * (1 - fx)
    w01 = (1 - fy) * fx
    w10 = fy * (1 - fx)
    w11 = fy * fx
    warped = (img[:, y0i, x0i] * w00 + img[:, y0i, x1i] * w01
              + img[:, y1i, x0i] * w10 + img[:, y1i, x1i] * w11)
    warped *= valid
    return warped.astype(img.dtype, copy=False), valid
