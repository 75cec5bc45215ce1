"""Numba-compiled hot kernels, semantically identical to numpy_backend.

Compiled lazily per dtype; cache=True persists compilation across processes.
"""

import os

# The sandboxed TBB probe is noisy/broken on some hosts; workqueue is always
# available and adequate for these memory-bound kernels.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

import numpy as np
from numba import njit, prange

NAME = "numba"


@njit(cache=True, parallel=True)
def _im2col3x3(x, cols):
    b, c, h, w = x.shape
    oh, ow = h - 2, w - 2
    for bi in prange(b):
        for ci in range(c):
            for ki in range(3):
                for kj in range(3):
                    r = ci * 9 + ki * 3 + kj
                    for i in range(oh):
                        base = i * ow
                        for j in range(ow):
                            cols[bi, r, base + j] = x[bi, ci, i + ki, j + kj]


def im2col3x3(x):
    b, c, h, w = x.shape
    cols = np.empty((b, c * 9, (h - 2) * (w - 2)), dtype=x.dtype)
    _im2col3x3(np.ascontiguousarray(x), cols)
    return cols


@njit(cache=True, parallel=True)
def _maxpool2x2(x, out, idx):
    b, c, h2, w2 = out.shape
    for bi in prange(b):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    best = x[bi, ci, 2 * i, 2 * j]
                    k = 0
                    for ki in range(2):
                        for kj in range(2):
                            v = x[bi, ci, 2 * i + ki, 2 * j + kj]
                            if v > best:
                                best = v
                                k = ki * 2 + kj
                    out[bi, ci, i, j] = best
                    idx[bi, ci, i, j] = k


def maxpool2x2(x):
    b, c, h, w = x.shape
    out = np.empty((b, c, h // 2, w // 2), dtype=x.dtype)
    idx = np.empty((b, c, h // 2, w // 2), dtype=np.uint8)
    _maxpool2x2(np.ascontiguousarray(x), out, idx)
    return out, idx


@njit(cache=True, parallel=True)
def _maxpool2x2_backward(dy, idx, dx):
    b, c, h2, w2 = dy.shape
    for bi in prange(b):
        for ci in range(c):
            for i in range(h2):
                for j in range(w2):
                    k = idx[bi, ci, i, j]
                    dx[bi, ci, 2 * i + k // 2, 2 * j + k % 2] = dy[bi, ci, i, j]


def maxpool2x2_backward(dy, idx):
    b, c, h2, w2 = dy.shape
    dx = np.zeros((b, c, h2 * 2, w2 * 2), dtype=dy.dtype)
    _maxpool2x2_backward(np.ascontiguousarray(dy), idx, dx)
    return dx


@njit(cache=True, parallel=True)
def _bilinear_warp(img, flow, warped, valid):
    c, h, w = img.shape
    for i in prange(h):
        for j in range(w):
            x = j + flow[0, i, j]
            y = i + flow[1, i, j]
            ok = (x >= 0.0) and (x <= w - 1.0) and (y >= 0.0) and (y <= h - 1.0)
            valid[i, j] = ok
            if not ok:
                for ci in range(c):
                    warped[ci, i, j] = 0.0
                continue
            x0 = int(np.floor(x))
            y0 = int(np.floor(y))
            if x0 > w - 2:
                x0 = w - 2
            if y0 > h - 2:
                y0 = h - 2
            if x0 < 0:
                x0 = 0
            if y0 < 0:
                y0 = 0
            fx = x - x0
            fy = y - y0
            for ci in range(c):
                v00 = img[ci, y0, x0]
                v01 = img[ci, y0, x0 + 1]
                v10 = img[ci, y0 + 1, x0]
                v11 = img[ci, y0 + 1, x0 + 1]
                warped[ci, i, j] = ((1 - fy) * ((1 - fx) * v00 + fx * v01)
                                    + fy * ((1 - fx) * v10 + fx * v11))


def bilinear_warp(img, flow):
    c, h, w = img.shape
    warped = np.empty((c, h, w), dtype=img.dtype)
    valid = np.empty((h, w), dtype=np.bool_)
    _bilinear_warp(np.ascontiguousarray(img),
                   np.ascontiguousarray(flow.astype(img.dtype, copy=False)),
                   warped, valid)
    return warped, valid
