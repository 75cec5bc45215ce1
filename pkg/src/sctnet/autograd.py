"""Reverse-mode automatic differentiation over numpy arrays.

A small tape: each Tensor produced by an op keeps a closure that routes its
gradient to the inputs. Graph edges are only recorded when an input requires
gradients, so forward passes over frozen weights build no tape at all.
Convolutions run as im2col + BLAS GEMM with the im2col kernel supplied by
``sctnet.kernels`` (numba by default, numpy fallback).
"""

from __future__ import annotations

import numpy as np

from . import kernels as K


class Tensor:
    """An ndarray plus optional gradient bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- graph ----------------------------------------------------------
    def _accumulate(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operators --------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data, parents) -> Tensor:
    """Build an op result; the tape is only recorded if some parent needs it.

    The caller assigns ``out._backward`` afterwards (the closure needs the
    result object); ``out.requires_grad`` gates whether it is kept.
    """
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise --------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data + b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data * b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data / b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))

    out._backward = backward if out.requires_grad else None
    return out


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _make(np.maximum(a.data, 0), (a,))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * (a.data > 0))

    out._backward = backward if out.requires_grad else None
    return out


def exp(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _make(np.exp(a.data), (a,))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * out.data)

    out._backward = backward if out.requires_grad else None
    return out


def log(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _make(np.log(a.data), (a,))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    out._backward = backward if out.requires_grad else None
    return out


def sqrt(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _make(np.sqrt(a.data), (a,))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad * 0.5 / out.data)

    out._backward = backward if out.requires_grad else None
    return out


# -- reductions and reshapes ---------------------------------------------

def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.sum(axis=axis, keepdims=keepdims), (a,))

    def backward():
        if not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, tuple(ax % a.ndim for ax in axes))
        a._accumulate(np.ascontiguousarray(np.broadcast_to(g.astype(a.dtype, copy=False), a.shape)))

    out._backward = backward if out.requires_grad else None
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    out = _make(a.data.reshape(shape), (a,))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad.reshape(a.shape))

    out._backward = backward if out.requires_grad else None
    return out


def transpose_last2(a: Tensor) -> Tensor:
    a = as_tensor(a)
    out = _make(np.swapaxes(a.data, -1, -2), (a,))

    def backward():
        if a.requires_grad:
            a._accumulate(np.swapaxes(out.grad, -1, -2))

    out._backward = backward if out.requires_grad else None
    return out


# -- linear algebra -------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports 2-D x 2-D and batched 3-D x 3-D."""
    a, b = as_tensor(a), as_tensor(b)
    out = _make(a.data @ b.data, (a, b))

    def backward():
        if a.requires_grad:
            a._accumulate(out.grad @ np.swapaxes(b.data, -1, -2))
        if b.requires_grad:
            b._accumulate(np.swapaxes(a.data, -1, -2) @ out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def take_columns(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather columns of a 2-D tensor: (C, L)[:, idx] -> (C, M)."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)
    out = _make(a.data[:, idx], (a,))

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, (np.arange(a.shape[0])[:, None], idx[None, :]), out.grad)
            a._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out


# -- spatial ops ----------------------------------------------------------

def pad2d(a: Tensor, pads, mode: str = "zero") -> Tensor:
    """Pad the last two axes of an NCHW tensor.

    pads = (top, bottom, left, right); mode "zero" or "reflect".
    """
    a = as_tensor(a)
    pt, pb, pl, pr = pads
    spec = ((0, 0), (0, 0), (pt, pb), (pl, pr))
    if mode == "zero":
        data = np.pad(a.data, spec)
    elif mode == "reflect":
        data = np.pad(a.data, spec, mode="reflect")
    else:
        raise ValueError(f"unknown pad mode {mode!r}")
    h, w = a.shape[-2], a.shape[-1]
    out = _make(data, (a,))

    def backward():
        if not a.requires_grad:
            return
        g = out.grad
        dx = g[:, :, pt:pt + h, pl:pl + w].copy()
        if mode == "reflect":
            idx_h = np.pad(np.arange(h), (pt, pb), mode="reflect")
            idx_w = np.pad(np.arange(w), (pl, pr), mode="reflect")
            for s in list(range(pt)) + list(range(pt + h, pt + h + pb)):
                dx[:, :, idx_h[s]] += g[:, :, s, pl:pl + w]
            for s in list(range(pl)) + list(range(pl + w, pl + w + pr)):
                dx[:, :, :, idx_w[s]] += g[:, :, pt:pt + h, s]
            # corners reflect through both axes
            for si in list(range(pt)) + list(range(pt + h, pt + h + pb)):
                for sj in list(range(pl)) + list(range(pl + w, pl + w + pr)):
                    dx[:, :, idx_h[si], idx_w[sj]] += g[:, :, si, sj]
        a._accumulate(dx)

    out._backward = backward if out.requires_grad else None
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None, pad_mode: str = "zero") -> Tensor:
    """3x3 stride-1 "same" convolution (or 1x1 when the kernel is 1x1).

    The 3x3 path pads by one pixel with ``pad_mode`` and lowers to
    im2col + GEMM; gradients w.r.t. the input reuse the same lowering on the
    padded output gradient with a flipped, transposed kernel.
    """
    kh = weight.shape[-1]
    if kh == 1:
        return _conv1x1(x, weight, bias)
    if kh != 3:
        raise ValueError("only 1x1 and 3x3 kernels are supported")
    xp = pad2d(x, (1, 1, 1, 1), mode=pad_mode)
    return _conv_valid3x3(xp, weight, bias)


def _conv_valid3x3(xp: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    b, c, hp, wp = xp.shape
    c_out = weight.shape[0]
    oh, ow = hp - 2, wp - 2
    cols = K.im2col3x3(xp.data)
    w_mat = weight.data.reshape(c_out, c * 9)
    y = np.matmul(w_mat, cols)
    if bias is not None:
        y += bias.data.reshape(1, c_out, 1)
    parents = (xp, weight) if bias is None else (xp, weight, bias)
    out = _make(y.reshape(b, c_out, oh, ow), parents)

    def backward():
        dy = out.grad
        dy_mat = dy.reshape(b, c_out, oh * ow)
        if weight.requires_grad:
            # recompute im2col instead of holding every layer's columns alive
            cols_b = K.im2col3x3(xp.data)
            dw = np.tensordot(dy_mat, cols_b, axes=([0, 2], [0, 2]))
            weight._accumulate(dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(dy.sum(axis=(0, 2, 3)))
        if xp.requires_grad:
            dyp = np.pad(dy, ((0, 0), (0, 0), (2, 2), (2, 2)))
            cols_dy = K.im2col3x3(dyp)
            w_back = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(c, c_out * 9)
            dxp = np.matmul(w_back, cols_dy)
            xp._accumulate(dxp.reshape(b, c, hp, wp))

    out._backward = backward if out.requires_grad else None
    return out


def _conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    b, c, h, w = x.shape
    c_out = weight.shape[0]
    w_mat = weight.data.reshape(c_out, c)
    y = np.matmul(w_mat, x.data.reshape(b, c, h * w))
    if bias is not None:
        y += bias.data.reshape(1, c_out, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)
    out = _make(y.reshape(b, c_out, h, w), parents)

    def backward():
        dy_mat = out.grad.reshape(b, c_out, h * w)
        if weight.requires_grad:
            dw = np.tensordot(dy_mat, x.data.reshape(b, c, h * w), axes=([0, 2], [0, 2]))
            weight._accumulate(dw.reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias._accumulate(out.grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dx = np.matmul(w_mat.T, dy_mat)
            x._accumulate(dx.reshape(b, c, h, w))

    out._backward = backward if out.requires_grad else None
    return out


def maxpool2x2(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y, idx = K.maxpool2x2(x.data)
    out = _make(y, (x,))

    def backward():
        if x.requires_grad:
            x._accumulate(K.maxpool2x2_backward(out.grad, idx))

    out._backward = backward if out.requires_grad else None
    return out


def upsample_nearest2x(x: Tensor) -> Tensor:
    x = as_tensor(x)
    out = _make(np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3), (x,))

    def backward():
        if x.requires_grad:
            b, c, h, w = x.shape
            g = out.grad.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5))
            x._accumulate(g)

    out._backward = backward if out.requires_grad else None
    return out
