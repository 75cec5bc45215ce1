"""Content/style feature fusion.

The covariance path (SCT) normalizes the content feature by channel mean and
std, the style feature by channel mean only, pushes both through 1x1
channel-reduction stacks, multiplies the style covariance into the reduced
content feature at every spatial position, restores the channel width, and
re-adds the raw style feature's channel means. An AdaIN backend is provided
so the coherence loss can be trained against a baseline fusion.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv2d, Module

STD_EPS = 1e-5
_VAR_GUARD = 1e-12  # keeps sqrt differentiable on constant channels


def _as_batched(f) -> tuple[Tensor, bool]:
    t = f if isinstance(f, Tensor) else Tensor(np.asarray(f))
    if t.ndim == 3:
        return ag.reshape(t, (1,) + t.shape), True
    if t.ndim != 4:
        raise ValueError(f"expected a (C, H, W) or (B, C, H, W) feature map, got {t.shape}")
    return t, False


def _maybe_squeeze(t: Tensor, squeeze: bool) -> Tensor:
    return ag.reshape(t, t.shape[1:]) if squeeze else t


def channel_mean_std(f: Tensor) -> tuple[Tensor, Tensor]:
    """Per-channel mean and population std over spatial positions."""
    mean = ag.tmean(f, axis=(2, 3), keepdims=True)
    var = ag.tmean((f - mean) * (f - mean), axis=(2, 3), keepdims=True)
    return mean, ag.sqrt(var + _VAR_GUARD)


def std_normalize(f):
    """Normalize each channel to zero mean, unit std (eps added to the std).

    Returns (normalized, mean, std) with the statistics shaped (B, C, 1, 1).
    """
    t, squeeze = _as_batched(f)
    mean, std = channel_mean_std(t)
    out = (t - mean) / (std + STD_EPS)
    return (_maybe_squeeze(out, squeeze),
            _maybe_squeeze(mean, squeeze), _maybe_squeeze(std, squeeze))


def mean_normalize(f):
    """Subtract per-channel means; variance is left untouched."""
    t, squeeze = _as_batched(f)
    mean = ag.tmean(t, axis=(2, 3), keepdims=True)
    return _maybe_squeeze(t - mean, squeeze), _maybe_squeeze(mean, squeeze)


def adain_fuse(f_c, f_s) -> Tensor:
    """Scale the normalized content feature to the style's channel statistics."""
    c, squeeze = _as_batched(f_c)
    s, _ = _as_batched(f_s)
    if c.shape[1] != s.shape[1]:
        raise ValueError(f"channel mismatch: content {c.shape[1]} vs style {s.shape[1]}")
    normalized, _, _ = std_normalize(c)
    s_mean, s_std = channel_mean_std(s)
    return _maybe_squeeze(normalized * s_std + s_mean, squeeze)


class ReductionStack(Module):
    """Three 1x1 convolutions with two rectifiers, tapering to the reduced width."""

    def __init__(self, c_in: int, reduced: int, rng, dtype=np.float32):
        super().__init__()
        mid1 = min(c_in, reduced * 4)
        mid2 = min(c_in, reduced * 2)
        self.conv1 = Conv2d(c_in, mid1, kernel_size=1, rng=rng, dtype=dtype)
        self.conv2 = Conv2d(mid1, mid2, kernel_size=1, rng=rng, dtype=dtype)
        self.conv3 = Conv2d(mid2, reduced, kernel_size=1, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv3(ag.relu(self.conv2(ag.relu(self.conv1(x)))))


class SctFusion(Module):
    """Learned covariance-transformation fusion for the deepest encoder tap."""

    kind = "sct"

    def __init__(self, channels: int, reduced: int = 32,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.reduced = reduced
        self.cnet = ReductionStack(channels, reduced, rng, dtype)
        self.snet = ReductionStack(channels, reduced, rng, dtype)
        self.restore = Conv2d(reduced, channels, kernel_size=1, rng=rng, dtype=dtype)

    def __call__(self, f_c, f_s, return_internals: bool = False):
        return sct_fuse(f_c, f_s, self, return_internals)


class AdainFusion(Module):
    """Parameter-free baseline fusion backend."""

    kind = "adain"

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels

    def __call__(self, f_c, f_s, return_internals: bool = False):
        fused = adain_fuse(f_c, f_s)
        return (fused, {}) if return_internals else fused


def sct_fuse(f_c, f_s, params: SctFusion, return_internals: bool = False):
    """Fuse deepest-tap features; output keeps the content's spatial size.

    Style and content spatial sizes may differ: the style branch collapses to
    a reduced-width covariance matrix before touching the content grid.
    """
    c, squeeze = _as_batched(f_c)
    s, _ = _as_batched(f_s)
    if c.shape[1] != params.channels or s.shape[1] != params.channels:
        raise ValueError(
            f"fusion configured for {params.channels} channels, got content "
            f"{c.shape[1]} / style {s.shape[1]}")

    content_norm, _, _ = std_normalize(c)
    style_centered, style_mean = mean_normalize(s)
    reduced_c = params.cnet(content_norm)
    reduced_s = params.snet(style_centered)

    b, r = reduced_s.shape[0], reduced_s.shape[1]
    ls = reduced_s.shape[2] * reduced_s.shape[3]
    if ls < 2:
        raise ValueError("style feature needs at least 2 spatial positions for covariance")
    flat_s = ag.reshape(reduced_s, (b, r, ls))
    cov = ag.matmul(flat_s, ag.transpose_last2(flat_s)) * (1.0 / (ls - 1))
    # GEMM rounding can break exact symmetry; fold with the transpose
    cov = (cov + ag.transpose_last2(cov)) * 0.5

    hc, wc = reduced_c.shape[2], reduced_c.shape[3]
    flat_c = ag.reshape(reduced_c, (b, r, hc * wc))
    fused_reduced = ag.reshape(ag.matmul(cov, flat_c), (b, r, hc, wc))
    out = params.restore(fused_reduced) + style_mean
    out = _maybe_squeeze(out, squeeze)
    if return_internals:
        return out, {"covariance": cov, "pre_restore": _maybe_squeeze(fused_reduced, squeeze)}
    return out
