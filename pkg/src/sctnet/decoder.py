"""Symmetric decoder: fused deepest-tap features back to an RGB image.

Mirrors the encoder topology with nearest-neighbor x2 upsampling in place of
pooling, reflection padding, and a linear (unclamped) final convolution;
pixel clamping to [0, 1] happens only at export time.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .nn import Conv2d, Module

# (name, c_in, c_out, upsample after this conv)
_PLANS = {
    "artistic": (
        ("dconv4_1", 512, 256, True),
        ("dconv3_4", 256, 256, False),
        ("dconv3_3", 256, 256, False),
        ("dconv3_2", 256, 256, False),
        ("dconv3_1", 256, 128, True),
        ("dconv2_2", 128, 128, False),
        ("dconv2_1", 128, 64, True),
        ("dconv1_2", 64, 64, False),
        ("dconv1_1", 64, 3, False),
    ),
    "photorealistic": (
        ("dconv3_1", 256, 128, True),
        ("dconv2_2", 128, 128, False),
        ("dconv2_1", 128, 64, True),
        ("dconv1_2", 64, 64, False),
        ("dconv1_1", 64, 3, False),
    ),
}


class Decoder(Module):
    def __init__(self, mode: str = "artistic", rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        if mode not in _PLANS:
            raise ValueError(f"unknown mode {mode!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.mode = mode
        self.plan = _PLANS[mode]
        self.in_channels = self.plan[0][1]
        for name, c_in, c_out, _up in self.plan:
            setattr(self, name, Conv2d(c_in, c_out, kernel_size=3,
                                       pad_mode="reflect", rng=rng, dtype=dtype))

    def __call__(self, f: Tensor) -> Tensor:
        return decode(f, self)


def decode(f_g, params: Decoder) -> Tensor:
    """Decode a fused feature map to image space (values unclamped)."""
    x = f_g if isinstance(f_g, Tensor) else Tensor(np.asarray(f_g))
    squeeze = x.ndim == 3
    if squeeze:
        x = ag.reshape(x, (1,) + x.shape)
    if x.shape[1] != params.in_channels:
        raise ValueError(
            f"decoder expects {params.in_channels} input channels, got {x.shape[1]}")
    last = params.plan[-1][0]
    for name, _c_in, _c_out, up in params.plan:
        x = getattr(params, name)(x)
        if name != last:
            x = ag.relu(x)
        if up:
            x = ag.upsample_nearest2x(x)
    return ag.reshape(x, x.shape[1:]) if squeeze else x
