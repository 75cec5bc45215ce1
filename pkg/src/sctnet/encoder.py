"""Fixed VGG-19-topology feature encoder with named taps.

The encoder is never trained: weights come from a tensor archive (converted
from public VGG-19 checkpoints) or from a documented seeded initializer for
hermetic tests. Artistic mode taps relu1_1..relu4_1; photo-realistic mode
truncates the network at relu3_1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .archive import ArchiveError, load_archive
from .autograd import Tensor
from .nn import Conv2d

ARTISTIC_TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")
PHOTOREALISTIC_TAPS = ("relu1_1", "relu2_1", "relu3_1")

TAP_CHANNELS = {"relu1_1": 64, "relu2_1": 128, "relu3_1": 256, "relu4_1": 512}
TAP_SCALE = {"relu1_1": 1, "relu2_1": 2, "relu3_1": 4, "relu4_1": 8}

# conv name, in channels, out channels, tap emitted after the following relu
_PLAN = (
    ("conv1_1", 3, 64, "relu1_1"),
    ("conv1_2", 64, 64, None),
    ("pool", 0, 0, None),
    ("conv2_1", 64, 128, "relu2_1"),
    ("conv2_2", 128, 128, None),
    ("pool", 0, 0, None),
    ("conv3_1", 128, 256, "relu3_1"),
    ("conv3_2", 256, 256, None),
    ("conv3_3", 256, 256, None),
    ("conv3_4", 256, 256, None),
    ("pool", 0, 0, None),
    ("conv4_1", 256, 512, "relu4_1"),
)


@dataclass(frozen=True)
class EncoderSpec:
    """Which encoder variant to build and where its weights come from."""

    mode: str = "artistic"
    tap_names: tuple[str, ...] = ()
    weights_source: str = "random_seeded"
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("artistic", "photorealistic"):
            raise ValueError(f"unknown mode {self.mode!r}")
        expected = ARTISTIC_TAPS if self.mode == "artistic" else PHOTOREALISTIC_TAPS
        if not self.tap_names:
            object.__setattr__(self, "tap_names", expected)
        elif tuple(self.tap_names) != expected:
            raise ValueError(
                f"{self.mode} mode exposes exactly {expected}, got {tuple(self.tap_names)}")

    @property
    def divisor(self) -> int:
        """Input sizes must be divisible by this (one factor of 2 per pool)."""
        return TAP_SCALE[self.tap_names[-1]]

    @property
    def deepest_channels(self) -> int:
        return TAP_CHANNELS[self.tap_names[-1]]


@dataclass
class FeaturePyramid:
    """Feature maps keyed by tap name, plus the pixel size they came from."""

    entries: dict[str, Tensor]
    source_size: tuple[int, int]

    def __getitem__(self, tap: str) -> Tensor:
        return self.entries[tap]

    def __contains__(self, tap: str) -> bool:
        return tap in self.entries


class Encoder:
    """Immutable feature extractor; safe to share across threads."""

    def __init__(self, spec: EncoderSpec, convs: list[tuple[str, Conv2d]],
                 preprocessing: dict | None = None):
        self.spec = spec
        self._convs = dict(convs)
        self.preprocessing = preprocessing
        self.tap_names = spec.tap_names

    def parameter_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, conv in self._convs.items():
            out[f"{name}.weight"] = conv.weight.data
            out[f"{name}.bias"] = conv.bias.data
        return out

    def encode(self, image, taps: tuple[str, ...] | None = None) -> FeaturePyramid:
        """Run the network and collect the requested taps.

        ``image`` is an array or Tensor in [0, 1], shaped (3, H, W) or
        (B, 3, H, W); H and W must be divisible by the mode's divisor
        (callers pad or resize first -- see sctnet.infer).
        """
        taps = tuple(taps) if taps is not None else self.tap_names
        unknown = [t for t in taps if t not in self.tap_names]
        if unknown:
            raise ValueError(f"taps {unknown} not exposed in {self.spec.mode} mode")

        x = image if isinstance(image, Tensor) else Tensor(np.asarray(image))
        squeeze = x.ndim == 3
        if squeeze:
            x = ag.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) or (3, H, W) image, got {x.shape}")
        h, w = x.shape[2], x.shape[3]
        d = self.spec.divisor
        if h < 16 or w < 16:
            raise ValueError(f"input {h}x{w} too small; need at least 16x16")
        if h % d or w % d:
            raise ValueError(
                f"input {h}x{w} not divisible by {d}; pad or resize before encoding")

        if self.preprocessing is not None:
            mean = np.asarray(self.preprocessing["mean"], x.dtype).reshape(1, 3, 1, 1)
            std = np.asarray(self.preprocessing["std"], x.dtype).reshape(1, 3, 1, 1)
            x = (x - mean) / std

        deepest = max(self.tap_names.index(t) for t in taps)
        entries: dict[str, Tensor] = {}
        collected = -1
        for kind, _cin, _cout, tap in _PLAN:
            if kind == "pool":
                x = ag.maxpool2x2(x)
                continue
            conv = self._convs[kind]
            x = ag.relu(conv(x))
            if tap is not None:
                collected += 1
                if tap in taps:
                    entries[tap] = x if not squeeze else ag.reshape(x, x.shape[1:])
                if collected == deepest:
                    break
        return FeaturePyramid(entries=entries, source_size=(h, w))

    def __call__(self, image, taps=None) -> FeaturePyramid:
        return self.encode(image, taps)


def load_encoder(spec: EncoderSpec, dtype=np.float32) -> Encoder:
    """Build the frozen encoder from an archive or the seeded initializer."""
    deepest = spec.tap_names[-1]
    plan = []
    for kind, cin, cout, tap in _PLAN:
        plan.append((kind, cin, cout, tap))
        if tap == deepest:
            break

    preprocessing = None
    if spec.weights_source == "random_seeded":
        rng = np.random.default_rng(spec.seed)
        arrays = None
    else:
        arrays, meta = load_archive(spec.weights_source)
        preprocessing = meta.get("preprocessing")
        rng = np.random.default_rng(0)

    convs = []
    for kind, cin, cout, tap in plan:
        if kind == "pool":
            continue
        conv = Conv2d(cin, cout, kernel_size=3, pad_mode="zero", rng=rng,
                      trainable=False, dtype=dtype)
        if arrays is not None:
            for suffix, tensor, shape in ((".weight", conv.weight, (cout, cin, 3, 3)),
                                          (".bias", conv.bias, (cout,))):
                key = kind + suffix
                if key not in arrays:
                    raise ArchiveError(
                        f"weight archive {spec.weights_source} is missing tensor {key!r}")
                arr = arrays[key]
                if tuple(arr.shape) != shape:
                    raise ArchiveError(
                        f"tensor {key!r} has shape {tuple(arr.shape)}, expected {shape}")
                tensor.data = arr.astype(dtype, copy=True)
        convs.append((kind, conv))
    return Encoder(spec, convs, preprocessing)
