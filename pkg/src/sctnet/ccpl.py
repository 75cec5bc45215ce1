"""Contrastive coherence preserving loss.

Random interior anchors are drawn on a feature map; each anchor is paired
with its eight nearest neighbors and the anchor-minus-neighbor difference
vectors are computed on both the generated and the content features at
identical locations. A shared two-layer MLP projects the difference vectors
onto the unit sphere, and an InfoNCE objective pulls same-location pairs
together against all other pairs from the same image. The loss exists only in
the training graph; inference never touches it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .encoder import TAP_CHANNELS, Encoder
from .nn import Linear, Module

NEIGHBOR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))

NORM_EPS = 1e-8  # added to the row norm before division


@dataclass(frozen=True)
class SamplingPlan:
    """How many anchors to draw and how the sampling RNG is managed."""

    anchors_per_layer: int = 8
    rng_seed_policy: str = "fresh_per_step"
    neighbor_offsets: tuple = NEIGHBOR_OFFSETS

    def __post_init__(self):
        if self.anchors_per_layer < 1:
            raise ValueError("anchors_per_layer must be positive")
        if self.rng_seed_policy not in ("fresh_per_step", "fixed"):
            raise ValueError(f"unknown rng_seed_policy {self.rng_seed_policy!r}")


@dataclass
class DifferenceVectorBatch:
    """Paired anchor-minus-neighbor vectors from generated and content maps.

    ``generated[m]`` and ``content[m]`` were computed at the identical
    (anchor, neighbor) location; ``locations[m]`` records (row, col,
    neighbor index) for bookkeeping.
    """

    generated: Tensor  # (M, C)
    content: Tensor    # (M, C)
    locations: np.ndarray  # (M, 3) int

    @property
    def count(self) -> int:
        return self.generated.shape[0]


@dataclass(frozen=True)
class CcplConfig:
    tau: float = 0.07
    layers: tuple[str, ...] = ("relu2_1", "relu3_1", "relu4_1")
    anchors_per_layer: int = 8
    negative_scope: str = "within_same_image"
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.negative_scope != "within_same_image":
            raise ValueError("only within_same_image negatives are supported")
        object.__setattr__(self, "layers", tuple(self.layers))


class Projector(Module):
    """Two-layer MLP (one hidden rectifier) mapping difference vectors to the
    embedding space; one projector per loss layer since channel widths differ."""

    def __init__(self, c_in: int, width: int = 128,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.fc1 = Linear(c_in, width, rng=rng, dtype=dtype)
        self.fc2 = Linear(width, width, rng=rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.relu(self.fc1(x)))


class ProjectorBank(Module):
    """Per-layer projectors, checkpointed with the rest of the trainables."""

    def __init__(self, layers: tuple[str, ...], width: int = 128,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = tuple(layers)
        for layer in self.layers:
            setattr(self, layer, Projector(TAP_CHANNELS[layer], width, rng, dtype))

    def __getitem__(self, layer: str) -> Projector:
        return getattr(self, layer)


def sample_difference_vectors(g_f, c_f, plan: SamplingPlan,
                              rng: np.random.Generator) -> DifferenceVectorBatch:
    """Draw anchors and build the paired difference-vector batch.

    Anchors are distinct interior positions (all eight neighbors in bounds);
    the content map is sampled at exactly the same locations. The content
    side is detached: its features come from the frozen encoder over a fixed
    image, so this only documents that no gradient flows there.
    """
    g_t = g_f if isinstance(g_f, Tensor) else Tensor(np.asarray(g_f))
    c_t = c_f if isinstance(c_f, Tensor) else Tensor(np.asarray(c_f))
    if g_t.shape != c_t.shape:
        raise ValueError(f"feature shapes differ: {g_t.shape} vs {c_t.shape}")
    if g_t.ndim != 3:
        raise ValueError("sample_difference_vectors works on single (C, H, W) maps")
    ch, h, w = g_t.shape
    if h < 3 or w < 3:
        raise ValueError(f"map {h}x{w} has no interior anchors; need at least 3x3")

    interior = (h - 2) * (w - 2)
    n = min(plan.anchors_per_layer, interior)
    flat_choice = rng.choice(interior, size=n, replace=False)
    ai = flat_choice // (w - 2) + 1
    aj = flat_choice % (w - 2) + 1

    offsets = np.asarray(plan.neighbor_offsets, dtype=np.int64)
    ni = ai[:, None] + offsets[:, 0][None, :]  # (n, 8)
    nj = aj[:, None] + offsets[:, 1][None, :]
    anchor_flat = np.repeat(ai * w + aj, len(offsets))
    neighbor_flat = (ni * w + nj).reshape(-1)
    locations = np.stack([np.repeat(ai, len(offsets)), np.repeat(aj, len(offsets)),
                          np.tile(np.arange(len(offsets)), n)], axis=1)

    g_flat = ag.reshape(g_t, (ch, h * w))
    c_flat = ag.reshape(c_t, (ch, h * w)).detach()
    d_g = ag.transpose_last2(ag.take_columns(g_flat, anchor_flat)
                             - ag.take_columns(g_flat, neighbor_flat))
    d_c = ag.transpose_last2(ag.take_columns(c_flat, anchor_flat)
                             - ag.take_columns(c_flat, neighbor_flat))
    return DifferenceVectorBatch(generated=d_g, content=d_c, locations=locations)


def _l2_rows(x: Tensor) -> Tensor:
    norm = ag.sqrt((x * x).sum(axis=1, keepdims=True) + NORM_EPS ** 2)
    return x / (norm + NORM_EPS)


def project(batch: DifferenceVectorBatch, params: Projector) -> tuple[Tensor, Tensor]:
    """Map both sides of the batch through the shared MLP and unit-normalize."""
    if batch.generated.shape[1] != params.fc1.weight.shape[0]:
        raise ValueError(
            f"projector expects {params.fc1.weight.shape[0]} input channels, "
            f"got {batch.generated.shape[1]}")
    return _l2_rows(params(batch.generated)), _l2_rows(params(batch.content))


def ccpl_infonce(z_g: Tensor, z_c: Tensor, tau: float) -> Tensor:
    """InfoNCE over same-location positives with all other pairs as negatives.

    loss = sum_m -log( exp(z_g[m].z_c[m]/tau) / sum_n exp(z_g[m].z_c[n]/tau) )
    """
    if z_g.shape != z_c.shape:
        raise ValueError(f"embedding shapes differ: {z_g.shape} vs {z_c.shape}")
    m = z_g.shape[0]
    if m < 2:
        raise ValueError("need at least two difference vectors so negatives exist")
    logits = ag.matmul(z_g, ag.transpose_last2(z_c)) * (1.0 / tau)
    positive = (z_g * z_c).sum(axis=1) * (1.0 / tau)
    row_max = Tensor(logits.data.max(axis=1, keepdims=True))  # constant shift
    lse = ag.log(ag.exp(logits - row_max).sum(axis=1)) + ag.reshape(row_max, (m,))
    return (lse - positive).sum()


def ccpl_from_pyramids(pyr_g, pyr_c, config: CcplConfig, projectors: ProjectorBank,
                       rng: np.random.Generator | None = None) -> Tensor:
    """Sum the per-layer, per-image InfoNCE terms over already-encoded pyramids."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    plan = SamplingPlan(anchors_per_layer=config.anchors_per_layer)
    total = Tensor(np.zeros((), dtype=np.float64))
    for layer in config.layers:
        g_map, c_map = pyr_g[layer], pyr_c[layer]
        g_batched = g_map if g_map.ndim == 4 else ag.reshape(g_map, (1,) + g_map.shape)
        c_batched = c_map if c_map.ndim == 4 else ag.reshape(c_map, (1,) + c_map.shape)
        for b in range(g_batched.shape[0]):
            g_one = ag.reshape(g_batched, g_batched.shape)  # keep graph simple
            g_img = ag.take_columns(
                ag.reshape(g_one, (g_batched.shape[0], -1)), np.array([b]))
            # slicing via take_columns keeps autograd; reshape back to (C, H, W)
            g_img = ag.reshape(ag.transpose_last2(g_img), g_batched.shape[1:])
            c_img = Tensor(c_batched.data[b])
            batch = sample_difference_vectors(g_img, c_img, plan, rng)
            z_g, z_c = project(batch, projectors[layer])
            total = total + ccpl_infonce(z_g, z_c, config.tau)
    return total


def ccpl_total(content_img, generated_img, encoder: Encoder, config: CcplConfig,
               projectors: ProjectorBank, rng: np.random.Generator | None = None) -> Tensor:
    """Encode both images and sum the coherence loss over the configured layers.

    With an empty layer list the loss is exactly zero and nothing is encoded.
    """
    if not config.layers:
        return Tensor(np.zeros(()))
    missing = [l for l in config.layers if l not in encoder.tap_names]
    if missing:
        raise ValueError(f"layers {missing} not available on this encoder")
    pyr_c = encoder.encode(content_img, tuple(config.layers))
    pyr_g = encoder.encode(generated_img, tuple(config.layers))
    return ccpl_from_pyramids(pyr_g, pyr_c, config, projectors, rng)
