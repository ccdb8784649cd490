"""Combining the six plane features into one vector per query point.

Two modes.  Hadamard is the baseline: the elementwise product of all six
feature vectors.  The adaptive mode learns a data-dependent convex mix: each
C-vector is reshaped to a small HxW map (H*W = C), a per-branch 3x3 conv
summarizes every branch, the summaries are summed and average-pooled to one
scalar, a small affine+ReLU expands that scalar to a descriptor, and six
linear heads turn the descriptor into six logits.  One softmax across the
six branches yields the mixing weights.

The softmax runs jointly over all branches on purpose: normalizing each
branch alone would send every weight to a constant and the mix would stop
adapting.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node, Tape
from .field import FeatureBundle

DESCRIPTOR_WIDTH = 32


class FusionMode(str, enum.Enum):
    AFF = "aff"
    HADAMARD = "hadamard"


def square_factors(c: int) -> tuple[int, int]:
    """Most square factorization h * w = c with h <= w."""
    h = int(math.isqrt(c))
    while c % h:
        h -= 1
    return h, c // h


@dataclass
class AffWeights:
    """Parameters of the adaptive mix.

    conv_k: (6, 1, 1, 3, 3) per-branch summary kernels, conv_b: (6,)
    expand_w: (1, d), expand_b: (d,) scalar-to-descriptor affine
    branch_w: (d, 6), branch_b: (6,) descriptor-to-logit heads
    map_h, map_w: the HxW reshape of a C-vector, map_h * map_w = C
    """

    conv_k: np.ndarray
    conv_b: np.ndarray
    expand_w: np.ndarray
    expand_b: np.ndarray
    branch_w: np.ndarray
    branch_b: np.ndarray
    map_h: int
    map_w: int

    def __post_init__(self):
        d = self.expand_w.shape[1]
        if self.conv_k.shape != (6, 1, 1, 3, 3) or self.conv_b.shape != (6,):
            raise ValueError(f"bad conv weights {self.conv_k.shape}, {self.conv_b.shape}")
        if self.expand_w.shape != (1, d) or self.expand_b.shape != (d,):
            raise ValueError(f"bad expand weights {self.expand_w.shape}, {self.expand_b.shape}")
        if self.branch_w.shape != (d, 6) or self.branch_b.shape != (6,):
            raise ValueError(f"bad branch weights {self.branch_w.shape}, {self.branch_b.shape}")

    @property
    def channels(self) -> int:
        return self.map_h * self.map_w

    def named(self) -> dict[str, np.ndarray]:
        return {
            "conv_k": self.conv_k,
            "conv_b": self.conv_b,
            "expand_w": self.expand_w,
            "expand_b": self.expand_b,
            "branch_w": self.branch_w,
            "branch_b": self.branch_b,
        }


def init_aff(channels: int, seed: int = 0, descriptor: int = DESCRIPTOR_WIDTH) -> AffWeights:
    h, w = square_factors(channels)
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)

    return AffWeights(
        conv_k=he((6, 1, 1, 3, 3), 9),
        conv_b=np.zeros(6),
        expand_w=he((1, descriptor), 1),
        expand_b=np.zeros(descriptor),
        branch_w=he((descriptor, 6), descriptor),
        branch_b=np.zeros(6),
        map_h=h,
        map_w=w,
    )


def fuse_aff_batch(
    tape: Tape, w: dict[str, Node], feats: list[Node], map_h: int, map_w: int
) -> tuple[Node, Node]:
    """Adaptive mix of six (N, C) feature nodes -> ((N, C) mix, (N, 6) weights)."""
    n = feats[0].shape[0]
    summed = None
    for i, f in enumerate(feats):
        img = f.reshape((n, 1, map_h, map_w))
        k = ag.narrow(tape, w["conv_k"], 0, i, 1).reshape((1, 1, 3, 3))
        b = ag.narrow(tape, w["conv_b"], 0, i, 1)
        m = ag.conv3x3(tape, img, k, b)
        summed = m if summed is None else summed + m
    pooled = summed.mean(axis=(1, 2, 3)).reshape((n, 1))
    z = ((pooled @ w["expand_w"]) + w["expand_b"]).relu()
    logits = (z @ w["branch_w"]) + w["branch_b"]
    weights = ag.softmax(tape, logits)
    mixed = None
    for i, f in enumerate(feats):
        wi = ag.narrow(tape, weights, 1, i, 1)
        term = ag.scale_rows(tape, f, wi)
        mixed = term if mixed is None else mixed + term
    return mixed, weights


def fuse_hadamard_batch(tape: Tape, feats: list[Node]) -> Node:
    """Baseline mix: elementwise product of all six feature nodes."""
    out = feats[0]
    for f in feats[1:]:
        out = out * f
    return out


def _as_nodes(tape: Tape, w: AffWeights) -> dict[str, Node]:
    return {k: tape.leaf(v) for k, v in w.named().items()}


def fuse_aff(w: AffWeights, bundle: FeatureBundle) -> tuple[np.ndarray, np.ndarray]:
    """Single-point adaptive mix -> ((C,) fused vector, (6,) weights)."""
    tape = Tape()
    feats = [tape.leaf(f[None, :]) for f in (*bundle.angle_feats, *bundle.wave_feats)]
    mixed, weights = fuse_aff_batch(tape, _as_nodes(tape, w), feats, w.map_h, w.map_w)
    return mixed.value[0], weights.value[0]


def fuse_hadamard(bundle: FeatureBundle) -> np.ndarray:
    out = np.ones_like(bundle.angle_feats[0])
    for f in (*bundle.angle_feats, *bundle.wave_feats):
        out = out * f
    return out
