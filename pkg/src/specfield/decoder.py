"""Small MLP head turning a fused feature vector into one compressed value.

Three dense layers C -> 64 -> 64 -> 1 with ReLU after the first two and a
plain affine output.  The output lives in the companded domain used by the
training losses, not in raw reflectance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import Node, Tape

HIDDEN_WIDTH = 64


@dataclass
class MlpWeights:
    w1: np.ndarray  # (C, hidden)
    b1: np.ndarray
    w2: np.ndarray  # (hidden, hidden)
    b2: np.ndarray
    w3: np.ndarray  # (hidden, 1)
    b3: np.ndarray

    def __post_init__(self):
        c, h = self.w1.shape
        if self.b1.shape != (h,) or self.w2.shape != (h, h) or self.b2.shape != (h,):
            raise ValueError("hidden layer shapes are inconsistent")
        if self.w3.shape != (h, 1) or self.b3.shape != (1,):
            raise ValueError("output layer must map hidden -> 1")

    @property
    def channels(self) -> int:
        return self.w1.shape[0]

    def named(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2,
                "b2": self.b2, "w3": self.w3, "b3": self.b3}


def init_mlp(channels: int, hidden: int = HIDDEN_WIDTH, seed: int = 0) -> MlpWeights:
    rng = np.random.default_rng(seed)

    def he(shape, fan_in):
        return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)

    return MlpWeights(
        w1=he((channels, hidden), channels), b1=np.zeros(hidden),
        w2=he((hidden, hidden), hidden), b2=np.zeros(hidden),
        w3=he((hidden, 1), hidden), b3=np.zeros(1),
    )


def decode_batch(tape: Tape, w: dict[str, Node], x: Node) -> Node:
    """(N, C) features -> (N,) companded predictions."""
    h1 = ((x @ w["w1"]) + w["b1"]).relu()
    h2 = ((h1 @ w["w2"]) + w["b2"]).relu()
    out = (h2 @ w["w3"]) + w["b3"]
    return out.reshape((x.shape[0],))


def decode(weights: MlpWeights, feat: np.ndarray) -> float:
    """Single feature vector -> companded prediction."""
    tape = Tape()
    nodes = {k: tape.leaf(v) for k, v in weights.named().items()}
    out = decode_batch(tape, nodes, tape.leaf(feat[None, :]))
    return float(out.value[0])
