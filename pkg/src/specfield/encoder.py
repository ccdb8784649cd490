"""Image-to-planes generator: predict a material's plane stacks from a photo.

The network maps a 3x64x64 rendered preview through four stride-2 3x3 convs
(3 -> 16 -> 32 -> 64 -> 128 channels, ReLU between) down to a 4x4 code, then
back up through four nearest-upsample + 3x3 conv stages to 6*C channels at
64x64.  A bilinear resize to an SxS working grid follows; the six channel
groups are split apart and each is resized again to its plane's extent.

Training shares one mixing head and one decoder across materials: every step
encodes each preview, projects sampled query points through the generated
planes, and backpropagates the companded reconstruction error through the
whole stack into the conv weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Node, Tape
from .brdf_io import FormatError, SpectralBrdfTable
from .coords import WavelengthAxis, normalize_angles
from .decoder import HIDDEN_WIDTH, init_mlp
from .field import Triplanes, project_batch
from .fusion import FusionMode, init_aff
from .trainer import (Adam, SstaModel, TrainConfig, sample_spectral,
                      schedule_lr)

INPUT_SIZE = 64
ENC_CHANNELS = (3, 16, 32, 64, 128)
DEC_CHANNELS = (128, 64, 64, 48)
WORK_SIZE = 96


@dataclass
class EncoderWeights:
    """Conv stacks of the generator.

    enc_k[i]: (ENC_CHANNELS[i+1], ENC_CHANNELS[i], 3, 3), stride 2 each.
    dec_k[i]: upsampling stages ending at 6 * channels outputs.
    """

    enc_k: list[np.ndarray]
    enc_b: list[np.ndarray]
    dec_k: list[np.ndarray]
    dec_b: list[np.ndarray]
    channels: int
    out_size: int = WORK_SIZE

    def __post_init__(self):
        if len(self.enc_k) != 4 or len(self.dec_k) != 4:
            raise ValueError("expected four conv stages on each side")
        if self.dec_k[-1].shape[0] != 6 * self.channels:
            raise ValueError(
                f"final stage must emit {6 * self.channels} channels, "
                f"got {self.dec_k[-1].shape[0]}"
            )

    def named(self) -> dict[str, np.ndarray]:
        out = {}
        for i in range(4):
            out[f"enc_k{i}"] = self.enc_k[i]
            out[f"enc_b{i}"] = self.enc_b[i]
        for i in range(4):
            out[f"dec_k{i}"] = self.dec_k[i]
            out[f"dec_b{i}"] = self.dec_b[i]
        return out

    @classmethod
    def from_named(cls, tensors: dict[str, np.ndarray], channels: int,
                   out_size: int = WORK_SIZE) -> "EncoderWeights":
        return cls(
            enc_k=[tensors[f"enc_k{i}"] for i in range(4)],
            enc_b=[tensors[f"enc_b{i}"] for i in range(4)],
            dec_k=[tensors[f"dec_k{i}"] for i in range(4)],
            dec_b=[tensors[f"dec_b{i}"] for i in range(4)],
            channels=channels, out_size=out_size,
        )


def init_encoder(channels: int, seed: int = 0) -> EncoderWeights:
    rng = np.random.default_rng(seed)

    def he(cout, cin):
        return rng.normal(0.0, math.sqrt(2.0 / (cin * 9)), size=(cout, cin, 3, 3))

    enc_k = [he(ENC_CHANNELS[i + 1], ENC_CHANNELS[i]) for i in range(4)]
    enc_b = [np.zeros(ENC_CHANNELS[i + 1]) for i in range(4)]
    outs = list(DEC_CHANNELS[1:]) + [6 * channels]
    ins = list(DEC_CHANNELS)
    dec_k = [he(o, i) for o, i in zip(outs, ins)]
    dec_b = [np.zeros(o) for o in outs]
    return EncoderWeights(enc_k=enc_k, enc_b=enc_b, dec_k=dec_k, dec_b=dec_b,
                          channels=channels)


def encode_batch(
    tape: Tape,
    w: dict[str, Node],
    images: Node,
    channels: int,
    dims: tuple[int, int, int],
    m: int,
    out_size: int = WORK_SIZE,
) -> list[list[Node]]:
    """(K, 3, 64, 64) images -> per-image lists of six plane nodes."""
    k = images.shape[0]
    x = images
    for i in range(4):
        x = ag.conv3x3(tape, x, w[f"enc_k{i}"], w[f"enc_b{i}"], stride=2)
        x = x.relu()
    for i in range(4):
        x = ag.upsample2x(tape, x)
        x = ag.conv3x3(tape, x, w[f"dec_k{i}"], w[f"dec_b{i}"])
        if i < 3:
            x = x.relu()
    x = ag.bilinear_resize(tape, x, out_size, out_size)  # (K, 6C, S, S)
    d1, d2, d3 = dims
    extents = [(d1, d2), (d1, d3), (d2, d3), (d1, m), (d2, m), (d3, m)]
    per_image = []
    for ki in range(k):
        one = ag.narrow(tape, x, 0, ki, 1)  # (1, 6C, S, S)
        planes = []
        for gi, (eh, ew) in enumerate(extents):
            group = ag.narrow(tape, one, 1, gi * channels, channels)
            sized = ag.bilinear_resize(tape, group, eh, ew)
            planes.append(sized.reshape((channels, eh, ew)))
        per_image.append(planes)
    return per_image


def encode(
    weights: EncoderWeights,
    image: np.ndarray,
    dims: tuple[int, int, int],
    axis: WavelengthAxis,
) -> Triplanes:
    """Predict the plane stacks for one (3, 64, 64) preview image."""
    if image.shape != (3, INPUT_SIZE, INPUT_SIZE):
        raise ValueError(f"image must be (3, {INPUT_SIZE}, {INPUT_SIZE}), "
                         f"got {image.shape}")
    tape = Tape()
    nodes = {k: tape.leaf(v) for k, v in weights.named().items()}
    per_image = encode_batch(tape, nodes, tape.leaf(image[None]),
                             weights.channels, dims, axis.count,
                             weights.out_size)
    vals = [p.value for p in per_image[0]]
    return Triplanes(angle_planes=tuple(vals[:3]), wave_planes=tuple(vals[3:]),
                     axis=axis)


# ---------------------------------------------------------------------------
# training

@dataclass
class EncoderPair:
    """One training material: preview image plus its reflectance table."""

    image: np.ndarray
    table: SpectralBrdfTable


@dataclass
class EncoderFit:
    encoder: EncoderWeights
    shared: SstaModel  # aff + mlp heads, no planes
    dims: tuple[int, int, int]
    axis: WavelengthAxis
    history: list[dict]

    def model_for(self, image: np.ndarray) -> SstaModel:
        """Full per-material model from a preview image."""
        planes = encode(self.encoder, image, self.dims, self.axis)
        return SstaModel(planes=planes, aff=self.shared.aff,
                         mlp=self.shared.mlp, fusion=self.shared.fusion,
                         mu=self.shared.mu)


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def train_encoder(
    pairs: Sequence[EncoderPair],
    cfg: TrainConfig,
    steps: int,
    callback: Optional[Callable[[int, float], bool]] = None,
) -> EncoderFit:
    """Joint optimization of encoder convs plus shared mixing/decoding heads.

    Each step encodes every preview once and draws cfg.batch_size query
    points per material.  Zero steps returns the freshly initialized
    weights.  The plane smoothness penalty applies to the generated planes,
    steering the convs toward smooth outputs.

    The step budget is divided into cfg.epochs equal spans for learning
    rate scheduling, so cfg.halve_every means the same thing here as in
    fit().
    """
    if not pairs:
        raise ValueError("no training pairs")
    dims = pairs[0].table.dims
    axis = pairs[0].table.axis
    for p in pairs:
        if p.table.dims != dims or p.table.axis != axis:
            raise ValueError("all pairs must share table dimensions and axis")
        if p.image.shape != (3, INPUT_SIZE, INPUT_SIZE):
            raise ValueError(f"preview must be (3, {INPUT_SIZE}, {INPUT_SIZE})")

    enc = init_encoder(cfg.channels, seed=cfg.seed)
    aff = init_aff(cfg.channels, seed=cfg.seed + 1) \
        if cfg.fusion is FusionMode.AFF else None
    mlp = init_mlp(cfg.channels, HIDDEN_WIDTH, seed=cfg.seed + 2)
    shared = SstaModel(planes=None, aff=aff, mlp=mlp, fusion=cfg.fusion,
                       mu=cfg.mu)
    images = np.stack([p.image for p in pairs])
    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    history = []

    from .fusion import fuse_aff_batch, fuse_hadamard_batch
    from .decoder import decode_batch

    for step in range(steps):
        tape = Tape()
        params = {}
        for k, v in enc.named().items():
            params[f"encoder/{k}"] = v
        for k, v in shared.named_params().items():
            params[k] = v
        nodes = {k: tape.leaf(v) for k, v in params.items()}
        enc_nodes = {k.split("/", 1)[1]: v for k, v in nodes.items()
                     if k.startswith("encoder/")}
        aff_nodes = {k.split("/", 1)[1]: v for k, v in nodes.items()
                     if k.startswith("aff/")}
        mlp_nodes = {k.split("/", 1)[1]: v for k, v in nodes.items()
                     if k.startswith("mlp/")}
        per_image = encode_batch(tape, enc_nodes, tape.leaf(images),
                                 cfg.channels, dims, axis.count, enc.out_size)
        loss = None
        for mi, pair in enumerate(pairs):
            batch = sample_spectral(pair.table, cfg.batch_size,
                                    seed=_derived_seed(cfg.seed, mi, step),
                                    mu=cfg.mu)
            u_th, u_td, u_pd = normalize_angles(batch.theta_h, batch.theta_d,
                                                batch.phi_d)
            u_lam = axis.normalize(batch.lam)
            feats = project_batch(tape, per_image[mi], u_th, u_td, u_pd, u_lam)
            if cfg.fusion is FusionMode.AFF:
                fused, _ = fuse_aff_batch(tape, aff_nodes, feats,
                                          aff.map_h, aff.map_w)
            else:
                fused = fuse_hadamard_batch(tape, feats)
            pred = decode_batch(tape, mlp_nodes, fused)
            term = (pred - tape.leaf(batch.target)).square().mean()
            loss = term if loss is None else loss + term
            if cfg.tv_weight > 0:
                tv = ag.tv2d(tape, per_image[mi][0])
                for pl in per_image[mi][1:]:
                    tv = tv + ag.tv2d(tape, pl)
                loss = loss + tv.scale(cfg.tv_weight / len(pairs))
        val = float(loss.value)
        if not np.isfinite(val):
            raise RuntimeError(f"encoder loss diverged at step {step}")
        tape.backward(loss)
        grads = {k: tape.grad(n) for k, n in nodes.items()}
        lr = schedule_lr(cfg.learning_rate, step * cfg.epochs // steps,
                         cfg.halve_every)
        opt.step(params, grads, lr=lr)
        history.append({"step": step, "loss": val, "lr": lr})
        if callback is not None and callback(step, val):
            break
    return EncoderFit(encoder=enc, shared=shared, dims=dims, axis=axis,
                      history=history)


def save_encoder_fit(fit: EncoderFit, path) -> None:
    """One file holding conv weights, shared heads and the target grid."""
    from .trainer import save_model

    save_model(fit.shared, path, encoder=fit.encoder,
               encoder_dims=fit.dims, encoder_axis=fit.axis)


def load_encoder_fit(path) -> EncoderFit:
    """Inverse of save_encoder_fit; the step history is not persisted."""
    from .trainer import load_model, read_model_header

    meta = read_model_header(path).get("encoder")
    if meta is None or "dims" not in meta or "axis" not in meta:
        raise FormatError(f"{path}: no image-to-planes bundle in this file")
    shared, enc = load_model(path)
    axis = WavelengthAxis(meta["axis"]["lam_min"], meta["axis"]["lam_max"],
                          meta["axis"]["count"])
    return EncoderFit(encoder=enc, shared=shared,
                      dims=tuple(meta["dims"]), axis=axis, history=[])
