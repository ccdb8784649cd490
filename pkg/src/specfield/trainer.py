"""Fitting plane fields to reflectance tables.

Targets are companded with a logarithmic mu-law before the squared error so
the optimizer spends its effort where reflectance is small; raw values span
several orders of magnitude between diffuse floors and specular peaks.  The
data term is plain MSE in companded space, a total-variation penalty keeps
all six planes smooth, and an optional panchromatic term trains against
wavelength-free targets through the collapsed projection.

All optimization math runs in float64 on a fresh tape per step, so a run is
bit-reproducible from (config, data, seed).  Parameters update with Adam and
a stepwise learning-rate halving every few epochs.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autograd as ag
from .autograd import Node, Tape
from .brdf_io import SpectralBrdfTable, table_bin_angles
from .coords import WavelengthAxis, bin_center_u, denormalize_angles, normalize_angles
from .decoder import HIDDEN_WIDTH, MlpWeights, decode_batch, init_mlp
from .field import (
    PLANE_NAMES,
    Triplanes,
    init_triplanes,
    project_batch,
    project_rgb_batch,
)
from .fusion import (
    AffWeights,
    FusionMode,
    fuse_aff_batch,
    fuse_hadamard_batch,
    init_aff,
)

MU_DEFAULT = 255.0

MODEL_MAGIC = b"SSTA"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# companding

def mulaw(r, mu: float = MU_DEFAULT):
    """log(1 + mu*|r|) / log(1 + mu); maps 0 -> 0 and 1 -> 1 exactly."""
    r = np.asarray(r, dtype=np.float64)
    return np.log1p(mu * np.abs(r)) / np.log1p(mu)


def mulaw_inv(y, mu: float = MU_DEFAULT):
    """Inverse companding on nonnegative inputs."""
    y = np.asarray(y, dtype=np.float64)
    return (np.power(1.0 + mu, y) - 1.0) / mu


# ---------------------------------------------------------------------------
# configuration and model containers

@dataclass
class TrainConfig:
    channels: int = 64
    fusion: FusionMode = FusionMode.AFF
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 65536
    epochs: int = 20
    halve_every: int = 4
    samples_per_material: int = 5_120_000
    tv_weight: float = 2.0
    mu: float = MU_DEFAULT
    seed: int = 0

    def __post_init__(self):
        self.fusion = FusionMode(self.fusion)
        if self.channels < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("channels and batch_size must be positive, epochs >= 0")
        if self.halve_every < 1:
            raise ValueError("halve_every must be >= 1")
        if self.learning_rate < 0 or self.tv_weight < 0 or self.mu <= 0:
            raise ValueError("learning_rate, tv_weight must be >= 0 and mu > 0")

    def to_json(self) -> str:
        d = self.__dict__.copy()
        d["fusion"] = self.fusion.value
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        d = json.loads(text)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class SstaModel:
    """A fitted material: six planes plus the shared mixing and decoding heads.

    planes may be None for a container that only carries the shared heads
    (the image-to-planes generator stores its output planes separately).
    """

    planes: Optional[Triplanes]
    aff: Optional[AffWeights]
    mlp: MlpWeights
    fusion: FusionMode = FusionMode.AFF
    mu: float = MU_DEFAULT

    def __post_init__(self):
        self.fusion = FusionMode(self.fusion)
        if self.fusion is FusionMode.AFF and self.aff is None:
            raise ValueError("adaptive fusion requires aff weights")

    @property
    def channels(self) -> int:
        return self.mlp.channels

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        if self.planes is not None:
            for k, v in self.planes.named().items():
                out[f"planes/{k}"] = v
        if self.aff is not None:
            for k, v in self.aff.named().items():
                out[f"aff/{k}"] = v
        for k, v in self.mlp.named().items():
            out[f"mlp/{k}"] = v
        return out

    def _forward(self, tape: Tape, feats: list[Node]) -> Node:
        params = {k: tape.leaf(v) for k, v in self.named_params().items()
                  if not k.startswith("planes/")}
        if self.fusion is FusionMode.AFF:
            aff_nodes = {k.split("/", 1)[1]: v for k, v in params.items()
                         if k.startswith("aff/")}
            fused, _ = fuse_aff_batch(tape, aff_nodes, feats,
                                      self.aff.map_h, self.aff.map_w)
        else:
            fused = fuse_hadamard_batch(tape, feats)
        mlp_nodes = {k.split("/", 1)[1]: v for k, v in params.items()
                     if k.startswith("mlp/")}
        return decode_batch(tape, mlp_nodes, fused)

    def evaluate(self, theta_h, theta_d, phi_d, lam, chunk: int = 65536) -> np.ndarray:
        """Companded predictions at spectral query points (no gradients kept)."""
        if self.planes is None:
            raise ValueError("model has no planes to evaluate")
        th, td, pd, lm = np.broadcast_arrays(
            np.asarray(theta_h, np.float64), np.asarray(theta_d, np.float64),
            np.asarray(phi_d, np.float64), np.asarray(lam, np.float64))
        shape = th.shape
        th, td, pd, lm = (a.ravel() for a in (th, td, pd, lm))
        out = np.empty(th.size, dtype=np.float64)
        for s in range(0, th.size, chunk):
            e = min(s + chunk, th.size)
            u_th, u_td, u_pd = normalize_angles(th[s:e], td[s:e], pd[s:e])
            u_lam = self.planes.axis.normalize(lm[s:e])
            tape = Tape()
            nodes = [tape.leaf(p) for p in
                     (*self.planes.angle_planes, *self.planes.wave_planes)]
            feats = project_batch(tape, nodes, u_th, u_td, u_pd, u_lam)
            out[s:e] = self._forward(tape, feats).value
        return out.reshape(shape)

    def evaluate_rgb(self, theta_h, theta_d, phi_d, chunk: int = 65536) -> np.ndarray:
        """Companded panchromatic predictions."""
        if self.planes is None:
            raise ValueError("model has no planes to evaluate")
        th, td, pd = np.broadcast_arrays(
            np.asarray(theta_h, np.float64), np.asarray(theta_d, np.float64),
            np.asarray(phi_d, np.float64))
        shape = th.shape
        th, td, pd = (a.ravel() for a in (th, td, pd))
        out = np.empty(th.size, dtype=np.float64)
        for s in range(0, th.size, chunk):
            e = min(s + chunk, th.size)
            u_th, u_td, u_pd = normalize_angles(th[s:e], td[s:e], pd[s:e])
            tape = Tape()
            nodes = [tape.leaf(p) for p in
                     (*self.planes.angle_planes, *self.planes.wave_planes)]
            feats = project_rgb_batch(tape, nodes, u_th, u_td, u_pd)
            out[s:e] = self._forward(tape, feats).value
        return out.reshape(shape)

    def reflectance(self, theta_h, theta_d, phi_d, lam) -> np.ndarray:
        """Predicted linear reflectance (companded output clamped at zero)."""
        y = self.evaluate(theta_h, theta_d, phi_d, lam)
        return mulaw_inv(np.maximum(y, 0.0), self.mu)


def init_model(
    cfg: TrainConfig,
    dims: tuple[int, int, int],
    axis: WavelengthAxis,
) -> SstaModel:
    planes = init_triplanes(cfg.channels, dims, axis, seed=cfg.seed)
    aff = init_aff(cfg.channels, seed=cfg.seed + 1) if cfg.fusion is FusionMode.AFF else None
    mlp = init_mlp(cfg.channels, HIDDEN_WIDTH, seed=cfg.seed + 2)
    return SstaModel(planes=planes, aff=aff, mlp=mlp, fusion=cfg.fusion, mu=cfg.mu)


# ---------------------------------------------------------------------------
# sampling

@dataclass
class SampleBatch:
    """Query points with companded targets; lam is NaN on panchromatic rows."""

    theta_h: np.ndarray
    theta_d: np.ndarray
    phi_d: np.ndarray
    lam: np.ndarray
    target: np.ndarray
    spectral: np.ndarray  # bool per row

    def __post_init__(self):
        n = self.theta_h.shape[0]
        for name in ("theta_d", "phi_d", "lam", "target", "spectral"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"batch field {name} length mismatch")
        if not np.all(np.isfinite(self.target)):
            raise ValueError("batch targets must be finite")
        if np.any(self.target < 0.0):
            raise ValueError("companded targets cannot be negative")
        if np.any(np.isnan(self.lam[self.spectral])):
            raise ValueError("spectral rows need a wavelength")

    def __len__(self) -> int:
        return self.theta_h.shape[0]


def _bin_angles(idx, dims):
    d1, d2, d3 = dims
    i, j, l = idx
    th = denormalize_angles(bin_center_u(i, d1), 0.0, 0.0)[0]
    td = denormalize_angles(0.0, bin_center_u(j, d2), 0.0)[1]
    pd = denormalize_angles(0.0, 0.0, bin_center_u(l, d3))[2]
    return th, td, pd


def sample_spectral(
    table: SpectralBrdfTable,
    count: int,
    seed: int = 0,
    mu: float = MU_DEFAULT,
    bin_subset: Optional[np.ndarray] = None,
) -> SampleBatch:
    """Uniform draws (with replacement) over table bins, at bin centers.

    bin_subset restricts the draw to the given flat bin indices, which is how
    sparse-sampling experiments keep most of the table hidden.
    """
    rng = np.random.default_rng(seed)
    m = table.table.shape[0]
    dims = table.dims
    total = m * int(np.prod(dims))
    if bin_subset is None:
        flat = rng.integers(0, total, size=count)
    else:
        if len(bin_subset) == 0:
            raise ValueError("bin_subset is empty")
        flat = np.asarray(bin_subset)[rng.integers(0, len(bin_subset), size=count)]
    k, i, j, l = np.unravel_index(flat, (m,) + dims)
    th, td, pd = _bin_angles((i, j, l), dims)
    lam = table.axis.centers()[k]
    r = table.table[k, i, j, l].astype(np.float64)
    return SampleBatch(
        theta_h=th, theta_d=td, phi_d=pd, lam=lam,
        target=mulaw(r, mu), spectral=np.ones(count, dtype=bool),
    )


def sample_panchromatic(
    gray: np.ndarray,
    valid: np.ndarray,
    count: int,
    seed: int = 0,
    mu: float = MU_DEFAULT,
) -> SampleBatch:
    """Uniform draws over the valid bins of a wavelength-free table."""
    if gray.ndim != 3 or valid.shape != gray.shape:
        raise ValueError(f"gray table and mask must be matching 3-D arrays, "
                         f"got {gray.shape} and {valid.shape}")
    rng = np.random.default_rng(seed)
    pool = np.flatnonzero(valid.ravel())
    if pool.size == 0:
        raise ValueError("no valid bins to sample")
    flat = pool[rng.integers(0, pool.size, size=count)]
    i, j, l = np.unravel_index(flat, gray.shape)
    th, td, pd = _bin_angles((i, j, l), gray.shape)
    r = gray[i, j, l].astype(np.float64)
    return SampleBatch(
        theta_h=th, theta_d=td, phi_d=pd,
        lam=np.full(count, np.nan), target=mulaw(r, mu),
        spectral=np.zeros(count, dtype=bool),
    )


def concat_batches(a: SampleBatch, b: SampleBatch) -> SampleBatch:
    return SampleBatch(
        theta_h=np.concatenate([a.theta_h, b.theta_h]),
        theta_d=np.concatenate([a.theta_d, b.theta_d]),
        phi_d=np.concatenate([a.phi_d, b.phi_d]),
        lam=np.concatenate([a.lam, b.lam]),
        target=np.concatenate([a.target, b.target]),
        spectral=np.concatenate([a.spectral, b.spectral]),
    )


# ---------------------------------------------------------------------------
# losses (array-level statements of what the tape computes)

def loss_spec(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean squared error in companded space."""
    d = np.asarray(pred, np.float64) - np.asarray(target, np.float64)
    return float(np.mean(d * d))


def loss_tv(planes: Triplanes) -> float:
    """Sum over planes of mean squared forward differences on both axes."""
    total = 0.0
    for p in (*planes.angle_planes, *planes.wave_planes):
        dh = np.diff(p, axis=1)
        dw = np.diff(p, axis=2)
        if dh.size:
            total += float(np.mean(dh * dh))
        if dw.size:
            total += float(np.mean(dw * dw))
    return total


# ---------------------------------------------------------------------------
# optimizer

class Adam:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        """Update params in place from matching grads."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        rc2 = 1.0 / (1.0 - b2**self.t)
        for name in params:
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            # lr * (m / c1) / (sqrt(v / c2) + eps), fused to limit passes
            denom = np.sqrt(v * rc2)
            denom += self.eps
            np.divide(m, denom, out=denom)
            denom *= lr / c1
            params[name] -= denom


# ---------------------------------------------------------------------------
# one optimization step

@dataclass
class StepReport:
    total: float
    spec: float
    rgb: float
    tv: float
    n_spectral: int
    n_rgb: int


def train_step(
    model: SstaModel,
    batch: SampleBatch,
    cfg: TrainConfig,
    opt: Adam,
    lr: Optional[float] = None,
) -> StepReport:
    """One forward/backward/update pass over a mixed batch.

    Builds a fresh tape, so the graph always reflects the current parameter
    values.  Raises RuntimeError with the offending term when any loss goes
    non-finite.
    """
    if model.planes is None:
        raise ValueError("model has no planes to train")
    lr = cfg.learning_rate if lr is None else lr
    tape = Tape()
    params = model.named_params()
    nodes = {k: tape.leaf(v) for k, v in params.items()}
    plane_nodes = [nodes[f"planes/{k}"] for k in PLANE_NAMES]
    aff_nodes = {k.split("/", 1)[1]: v for k, v in nodes.items()
                 if k.startswith("aff/")}
    mlp_nodes = {k.split("/", 1)[1]: v for k, v in nodes.items()
                 if k.startswith("mlp/")}

    def head(feats: list[Node]) -> Node:
        if model.fusion is FusionMode.AFF:
            fused, _ = fuse_aff_batch(tape, aff_nodes, feats,
                                      model.aff.map_h, model.aff.map_w)
        else:
            fused = fuse_hadamard_batch(tape, feats)
        return decode_batch(tape, mlp_nodes, fused)

    spec_rows = np.flatnonzero(batch.spectral)
    rgb_rows = np.flatnonzero(~batch.spectral)
    terms: list[Node] = []
    spec_val = rgb_val = 0.0

    if spec_rows.size:
        u_th, u_td, u_pd = normalize_angles(
            batch.theta_h[spec_rows], batch.theta_d[spec_rows],
            batch.phi_d[spec_rows])
        u_lam = model.planes.axis.normalize(batch.lam[spec_rows])
        feats = project_batch(tape, plane_nodes, u_th, u_td, u_pd, u_lam)
        pred = head(feats)
        l_spec = (pred - tape.leaf(batch.target[spec_rows])).square().mean()
        spec_val = float(l_spec.value)
        terms.append(l_spec)

    if rgb_rows.size:
        u_th, u_td, u_pd = normalize_angles(
            batch.theta_h[rgb_rows], batch.theta_d[rgb_rows],
            batch.phi_d[rgb_rows])
        feats = project_rgb_batch(tape, plane_nodes, u_th, u_td, u_pd)
        pred = head(feats)
        l_rgb = (pred - tape.leaf(batch.target[rgb_rows])).square().mean()
        rgb_val = float(l_rgb.value)
        terms.append(l_rgb)

    tv_node = ag.tv2d(tape, plane_nodes[0])
    for p in plane_nodes[1:]:
        tv_node = tv_node + ag.tv2d(tape, p)
    tv_val = float(tv_node.value)
    terms.append(tv_node.scale(cfg.tv_weight))

    total = terms[0]
    for t in terms[1:]:
        total = total + t
    total_val = float(total.value)
    if not np.isfinite(total_val):
        raise RuntimeError(
            f"loss diverged: spec={spec_val:.6g} rgb={rgb_val:.6g} "
            f"tv={tv_val:.6g}"
        )
    tape.backward(total)
    grads = {k: tape.grad(n) for k, n in nodes.items()}
    opt.step(params, grads, lr)
    return StepReport(total=total_val, spec=spec_val, rgb=rgb_val, tv=tv_val,
                      n_spectral=int(spec_rows.size), n_rgb=int(rgb_rows.size))


# ---------------------------------------------------------------------------
# full fit

@dataclass
class MaterialData:
    """Training data for one material.

    Either source may be missing; panchromatic is a (gray, valid) pair over
    the same angular grid.  bin_subset restricts spectral sampling to the
    given flat indices of the (M, D1, D2, D3) table.
    """

    spectral: Optional[SpectralBrdfTable] = None
    panchromatic: Optional[tuple[np.ndarray, np.ndarray]] = None
    bin_subset: Optional[np.ndarray] = None

    def dims(self) -> tuple[int, int, int]:
        if self.spectral is not None:
            return self.spectral.dims
        return self.panchromatic[0].shape


@dataclass
class FitResult:
    models: list[SstaModel]  # one per material, sharing aff and mlp objects
    history: list[dict]


def schedule_lr(base: float, epoch: int, halve_every: int) -> float:
    return base * 0.5 ** (epoch // halve_every)


def _derived_seed(*parts: int) -> int:
    ss = np.random.SeedSequence(list(parts))
    return int(ss.generate_state(1)[0])


def fit(
    materials: Union[SpectralBrdfTable, Sequence[MaterialData]],
    cfg: TrainConfig,
    axis: Optional[WavelengthAxis] = None,
    callback: Optional[Callable[[int, "FitResult"], bool]] = None,
) -> FitResult:
    """Optimize per-material planes plus shared heads.

    callback runs after each epoch with (epoch, partial result); returning
    True stops early.  Sampling seeds derive from (cfg.seed, material, epoch,
    step), so runs are reproducible.
    """
    if isinstance(materials, SpectralBrdfTable):
        materials = [MaterialData(spectral=materials)]
    if not materials:
        raise ValueError("no materials to fit")
    dims = materials[0].dims()
    for m in materials:
        if m.dims() != dims:
            raise ValueError("all materials must share table dimensions")
        if m.spectral is None and m.panchromatic is None:
            raise ValueError("material has no data")
    if axis is None:
        for m in materials:
            if m.spectral is not None:
                axis = m.spectral.axis
                break
    if axis is None:
        raise ValueError("panchromatic-only fits need an explicit wavelength axis")

    shared_aff = init_aff(cfg.channels, seed=cfg.seed + 1) \
        if cfg.fusion is FusionMode.AFF else None
    shared_mlp = init_mlp(cfg.channels, HIDDEN_WIDTH, seed=cfg.seed + 2)
    models = []
    for mi in range(len(materials)):
        planes = init_triplanes(cfg.channels, dims, axis,
                                seed=_derived_seed(cfg.seed, mi))
        models.append(SstaModel(planes=planes, aff=shared_aff, mlp=shared_mlp,
                                fusion=cfg.fusion, mu=cfg.mu))

    opt = Adam(cfg.beta1, cfg.beta2, cfg.eps)
    steps_per_epoch = max(1, -(-cfg.samples_per_material // cfg.batch_size))
    result = FitResult(models=models, history=[])

    for epoch in range(cfg.epochs):
        lr = schedule_lr(cfg.learning_rate, epoch, cfg.halve_every)
        for step in range(steps_per_epoch):
            for mi, mat in enumerate(materials):
                seed = _derived_seed(cfg.seed, mi, epoch, step)
                parts = []
                if mat.spectral is not None:
                    parts.append(sample_spectral(
                        mat.spectral, cfg.batch_size, seed=seed, mu=cfg.mu,
                        bin_subset=mat.bin_subset))
                if mat.panchromatic is not None:
                    gray, valid = mat.panchromatic
                    parts.append(sample_panchromatic(
                        gray, valid, cfg.batch_size, seed=seed + 1, mu=cfg.mu))
                batch = parts[0]
                for p in parts[1:]:
                    batch = concat_batches(batch, p)
                report = train_step(models[mi], batch, cfg, opt, lr=lr)
            result.history.append({
                "epoch": epoch, "step": step, "lr": lr,
                "total": report.total, "spec": report.spec,
                "rgb": report.rgb, "tv": report.tv,
            })
        if callback is not None and callback(epoch, result):
            break
    return result


# ---------------------------------------------------------------------------
# evaluation against a reference table

def eval_wavelengths(axis: WavelengthAxis, count: int = 9) -> np.ndarray:
    return np.linspace(axis.lam_min, axis.lam_max, count)


def model_table_psnr(
    model: SstaModel,
    table: SpectralBrdfTable,
    wavelengths: Optional[np.ndarray] = None,
    stride: tuple[int, int, int] = (1, 1, 1),
) -> dict:
    """Reconstruction PSNR in linear reflectance over the angular grid.

    Per wavelength, peak is the reference maximum at that wavelength; the
    summary value is the mean over wavelengths.  stride subsamples the grid
    for cheap progress checks.
    """
    from .metrics import psnr

    if wavelengths is None:
        wavelengths = eval_wavelengths(table.axis)
    from .brdf_io import eval_table

    th, td, pd = table_bin_angles(table.dims)
    th = th[:: stride[0]]
    td = td[:: stride[1]]
    pd = pd[:: stride[2]]
    tg, dg, pg = np.meshgrid(th, td, pd, indexing="ij")
    per_lam = []
    for lam in wavelengths:
        ref = eval_table(table, tg, dg, pg, lam)
        got = model.reflectance(tg, dg, pg, np.full_like(tg, lam))
        per_lam.append(psnr(got, ref, peak=float(ref.max())))
    finite = [p for p in per_lam if np.isfinite(p)]
    mean = float(np.mean(finite)) if finite else float("inf")
    return {"wavelengths": list(map(float, wavelengths)),
            "psnr": [float(p) for p in per_lam], "mean_psnr": mean}


# ---------------------------------------------------------------------------
# serialization

def _tensor_entries(model: SstaModel, encoder=None) -> dict[str, np.ndarray]:
    entries = dict(model.named_params())
    if encoder is not None:
        for k, v in encoder.named().items():
            entries[f"encoder/{k}"] = v
    return entries


def save_model(
    model: SstaModel,
    path: Union[str, Path],
    encoder=None,
    encoder_dims: Optional[tuple[int, int, int]] = None,
    encoder_axis: Optional[WavelengthAxis] = None,
) -> None:
    """Binary container: JSON header plus float32 tensors in manifest order.

    encoder_dims and encoder_axis record the plane grid an image-to-planes
    bundle was trained for; they only make sense together with encoder.
    """
    entries = _tensor_entries(model, encoder)
    header = {
        "channels": model.channels,
        "fusion": model.fusion.value,
        "mu": model.mu,
        "hidden": model.mlp.w2.shape[0],
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in entries.items()],
    }
    if model.planes is not None:
        d1, d2, d3 = model.planes.dims
        header["dims"] = [d1, d2, d3]
        header["axis"] = {
            "lam_min": model.planes.axis.lam_min,
            "lam_max": model.planes.axis.lam_max,
            "count": model.planes.axis.count,
        }
    if model.aff is not None:
        header["map_h"] = model.aff.map_h
        header["map_w"] = model.aff.map_w
    if encoder is not None:
        header["encoder"] = {"channels": encoder.channels,
                             "out_size": encoder.out_size}
        if encoder_dims is not None:
            header["encoder"]["dims"] = list(encoder_dims)
        if encoder_axis is not None:
            header["encoder"]["axis"] = {
                "lam_min": encoder_axis.lam_min,
                "lam_max": encoder_axis.lam_max,
                "count": encoder_axis.count,
            }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        f.write(blob)
        for v in entries.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def read_model_header(path: Union[str, Path]) -> dict:
    """Parse only the JSON header of a model file."""
    from .brdf_io import FormatError

    with open(path, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[:4] != MODEL_MAGIC:
            raise FormatError(f"{path}: not a model file")
        version, blob_len = struct.unpack("<II", head[4:])
        if version != MODEL_VERSION:
            raise FormatError(f"{path}: unsupported model version {version}")
        blob = f.read(blob_len)
    if len(blob) < blob_len:
        raise FormatError(f"{path}: truncated header")
    return json.loads(blob.decode("utf-8"))


def load_model(path: Union[str, Path]):
    """Returns (SstaModel, encoder-or-None)."""
    from .brdf_io import FormatError

    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file")
    version, blob_len = struct.unpack_from("<II", data, 4)
    if version != MODEL_VERSION:
        raise FormatError(f"{path}: unsupported model version {version}")
    header = json.loads(data[12 : 12 + blob_len].decode("utf-8"))
    off = 12 + blob_len
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off)
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
        off += 4 * n
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after tensor payload")

    fusion = FusionMode(header["fusion"])
    planes = None
    if "dims" in header:
        ax = header["axis"]
        axis = WavelengthAxis(ax["lam_min"], ax["lam_max"], ax["count"])
        planes = Triplanes(
            angle_planes=tuple(tensors[f"planes/{k}"] for k in PLANE_NAMES[:3]),
            wave_planes=tuple(tensors[f"planes/{k}"] for k in PLANE_NAMES[3:]),
            axis=axis,
        )
    aff = None
    if fusion is FusionMode.AFF:
        aff = AffWeights(
            conv_k=tensors["aff/conv_k"], conv_b=tensors["aff/conv_b"],
            expand_w=tensors["aff/expand_w"], expand_b=tensors["aff/expand_b"],
            branch_w=tensors["aff/branch_w"], branch_b=tensors["aff/branch_b"],
            map_h=header["map_h"], map_w=header["map_w"],
        )
    mlp = MlpWeights(
        w1=tensors["mlp/w1"], b1=tensors["mlp/b1"],
        w2=tensors["mlp/w2"], b2=tensors["mlp/b2"],
        w3=tensors["mlp/w3"], b3=tensors["mlp/b3"],
    )
    model = SstaModel(planes=planes, aff=aff, mlp=mlp, fusion=fusion,
                      mu=header["mu"])
    encoder = None
    if "encoder" in header:
        from .encoder import EncoderWeights

        enc_t = {k.split("/", 1)[1]: v for k, v in tensors.items()
                 if k.startswith("encoder/")}
        encoder = EncoderWeights.from_named(
            enc_t, channels=header["encoder"]["channels"],
            out_size=header["encoder"]["out_size"])
    return model, encoder
