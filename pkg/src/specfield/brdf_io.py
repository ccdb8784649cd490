"""Measured and synthetic reflectance tables plus their on-disk formats.

Two formats live here.  The measured-table format is the classic binary
layout: three little-endian int32 dimensions (90, 90, 180), then
3 * 90 * 90 * 180 float64 samples ordered blue block, green block, red block,
each indexed [theta_h][theta_d][phi_d] with the quadratic theta_h binning.
Stored numbers carry per-channel scale factors and use negative values to
mark unmeasured bins.  Parsing keeps the raw payload around so writing a
parsed file back out is byte identical.

The spectral container is ours: magic "SBRD", a small fixed header, a name,
and an (M, D1, D2, D3) float32 payload over a uniform wavelength axis.

All tables are bin centered on every axis: bin i covers normalized
coordinate [(i)/D, (i+1)/D] with center (i+0.5)/D, and theta_h uses the
square-root warp from the coords module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .coords import (
    WavelengthAxis,
    bin_center_u,
    denormalize_angles,
    normalize_angles,
    u_to_bin_coord,
)

MERL_DIMS = (90, 90, 180)
MERL_SCALE = np.array([1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0])  # R, G, B

SBRD_MAGIC = b"SBRD"
SBRD_VERSION = 1


class FormatError(ValueError):
    """Raised for malformed or truncated reflectance files."""


# ---------------------------------------------------------------------------
# measured RGB tables

@dataclass
class MerlBrdf:
    """Scaled RGB reflectance over the (theta_h, theta_d, phi_d) grid.

    table: (3, 90, 90, 180) float64, channel order R, G, B, invalid bins 0.
    valid: (90, 90, 180) bool, False where any stored channel was negative.
    raw:   the unscaled payload in file block order (B, G, R); present only
           for tables that came from a file, so rewriting is byte exact.
    """

    table: np.ndarray
    valid: np.ndarray
    raw: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.table.shape != (3,) + MERL_DIMS:
            raise ValueError(f"table must be (3, 90, 90, 180), got {self.table.shape}")
        if self.valid.shape != MERL_DIMS:
            raise ValueError(f"valid mask must be (90, 90, 180), got {self.valid.shape}")


def parse_merl(path: Union[str, Path]) -> MerlBrdf:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes)")
    dims = struct.unpack("<3i", data[:12])
    if tuple(dims) != MERL_DIMS:
        raise FormatError(f"{path}: unexpected dimensions {dims}, want {MERL_DIMS}")
    count = 3 * np.prod(MERL_DIMS)
    expect = 12 + 8 * count
    if len(data) != expect:
        raise FormatError(
            f"{path}: payload has {len(data) - 12} bytes, expected {expect - 12}"
        )
    raw = np.frombuffer(data, dtype="<f8", offset=12).reshape((3,) + MERL_DIMS)
    # file blocks are ordered B, G, R; flip to R, G, B and apply channel scales
    rgb = raw[::-1].astype(np.float64)
    finite = np.isfinite(rgb)
    measured = finite & (rgb >= 0.0)
    valid = measured.all(axis=0)
    table = np.where(measured, rgb, 0.0) * MERL_SCALE[:, None, None, None]
    return MerlBrdf(table=table, valid=valid, raw=raw.copy())


def write_merl(brdf: MerlBrdf, path: Union[str, Path]) -> None:
    if brdf.raw is not None:
        raw = brdf.raw
    else:
        rgb = brdf.table / MERL_SCALE[:, None, None, None]
        rgb = np.where(brdf.valid[None], rgb, -1.0)
        raw = rgb[::-1]
    payload = np.ascontiguousarray(raw, dtype="<f8")
    with open(path, "wb") as f:
        f.write(struct.pack("<3i", *MERL_DIMS))
        f.write(payload.tobytes())


def merl_grayscale(brdf: MerlBrdf) -> np.ndarray:
    """Per-bin mean of the three channels; invalid bins contribute zeros."""
    return brdf.table.mean(axis=0)


# ---------------------------------------------------------------------------
# spectral tables

@dataclass
class SpectralBrdfTable:
    """Nonnegative reflectance over wavelength x the warped angular grid.

    table is (M, D1, D2, D3) float32 with M == axis.count; axes after the
    wavelength one are theta_h, theta_d, phi_d.
    """

    table: np.ndarray
    axis: WavelengthAxis
    name: str = ""

    def __post_init__(self):
        t = self.table
        if t.ndim != 4:
            raise ValueError(f"table must be 4-D (M, D1, D2, D3), got {t.shape}")
        if t.shape[0] != self.axis.count:
            raise ValueError(
                f"wavelength count mismatch: table has {t.shape[0]} slices, "
                f"axis expects {self.axis.count}"
            )
        if t.dtype != np.float32:
            self.table = t = np.ascontiguousarray(t, dtype=np.float32)
        if not np.all(np.isfinite(t)):
            raise ValueError("table contains non-finite values")
        if np.any(t < 0.0):
            raise ValueError("table contains negative reflectance")

    @property
    def dims(self):
        return self.table.shape[1:]


def write_sbrd(table: SpectralBrdfTable, path: Union[str, Path]) -> None:
    t = np.ascontiguousarray(table.table, dtype="<f4")
    if not np.all(np.isfinite(t)):
        raise FormatError("refusing to write non-finite reflectance values")
    name = table.name.encode("utf-8")
    m, d1, d2, d3 = t.shape
    with open(path, "wb") as f:
        f.write(SBRD_MAGIC)
        f.write(struct.pack("<II", SBRD_VERSION, m))
        f.write(struct.pack("<III", d1, d2, d3))
        f.write(struct.pack("<ff", table.axis.lam_min, table.axis.lam_max))
        f.write(struct.pack("<I", len(name)))
        f.write(name)
        f.write(t.tobytes())


def read_sbrd(path: Union[str, Path]) -> SpectralBrdfTable:
    data = Path(path).read_bytes()
    if len(data) < 32 or data[:4] != SBRD_MAGIC:
        raise FormatError(f"{path}: not a spectral reflectance container")
    version, m = struct.unpack_from("<II", data, 4)
    if version != SBRD_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    d1, d2, d3 = struct.unpack_from("<III", data, 12)
    lam_min, lam_max = struct.unpack_from("<ff", data, 24)
    (name_len,) = struct.unpack_from("<I", data, 32)
    name_end = 36 + name_len
    if len(data) < name_end:
        raise FormatError(f"{path}: truncated name field")
    name = data[36:name_end].decode("utf-8")
    count = m * d1 * d2 * d3
    if len(data) != name_end + 4 * count:
        raise FormatError(
            f"{path}: payload has {len(data) - name_end} bytes, "
            f"expected {4 * count}"
        )
    payload = np.frombuffer(data, dtype="<f4", offset=name_end)
    table = payload.reshape(m, d1, d2, d3).copy()
    if not np.all(np.isfinite(table)):
        raise FormatError(f"{path}: non-finite reflectance values")
    if np.any(table < 0.0):
        raise FormatError(f"{path}: negative reflectance values")
    try:
        axis = WavelengthAxis(float(lam_min), float(lam_max), m)
    except ValueError as e:
        raise FormatError(f"{path}: bad wavelength axis ({e})")
    return SpectralBrdfTable(table=table, axis=axis, name=name)


# ---------------------------------------------------------------------------
# synthetic materials

@dataclass(frozen=True)
class SyntheticSpec:
    """Analytic material: Gaussian diffuse spectrum + tilted cosine lobe.

    reflectance(lam, th, pd) = diffuse(lam) / pi
        + spec_strength * (1 + spec_tilt * (lam - lam_mid))
          * (spec_exponent + 2) / (2 pi) * cos(th) ** spec_exponent
          * (1 - lobe_phi_depth * sin(pd)^2)
    with diffuse(lam) = diffuse_peak * exp(-(lam - diffuse_center)^2
                                           / (2 diffuse_width^2)),
    clamped at zero.  lam_mid is the center of the wavelength axis.  The
    default lobe_phi_depth of zero keeps the lobe rotationally symmetric
    about the half vector; positive values dim it away from the incidence
    plane, giving the table genuine difference-azimuth structure.
    """

    diffuse_peak: float = 0.6
    diffuse_center: float = 550.0
    diffuse_width: float = 80.0
    spec_strength: float = 0.3
    spec_exponent: float = 100.0
    spec_tilt: float = 0.0005
    lobe_phi_depth: float = 0.0

    def __post_init__(self):
        if self.diffuse_peak < 0 or self.spec_strength < 0:
            raise ValueError("diffuse_peak and spec_strength must be nonnegative")
        if self.diffuse_width <= 0:
            raise ValueError("diffuse_width must be positive")
        if self.spec_exponent < 0:
            raise ValueError("spec_exponent must be nonnegative")
        if not 0.0 <= self.lobe_phi_depth <= 1.0:
            raise ValueError("lobe_phi_depth must lie in [0, 1]")

    def evaluate(self, lam, theta_h, lam_mid: float, phi_d=0.0) -> np.ndarray:
        """Reflectance at wavelengths `lam` and half angles `theta_h`."""
        lam = np.asarray(lam, dtype=np.float64)
        th = np.asarray(theta_h, dtype=np.float64)
        diffuse = self.diffuse_peak * np.exp(
            -((lam - self.diffuse_center) ** 2) / (2.0 * self.diffuse_width**2)
        )
        lobe = (
            self.spec_strength
            * (1.0 + self.spec_tilt * (lam - lam_mid))
            * (self.spec_exponent + 2.0)
            / (2.0 * np.pi)
            * np.cos(th) ** self.spec_exponent
        )
        if self.lobe_phi_depth:
            pd = np.asarray(phi_d, dtype=np.float64)
            lobe = lobe * (1.0 - self.lobe_phi_depth * np.sin(pd) ** 2)
        return np.maximum(diffuse / np.pi + lobe, 0.0)


def synth_spectral(
    spec: SyntheticSpec,
    axis: WavelengthAxis = WavelengthAxis(),
    dims: tuple[int, int, int] = MERL_DIMS,
    name: str = "synthetic",
) -> SpectralBrdfTable:
    """Tabulate a synthetic material at every bin center.

    The model never depends on theta_d, so values repeat along that axis;
    with the default rotationally symmetric lobe they repeat along phi_d
    as well.
    """
    d1, d2, d3 = dims
    lam = axis.centers()
    th = denormalize_angles(bin_center_u(np.arange(d1), d1), 0.0, 0.0)[0]
    lam_mid = 0.5 * (axis.lam_min + axis.lam_max)
    table = np.empty((axis.count, d1, d2, d3), dtype=np.float32)
    if spec.lobe_phi_depth:
        pd = denormalize_angles(0.0, 0.0, bin_center_u(np.arange(d3), d3))[2]
        base = spec.evaluate(lam[:, None, None], th[None, :, None], lam_mid,
                             pd[None, None, :])  # (M, D1, D3)
        table[:] = base[:, :, None, :].astype(np.float32)
    else:
        base = spec.evaluate(lam[:, None], th[None, :], lam_mid)  # (M, D1)
        table[:] = base[:, :, None, None].astype(np.float32)
    return SpectralBrdfTable(table=table, axis=axis, name=name)


# ---------------------------------------------------------------------------
# table lookup

def eval_table(table: SpectralBrdfTable, theta_h, theta_d, phi_d, lam) -> np.ndarray:
    """Quadrilinear interpolation between bin centers, edge clamped.

    All four arguments broadcast together; wavelengths outside the axis clamp
    to the boundary bins, as do angles outside their ranges.
    """
    th, td, pd, lam = np.broadcast_arrays(
        np.asarray(theta_h, dtype=np.float64),
        np.asarray(theta_d, dtype=np.float64),
        np.asarray(phi_d, dtype=np.float64),
        np.asarray(lam, dtype=np.float64),
    )
    shape = th.shape
    u_th, u_td, u_pd = normalize_angles(th.ravel(), td.ravel(), pd.ravel())
    u_lam = table.axis.normalize(lam.ravel())
    m, d1, d2, d3 = table.table.shape
    coords_x = [
        u_to_bin_coord(u_lam, m),
        u_to_bin_coord(u_th, d1),
        u_to_bin_coord(u_td, d2),
        u_to_bin_coord(u_pd, d3),
    ]
    lo, fr = [], []
    for x, n in zip(coords_x, (m, d1, d2, d3)):
        i0 = np.minimum(np.floor(x), n - 2 if n > 1 else 0).astype(np.int64)
        i0 = np.maximum(i0, 0)
        lo.append(i0)
        fr.append(x - i0)
    out = np.zeros(th.size, dtype=np.float64)
    t = table.table
    for corner in range(16):
        idx = []
        w = np.ones(th.size, dtype=np.float64)
        for a in range(4):
            hi = (corner >> a) & 1
            n = (m, d1, d2, d3)[a]
            idx.append(np.minimum(lo[a] + hi, n - 1))
            w = w * (fr[a] if hi else (1.0 - fr[a]))
        out += w * t[idx[0], idx[1], idx[2], idx[3]]
    return out.reshape(shape)


def table_bin_angles(dims: tuple[int, int, int]):
    """Bin-center angles (theta_h, theta_d, phi_d) for each axis of a table."""
    d1, d2, d3 = dims
    th = denormalize_angles(bin_center_u(np.arange(d1), d1), 0.0, 0.0)[0]
    td = denormalize_angles(0.0, bin_center_u(np.arange(d2), d2), 0.0)[1]
    pd = denormalize_angles(0.0, 0.0, bin_center_u(np.arange(d3), d3))[2]
    return th, td, pd
