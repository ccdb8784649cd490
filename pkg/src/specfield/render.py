"""Orthographic renderer for reflectance tables and fitted models.

The camera looks down -z at the unit screen square x, y in [-1, 1]; the view
direction is +z everywhere.  Geometry is either the unit sphere centered at
the origin or a triangle mesh already living in screen coordinates.  Shading
evaluates the source reflectance in the half/difference parameterization of
the local frame at each pixel.

Lights: a distant light with an incident direction and scalar irradiance
gives L = r * E * max(cos theta_i, 0).  A latitude/longitude environment map
integrates direct texel sums with exact per-band solid angles
d_omega = d_phi * (cos theta_lo - cos theta_hi), so a constant map of
radiance 1 on a constant-albedo sphere reproduces the albedo (white furnace).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .brdf_io import FormatError, SpectralBrdfTable, eval_table
from .coords import to_rusin_batch
from .trainer import SstaModel

PREVIEW_LIGHT_DIR = np.array([0.3, 0.3, 0.9]) / np.linalg.norm([0.3, 0.3, 0.9])
PREVIEW_IRRADIANCE = 3.0
PREVIEW_WAVELENGTHS = np.linspace(400.0, 1000.0, 9)


def rgb_band_weights(wavelengths: np.ndarray = PREVIEW_WAVELENGTHS) -> np.ndarray:
    """Fixed (3, L) mixing weights turning spectral bands into preview RGB.

    Gaussian sensitivity bumps at 610, 550 and 465 nm with 60 nm width,
    each row normalized to sum to one.
    """
    centers = np.array([610.0, 550.0, 465.0])
    w = np.exp(-((wavelengths[None, :] - centers[:, None]) ** 2) / (2 * 60.0**2))
    return w / w.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# scene types

@dataclass(frozen=True)
class DistantLight:
    """direction points from the surface toward the light; unit length."""

    direction: np.ndarray
    irradiance: float = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if not np.isfinite(n) or n == 0.0:
            raise ValueError("light direction must be a nonzero vector")
        object.__setattr__(self, "direction", d / n)
        if self.irradiance < 0:
            raise ValueError("irradiance must be nonnegative")


@dataclass(frozen=True)
class EnvironmentLight:
    """Latitude/longitude radiance map; rows span polar angle 0..pi."""

    radiance: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.radiance, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError(f"radiance map must be 2-D, got {r.shape}")
        if not np.all(np.isfinite(r)) or np.any(r < 0):
            raise ValueError("radiance must be finite and nonnegative")
        object.__setattr__(self, "radiance", r)


@dataclass
class Mesh:
    """Triangles in screen coordinates; normals optional (per vertex)."""

    vertices: np.ndarray
    faces: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must be (F, 3), got {self.faces.shape}")
        if self.faces.min(initial=0) < 0 or \
                self.faces.max(initial=-1) >= len(self.vertices):
            raise ValueError("face index out of range")
        if self.normals is not None and self.normals.shape != self.vertices.shape:
            raise ValueError("normals must match vertices")


@dataclass
class RenderScene:
    geometry: Union[str, Mesh] = "sphere"
    light: Union[DistantLight, EnvironmentLight] = None
    wavelengths: Sequence[float] = tuple(PREVIEW_WAVELENGTHS)
    width: int = 64
    height: int = 64

    def __post_init__(self):
        if isinstance(self.geometry, str) and self.geometry != "sphere":
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.light is None:
            self.light = DistantLight(PREVIEW_LIGHT_DIR, PREVIEW_IRRADIANCE)
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if len(self.wavelengths) == 0:
            raise ValueError("need at least one wavelength")


@dataclass
class SpectralImage:
    """One float plane per rendered wavelength."""

    wavelengths: np.ndarray
    planes: np.ndarray  # (L, H, W)

    def __post_init__(self):
        if self.planes.ndim != 3 or len(self.wavelengths) != self.planes.shape[0]:
            raise ValueError(
                f"planes must be (L, H, W) matching {len(self.wavelengths)} "
                f"wavelengths, got {self.planes.shape}"
            )
        if not np.all(np.isfinite(self.planes)) or np.any(self.planes < 0):
            raise ValueError("rendered radiance must be finite and nonnegative")


# ---------------------------------------------------------------------------
# OBJ loading

def load_obj(path: Union[str, Path]) -> Mesh:
    """Minimal OBJ reader: v, vn and triangulated f records."""
    verts, norms, faces, face_norms = [], [], [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vn":
                norms.append([float(x) for x in parts[1:4]])
            elif tag == "f":
                idx = []
                nidx = []
                for p in parts[1:]:
                    fields = p.split("/")
                    idx.append(int(fields[0]) - 1)
                    if len(fields) == 3 and fields[2]:
                        nidx.append(int(fields[2]) - 1)
                for k in range(1, len(idx) - 1):  # fan triangulation
                    faces.append([idx[0], idx[k], idx[k + 1]])
                    if len(nidx) == len(idx):
                        face_norms.append([nidx[0], nidx[k], nidx[k + 1]])
        except (ValueError, IndexError):
            raise FormatError(f"{path}:{lineno}: malformed record {line!r}")
    if not verts or not faces:
        raise FormatError(f"{path}: no geometry found")
    vertices = np.asarray(verts, dtype=np.float64)
    faces_a = np.asarray(faces, dtype=np.int64)
    normals = None
    if norms and len(face_norms) == len(faces):
        # re-index so normals align with vertices; last write wins on shares
        normals = np.zeros_like(vertices)
        nsrc = np.asarray(norms, dtype=np.float64)
        for f, fn in zip(faces_a, face_norms):
            for v, n in zip(f, fn):
                normals[v] = nsrc[n]
        lens = np.linalg.norm(normals, axis=1, keepdims=True)
        lens[lens == 0] = 1.0
        normals = normals / lens
    return Mesh(vertices=vertices, faces=faces_a, normals=normals)


# ---------------------------------------------------------------------------
# geometry buffers

def _pixel_grid(width: int, height: int):
    x = (np.arange(width) + 0.5) / width * 2.0 - 1.0
    y = 1.0 - (np.arange(height) + 0.5) / height * 2.0
    return np.meshgrid(x, y)  # each (H, W)


def sphere_buffers(width: int, height: int):
    """Mask and normals of the unit sphere under orthographic projection."""
    x, y = _pixel_grid(width, height)
    r2 = x * x + y * y
    mask = r2 <= 1.0
    z = np.sqrt(np.maximum(1.0 - r2, 0.0))
    normals = np.stack([x, y, z], axis=-1)
    normals[~mask] = 0.0
    return mask, normals


def mesh_buffers(mesh: Mesh, width: int, height: int):
    """Rasterize front-facing triangles with a z-buffer (camera at +z)."""
    x, y = _pixel_grid(width, height)
    mask = np.zeros((height, width), dtype=bool)
    zbuf = np.full((height, width), -np.inf)
    normals = np.zeros((height, width, 3))
    v = mesh.vertices
    for fi, f in enumerate(mesh.faces):
        a, b, c = v[f[0]], v[f[1]], v[f[2]]
        face_n = np.cross(b - a, c - a)
        nl = np.linalg.norm(face_n)
        if nl == 0:
            continue
        face_n = face_n / nl
        if face_n[2] <= 0:
            continue  # backfacing or edge-on
        # signed-area barycentrics in the screen plane
        det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
        if det == 0:
            continue
        w0 = ((b[0] - x) * (c[1] - y) - (c[0] - x) * (b[1] - y)) / det
        w1 = ((c[0] - x) * (a[1] - y) - (a[0] - x) * (c[1] - y)) / det
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue
        z = w0 * a[2] + w1 * b[2] + w2 * c[2]
        closer = inside & (z > zbuf)
        if not closer.any():
            continue
        zbuf[closer] = z[closer]
        mask |= closer
        if mesh.normals is not None:
            na, nb, nc = (mesh.normals[f[0]], mesh.normals[f[1]],
                          mesh.normals[f[2]])
            interp = (w0[..., None] * na + w1[..., None] * nb
                      + w2[..., None] * nc)
            lens = np.linalg.norm(interp, axis=-1, keepdims=True)
            lens[lens == 0] = 1.0
            interp = interp / lens
            normals[closer] = interp[closer]
        else:
            normals[closer] = face_n
    return mask, normals


def _local_frames(n: np.ndarray):
    """Orthonormal tangent frames for (P, 3) unit normals; deterministic."""
    up = np.zeros_like(n)
    straight = np.abs(n[..., 2]) > 0.999
    up[..., 2] = 1.0
    up[straight] = (1.0, 0.0, 0.0)
    t = np.cross(up, n)
    t = t / np.linalg.norm(t, axis=-1, keepdims=True)
    b = np.cross(n, t)
    return t, b


# ---------------------------------------------------------------------------
# shading

def _eval_source(source, th, td, pd, lam):
    if isinstance(source, SpectralBrdfTable):
        return eval_table(source, th, td, pd, lam)
    if isinstance(source, SstaModel):
        return source.reflectance(th, td, pd, np.broadcast_to(lam, th.shape))
    raise TypeError(f"cannot shade from {type(source).__name__}")


def _reflectance_masked(source, wi_local, wo_local, lam):
    """Evaluate reflectance for local direction pairs; degenerate rows -> 0."""
    wi = wi_local / np.linalg.norm(wi_local, axis=-1, keepdims=True)
    wo = wo_local / np.linalg.norm(wo_local, axis=-1, keepdims=True)
    # grazing rows can dip a hair under the horizon from rounding
    wi[..., 2] = np.maximum(wi[..., 2], 0.0)
    wo[..., 2] = np.maximum(wo[..., 2], 0.0)
    wi = wi / np.linalg.norm(wi, axis=-1, keepdims=True)
    wo = wo / np.linalg.norm(wo, axis=-1, keepdims=True)
    th, td, pd, ok = to_rusin_batch(wi, wo)
    r = np.zeros(th.shape, dtype=np.float64)
    if ok.any():
        r[ok] = _eval_source(source, th[ok], td[ok], pd[ok],
                             np.broadcast_to(lam, th.shape)[ok])
    return r


def _shade_distant(source, light: DistantLight, normals, mask, wavelengths):
    h, w = mask.shape
    n = normals[mask]  # (P, 3)
    t, b = _local_frames(n)
    d = light.direction
    cos_i = n @ d
    lit = cos_i > 1e-9
    wo_local = np.stack([t[:, 2], b[:, 2], n[:, 2]], axis=-1)  # world +z
    wi_local = np.stack([t @ d, b @ d, n @ d], axis=-1)
    planes = np.zeros((len(wavelengths), h, w))
    for li, lam in enumerate(wavelengths):
        vals = np.zeros(n.shape[0])
        if lit.any():
            r = _reflectance_masked(source, wi_local[lit], wo_local[lit], lam)
            vals[lit] = r * light.irradiance * cos_i[lit]
        img = np.zeros((h, w))
        img[mask] = vals
        planes[li] = img
    return planes


def env_texel_grid(radiance: np.ndarray):
    """Directions and exact solid angles of every texel of a lat-long map."""
    he, we = radiance.shape
    th_edges = np.linspace(0.0, np.pi, he + 1)
    band = np.cos(th_edges[:-1]) - np.cos(th_edges[1:])  # (He,)
    omega = np.repeat(band * (2.0 * np.pi / we), we)  # (He*We,)
    th_c = 0.5 * (th_edges[:-1] + th_edges[1:])
    ph_c = (np.arange(we) + 0.5) / we * 2.0 * np.pi
    tt, pp = np.meshgrid(th_c, ph_c, indexing="ij")
    dirs = np.stack([np.sin(tt) * np.cos(pp), np.sin(tt) * np.sin(pp),
                     np.cos(tt)], axis=-1).reshape(-1, 3)
    return dirs, omega


def _shade_env(source, light: EnvironmentLight, normals, mask, wavelengths,
               chunk: int = 128):
    h, w = mask.shape
    n = normals[mask]
    t, b = _local_frames(n)
    dirs, omega = env_texel_grid(light.radiance)
    rad = light.radiance.reshape(-1) * light.scale
    planes = np.zeros((len(wavelengths), h, w))
    vals = np.zeros((len(wavelengths), n.shape[0]))
    for s in range(0, n.shape[0], chunk):
        e = min(s + chunk, n.shape[0])
        nc, tc, bc = n[s:e], t[s:e], b[s:e]
        cos_i = nc @ dirs.T  # (p, T)
        keep = cos_i > 1e-9
        p_idx, t_idx = np.nonzero(keep)
        if p_idx.size == 0:
            continue
        d = dirs[t_idx]
        wi_local = np.stack([
            np.einsum("ij,ij->i", tc[p_idx], d),
            np.einsum("ij,ij->i", bc[p_idx], d),
            cos_i[keep],
        ], axis=-1)
        wo_local = np.stack([tc[p_idx, 2], bc[p_idx, 2], nc[p_idx, 2]], axis=-1)
        weight = rad[t_idx] * omega[t_idx] * cos_i[keep]
        for li, lam in enumerate(wavelengths):
            r = _reflectance_masked(source, wi_local, wo_local, lam)
            vals[li, s:e] += np.bincount(p_idx, weights=r * weight,
                                         minlength=e - s)
    for li in range(len(wavelengths)):
        img = np.zeros((h, w))
        img[mask] = vals[li]
        planes[li] = img
    return planes


def render(scene: RenderScene, source) -> SpectralImage:
    """Shade the scene for every requested wavelength."""
    if isinstance(scene.geometry, Mesh):
        mask, normals = mesh_buffers(scene.geometry, scene.width, scene.height)
    else:
        mask, normals = sphere_buffers(scene.width, scene.height)
    wavelengths = np.asarray(list(scene.wavelengths), dtype=np.float64)
    if isinstance(scene.light, DistantLight):
        planes = _shade_distant(source, scene.light, normals, mask, wavelengths)
    elif isinstance(scene.light, EnvironmentLight):
        planes = _shade_env(source, scene.light, normals, mask, wavelengths)
    else:
        raise TypeError(f"unknown light {type(scene.light).__name__}")
    planes = np.maximum(planes, 0.0)
    return SpectralImage(wavelengths=wavelengths, planes=planes)


def render_preview(source, size: int = 64) -> np.ndarray:
    """(3, size, size) RGB preview under the fixed distant light.

    Renders the nine preview wavelengths and mixes them with
    rgb_band_weights; this is the image representation the image-to-planes
    generator consumes.
    """
    scene = RenderScene(
        geometry="sphere",
        light=DistantLight(PREVIEW_LIGHT_DIR, PREVIEW_IRRADIANCE),
        wavelengths=PREVIEW_WAVELENGTHS,
        width=size, height=size,
    )
    img = render(scene, source)
    weights = rgb_band_weights()
    return np.einsum("cl,lhw->chw", weights, img.planes)
