"""Float image files and the 8-bit preview tonemap.

Portable FloatMap: ascii header of magic ("Pf" grayscale, "PF" color), width
and height, and a scale whose sign encodes endianness (we always write -1.0,
little endian), followed by float32 rows ordered bottom to top.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .brdf_io import FormatError

GAMMA = 2.2


def write_pfm(path: Union[str, Path], img: np.ndarray) -> None:
    """Write (H, W) as grayscale "Pf" or (H, W, 3) as color "PF"."""
    img = np.asarray(img)
    if img.ndim == 2:
        magic = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"image must be (H, W) or (H, W, 3), got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValueError("refusing to write non-finite pixels")
    h, w = img.shape[:2]
    data = np.ascontiguousarray(np.flipud(img), dtype="<f4")
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path: Union[str, Path]) -> np.ndarray:
    """Read a float map; returns (H, W) float64 or (H, W, 3) for color."""
    data = Path(path).read_bytes()
    # header: three whitespace-separated tokens then a single whitespace byte
    tokens = []
    pos = 0
    while len(tokens) < 4 and pos < len(data):
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if len(tokens) < 4:
        raise FormatError(f"{path}: truncated header")
    pos += 1  # single whitespace after the scale token
    magic = tokens[0]
    if magic not in (b"Pf", b"PF"):
        raise FormatError(f"{path}: bad magic {magic!r}")
    try:
        w, h = int(tokens[1]), int(tokens[2])
        scale = float(tokens[3])
    except ValueError:
        raise FormatError(f"{path}: malformed header fields")
    if w <= 0 or h <= 0 or scale == 0.0:
        raise FormatError(f"{path}: bad dimensions or scale")
    channels = 3 if magic == b"PF" else 1
    count = w * h * channels
    dtype = "<f4" if scale < 0 else ">f4"
    if len(data) - pos < 4 * count:
        raise FormatError(f"{path}: truncated pixel data "
                          f"({len(data) - pos} of {4 * count} bytes)")
    pix = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    pix = pix.astype(np.float64) * abs(scale)
    if channels == 3:
        img = pix.reshape(h, w, 3)
    else:
        img = pix.reshape(h, w)
    return np.flipud(img).copy()


def tonemap(img: np.ndarray, exposure: float = 1.0) -> np.ndarray:
    """Gamma 1/2.2 preview bytes: round(clamp(exposure * v)^(1/2.2) * 255)."""
    v = np.clip(np.asarray(img, dtype=np.float64) * exposure, 0.0, 1.0)
    return np.rint(np.power(v, 1.0 / GAMMA) * 255.0).astype(np.uint8)


def write_png(path: Union[str, Path], img: np.ndarray, exposure: float = 1.0) -> None:
    """Tonemapped 8-bit preview; grayscale for 2-D, RGB for (H, W, 3)."""
    bytes_img = tonemap(img, exposure)
    if bytes_img.ndim == 2:
        Image.fromarray(bytes_img, mode="L").save(path)
    elif bytes_img.ndim == 3 and bytes_img.shape[2] == 3:
        Image.fromarray(bytes_img, mode="RGB").save(path)
    else:
        raise ValueError(f"image must be (H, W) or (H, W, 3), got {img.shape}")
