"""Half/difference angle parameterization and normalized lookup coordinates.

Directions are unit 3-vectors in a right-handed frame with the surface normal
along +z.  A direction pair maps to (theta_h, theta_d, phi_d): polar angle of
the half vector, polar angle of the outgoing direction expressed in the half
vector frame, and its azimuth folded to [0, pi] so a reciprocal pair lands on
the same point.  Isotropy drops the half-vector azimuth.

`normalize_*` maps angles and wavelengths onto [0, 1] lookup coordinates; the
half angle gets a square-root warp so dense specular structure near
theta_h = 0 receives proportionally more resolution.  Tables and planes both
consume these normalized coordinates, tables with bin-center semantics and
feature planes with align-corners node semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HALF_PI = 0.5 * np.pi

_UNIT_TOL = 1e-6
_RANGE_TOL = 1e-9


class DegenerateDirectionError(ValueError):
    """Raised when wi + wo vanishes and the half vector is undefined."""


class OutOfHemisphereError(ValueError):
    """Raised when reconstructed directions dip below the surface."""


@dataclass(frozen=True)
class WavelengthAxis:
    """Uniform wavelength sampling in nanometers."""

    lam_min: float = 400.0
    lam_max: float = 1000.0
    count: int = 39

    def __post_init__(self):
        if not (self.lam_min < self.lam_max):
            raise ValueError(
                f"wavelength axis needs lam_min < lam_max, got "
                f"[{self.lam_min}, {self.lam_max}]"
            )
        if self.count < 2:
            raise ValueError(f"wavelength axis needs >= 2 samples, got {self.count}")

    @property
    def span(self) -> float:
        return self.lam_max - self.lam_min

    def centers(self) -> np.ndarray:
        """Bin-center wavelengths, one per stored table slice."""
        k = np.arange(self.count, dtype=np.float64)
        return self.lam_min + (k + 0.5) / self.count * self.span

    def nodes(self) -> np.ndarray:
        """Evenly spaced node wavelengths including both endpoints."""
        return np.linspace(self.lam_min, self.lam_max, self.count)

    def normalize(self, lam) -> np.ndarray:
        u = (np.asarray(lam, dtype=np.float64) - self.lam_min) / self.span
        return np.clip(u, 0.0, 1.0)

    def denormalize(self, u) -> np.ndarray:
        return self.lam_min + np.asarray(u, dtype=np.float64) * self.span


@dataclass(frozen=True)
class RusinCoords:
    theta_h: float
    theta_d: float
    phi_d: float

    def __post_init__(self):
        if not (-_RANGE_TOL <= self.theta_h <= HALF_PI + _RANGE_TOL):
            raise ValueError(f"theta_h out of [0, pi/2]: {self.theta_h}")
        if not (-_RANGE_TOL <= self.theta_d <= HALF_PI + _RANGE_TOL):
            raise ValueError(f"theta_d out of [0, pi/2]: {self.theta_d}")
        if not (-_RANGE_TOL <= self.phi_d <= np.pi + _RANGE_TOL):
            raise ValueError(f"phi_d out of [0, pi]: {self.phi_d}")


def _check_unit(v: np.ndarray, name: str) -> None:
    n = np.linalg.norm(v, axis=-1)
    bad = np.abs(n - 1.0) > _UNIT_TOL
    if np.any(bad):
        worst = float(np.max(np.abs(n - 1.0)))
        raise ValueError(f"{name} must be unit length, |len-1| up to {worst:.2e}")


def to_rusin_batch(wi: np.ndarray, wo: np.ndarray):
    """Vectorized direction pairs -> (theta_h, theta_d, phi_d, valid).

    `valid` is False where wi + wo vanishes; those rows carry zeros.  Inputs
    must be unit vectors with z >= 0 (checked up to small tolerance).
    """
    wi = np.asarray(wi, dtype=np.float64)
    wo = np.asarray(wo, dtype=np.float64)
    if wi.shape != wo.shape or wi.shape[-1] != 3:
        raise ValueError(f"direction arrays must match with last dim 3, "
                         f"got {wi.shape} and {wo.shape}")
    _check_unit(wi, "wi")
    _check_unit(wo, "wo")
    if np.any(wi[..., 2] < -_UNIT_TOL) or np.any(wo[..., 2] < -_UNIT_TOL):
        raise ValueError("directions must lie in the upper hemisphere (z >= 0)")

    h = wi + wo
    hn = np.linalg.norm(h, axis=-1)
    valid = hn > 1e-12
    safe = np.where(valid, hn, 1.0)
    h = h / safe[..., None]

    theta_h = np.arccos(np.clip(h[..., 2], -1.0, 1.0))
    phi_h = np.arctan2(h[..., 1], h[..., 0])

    # express wo in the frame whose pole is h: d = Ry(-theta_h) Rz(-phi_h) wo
    cp, sp = np.cos(phi_h), np.sin(phi_h)
    x1 = cp * wo[..., 0] + sp * wo[..., 1]
    y1 = -sp * wo[..., 0] + cp * wo[..., 1]
    ct, st = np.cos(theta_h), np.sin(theta_h)
    x2 = ct * x1 - st * wo[..., 2]
    z2 = st * x1 + ct * wo[..., 2]

    theta_d = np.arccos(np.clip(z2, -1.0, 1.0))
    phi_d = np.arctan2(y1, x2)
    phi_d = np.where(phi_d < 0.0, phi_d + np.pi, phi_d)

    theta_h = np.where(valid, theta_h, 0.0)
    theta_d = np.where(valid, theta_d, 0.0)
    phi_d = np.where(valid, phi_d, 0.0)
    return theta_h, theta_d, phi_d, valid


def to_rusin(wi, wo) -> RusinCoords:
    """Single direction pair -> RusinCoords.  Degenerate pairs raise."""
    th, td, pd, valid = to_rusin_batch(
        np.asarray(wi, dtype=np.float64)[None, :],
        np.asarray(wo, dtype=np.float64)[None, :],
    )
    if not valid[0]:
        raise DegenerateDirectionError("wi + wo vanishes; half vector undefined")
    return RusinCoords(float(th[0]), float(td[0]), float(pd[0]))


def from_rusin(c: RusinCoords, phi_h: float = 0.0):
    """Rebuild a direction pair from half/difference angles.

    The free parameter phi_h fixes the isotropic degree of freedom.  Raises
    OutOfHemisphereError when either reconstructed direction has z < 0, which
    happens for grazing combinations; callers treat those as zero reflectance.
    """
    th, td, pd = c.theta_h, c.theta_d, c.phi_d
    d = np.array([
        np.sin(td) * np.cos(pd),
        np.sin(td) * np.sin(pd),
        np.cos(td),
    ])
    # wo = Rz(phi_h) Ry(theta_h) d
    ct, st = np.cos(th), np.sin(th)
    x = ct * d[0] + st * d[2]
    z = -st * d[0] + ct * d[2]
    cp, sp = np.cos(phi_h), np.sin(phi_h)
    wo = np.array([cp * x - sp * d[1], sp * x + cp * d[1], z])

    h = np.array([st * cp, st * sp, ct])
    wi = 2.0 * np.dot(h, wo) * h - wo
    wi /= np.linalg.norm(wi)
    wo /= np.linalg.norm(wo)

    if wi[2] < -_RANGE_TOL or wo[2] < -_RANGE_TOL:
        raise OutOfHemisphereError(
            f"reconstructed pair leaves the hemisphere (wi_z={wi[2]:.3e}, "
            f"wo_z={wo[2]:.3e})"
        )
    return wi, wo


def normalize_angles(theta_h, theta_d, phi_d):
    """Angles -> normalized lookup coordinates in [0, 1].

    theta_h gets the square-root warp, the other two are linear.  Out of
    range inputs clamp.
    """
    th = np.clip(np.asarray(theta_h, dtype=np.float64), 0.0, HALF_PI)
    td = np.clip(np.asarray(theta_d, dtype=np.float64), 0.0, HALF_PI)
    pd = np.clip(np.asarray(phi_d, dtype=np.float64), 0.0, np.pi)
    return np.sqrt(th / HALF_PI), td / HALF_PI, pd / np.pi


def denormalize_angles(u_th, u_td, u_pd):
    """Inverse of normalize_angles on in-range coordinates."""
    u_th = np.asarray(u_th, dtype=np.float64)
    u_td = np.asarray(u_td, dtype=np.float64)
    u_pd = np.asarray(u_pd, dtype=np.float64)
    return u_th * u_th * HALF_PI, u_td * HALF_PI, u_pd * np.pi


def normalize_coord(c: RusinCoords, lam: float, axis: WavelengthAxis):
    """RusinCoords + wavelength -> (u_th, u_td, u_pd, u_lam)."""
    u_th, u_td, u_pd = normalize_angles(c.theta_h, c.theta_d, c.phi_d)
    return float(u_th), float(u_td), float(u_pd), float(axis.normalize(lam))


def bin_center_u(index, count: int) -> np.ndarray:
    """Normalized coordinate of a table bin center: (i + 0.5) / count."""
    return (np.asarray(index, dtype=np.float64) + 0.5) / count


def u_to_bin_coord(u, count: int) -> np.ndarray:
    """Continuous bin coordinate for interpolation between bin centers.

    Bin i is centered at u = (i + 0.5) / count, so the continuous index is
    u * count - 0.5 clamped to the valid interpolation range.
    """
    x = np.asarray(u, dtype=np.float64) * count - 0.5
    return np.clip(x, 0.0, count - 1.0)
