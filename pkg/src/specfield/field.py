"""Factorized reflectance field: three angle planes and three wavelength planes.

A material is six 2-D feature grids, one per unordered pair of the four
lookup axes that mixes two angles (angle planes) or one angle with
wavelength (wavelength planes):

    angle planes  (theta_h, theta_d) (theta_h, phi_d) (theta_d, phi_d)
    wave planes   (theta_h, lam)     (theta_d, lam)   (phi_d, lam)

Each plane stores C channels on a node grid sampled with align-corners
bilinear interpolation at the normalized coordinates from the coords module.
Projection of a query point returns six C-vectors, one per plane.

`project_rgb_*` is the panchromatic variant for targets without wavelength
information: every wavelength plane collapses to the average over its
wavelength axis before the remaining 1-D interpolation, which equals
averaging plane samples taken at all M wavelength nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Node, Tape
from .coords import RusinCoords, WavelengthAxis, normalize_angles

PLANE_NAMES = (
    "angle_th_td",
    "angle_th_pd",
    "angle_td_pd",
    "wave_th",
    "wave_td",
    "wave_pd",
)


@dataclass
class Triplanes:
    """Plane stacks for one material.

    angle_planes: ((C,D1,D2), (C,D1,D3), (C,D2,D3))
    wave_planes:  ((C,D1,M), (C,D2,M), (C,D3,M))
    """

    angle_planes: tuple[np.ndarray, np.ndarray, np.ndarray]
    wave_planes: tuple[np.ndarray, np.ndarray, np.ndarray]
    axis: WavelengthAxis

    def __post_init__(self):
        c = self.angle_planes[0].shape[0]
        for p in (*self.angle_planes, *self.wave_planes):
            if p.ndim != 3 or p.shape[0] != c:
                raise ValueError(
                    f"planes must share a leading channel count, got shapes "
                    f"{[q.shape for q in (*self.angle_planes, *self.wave_planes)]}"
                )
        d1, d2 = self.angle_planes[0].shape[1:]
        d3 = self.angle_planes[1].shape[2]
        if self.angle_planes[1].shape[1] != d1 or self.angle_planes[2].shape[1:] != (d2, d3):
            raise ValueError("angle plane extents are inconsistent")
        m = self.wave_planes[0].shape[2]
        if m != self.axis.count:
            raise ValueError(
                f"wavelength extent {m} does not match axis count {self.axis.count}"
            )
        if (self.wave_planes[0].shape[1] != d1
                or self.wave_planes[1].shape[1:] != (d2, m)
                or self.wave_planes[2].shape[1:] != (d3, m)):
            raise ValueError("wavelength plane extents are inconsistent")

    @property
    def channels(self) -> int:
        return self.angle_planes[0].shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        d1, d2 = self.angle_planes[0].shape[1:]
        return d1, d2, self.angle_planes[1].shape[2]

    def named(self) -> dict[str, np.ndarray]:
        planes = (*self.angle_planes, *self.wave_planes)
        return dict(zip(PLANE_NAMES, planes))


@dataclass
class FeatureBundle:
    angle_feats: tuple[np.ndarray, np.ndarray, np.ndarray]
    wave_feats: tuple[np.ndarray, np.ndarray, np.ndarray]


def init_triplanes(
    channels: int,
    dims: tuple[int, int, int] = (90, 90, 180),
    axis: WavelengthAxis = WavelengthAxis(),
    seed: int = 0,
    scale: float = 0.1,
) -> Triplanes:
    """Fresh planes with uniform values in [-scale, scale]."""
    d1, d2, d3 = dims
    m = axis.count
    rng = np.random.default_rng(seed)

    def plane(a, b):
        return rng.uniform(-scale, scale, size=(channels, a, b))

    return Triplanes(
        angle_planes=(plane(d1, d2), plane(d1, d3), plane(d2, d3)),
        wave_planes=(plane(d1, m), plane(d2, m), plane(d3, m)),
        axis=axis,
    )


def plane_leaves(tape: Tape, tp: Triplanes) -> list[Node]:
    """Record all six planes as tape leaves, in PLANE_NAMES order."""
    return [tape.leaf(p) for p in (*tp.angle_planes, *tp.wave_planes)]


def project_batch(tape: Tape, planes: list[Node], u_th, u_td, u_pd, u_lam) -> list[Node]:
    """Sample all six planes at N normalized coordinates -> six (N, C) nodes."""
    a0, a1, a2, w0, w1, w2 = planes
    return [
        ag.bilinear_sample(tape, a0, u_th, u_td),
        ag.bilinear_sample(tape, a1, u_th, u_pd),
        ag.bilinear_sample(tape, a2, u_td, u_pd),
        ag.bilinear_sample(tape, w0, u_th, u_lam),
        ag.bilinear_sample(tape, w1, u_td, u_lam),
        ag.bilinear_sample(tape, w2, u_pd, u_lam),
    ]


def project_rgb_batch(tape: Tape, planes: list[Node], u_th, u_td, u_pd) -> list[Node]:
    """Panchromatic sampling: wavelength planes average over their lam axis."""
    a0, a1, a2, w0, w1, w2 = planes
    feats = [
        ag.bilinear_sample(tape, a0, u_th, u_td),
        ag.bilinear_sample(tape, a1, u_th, u_pd),
        ag.bilinear_sample(tape, a2, u_td, u_pd),
    ]
    for node, u in ((w0, u_th), (w1, u_td), (w2, u_pd)):
        avg = node.mean(axis=2)  # (C, K)
        feats.append(ag.linear_sample(tape, avg, u))
    return feats


def _bundle_from_nodes(nodes: list[Node]) -> FeatureBundle:
    vals = [n.value[0] for n in nodes]
    return FeatureBundle(angle_feats=tuple(vals[:3]), wave_feats=tuple(vals[3:]))


def project(tp: Triplanes, coord: RusinCoords, lam: float) -> FeatureBundle:
    """Feature vectors of one spectral query point."""
    u_th, u_td, u_pd = normalize_angles(coord.theta_h, coord.theta_d, coord.phi_d)
    u_lam = tp.axis.normalize(lam)
    tape = Tape()
    nodes = project_batch(
        tape, plane_leaves(tape, tp),
        np.atleast_1d(u_th), np.atleast_1d(u_td), np.atleast_1d(u_pd),
        np.atleast_1d(u_lam),
    )
    return _bundle_from_nodes(nodes)


def project_rgb(tp: Triplanes, coord: RusinCoords) -> FeatureBundle:
    """Feature vectors of one panchromatic query point."""
    u_th, u_td, u_pd = normalize_angles(coord.theta_h, coord.theta_d, coord.phi_d)
    tape = Tape()
    nodes = project_rgb_batch(
        tape, plane_leaves(tape, tp),
        np.atleast_1d(u_th), np.atleast_1d(u_td), np.atleast_1d(u_pd),
    )
    return _bundle_from_nodes(nodes)
