"""Closed-form field of uniformly magnetized cuboid magnets.

Each magnet is replaced by its equivalent magnetic surface charge
(sigma = J . n on every face) and the field of each charged rectangle is
integrated analytically. Lengths are in mm, remanence in tesla, fields in mT.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

MU0 = 4e-7 * np.pi  # H/m

# edge/corner proximity below which points are pushed off the singular set
EDGE_TOL_MM = 1e-6
EDGE_NUDGE_MM = 1e-6


class FieldDomainError(ValueError):
    """Raised when the field is requested inside a magnet."""


@dataclass(frozen=True)
class Magnet:
    """Uniformly magnetized rectangular prism, axis-aligned in its own frame.

    ``rotation`` maps magnet-frame vectors to world-frame vectors; the
    default identity keeps the edges along x, y, z.
    """

    center: np.ndarray
    dims: np.ndarray
    magnetization_dir: np.ndarray
    remanence_Br: float = 1.0
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        dims = np.asarray(self.dims, dtype=float).reshape(3)
        mdir = np.asarray(self.magnetization_dir, dtype=float).reshape(3)
        rot = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        if not np.all(dims > 0):
            raise ValueError(f"magnet dims must be positive, got {dims}")
        if abs(np.linalg.norm(mdir) - 1.0) > 1e-9:
            raise ValueError("magnetization_dir must be a unit vector")
        if self.remanence_Br < 0:
            raise ValueError("remanence_Br must be >= 0")
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-12):
            raise ValueError("rotation must be orthonormal")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "magnetization_dir", mdir)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "remanence_Br", float(self.remanence_Br))

    @property
    def volume_mm3(self) -> float:
        return float(np.prod(self.dims))

    @property
    def moment(self) -> np.ndarray:
        """Dipole moment in A*m^2 (Br * V / mu0)."""
        return self.remanence_Br * self.volume_mm3 * 1e-9 / MU0 * self.magnetization_dir

    def with_(self, **changes) -> "Magnet":
        kw = dict(center=self.center, dims=self.dims, magnetization_dir=self.magnetization_dir,
                  remanence_Br=self.remanence_Br, rotation=self.rotation)
        kw.update(changes)
        return Magnet(**kw)

    def reversed(self) -> "Magnet":
        return self.with_(magnetization_dir=-self.magnetization_dir)

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(points) - self.center) @ self.rotation

    def contains(self, points, strict_tol: float = 1e-9) -> np.ndarray:
        """True where a point lies strictly inside the magnet volume."""
        q = np.abs(self.to_local(points))
        return np.all(q < self.dims / 2 - strict_tol, axis=-1)


def n52_magnet(center=(0.0, 0.0, 0.0), magnetization_dir=(0.0, 0.0, 1.0),
               dims=(17.0, 9.0, 4.5), remanence_Br: float = 1.0) -> Magnet:
    """The 17 x 9 x 4.5 mm NdFeB block used as the rotor magnet."""
    return Magnet(np.asarray(center, float), np.asarray(dims, float),
                  np.asarray(magnetization_dir, float), remanence_Br)


@dataclass(frozen=True)
class FieldVector:
    B: np.ndarray  # mT
    at: np.ndarray  # mm

    @property
    def magnitude(self) -> float:
        return float(np.linalg.norm(self.B))


@dataclass(frozen=True)
class AxialProfile:
    positions_l: np.ndarray  # cm along the line
    B_axial: np.ndarray  # mT, projected on the line direction

    def __post_init__(self):
        if len(self.positions_l) != len(self.B_axial):
            raise ValueError("positions and values differ in length")
        if np.any(np.diff(self.positions_l) <= 0):
            raise ValueError("profile positions must be strictly increasing")


def _log_pair(u, v1, v2, w):
    """ln((v2 + r2) / (v1 + r1)) evaluated without cancellation.

    r_i = sqrt(u^2 + v_i^2 + w^2) and v1 < v2.
    """
    s = u * u + w * w
    r1 = np.sqrt(s + v1 * v1)
    r2 = np.sqrt(s + v2 * v2)
    with np.errstate(divide="ignore", invalid="ignore"):
        both_neg = np.log((r1 - v1) / (r2 - v2))
        both_pos = np.log((v2 + r2) / (v1 + r1))
        straddle = np.log((v2 + r2) * (r1 - v1) / s)
    return np.where(v2 <= 0, both_neg, np.where(v1 >= 0, both_pos, straddle))


def _face_field(u1, u2, v1, v2, w):
    """Field (in units of sigma/4pi) of a unit-charge rectangle.

    The rectangle spans [u1, u2] x [v1, v2] in its plane, the offsets are
    source-minus-observer, and w is the observer height above the plane.
    Returns the components along (u, v, w).
    """
    hu = _log_pair(u2, v1, v2, w) - _log_pair(u1, v1, v2, w)
    hv = _log_pair(v2, u1, u2, w) - _log_pair(v1, u1, u2, w)
    sw = np.sign(w)
    aw = np.abs(w)
    hw = np.zeros_like(w)
    for uu, su in ((u1, -1.0), (u2, 1.0)):
        for vv, sv in ((v1, -1.0), (v2, 1.0)):
            rho = np.sqrt(uu * uu + vv * vv + w * w)
            hw = hw + su * sv * np.arctan2(uu * vv * sw, aw * rho)
    return hu, hv, hw


def _nudge_off_edges(q: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Push local-frame points lying on an edge or corner outward."""
    near_plane = np.abs(np.abs(q) - half) <= EDGE_TOL_MM
    within = np.abs(q) <= half + EDGE_TOL_MM
    on_edge = (near_plane.sum(axis=1) >= 2) & np.all(within | near_plane, axis=1)
    if not np.any(on_edge):
        return q
    q = q.copy()
    sel = on_edge[:, None] & near_plane
    sgn = np.where(q >= 0, 1.0, -1.0)
    q[sel] = (sgn * (half + EDGE_NUDGE_MM))[sel]
    return q


def _local_field(q: np.ndarray, half: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Field in mT at local points q (N,3) of a box with polarization J (T)."""
    B = np.zeros_like(q)
    for k in range(3):
        if J[k] == 0.0:
            continue
        i, j = [a for a in range(3) if a != k]
        for side in (-1.0, 1.0):
            # observer minus source offsets in the face frame
            u1 = -half[i] - q[:, i]
            u2 = half[i] - q[:, i]
            v1 = -half[j] - q[:, j]
            v2 = half[j] - q[:, j]
            w = q[:, k] - side * half[k]
            hu, hv, hw = _face_field(u1, u2, v1, v2, w)
            sigma = side * J[k]
            B[:, i] += sigma * hu
            B[:, j] += sigma * hv
            B[:, k] += sigma * hw
    return B * (1e3 / (4.0 * np.pi))


def field_at_points(magnet: Magnet, points) -> np.ndarray:
    """Vectorized field (mT) of one magnet at an (N,3) array of points (mm)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if magnet.remanence_Br == 0.0:
        if np.any(magnet.contains(pts)):
            raise FieldDomainError("point inside magnet volume")
        return np.zeros_like(pts)
    q = magnet.to_local(pts)
    half = magnet.dims / 2
    if np.any(np.all(np.abs(q) < half - 1e-9, axis=1)):
        raise FieldDomainError("point inside magnet volume")
    q = _nudge_off_edges(q, half)
    J = magnet.remanence_Br * (magnet.rotation.T @ magnet.magnetization_dir)
    return _local_field(q, half, J) @ magnet.rotation.T


def field_at(magnet: Magnet, point) -> FieldVector:
    p = np.asarray(point, dtype=float).reshape(3)
    return FieldVector(field_at_points(magnet, p)[0], p)


def superpose_points(magnets: Sequence[Magnet], points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    total = np.zeros_like(pts)
    for m in magnets:
        total = total + field_at_points(m, pts)
    return total


def superpose(magnets: Sequence[Magnet], point) -> FieldVector:
    p = np.asarray(point, dtype=float).reshape(3)
    return FieldVector(superpose_points(magnets, p)[0], p)


def dipole_field(moment, source, points) -> np.ndarray:
    """Point-dipole field in mT; moment in A*m^2, positions in mm."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    r = (pts - np.asarray(source, float)) * 1e-3
    rn = np.linalg.norm(r, axis=1, keepdims=True)
    m = np.asarray(moment, float)
    mr = r @ m
    B = MU0 / (4 * np.pi) * (3 * r * mr[:, None] / rn**5 - m / rn**3)
    return B * 1e3


def axial_profile(magnets: Sequence[Magnet], line_start, line_end, n_samples: int) -> AxialProfile:
    """Signed field along a straight line, positions reported in cm from line_start."""
    a = np.asarray(line_start, float)
    b = np.asarray(line_end, float)
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    length = np.linalg.norm(b - a)
    if length == 0:
        raise ValueError("degenerate line: start == end")
    direction = (b - a) / length
    s = np.linspace(0.0, length, n_samples)
    pts = a + s[:, None] * direction
    B = superpose_points(magnets, pts)
    return AxialProfile(s / 10.0, B @ direction)


def divergence_check(magnets: Sequence[Magnet], point, h: float) -> float:
    """Central-difference div B in mT/mm."""
    if h <= 0:
        raise ValueError("h must be positive")
    p = np.asarray(point, float).reshape(3)
    offsets = np.vstack([np.eye(3) * h, -np.eye(3) * h])
    stencil = p + offsets
    for m in magnets:
        if np.any(m.contains(stencil, strict_tol=0.0)):
            raise FieldDomainError("divergence stencil touches a magnet interior")
    if not magnets:
        return 0.0
    B = superpose_points(magnets, stencil)
    return float(sum((B[k, k] - B[k + 3, k]) / (2 * h) for k in range(3)))


def write_field_grid(path, points, B) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x_mm", "y_mm", "z_mm", "Bx_mT", "By_mT", "Bz_mT"])
        for p, b in zip(np.atleast_2d(points), np.atleast_2d(B)):
            w.writerow([repr(float(v)) for v in (*p, *b)])


def write_axial_profile(path, profile: AxialProfile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["l_cm", "B_axial_mT"])
        for l, b in zip(profile.positions_l, profile.B_axial):
            w.writerow([repr(float(l)), repr(float(b))])


def read_field_grid(path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.size == 0:
        return np.zeros((0, 3)), np.zeros((0, 3))
    return data[:, :3], data[:, 3:]
