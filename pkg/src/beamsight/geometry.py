"""Quaternions, plane mirroring and the spatial-to-channel angle transform.

Rotation convention
-------------------
``quat_to_rotmat`` returns the matrix whose inverse maps global coordinates
into a device's local frame: for a device at ``p`` with orientation ``q``,
a global point ``v`` has local coordinates ``R(q).T @ (v - p)``.  This matrix
is the transpose of the usual active rotation built from ``q``, so a positive
quaternion angle about z makes a fixed target appear at a *larger* local
azimuth.

``quat_multiply(a, b)`` composes so that ``R(a * b) = R(a) @ R(b)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEGENERATE_DISTANCE = 1e-6
UNIT_TOL = 1e-6


class DegenerateGeometryError(ValueError):
    """Raised when two points coincide and angles are undefined."""


def wrap_angle(x):
    """Wrap angles into (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2.0 * np.pi)


# --------------------------------------------------------------------------
# quaternions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, arr, normalize: bool = True) -> "Quaternion":
        a = np.asarray(arr, dtype=float).reshape(4)
        if normalize:
            n = np.linalg.norm(a)
            if n == 0.0 or not np.isfinite(n):
                raise ValueError("cannot normalize a zero or non-finite quaternion")
            a = a / n
        return cls(*map(float, a))

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        ax = np.asarray(axis, dtype=float)
        ax = ax / np.linalg.norm(ax)
        s = np.sin(angle / 2.0)
        return cls(float(np.cos(angle / 2.0)), *map(float, s * ax))

    @classmethod
    def from_yaw(cls, yaw: float) -> "Quaternion":
        return cls.from_axis_angle([0.0, 0.0, 1.0], yaw)

    @classmethod
    def from_rotmat(cls, rot) -> "Quaternion":
        """Inverse of :func:`quat_to_rotmat` (returns the w >= 0 representative)."""
        # rot is the transpose of the active matrix; recover from the active one
        m = np.asarray(rot, dtype=float).T
        tr = np.trace(m)
        if tr > 0.0:
            s = 2.0 * np.sqrt(1.0 + tr)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.asarray(q)
        if q[0] < 0:
            q = -q
        return cls.from_array(q)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        return Quaternion.from_array(self.as_array())

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def is_unit(self, tol: float = UNIT_TOL) -> bool:
        return abs(self.norm() - 1.0) <= tol


def _check_unit(q: Quaternion, name: str) -> None:
    if not q.is_unit():
        raise ValueError(f"{name} is not a unit quaternion (norm={q.norm():.9g})")


def hamilton_product(p, q) -> np.ndarray:
    """Standard Hamilton product of two quaternion arrays [w, x, y, z]."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    pw, pv = p[0], p[1:]
    qw, qv = q[0], q[1:]
    w = pw * qw - pv @ qv
    v = pw * qv + qw * pv + np.cross(pv, qv)
    return np.concatenate([[w], v])


def quat_multiply(a: Quaternion, b: Quaternion) -> Quaternion:
    """Compose two unit quaternions so that R(a * b) = R(a) @ R(b)."""
    _check_unit(a, "a")
    _check_unit(b, "b")
    # R() is the transposed active matrix, so the order of the Hamilton
    # product is swapped to keep matrix composition left to right.
    return Quaternion.from_array(hamilton_product(b.as_array(), a.as_array()))


def rotmat(q) -> np.ndarray:
    """Rotation matrix polynomial in the raw quaternion entries (no normalization).

    Used by :func:`quat_to_rotmat` and, unnormalized, by Jacobian code where
    the quaternion is perturbed off the unit sphere.
    """
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * x * y + 2 * w * z, 2 * x * z - 2 * w * y],
            [2 * x * y - 2 * w * z, w * w - x * x + y * y - z * z, 2 * y * z + 2 * w * x],
            [2 * x * z + 2 * w * y, 2 * y * z - 2 * w * x, w * w - x * x - y * y + z * z],
        ]
    )


def rotmat_grad(q) -> np.ndarray:
    """Partial derivatives of :func:`rotmat`, shape (4, 3, 3), one slice per entry of q."""
    w, x, y, z = np.asarray(q, dtype=float)
    dw = np.array([[w, z, -y], [-z, w, x], [y, -x, w]])
    dx = np.array([[x, y, z], [y, -x, w], [z, -w, -x]])
    dy = np.array([[-y, x, -w], [x, y, z], [w, z, -y]])
    dz = np.array([[-z, w, x], [-w, -z, y], [x, y, z]])
    return 2.0 * np.stack([dw, dx, dy, dz])


def quat_to_rotmat(q: Quaternion) -> np.ndarray:
    _check_unit(q, "q")
    return rotmat(q.as_array())


def quat_error_angle(true_q: Quaternion, est_q: Quaternion) -> float:
    """Angle of the shortest rotation between two attitudes, in [0, pi].

    q and -q describe the same attitude, so the closer sign is used.  The
    half-chord form is exact at zero, unlike arccos of the dot product.
    """
    a, b = true_q.as_array(), est_q.as_array()
    if a @ b < 0:
        b = -b
    return 4.0 * float(np.arctan2(np.linalg.norm(a - b), np.linalg.norm(a + b)))


# --------------------------------------------------------------------------
# planes
# --------------------------------------------------------------------------

HORIZONTAL_MIRROR = "horizontal"  # vertical wall: mirrors azimuth
VERTICAL_MIRROR = "vertical"  # ceiling or floor: mirrors elevation

_AXIS_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Plane:
    """Hessian-form plane {x : normal . x = offset}.

    ``normal`` points into the room.  ``bounds`` optionally restricts the
    reflecting segment to an axis-aligned box given as (lo, hi) corners.
    """

    normal: np.ndarray
    offset: float
    name: str = ""
    loss_db: float = 6.0
    bounds: np.ndarray | None = field(default=None)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        if abs(np.linalg.norm(n) - 1.0) > _AXIS_TOL:
            raise ValueError(f"plane {self.name or '?'}: normal {n.tolist()} is not unit length")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float).reshape(2, 3)
            object.__setattr__(self, "bounds", b)
        self.mirror_class  # raises for oblique planes

    @classmethod
    def from_point_normal(cls, point, normal, **kw) -> "Plane":
        n = np.asarray(normal, dtype=float)
        return cls(n, float(n @ np.asarray(point, dtype=float)), **kw)

    @property
    def mirror_class(self) -> str:
        nz = abs(self.normal[2])
        if nz <= _AXIS_TOL:
            return HORIZONTAL_MIRROR
        if abs(nz - 1.0) <= _AXIS_TOL:
            return VERTICAL_MIRROR
        raise ValueError(f"plane {self.name or '?'} is neither vertical nor horizontal")

    def signed_distance(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.normal - self.offset

    def contains(self, s, tol: float = 1e-9) -> bool:
        """True if point ``s`` lies on the plane and inside its bounds."""
        if abs(float(self.signed_distance(s))) > tol:
            return False
        if self.bounds is None:
            return True
        lo, hi = self.bounds
        return bool(np.all(s >= lo - tol) and np.all(s <= hi + tol))


def mirror_point(p, plane: Plane) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return p - 2.0 * plane.signed_distance(p) * plane.normal


# --------------------------------------------------------------------------
# poses and the angle transform
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    position: np.ndarray
    orientation: Quaternion = field(default_factory=Quaternion.identity)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        _check_unit(self.orientation, "pose orientation")


class PathAngles(NamedTuple):
    toa: float
    aoa_az: float
    aoa_el: float
    aod_az: float
    aod_el: float


def _azimuth(u):
    return np.arctan2(u[1], u[0])


def _elevation(u):
    return np.arccos(np.clip(u[2] / np.linalg.norm(u), -1.0, 1.0))


def raw_angles(v_l, v_0, p, rot_ue, rot_bs, mirror_h: bool, mirror_v: bool) -> np.ndarray:
    """Unwrapped [toa, aoa_az, aoa_el, aod_az, aod_el] for raw rotation matrices.

    ``rot_ue`` and ``rot_bs`` map local to global coordinates (columns are the
    local axes).  No normalization or wrapping is applied so the result is
    smooth in its inputs away from branch cuts; finite-difference checks and
    Jacobians are built on this function.
    """
    v_l = np.asarray(v_l, dtype=float)
    v_0 = np.asarray(v_0, dtype=float)
    p = np.asarray(p, dtype=float)
    rel = v_l - p
    dist = np.linalg.norm(rel)
    if dist < DEGENERATE_DISTANCE:
        raise DegenerateGeometryError("UE coincides with a transmit source")
    v_loc = rot_ue.T @ rel  # arrival direction seen from the UE
    p_loc = rot_bs.T @ (-rel)  # departure direction seen from the source
    toa = dist / SPEED_OF_LIGHT
    theta_r = _azimuth(v_loc)
    phi_r = _elevation(v_loc)
    theta_t = _azimuth(p_loc)
    phi_t = _elevation(p_loc)
    if mirror_h or mirror_v:
        w = rot_bs.T @ (v_l - v_0)
        if np.linalg.norm(w) < DEGENERATE_DISTANCE:
            raise DegenerateGeometryError("mirrored source coincides with the BS")
        if mirror_h:
            theta_t = 2.0 * _azimuth(w) - theta_t - np.pi
        if mirror_v:
            phi_t = 2.0 * _elevation(w) - phi_t - np.pi
    return np.array([toa, theta_r, phi_r, theta_t, phi_t])


def _wrap_elevation(phi: float) -> float:
    phi = float(np.mod(phi, 2.0 * np.pi))
    return 2.0 * np.pi - phi if phi > np.pi else phi


def geometric_transform(
    v_l,
    v_0,
    ue: Pose,
    bs_orientation: Quaternion,
    mirror_h: bool = False,
    mirror_v: bool = False,
) -> PathAngles:
    """Channel angles and delay of the path from source ``v_l`` to the UE.

    ``v_0`` is the physical BS position; it only matters for mirrored
    sources, whose departure angles are folded back through the BS frame.
    """
    raw = raw_angles(
        v_l,
        v_0,
        ue.position,
        quat_to_rotmat(ue.orientation),
        quat_to_rotmat(bs_orientation),
        mirror_h,
        mirror_v,
    )
    return PathAngles(
        toa=float(raw[0]),
        aoa_az=float(wrap_angle(raw[1])),
        aoa_el=float(raw[2]),
        aod_az=float(wrap_angle(raw[3])),
        aod_el=_wrap_elevation(raw[4]),
    )


def direction(theta, phi) -> np.ndarray:
    """Unit vector for azimuth ``theta`` and elevation (from +z) ``phi``."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    return np.stack(
        [np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=-1
    )


def inside_room(point, planes, tol: float = 1e-9) -> bool:
    """True if ``point`` is on the inner side of every plane (normals point inward)."""
    return all(float(pl.signed_distance(point)) >= -tol for pl in planes)


def reflection_point(image, receiver, plane: Plane, room=(), tol: float = 1e-9):
    """Specular point on ``plane`` for the image source ``image`` seen from ``receiver``.

    Returns None when the straight line from the image to the receiver does
    not cross the plane's reflecting region inside the room.
    """
    image = np.asarray(image, dtype=float)
    receiver = np.asarray(receiver, dtype=float)
    d = receiver - image
    den = float(plane.normal @ d)
    if abs(den) < 1e-15:
        return None
    t = (plane.offset - float(plane.normal @ image)) / den
    if not (tol < t < 1.0 - tol):
        return None
    s = image + t * d
    if not plane.contains(s, tol=1e-7):
        return None
    if room and not inside_room(s, room, tol=1e-7):
        return None
    return s
