"""Rigid-body arithmetic on SO(3) and SE(3).

Convention: ``a_T_b`` maps point coordinates expressed in frame ``b`` into
frame ``a``, so chains read left to right::

    surgeon_T_volume = compose(surgeon_T_world, world_T_volume)

Rotations are stored as unit quaternions ``(w, x, y, z)`` and renormalized
after every composition. Matrices only appear at the API boundary. Lengths
are millimeters, internal angles radians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Below this angle the rotation-vector maps switch to their Taylor expansions.
SMALL_ANGLE = 1e-8


def skew(v: Sequence[float]) -> np.ndarray:
    """Cross-product matrix ``[v]x`` such that ``skew(a) @ b == cross(a, b)``."""
    x, y, z = (float(c) for c in v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _as_vec3(v: Iterable[float], name: str) -> tuple[float, float, float]:
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got shape {arr.shape}")
    out = (float(arr[0]), float(arr[1]), float(arr[2]))
    if not all(math.isfinite(c) for c in out):
        raise ValueError(f"{name} must be finite")
    return out


def _qmul(a: tuple, b: tuple) -> tuple[float, float, float, float]:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


@dataclass(frozen=True)
class Rotation:
    """Element of SO(3) held as a unit quaternion ``(w, x, y, z)``."""

    quat: tuple[float, float, float, float]

    def __post_init__(self) -> None:
        try:
            q = tuple(float(c) for c in self.quat)
        except TypeError:
            q = ()
        if len(q) != 4 or not all(math.isfinite(c) for c in q):
            raise ValueError(f"quaternion must be 4 finite numbers, got {self.quat!r}")
        n = math.sqrt(sum(c * c for c in q))
        if n < 1e-300:
            raise ValueError("zero quaternion does not represent a rotation")
        # Skip re-normalizing unit input so save/load cycles stay bit-exact.
        if abs(n - 1.0) > 4e-16:
            q = tuple(c / n for c in q)
        object.__setattr__(self, "quat", q)

    # -- constructors -----------------------------------------------------

    @classmethod
    def identity(cls) -> Rotation:
        return cls((1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_rotvec(cls, rotvec: Sequence[float]) -> Rotation:
        """Build from an axis-angle vector (radians)."""
        x, y, z = _as_vec3(rotvec, "rotvec")
        theta = math.sqrt(x * x + y * y + z * z)
        if theta < SMALL_ANGLE:
            s = 0.5 - theta * theta / 48.0
            w = 1.0 - theta * theta / 8.0
        else:
            s = math.sin(0.5 * theta) / theta
            w = math.cos(0.5 * theta)
        return cls((w, s * x, s * y, s * z))

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle: float) -> Rotation:
        a = np.asarray(_as_vec3(axis, "axis"))
        n = np.linalg.norm(a)
        if n == 0.0:
            raise ValueError("rotation axis must be non-zero")
        return cls.from_rotvec(a / n * angle)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Rotation:
        """Shepperd's method; ``m`` is assumed orthonormal with det +1."""
        m = np.asarray(m, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"rotation matrix must be 3x3, got {m.shape}")
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        diag = (m[0, 0], m[1, 1], m[2, 2])
        k = int(np.argmax((tr,) + diag))
        if k == 0:
            s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
            q = (0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s)
        elif k == 1:
            s = 2.0 * math.sqrt(max(1.0 + m[0, 0] - m[1, 1] - m[2, 2], 0.0))
            q = ((m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s)
        elif k == 2:
            s = 2.0 * math.sqrt(max(1.0 + m[1, 1] - m[0, 0] - m[2, 2], 0.0))
            q = ((m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(max(1.0 + m[2, 2] - m[0, 0] - m[1, 1], 0.0))
            q = ((m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s)
        return cls(q)

    @classmethod
    def random(cls, rng: np.random.Generator) -> Rotation:
        """Uniformly distributed rotation (normalized 4-D Gaussian)."""
        return cls(tuple(rng.standard_normal(4)))

    # -- conversions ------------------------------------------------------

    def canonical(self) -> tuple[float, float, float, float]:
        """Quaternion with non-negative ``w`` (removes the double cover)."""
        w, x, y, z = self.quat
        if w < 0.0 or (w == 0.0 and (x, y, z) < (0.0, 0.0, 0.0)):
            return (-w, -x, -y, -z)
        return (w, x, y, z)

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def as_rotvec(self) -> np.ndarray:
        """Axis-angle vector with angle in ``[0, pi]`` (radians)."""
        w, x, y, z = self.canonical()
        n = math.sqrt(x * x + y * y + z * z)
        if n < SMALL_ANGLE:
            # 2*atan2(n, w)/n expanded around n = 0
            scale = 2.0 / w * (1.0 - n * n / (3.0 * w * w))
        else:
            scale = 2.0 * math.atan2(n, w) / n
        return np.array([scale * x, scale * y, scale * z])

    def angle(self) -> float:
        w, x, y, z = self.canonical()
        return 2.0 * math.atan2(math.sqrt(x * x + y * y + z * z), w)

    # -- group operations ---------------------------------------------------

    def __mul__(self, other: Rotation) -> Rotation:
        if not isinstance(other, Rotation):
            return NotImplemented
        return Rotation(_qmul(self.quat, other.quat))

    def inverse(self) -> Rotation:
        w, x, y, z = self.quat
        return Rotation((w, -x, -y, -z))

    def apply(self, v: Sequence[float]) -> np.ndarray:
        """Rotate one 3-vector or an ``(n, 3)`` array of row vectors."""
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            return self._apply_one(arr)
        return arr @ self.as_matrix().T

    def _apply_one(self, v: np.ndarray) -> np.ndarray:
        w, qx, qy, qz = self.quat
        vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
        # v' = v + 2w (q x v) + 2 q x (q x v)
        cx = qy * vz - qz * vy
        cy = qz * vx - qx * vz
        cz = qx * vy - qy * vx
        ccx = qy * cz - qz * cy
        ccy = qz * cx - qx * cz
        ccz = qx * cy - qy * cx
        return np.array(
            [vx + 2.0 * (w * cx + ccx), vy + 2.0 * (w * cy + ccy), vz + 2.0 * (w * cz + ccz)]
        )


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element ``a_T_b``: ``p_a = rotation.apply(p_b) + translation``."""

    rotation: Rotation
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if not isinstance(self.rotation, Rotation):
            raise TypeError("rotation must be a Rotation")
        object.__setattr__(self, "translation", _as_vec3(self.translation, "translation"))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(Rotation.identity())

    @classmethod
    def from_translation(cls, t: Sequence[float]) -> RigidTransform:
        return cls(Rotation.identity(), t)

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> RigidTransform:
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError(f"homogeneous matrix must be 4x4, got {m.shape}")
        return cls(Rotation.from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def random(cls, rng: np.random.Generator, translation_scale: float = 1000.0) -> RigidTransform:
        rot = Rotation.random(rng)
        return cls(rot, rng.uniform(-translation_scale, translation_scale, 3))

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.as_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, p: Sequence[float]) -> np.ndarray:
        """Map a point (or ``(n, 3)`` points) from frame b to frame a."""
        return self.rotation.apply(p) + self.t

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return compose(self, other)

    def inverse(self) -> RigidTransform:
        return inverse(self)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a_T_b`` composed with ``b_T_c`` gives ``a_T_c``."""
    rot = a.rotation * b.rotation
    tb = a.rotation._apply_one(np.array(b.translation))
    ta = a.translation
    return RigidTransform(rot, (tb[0] + ta[0], tb[1] + ta[1], tb[2] + ta[2]))


def inverse(t: RigidTransform) -> RigidTransform:
    rinv = t.rotation.inverse()
    return RigidTransform(rinv, -rinv._apply_one(np.array(t.translation)))


def compose_all(*transforms: RigidTransform) -> RigidTransform:
    out = transforms[0]
    for t in transforms[1:]:
        out = compose(out, t)
    return out


def rotation_angle_about_axes(r: Rotation) -> np.ndarray:
    """Per-axis rotation components in degrees.

    The components of the axis-angle (logarithm) vector, so they are
    symmetric in x/y/z and independent of any Euler order.
    """
    return np.degrees(r.as_rotvec())


def rotation_distance(a: Rotation, b: Rotation) -> float:
    """Geodesic angle (radians) between two rotations."""
    return (a.inverse() * b).angle()


def transform_distance(a: RigidTransform, b: RigidTransform) -> tuple[float, float]:
    """(rotation angle in radians, translation distance in mm) between two poses."""
    return rotation_distance(a.rotation, b.rotation), float(np.linalg.norm(a.t - b.t))


@dataclass(frozen=True)
class Line3:
    """Infinite 3-D line; ``direction`` is normalized on construction."""

    origin: tuple[float, float, float]
    direction: tuple[float, float, float]

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", _as_vec3(self.origin, "origin"))
        d = np.array(_as_vec3(self.direction, "direction"))
        n = float(np.linalg.norm(d))
        if n < 1e-300:
            raise ValueError("line direction must be non-zero")
        if abs(n - 1.0) > 4e-16:
            d = d / n
        object.__setattr__(self, "direction", (float(d[0]), float(d[1]), float(d[2])))

    @property
    def o(self) -> np.ndarray:
        return np.array(self.origin)

    @property
    def d(self) -> np.ndarray:
        return np.array(self.direction)

    def point_at(self, s: float) -> np.ndarray:
        return self.o + s * self.d

    def transformed(self, t: RigidTransform) -> Line3:
        """The same line expressed in the parent frame of ``t``."""
        return Line3(t.apply(self.o), t.rotation.apply(self.d))


def point_to_line_distance(p: Sequence[float], line: Line3) -> float:
    """Perpendicular distance ``|(p - o) x d|`` for a unit direction ``d``."""
    return float(np.linalg.norm(np.cross(np.asarray(p, dtype=float) - line.o, line.d)))


def orthonormal_complement(axis: Sequence[float]) -> np.ndarray:
    """Two unit vectors (rows) completing ``axis`` to a right-handed basis.

    Deterministic: the first vector is built from the world axis least
    aligned with ``axis``.
    """
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    helper = np.zeros(3)
    helper[int(np.argmin(np.abs(a)))] = 1.0
    u = np.cross(a, helper)
    u /= np.linalg.norm(u)
    v = np.cross(a, u)
    return np.vstack([u, v])


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    """Rotation matrices ``(n, 3, 3)`` for unit quaternions ``(n, 4)`` (w, x, y, z)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((len(q), 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quats_to_rotvecs(q: np.ndarray) -> np.ndarray:
    """Axis-angle vectors ``(n, 3)`` for quaternions ``(n, 4)``; angles in [0, pi]."""
    q = np.where(q[:, :1] < 0, -q, q)
    v = q[:, 1:]
    n = np.linalg.norm(v, axis=1)
    w = q[:, 0]
    small = n < SMALL_ANGLE
    safe_n = np.where(small, 1.0, n)
    safe_w = np.where(small, w, 1.0)
    scale = np.where(
        small, 2.0 / safe_w * (1.0 - n * n / (3.0 * safe_w * safe_w)), 2.0 * np.arctan2(n, w) / safe_n
    )
    return v * scale[:, None]


def quats_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Hamilton product of ``(n, 4)`` quaternion arrays."""
    aw, ax, ay, az = a.T
    bw, bx, by, bz = b.T
    return np.column_stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )
