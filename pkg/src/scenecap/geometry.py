"""Pose and transform math.

Conventions used throughout the package (they differ from most game
engines, so they are stated once here and in the README):

* right-handed coordinates, +Z up, forward is +X, units are meters
* +Y is therefore lateral-left; the camera/image "right" axis is -Y
* rotations are Euler triples (pitch, yaw, roll) in degrees, applied
  intrinsically: yaw about +Z first, then pitch about the rotated
  lateral axis (positive pitch tilts forward up), then roll about the
  resulting forward axis
* as matrices: R = Rz(yaw) @ Ry(-pitch) @ Rx(roll)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

Vec3 = tuple[float, float, float]

IDENTITY_LOCATION: Vec3 = (0.0, 0.0, 0.0)
IDENTITY_ROTATION: Vec3 = (0.0, 0.0, 0.0)
IDENTITY_SCALE: Vec3 = (1.0, 1.0, 1.0)


def normalize_angle(deg: float) -> float:
    """Map an angle in degrees to the canonical (-180, 180] range."""
    return float(deg - 360.0 * math.ceil((deg - 180.0) / 360.0))


def _as_vec3(v, name: str) -> Vec3:
    t = tuple(float(c) for c in v)
    if len(t) != 3:
        raise ValueError(f"{name} must have 3 components, got {len(t)}")
    for c in t:
        if not math.isfinite(c):
            raise ValueError(f"{name} components must be finite, got {t}")
    return t  # type: ignore[return-value]


def rotation_matrix(rotation: Vec3) -> np.ndarray:
    """3x3 world-from-local rotation matrix for (pitch, yaw, roll) degrees."""
    pitch, yaw, roll = (math.radians(a) for a in rotation)
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    # Rz(yaw) @ Ry(-pitch) @ Rx(roll), expanded
    return np.array(
        [
            [cy * cp, -cy * sp * sr - sy * cr, -cy * sp * cr + sy * sr],
            [sy * cp, -sy * sp * sr + cy * cr, -sy * sp * cr - cy * sr],
            [sp, cp * sr, cp * cr],
        ]
    )


def euler_from_matrix(R: np.ndarray) -> Vec3:
    """Inverse of :func:`rotation_matrix`; returns (pitch, yaw, roll) degrees.

    At the gimbal singularity (|pitch| = 90) roll is reported as 0 with
    yaw absorbing the remaining rotation.
    """
    sp = float(np.clip(R[2, 0], -1.0, 1.0))
    pitch = math.degrees(math.asin(sp))
    if abs(sp) < 1.0 - 1e-12:
        yaw = math.degrees(math.atan2(R[1, 0], R[0, 0]))
        roll = math.degrees(math.atan2(R[2, 1], R[2, 2]))
    else:
        yaw = math.degrees(math.atan2(-R[0, 1], R[1, 1]))
        roll = 0.0
    return (normalize_angle(pitch), normalize_angle(yaw), normalize_angle(roll))


@dataclass(frozen=True)
class Pose6D:
    """Location (m) + rotation (pitch, yaw, roll degrees) + per-axis scale.

    Immutable; entities swap in a new Pose6D rather than mutating one, so
    scene snapshots can safely keep references.
    """

    location: Vec3 = IDENTITY_LOCATION
    rotation: Vec3 = IDENTITY_ROTATION
    scale: Vec3 = IDENTITY_SCALE

    def __post_init__(self):
        loc = _as_vec3(self.location, "location")
        rot = tuple(normalize_angle(a) for a in _as_vec3(self.rotation, "rotation"))
        scl = _as_vec3(self.scale, "scale")
        if min(scl) <= 0.0:
            raise ValueError(f"scale components must be > 0, got {scl}")
        object.__setattr__(self, "location", loc)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "scale", scl)

    # -- matrix forms -------------------------------------------------

    def rotation_matrix(self) -> np.ndarray:
        return rotation_matrix(self.rotation)

    def linear(self) -> np.ndarray:
        """3x3 rotation*scale part of the world-from-local transform."""
        return self.rotation_matrix() * np.asarray(self.scale)

    def matrix(self) -> np.ndarray:
        """Full 4x4 world-from-local transform (translate @ rotate @ scale)."""
        m = np.eye(4)
        m[:3, :3] = self.linear()
        m[:3, 3] = self.location
        return m

    # -- point transforms ---------------------------------------------

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform local-space point(s), shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=float)
        return p * np.asarray(self.scale) @ self.rotation_matrix().T + np.asarray(
            self.location
        )

    def apply_inverse(self, points: np.ndarray) -> np.ndarray:
        """Map world-space point(s) back into local space."""
        p = np.asarray(points, dtype=float) - np.asarray(self.location)
        return (p @ self.rotation_matrix()) / np.asarray(self.scale)

    def apply_vector(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate+scale direction vector(s); no translation."""
        v = np.asarray(vectors, dtype=float)
        return v * np.asarray(self.scale) @ self.rotation_matrix().T

    def compose(self, child: "Pose6D") -> "Pose6D":
        """World pose of ``child`` expressed relative to this pose.

        Scale composes per axis; the result is exact whenever this pose's
        scale is uniform (matching engine parent/child attachment rules).
        """
        R = self.rotation_matrix() @ child.rotation_matrix()
        return Pose6D(
            location=tuple(self.apply(np.asarray(child.location))),
            rotation=euler_from_matrix(R),
            scale=tuple(np.asarray(self.scale) * np.asarray(child.scale)),
        )

    def is_identity(self) -> bool:
        return (
            self.location == IDENTITY_LOCATION
            and self.rotation == IDENTITY_ROTATION
            and self.scale == IDENTITY_SCALE
        )


IDENTITY_POSE = Pose6D()


def pose_to_json(pose: Pose6D) -> dict:
    return {
        "loc": list(pose.location),
        "rot": list(pose.rotation),
        "scale": list(pose.scale),
    }


def pose_from_json(obj: dict) -> Pose6D:
    return Pose6D(
        location=tuple(obj["loc"]),
        rotation=tuple(obj["rot"]),
        scale=tuple(obj["scale"]),
    )


def world_transform(pose: Pose6D, point) -> Vec3:
    """Scale, rotate, then translate a single local-space point."""
    return tuple(float(v) for v in pose.apply(np.asarray(point, dtype=float)))


def look_at_rotation(eye, target, current_yaw: float = 0.0) -> Vec3:
    """Rotation that points the forward (+X) axis from ``eye`` at ``target``.

    Roll is 0 and up stays as close to world +Z as possible.  A target
    straight above/below resolves to pitch +/-90 with ``current_yaw``
    preserved.  Raises ValueError when target coincides with eye.
    """
    d = np.asarray(target, dtype=float) - np.asarray(eye, dtype=float)
    dist = float(np.linalg.norm(d))
    if dist < 1e-12:
        raise ValueError("look-at target coincides with the eye position")
    horiz = math.hypot(d[0], d[1])
    pitch = math.degrees(math.atan2(d[2], horiz))
    if horiz < 1e-12 * dist:
        return (normalize_angle(pitch), normalize_angle(current_yaw), 0.0)
    yaw = math.degrees(math.atan2(d[1], d[0]))
    return (normalize_angle(pitch), normalize_angle(yaw), 0.0)


def aabb_union(a: tuple[np.ndarray, np.ndarray] | None, b: tuple[np.ndarray, np.ndarray]):
    if a is None:
        return b
    return np.minimum(a[0], b[0]), np.maximum(a[1], b[1])


def aabb_of_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    return p.min(axis=0), p.max(axis=0)


def aabb_overlap(a_min, a_max, b_min, b_max) -> bool:
    """Closed-interval AABB intersection test (touching faces count)."""
    return bool(np.all(np.asarray(a_min) <= np.asarray(b_max)) and np.all(np.asarray(b_min) <= np.asarray(a_max)))


def box_corners(bb_min, bb_max) -> np.ndarray:
    """8 corners of an AABB in binary order over (x, y, z): bit 2 of the
    corner index selects max-x, bit 1 max-y, bit 0 max-z."""
    lo = np.asarray(bb_min, dtype=float)
    hi = np.asarray(bb_max, dtype=float)
    corners = np.empty((8, 3))
    for k in range(8):
        corners[k] = [
            hi[0] if k & 4 else lo[0],
            hi[1] if k & 2 else lo[1],
            hi[2] if k & 1 else lo[2],
        ]
    return corners
