"""Independent reference implementations used to check the renderer.

Everything here is deliberately written on a different code path from the
package: scalar math, scipy rotations, 4x4 matrix inverses.  These are the
oracles; they must not import from scenecap.render internals.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation


def rotation_oracle(rotation) -> np.ndarray:
    """Rotation matrix via scipy: intrinsic Z (yaw), Y (-pitch), X (roll)."""
    pitch, yaw, roll = rotation
    return Rotation.from_euler("ZYX", [yaw, -pitch, roll], degrees=True).as_matrix()


def pose_matrix_oracle(pose) -> np.ndarray:
    """4x4 translate @ rotate @ scale built from scratch."""
    T = np.eye(4)
    T[:3, 3] = pose.location
    R = np.eye(4)
    R[:3, :3] = rotation_oracle(pose.rotation)
    S = np.diag(list(pose.scale) + [1.0])
    return T @ R @ S


def transform_point(m: np.ndarray, p) -> np.ndarray:
    v = m @ np.array([p[0], p[1], p[2], 1.0])
    return v[:3]


# ---------------------------------------------------------------------------
# Scalar ray-primitive intersections (world space via matrix inverse)
# ---------------------------------------------------------------------------


def _to_local(m_inv: np.ndarray, o, d):
    o_l = transform_point(m_inv, o)
    d_l = m_inv[:3, :3] @ np.asarray(d, dtype=float)
    return o_l, d_l


def ray_sphere_local(o, d, radius, t_min=1e-9):
    a = float(np.dot(d, d))
    b = 2.0 * float(np.dot(o, d))
    c = float(np.dot(o, o)) - radius * radius
    disc = b * b - 4 * a * c
    if disc < 0:
        return None
    sq = math.sqrt(disc)
    for t in ((-b - sq) / (2 * a), (-b + sq) / (2 * a)):
        if t > t_min:
            return t
    return None


def ray_box_local(o, d, half, t_min=1e-9):
    t_near, t_far = -math.inf, math.inf
    for axis in range(3):
        if d[axis] == 0.0:
            if abs(o[axis]) > half[axis]:
                return None
            continue
        t1 = (-half[axis] - o[axis]) / d[axis]
        t2 = (half[axis] - o[axis]) / d[axis]
        lo, hi = min(t1, t2), max(t1, t2)
        t_near, t_far = max(t_near, lo), min(t_far, hi)
    if t_near > t_far:
        return None
    if t_near > t_min:
        return t_near
    if t_far > t_min:
        return t_far
    return None


def ray_plane_local(o, d, half, t_min=1e-9):
    if d[2] == 0.0:
        return None
    t = -o[2] / d[2]
    if t <= t_min:
        return None
    p = o + t * np.asarray(d)
    if abs(p[0]) <= half[0] and abs(p[1]) <= half[1]:
        return t
    return None


def ray_triangle(o, d, v0, v1, v2, t_min=1e-9):
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(d, e2)
    det = float(np.dot(e1, pvec))
    if abs(det) < 1e-14:
        return None
    inv = 1.0 / det
    tvec = np.asarray(o) - v0
    u = float(np.dot(tvec, pvec)) * inv
    if u < 0 or u > 1:
        return None
    qvec = np.cross(tvec, e1)
    v = float(np.dot(d, qvec)) * inv
    if v < 0 or u + v > 1:
        return None
    t = float(np.dot(e2, qvec)) * inv
    return t if t > t_min else None


def trace_oracle(scene, o, d, t_min=1e-9):
    """Exhaustive nearest-hit scan over every scene primitive.

    Returns (t, instance_id) or None.  Skeletal joints contribute their
    attached geometry under the owner's id.
    """
    from scenecap.scene import Box, Plane, Sphere, TriangleMesh

    entries = []
    for actor in scene.actors.values():
        entries.append((actor.geometry, actor.pose, actor.instance_id))
    for sk in scene.skeletons.values():
        for joint, (_, wpose) in zip(sk.joints, sk.joint_world_poses()):
            if joint.geometry is not None:
                entries.append((joint.geometry, wpose, sk.instance_id))

    best = None
    for geom, pose, iid in entries:
        m_inv = np.linalg.inv(pose_matrix_oracle(pose))
        o_l, d_l = _to_local(m_inv, o, d)
        if isinstance(geom, Sphere):
            t = ray_sphere_local(o_l, d_l, geom.radius, t_min)
        elif isinstance(geom, Box):
            t = ray_box_local(o_l, d_l, geom.half_extents, t_min)
        elif isinstance(geom, Plane):
            t = ray_plane_local(o_l, d_l, geom.half_extents, t_min)
        elif isinstance(geom, TriangleMesh):
            t = None
            for f in geom.faces:
                tt = ray_triangle(
                    o_l, d_l, geom.vertices[f[0]], geom.vertices[f[1]], geom.vertices[f[2]], t_min
                )
                if tt is not None and (t is None or tt < t):
                    t = tt
        else:  # pragma: no cover
            raise TypeError(type(geom))
        if t is not None and (best is None or t < best[0]):
            best = (t, iid)
    return best


def segment_occluded_oracle(scene, p0, p1) -> bool:
    """True when any primitive cuts the open segment (p0, p1)."""
    d = np.asarray(p1, dtype=float) - np.asarray(p0, dtype=float)
    length = float(np.linalg.norm(d))
    hit = trace_oracle(scene, np.asarray(p0, dtype=float), d / length, t_min=1e-6)
    return hit is not None and hit[0] < length - 1e-6


def aabb_oracle(geometry, pose) -> tuple[np.ndarray, np.ndarray]:
    """World AABB by transforming sampled/corner points with the 4x4 oracle."""
    from scenecap.scene import Box, Plane, Sphere, TriangleMesh

    m = pose_matrix_oracle(pose)
    if isinstance(geometry, Sphere):
        # sample the sphere surface densely
        rng = np.random.default_rng(7)
        v = rng.normal(size=(20000, 3))
        v = v / np.linalg.norm(v, axis=1, keepdims=True) * geometry.radius
        pts = v
    elif isinstance(geometry, Box):
        h = np.asarray(geometry.half_extents)
        pts = np.array(
            [[sx * h[0], sy * h[1], sz * h[2]] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        )
    elif isinstance(geometry, Plane):
        hx, hy = geometry.half_extents
        pts = np.array([[sx * hx, sy * hy, 0.0] for sx in (-1, 1) for sy in (-1, 1)])
    elif isinstance(geometry, TriangleMesh):
        pts = geometry.vertices
    else:  # pragma: no cover
        raise TypeError(type(geometry))
    world = np.array([transform_point(m, p) for p in pts])
    return world.min(axis=0), world.max(axis=0)
