"""CPU ray caster: per-modality image planes from an immutable scene snapshot.

One deterministic sample per pixel, no anti-aliasing anywhere: blending
would smear instance ids across mask edges.  Depth is planar z-depth
(distance along the camera forward axis), not Euclidean ray length.
No-hit sentinels: depth 0, instance 0, normal (0,0,0), rgb/albedo take the
scene background color, true shading 1.

Pose/ray math runs in float64; finished planes are stored float32 (the
PFM payload type) and int32 for instance ids.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose6D
from .imaging import decode_id_colors, encode_id_colors
from .scene import (
    Box,
    Checker,
    DirectionalLight,
    Material,
    Plane,
    PointLight,
    SceneGraph,
    Sphere,
    TriangleMesh,
)

RENDER_MODALITIES = ("rgb", "albedo", "depth", "normal", "instance")

_T_MIN = 1e-9  # minimum accepted ray parameter
_SHADOW_BIAS = 1e-6  # meters along the surface normal
_SHADOW_MARGIN = 1e-4  # shadow ray stops short of a point light by this


class StencilOverflowError(Exception):
    """Scene has instance ids beyond the 255 the 8-bit stencil can encode."""


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float, float]
    direction: tuple[float, float, float]  # unit length

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, |d| = {n}")


@dataclass(frozen=True)
class HitRecord:
    t: float  # ray parameter, meters, > 0
    point: tuple[float, float, float]
    normal: tuple[float, float, float]  # unit, facing the ray origin
    instance_id: int
    albedo: tuple[float, float, float]
    ambient: float


_PLANE_SPECS = {
    # modality -> (channels, dtype)
    "rgb": (3, np.float32),
    "albedo": (3, np.float32),
    "shading": (1, np.float32),
    "depth": (1, np.float32),
    "normal": (3, np.float32),
    "instance": (1, np.int32),
    "class": (3, np.uint8),
}


@dataclass
class ImagePlane:
    """W x H buffer of linear-space values for one modality."""

    width: int
    height: int
    modality: str
    values: np.ndarray

    def __post_init__(self):
        if self.modality not in _PLANE_SPECS:
            raise ValueError(f"unknown modality {self.modality!r}")
        channels, dtype = _PLANE_SPECS[self.modality]
        want = (self.height, self.width) if channels == 1 else (self.height, self.width, channels)
        v = np.asarray(self.values, dtype=dtype)
        if v.shape != want:
            raise ValueError(
                f"{self.modality} plane must have shape {want}, got {v.shape}"
            )
        self.values = v


@dataclass
class StencilBuffer:
    """Per-pixel 8-bit instance id buffer; 0 is background."""

    width: int
    height: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.uint8)
        if v.shape != (self.height, self.width):
            raise ValueError("stencil shape mismatch")
        self.values = v


# ---------------------------------------------------------------------------
# Compiled primitives
# ---------------------------------------------------------------------------


class _Primitive:
    """World-space instance of one analytic primitive or mesh."""

    def __init__(self, geometry, pose: Pose6D, instance_id: int, material: Material):
        self.geometry = geometry
        self.instance_id = instance_id
        self.material = material
        self.translation = np.asarray(pose.location)
        self.rotation = pose.rotation_matrix()
        scale = np.asarray(pose.scale)
        self.inv_linear = self.rotation.T / scale[:, None]  # diag(1/s) @ R^T
        self.normal_matrix = self.rotation / scale  # (L^-1)^T, columns scaled

    def _to_local(self, origins, dirs):
        o = (np.asarray(origins) - self.translation) @ self.inv_linear.T
        d = np.asarray(dirs) @ self.inv_linear.T
        return o, d

    def intersect(self, origins, dirs, t_min: float) -> np.ndarray:
        """Ray parameter per ray (np.inf for miss); origins may be (3,) or (N,3)."""
        raise NotImplementedError

    def local_normal(self, local_points: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def surface(self, origins, dirs, t: np.ndarray):
        """World normal (not yet viewer-flipped), albedo, ambient at t."""
        o, d = self._to_local(origins, dirs)
        p_local = o + t[:, None] * d
        n_local = self.local_normal(p_local)
        n_world = n_local @ self.normal_matrix.T
        n_world /= np.linalg.norm(n_world, axis=-1, keepdims=True)
        albedo = self._albedo(origins, dirs, t)
        amb = np.full(len(t), self.material.ambient)
        return n_world, albedo, amb

    def _albedo(self, origins, dirs, t):
        mat = self.material
        if isinstance(mat.albedo, Checker):
            p_world = np.asarray(origins) + t[:, None] * np.asarray(dirs)
            # metric checker frame: undo translation+rotation, keep scale
            q = (p_world - self.translation) @ self.rotation
            # tiny bias keeps coplanar faces (q ~ +-1e-16) stable
            cells = np.floor((q + 1e-9) / mat.albedo.cell).sum(axis=-1)
            a = np.asarray(mat.albedo.color_a)
            b = np.asarray(mat.albedo.color_b)
            return np.where((cells % 2 == 0)[:, None], a, b)
        return np.broadcast_to(np.asarray(mat.albedo), (len(t), 3)).copy()


class _SpherePrim(_Primitive):
    def intersect(self, origins, dirs, t_min):
        o, d = self._to_local(origins, dirs)
        r = self.geometry.radius
        a = np.sum(d * d, axis=-1)
        b = 2.0 * np.sum(o * d, axis=-1)
        c = np.sum(o * o, axis=-1) - r * r
        disc = b * b - 4.0 * a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            sq = np.sqrt(np.maximum(disc, 0.0))
            t0 = (-b - sq) / (2.0 * a)
            t1 = (-b + sq) / (2.0 * a)
        t = np.where(t0 > t_min, t0, np.where(t1 > t_min, t1, np.inf))
        return np.where(disc >= 0.0, t, np.inf)

    def local_normal(self, p):
        return p / self.geometry.radius


class _BoxPrim(_Primitive):
    def intersect(self, origins, dirs, t_min):
        o, d = self._to_local(origins, dirs)
        h = np.asarray(self.geometry.half_extents)
        with np.errstate(divide="ignore", invalid="ignore"):
            ta = (-h - o) / d
            tb = (h - o) / d
        near = np.fmin(ta, tb).max(axis=-1)  # fmin/fmax drop NaN from 0/0
        far = np.fmax(ta, tb).min(axis=-1)
        t = np.where(near > t_min, near, far)
        hit = (near <= far) & (t > t_min) & np.isfinite(t)
        return np.where(hit, t, np.inf)

    def local_normal(self, p):
        h = np.asarray(self.geometry.half_extents)
        axis = np.argmax(np.abs(p) / h, axis=-1)
        n = np.zeros_like(p)
        rows = np.arange(len(p))
        n[rows, axis] = np.sign(p[rows, axis])
        return n


class _PlanePrim(_Primitive):
    def intersect(self, origins, dirs, t_min):
        o, d = self._to_local(origins, dirs)
        oz = o[..., 2]
        dz = d[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -oz / dz
        p = o + t[..., None] * d
        hx, hy = self.geometry.half_extents
        hit = (
            (np.abs(dz) > 0.0)
            & (t > t_min)
            & (np.abs(p[..., 0]) <= hx)
            & (np.abs(p[..., 1]) <= hy)
        )
        return np.where(hit, t, np.inf)

    def local_normal(self, p):
        n = np.zeros_like(p)
        n[..., 2] = 1.0
        return n


class _MeshPrim(_Primitive):
    def __init__(self, geometry: TriangleMesh, pose, instance_id, material):
        super().__init__(geometry, pose, instance_id, material)
        v = geometry.vertices
        f = geometry.faces
        self._v0 = v[f[:, 0]]
        self._e1 = v[f[:, 1]] - self._v0
        self._e2 = v[f[:, 2]] - self._v0
        fn = np.cross(self._e1, self._e2)
        self._fnormal = fn / np.linalg.norm(fn, axis=-1, keepdims=True)

    def _mt(self, o, d, t_min):
        """Möller-Trumbore over every face; returns (t, face index) per ray."""
        n = d.shape[0] if d.ndim == 2 else 1
        best_t = np.full(n, np.inf)
        best_f = np.zeros(n, dtype=np.int32)
        for fi in range(len(self._v0)):
            e1, e2, v0 = self._e1[fi], self._e2[fi], self._v0[fi]
            pvec = np.cross(d, e2)
            det = pvec @ e1
            with np.errstate(divide="ignore", invalid="ignore"):
                inv = 1.0 / det
                tvec = o - v0
                u = np.sum(tvec * pvec, axis=-1) * inv
                qvec = np.cross(tvec, e1)
                v = np.sum(d * qvec, axis=-1) * inv
                t = (qvec @ e2) * inv
            ok = (
                (np.abs(det) > 1e-14)
                & (u >= 0.0)
                & (v >= 0.0)
                & (u + v <= 1.0)
                & (t > t_min)
                & (t < best_t)
            )
            best_t = np.where(ok, t, best_t)
            best_f = np.where(ok, fi, best_f)
        return best_t, best_f

    def intersect(self, origins, dirs, t_min):
        o, d = self._to_local(origins, dirs)
        t, _ = self._mt(o, d, t_min)
        return t

    def surface(self, origins, dirs, t):
        o, d = self._to_local(origins, dirs)
        _, face = self._mt(o, d, _T_MIN)
        n_world = self._fnormal[face] @ self.normal_matrix.T
        n_world /= np.linalg.norm(n_world, axis=-1, keepdims=True)
        albedo = self._albedo(origins, dirs, t)
        amb = np.full(len(t), self.material.ambient)
        return n_world, albedo, amb

    def local_normal(self, p):  # pragma: no cover - surface() overrides
        raise NotImplementedError


def _compile(geometry, pose, instance_id, material) -> _Primitive:
    cls = {
        Sphere: _SpherePrim,
        Box: _BoxPrim,
        Plane: _PlanePrim,
        TriangleMesh: _MeshPrim,
    }[type(geometry)]
    return cls(geometry, pose, instance_id, material)


@dataclass
class SceneSnapshot:
    """Immutable compiled view of a SceneGraph for rendering.

    Building a snapshot copies poses and lights, so later scene mutations
    never bleed into frames already being rendered.
    """

    primitives: list[_Primitive]
    lights: list
    background: tuple[float, float, float]
    max_instance_id: int
    instance_ids: frozenset[int] = field(default_factory=frozenset)
    id_labels: dict[int, str] = field(default_factory=dict)

    @classmethod
    def from_scene(cls, scene: SceneGraph) -> "SceneSnapshot":
        prims: list[_Primitive] = []
        for actor in scene.actors.values():
            prims.append(_compile(actor.geometry, actor.pose, actor.instance_id, actor.material))
        for sk in scene.skeletons.values():
            world = sk.joint_world_poses()
            for joint, (_, wpose) in zip(sk.joints, world):
                if joint.geometry is not None:
                    prims.append(_compile(joint.geometry, wpose, sk.instance_id, joint.material))
        maskables = scene.maskables()
        return cls(
            primitives=prims,
            lights=copy.deepcopy(scene.lights),
            background=tuple(scene.background),
            max_instance_id=scene.max_instance_id(),
            instance_ids=frozenset(a.instance_id for a in maskables),
            id_labels={a.instance_id: a.class_label for a in maskables},
        )


# ---------------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------------


def _trace_arrays(snap: SceneSnapshot, origins, dirs, t_min: float = _T_MIN):
    """Nearest hit over all primitives; exhaustive scan in fixed order.

    Ties go to the earlier-registered primitive, which keeps output
    independent of any evaluation parallelism.
    """
    dirs = np.asarray(dirs, dtype=float)
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_p = np.full(n, -1, dtype=np.int32)
    for idx, prim in enumerate(snap.primitives):
        t = prim.intersect(origins, dirs, t_min)
        closer = t < best_t
        best_t[closer] = t[closer]
        best_p[closer] = idx
    hit = best_p >= 0

    point = np.zeros((n, 3))
    normal = np.zeros((n, 3))
    albedo = np.zeros((n, 3))
    ambient = np.zeros(n)
    instance = np.zeros(n, dtype=np.int32)

    o_arr = np.asarray(origins, dtype=float)
    for idx, prim in enumerate(snap.primitives):
        sel = best_p == idx
        if not sel.any():
            continue
        t_sel = best_t[sel]
        o_sel = o_arr[sel] if o_arr.ndim == 2 else o_arr
        d_sel = dirs[sel]
        nrm, alb, amb = prim.surface(o_sel, d_sel, t_sel)
        # normals face the ray origin: two-sided surfaces
        flip = np.sum(nrm * d_sel, axis=-1) > 0.0
        nrm[flip] = -nrm[flip]
        point[sel] = o_sel + t_sel[:, None] * d_sel
        normal[sel] = nrm
        albedo[sel] = alb
        ambient[sel] = amb
        instance[sel] = prim.instance_id
    return {
        "t": best_t,
        "hit": hit,
        "point": point,
        "normal": normal,
        "albedo": albedo,
        "ambient": ambient,
        "instance": instance,
    }


def _occluded(snap: SceneSnapshot, origins, dirs, max_t, active) -> np.ndarray:
    """True where some primitive blocks the segment [0, max_t) of each ray."""
    blocked = np.zeros(dirs.shape[0], dtype=bool)
    for prim in snap.primitives:
        todo = active & ~blocked
        if not todo.any():
            break
        t = prim.intersect(origins[todo], dirs[todo], _T_MIN)
        hit = t < (max_t[todo] if isinstance(max_t, np.ndarray) else max_t)
        b = blocked[todo]
        b[hit] = True
        blocked[todo] = b
    return blocked


def _shading_values(snap: SceneSnapshot, points, normals, ambients) -> np.ndarray:
    """Scalar white-light shading: ambient + sum of n.l light terms.

    Unclamped: bright lights may push values above 1; clamping happens
    only when a plane is encoded to 8 bits.
    """
    s = np.array(ambients, dtype=float)
    n_pix = len(s)
    if n_pix == 0:
        return s
    for light in snap.lights:
        if isinstance(light, DirectionalLight):
            l = -np.asarray(light.direction)
            ndotl = np.maximum(normals @ l, 0.0)
            lit = ndotl > 0.0
            vis = np.ones(n_pix)
            if light.casts_shadows and lit.any():
                o = points + _SHADOW_BIAS * normals
                d = np.broadcast_to(l, (n_pix, 3))
                vis[_occluded(snap, o, d, np.inf, lit)] = 0.0
            s += light.intensity * ndotl * vis
        else:
            delta = np.asarray(light.position) - points
            dist = np.linalg.norm(delta, axis=-1)
            dist = np.maximum(dist, 1e-12)
            l = delta / dist[:, None]
            ndotl = np.maximum(np.sum(normals * l, axis=-1), 0.0)
            atten = 1.0 / (1.0 + light.attenuation * dist * dist)
            lit = ndotl > 0.0
            vis = np.ones(n_pix)
            if light.casts_shadows and lit.any():
                o = points + _SHADOW_BIAS * normals
                vis[_occluded(snap, o, l, dist - _SHADOW_MARGIN, lit)] = 0.0
            s += light.intensity * ndotl * atten * vis
    return s


# ---------------------------------------------------------------------------
# Public single-ray operations
# ---------------------------------------------------------------------------


def primary_ray(cam, px: float, py: float) -> Ray:
    """Pinhole ray through the center of pixel (px, py).

    Fractional pixel coordinates are allowed; the sample point is
    (px + 0.5, py + 0.5) in pixel-corner coordinates, so image +x runs
    along the camera's right axis and image +y downward.
    """
    if not (0 <= px < cam.width and 0 <= py < cam.height):
        raise ValueError(f"pixel ({px}, {py}) outside {cam.width}x{cam.height}")
    fwd, right, down = cam.axes()
    f = cam.focal_px
    d = (
        f * fwd
        + (px + 0.5 - cam.width / 2.0) * right
        + (py + 0.5 - cam.height / 2.0) * down
    )
    d /= np.linalg.norm(d)
    return Ray(origin=tuple(cam.pose.location), direction=tuple(d))


def camera_rays(cam) -> tuple[np.ndarray, np.ndarray]:
    """Origins (3,) and unit directions (H*W, 3) for every pixel, row-major."""
    fwd, right, down = cam.axes()
    f = cam.focal_px
    xs = np.arange(cam.width) + 0.5 - cam.width / 2.0
    ys = np.arange(cam.height) + 0.5 - cam.height / 2.0
    gx, gy = np.meshgrid(xs, ys)
    d = f * fwd + gx[..., None] * right + gy[..., None] * down
    d = d.reshape(-1, 3)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    return np.asarray(cam.pose.location, dtype=float), d


def trace(snap: SceneSnapshot, ray: Ray) -> HitRecord | None:
    """Nearest intersection of one ray with the scene, or None."""
    res = _trace_arrays(snap, np.asarray(ray.origin), np.asarray([ray.direction]))
    if not res["hit"][0]:
        return None
    return HitRecord(
        t=float(res["t"][0]),
        point=tuple(res["point"][0]),
        normal=tuple(res["normal"][0]),
        instance_id=int(res["instance"][0]),
        albedo=tuple(res["albedo"][0]),
        ambient=float(res["ambient"][0]),
    )


def shade(snap: SceneSnapshot, hit: HitRecord) -> tuple[tuple[float, float, float], float]:
    """Lit color and scalar shading for one hit: rgb = albedo * S."""
    s = float(
        _shading_values(
            snap,
            np.asarray([hit.point]),
            np.asarray([hit.normal]),
            np.asarray([hit.ambient]),
        )[0]
    )
    rgb = tuple(np.asarray(hit.albedo) * s)
    return rgb, s


# ---------------------------------------------------------------------------
# Frame rendering
# ---------------------------------------------------------------------------


class _GBuffer:
    """Per-pixel hit data shared by every modality of one camera+frame."""

    def __init__(self, snap: SceneSnapshot, cam):
        self.snap = snap
        self.cam = cam
        origin, dirs = camera_rays(cam)
        self.res = _trace_arrays(snap, origin, dirs)
        fwd, _, _ = cam.axes()
        t = self.res["t"]
        self.depth = np.where(self.res["hit"], t * (dirs @ fwd), 0.0)
        self._shading: np.ndarray | None = None

    def shading(self) -> np.ndarray:
        if self._shading is None:
            hit = self.res["hit"]
            s = np.ones(len(hit))  # background shading is 1: keeps I = R*S
            if hit.any():
                s[hit] = _shading_values(
                    self.snap,
                    self.res["point"][hit],
                    self.res["normal"][hit],
                    self.res["ambient"][hit],
                )
            self._shading = s
        return self._shading

    def _shape(self, flat, channels):
        h, w = self.cam.height, self.cam.width
        return flat.reshape((h, w) if channels == 1 else (h, w, channels))

    def plane(self, modality: str) -> ImagePlane:
        res, cam = self.res, self.cam
        hit = res["hit"]
        if modality == "rgb":
            vals = res["albedo"] * self.shading()[:, None]
            vals[~hit] = self.snap.background
            out = self._shape(vals, 3)
        elif modality == "albedo":
            vals = res["albedo"].copy()
            vals[~hit] = self.snap.background
            out = self._shape(vals, 3)
        elif modality == "shading":
            out = self._shape(self.shading(), 1)
        elif modality == "depth":
            out = self._shape(self.depth, 1)
        elif modality == "normal":
            out = self._shape(res["normal"], 3)
        elif modality == "instance":
            out = self._shape(res["instance"], 1)
        else:
            raise ValueError(f"unknown modality {modality!r}")
        return ImagePlane(cam.width, cam.height, modality, out)


def render_frame(snap: SceneSnapshot, cam, modalities) -> dict[str, ImagePlane]:
    """Render several modalities from one shared visibility pass.

    Accepts the renderable modalities plus "shading" (the true lighting
    plane the rgb pass applied; background pixels are 1).
    """
    gb = _GBuffer(snap, cam)
    return {m: gb.plane(m) for m in modalities}


def render_modality(snap: SceneSnapshot, cam, modality: str) -> ImagePlane:
    """One independent render pass; modality must be one of
    rgb/albedo/depth/normal/instance."""
    if modality not in RENDER_MODALITIES:
        raise ValueError(
            f"unknown modality {modality!r}; expected one of {RENDER_MODALITIES}"
        )
    return _GBuffer(snap, cam).plane(modality)


def render_shading(snap: SceneSnapshot, cam) -> ImagePlane:
    """True scalar shading plane (the term the rgb pass multiplies in).

    Not a file modality: shading files are recovered from rgb and albedo.
    This plane is the reference that recovery is validated against.
    """
    return _GBuffer(snap, cam).plane("shading")


def render_instance_by_override(snap: SceneSnapshot, cam) -> ImagePlane:
    """Mask strategy 1: render unlit with each material conceptually
    replaced by its id color, then decode colors back to ids."""
    ids = _GBuffer(snap, cam).plane("instance").values
    colors = encode_id_colors(ids)  # the plain-color material stand-in
    decoded = decode_id_colors(colors).astype(np.int32)
    return ImagePlane(cam.width, cam.height, "instance", decoded)


def render_instance_by_stencil(snap: SceneSnapshot, cam) -> tuple[StencilBuffer, ImagePlane]:
    """Mask strategy 2: visibility pass writes ids into an 8-bit stencil,
    then a lookup maps stencil values to mask ids.  Only 256 values fit."""
    if snap.max_instance_id > 255:
        raise StencilOverflowError(
            f"stencil masks support at most 255 instances; scene has ids up to "
            f"{snap.max_instance_id}"
        )
    ids = _GBuffer(snap, cam).plane("instance").values
    stencil = StencilBuffer(cam.width, cam.height, ids.astype(np.uint8))
    lookup = np.arange(256, dtype=np.int32)  # post-process stencil -> id
    plane = ImagePlane(cam.width, cam.height, "instance", lookup[stencil.values])
    return stencil, plane
