"""Scene graph: actors, skeletons, cameras, lights, and the JSON scene loader.

Instance ids are handed out sequentially from 1 in registration order
(actors first, then skeletal actors, in file order); id 0 is reserved for
background.  Cameras and lights carry no instance id because they never
appear in a mask.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    Pose6D,
    Vec3,
    aabb_of_points,
    aabb_union,
    box_corners,
    euler_from_matrix,
    look_at_rotation,
)

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


class SceneError(Exception):
    """Base for scene construction/lookup failures."""


class SceneParseError(SceneError):
    """Scene description file did not parse; message carries field context."""


class DuplicateNameError(SceneError):
    pass


class UnknownEntityError(SceneError):
    pass


class NotMovableError(SceneError):
    pass


# ---------------------------------------------------------------------------
# Geometry primitives
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    radius: float

    kind = "sphere"

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"sphere radius must be > 0, got {self.radius}")

    def local_aabb(self):
        r = self.radius
        return np.array([-r, -r, -r]), np.array([r, r, r])


@dataclass(frozen=True)
class Box:
    half_extents: Vec3

    kind = "box"

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extents)
        if min(he) <= 0:
            raise ValueError(f"box half-extents must be > 0, got {he}")
        object.__setattr__(self, "half_extents", he)

    def local_aabb(self):
        h = np.asarray(self.half_extents)
        return -h, h


@dataclass(frozen=True)
class Plane:
    """Finite rectangle in the local XY plane (z = 0), normal +Z."""

    half_extents: tuple[float, float]

    kind = "plane"

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extents)
        if len(he) != 2 or min(he) <= 0:
            raise ValueError(f"plane half-extents must be 2 positive values, got {he}")
        object.__setattr__(self, "half_extents", he)

    def local_aabb(self):
        hx, hy = self.half_extents
        return np.array([-hx, -hy, 0.0]), np.array([hx, hy, 0.0])


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (N, 3) float64
    faces: np.ndarray  # (M, 3) int32, indices into vertices

    kind = "mesh"

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        f = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int32))
        if v.ndim != 2 or v.shape[1] != 3 or len(v) == 0:
            raise ValueError("mesh vertices must be a non-empty (N, 3) array")
        if f.ndim != 2 or f.shape[1] != 3 or len(f) == 0:
            raise ValueError("mesh faces must be a non-empty (M, 3) array")
        if f.min() < 0 or f.max() >= len(v):
            raise ValueError("mesh face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def local_aabb(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


Geometry = Sphere | Box | Plane | TriangleMesh


def load_obj(text: str) -> TriangleMesh:
    """Parse a Wavefront OBJ string: positions and triangular faces only.

    Normal/texcoord statements and grouping keywords are accepted and
    ignored; faces with more than 3 vertices are an error.
    """
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        if key == "v":
            if len(parts) < 4:
                raise SceneParseError(f"OBJ line {lineno}: vertex needs 3 coordinates")
            verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
        elif key == "f":
            if len(parts) != 4:
                raise SceneParseError(
                    f"OBJ line {lineno}: only triangular faces are supported"
                )
            idx = []
            for tok in parts[1:]:
                v = tok.split("/")[0]
                i = int(v)
                if i < 0:
                    raise SceneParseError(
                        f"OBJ line {lineno}: negative indices are not supported"
                    )
                idx.append(i - 1)
            faces.append(idx)
        # vn / vt / o / g / s / usemtl / mtllib are ignored
    if not verts or not faces:
        raise SceneParseError("OBJ contains no triangles")
    return TriangleMesh(np.array(verts), np.array(faces, dtype=np.int32))


# ---------------------------------------------------------------------------
# Materials
# ---------------------------------------------------------------------------


def _check_rgb(c, name: str) -> Vec3:
    t = tuple(float(v) for v in c)
    if len(t) != 3 or min(t) < 0.0 or max(t) > 1.0:
        raise ValueError(f"{name} must be 3 channels in [0, 1], got {c}")
    return t  # type: ignore[return-value]


@dataclass(frozen=True)
class Checker:
    """Two-tone checkerboard; metric cell size, pattern fixed to the actor's
    unscaled local frame so it translates/rotates with the actor."""

    color_a: Vec3
    color_b: Vec3
    cell: float

    def __post_init__(self):
        object.__setattr__(self, "color_a", _check_rgb(self.color_a, "checker color_a"))
        object.__setattr__(self, "color_b", _check_rgb(self.color_b, "checker color_b"))
        if self.cell <= 0:
            raise ValueError(f"checker cell size must be > 0, got {self.cell}")


@dataclass(frozen=True)
class Material:
    """Linear-RGB albedo (constant or checker) plus an ambient coefficient."""

    albedo: Vec3 | Checker = (0.75, 0.75, 0.75)
    ambient: float = 0.1

    def __post_init__(self):
        if not isinstance(self.albedo, Checker):
            object.__setattr__(self, "albedo", _check_rgb(self.albedo, "albedo"))
        if not 0.0 <= self.ambient <= 1.0:
            raise ValueError(f"ambient coefficient must be in [0, 1], got {self.ambient}")


DEFAULT_MATERIAL = Material()


# ---------------------------------------------------------------------------
# Lights
# ---------------------------------------------------------------------------


@dataclass
class PointLight:
    position: Vec3
    intensity: float
    attenuation: float = 0.0  # quadratic coefficient k in 1/(1 + k*d^2)
    casts_shadows: bool = True

    kind = "point"

    def __post_init__(self):
        if self.intensity < 0:
            raise ValueError("light intensity must be >= 0")
        if self.attenuation < 0:
            raise ValueError("attenuation must be >= 0")


@dataclass
class DirectionalLight:
    direction: Vec3  # direction of light travel, normalized at construction
    intensity: float
    casts_shadows: bool = True

    kind = "directional"

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n < 1e-12:
            raise ValueError("directional light direction must be non-zero")
        self.direction = tuple(d / n)
        if self.intensity < 0:
            raise ValueError("light intensity must be >= 0")


Light = PointLight | DirectionalLight


# ---------------------------------------------------------------------------
# Entities
# ---------------------------------------------------------------------------


@dataclass
class Actor:
    name: str
    instance_id: int
    class_label: str
    pose: Pose6D
    geometry: Geometry
    material: Material = DEFAULT_MATERIAL
    movable: bool = True

    def world_aabb(self):
        return _geometry_world_aabb(self.geometry, self.pose)

    def local_aabb(self):
        return self.geometry.local_aabb()


@dataclass
class SkeletalJoint:
    name: str
    parent: int  # index of parent joint, -1 for root
    local_pose: Pose6D
    geometry: Geometry | None = None
    material: Material = DEFAULT_MATERIAL


@dataclass
class SkeletalActor:
    """Actor with a topologically-ordered joint chain; joint k's parent
    index is < k and the root joint (parent -1) composes with ``pose``."""

    name: str
    instance_id: int
    class_label: str
    pose: Pose6D
    joints: list[SkeletalJoint] = field(default_factory=list)
    movable: bool = True

    def __post_init__(self):
        for k, j in enumerate(self.joints):
            if j.parent >= k or (j.parent < 0 and j.parent != -1):
                raise ValueError(
                    f"joint {k} ({j.name}) has invalid parent index {j.parent}"
                )

    def joint_world_poses(self) -> list[tuple[str, Pose6D]]:
        """World pose per joint, in joint order."""
        out: list[tuple[str, Pose6D]] = []
        # accumulate (translation, rotation matrix, scale) to avoid
        # re-extracting Euler angles at every level of the chain
        chain: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        root_t = np.asarray(self.pose.location)
        root_R = self.pose.rotation_matrix()
        root_s = np.asarray(self.pose.scale)
        for k, j in enumerate(self.joints):
            if j.parent == -1:
                pt, pR, ps = root_t, root_R, root_s
            else:
                pt, pR, ps = chain[j.parent]
            t = pt + pR @ (ps * np.asarray(j.local_pose.location))
            R = pR @ j.local_pose.rotation_matrix()
            s = ps * np.asarray(j.local_pose.scale)
            chain.append((t, R, s))
            out.append((j.name, Pose6D(tuple(t), euler_from_matrix(R), tuple(s))))
        return out

    def world_aabb(self):
        bounds = None
        poses = self.joint_world_poses()
        for joint, (_, wpose) in zip(self.joints, poses):
            if joint.geometry is not None:
                bounds = aabb_union(bounds, _geometry_world_aabb(joint.geometry, wpose))
            else:
                p = np.asarray(wpose.location)
                bounds = aabb_union(bounds, (p.copy(), p.copy()))
        if bounds is None:
            p = np.asarray(self.pose.location)
            bounds = (p.copy(), p.copy())
        return bounds

    def local_aabb(self):
        """Bounds of all joints + attached geometry in root-local space."""
        inv = self.pose
        lo, hi = self.world_aabb()
        pts = inv.apply_inverse(box_corners(lo, hi))
        return aabb_of_points(pts)


@dataclass
class CameraDef:
    name: str
    pose: Pose6D = Pose6D()
    horizontal_fov: float = 90.0  # degrees
    width: int = 640
    height: int = 480
    stereo_baseline: float | None = None  # meters; offsets a right camera

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("camera resolution must be at least 1x1")
        if not 0.0 < self.horizontal_fov < 180.0:
            raise ValueError(
                f"horizontal fov must be in (0, 180), got {self.horizontal_fov}"
            )
        if self.stereo_baseline is not None and self.stereo_baseline <= 0:
            raise ValueError("stereo baseline must be > 0 when set")

    @property
    def focal_px(self) -> float:
        return (self.width / 2.0) / math.tan(math.radians(self.horizontal_fov) / 2.0)

    def axes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward, image-right, image-down) unit axes in world space."""
        R = self.pose.rotation_matrix()
        return R @ np.array([1.0, 0, 0]), R @ np.array([0, -1.0, 0]), R @ np.array([0, 0, -1.0])

    def right_camera(self) -> "CameraDef":
        """Implicit right-eye camera: same orientation, offset by the
        stereo baseline along the camera's right axis."""
        if self.stereo_baseline is None:
            raise ValueError(f"camera {self.name} has no stereo baseline")
        _, right, _ = self.axes()
        loc = np.asarray(self.pose.location) + self.stereo_baseline * right
        return CameraDef(
            name=self.name + "_R",
            pose=Pose6D(tuple(loc), self.pose.rotation, self.pose.scale),
            horizontal_fov=self.horizontal_fov,
            width=self.width,
            height=self.height,
        )

    def look_at(self, target) -> None:
        self.pose = Pose6D(
            self.pose.location,
            look_at_rotation(self.pose.location, target, current_yaw=self.pose.rotation[1]),
            self.pose.scale,
        )


def _geometry_world_aabb(geom: Geometry, pose: Pose6D):
    if isinstance(geom, Sphere):
        # ellipsoid bound: half-extent per world axis is the row norm of
        # the linear (rotation*scale) matrix times the radius
        L = pose.linear()
        half = geom.radius * np.sqrt((L * L).sum(axis=1))
        c = np.asarray(pose.location)
        return c - half, c + half
    if isinstance(geom, TriangleMesh):
        return aabb_of_points(pose.apply(geom.vertices))
    lo, hi = geom.local_aabb()
    return aabb_of_points(pose.apply(box_corners(lo, hi)))


def oriented_bbox_3d(actor: Actor | SkeletalActor) -> tuple[np.ndarray, np.ndarray]:
    """8 world-space corners of the actor's local AABB plus the centroid.

    Corner k follows binary order over (x, y, z): bit 2 selects +x, bit 1
    +y, bit 0 +z of the local box.
    """
    lo, hi = actor.local_aabb()
    corners = actor.pose.apply(box_corners(lo, hi))
    return corners, corners.mean(axis=0)


# ---------------------------------------------------------------------------
# Scene graph
# ---------------------------------------------------------------------------


class SceneGraph:
    """Mutable registry of scene entities with unique names and ids.

    All mutation happens on one logical control thread; renderers work on
    immutable snapshots (see render.SceneSnapshot).
    """

    def __init__(self, background: Vec3 = (0.0, 0.0, 0.0)):
        self.background = _check_rgb(background, "background")
        self.actors: dict[str, Actor] = {}
        self.skeletons: dict[str, SkeletalActor] = {}
        self.cameras: dict[str, CameraDef] = {}
        self.lights: list[Light] = []
        self._next_id = 1
        self._by_id: dict[int, str] = {}
        self._order: list[str] = []  # registration order across all kinds

    # -- registration ---------------------------------------------------

    def _claim_name(self, name: str) -> None:
        if not _NAME_RE.match(name or ""):
            raise SceneParseError(
                f"invalid entity name {name!r}: use letters, digits, '_', '.', '-'"
            )
        if name in self._order:
            raise DuplicateNameError(f"duplicate entity name {name!r}")

    def add_actor(
        self,
        name: str,
        geometry: Geometry,
        pose: Pose6D = Pose6D(),
        material: Material = DEFAULT_MATERIAL,
        class_label: str = "object",
        movable: bool = True,
    ) -> Actor:
        self._claim_name(name)
        actor = Actor(name, self._next_id, class_label, pose, geometry, material, movable)
        self._next_id += 1
        self.actors[name] = actor
        self._by_id[actor.instance_id] = name
        self._order.append(name)
        return actor

    def add_skeleton(
        self,
        name: str,
        joints: list[SkeletalJoint],
        pose: Pose6D = Pose6D(),
        class_label: str = "skeleton",
    ) -> SkeletalActor:
        self._claim_name(name)
        sk = SkeletalActor(name, self._next_id, class_label, pose, joints)
        self._next_id += 1
        self.skeletons[name] = sk
        self._by_id[sk.instance_id] = name
        self._order.append(name)
        return sk

    def add_camera(self, camera: CameraDef) -> CameraDef:
        self._claim_name(camera.name)
        self.cameras[camera.name] = camera
        self._order.append(camera.name)
        return camera

    def add_light(self, light: Light) -> Light:
        self.lights.append(light)
        return light

    # -- lookup -----------------------------------------------------------

    def get(self, name: str) -> Actor | SkeletalActor | CameraDef:
        for table in (self.actors, self.skeletons, self.cameras):
            if name in table:
                return table[name]
        raise UnknownEntityError(f"no entity named {name!r}")

    def by_id(self, instance_id: int) -> Actor | SkeletalActor:
        try:
            name = self._by_id[instance_id]
        except KeyError:
            raise UnknownEntityError(f"no entity with instance id {instance_id}") from None
        return self.get(name)  # type: ignore[return-value]

    def maskables(self) -> list[Actor | SkeletalActor]:
        """Entities carrying instance ids, in registration order."""
        return [self.get(self._by_id[i]) for i in sorted(self._by_id)]  # type: ignore[misc]

    def entity_names(self) -> list[str]:
        return list(self._order)

    def set_pose(self, name: str, pose: Pose6D, *, require_movable: bool = False) -> None:
        ent = self.get(name)
        if require_movable and isinstance(ent, Actor) and not ent.movable:
            raise NotMovableError(f"actor {name!r} is not movable")
        ent.pose = pose

    def max_instance_id(self) -> int:
        return max(self._by_id, default=0)

    def snapshot(self):
        from .render import SceneSnapshot

        return SceneSnapshot.from_scene(self)


# ---------------------------------------------------------------------------
# Scene description file
# ---------------------------------------------------------------------------


def _ctx(path: str, msg: str) -> SceneParseError:
    return SceneParseError(f"{path}: {msg}")


def _parse_pose(obj, path: str) -> Pose6D:
    if obj is None:
        return Pose6D()
    if not isinstance(obj, dict):
        raise _ctx(path, "pose must be an object")
    try:
        return Pose6D(
            location=tuple(obj.get("loc", (0, 0, 0))),
            rotation=tuple(obj.get("rot", (0, 0, 0))),
            scale=tuple(obj.get("scale", (1, 1, 1))),
        )
    except (TypeError, ValueError) as e:
        raise _ctx(path, str(e)) from None


def _parse_geometry(obj, path: str, base_dir: Path | None) -> Geometry:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise _ctx(path, "geometry must be an object with a 'kind' field")
    kind = obj["kind"]
    try:
        if kind == "sphere":
            return Sphere(radius=float(obj["radius"]))
        if kind == "box":
            return Box(half_extents=tuple(obj["half_extents"]))
        if kind == "plane":
            return Plane(half_extents=tuple(obj["half_extents"]))
        if kind == "mesh":
            rel = obj["obj_path"]
            p = Path(rel)
            if not p.is_absolute() and base_dir is not None:
                p = base_dir / p
            return load_obj(p.read_text(encoding="utf-8"))
    except KeyError as e:
        raise _ctx(path, f"geometry kind {kind!r} is missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise _ctx(path, str(e)) from None
    except OSError as e:
        raise _ctx(path, f"cannot read mesh file: {e}") from None
    raise _ctx(path, f"unknown geometry kind {kind!r}")


def _parse_material(obj, path: str) -> Material:
    if obj is None:
        return DEFAULT_MATERIAL
    if not isinstance(obj, dict):
        raise _ctx(path, "material must be an object")
    try:
        ambient = float(obj.get("ambient", 0.1))
        if "checker" in obj:
            ch = obj["checker"]
            colors = ch["colors"]
            albedo: Vec3 | Checker = Checker(
                color_a=tuple(colors[0]), color_b=tuple(colors[1]), cell=float(ch["cell"])
            )
        else:
            albedo = tuple(obj.get("albedo", DEFAULT_MATERIAL.albedo))
        return Material(albedo=albedo, ambient=ambient)
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise _ctx(path, f"bad material: {e}") from None


def _parse_light(obj, path: str) -> Light:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise _ctx(path, "light must be an object with a 'kind' field")
    try:
        if obj["kind"] == "point":
            return PointLight(
                position=tuple(obj["position"]),
                intensity=float(obj["intensity"]),
                attenuation=float(obj.get("attenuation", 0.0)),
                casts_shadows=bool(obj.get("casts_shadows", True)),
            )
        if obj["kind"] == "directional":
            return DirectionalLight(
                direction=tuple(obj["direction"]),
                intensity=float(obj["intensity"]),
                casts_shadows=bool(obj.get("casts_shadows", True)),
            )
    except KeyError as e:
        raise _ctx(path, f"light is missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        raise _ctx(path, str(e)) from None
    raise _ctx(path, f"unknown light kind {obj['kind']!r}")


def load_scene(file_bytes: bytes | str, base_dir: Path | str | None = None) -> SceneGraph:
    """Build a SceneGraph from scene-description JSON text.

    ``base_dir`` anchors relative mesh obj_path references.  Ids are
    assigned in file order: the "actors" list first, then "skeletons".
    """
    if isinstance(file_bytes, bytes):
        file_bytes = file_bytes.decode("utf-8")
    try:
        doc = json.loads(file_bytes)
    except json.JSONDecodeError as e:
        raise SceneParseError(f"scene file is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SceneParseError("scene file top level must be a JSON object")
    base = Path(base_dir) if base_dir is not None else None

    try:
        scene = SceneGraph(background=tuple(doc.get("background", (0, 0, 0))))
    except (TypeError, ValueError) as e:
        raise SceneParseError(f"background: {e}") from None

    for i, entry in enumerate(doc.get("actors", [])):
        path = f"actors[{i}]"
        if not isinstance(entry, dict) or "name" not in entry:
            raise _ctx(path, "actor entry must be an object with a 'name'")
        scene.add_actor(
            name=entry["name"],
            geometry=_parse_geometry(entry.get("geometry"), path + ".geometry", base),
            pose=_parse_pose(entry.get("pose"), path + ".pose"),
            material=_parse_material(entry.get("material"), path + ".material"),
            class_label=str(entry.get("class", "object")),
            movable=bool(entry.get("movable", True)),
        )

    for i, entry in enumerate(doc.get("skeletons", [])):
        path = f"skeletons[{i}]"
        if not isinstance(entry, dict) or "name" not in entry:
            raise _ctx(path, "skeleton entry must be an object with a 'name'")
        joints = []
        for k, jo in enumerate(entry.get("joints", [])):
            jpath = f"{path}.joints[{k}]"
            if not isinstance(jo, dict) or "name" not in jo:
                raise _ctx(jpath, "joint must be an object with a 'name'")
            geom = None
            if jo.get("geometry") is not None:
                geom = _parse_geometry(jo["geometry"], jpath + ".geometry", base)
            joints.append(
                SkeletalJoint(
                    name=jo["name"],
                    parent=int(jo.get("parent", -1)),
                    local_pose=_parse_pose(jo.get("pose"), jpath + ".pose"),
                    geometry=geom,
                    material=_parse_material(jo.get("material"), jpath + ".material"),
                )
            )
        try:
            scene.add_skeleton(
                name=entry["name"],
                joints=joints,
                pose=_parse_pose(entry.get("pose"), path + ".pose"),
                class_label=str(entry.get("class", "skeleton")),
            )
        except ValueError as e:
            raise _ctx(path, str(e)) from None

    for i, entry in enumerate(doc.get("cameras", [])):
        path = f"cameras[{i}]"
        if not isinstance(entry, dict) or "name" not in entry:
            raise _ctx(path, "camera entry must be an object with a 'name'")
        try:
            cam = CameraDef(
                name=entry["name"],
                pose=_parse_pose(entry.get("pose"), path + ".pose"),
                horizontal_fov=float(entry.get("hfov", 90.0)),
                width=int(entry.get("width", 640)),
                height=int(entry.get("height", 480)),
                stereo_baseline=(
                    float(entry["stereo_baseline"])
                    if entry.get("stereo_baseline") is not None
                    else None
                ),
            )
        except (TypeError, ValueError) as e:
            raise _ctx(path, str(e)) from None
        scene.add_camera(cam)

    for i, entry in enumerate(doc.get("lights", [])):
        scene.add_light(_parse_light(entry, f"lights[{i}]"))

    return scene


def load_scene_file(path: Path | str) -> SceneGraph:
    p = Path(path)
    return load_scene(p.read_text(encoding="utf-8"), base_dir=p.parent)
