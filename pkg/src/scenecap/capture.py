"""Per-camera capture sets: render enabled modalities, encode, write files.

Output layout under a capture root:

    <camera>/<modality>/<frame:06d>.<ext>     (right stereo eye: <camera>_R/...)
    <frame:06d>.meta.json                     (one sidecar per frame)

A frame either appears completely or not at all: every image is encoded in
memory first, and files already written are removed if a later write of
the same frame fails.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import pose_to_json
from .imaging import (
    DEFAULT_FORMATS,
    FORMAT_EXT,
    EncodedImage,
    check_format,
    encode_id_color,
    encode_modality,
)
from .render import ImagePlane, SceneSnapshot, render_frame, render_instance_by_override
from .scene import CameraDef, SceneGraph, oriented_bbox_3d

CAPTURE_MODALITIES = ("rgb", "albedo", "shading", "depth", "normal", "instance", "class")

DEFAULT_EPSILON = 1e-4


class UnmappedIdError(ValueError):
    """Instance id visible in a mask has no class label mapping."""


@dataclass
class CaptureSet:
    """Bundle of per-modality renderers attached to one camera."""

    camera: CameraDef
    modalities: tuple[str, ...]
    formats: dict[str, str] = field(default_factory=dict)
    epsilon: float = DEFAULT_EPSILON  # shading recovery divisor guard
    out_dir: Path | None = None

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        for m in self.modalities:
            if m not in CAPTURE_MODALITIES:
                raise ValueError(f"unknown capture modality {m!r}")
        fmts = dict(DEFAULT_FORMATS)
        fmts.update(self.formats)
        for m in self.modalities:
            check_format(m, fmts[m])
        self.formats = fmts
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")

    def render_passes(self) -> tuple[str, ...]:
        """Renderer modalities needed to produce the enabled set: shading
        needs rgb+albedo, class needs instance."""
        need = set()
        for m in self.modalities:
            if m == "shading":
                need.update(("rgb", "albedo"))
            elif m == "class":
                need.add("instance")
            else:
                need.add(m)
        return tuple(m for m in ("rgb", "albedo", "depth", "normal", "instance") if m in need)


# ---------------------------------------------------------------------------
# Post-processing operations
# ---------------------------------------------------------------------------


def compute_shading(rgb: ImagePlane, albedo: ImagePlane, epsilon: float = DEFAULT_EPSILON) -> ImagePlane:
    """Recover the grayscale shading map: per-channel rgb / (albedo + eps),
    averaged to a scalar (lights are white)."""
    if (rgb.width, rgb.height) != (albedo.width, albedo.height):
        raise ValueError(
            f"dimension mismatch: rgb {rgb.width}x{rgb.height} vs "
            f"albedo {albedo.width}x{albedo.height}"
        )
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    i = rgb.values.astype(np.float64)
    r = albedo.values.astype(np.float64)
    s = (i / (r + epsilon)).mean(axis=-1)
    return ImagePlane(rgb.width, rgb.height, "shading", s.astype(np.float32))


def bbox_2d(instance: ImagePlane, instance_id: int) -> tuple[int, int, int, int] | None:
    """Tight pixel-inclusive (xmin, ymin, xmax, ymax) of an id, or None."""
    ys, xs = np.nonzero(instance.values == instance_id)
    if xs.size == 0:
        return None
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def default_class_colors(id_labels: dict[int, str]) -> dict[str, tuple[int, int, int]]:
    """Deterministic class color table: sorted labels, id-color sequence."""
    return {
        label: encode_id_color(i + 1)
        for i, label in enumerate(sorted(set(id_labels.values())))
    }


def class_mask(
    instance: ImagePlane,
    id_labels: dict[int, str],
    class_colors: dict[str, tuple[int, int, int]],
) -> ImagePlane:
    """Relabel an instance mask by semantic class; background stays 0."""
    ids = instance.values
    out = np.zeros(ids.shape + (3,), dtype=np.uint8)
    for vid in np.unique(ids):
        if vid == 0:
            continue
        if int(vid) not in id_labels:
            raise UnmappedIdError(f"instance id {int(vid)} has no class label")
        label = id_labels[int(vid)]
        if label not in class_colors:
            raise UnmappedIdError(f"class label {label!r} has no color")
        out[ids == vid] = class_colors[label]
    return ImagePlane(instance.width, instance.height, "class", out)


# ---------------------------------------------------------------------------
# Frame capture
# ---------------------------------------------------------------------------


def _cameras_of(cset: CaptureSet) -> list[CameraDef]:
    cams = [cset.camera]
    if cset.camera.stereo_baseline is not None:
        cams.append(cset.camera.right_camera())
    return cams


def render_capture_planes(
    snap: SceneSnapshot, cset: CaptureSet, cam: CameraDef
) -> dict[str, ImagePlane]:
    """All enabled modalities for one eye, from a single visibility pass."""
    planes = render_frame(snap, cam, cset.render_passes())
    out: dict[str, ImagePlane] = {}
    for m in cset.modalities:
        if m == "shading":
            out[m] = compute_shading(planes["rgb"], planes["albedo"], cset.epsilon)
        elif m == "class":
            out[m] = class_mask(
                planes["instance"], snap.id_labels, default_class_colors(snap.id_labels)
            )
        else:
            out[m] = planes[m]
    return out


def capture_frame(
    snap: SceneSnapshot,
    cset: CaptureSet,
    frame_index: int,
    out_dir: Path | str | None = None,
) -> list[EncodedImage]:
    """Render, encode, and write every enabled modality for one frame.

    With a stereo baseline set, all modalities repeat from the right eye
    under <camera>_R/.  Returns the encoded images in write order.
    """
    root = Path(out_dir) if out_dir is not None else cset.out_dir
    if root is None:
        raise ValueError("capture_frame needs an output directory")

    encoded: list[tuple[Path, EncodedImage]] = []
    for cam in _cameras_of(cset):
        planes = render_capture_planes(snap, cset, cam)
        for m in cset.modalities:
            fmt = cset.formats[m]
            img = encode_modality(planes[m], fmt)
            rel = Path(cam.name) / m / f"{frame_index:06d}.{FORMAT_EXT[fmt]}"
            encoded.append((root / rel, img))

    written: list[Path] = []
    try:
        for path, img in encoded:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_bytes(img.payload)
            written.append(path)
            img.path = path
    except OSError:
        for p in written:  # drop the partial frame
            p.unlink(missing_ok=True)
        raise
    return [img for _, img in encoded]


# ---------------------------------------------------------------------------
# Frame sidecar
# ---------------------------------------------------------------------------


def build_frame_meta(
    scene: SceneGraph,
    capture_sets: list[CaptureSet],
    frame_index: int,
    timestamp: float = 0.0,
    overlaps: dict[str, list[str]] | None = None,
    snap: SceneSnapshot | None = None,
) -> dict:
    """Per-frame ground-truth sidecar: camera poses, per-actor 6D pose and
    3D bbox, world-space joint poses, and the visible-id table per eye."""
    if snap is None:
        snap = scene.snapshot()
    cameras = {}
    visible: dict[str, list[int]] = {}
    for cset in capture_sets:
        for cam in _cameras_of(cset):
            cameras[cam.name] = {
                "pose": pose_to_json(cam.pose),
                "width": cam.width,
                "height": cam.height,
                "hfov": cam.horizontal_fov,
                "stereo_baseline": cam.stereo_baseline,
            }
            ids = render_instance_by_override(snap, cam).values
            visible[cam.name] = sorted(int(v) for v in np.unique(ids) if v != 0)

    actors = {}
    for a in scene.actors.values():
        corners, centroid = oriented_bbox_3d(a)
        actors[a.name] = {
            "instance_id": a.instance_id,
            "class": a.class_label,
            "movable": a.movable,
            "pose": pose_to_json(a.pose),
            "bbox_3d": {"centroid": centroid.tolist(), "corners": corners.tolist()},
        }

    skeletons = {}
    for sk in scene.skeletons.values():
        corners, centroid = oriented_bbox_3d(sk)
        skeletons[sk.name] = {
            "instance_id": sk.instance_id,
            "class": sk.class_label,
            "pose": pose_to_json(sk.pose),
            "bbox_3d": {"centroid": centroid.tolist(), "corners": corners.tolist()},
            "joints": [
                {"name": jn, "pose": pose_to_json(wp)}
                for jn, wp in sk.joint_world_poses()
            ],
        }

    return {
        "frame": frame_index,
        "timestamp": timestamp,
        "cameras": cameras,
        "actors": actors,
        "skeletons": skeletons,
        "visible_ids": visible,
        "overlaps": overlaps if overlaps is not None else {},
    }


def write_frame_meta(meta: dict, out_dir: Path | str) -> Path:
    path = Path(out_dir) / f"{meta['frame']:06d}.meta.json"
    path.write_text(json.dumps(meta, sort_keys=True) + "\n", encoding="utf-8")
    return path
