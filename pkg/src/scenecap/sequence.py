"""Record / rebuild / acquire: frame-by-frame pose logs and deterministic replay.

Log format is JSON Lines ("urxp-seq/1"): line 0 is the header with the
entity roster, each following line is one FrameRecord.  Floats serialize
with Python's shortest round-trip repr, so a rebuilt pose is bit-equal to
the recorded one and replayed renders match live captures byte for byte.

Timestamps are stored but never interpreted; replay is index-driven.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .capture import CaptureSet, build_frame_meta, capture_frame, write_frame_meta
from .geometry import Pose6D, pose_from_json, pose_to_json
from .scene import SceneGraph

FORMAT_VERSION = "urxp-seq/1"


class SequenceError(Exception):
    pass


class RosterMismatchError(SequenceError):
    """Log roster does not match the scene it is being replayed into."""


class MissingFrameError(SequenceError):
    pass


@dataclass
class FrameRecord:
    """One frame: recorded poses plus the symmetric overlap lists."""

    frame_index: int
    timestamp: float
    actor_poses: dict[str, Pose6D]  # movable actors, skeletal roots, cameras
    joint_poses: dict[str, list[Pose6D]]  # skeleton name -> local pose per joint
    overlaps: dict[str, list[str]]

    def to_json(self) -> dict:
        return {
            "frame": self.frame_index,
            "time": self.timestamp,
            "actors": {n: pose_to_json(p) for n, p in self.actor_poses.items()},
            "joints": {
                n: [pose_to_json(p) for p in ps] for n, ps in self.joint_poses.items()
            },
            "overlaps": self.overlaps,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FrameRecord":
        return cls(
            frame_index=int(obj["frame"]),
            timestamp=float(obj["time"]),
            actor_poses={n: pose_from_json(p) for n, p in obj["actors"].items()},
            joint_poses={
                n: [pose_from_json(p) for p in ps] for n, ps in obj["joints"].items()
            },
            overlaps={n: list(v) for n, v in obj["overlaps"].items()},
        )


@dataclass
class SequenceLog:
    """Header + ordered frame records; indices are consecutive from 0."""

    scene_ref: str = ""
    actors: list[str] = field(default_factory=list)  # movable actor roster
    skeletons: dict[str, int] = field(default_factory=dict)  # name -> joint count
    cameras: list[str] = field(default_factory=list)
    frames: list[FrameRecord] = field(default_factory=list)

    @classmethod
    def for_scene(cls, scene: SceneGraph, scene_ref: str = "") -> "SequenceLog":
        return cls(
            scene_ref=scene_ref,
            actors=[a.name for a in scene.actors.values() if a.movable],
            skeletons={sk.name: len(sk.joints) for sk in scene.skeletons.values()},
            cameras=list(scene.cameras),
        )

    def append(self, record: FrameRecord) -> None:
        if record.frame_index != len(self.frames):
            raise SequenceError(
                f"frame indices must be consecutive from 0; expected "
                f"{len(self.frames)}, got {record.frame_index}"
            )
        self.frames.append(record)

    def record(self, frame_index: int) -> FrameRecord:
        if not 0 <= frame_index < len(self.frames):
            raise MissingFrameError(
                f"frame {frame_index} not in log (0..{len(self.frames) - 1})"
            )
        return self.frames[frame_index]

    # -- serialization --------------------------------------------------

    def dumps(self) -> str:
        header = {
            "format": FORMAT_VERSION,
            "scene": self.scene_ref,
            "actors": self.actors,
            "skeletons": self.skeletons,
            "cameras": self.cameras,
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines.extend(json.dumps(f.to_json(), sort_keys=True) for f in self.frames)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SequenceLog":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise SequenceError("empty sequence log")
        header = json.loads(lines[0])
        if header.get("format") != FORMAT_VERSION:
            raise SequenceError(
                f"unsupported log format {header.get('format')!r}; "
                f"expected {FORMAT_VERSION!r}"
            )
        log = cls(
            scene_ref=header.get("scene", ""),
            actors=list(header.get("actors", [])),
            skeletons={k: int(v) for k, v in header.get("skeletons", {}).items()},
            cameras=list(header.get("cameras", [])),
        )
        for ln in lines[1:]:
            log.append(FrameRecord.from_json(json.loads(ln)))
        return log

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "SequenceLog":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Recording
# ---------------------------------------------------------------------------


def compute_overlaps(scene: SceneGraph) -> dict[str, list[str]]:
    """Pairwise world-AABB intersection over actors and skeletal actors.

    Closed intervals: touching faces count as overlap.  The relation is
    symmetric and irreflexive; every entity gets an entry.
    """
    entities = list(scene.actors.values()) + list(scene.skeletons.values())
    boxes = [e.world_aabb() for e in entities]
    out: dict[str, list[str]] = {e.name: [] for e in entities}
    for i in range(len(entities)):
        lo_i, hi_i = boxes[i]
        for j in range(i + 1, len(entities)):
            lo_j, hi_j = boxes[j]
            if bool(((lo_i <= hi_j) & (lo_j <= hi_i)).all()):
                out[entities[i].name].append(entities[j].name)
                out[entities[j].name].append(entities[i].name)
    return out


def record_frame(scene: SceneGraph, frame_index: int, timestamp: float = 0.0) -> FrameRecord:
    """Snapshot movable actor poses, camera poses, skeletal root + joint
    local poses, and the overlap lists."""
    actor_poses = {a.name: a.pose for a in scene.actors.values() if a.movable}
    for sk in scene.skeletons.values():
        actor_poses[sk.name] = sk.pose
    for cam in scene.cameras.values():
        actor_poses[cam.name] = cam.pose
    joint_poses = {
        sk.name: [j.local_pose for j in sk.joints] for sk in scene.skeletons.values()
    }
    return FrameRecord(
        frame_index=frame_index,
        timestamp=timestamp,
        actor_poses=actor_poses,
        joint_poses=joint_poses,
        overlaps=compute_overlaps(scene),
    )


# ---------------------------------------------------------------------------
# Rebuilding
# ---------------------------------------------------------------------------


def check_roster(scene: SceneGraph, log: SequenceLog) -> None:
    missing = [n for n in log.actors if n not in scene.actors]
    missing += [n for n in log.cameras if n not in scene.cameras]
    for name, njoints in log.skeletons.items():
        if name not in scene.skeletons:
            missing.append(name)
        elif len(scene.skeletons[name].joints) != njoints:
            raise RosterMismatchError(
                f"skeleton {name!r} has {len(scene.skeletons[name].joints)} joints, "
                f"log expects {njoints}"
            )
    if missing:
        raise RosterMismatchError(f"scene is missing logged entities: {missing}")


def rebuild(scene: SceneGraph, log: SequenceLog, frame_index: int) -> None:
    """Apply one recorded frame's poses to the scene, exactly.

    Static (non-recorded) actors are untouched.
    """
    check_roster(scene, log)
    rec = log.record(frame_index)
    for name, pose in rec.actor_poses.items():
        if name not in scene.actors and name not in scene.skeletons and name not in scene.cameras:
            raise RosterMismatchError(f"recorded entity {name!r} not in scene")
        scene.get(name).pose = pose
    for name, poses in rec.joint_poses.items():
        sk = scene.skeletons.get(name)
        if sk is None:
            raise RosterMismatchError(f"recorded skeleton {name!r} not in scene")
        if len(poses) != len(sk.joints):
            raise RosterMismatchError(
                f"skeleton {name!r}: {len(poses)} recorded joints vs {len(sk.joints)}"
            )
        for joint, pose in zip(sk.joints, poses):
            joint.local_pose = pose


# ---------------------------------------------------------------------------
# Acquisition
# ---------------------------------------------------------------------------


def capture_recorded_frame(
    scene: SceneGraph,
    capture_sets: list[CaptureSet],
    record: FrameRecord,
    out_dir: Path | str,
) -> None:
    """Capture one frame (already posed in ``scene``) with every capture
    set plus its sidecar; the frame appears completely or not at all."""
    out = Path(out_dir)
    snap = scene.snapshot()
    written: list[Path] = []
    try:
        for cset in capture_sets:
            for img in capture_frame(snap, cset, record.frame_index, out):
                written.append(img.path)
        meta = build_frame_meta(
            scene,
            capture_sets,
            record.frame_index,
            record.timestamp,
            overlaps=record.overlaps,
            snap=snap,
        )
        out.mkdir(parents=True, exist_ok=True)
        write_frame_meta(meta, out)
    except Exception:
        for p in written:
            if p is not None:
                Path(p).unlink(missing_ok=True)
        raise


def acquire_sequence(
    scene: SceneGraph,
    log: SequenceLog,
    capture_sets: list[CaptureSet],
    out_dir: Path | str,
    frame_range=None,
) -> int:
    """Rebuild each frame in range and capture it with every capture set.

    ``frame_range`` is an iterable of frame indices (default: the whole
    log).  Sidecars carry the frame's recorded overlap list.  Returns the
    number of frames written.
    """
    indices = list(frame_range) if frame_range is not None else range(len(log.frames))
    count = 0
    for idx in indices:
        rebuild(scene, log, idx)
        capture_recorded_frame(scene, capture_sets, log.record(idx), out_dir)
        count += 1
    return count
