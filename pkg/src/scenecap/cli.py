"""Operator entry point: batch generation, sequence replay, server launch.

    scenecap generate --scene scene.json --out out/ [--config job.json] ...
    scenecap replay   --scene scene.json --log seq.jsonl --out out/
    scenecap serve    --scene scene.json [--port 7777]

Job configs are JSON; every setting has a flag override.  Scripted motion
replaces by-hand capture: keyframe interpolation, camera turntables, and
seeded random walks, all recorded to a sequence log so a replay reproduces
the run bit for bit.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .capture import DEFAULT_EPSILON, CaptureSet
from .geometry import Pose6D, look_at_rotation, normalize_angle
from .scene import SceneError, SceneGraph, load_scene_file
from .sequence import (
    SequenceError,
    SequenceLog,
    acquire_sequence,
    capture_recorded_frame,
    record_frame,
)
from .server import DEFAULT_PORT, serve

DEFAULT_MODALITIES = ("rgb", "depth", "instance")


class ConfigError(Exception):
    pass


@dataclass
class JobConfig:
    scene_path: Path
    out_dir: Path | None = None
    frames: int = 1
    epsilon: float = DEFAULT_EPSILON
    seed: int = 0
    fps: float | None = None  # when set, timestamps are frame/fps seconds
    captures: list[dict] = field(default_factory=list)
    motion: dict | None = None
    port: int = DEFAULT_PORT

    @classmethod
    def build(cls, args: argparse.Namespace) -> "JobConfig":
        doc: dict = {}
        if getattr(args, "config", None):
            try:
                doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise ConfigError(f"cannot read config {args.config}: {e}") from None
        scene = getattr(args, "scene", None) or doc.get("scene")
        if not scene:
            raise ConfigError("a scene file is required (--scene or config 'scene')")
        out = getattr(args, "out", None) or doc.get("out")
        cfg = cls(
            scene_path=Path(scene),
            out_dir=Path(out) if out else None,
            frames=first_of(getattr(args, "frames", None), doc.get("frames"), 1),
            epsilon=first_of(getattr(args, "epsilon", None), doc.get("epsilon"), DEFAULT_EPSILON),
            seed=first_of(getattr(args, "seed", None), doc.get("seed"), 0),
            fps=doc.get("fps"),
            captures=list(doc.get("captures", [])),
            motion=doc.get("motion"),
            port=first_of(getattr(args, "port", None), doc.get("port"), DEFAULT_PORT),
        )
        if getattr(args, "modalities", None):
            mods = tuple(m.strip() for m in args.modalities.split(",") if m.strip())
            for c in cfg.captures:
                c["modalities"] = list(mods)
            cfg._cli_modalities = mods  # type: ignore[attr-defined]
        if getattr(args, "format", None):
            cfg._cli_format = args.format  # type: ignore[attr-defined]
        return cfg

    def capture_sets(self, scene: SceneGraph) -> list[CaptureSet]:
        entries = self.captures
        if not entries:
            mods = getattr(self, "_cli_modalities", DEFAULT_MODALITIES)
            entries = [{"camera": name, "modalities": list(mods)} for name in scene.cameras]
        if not entries:
            raise ConfigError("scene has no cameras and no captures are configured")
        sets = []
        for c in entries:
            name = c.get("camera")
            if name not in scene.cameras:
                raise ConfigError(f"capture references unknown camera {name!r}")
            formats = dict(c.get("formats", {}))
            if getattr(self, "_cli_format", None) == "pfm":
                for m in c.get("modalities", DEFAULT_MODALITIES):
                    if m not in ("instance", "class"):
                        formats.setdefault(m, "pfm")
            sets.append(
                CaptureSet(
                    camera=scene.cameras[name],
                    modalities=tuple(c.get("modalities", DEFAULT_MODALITIES)),
                    formats=formats,
                    epsilon=self.epsilon,
                )
            )
        return sets

    def timestamp(self, frame: int) -> float:
        return frame / self.fps if self.fps else float(frame)


def first_of(*values):
    for v in values:
        if v is not None:
            return v
    return None


# ---------------------------------------------------------------------------
# Scripted motion
# ---------------------------------------------------------------------------


def _lerp(a, b, t):
    return tuple(x + (y - x) * t for x, y in zip(a, b))


def _lerp_pose(a: Pose6D, b: Pose6D, t: float) -> Pose6D:
    # angles interpolate along the shortest arc
    rot = tuple(
        normalize_angle(x + normalize_angle(y - x) * t)
        for x, y in zip(a.rotation, b.rotation)
    )
    return Pose6D(_lerp(a.location, b.location, t), rot, _lerp(a.scale, b.scale, t))


class Motion:
    def apply(self, scene: SceneGraph, frame: int) -> None:  # pragma: no cover
        raise NotImplementedError


class StaticMotion(Motion):
    def apply(self, scene, frame):
        pass


class Turntable(Motion):
    """Orbit a camera around a target: N poses equidistant in yaw."""

    def __init__(self, camera: str, target, radius: float, frames: int,
                 height: float = 0.0, start_deg: float = 0.0):
        if frames < 1:
            raise ConfigError("turntable needs frames >= 1")
        self.camera = camera
        self.target = tuple(float(v) for v in target)
        self.radius = float(radius)
        self.frames = frames
        self.height = float(height)
        self.start_deg = float(start_deg)

    def apply(self, scene, frame):
        cam = scene.cameras.get(self.camera)
        if cam is None:
            raise ConfigError(f"turntable references unknown camera {self.camera!r}")
        theta = np.radians(self.start_deg + 360.0 * frame / self.frames)
        loc = (
            self.target[0] + self.radius * float(np.cos(theta)),
            self.target[1] + self.radius * float(np.sin(theta)),
            self.target[2] + self.height,
        )
        cam.pose = Pose6D(loc, look_at_rotation(loc, self.target), cam.pose.scale)


class Keyframes(Motion):
    """Linear interpolation between keyed poses, per track.

    A track targets an actor/camera by name, or one skeleton joint via
    {"skeleton": s, "joint": j}.
    """

    def __init__(self, tracks: list[dict]):
        self.tracks = []
        for tr in tracks:
            keys = sorted(tr.get("keys", []), key=lambda k: k["frame"])
            if not keys:
                raise ConfigError("keyframe track has no keys")
            parsed = [(int(k["frame"]), _pose_from_cfg(k["pose"])) for k in keys]
            self.tracks.append((tr, parsed))

    def apply(self, scene, frame):
        for tr, keys in self.tracks:
            pose = self._sample(keys, frame)
            if "skeleton" in tr:
                sk = scene.skeletons.get(tr["skeleton"])
                if sk is None:
                    raise ConfigError(f"unknown skeleton {tr['skeleton']!r}")
                joint = next((j for j in sk.joints if j.name == tr.get("joint")), None)
                if joint is None:
                    raise ConfigError(
                        f"skeleton {tr['skeleton']!r} has no joint {tr.get('joint')!r}"
                    )
                joint.local_pose = pose
            else:
                name = tr.get("actor") or tr.get("camera")
                if name is None:
                    raise ConfigError("keyframe track needs actor/camera/skeleton")
                scene.set_pose(name, pose, require_movable=True)

    @staticmethod
    def _sample(keys, frame):
        if frame <= keys[0][0]:
            return keys[0][1]
        if frame >= keys[-1][0]:
            return keys[-1][1]
        for (f0, p0), (f1, p1) in zip(keys, keys[1:]):
            if f0 <= frame <= f1:
                t = 0.0 if f1 == f0 else (frame - f0) / (f1 - f0)
                return _lerp_pose(p0, p1, t)
        return keys[-1][1]


class RandomWalk(Motion):
    """Seeded uniform jitter inside a box; optional constant look-at.

    Draws are consumed in frame order, and the resulting poses land in the
    sequence log, so replays never re-run the generator.
    """

    def __init__(self, name: str, center, extent, seed: int, look_at=None):
        self.name = name
        self.center = np.asarray(center, dtype=float)
        self.extent = np.asarray(extent, dtype=float)
        self.rng = np.random.default_rng(seed)
        self.look_at = tuple(look_at) if look_at is not None else None

    def apply(self, scene, frame):
        loc = tuple(self.center + self.rng.uniform(-self.extent, self.extent))
        ent = scene.get(self.name)
        rot = ent.pose.rotation
        if self.look_at is not None:
            rot = look_at_rotation(loc, self.look_at, current_yaw=rot[1])
        scene.set_pose(self.name, Pose6D(loc, rot, ent.pose.scale), require_movable=True)


def _pose_from_cfg(obj: dict) -> Pose6D:
    return Pose6D(
        location=tuple(obj.get("loc", (0, 0, 0))),
        rotation=tuple(obj.get("rot", (0, 0, 0))),
        scale=tuple(obj.get("scale", (1, 1, 1))),
    )


def motion_from_config(cfg: JobConfig) -> Motion:
    m = cfg.motion
    if not m or m.get("kind") in (None, "static"):
        return StaticMotion()
    kind = m.get("kind")
    try:
        if kind == "turntable":
            return Turntable(
                camera=m["camera"],
                target=m.get("target", (0, 0, 0)),
                radius=float(m.get("radius", 2.0)),
                frames=int(m.get("frames", cfg.frames)),
                height=float(m.get("height", 0.0)),
                start_deg=float(m.get("start_deg", 0.0)),
            )
        if kind == "keyframes":
            return Keyframes(m.get("tracks", []))
        if kind == "random_walk":
            return RandomWalk(
                name=m["name"],
                center=m.get("center", (0, 0, 0)),
                extent=m.get("extent", (1, 1, 1)),
                seed=int(m.get("seed", cfg.seed)),
                look_at=m.get("look_at"),
            )
    except KeyError as e:
        raise ConfigError(f"motion {kind!r} is missing field {e.args[0]!r}") from None
    raise ConfigError(f"unknown motion kind {kind!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(cfg: JobConfig) -> int:
    if cfg.out_dir is None:
        raise ConfigError("generate needs an output directory (--out)")
    scene = load_scene_file(cfg.scene_path)
    capture_sets = cfg.capture_sets(scene)
    motion = motion_from_config(cfg)
    log = SequenceLog.for_scene(scene, scene_ref=cfg.scene_path.name)
    for i in range(cfg.frames):
        motion.apply(scene, i)
        rec = record_frame(scene, i, cfg.timestamp(i))
        log.append(rec)
        capture_recorded_frame(scene, capture_sets, rec, cfg.out_dir)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    log.save(cfg.out_dir / "sequence.jsonl")
    print(f"generated {cfg.frames} frame(s) into {cfg.out_dir}")
    return 0


def cmd_replay(cfg: JobConfig, log_path: Path) -> int:
    if cfg.out_dir is None:
        raise ConfigError("replay needs an output directory (--out)")
    scene = load_scene_file(cfg.scene_path)
    log = SequenceLog.load(log_path)
    capture_sets = cfg.capture_sets(scene)
    n = acquire_sequence(scene, log, capture_sets, cfg.out_dir)
    print(f"replayed {n} frame(s) into {cfg.out_dir}")
    return 0


def cmd_serve(cfg: JobConfig, host: str) -> int:
    scene = load_scene_file(cfg.scene_path)  # fail before binding
    serve(scene, host=host, port=cfg.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scenecap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scene", help="scene description JSON")
        sp.add_argument("--config", help="job config JSON")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--modalities", help="comma-separated capture modalities")
        sp.add_argument("--format", choices=("png", "pfm"), help="file format family")
        sp.add_argument("--epsilon", type=float, help="shading recovery epsilon")
        sp.add_argument("--seed", type=int, help="seed for random motion")

    g = sub.add_parser("generate", help="run scripted motion, record + capture")
    common(g)
    g.add_argument("--frames", type=int, help="number of frames")

    r = sub.add_parser("replay", help="rebuild a sequence log and capture it")
    common(r)
    r.add_argument("--log", required=True, help="sequence log (JSON Lines)")

    s = sub.add_parser("serve", help="run the scene-control TCP server")
    s.add_argument("--scene", required=True)
    s.add_argument("--config", help="job config JSON")
    s.add_argument("--port", type=int, help=f"TCP port (default {DEFAULT_PORT}, 0 = ephemeral)")
    s.add_argument("--host", default="127.0.0.1")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = JobConfig.build(args)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "replay":
            return cmd_replay(cfg, Path(args.log))
        if args.command == "serve":
            return cmd_serve(cfg, args.host)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, SceneError, SequenceError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
