"""TCP command server exposing scene inspection, transforms, cameras, and
data acquisition.

Wire format (full byte-level examples in PROTOCOL.md):

    request:   one UTF-8 line, "verb arg1 ... argN\\n"
    response:  "OK ...\\n" or "ERR <code> <message>\\n"
    images:    "OK <format> <width> <height> <nbytes>\\n" + exactly nbytes

Every request gets exactly one response, in request order per connection.
Commands from all connections are serialized through a single lock, so
scene-mutating commands form one total order (last writer wins) and every
render observes a consistent scene.  Malformed input never terminates the
connection or touches the scene.
"""

from __future__ import annotations

import socketserver
import threading
from pathlib import Path

import numpy as np

from .geometry import Pose6D, look_at_rotation
from .imaging import DEFAULT_FORMATS, encode_modality
from .render import StencilOverflowError, render_instance_by_override, render_modality
from .scene import (
    Actor,
    CameraDef,
    DuplicateNameError,
    NotMovableError,
    SceneGraph,
    SkeletalActor,
    UnknownEntityError,
    oriented_bbox_3d,
)
from .sequence import SequenceLog, record_frame

DEFAULT_PORT = 7777
_MAX_LINE = 65536

_IMAGE_VERBS = {
    "get_rgb": "rgb",
    "get_depth": "depth",
    "get_normal": "normal",
    "get_instance_mask": "instance",
    "get_albedo": "albedo",
}


class CommandError(Exception):
    """Carries a machine-readable code plus a human message."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def fmt_num(v: float) -> str:
    """Canonical number text: integral floats print bare, others use the
    shortest round-trip repr.  Keeps transcripts byte-stable."""
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def _floats(args: list[str], n: int) -> list[float]:
    if len(args) != n:
        raise CommandError("bad_args", f"expected {n} numeric arguments")
    try:
        return [float(a) for a in args]
    except ValueError:
        raise CommandError("bad_args", f"non-numeric argument in {args}") from None


class _Session:
    """Per-connection state: image format preference."""

    def __init__(self):
        self.use_pfm = False

    def format_for(self, modality: str) -> str:
        # instance masks stay png8: the id codec is 8-bit by definition
        if self.use_pfm and modality not in ("instance", "class"):
            return "pfm"
        return DEFAULT_FORMATS[modality]


class SceneServer(socketserver.ThreadingTCPServer):
    """Scene-control server; all command execution is serialized."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, scene: SceneGraph, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
        super().__init__((host, port), _Handler)
        self.scene = scene
        self.lock = threading.Lock()
        self.log = SequenceLog.for_scene(scene)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def request_shutdown(self) -> None:
        threading.Thread(target=self.shutdown, daemon=True).start()

    # -- command implementations (called with the lock held) -----------

    def execute(self, verb: str, args: list[str], session: _Session):
        """Returns response text (without OK prefix) or a binary tuple
        (format, width, height, payload)."""
        scene = self.scene

        if verb == "ping":
            return "pong"

        if verb in ("actor_list", "object_list", "camera_list", "skeletal_list"):
            if args:
                raise CommandError("bad_args", f"{verb} takes no arguments")
            if verb == "actor_list":
                names = scene.entity_names()
            elif verb == "object_list":
                names = list(scene.actors)
            elif verb == "camera_list":
                names = list(scene.cameras)
            else:
                names = list(scene.skeletons)
            return " ".join([str(len(names))] + names)

        if verb in ("move", "rotate", "scale"):
            if not args:
                raise CommandError("bad_args", f"{verb} needs: name x y z")
            name, vals = args[0], _floats(args[1:], 3)
            ent = self._entity(name)
            if isinstance(ent, Actor) and not ent.movable:
                raise CommandError("not_movable", f"actor {name!r} is not movable")
            pose = ent.pose
            try:
                if verb == "move":
                    ent.pose = Pose6D(tuple(vals), pose.rotation, pose.scale)
                elif verb == "rotate":
                    ent.pose = Pose6D(pose.location, tuple(vals), pose.scale)
                else:
                    ent.pose = Pose6D(pose.location, pose.rotation, tuple(vals))
            except ValueError as e:
                raise CommandError("invalid_scale" if verb == "scale" else "bad_args", str(e)) from None
            return ""

        if verb in ("get_location", "get_rotation", "get_scale"):
            if len(args) != 1:
                raise CommandError("bad_args", f"{verb} needs: name")
            ent = self._entity(args[0])
            vec = {
                "get_location": ent.pose.location,
                "get_rotation": ent.pose.rotation,
                "get_scale": ent.pose.scale,
            }[verb]
            return " ".join(fmt_num(v) for v in vec)

        if verb == "spawn_camera":
            if len(args) != 4:
                raise CommandError("bad_args", "spawn_camera needs: name width height hfov")
            name = args[0]
            try:
                w, h = int(args[1]), int(args[2])
                hfov = float(args[3])
            except ValueError:
                raise CommandError("bad_args", "width/height must be int, hfov numeric") from None
            try:
                scene.add_camera(CameraDef(name=name, width=w, height=h, horizontal_fov=hfov))
            except DuplicateNameError as e:
                raise CommandError("duplicate_name", str(e)) from None
            except ValueError as e:
                raise CommandError("bad_args", str(e)) from None
            return ""

        if verb == "camera_look_at":
            if len(args) != 4:
                raise CommandError("bad_args", "camera_look_at needs: name x y z")
            cam = scene.cameras.get(args[0])
            if cam is None:
                raise CommandError("unknown_camera", f"no camera named {args[0]!r}")
            target = _floats(args[1:], 3)
            try:
                cam.pose = Pose6D(
                    cam.pose.location,
                    look_at_rotation(cam.pose.location, target, current_yaw=cam.pose.rotation[1]),
                    cam.pose.scale,
                )
            except ValueError as e:
                raise CommandError("invalid_target", str(e)) from None
            return ""

        if verb in _IMAGE_VERBS:
            if len(args) != 1:
                raise CommandError("bad_args", f"{verb} needs: camera")
            cam = scene.cameras.get(args[0])
            if cam is None:
                raise CommandError("unknown_camera", f"no camera named {args[0]!r}")
            modality = _IMAGE_VERBS[verb]
            fmt = session.format_for(modality)
            try:
                snap = scene.snapshot()
                if modality == "instance":
                    plane = render_instance_by_override(snap, cam)
                else:
                    plane = render_modality(snap, cam, modality)
                img = encode_modality(plane, fmt)
            except StencilOverflowError as e:
                raise CommandError("render_error", str(e)) from None
            return (img.format, img.width, img.height, img.payload)

        if verb == "get_3d_bounding_box":
            if len(args) != 1:
                raise CommandError("bad_args", "get_3d_bounding_box needs: actor")
            ent = self._entity(args[0])
            if not isinstance(ent, (Actor, SkeletalActor)):
                raise CommandError("unknown_actor", f"{args[0]!r} has no geometry bounds")
            corners, centroid = oriented_bbox_3d(ent)
            nums = list(centroid) + list(np.asarray(corners).reshape(-1))
            return " ".join(fmt_num(v) for v in nums)

        if verb == "set_format":
            if len(args) != 1 or args[0] not in ("png", "pfm"):
                raise CommandError("bad_args", "set_format needs: png | pfm")
            session.use_pfm = args[0] == "pfm"
            return ""

        if verb == "record_frame":
            if len(args) > 1:
                raise CommandError("bad_args", "record_frame takes at most: timestamp")
            idx = len(self.log.frames)
            ts = _floats(args, 1)[0] if args else float(idx)
            self.log.append(record_frame(scene, idx, ts))
            return str(idx)

        if verb == "save_log":
            if len(args) != 1:
                raise CommandError("bad_args", "save_log needs: path")
            try:
                self.log.save(Path(args[0]))
            except OSError as e:
                raise CommandError("io_error", str(e)) from None
            return str(len(self.log.frames))

        if verb == "shutdown":
            if args:
                raise CommandError("bad_args", "shutdown takes no arguments")
            self.request_shutdown()
            return "bye"

        raise CommandError("unknown_command", f"unknown command {verb!r}")

    def _entity(self, name: str):
        try:
            return self.scene.get(name)
        except UnknownEntityError as e:
            raise CommandError("unknown_actor", str(e)) from None


class _Handler(socketserver.StreamRequestHandler):
    server: SceneServer

    def handle(self):
        session = _Session()
        while True:
            try:
                raw = self.rfile.readline(_MAX_LINE + 1)
            except OSError:
                return
            if not raw:
                return
            if len(raw) > _MAX_LINE and not raw.endswith(b"\n"):
                self._drain()
                self._send_err("line_too_long", f"request exceeds {_MAX_LINE} bytes")
                continue
            line = raw.decode("utf-8", errors="replace").strip("\r\n")
            tokens = line.split()
            if not tokens:
                self._send_err("empty_command", "empty request line")
                continue
            verb, args = tokens[0], tokens[1:]
            try:
                with self.server.lock:
                    result = self.server.execute(verb, args, session)
            except CommandError as e:
                self._send_err(e.code, str(e))
                continue
            except NotMovableError as e:
                self._send_err("not_movable", str(e))
                continue
            except Exception as e:  # command bug: report, never kill the connection
                self._send_err("internal_error", f"{type(e).__name__}: {e}")
                continue
            try:
                if isinstance(result, tuple):
                    fmt, w, h, payload = result
                    header = f"OK {fmt} {w} {h} {len(payload)}\n".encode()
                    self.wfile.write(header + payload)
                else:
                    text = ("OK " + result).rstrip()
                    self.wfile.write((text + "\n").encode())
                self.wfile.flush()
            except OSError:
                return

    def _drain(self):
        while True:
            chunk = self.rfile.readline(_MAX_LINE)
            if not chunk or chunk.endswith(b"\n"):
                return

    def _send_err(self, code: str, message: str):
        msg = " ".join(message.split())  # single line, collapsed whitespace
        try:
            self.wfile.write(f"ERR {code} {msg}\n".encode())
            self.wfile.flush()
        except OSError:
            pass


def start_server(scene: SceneGraph, host: str = "127.0.0.1", port: int = DEFAULT_PORT):
    """Bind and serve on a background thread; returns the server object
    (its .port reflects an OS-assigned port when 0 was requested)."""
    server = SceneServer(scene, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server._thread = thread  # type: ignore[attr-defined]
    return server


def serve(scene: SceneGraph, host: str = "127.0.0.1", port: int = DEFAULT_PORT) -> None:
    """Serve until a shutdown command arrives (blocking)."""
    with SceneServer(scene, host, port) as server:
        print(f"scenecap server listening on {host}:{server.port}", flush=True)
        server.serve_forever()
