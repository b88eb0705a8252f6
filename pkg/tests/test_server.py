import numpy as np
import pytest

from scenecap import Box, CameraDef, DirectionalLight, Material, Plane, Pose6D, SceneGraph, Sphere
from scenecap.imaging import PNG_SIGNATURE, decode_modality, read_pfm
from scenecap.server import start_server

from oracles import pose_matrix_oracle, transform_point
from protocol_client import ProtoClient
from scenes import arm_joints


def demo_scene():
    scene = SceneGraph(background=(0, 0, 0))
    scene.add_actor("cube1", Box((0.5, 0.5, 0.5)), Pose6D(),
                    Material(albedo=(0.6, 0.4, 0.3), ambient=0.2))
    scene.add_actor(
        "wall",
        Plane((6, 4)),
        Pose6D(location=(4, 0, 0), rotation=(90, 0, 0)),
        Material(albedo=(0.5, 0.5, 0.55), ambient=0.2),
        movable=False,
    )
    scene.add_skeleton("skel0", arm_joints(), Pose6D(location=(0, 3, 0)))
    scene.add_light(DirectionalLight(direction=(1, 0, -0.2), intensity=0.8))
    return scene


@pytest.fixture
def server():
    srv = start_server(demo_scene(), port=0)
    yield srv
    srv.shutdown()
    srv.server_close()


@pytest.fixture
def client(server):
    with ProtoClient(server.port) as c:
        yield c


def test_ping(client):
    assert client.cmd("ping") == "OK pong"


def test_lists_filter_by_kind(client):
    assert client.cmd("actor_list") == "OK 3 cube1 wall skel0"
    assert client.cmd("object_list") == "OK 2 cube1 wall"
    assert client.cmd("skeletal_list") == "OK 1 skel0"
    assert client.cmd("camera_list") == "OK 0"
    assert client.cmd("spawn_camera cam0 64 48 90") == "OK"
    assert client.cmd("camera_list") == "OK 1 cam0"
    assert client.cmd("actor_list") == "OK 4 cube1 wall skel0 cam0"


def test_move_get_round_trip(client):
    assert client.cmd("move cube1 1 2 3") == "OK"
    assert client.cmd("get_location cube1") == "OK 1 2 3"
    assert client.cmd("rotate cube1 0 90 0") == "OK"
    assert client.cmd("get_rotation cube1") == "OK 0 90 0"
    assert client.cmd("scale cube1 2 1 0.5") == "OK"
    assert client.cmd("get_scale cube1") == "OK 2 1 0.5"


def test_invalid_scale(client):
    assert client.cmd("scale cube1 0 1 1").startswith("ERR invalid_scale")


def test_non_movable(client):
    assert client.cmd("move wall 1 1 1").startswith("ERR not_movable")


def test_unknown_actor_and_bad_args(client):
    assert client.cmd("move ghost 1 2 3").startswith("ERR unknown_actor")
    assert client.cmd("move cube1 1 2 x").startswith("ERR bad_args")
    assert client.cmd("move cube1 1 2").startswith("ERR bad_args")


def test_rotate_then_bbox_matches_matrix_oracle(client):
    assert client.cmd("rotate cube1 0 90 0") == "OK"
    resp = client.cmd("get_3d_bounding_box cube1")
    nums = [float(v) for v in resp.split()[1:]]
    assert len(nums) == 27
    centroid, corners = nums[:3], np.array(nums[3:]).reshape(8, 3)
    m = pose_matrix_oracle(Pose6D(rotation=(0, 90, 0)))
    base = [
        (x, y, z)
        for x in (-0.5, 0.5)
        for y in (-0.5, 0.5)
        for z in (-0.5, 0.5)
    ]
    # corner order: bit2 -> +x, bit1 -> +y, bit0 -> +z
    want = np.array([transform_point(m, p) for p in base])
    order = [4 * ix + 2 * iy + iz for ix in (0, 1) for iy in (0, 1) for iz in (0, 1)]
    assert np.abs(corners[order] - want).max() < 1e-9
    assert np.allclose(centroid, 0, atol=1e-12)


def test_spawn_camera_duplicate_and_look_at(client):
    assert client.cmd("spawn_camera cam0 640 480 90") == "OK"
    assert client.cmd("spawn_camera cam0 640 480 90").startswith("ERR duplicate_name")
    assert client.cmd("get_location cam0") == "OK 0 0 0"
    assert client.cmd("camera_look_at cam0 1 0 0") == "OK"
    assert client.cmd("get_rotation cam0") == "OK 0 0 0"
    assert client.cmd("camera_look_at cam0 0 1 0") == "OK"
    assert client.cmd("get_rotation cam0") == "OK 0 90 0"
    # straight up is not an error: pitch 90, current yaw preserved
    assert client.cmd("camera_look_at cam0 0 0 1") == "OK"
    assert client.cmd("get_rotation cam0") == "OK 90 90 0"
    assert client.cmd("camera_look_at cam0 0 0 0").startswith("ERR invalid_target")
    assert client.cmd("camera_look_at nocam 1 0 0").startswith("ERR unknown_camera")


def test_get_rgb_header_and_signature(client):
    client.cmd("spawn_camera cam0 640 480 90")
    header, payload = client.cmd_binary("get_rgb cam0")
    parts = header.split()
    assert parts[:4] == ["OK", "png8", "640", "480"]
    assert len(payload) == int(parts[4])
    assert payload.startswith(PNG_SIGNATURE)


def test_get_depth_center_value(client):
    client.cmd("spawn_camera cam0 640 480 90")
    client.cmd("move cam0 2 0 0")
    client.cmd("camera_look_at cam0 4 0 0")
    header, payload = client.cmd_binary("get_depth cam0")
    assert header.split()[1] == "png16"
    depth = decode_modality(payload, "depth", "png16")
    assert depth[240, 320] == pytest.approx(2.0)  # 2000 mm


def test_set_format_pfm(client):
    client.cmd("spawn_camera cam0 64 48 90")
    assert client.cmd("set_format pfm") == "OK"
    header, payload = client.cmd_binary("get_depth cam0")
    assert header.split()[1] == "pfm"
    arr = read_pfm(payload)
    assert arr.shape == (48, 64)
    # instance masks stay png8 regardless
    header, _ = client.cmd_binary("get_instance_mask cam0")
    assert header.split()[1] == "png8"
    assert client.cmd("set_format png") == "OK"
    header, _ = client.cmd_binary("get_depth cam0")
    assert header.split()[1] == "png16"


def test_image_modalities_all_served(client):
    client.cmd("spawn_camera cam0 32 24 90")
    for verb in ("get_rgb", "get_albedo", "get_depth", "get_normal", "get_instance_mask"):
        header, payload = client.cmd_binary(f"{verb} cam0")
        assert header.startswith("OK "), (verb, header)
        assert len(payload) == int(header.split()[4])


def test_unknown_command_keeps_connection(client):
    assert client.cmd("warp cube1").startswith("ERR unknown_command")
    assert client.cmd("").startswith("ERR empty_command")
    assert client.cmd("ping") == "OK pong"


def test_record_and_save_log(client, tmp_path):
    out = tmp_path / "seq.jsonl"
    assert client.cmd("record_frame") == "OK 0"
    assert client.cmd("move cube1 0 0 1") == "OK"
    assert client.cmd("record_frame 0.5") == "OK 1"
    assert client.cmd(f"save_log {out}") == "OK 2"
    from scenecap.sequence import SequenceLog

    log = SequenceLog.load(out)
    assert len(log.frames) == 2
    assert log.frames[1].actor_poses["cube1"].location == (0, 0, 1)


def test_last_writer_wins_across_clients(server):
    with ProtoClient(server.port) as a, ProtoClient(server.port) as b:
        assert a.cmd("move cube1 1 0 0") == "OK"
        assert b.cmd("move cube1 2 0 0") == "OK"
        assert a.cmd("get_location cube1") == "OK 2 0 0"


def test_shutdown_command():
    srv = start_server(demo_scene(), port=0)
    with ProtoClient(srv.port) as c:
        assert c.cmd("shutdown") == "OK bye"
    srv._thread.join(timeout=10)  # type: ignore[attr-defined]
    assert not srv._thread.is_alive()  # type: ignore[attr-defined]
    srv.server_close()


SCRIPT = [
    "ping",
    "actor_list",
    "object_list",
    "skeletal_list",
    "camera_list",
    "spawn_camera cam0 64 48 90",
    "camera_list",
    "move cam0 2 0 0",
    "camera_look_at cam0 4 0 0",
    "get_location cam0",
    "get_rotation cam0",
    "move cube1 0.5 -0.25 0",
    "rotate cube1 0 30 0",
    "scale cube1 1 1 2",
    "get_location cube1",
    "get_rotation cube1",
    "get_scale cube1",
    "get_3d_bounding_box cube1",
    "get_3d_bounding_box skel0",
    "get_rgb cam0",
    "get_albedo cam0",
    "get_depth cam0",
    "get_normal cam0",
    "get_instance_mask cam0",
    "set_format pfm",
    "get_depth cam0",
    "get_rgb cam0",
    "set_format png",
    "record_frame",
    "record_frame 1.5",
    "move ghost 1 2 3",
    "scale cube1 0 0 0",
    "bogus command here",
    "ping",
]


def run_script(port) -> bytes:
    transcript = b""
    with ProtoClient(port) as c:
        for line in SCRIPT:
            if line.startswith(("get_rgb", "get_albedo", "get_depth", "get_normal", "get_instance")):
                header, payload = c.cmd_binary(line)
                transcript += header.encode() + b"\n" + payload
            else:
                transcript += c.cmd(line).encode() + b"\n"
    return transcript


def test_transcripts_byte_identical_across_runs():
    transcripts = []
    for _ in range(2):
        srv = start_server(demo_scene(), port=0)
        try:
            transcripts.append(run_script(srv.port))
        finally:
            srv.shutdown()
            srv.server_close()
    assert len(SCRIPT) >= 30
    assert transcripts[0] == transcripts[1]


def fuzz_lines(rng, n):
    verbs = {
        "ping", "actor_list", "object_list", "camera_list", "skeletal_list",
        "move", "rotate", "scale", "get_location", "get_rotation", "get_scale",
        "spawn_camera", "camera_look_at", "get_rgb", "get_depth", "get_normal",
        "get_instance_mask", "get_albedo", "get_3d_bounding_box", "set_format",
        "record_frame", "save_log", "shutdown",
    }
    alphabet = "abcdefghijklmnopqrstuvwxyz0123456789_- .!@#$%^&*()[]{}\t"
    out = []
    while len(out) < n:
        k = int(rng.integers(0, 60))
        line = "".join(rng.choice(list(alphabet)) for _ in range(k))
        line = line.replace("\n", " ").replace("\r", " ")
        first = line.split()[0] if line.split() else ""
        if first in verbs:
            continue
        out.append(line.encode())
    return out


def scene_state(client):
    return [
        client.cmd("actor_list"),
        client.cmd("get_location cube1"),
        client.cmd("get_rotation cube1"),
        client.cmd("get_scale cube1"),
        client.cmd("get_3d_bounding_box skel0"),
    ]


def test_fuzzed_lines_never_crash_or_mutate(server):
    rng = np.random.default_rng(77)
    with ProtoClient(server.port) as c:
        before = scene_state(c)
        lines = fuzz_lines(rng, 250)
        lines += [b"", b" ", b"\t", b"\x00\xff\xfe garbage", b"m" * 3000, b"move", b"move cube1"]
        for line in lines:
            c.send_raw(line + b"\n")
            resp = c.read_line()
            assert resp.startswith(b"ERR"), (line, resp)
        assert c.cmd("ping") == "OK pong"
        assert scene_state(c) == before
