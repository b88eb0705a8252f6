import json

import numpy as np
import pytest

from scenecap.geometry import Pose6D
from scenecap.scene import (
    Box,
    CameraDef,
    DirectionalLight,
    DuplicateNameError,
    Material,
    PointLight,
    SceneGraph,
    SceneParseError,
    Sphere,
    UnknownEntityError,
    load_obj,
    load_scene,
)

TETRA_OBJ = """\
# tetrahedron
v 0 0 0
v 1 0 0
v 0 1 0
vn 0 0 1
v 0 0 1
usemtl whatever
f 1 2 3
f 1//1 2//1 4//1
f 1/1/1 3/1/1 4/1/1
f 2 3 4
"""


def scene_doc(**overrides):
    doc = {
        "background": [0, 0, 0],
        "actors": [
            {
                "name": "cube1",
                "class": "cube",
                "pose": {"loc": [1, 0, 0]},
                "geometry": {"kind": "box", "half_extents": [0.5, 0.5, 0.5]},
                "material": {"albedo": [0.5, 0.5, 0.5], "ambient": 0.1},
            },
            {
                "name": "sphere1",
                "geometry": {"kind": "sphere", "radius": 0.3},
            },
        ],
        "cameras": [{"name": "cam0", "width": 64, "height": 48, "hfov": 90}],
        "lights": [{"kind": "directional", "direction": [0, 0, -1], "intensity": 1.0}],
    }
    doc.update(overrides)
    return doc


def test_empty_scene():
    scene = load_scene(json.dumps({"actors": []}))
    assert len(scene.actors) == 0
    assert scene._next_id == 1


def test_ids_assigned_in_file_order():
    scene = load_scene(json.dumps(scene_doc()))
    assert scene.actors["cube1"].instance_id == 1
    assert scene.actors["sphere1"].instance_id == 2


def test_duplicate_name_rejected():
    doc = scene_doc()
    doc["actors"][1]["name"] = "cube1"
    with pytest.raises(DuplicateNameError):
        load_scene(json.dumps(doc))


def test_nonpositive_scale_rejected_with_context():
    doc = scene_doc()
    doc["actors"][0]["pose"] = {"scale": [0, 1, 1]}
    with pytest.raises(SceneParseError, match=r"actors\[0\].pose"):
        load_scene(json.dumps(doc))


def test_unknown_geometry_kind():
    doc = scene_doc()
    doc["actors"][0]["geometry"] = {"kind": "torus"}
    with pytest.raises(SceneParseError, match="torus"):
        load_scene(json.dumps(doc))


def test_not_json():
    with pytest.raises(SceneParseError, match="JSON"):
        load_scene(b"{nope")


def test_checker_material_parse():
    doc = scene_doc()
    doc["actors"][0]["material"] = {
        "checker": {"colors": [[0.9, 0.9, 0.9], [0.1, 0.1, 0.1]], "cell": 0.5},
        "ambient": 0.2,
    }
    scene = load_scene(json.dumps(doc))
    mat = scene.actors["cube1"].material
    assert mat.albedo.cell == 0.5
    assert mat.ambient == 0.2


def test_albedo_out_of_range_rejected():
    doc = scene_doc()
    doc["actors"][0]["material"] = {"albedo": [1.5, 0, 0]}
    with pytest.raises(SceneParseError):
        load_scene(json.dumps(doc))


def test_mesh_actor_from_obj(tmp_path):
    (tmp_path / "tetra.obj").write_text(TETRA_OBJ)
    doc = scene_doc()
    doc["actors"][0]["geometry"] = {"kind": "mesh", "obj_path": "tetra.obj"}
    scene = load_scene(json.dumps(doc), base_dir=tmp_path)
    mesh = scene.actors["cube1"].geometry
    assert mesh.vertices.shape == (4, 3)
    assert mesh.faces.shape == (4, 3)


def test_skeleton_parse_and_camera_and_lights():
    doc = scene_doc()
    doc["skeletons"] = [
        {
            "name": "skel0",
            "pose": {"loc": [0, 2, 0]},
            "joints": [
                {"name": "root", "parent": -1},
                {
                    "name": "arm",
                    "parent": 0,
                    "pose": {"loc": [0.5, 0, 0]},
                    "geometry": {"kind": "box", "half_extents": [0.25, 0.05, 0.05]},
                },
            ],
        }
    ]
    doc["lights"].append(
        {"kind": "point", "position": [1, 1, 2], "intensity": 2.0, "attenuation": 0.1}
    )
    scene = load_scene(json.dumps(doc))
    assert scene.skeletons["skel0"].instance_id == 3
    assert len(scene.skeletons["skel0"].joints) == 2
    assert scene.cameras["cam0"].width == 64
    assert len(scene.lights) == 2
    assert isinstance(scene.lights[1], PointLight)


# -- OBJ ---------------------------------------------------------------------


def test_obj_quad_face_rejected():
    with pytest.raises(SceneParseError, match="triangular"):
        load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n")


def test_obj_empty_rejected():
    with pytest.raises(SceneParseError):
        load_obj("# nothing\n")


def test_obj_bad_index():
    with pytest.raises(ValueError):
        load_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n")


# -- registry invariants -------------------------------------------------------


def test_name_id_bijection_after_interleaving():
    scene = SceneGraph()
    a = scene.add_actor("a", Sphere(1.0))
    scene.add_camera(CameraDef("cam"))
    b = scene.add_actor("b", Box((1, 1, 1)))
    sk = scene.add_skeleton("sk", [])
    for ent in (a, b, sk):
        assert scene.by_id(ent.instance_id) is ent
        assert scene.get(ent.name) is ent
    assert [e.instance_id for e in scene.maskables()] == [1, 2, 3]
    assert scene.entity_names() == ["a", "cam", "b", "sk"]


def test_duplicate_name_across_kinds_rejected():
    scene = SceneGraph()
    scene.add_actor("x", Sphere(1.0))
    with pytest.raises(DuplicateNameError):
        scene.add_camera(CameraDef("x"))


def test_unknown_lookup():
    scene = SceneGraph()
    with pytest.raises(UnknownEntityError):
        scene.get("ghost")
    with pytest.raises(UnknownEntityError):
        scene.by_id(5)


def test_invalid_entity_name_rejected():
    scene = SceneGraph()
    with pytest.raises(SceneParseError):
        scene.add_actor("has space", Sphere(1.0))


# -- entity validation ---------------------------------------------------------


def test_camera_validation():
    with pytest.raises(ValueError):
        CameraDef("c", width=0)
    with pytest.raises(ValueError):
        CameraDef("c", horizontal_fov=180)
    cam = CameraDef("c", horizontal_fov=90.0, width=640)
    assert cam.focal_px == pytest.approx(320.0)


def test_camera_axes_and_right_camera():
    cam = CameraDef("c", Pose6D(rotation=(0, 90, 0)), 90.0, 64, 48, stereo_baseline=0.2)
    fwd, right, down = cam.axes()
    assert np.allclose(fwd, (0, 1, 0), atol=1e-12)
    assert np.allclose(right, (1, 0, 0), atol=1e-12)
    assert np.allclose(down, (0, 0, -1), atol=1e-12)
    rc = cam.right_camera()
    assert rc.name == "c_R"
    assert np.allclose(rc.pose.location, (0.2, 0, 0), atol=1e-12)
    assert rc.stereo_baseline is None


def test_light_validation():
    light = DirectionalLight(direction=(0, 0, -2), intensity=1.0)
    assert np.linalg.norm(light.direction) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        DirectionalLight(direction=(0, 0, 0), intensity=1.0)
    with pytest.raises(ValueError):
        PointLight(position=(0, 0, 0), intensity=-1.0)


def test_material_validation():
    with pytest.raises(ValueError):
        Material(albedo=(0.5, 0.5, 1.2))
    with pytest.raises(ValueError):
        Material(ambient=1.5)
