"""scenecap: headless multi-modal ground-truth rendering with record/replay
and a TCP scene-control protocol."""

from .geometry import Pose6D, look_at_rotation, world_transform
from .render import (
    HitRecord,
    ImagePlane,
    Ray,
    SceneSnapshot,
    StencilBuffer,
    StencilOverflowError,
    primary_ray,
    render_frame,
    render_instance_by_override,
    render_instance_by_stencil,
    render_modality,
    render_shading,
    shade,
    trace,
)
from .scene import (
    Actor,
    Box,
    CameraDef,
    Checker,
    DirectionalLight,
    Material,
    Plane,
    PointLight,
    SceneGraph,
    SkeletalActor,
    SkeletalJoint,
    Sphere,
    TriangleMesh,
    load_obj,
    load_scene,
    load_scene_file,
    oriented_bbox_3d,
)
from .capture import CaptureSet, bbox_2d, capture_frame, class_mask, compute_shading
from .imaging import (
    EncodedImage,
    decode_id_color,
    decode_modality,
    encode_id_color,
    encode_modality,
)
from .sequence import (
    FrameRecord,
    SequenceLog,
    acquire_sequence,
    compute_overlaps,
    rebuild,
    record_frame,
)
from .server import SceneServer, serve, start_server

__version__ = "0.1.0"
