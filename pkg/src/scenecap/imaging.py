"""Encoding of image planes to file bytes: PNG (8/16-bit) and PFM.

Everything is linear-space by contract; PNGs carry no gamma chunk and id
mask colors are written verbatim (the gamma-1 rule).  8-bit quantization
rounds half up so golden files are bit-reproducible.  Depth PNGs store
millimeters in 16 bits with a 65.535 m ceiling; PFM stores raw float32
(little-endian, scale -1.0, bottom-up rows).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

DEPTH_MM_CEILING_M = 65.535

# format tag -> file extension
FORMAT_EXT = {"png8": "png", "png16": "png", "pfm": "pfm"}

# modality -> formats it may be encoded to
MODALITY_FORMATS = {
    "rgb": ("png8", "pfm"),
    "albedo": ("png8", "pfm"),
    "shading": ("png8", "pfm"),
    "depth": ("png16", "pfm"),
    "normal": ("png8", "pfm"),
    "instance": ("png8",),
    "class": ("png8",),
}

DEFAULT_FORMATS = {
    "rgb": "png8",
    "albedo": "png8",
    "shading": "png8",
    "depth": "png16",
    "normal": "png8",
    "instance": "png8",
    "class": "png8",
}


class InvalidFormatError(ValueError):
    """Modality/format pairing is not supported."""


class IdOverflowError(ValueError):
    """Instance id does not fit the 24-bit color encoding."""


@dataclass
class EncodedImage:
    modality: str
    format: str  # png8 | png16 | pfm
    width: int
    height: int
    payload: bytes
    path: object | None = None  # Path once written to disk


# ---------------------------------------------------------------------------
# Instance-id color codec
# ---------------------------------------------------------------------------


def encode_id_color(instance_id: int) -> tuple[int, int, int]:
    """Distinct 8-bit RGB color for an id; bijective below 2^24."""
    if not 0 <= instance_id < 2**24:
        raise IdOverflowError(f"instance id {instance_id} outside [0, 2^24)")
    return (instance_id % 256, (instance_id // 256) % 256, (instance_id // 65536) % 256)


def decode_id_color(rgb) -> int:
    r, g, b = (int(c) for c in rgb)
    return r + 256 * g + 65536 * b


def encode_id_colors(ids: np.ndarray) -> np.ndarray:
    """Vectorized id -> color; input any shape, output shape + (3,) uint8."""
    a = np.asarray(ids)
    if a.size and (a.min() < 0 or a.max() >= 2**24):
        raise IdOverflowError("instance id outside [0, 2^24)")
    out = np.empty(a.shape + (3,), dtype=np.uint8)
    out[..., 0] = a % 256
    out[..., 1] = (a // 256) % 256
    out[..., 2] = (a // 65536) % 256
    return out


def decode_id_colors(colors: np.ndarray) -> np.ndarray:
    c = np.asarray(colors).astype(np.int64)
    return c[..., 0] + 256 * c[..., 1] + 65536 * c[..., 2]


# ---------------------------------------------------------------------------
# Quantization helpers
# ---------------------------------------------------------------------------


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5)


def _to_u8(v: np.ndarray) -> np.ndarray:
    """Clamp linear [0,1] floats and quantize to 8 bits, half up."""
    return _round_half_up(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)


# ---------------------------------------------------------------------------
# PNG / PFM containers
# ---------------------------------------------------------------------------


def write_png(arr: np.ndarray) -> bytes:
    """uint8 (H,W,3) or (H,W), or uint16 (H,W), to PNG bytes (no gamma chunk)."""
    if arr.dtype == np.uint8:
        img = Image.fromarray(arr, "RGB" if arr.ndim == 3 else "L")
    elif arr.dtype == np.uint16:
        if arr.ndim != 2:
            raise InvalidFormatError("16-bit PNG supports single-channel data only")
        img = Image.fromarray(arr)  # infers mode I;16
    else:
        raise InvalidFormatError(f"cannot write PNG from dtype {arr.dtype}")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def read_png(payload: bytes) -> np.ndarray:
    """PNG bytes to an array: uint8 (H,W[,3]) or uint16 (H,W)."""
    img = Image.open(io.BytesIO(payload))
    arr = np.asarray(img)
    if arr.dtype == np.int32:  # Pillow promotes 16-bit gray to mode "I"
        arr = arr.astype(np.uint16)
    return arr


def write_pfm(arr: np.ndarray) -> bytes:
    """float32 (H,W) -> "Pf", (H,W,3) -> "PF"; little-endian, bottom-up."""
    a = np.asarray(arr, dtype="<f4")
    if a.ndim == 2:
        tag = b"Pf"
        h, w = a.shape
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
        h, w = a.shape[:2]
    else:
        raise InvalidFormatError(f"PFM supports (H,W) or (H,W,3), got {a.shape}")
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    return header + np.flipud(a).tobytes()


def read_pfm(payload: bytes) -> np.ndarray:
    buf = io.BytesIO(payload)

    def line() -> bytes:
        out = b""
        while True:
            c = buf.read(1)
            if not c or c == b"\n":
                return out
            out += c

    tag = line()
    if tag not in (b"Pf", b"PF"):
        raise InvalidFormatError(f"not a PFM payload (tag {tag!r})")
    w, h = (int(v) for v in line().split())
    scale = float(line())
    channels = 3 if tag == b"PF" else 1
    fmt = "<f4" if scale < 0 else ">f4"
    data = np.frombuffer(buf.read(w * h * channels * 4), dtype=fmt)
    if data.size != w * h * channels:
        raise InvalidFormatError("PFM payload truncated")
    shape = (h, w) if channels == 1 else (h, w, 3)
    return np.flipud(data.reshape(shape)).astype(np.float32)


# ---------------------------------------------------------------------------
# Modality encoding
# ---------------------------------------------------------------------------


def check_format(modality: str, fmt: str) -> None:
    if modality not in MODALITY_FORMATS:
        raise InvalidFormatError(f"unknown modality {modality!r}")
    if fmt not in MODALITY_FORMATS[modality]:
        raise InvalidFormatError(
            f"modality {modality!r} cannot be encoded as {fmt!r}; "
            f"valid: {MODALITY_FORMATS[modality]}"
        )


def encode_modality(plane, fmt: str) -> EncodedImage:
    """Encode an ImagePlane to file bytes under the stated format rules."""
    modality = plane.modality
    check_format(modality, fmt)
    v = plane.values

    if fmt == "pfm":
        payload = write_pfm(v.astype(np.float32))
    elif modality == "instance":
        payload = write_png(encode_id_colors(v))
    elif modality == "class":
        payload = write_png(v)  # already id/class colors, written verbatim
    elif modality == "depth":
        mm = _round_half_up(np.minimum(v, DEPTH_MM_CEILING_M) * 1000.0)
        payload = write_png(mm.astype(np.uint16))
    elif modality == "normal":
        enc = _to_u8((v + 1.0) / 2.0)
        no_hit = ~v.any(axis=-1)  # zero-vector sentinel
        enc[no_hit] = 0  # reserved byte pattern, unreachable for unit normals
        payload = write_png(enc)
    elif modality == "shading":
        payload = write_png(_to_u8(v))
    else:  # rgb / albedo
        payload = write_png(_to_u8(v))

    return EncodedImage(modality, fmt, plane.width, plane.height, payload)


def decode_modality(payload: bytes, modality: str, fmt: str) -> np.ndarray:
    """Invert encode_modality back to plane units (meters, ids, [0,1] floats)."""
    check_format(modality, fmt)
    if fmt == "pfm":
        return read_pfm(payload)
    arr = read_png(payload)
    if modality == "instance":
        return decode_id_colors(arr).astype(np.int32)
    if modality == "class":
        return arr
    if modality == "depth":
        return (arr.astype(np.float32)) / 1000.0
    if modality == "normal":
        out = arr.astype(np.float32) / 255.0 * 2.0 - 1.0
        out[~arr.any(axis=-1)] = 0.0  # reserved no-hit pattern
        return out
    return arr.astype(np.float32) / 255.0
