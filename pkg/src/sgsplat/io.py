"""File formats: splat-convention PLY in, compact binary out, plus helpers.

The compact format layout (all little-endian):

    magic   6 bytes  b"MEGS2\\x00"
    version u16      currently 1
    count   u32      number of primitives
    per primitive:
        14 x f32     position(3) quaternion(4) scale(3) opacity(1) diffuse(3)
        u8           lobe count
        per lobe 7 x f32   axis(3) sharpness(1) amplitude(3)

Values are stored activated (no logits) and axes/quaternions normalized,
so readers can render directly.  An `.npz` archive carries intermediate
scenes (including SH-tagged ones) between pipeline stages.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .render import Camera
from .scene import (ColorModel, GaussianPrimitive, Scene, SceneFormatError,
                    SGLobe, TruncatedFileError, UnsupportedEncodingError)

MAGIC = b"MEGS2\x00"
FORMAT_VERSION = 1

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}

_REQUIRED_PLY_PROPS = ("x", "y", "z", "opacity",
                       "scale_0", "scale_1", "scale_2",
                       "rot_0", "rot_1", "rot_2", "rot_3",
                       "f_dc_0", "f_dc_1", "f_dc_2")

# f_rest property count -> SH degree
_F_REST_DEGREES = {0: 0, 9: 1, 24: 2, 45: 3}


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def parse_ply(data: bytes) -> Scene:
    """Parse a binary-little-endian splat PLY into an SH-tagged scene.

    Opacity logits go through the logistic activation, log-scales are
    exponentiated, quaternions normalized; the SH DC term is kept exactly
    as stored.
    """
    marker = b"end_header\n"
    pos = data.find(marker)
    if pos < 0:
        raise SceneFormatError("no end_header marker found")
    header = data[:pos].decode("ascii", errors="replace")
    body_offset = pos + len(marker)

    lines = [ln.strip() for ln in header.splitlines() if ln.strip()]
    if not lines or lines[0] != "ply":
        raise SceneFormatError("not a PLY file (missing 'ply' magic line)")

    fmt = next((ln for ln in lines if ln.startswith("format ")), None)
    if fmt is None:
        raise SceneFormatError("missing format line")
    if "binary_little_endian" not in fmt:
        raise UnsupportedEncodingError(
            f"only binary_little_endian PLY is supported, got {fmt!r}")

    # elements in declaration order; each is (name, count, [(type, prop)])
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    for ln in lines:
        parts = ln.split()
        if parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise SceneFormatError("property before any element")
            if parts[1] == "list":
                elements[-1][2].append(("list", parts[-1]))
            else:
                elements[-1][2].append((parts[1], parts[2]))

    offset = body_offset
    vertex = None
    for name, count, props in elements:
        if any(t == "list" for t, _ in props):
            if name == "vertex":
                raise SceneFormatError("list properties in vertex element "
                                       "are not supported")
            break  # cannot compute stride past a variable-length element
        stride = sum(np.dtype(_PLY_TYPES[t]).itemsize for t, _ in props
                     if t in _PLY_TYPES)
        if any(t not in _PLY_TYPES for t, _ in props):
            raise SceneFormatError(f"unknown property type in element {name!r}")
        if name == "vertex":
            vertex = (count, props, offset, stride)
            break
        offset += count * stride
    if vertex is None:
        raise SceneFormatError("no vertex element found")

    count, props, offset, stride = vertex
    names = [n for _, n in props]
    for req in _REQUIRED_PLY_PROPS:
        if req not in names:
            raise SceneFormatError(f"missing required property {req!r}")

    rest_names = sorted((n for n in names if n.startswith("f_rest_")),
                        key=lambda n: int(n.split("_")[-1]))
    if len(rest_names) not in _F_REST_DEGREES:
        raise SceneFormatError(
            f"unexpected f_rest property count {len(rest_names)} "
            f"(expected one of {sorted(_F_REST_DEGREES)})")
    degree = _F_REST_DEGREES[len(rest_names)]

    need = offset + count * stride
    if len(data) < need:
        raise TruncatedFileError(
            f"vertex data ends early, need {need} bytes", len(data))

    dtype = np.dtype([(n, "<" + _PLY_TYPES[t]) for t, n in props])
    rows = np.frombuffer(data, dtype=dtype, count=count, offset=offset)

    def col(name: str) -> np.ndarray:
        return rows[name].astype(np.float64)

    positions = np.stack([col("x"), col("y"), col("z")], -1)
    opac = np.clip(_sigmoid(col("opacity")), 1e-7, 1.0 - 1e-7)
    scales = np.maximum(np.exp(np.stack([col("scale_0"), col("scale_1"),
                                         col("scale_2")], -1)), 1e-30)
    quats = np.stack([col(f"rot_{i}") for i in range(4)], -1)
    qn = np.linalg.norm(quats, axis=-1)
    qn = np.where(qn < 1e-12, 1.0, qn)
    quats = quats / qn[:, None]
    dc = np.stack([col(f"f_dc_{i}") for i in range(3)], -1)

    m = (degree + 1) ** 2 - 1
    if m:
        rest = np.stack([col(n) for n in rest_names], -1)   # (N, 3*m)
        rest = rest.reshape(count, 3, m).transpose(0, 2, 1)  # channel-major file order
    prims, blocks = [], []
    for i in range(count):
        prims.append(GaussianPrimitive(
            position=positions[i].astype(np.float32),
            rotation=quats[i].astype(np.float32),
            scale=scales[i].astype(np.float32),
            opacity=float(opac[i]),
            diffuse=dc[i].astype(np.float32)))
        coeffs = np.zeros(((degree + 1) ** 2, 3), dtype=np.float32)
        coeffs[0] = dc[i]
        if m:
            coeffs[1:] = rest[i]
        blocks.append(coeffs)
    return Scene(primitives=prims, color_model=ColorModel.sh(degree),
                 sh_coeffs=blocks, provenance={"source_format": "ply",
                                               "sh_degree": degree})


def write_compact(scene: Scene) -> bytes:
    """Serialize an SG scene to the compact binary format (bit-stable)."""
    scene.require_sg("write_compact")
    out = bytearray(MAGIC)
    out += struct.pack("<HI", FORMAT_VERSION, len(scene))
    for prim in scene.primitives:
        base = np.concatenate([prim.position, prim.rotation, prim.scale,
                               np.float32([prim.opacity]), prim.diffuse])
        out += base.astype("<f4").tobytes()
        out += struct.pack("<B", len(prim.lobes))
        for lobe in prim.lobes:
            rec = np.concatenate([lobe.axis, np.float32([lobe.sharpness]),
                                  lobe.amplitude])
            out += rec.astype("<f4").tobytes()
    return bytes(out)


def read_compact(data: bytes) -> Scene:
    """Inverse of write_compact; exact round trip of every stored value."""
    if len(data) < len(MAGIC) + 6:
        raise TruncatedFileError("header incomplete", len(data))
    if data[:len(MAGIC)] != MAGIC:
        raise SceneFormatError(f"bad magic {data[:len(MAGIC)]!r}")
    version, count = struct.unpack_from("<HI", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise SceneFormatError(f"unsupported format version {version}")
    pos = len(MAGIC) + 6
    prims = []
    max_lobes = 0
    for _ in range(count):
        if len(data) < pos + 14 * 4 + 1:
            raise TruncatedFileError("primitive record ends early", len(data))
        base = np.frombuffer(data, dtype="<f4", count=14, offset=pos)
        pos += 14 * 4
        n_lobes = data[pos]
        pos += 1
        if len(data) < pos + n_lobes * 7 * 4:
            raise TruncatedFileError("lobe records end early", len(data))
        lobes = []
        for _ in range(n_lobes):
            rec = np.frombuffer(data, dtype="<f4", count=7, offset=pos)
            pos += 7 * 4
            lobes.append(SGLobe(axis=rec[:3].copy(), sharpness=float(rec[3]),
                                amplitude=rec[4:].copy()))
        max_lobes = max(max_lobes, n_lobes)
        prims.append(GaussianPrimitive(
            position=base[0:3].copy(), rotation=base[3:7].copy(),
            scale=base[7:10].copy(), opacity=float(base[10]),
            diffuse=base[11:14].copy(), lobes=lobes))
    if pos != len(data):
        raise SceneFormatError(f"{len(data) - pos} trailing bytes after "
                               "last primitive")
    from .scene import DEFAULT_MAX_LOBES
    return Scene(primitives=prims,
                 color_model=ColorModel.sg(max(max_lobes, DEFAULT_MAX_LOBES)),
                 provenance={"source_format": "megs2"})


# --------------------------------------------------------------------------
# npz scene archive (intermediate pipeline stages, supports SH scenes)
# --------------------------------------------------------------------------

def write_scene_npz(path, scene: Scene) -> None:
    n = len(scene)
    arrays = {
        "position": np.stack([p.position for p in scene.primitives]) if n else np.zeros((0, 3), np.float32),
        "rotation": np.stack([p.rotation for p in scene.primitives]) if n else np.zeros((0, 4), np.float32),
        "scale": np.stack([p.scale for p in scene.primitives]) if n else np.zeros((0, 3), np.float32),
        "opacity": np.array([p.opacity for p in scene.primitives], np.float32),
        "diffuse": np.stack([p.diffuse for p in scene.primitives]) if n else np.zeros((0, 3), np.float32),
    }
    meta = {"kind": scene.color_model.kind, "provenance": scene.provenance}
    if scene.color_model.kind == "sh":
        meta["degree"] = scene.color_model.degree
        arrays["sh"] = (np.stack(scene.sh_coeffs) if n
                        else np.zeros((0, (scene.color_model.degree + 1) ** 2, 3), np.float32))
    else:
        meta["max_lobes"] = scene.color_model.max_lobes
        counts = np.array([len(p.lobes) for p in scene.primitives], np.uint8)
        arrays["lobe_counts"] = counts
        flat = [lobe for p in scene.primitives for lobe in p.lobes]
        arrays["lobe_axis"] = (np.stack([l.axis for l in flat])
                               if flat else np.zeros((0, 3), np.float32))
        arrays["lobe_sharpness"] = np.array([l.sharpness for l in flat], np.float32)
        arrays["lobe_amplitude"] = (np.stack([l.amplitude for l in flat])
                                    if flat else np.zeros((0, 3), np.float32))
    arrays["meta_json"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def read_scene_npz(path) -> Scene:
    with np.load(path) as z:
        meta = json.loads(bytes(z["meta_json"]).decode())
        n = z["opacity"].shape[0]
        prims = []
        if meta["kind"] == "sg":
            counts = z["lobe_counts"].astype(np.int64)
            starts = np.concatenate([[0], np.cumsum(counts)]).astype(int)
        for i in range(n):
            lobes = []
            if meta["kind"] == "sg":
                for j in range(starts[i], starts[i + 1]):
                    lobes.append(SGLobe(axis=z["lobe_axis"][j],
                                        sharpness=float(z["lobe_sharpness"][j]),
                                        amplitude=z["lobe_amplitude"][j]))
            prims.append(GaussianPrimitive(
                position=z["position"][i], rotation=z["rotation"][i],
                scale=z["scale"][i], opacity=float(z["opacity"][i]),
                diffuse=z["diffuse"][i], lobes=lobes))
        if meta["kind"] == "sh":
            blocks = [z["sh"][i] for i in range(n)]
            return Scene(prims, ColorModel.sh(meta["degree"]), sh_coeffs=blocks,
                         provenance=meta.get("provenance", {}))
        return Scene(prims, ColorModel.sg(meta["max_lobes"]),
                     provenance=meta.get("provenance", {}))


def load_scene(path) -> Scene:
    """Dispatch on extension: .ply, .npz or .megs2."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".ply":
        return parse_ply(path.read_bytes())
    if suffix == ".npz":
        return read_scene_npz(path)
    if suffix in (".megs2", ".bin"):
        return read_compact(path.read_bytes())
    raise SceneFormatError(f"unknown scene file extension {suffix!r}")


def save_scene(path, scene: Scene) -> None:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".npz":
        write_scene_npz(path, scene)
    elif suffix in (".megs2", ".bin"):
        path.write_bytes(write_compact(scene))
    else:
        raise SceneFormatError(f"unknown scene file extension {suffix!r}")


# --------------------------------------------------------------------------
# images and cameras
# --------------------------------------------------------------------------

def save_png(path, img: np.ndarray) -> None:
    """8-bit sRGB PNG; values clipped to [0, 1]."""
    from PIL import Image
    u8 = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(u8, mode="RGB").save(Path(path), format="PNG")


def load_image(path) -> np.ndarray:
    """Float (H, W, 3) image from .png or .npy."""
    path = Path(path)
    if path.suffix.lower() == ".npy":
        return np.load(path).astype(np.float64)
    from PIL import Image
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_raw_rgb32f(path, img: np.ndarray) -> None:
    """Raw planar float dump: u32 width, height, channels, then f32 CHW."""
    h, w, c = img.shape
    with open(path, "wb") as f:
        f.write(struct.pack("<III", w, h, c))
        f.write(np.ascontiguousarray(
            img.transpose(2, 0, 1)).astype("<f4").tobytes())


def load_raw_rgb32f(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, c = struct.unpack_from("<III", data, 0)
    arr = np.frombuffer(data, dtype="<f4", count=w * h * c, offset=12)
    return arr.reshape(c, h, w).transpose(1, 2, 0).astype(np.float64)


def camera_to_dict(cam: Camera) -> dict:
    return {
        "rotation": cam.rotation.reshape(-1).tolist(),
        "translation": cam.translation.tolist(),
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height, "near": cam.near,
    }


def camera_from_dict(d: dict) -> Camera:
    return Camera(rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
                  translation=np.array(d["translation"], dtype=np.float64),
                  fx=float(d["fx"]), fy=float(d["fy"]),
                  cx=float(d["cx"]), cy=float(d["cy"]),
                  width=int(d["width"]), height=int(d["height"]),
                  near=float(d.get("near", 0.1)))


def save_camera_json(path, cam: Camera) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2))


def load_camera_json(path) -> Camera:
    return camera_from_dict(json.loads(Path(path).read_text()))
