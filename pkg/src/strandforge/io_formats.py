"""Binary persistence for strands, textures, checkpoints, scan segments,
camera rigs, and images, plus config loading.

All multi-byte integers are little-endian; floats are 32-bit on disk and
promoted to 64-bit in memory. Writes go through a temp file and an atomic
rename. Every loader validates the header before allocating.
"""

import json
import os
import struct
import tempfile

import numpy as np
from PIL import Image

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .raster import Camera
from .strands import Frame, Strand, StrandSet
from .synthdata import ScanSegments

MAGIC_STRANDS = b"NSTR"
MAGIC_TEXTURE = b"NTEX"
MAGIC_CHECKPOINT = b"NCKP"
MAGIC_SEGMENTS = b"NSEG"
MAGIC_RAW = b"NRAW"
VERSION = 1


class FormatError(ValueError):
    """Malformed or truncated file."""


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(
                f"{self.path}: truncated at offset {self.pos} "
                f"(needed {n} bytes, {len(self.data) - self.pos} left)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f32(self, count):
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(
            np.float64)

    def header(self, magic):
        got = self.take(4)
        if got != magic:
            raise FormatError(f"{self.path}: bad magic {got!r}, expected "
                              f"{magic!r}")
        version = self.u16()
        if version != VERSION:
            raise FormatError(f"{self.path}: unsupported version {version}")


def _atomic_write(path, payload):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _f32_bytes(arr):
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# strands


def save_strands(path, strand_set):
    n = len(strand_set)
    segs = strand_set.strands[0].num_segments if n else 0
    out = [MAGIC_STRANDS, struct.pack("<H", VERSION),
           struct.pack("<I", n), struct.pack("<H", segs)]
    for s, f in zip(strand_set.strands, strand_set.frames):
        if s.num_segments != segs:
            raise ValueError("save_strands: mixed node counts")
        out.append(_f32_bytes(s.root_uv))
        out.append(_f32_bytes(np.concatenate(
            [f.origin, f.tangent, f.bitangent, f.normal])))
        out.append(_f32_bytes(s.points))
    _atomic_write(path, b"".join(out))


def load_strands(path, scalp=None):
    r = _Reader(open(path, "rb").read(), path)
    r.header(MAGIC_STRANDS)
    n = r.u32()
    segs = r.u16()
    strands, frames = [], []
    for _ in range(n):
        uv = r.f32(2)
        fr = r.f32(12)
        pts = r.f32((segs + 1) * 3).reshape(segs + 1, 3)
        strands.append(Strand(points=pts, root_uv=uv))
        frames.append(Frame(origin=fr[0:3], tangent=fr[3:6],
                            bitangent=fr[6:9], normal=fr[9:12]))
    return StrandSet(strands=strands, frames=frames, scalp=scalp)


# ---------------------------------------------------------------------------
# textures


def save_texture(path, texture):
    h, w, d = texture.data.shape
    out = [MAGIC_TEXTURE, struct.pack("<H", VERSION),
           struct.pack("<III", h, w, d), _f32_bytes(texture.data)]
    _atomic_write(path, b"".join(out))


def load_texture(path, role="shape"):
    from .scalp import NeuralTexture

    r = _Reader(open(path, "rb").read(), path)
    r.header(MAGIC_TEXTURE)
    h, w, d = r.u32(), r.u32(), r.u32()
    if h * w * d > 2 ** 28:
        raise FormatError(f"{path}: texture {h}x{w}x{d} exceeds size guard")
    data = r.f32(h * w * d).reshape(h, w, d)
    return NeuralTexture(h, w, d, role, data)


# ---------------------------------------------------------------------------
# checkpoints (ordered named tensors)


def save_checkpoint(path, named):
    """named: dict name -> ndarray or autodiff Tensor, saved in order."""
    records = []
    for name, value in named.items():
        arr = value.data if hasattr(value, "data") else np.asarray(value)
        nb = name.encode("utf-8")
        records.append(struct.pack("<H", len(nb)) + nb
                       + struct.pack("<B", arr.ndim)
                       + struct.pack(f"<{arr.ndim}I", *arr.shape)
                       + _f32_bytes(arr))
    out = [MAGIC_CHECKPOINT, struct.pack("<H", VERSION),
           struct.pack("<I", len(records))] + records
    _atomic_write(path, b"".join(out))


def load_checkpoint(path, expected=None):
    r = _Reader(open(path, "rb").read(), path)
    r.header(MAGIC_CHECKPOINT)
    count = r.u32()
    out = {}
    for _ in range(count):
        nlen = r.u16()
        name = r.take(nlen).decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        total = int(np.prod(shape)) if shape else 1
        out[name] = r.f32(total).reshape(shape)
    if expected is not None:
        missing = sorted(set(expected) - set(out))
        if missing:
            raise FormatError(
                f"{path}: missing tensors {missing}; expected "
                f"{sorted(expected)}")
    return out


# ---------------------------------------------------------------------------
# scan segments (variable-length polylines)


def save_segments(path, segments):
    out = [MAGIC_SEGMENTS, struct.pack("<H", VERSION),
           struct.pack("<I", len(segments))]
    for pts, dirs in zip(segments.points, segments.directions):
        out.append(struct.pack("<H", pts.shape[0]))
        out.append(_f32_bytes(pts))
        out.append(_f32_bytes(dirs))
    _atomic_write(path, b"".join(out))


def load_segments(path):
    r = _Reader(open(path, "rb").read(), path)
    r.header(MAGIC_SEGMENTS)
    n = r.u32()
    seg = ScanSegments()
    for _ in range(n):
        m = r.u16()
        seg.points.append(r.f32(3 * m).reshape(m, 3))
        seg.directions.append(r.f32(3 * m).reshape(m, 3))
    return seg


# ---------------------------------------------------------------------------
# camera rig JSON


def save_rig(path, cameras):
    data = {"cameras": [
        {"fx": c.fx, "fy": c.fy, "cx": c.cx, "cy": c.cy,
         "width": c.width, "height": c.height,
         "R": [float(v) for v in c.rotation.reshape(-1)],
         "t": [float(v) for v in c.translation]}
        for c in cameras]}
    _atomic_write(path, json.dumps(data, indent=1).encode("utf-8"))


def load_rig(path):
    with open(path, "rb") as f:
        data = json.loads(f.read().decode("utf-8"))
    cams = []
    for i, c in enumerate(data["cameras"]):
        rot = np.asarray(c["R"], dtype=np.float64).reshape(3, 3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise FormatError(f"{path}: camera {i} rotation not orthonormal")
        cams.append(Camera(fx=c["fx"], fy=c["fy"], cx=c["cx"], cy=c["cy"],
                           width=c["width"], height=c["height"],
                           rotation=rot,
                           translation=np.asarray(c["t"], dtype=np.float64)))
    return cams


# ---------------------------------------------------------------------------
# images


def save_png(path, img):
    """Float image in [0, 1], (H, W, 3|4) or (H, W), to 8-bit PNG."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[:, :, None].repeat(3, axis=2)
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    mode = "RGBA" if quant.shape[2] == 4 else "RGB"
    buf = Image.fromarray(quant, mode=mode)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".png")
    os.close(fd)
    try:
        buf.save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_png(path):
    with Image.open(path) as im:
        return np.asarray(im).astype(np.float64) / 255.0


def save_raw(path, arr):
    """Lossless f32 dump with shape header, for loss-grade comparisons."""
    arr = np.asarray(arr)
    out = [MAGIC_RAW, struct.pack("<H", VERSION),
           struct.pack("<B", arr.ndim),
           struct.pack(f"<{arr.ndim}I", *arr.shape), _f32_bytes(arr)]
    _atomic_write(path, b"".join(out))


def load_raw(path):
    r = _Reader(open(path, "rb").read(), path)
    r.header(MAGIC_RAW)
    ndim = r.u8()
    shape = tuple(r.u32() for _ in range(ndim))
    return r.f32(int(np.prod(shape))).reshape(shape)


def compare_raw(a, b):
    """Elementwise max abs difference; shape mismatch is an error."""
    if a.shape != b.shape:
        raise ValueError(f"compare_raw: shapes {a.shape} vs {b.shape}")
    return float(np.abs(a - b).max())


# ---------------------------------------------------------------------------
# config


def load_config(path):
    """TOML fit configuration; returns a plain dict of overrides."""
    with open(path, "rb") as f:
        return tomllib.load(f)


def save_json(path, obj):
    _atomic_write(path, json.dumps(obj, indent=1, sort_keys=True)
                  .encode("utf-8"))


def load_json(path):
    with open(path, "rb") as f:
        return json.loads(f.read().decode("utf-8"))
