import numpy as np
import pytest

from strandforge import io_formats as io
from strandforge.scalp import NeuralTexture, ScalpSurface
from strandforge.strands import Frame, Strand, StrandSet
from strandforge.synthdata import ScanSegments, build_rig


def make_strand_set(n=3, segs=10):
    rng = np.random.default_rng(0)
    strands, frames = [], []
    for _ in range(n):
        pts = np.vstack([np.zeros(3),
                         np.cumsum(rng.standard_normal((segs, 3)) * 0.01,
                                   axis=0)])
        strands.append(Strand(points=pts, root_uv=rng.uniform(size=2)))
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        frames.append(Frame(origin=rng.standard_normal(3), tangent=q[0],
                            bitangent=q[1], normal=q[2]))
    return StrandSet(strands=strands, frames=frames)


def test_strands_roundtrip(tmp_path):
    ss = make_strand_set()
    path = tmp_path / "s.nstr"
    io.save_strands(path, ss)
    back = io.load_strands(path)
    assert len(back) == len(ss)
    for a, b in zip(ss.strands, back.strands):
        assert np.allclose(a.points, b.points, rtol=1e-7, atol=1e-7)
        assert np.allclose(a.root_uv, b.root_uv, rtol=1e-7)
    for a, b in zip(ss.frames, back.frames):
        assert np.allclose(a.matrix(), b.matrix(), rtol=1e-7, atol=1e-7)


def test_strands_empty_set(tmp_path):
    path = tmp_path / "empty.nstr"
    io.save_strands(path, StrandSet(strands=[], frames=[]))
    back = io.load_strands(path)
    assert len(back) == 0


def test_strands_truncated_names_offset(tmp_path):
    ss = make_strand_set()
    path = tmp_path / "s.nstr"
    io.save_strands(path, ss)
    data = open(path, "rb").read()
    open(path, "wb").write(data[:len(data) // 2])
    with pytest.raises(io.FormatError, match="offset"):
        io.load_strands(path)


def test_texture_roundtrip_and_magic(tmp_path):
    rng = np.random.default_rng(1)
    tex = NeuralTexture(6, 4, 3, "shape", rng.standard_normal((6, 4, 3)))
    path = tmp_path / "t.ntex"
    io.save_texture(path, tex)
    back = io.load_texture(path)
    assert np.allclose(back.data, tex.data, rtol=1e-7, atol=1e-7)

    open(path, "wb").write(b"XXXX" + b"\x00" * 32)
    with pytest.raises(io.FormatError, match="magic"):
        io.load_texture(path)


def test_texture_size_guard(tmp_path):
    import struct
    path = tmp_path / "big.ntex"
    payload = io.MAGIC_TEXTURE + struct.pack("<H", io.VERSION) \
        + struct.pack("<III", 2 ** 16, 2 ** 16, 2 ** 10)
    open(path, "wb").write(payload)
    with pytest.raises(io.FormatError, match="guard"):
        io.load_texture(path)


def test_checkpoint_roundtrip_and_determinism(tmp_path):
    rng = np.random.default_rng(2)
    named = {"a": rng.standard_normal((3, 4)),
             "b.weight": rng.standard_normal(7),
             "c": np.array(2.5)}
    p1, p2 = tmp_path / "c1.nckp", tmp_path / "c2.nckp"
    io.save_checkpoint(p1, named)
    io.save_checkpoint(p2, named)
    assert open(p1, "rb").read() == open(p2, "rb").read()
    back = io.load_checkpoint(p1)
    assert set(back) == set(named)
    for k in named:
        assert np.allclose(back[k], named[k], rtol=1e-7, atol=1e-7)


def test_checkpoint_missing_tensor(tmp_path):
    path = tmp_path / "c.nckp"
    io.save_checkpoint(path, {"present": np.zeros(3)})
    with pytest.raises(io.FormatError, match="missing.*absent"):
        io.load_checkpoint(path, expected=["present", "absent"])


def test_rig_roundtrip_idempotent(tmp_path):
    cams = build_rig(5, radius=0.5, size=64)
    p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
    io.save_rig(p1, cams)
    io.save_rig(p2, io.load_rig(p1))
    assert open(p1).read() == open(p2).read()


def test_rig_rejects_bad_rotation(tmp_path):
    cams = build_rig(1, radius=0.5, size=64)
    path = tmp_path / "r.json"
    io.save_rig(path, cams)
    data = io.load_json(path)
    data["cameras"][0]["R"][0] = 2.0
    io.save_json(path, data)
    with pytest.raises(io.FormatError, match="orthonormal"):
        io.load_rig(path)


def test_rig_ignores_unknown_fields(tmp_path):
    cams = build_rig(2, radius=0.5, size=64)
    path = tmp_path / "r.json"
    io.save_rig(path, cams)
    data = io.load_json(path)
    data["extra_field"] = {"foo": 1}
    data["cameras"][0]["comment"] = "hello"
    io.save_json(path, data)
    back = io.load_rig(path)
    assert len(back) == 2


def test_segments_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    seg = ScanSegments()
    for n in (5, 9, 15):
        seg.points.append(rng.standard_normal((n, 3)) * 0.05)
        d = rng.standard_normal((n, 3))
        seg.directions.append(d / np.linalg.norm(d, axis=1, keepdims=True))
    path = tmp_path / "s.nseg"
    io.save_segments(path, seg)
    back = io.load_segments(path)
    assert len(back) == 3
    for a, b in zip(seg.points, back.points):
        assert np.allclose(a, b, rtol=1e-7, atol=1e-7)


def test_png_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    img = rng.uniform(0, 1, (12, 9, 4))
    path = tmp_path / "i.png"
    io.save_png(path, img)
    back = io.load_png(path)
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 1.0 / 255.0 + 1e-9


def test_raw_roundtrip_exact(tmp_path):
    rng = np.random.default_rng(5)
    arr = rng.standard_normal((7, 5, 3)).astype(np.float32).astype(
        np.float64)
    path = tmp_path / "a.nraw"
    io.save_raw(path, arr)
    back = io.load_raw(path)
    assert np.array_equal(back, arr)


def test_compare_raw_mismatch():
    with pytest.raises(ValueError, match="shapes"):
        io.compare_raw(np.zeros((2, 2)), np.zeros((3, 2)))


def test_config_toml(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text('iterations = 50\nlr_shape = 0.01\nseed = 9\n')
    cfg = io.load_config(path)
    assert cfg == {"iterations": 50, "lr_shape": 0.01, "seed": 9}
