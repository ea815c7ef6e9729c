import numpy as np
import pytest

from strandforge import autodiff as ad
from strandforge import raster

from helpers import central_diff, raster_cover_oracle, rel_err


def identity_camera(size=64, f=100.0):
    return raster.Camera(fx=f, fy=f, cx=size / 2, cy=size / 2,
                         width=size, height=size,
                         rotation=np.eye(3), translation=np.zeros(3))


def test_camera_rejects_bad_rotation():
    with pytest.raises(ValueError, match="orthonormal"):
        raster.Camera(fx=1, fy=1, cx=0, cy=0, width=8, height=8,
                      rotation=np.eye(3) * 2, translation=np.zeros(3))


def test_camera_rejects_reflection():
    r = np.diag([1.0, 1.0, -1.0])
    with pytest.raises(ValueError, match="determinant"):
        raster.Camera(fx=1, fy=1, cx=0, cy=0, width=8, height=8,
                      rotation=r, translation=np.zeros(3))


def test_project_center_point():
    cam = raster.Camera(fx=100, fy=100, cx=64, cy=64, width=128, height=128,
                        rotation=np.eye(3), translation=np.zeros(3))
    out = raster.project(ad.Tensor(np.array([[0.0, 0.0, 1.0]])), cam)
    assert np.allclose(out.data[0], [64.0, 64.0, 1.0], atol=1e-12)


def test_project_scale_invariance_along_ray():
    cam = identity_camera()
    p = np.array([[0.02, -0.01, 1.0]])
    a = raster.project(ad.Tensor(p), cam).data
    b = raster.project(ad.Tensor(2 * p), cam).data
    assert np.allclose(a[0, :2], b[0, :2], atol=1e-12)
    assert abs(b[0, 2] - 2.0) < 1e-12


def test_project_jacobian_vs_fd():
    rng = np.random.default_rng(0)
    cam = raster.Camera(fx=90, fy=110, cx=32, cy=30, width=64, height=64,
                        rotation=np.linalg.qr(
                            rng.standard_normal((3, 3)))[0],
                        translation=np.array([0.01, -0.02, 0.4]))
    if np.linalg.det(cam.rotation) < 0:
        cam.rotation[:, 0] *= -1
    pts = rng.standard_normal((5, 3)) * 0.05
    pts[:, 2] += 1.0
    seed = rng.standard_normal((5, 3))
    t = ad.Tensor(pts, requires_grad=True)
    ad.backward(raster.project(t, cam), seed)

    def f(x):
        return float(np.sum(raster.project(ad.Tensor(x), cam).data * seed))

    num = central_diff(f, pts.copy())
    assert rel_err(t.grad, num) < 1e-6


def simple_strands():
    # two parallel strands at different depths crossing the view center
    z_near, z_far = 1.0, 2.0
    xs = np.linspace(-0.2, 0.2, 11)
    near = np.stack([xs, np.zeros(11), np.full(11, z_near)], axis=1)
    far = np.stack([xs, np.zeros(11), np.full(11, z_far)], axis=1)
    return np.stack([near, far])


def test_hard_rasterize_zbuffer_picks_near():
    cam = identity_camera(size=64, f=100)
    frag = raster.hard_rasterize(simple_strands(), cam)
    cov = frag.coverage
    assert cov.any()
    assert np.all(frag.strand[cov] == 0)
    assert np.allclose(frag.depth[cov], 1.0, atol=1e-9)


def test_hard_rasterize_empty_scene():
    cam = identity_camera(16)
    frag = raster.hard_rasterize(np.zeros((0, 2, 3)), cam)
    assert not frag.coverage.any()


def test_hard_rasterize_vertical_segment_rows():
    cam = identity_camera(size=16, f=10)
    # a segment projecting to x = 8.0 exactly is a boundary; use 8.3
    pts = np.array([[[(8.3 - 8.0) / 10.0, -0.58, 1.0],
                     [(8.3 - 8.0) / 10.0, 0.37, 1.0]]])
    frag = raster.hard_rasterize(pts, cam)
    ys, xs = np.nonzero(frag.coverage)
    assert set(xs) == {8}
    p0y = 8 + -0.58 * 10
    p1y = 8 + 0.37 * 10
    assert set(ys) == set(range(int(np.floor(p0y)), int(np.floor(p1y)) + 1))


def test_hard_rasterize_behind_camera_excluded():
    cam = identity_camera(32)
    pts = np.array([[[0.0, 0.0, -1.0], [0.1, 0.0, -2.0]]])
    frag = raster.hard_rasterize(pts, cam)
    assert not frag.coverage.any()


def test_hard_rasterize_matches_cover_oracle():
    rng = np.random.default_rng(1)
    cam = identity_camera(size=32, f=40)
    n = 6
    pts = np.zeros((n, 2, 3))
    pts[:, :, 0] = rng.uniform(-0.35, 0.35, (n, 2))
    pts[:, :, 1] = rng.uniform(-0.35, 0.35, (n, 2))
    pts[:, :, 2] = np.linspace(1.0, 2.0, n)[:, None]  # distinct depths
    frag = raster.hard_rasterize(pts, cam)

    cover = {}
    for s in range(n):
        p0, _ = cam.project_np(pts[s, 0:1])
        p1, _ = cam.project_np(pts[s, 1:2])
        for cell in raster_cover_oracle(p0[0], p1[0], 32):
            if cell not in cover or pts[s, 0, 2] < pts[cover[cell], 0, 2]:
                cover[cell] = s
    ys, xs = np.nonzero(frag.coverage)
    assert {(x, y) for x, y in zip(xs, ys)} == set(cover)
    for x, y in zip(xs, ys):
        assert frag.strand[y, x] == cover[(x, y)]


def test_fragment_world_param_roundtrip():
    # the recorded parameter must reproduce the pixel the fragment owns
    rng = np.random.default_rng(2)
    cam = identity_camera(size=48, f=60)
    pts = np.zeros((4, 2, 3))
    pts[:, :, 0] = rng.uniform(-0.3, 0.3, (4, 2))
    pts[:, :, 1] = rng.uniform(-0.3, 0.3, (4, 2))
    pts[:, :, 2] = rng.uniform(0.8, 1.6, (4, 2))
    frag = raster.hard_rasterize(pts, cam)
    ys, xs = np.nonzero(frag.coverage)
    assert len(xs) > 0
    for x, y in zip(xs, ys):
        s = frag.strand[y, x]
        t = frag.tparam[y, x]
        p = pts[s, 0] + t * (pts[s, 1] - pts[s, 0])
        px, z = cam.project_np(p[None])
        assert int(np.floor(px[0, 0])) == x
        assert int(np.floor(px[0, 1])) == y
        assert abs(z[0] - frag.depth[y, x]) < 1e-9


def test_splat_pyramid_shapes_and_weights():
    cam = identity_camera(size=32)
    rng = np.random.default_rng(3)
    px = ad.Tensor(rng.uniform(2, 30, size=(40, 2)))
    desc = ad.Tensor(rng.standard_normal((40, 5)))
    pyr = raster.splat(px, desc, cam, num_levels=3)
    assert len(pyr) == 3
    for lvl, m in enumerate(pyr.levels):
        h = 32 >> lvl
        assert m.shape == (h, h, 6)
        assert np.all(m.data[:, :, -1] >= 0)


def test_splat_level0_weight_partition():
    cam = identity_camera(size=16)
    px = ad.Tensor(np.array([[4.3, 7.9], [10.2, 3.4]]))
    desc = ad.Tensor(np.ones((2, 1)))
    pyr = raster.splat(px, desc, cam, num_levels=1)
    assert abs(pyr.levels[0].data[:, :, -1].sum() - 2.0) < 1e-12


def test_splat_gradients_vs_fd():
    cam = identity_camera(size=8)
    rng = np.random.default_rng(4)
    px = rng.uniform(1.3, 6.4, size=(6, 2))
    desc = rng.standard_normal((6, 3))

    def build(p, d):
        pyr = raster.splat(p, d, cam, num_levels=2)
        return ad.add(ad.tsum(ad.mul(pyr.levels[0], pyr.levels[0])),
                      ad.tsum(ad.mul(pyr.levels[1], pyr.levels[1])))

    t_px = ad.Tensor(px, requires_grad=True)
    t_d = ad.Tensor(desc, requires_grad=True)
    ad.backward(build(t_px, t_d))

    def f_px(v):
        return build(ad.Tensor(v), ad.Tensor(desc)).item()

    def f_d(v):
        return build(ad.Tensor(px), ad.Tensor(v)).item()

    assert rel_err(t_px.grad, central_diff(f_px, px.copy())) < 1e-4
    assert rel_err(t_d.grad, central_diff(f_d, desc.copy())) < 1e-4


def test_view_direction_map_properties():
    cam = identity_camera(size=64, f=80)
    dirs = raster.view_direction_map(cam)
    assert dirs.shape == (64, 64, 3)
    norms = np.linalg.norm(dirs, axis=2)
    assert np.allclose(norms, 1.0, atol=1e-9)
    # principal pixel looks along the camera forward axis
    center = dirs[31, 31] + dirs[31, 32] + dirs[32, 31] + dirs[32, 32]
    center /= np.linalg.norm(center)
    assert np.allclose(center, [0, 0, 1.0], atol=1e-3)
    # mirrored x components about the principal column
    assert np.allclose(dirs[:, :32, 0], -dirs[:, :31:-1, 0], atol=1e-12)
