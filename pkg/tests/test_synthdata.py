import numpy as np
import pytest

from strandforge import synthdata
from strandforge.scalp import ScalpSurface

SCALP = ScalpSurface(radius=0.1)


def small_style(**kw):
    defaults = dict(family="straight", strand_count=40,
                    length_range=(0.05, 0.08))
    defaults.update(kw)
    return synthdata.StyleParams(**defaults)


def test_style_validation():
    with pytest.raises(ValueError, match="family"):
        synthdata.StyleParams(family="bald")
    with pytest.raises(ValueError, match="positive"):
        synthdata.StyleParams(strand_count=0)


def test_straight_zero_droop_along_normal():
    style = small_style(droop=0.0, length_range=(0.06, 0.06))
    gt = synthdata.generate_hairstyle(style, SCALP, seed=0)
    for s, f in zip(gt.strands, gt.frames):
        # local +z is the scalp normal; arc length equals the parameter
        d = np.diff(s.points, axis=0)
        units = d / np.linalg.norm(d, axis=1, keepdims=True)
        assert np.allclose(units, [0, 0, 1], atol=1e-9)
        assert abs(s.arc_length() - 0.06) < 1e-9


def test_curly_has_torsion():
    style = small_style(family="curly", curl_radius=0.01, droop=0.0)
    gt = synthdata.generate_hairstyle(style, SCALP, seed=1)
    for s in gt.strands[:10]:
        chord = s.points[-1] - s.points[0]
        chord = chord / np.linalg.norm(chord)
        rel = s.points - s.points[0]
        dist = np.linalg.norm(rel - np.outer(rel @ chord, chord), axis=1)
        assert dist.max() > style.curl_radius / 2


def test_hairstyle_deterministic():
    style = small_style(family="wavy")
    a = synthdata.generate_hairstyle(style, SCALP, seed=7)
    b = synthdata.generate_hairstyle(style, SCALP, seed=7)
    for sa, sb in zip(a.strands, b.strands):
        assert np.array_equal(sa.points, sb.points)
        assert np.array_equal(sa.root_uv, sb.root_uv)


def test_hairstyle_roots_on_scalp():
    gt = synthdata.generate_hairstyle(small_style(), SCALP, seed=2)
    world = gt.points_world()
    roots = world[:, 0]
    assert np.max(SCALP.distance_to_surface(roots)) < 1e-6
    assert all(s.points.shape == (101, 3) for s in gt.strands)


def test_augment_identity_draw():
    class FixedRng:
        def uniform(self, lo=0.0, hi=1.0, size=None):
            if size == 3:
                return np.ones(3)
            if size == 2:
                return np.ones(2)  # >= 0.5 means no mirror
            return 0.0

    pts = np.random.default_rng(3).standard_normal((11, 3))
    out = synthdata.augment(pts, FixedRng())
    assert np.allclose(out, pts, atol=1e-12)


def test_augment_mirror_negates_x():
    class MirrorRng:
        def uniform(self, lo=0.0, hi=1.0, size=None):
            if size == 3:
                return np.ones(3)
            if size == 2:
                return np.array([0.0, 1.0])  # mirror tangent only
            return 0.0

    pts = np.random.default_rng(4).standard_normal((11, 3))
    out = synthdata.augment(pts, MirrorRng())
    assert np.allclose(out[:, 0], -pts[:, 0], atol=1e-12)
    assert np.allclose(out[:, 1:], pts[:, 1:], atol=1e-12)


def test_augment_rotation_is_isometry():
    rng = np.random.default_rng(5)
    for _ in range(10):
        pts = np.cumsum(rng.standard_normal((21, 3)) * 0.01, axis=0)
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)

        class RotOnly:
            def __init__(self, angle):
                self.angle = angle

            def uniform(self, lo=0.0, hi=1.0, size=None):
                if size == 3:
                    return np.ones(3)
                if size == 2:
                    return np.ones(2)
                return self.angle

        out = synthdata.augment(pts, RotOnly(rng.uniform(0, 2 * np.pi)))
        seg_out = np.linalg.norm(np.diff(out, axis=0), axis=1)
        assert np.allclose(seg, seg_out, atol=1e-12)


def test_build_rig_single_camera():
    cams = synthdata.build_rig(1, radius=0.5, size=64)
    assert len(cams) == 1


def test_build_rig_radius_and_separation():
    center = np.array([0, 0, 0.05])
    cams = synthdata.build_rig(16, radius=0.5, size=64, center=center)
    positions = []
    for c in cams:
        pos = -c.rotation.T @ c.translation
        positions.append(pos)
        assert abs(np.linalg.norm(pos - center) - 0.5) < 1e-9
    positions = np.asarray(positions)
    dirs = (positions - center) / 0.5
    min_angle = 180.0
    for i in range(16):
        for j in range(i + 1, 16):
            ang = np.degrees(np.arccos(np.clip(dirs[i] @ dirs[j], -1, 1)))
            min_angle = min(min_angle, ang)
    assert min_angle > 30.0


@pytest.fixture(scope="module")
def scan_setup():
    style = small_style(family="wavy", strand_count=60)
    gt = synthdata.generate_hairstyle(style, SCALP, seed=8)
    cams = synthdata.build_rig(6, radius=0.5, size=96)
    return gt, cams


def test_simulate_scan_noise_free_on_strands(scan_setup):
    gt, cams = scan_setup
    scan = synthdata.simulate_scan(gt, cams, noise_sigma=0.0,
                                   drop_fraction=0.0, seed=0)
    assert len(scan) > 0
    world = gt.points_world().reshape(-1, 3)
    for seg in scan.points:
        d = np.linalg.norm(seg[:, None, :] - world[None], axis=2).min(axis=1)
        assert d.max() < 1e-12


def test_simulate_scan_clearance(scan_setup):
    gt, cams = scan_setup
    scan = synthdata.simulate_scan(gt, cams, noise_sigma=0.0005, seed=1)
    pts = scan.all_points()
    assert pts.shape[0] > 0
    assert SCALP.distance_to_surface(pts).min() > synthdata.SCALP_CLEARANCE


def test_simulate_scan_within_noise_tube(scan_setup):
    gt, cams = scan_setup
    sigma = 0.0004
    scan = synthdata.simulate_scan(gt, cams, noise_sigma=sigma,
                                   drop_fraction=0.0, seed=2)
    world = gt.points_world().reshape(-1, 3)
    pts = scan.all_points()
    d = np.array([np.linalg.norm(world - p, axis=1).min() for p in pts])
    # 3-sigma tube in 3D: allow a small fraction of outliers
    frac = np.mean(d < 3 * sigma * np.sqrt(3))
    assert frac > 0.99


def test_simulate_scan_segment_sizes_and_dirs(scan_setup):
    gt, cams = scan_setup
    scan = synthdata.simulate_scan(gt, cams, noise_sigma=0.0002, seed=3)
    seg_means = []
    for pts, dirs in zip(scan.points, scan.directions):
        assert 5 <= pts.shape[0] <= 15
        assert dirs.shape == pts.shape
        norms = np.linalg.norm(dirs, axis=1)
        assert np.allclose(norms, 1.0, atol=1e-9)
        # consistent root-to-tip sign: directions agree with the travel of
        # the (noisy) polyline on average
        travel = np.diff(pts, axis=0)
        dots = np.einsum("ij,ij->i", dirs[:-1],
                         travel / np.linalg.norm(travel, axis=1,
                                                 keepdims=True))
        seg_means.append(dots.mean())
        assert dots.mean() > 0.0
    assert np.mean(seg_means) > 0.5


def test_render_targets_alpha_is_coverage(scan_setup):
    gt, cams = scan_setup
    from strandforge.raster import hard_rasterize

    imgs = synthdata.render_targets(gt, cams[:2])
    world = gt.points_world()
    for cam, img in zip(cams[:2], imgs):
        assert img.shape == (96, 96, 4)
        frag = hard_rasterize(world, cam)
        assert np.array_equal(img[:, :, 3] > 0, frag.coverage)
        assert img.min() >= 0 and img.max() <= 1


def test_render_targets_empty_hair():
    empty = synthdata.StrandSet(strands=[], frames=[], scalp=SCALP)
    cams = synthdata.build_rig(1, radius=0.5, size=32)
    img = synthdata.render_targets(empty, cams)[0]
    assert np.all(img[:, :, 3] == 0)
