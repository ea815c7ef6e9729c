import numpy as np
import pytest

from strandforge import autodiff as ad
from strandforge import scalp

from helpers import central_diff, rel_err


def reflect_index(i, n):
    """Symmetric (edge-including) reflection of an index into [0, n)."""
    period = 2 * n
    i = i % period
    if i < 0:
        i += period
    return i if i < n else period - 1 - i


def reference_blur(grad, sigma):
    """Independent dense convolution with symmetric padding."""
    k = scalp.gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    h, w, d = grad.shape
    out = np.zeros_like(grad)
    for i in range(h):
        for j in range(w):
            acc = np.zeros(d)
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    ii = reflect_index(i + a, h)
                    jj = reflect_index(j + b, w)
                    acc += k[a + r] * k[b + r] * grad[ii, jj]
            out[i, j] = acc
    return out


def test_sample_average_of_four():
    tex = scalp.NeuralTexture(2, 2, 1, "shape",
                              np.arange(4.0).reshape(2, 2, 1))
    out = scalp.sample(tex, np.array([[0.5, 0.5]]))
    assert np.allclose(out.data, 1.5)


def test_sample_texel_center_exact():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((6, 4, 3))
    tex = scalp.NeuralTexture(6, 4, 3, "shape", data)
    for (i, j) in [(0, 0), (3, 2), (5, 3)]:
        uv = np.array([[(j + 0.5) / 4, (i + 0.5) / 6]])
        out = scalp.sample(tex, uv)
        assert np.allclose(out.data[0], data[i, j], atol=1e-12)


def test_sample_partition_of_unity():
    tex = scalp.NeuralTexture(5, 7, 1, "shape", np.ones((5, 7, 1)))
    rng = np.random.default_rng(1)
    uv = rng.uniform(0, 1, size=(200, 2))
    out = scalp.sample(tex, uv)
    assert np.allclose(out.data, 1.0, atol=1e-12)


def test_sample_clamps_and_flags(caplog):
    tex = scalp.NeuralTexture(4, 4, 1, "shape",
                              np.arange(16.0).reshape(4, 4, 1))
    with caplog.at_level("WARNING"):
        out = scalp.sample(tex, np.array([[-0.3, 0.5], [0.5, 1.7]]))
    assert "clamped" in caplog.text
    assert np.all(np.isfinite(out.data))


def test_sample_grad_distributes_to_four_texels():
    data = np.zeros((4, 4, 1))
    tex = scalp.NeuralTexture(4, 4, 1, "shape", data)
    uv = np.array([[0.4, 0.6]])
    out = scalp.sample(tex, uv)
    ad.backward(ad.tsum(out))
    g = tex.tensor.grad[:, :, 0]
    assert np.count_nonzero(g) == 4
    assert abs(g.sum() - 1.0) < 1e-12

    def f(x):
        return float(ad.texture_sample(ad.Tensor(x), uv).data.sum())

    num = central_diff(f, data.copy())
    assert rel_err(tex.tensor.grad, num) < 1e-6


def test_blur_sigma_zero_is_identity():
    rng = np.random.default_rng(2)
    g = rng.standard_normal((8, 8, 2))
    out = scalp.blur_gradient(g, 0.0)
    assert out is g


def test_blur_delta_matches_reference_and_preserves_mass():
    g = np.zeros((9, 9, 1))
    g[4, 4, 0] = 1.0
    out = scalp.blur_gradient(g, 2.0)
    ref = reference_blur(g, 2.0)
    assert np.allclose(out, ref, atol=1e-12)
    assert abs(out.sum() - 1.0) < 1e-9


def test_blur_edge_delta_preserves_mass():
    g = np.zeros((8, 8, 1))
    g[0, 0, 0] = 1.0
    out = scalp.blur_gradient(g, 3.0)
    assert abs(out.sum() - 1.0) < 1e-9
    assert np.allclose(out, reference_blur(g, 3.0), atol=1e-12)


def test_blur_constant_field_unchanged():
    g = np.full((6, 6, 2), 0.7)
    out = scalp.blur_gradient(g, 2.5)
    assert np.allclose(out, 0.7, atol=1e-12)


def test_blur_is_linear():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((7, 7, 2))
    b = rng.standard_normal((7, 7, 2))
    left = scalp.blur_gradient(a + 2.0 * b, 1.5)
    right = scalp.blur_gradient(a, 1.5) + 2.0 * scalp.blur_gradient(b, 1.5)
    assert np.allclose(left, right, atol=1e-12)


def test_blur_channelwise_mass():
    rng = np.random.default_rng(4)
    g = rng.standard_normal((12, 10, 3))
    out = scalp.blur_gradient(g, 4.0)
    assert np.allclose(out.sum(axis=(0, 1)), g.sum(axis=(0, 1)), atol=1e-9)


def test_blur_schedule_endpoints_and_midpoint():
    assert scalp.blur_schedule(0, 100) == 16.0
    assert scalp.blur_schedule(100, 100) == 0.0
    assert scalp.blur_schedule(50, 100) == 8.0


def test_root_to_tip_mask():
    L = 100
    m0 = scalp.root_to_tip_mask(0, 500, L)
    assert m0[0] == 1.0 and m0[1:].sum() == 0
    mall = scalp.root_to_tip_mask(500, 500, L)
    assert mall.sum() == L + 1
    mhalf = scalp.root_to_tip_mask(250, 500, L)
    assert mhalf.sum() == 51


def test_scalp_frames_orthonormal_everywhere():
    surf = scalp.ScalpSurface(radius=0.1)
    rng = np.random.default_rng(5)
    for uv in rng.uniform(0.02, 0.95, size=(50, 2)):
        f = surf.frame_at(uv)
        f.validate()
        assert abs(np.linalg.norm(f.origin - surf.center) - 0.1) < 1e-12


def test_scalp_uv_injective():
    surf = scalp.ScalpSurface(radius=0.1)
    rng = np.random.default_rng(6)
    uv = rng.uniform(0.01, 0.95, size=(300, 2))
    pts = surf.uv_to_point(uv)
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    np.fill_diagonal(d, 1.0)
    assert d.min() > 1e-6


def test_root_layout_inside_unit_square():
    rng = np.random.default_rng(7)
    uv = scalp.root_layout(500, rng)
    assert uv.shape == (500, 2)
    assert uv.min() > 0.0 and uv.max() < 1.0
    uv2 = scalp.root_layout(500, np.random.default_rng(7))
    assert np.array_equal(uv, uv2)


def test_schedule_off_is_noop_on_gradients():
    # sigma = 0 blur plus an all-ones mask must leave gradients bit-equal
    rng = np.random.default_rng(8)
    g = rng.standard_normal((6, 6, 4))
    assert scalp.blur_gradient(g, scalp.blur_schedule(10, 10)) is g
    mask = scalp.root_to_tip_mask(1000, 10, 5)
    pts = ad.Tensor(rng.standard_normal((2, 6, 3)), requires_grad=True)
    out = ad.scale_grad(pts, mask)
    seed = rng.standard_normal((2, 6, 3))
    ad.backward(out, seed)
    assert np.array_equal(pts.grad, seed)
