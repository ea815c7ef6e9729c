import numpy as np
import pytest

from strandforge import autodiff as ad

from helpers import central_diff, check_grads, rel_err


def test_square_scalar():
    x = ad.Tensor(3.0, requires_grad=True)
    y = ad.mul(x, x)
    assert y.item() == 9.0
    ad.backward(y)
    assert np.allclose(x.grad, 6.0)


def test_sin_at_zero():
    x = ad.Tensor(0.0, requires_grad=True)
    y = ad.sin(x)
    assert y.item() == 0.0
    ad.backward(y)
    assert np.allclose(x.grad, 1.0)


def test_sum_grad_is_ones():
    x = ad.Tensor([1.0, 2.0, 3.0, 4.0], requires_grad=True)
    ad.backward(ad.tsum(x))
    assert np.array_equal(x.grad, np.ones(4))


def test_backward_accumulates():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.tsum(ad.mul(x, x))
    ad.backward(y)
    g1 = x.grad.copy()
    ad.backward(y)
    assert np.allclose(x.grad, 2.0 * g1)


def test_backward_before_forward_fails():
    x = ad.Tensor([1.0], requires_grad=True)
    with pytest.raises(RuntimeError, match="backward before forward"):
        ad.backward(x)


def test_backward_shape_mismatch():
    x = ad.Tensor([1.0, 2.0], requires_grad=True)
    y = ad.mul(x, x)
    with pytest.raises(ValueError, match="output_grad shape"):
        ad.backward(y, np.ones(3))


def test_unsupported_broadcast_fails():
    a = ad.Tensor(np.zeros((3, 2)))
    b = ad.Tensor(np.zeros((4,)))
    with pytest.raises(ValueError, match="add"):
        ad.add(a, b)


def test_matmul_grad_vs_fd():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((3, 3))
    b = rng.standard_normal((3, 3))
    err = check_grads(lambda x, y: ad.tsum(ad.matmul(x, y)), [a, b], tol=1e-6)
    assert err < 1e-6


def test_backward_linearity():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((4, 4))

    t = ad.Tensor(x, requires_grad=True)
    la = ad.tsum(ad.mul(t, t))
    lb = ad.tsum(ad.sin(t))
    ad.backward(ad.add(la, lb))
    combined = t.grad.copy()

    t2 = ad.Tensor(x, requires_grad=True)
    ad.backward(ad.tsum(ad.mul(t2, t2)))
    ad.backward(ad.tsum(ad.sin(t2)))
    assert np.allclose(combined, t2.grad, atol=1e-12)


def test_composite_conv_resize_l2_vs_fd():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((2, 8, 8))
    w = rng.standard_normal((3, 2, 3, 3)) * 0.5

    def build(xt, wt):
        y = ad.conv2d(xt, wt, pad=1)
        y = ad.bilinear_resize(y, 4, 4)
        return ad.tsum(ad.mul(y, y))

    err = check_grads(build, [x, w], tol=1e-4)
    assert err < 1e-4


ELEMENTWISE_CASES = [
    ("add", lambda x, y: ad.tsum(ad.add(x, y)), 2),
    ("sub", lambda x, y: ad.tsum(ad.sub(x, y)), 2),
    ("mul", lambda x, y: ad.tsum(ad.mul(x, y)), 2),
    ("div", lambda x, y: ad.tsum(ad.div(x, ad.add(ad.mul(y, y), 1.0))), 2),
    ("sin", lambda x: ad.tsum(ad.sin(x)), 1),
    ("exp", lambda x: ad.tsum(ad.exp(x)), 1),
    ("softplus", lambda x: ad.tsum(ad.softplus(x)), 1),
    ("leaky", lambda x: ad.tsum(ad.leaky(x, 0.1)), 1),
    ("sigmoid", lambda x: ad.tsum(ad.sigmoid(x)), 1),
    ("sqrt", lambda x: ad.tsum(ad.sqrt(ad.add(ad.mul(x, x), 0.5))), 1),
    ("abs", lambda x: ad.tsum(ad.absolute(x)), 1),
    ("log", lambda x: ad.tsum(ad.log(ad.add(ad.mul(x, x), 0.5))), 1),
    ("power", lambda x: ad.tsum(ad.power(ad.add(ad.mul(x, x), 1.0), 1.5)), 1),
]


@pytest.mark.parametrize("name,build,nargs", ELEMENTWISE_CASES,
                         ids=[c[0] for c in ELEMENTWISE_CASES])
def test_elementwise_grads_vs_fd(name, build, nargs):
    rng = np.random.default_rng(hash(name) % 2**32)
    for trial in range(3):
        shape = tuple(rng.integers(2, 5, size=rng.integers(1, 3)))
        args = [rng.standard_normal(shape) + 0.2 for _ in range(nargs)]
        # keep leaky/abs away from their kinks
        if name in ("leaky", "abs"):
            args = [np.where(np.abs(a) < 1e-3, 0.1, a) for a in args]
        check_grads(build, args, tol=1e-5)


def test_broadcast_grads_vs_fd():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((3, 1, 4))
    b = rng.standard_normal((2, 4))
    check_grads(lambda x, y: ad.tsum(ad.mul(x, y)), [a, b], tol=1e-6)


def test_reduction_adjoint_restores_shape():
    rng = np.random.default_rng(4)
    x = ad.Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    ad.backward(ad.tsum(ad.tmean(x, axis=1)))
    assert x.grad.shape == (3, 5)
    assert np.allclose(x.grad, 1.0 / 5.0)


def test_conv1d_identity_kernel():
    x = ad.Tensor(np.arange(6.0).reshape(1, 6))
    w = ad.Tensor(np.ones((1, 1, 1)))
    y = ad.conv1d(x, w, stride=1, pad=0)
    assert np.array_equal(y.data, x.data)


def test_conv1d_strided_grad_vs_fd():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((2, 11))
    w = rng.standard_normal((3, 2, 5)) * 0.3
    check_grads(lambda a, b: ad.tsum(ad.sin(ad.conv1d(a, b, stride=2, pad=2))),
                [x, w], tol=1e-5)


def test_bilinear_downsample_constant():
    x = ad.Tensor(np.full((1, 8, 8), 3.25))
    y = ad.bilinear_resize(x, 4, 4)
    assert np.allclose(y.data, 3.25, atol=1e-12)


def test_concat_and_slice_grads():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((2, 3))
    b = rng.standard_normal((4, 3))

    def build(x, y):
        z = ad.concat([x, y], axis=0)
        return ad.tsum(ad.mul(z[1:5], z[1:5]))

    check_grads(build, [a, b], tol=1e-6)


def test_cumsum_adjoint_is_suffix_sum():
    rng = np.random.default_rng(7)
    x = ad.Tensor(rng.standard_normal(6), requires_grad=True)
    y = ad.cumsum(x, axis=0)
    seed = rng.standard_normal(6)
    ad.backward(y, seed)
    expect = np.array([seed[i:].sum() for i in range(6)])
    assert np.allclose(x.grad, expect, atol=1e-12)


def test_forward_deterministic():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((4, 4))
    w = rng.standard_normal((2, 4))
    r1 = ad.matmul(ad.Tensor(w), ad.Tensor(x)).data
    r2 = ad.matmul(ad.Tensor(w), ad.Tensor(x)).data
    assert np.array_equal(r1, r2)


# --- Adam ---


def test_adam_zero_grad_no_move():
    p = ad.Tensor(np.ones(3), requires_grad=True)
    p.grad = np.zeros(3)
    opt = ad.Adam([p], lr=0.1)
    opt.step()
    assert np.array_equal(p.data, np.ones(3))


def test_adam_first_step_magnitude():
    # bias-corrected first step moves by ~lr against the gradient sign
    p = ad.Tensor(np.zeros(1), requires_grad=True)
    p.grad = np.ones(1)
    opt = ad.Adam([p], lr=0.1)
    opt.step()
    expect = -0.1 * 1.0 / (1.0 + 1e-8)
    assert abs(p.data[0] - expect) < 1e-12


def test_adam_constant_gradient_monotone():
    p = ad.Tensor(np.zeros(1), requires_grad=True)
    opt = ad.Adam([p], lr=0.05)
    prev = 0.0
    for _ in range(20):
        p.grad = np.ones(1)
        opt.step()
        assert p.data[0] < prev
        prev = p.data[0]


def test_adam_skips_nonfinite():
    p = ad.Tensor(np.ones(2), requires_grad=True)
    p.grad = np.array([np.nan, 1.0])
    opt = ad.Adam([p], lr=0.1)
    opt.step()
    assert np.array_equal(p.data, np.ones(2))
    assert opt.skipped == 1


# --- gather/scatter ops ---


def test_texture_sample_center_average():
    tex = ad.Tensor(np.arange(4.0).reshape(2, 2, 1))
    out = ad.texture_sample(tex, np.array([[0.5, 0.5]]))
    assert np.allclose(out.data, 1.5)


def test_texture_sample_texel_center_exact():
    rng = np.random.default_rng(9)
    tex = rng.standard_normal((4, 4, 3))
    uv = np.array([[(1 + 0.5) / 4, (2 + 0.5) / 4]])
    out = ad.texture_sample(ad.Tensor(tex), uv)
    assert np.allclose(out.data[0], tex[2, 1], atol=1e-12)


def test_texture_sample_grad_vs_fd():
    rng = np.random.default_rng(10)
    tex = rng.standard_normal((4, 5, 2))
    uv = rng.uniform(0.1, 0.9, size=(6, 2))
    check_grads(
        lambda t: ad.tsum(ad.sin(ad.texture_sample(t, uv))), [tex], tol=1e-5)


def test_soft_splat_grads_vs_fd():
    rng = np.random.default_rng(11)
    px = rng.uniform(1.3, 4.3, size=(5, 2))
    desc = rng.standard_normal((5, 3))

    def build(p, d):
        out = ad.soft_splat(p, d, 6, 6)
        return ad.tsum(ad.mul(out, out))

    check_grads(build, [px, desc], tol=1e-4)


def test_project_jacobian_vs_fd():
    rng = np.random.default_rng(12)
    pts = rng.standard_normal((4, 3)) * 0.1
    pts[:, 2] += 2.0
    rot = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    if np.linalg.det(rot) < 0:
        rot[:, 0] *= -1
    trans = np.array([0.05, -0.02, 0.1])
    seed = rng.standard_normal((4, 3))

    def build(w):
        return ad.project(w, rot, trans, 100.0, 110.0, 32.0, 30.0)

    t = ad.Tensor(pts, requires_grad=True)
    ad.backward(build(t), seed)

    def f(x):
        return float(np.sum(build(ad.Tensor(x)).data * seed))

    num = central_diff(f, pts.copy())
    assert rel_err(t.grad, num) < 1e-6


def test_scale_grad_identity_forward_masked_backward():
    rng = np.random.default_rng(13)
    pts = rng.standard_normal((2, 5, 3))
    mask = np.array([1.0, 1.0, 0.0, 0.0, 1.0])
    t = ad.Tensor(pts, requires_grad=True)
    out = ad.scale_grad(t, mask)
    assert np.array_equal(out.data, pts)
    ad.backward(ad.tsum(out))
    assert np.allclose(t.grad[:, mask == 0], 0.0)
    assert np.allclose(t.grad[:, mask == 1], 1.0)
