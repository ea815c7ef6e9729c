"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps an ndarray and remembers how it was computed; calling
`backward` on a scalar (or with an explicit output gradient) walks the tape
in reverse topological order and accumulates gradients additively into every
tensor with requires_grad. Gradients are never mutated in place; zeroing is
explicit via `zero_grad`.

Taped (define-by-run) rather than compiled: the fitting loop changes shapes
across iterations (annealing masks, per-view fragment counts), so graphs are
rebuilt every step.
"""

import logging

import numpy as np

from . import kernels

logger = logging.getLogger(__name__)


class Tensor:
    """Node of the differentiation tape.

    data is always a float64 ndarray. `_backward(g)` returns
    (parent, parent_gradient) pairs; None gradients are skipped.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward",
                 "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None,
                 _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return (f"Tensor(shape={self.data.shape}, op={self._op!r}, "
                f"requires_grad={self.requires_grad})")

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 \
            else float(self.data)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward, op):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents),
                  _backward=backward if needs else None, _op=op)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _result(a.data + b.data, (a, b), bwd, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def bwd(g):
        return ((a, _unbroadcast(g, a.shape)),
                (b, _unbroadcast(-g, b.shape)))

    return _result(a.data - b.data, (a, b), bwd, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def bwd(g):
        return ((a, _unbroadcast(g * b.data, a.shape)),
                (b, _unbroadcast(g * a.data, b.shape)))

    return _result(a.data * b.data, (a, b), bwd, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")

    def bwd(g):
        return ((a, _unbroadcast(g / b.data, a.shape)),
                (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape)))

    return _result(a.data / b.data, (a, b), bwd, "div")


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: ((a, -g),), "neg")


def sin(a):
    a = as_tensor(a)
    return _result(np.sin(a.data), (a,),
                   lambda g: ((a, g * np.cos(a.data)),), "sin")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: ((a, g * out),), "exp")


def log(a):
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: ((a, g / a.data),), "log")


def sqrt(a):
    """Square root with a zero-safe adjoint (subgradient 0 at x = 0)."""
    a = as_tensor(a)
    out = np.sqrt(a.data)

    def bwd(g):
        d = np.where(a.data > 1e-30, 0.5 / np.where(a.data > 1e-30, out, 1.0),
                     0.0)
        return ((a, g * d),)

    return _result(out, (a,), bwd, "sqrt")


def absolute(a):
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,),
                   lambda g: ((a, g * np.sign(a.data)),), "abs")


def softplus(a):
    a = as_tensor(a)
    out = np.logaddexp(0.0, a.data)

    def bwd(g):
        return ((a, g * _sigmoid(a.data)),)

    return _result(out, (a,), bwd, "softplus")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _result(out, (a,), lambda g: ((a, g * out * (1.0 - out)),),
                   "sigmoid")


def leaky(a, slope=0.01):
    """Leaky rectifier: x for x > 0, slope * x otherwise."""
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(g):
        return ((a, g * np.where(mask, 1.0, slope)),)

    return _result(np.where(mask, a.data, slope * a.data), (a,), bwd, "leaky")


def power(a, k):
    """Elementwise a**k for a constant scalar exponent."""
    a = as_tensor(a)
    out = a.data ** k

    def bwd(g):
        return ((a, g * k * a.data ** (k - 1)),)

    return _result(out, (a,), bwd, "power")


def clamp(a, lo=None, hi=None):
    """Clamp; the adjoint passes gradient only through unclamped entries."""
    a = as_tensor(a)
    out = np.clip(a.data, lo, hi)
    passthrough = np.ones_like(a.data)
    if lo is not None:
        passthrough[a.data < lo] = 0.0
    if hi is not None:
        passthrough[a.data > hi] = 0.0

    def bwd(g):
        return ((a, g * passthrough),)

    return _result(out, (a,), bwd, "clamp")


def clamp_min(a, lo):
    return clamp(a, lo=lo)


# ---------------------------------------------------------------------------
# shape / structure


def reshape(a, shape):
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,),
                   lambda g: ((a, g.reshape(a.shape)),), "reshape")


def getitem(a, key):
    a = as_tensor(a)
    out = a.data[key]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return ((a, full),)

    return _result(out, (a,), bwd, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        parts = np.split(g, splits, axis=axis)
        return tuple(zip(tensors, parts))

    return _result(out, tensors, bwd, "concat")


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.shape).copy()),)

    return _result(out, (a,), bwd, "sum")


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def cumsum(a, axis):
    """Running sum; the adjoint is the reversed running sum (suffix sum)."""
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)

    def bwd(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return ((a, rev),)

    return _result(out, (a,), bwd, "cumsum")


# ---------------------------------------------------------------------------
# linear algebra and convolution


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expected 2D operands, got {a.shape} @ "
                         f"{b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ: {a.shape} @ "
                         f"{b.shape}")

    def bwd(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _result(a.data @ b.data, (a, b), bwd, "matmul")


def conv1d(x, w, stride=1, pad=0):
    """1D convolution, x (Cin, L) with w (Cout, Cin, K)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ValueError(f"conv1d: bad shapes x={x.shape} w={w.shape}")
    out = kernels.conv1d_fwd(x.data, w.data, stride, pad)

    def bwd(g):
        dx, dw = kernels.conv1d_bwd(x.data, w.data,
                                    np.ascontiguousarray(g), stride, pad)
        return ((x, dx), (w, dw))

    return _result(out, (x, w), bwd, "conv1d")


def conv2d(x, w, pad=0):
    """Stride-1 2D convolution, x (Cin, H, W) with w (Cout, Cin, kh, kw)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.data.ndim != 3 or w.data.ndim != 4 or x.shape[0] != w.shape[1]:
        raise ValueError(f"conv2d: bad shapes x={x.shape} w={w.shape}")
    out = kernels.conv2d_fwd(x.data, w.data, pad)

    def bwd(g):
        dx, dw = kernels.conv2d_bwd(x.data, w.data,
                                    np.ascontiguousarray(g), pad)
        return ((x, dx), (w, dw))

    return _result(out, (x, w), bwd, "conv2d")


def _interp_matrix(n_out, n_in):
    """Rows of bilinear interpolation weights mapping n_in -> n_out samples."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m[np.arange(n_out), i0] += 1.0 - frac
    m[np.arange(n_out), i1] += frac
    return m


_INTERP_CACHE = {}


def _interp_cached(n_out, n_in):
    key = (n_out, n_in)
    if key not in _INTERP_CACHE:
        _INTERP_CACHE[key] = _interp_matrix(n_out, n_in)
    return _INTERP_CACHE[key]


def bilinear_resize(x, out_h, out_w):
    """Bilinear resize of (C, H, W) via separable interpolation matrices."""
    x = as_tensor(x)
    c, h, w = x.shape
    mh = _interp_cached(out_h, h)
    mw = _interp_cached(out_w, w)
    out = np.einsum("ij,cjk,lk->cil", mh, x.data, mw, optimize=True)

    def bwd(g):
        return ((x, np.einsum("ji,cjk,kl->cil", mh, g, mw, optimize=True)),)

    return _result(out, (x,), bwd, "bilinear_resize")


_BINOM_CACHE = {}


def _binom_down_matrix(n):
    """Rows of the normalized 4-tap binomial decimator (n -> n // 2)."""
    key = ("down", n)
    if key not in _BINOM_CACHE:
        m = np.zeros((n // 2, n))
        taps = np.array([1.0, 3.0, 3.0, 1.0]) / 8.0
        for i in range(n // 2):
            for k, t in enumerate(taps):
                j = min(max(2 * i - 1 + k, 0), n - 1)
                m[i, j] += t
        _BINOM_CACHE[key] = m
    return _BINOM_CACHE[key]


def _binom_up_matrix(n):
    """Rows of the filtered 2x upsampler (n -> 2n): the row-normalized
    transpose of the decimator, which keeps the two aligned and preserves
    constants."""
    key = ("up", n)
    if key not in _BINOM_CACHE:
        _BINOM_CACHE[key] = _renorm_rows(_binom_down_matrix(2 * n).T.copy())
    return _BINOM_CACHE[key]


def _renorm_rows(m):
    return m / m.sum(axis=1, keepdims=True)


def resample2(x, mode):
    """Anti-aliased 2x resampling of (C, H, W): mode "down2" or "up2"."""
    x = as_tensor(x)
    c, h, w = x.shape
    if mode == "down2":
        if h % 2 or w % 2:
            raise ValueError(f"resample2: down2 needs even sizes, got "
                             f"({h}, {w})")
        mh, mw = _binom_down_matrix(h), _binom_down_matrix(w)
    elif mode == "up2":
        mh, mw = _binom_up_matrix(h), _binom_up_matrix(w)
    else:
        raise ValueError(f"resample2: unknown mode {mode!r}")
    out = np.einsum("ij,cjk,lk->cil", mh, x.data, mw, optimize=True)

    def bwd(g):
        return ((x, np.einsum("ji,cjk,kl->cil", mh, g, mw, optimize=True)),)

    return _result(out, (x,), bwd, "resample2")


# ---------------------------------------------------------------------------
# gather / scatter ops used by the renderer


def texture_sample(tex, uv):
    """Bilinear texture lookup, differentiable w.r.t. the texture.

    tex: (H, W, D) Tensor. uv: (N, 2) constant array in [0, 1]^2 (texel
    centers at (i + 0.5) / size, edge-clamped).
    """
    tex = as_tensor(tex)
    uv = np.asarray(uv, dtype=np.float64)
    out = kernels.texture_gather(tex.data, uv)
    h, w, d = tex.shape

    def bwd(g):
        return ((tex, kernels.texture_scatter(h, w, d, uv,
                                              np.ascontiguousarray(g))),)

    return _result(out, (tex,), bwd, "texture_sample")


def gather_rows(x, idx):
    """Row gather out[i] = x[idx[i]]; adjoint scatter-adds."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = x.data[idx]

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, idx, g)
        return ((x, dx),)

    return _result(out, (x,), bwd, "gather_rows")


def lerp_rows(x, i0, i1, frac):
    """out[i] = (1 - frac[i]) * x[i0[i]] + frac[i] * x[i1[i]] over axis 0."""
    x = as_tensor(x)
    i0 = np.asarray(i0, dtype=np.int64)
    i1 = np.asarray(i1, dtype=np.int64)
    frac = np.asarray(frac, dtype=np.float64)
    f = frac.reshape(frac.shape + (1,) * (x.data.ndim - 1))
    out = (1.0 - f) * x.data[i0] + f * x.data[i1]

    def bwd(g):
        dx = np.zeros_like(x.data)
        np.add.at(dx, i0, (1.0 - f) * g)
        np.add.at(dx, i1, f * g)
        return ((x, dx),)

    return _result(out, (x,), bwd, "lerp_rows")


def soft_splat(px, desc, height, width):
    """Weight-normalized bilinear splatting of point descriptors.

    px: (P, 2) Tensor of continuous pixel coordinates. desc: (P, C) Tensor.
    Returns (H, W, C+1): normalized descriptors plus the raw weight channel;
    pixels nobody touches are exactly zero. Differentiable w.r.t. both the
    positions and the descriptors.
    """
    px, desc = as_tensor(px), as_tensor(desc)
    gsum, wsum = kernels.splat_scatter(px.data, desc.data, height, width)
    covered = wsum > 0
    denom = np.where(covered, wsum, 1.0)
    h = gsum / denom[:, :, None]
    h[~covered] = 0.0
    out = np.concatenate([h, wsum[:, :, None]], axis=2)

    def bwd(g):
        dh = g[:, :, :-1]
        dwchan = g[:, :, -1]
        dgsum = dh / denom[:, :, None]
        dgsum[~covered] = 0.0
        dwsum = -np.einsum("hwc,hwc->hw", dgsum, h) + dwchan
        dpx, ddesc = kernels.splat_gather(
            px.data, desc.data, np.ascontiguousarray(dgsum),
            np.ascontiguousarray(dwsum))
        return ((px, dpx), (desc, ddesc))

    return _result(out, (px, desc), bwd, "soft_splat")


def apply_frames(points, mats, origins):
    """Batched local-to-world: out[n, k] = points[n, k] @ mats[n] + origins[n].

    mats/origins are constants (per-strand frames are fixed by the root
    layout); gradients flow to the points only.
    """
    points = as_tensor(points)
    mats = np.asarray(mats, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.float64)
    out = np.matmul(points.data, mats) + origins[:, None, :]

    def bwd(g):
        return ((points, np.matmul(g, mats.transpose(0, 2, 1))),)

    return _result(out, (points,), bwd, "apply_frames")


def scale_grad(points, node_mask):
    """Identity in the forward pass; multiplies the gradient by node_mask.

    Used for root-to-tip annealing: the mask weights per-node gradients
    without changing the rendered/measured strand.
    """
    points = as_tensor(points)
    mask = np.asarray(node_mask, dtype=np.float64)
    m = mask.reshape((1,) * (points.data.ndim - 2) + (mask.size, 1)) \
        if points.data.ndim >= 2 else mask

    def bwd(g):
        return ((points, g * m),)

    return _result(points.data, (points,), bwd, "scale_grad")


def project(world, rot, trans, fx, fy, cx, cy):
    """Pinhole projection of (P, 3) world points -> (P, 3) [px, py, depth].

    Differentiable w.r.t. the points; the camera is constant. Callers must
    pre-filter points to depth > near.
    """
    world = as_tensor(world)
    rot = np.asarray(rot, dtype=np.float64)
    trans = np.asarray(trans, dtype=np.float64)
    cam = world.data @ rot.T + trans
    z = cam[:, 2]
    out = np.stack([fx * cam[:, 0] / z + cx, fy * cam[:, 1] / z + cy, z],
                   axis=1)

    def bwd(g):
        dcam = np.empty_like(cam)
        dcam[:, 0] = fx * g[:, 0] / z
        dcam[:, 1] = fy * g[:, 1] / z
        dcam[:, 2] = (-fx * cam[:, 0] * g[:, 0] - fy * cam[:, 1] * g[:, 1]) \
            / (z * z) + g[:, 2]
        return ((world, dcam @ rot),)

    return _result(out, (world,), bwd, "project")


# ---------------------------------------------------------------------------
# backward driver


def _topo_order(out):
    order, seen, stack = [], set(), [(out, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(out, output_grad=None):
    """Accumulate d(out)/d(leaf) into .grad of every requires_grad tensor.

    Repeated calls accumulate additively; call zero_grad between steps.
    """
    if not out._parents:
        raise RuntimeError("backward before forward: tensor has no graph")
    if output_grad is None:
        seed = np.ones_like(out.data)
    else:
        seed = np.asarray(output_grad, dtype=np.float64)
        if seed.shape != out.data.shape:
            raise ValueError(f"backward: output_grad shape {seed.shape} does "
                             f"not match output {out.data.shape}")
        seed = seed.copy()

    grads = {out: seed}
    for node in reversed(_topo_order(out)):
        g = grads.pop(node, None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(parent)
            grads[parent] = pg if acc is None else acc + pg


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# ---------------------------------------------------------------------------
# optimizer


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction; mutates param and state arrays.

    state is a dict with keys m, v, t (lazily initialized to zeros).
    Returns False (and leaves everything untouched) on non-finite gradients.
    """
    if not np.all(np.isfinite(grad)):
        return False
    if not state:
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad * grad
    mhat = state["m"] / (1.0 - beta1 ** t)
    vhat = state["v"] / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
    return True


class Adam:
    """Adam over a list of Tensors; skips (and reports) non-finite grads."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.state = [dict() for _ in self.params]
        self.skipped = 0

    def step(self):
        for p, st in zip(self.params, self.state):
            if p.grad is None:
                continue
            ok = adam_step(p.data, p.grad, st, self.lr, self.beta1,
                           self.beta2, self.eps)
            if not ok:
                self.skipped += 1
                logger.warning("adam: non-finite gradient, skipping update "
                            "for tensor of shape %s", p.shape)

    def zero_grad(self):
        zero_grad(self.params)
