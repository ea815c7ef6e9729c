"""Shared test oracles, independent of the library code they check."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite-difference gradient of scalar f at x, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    """Norm-relative error between two gradient arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), 1e-10)
    return np.linalg.norm((a - b).ravel()) / denom


def clip_to_box(p0, p1, xmin, xmax, ymin, ymax):
    """Liang-Barsky parameter interval of a segment inside a box, or None."""
    dx, dy = p1[0] - p0[0], p1[1] - p0[1]
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, p0[0] - xmin), (dx, xmax - p0[0]),
                 (-dy, p0[1] - ymin), (dy, ymax - p0[1])):
        if p == 0:
            if q < 0:
                return None
        else:
            r = q / p
            if p < 0:
                if r > t1:
                    return None
                if r > t0:
                    t0 = r
            else:
                if r < t0:
                    return None
                if r < t1:
                    t1 = r
    return (t0, t1) if t1 > t0 else None


def raster_cover_oracle(p0, p1, size):
    """Exact set of cells a 2D segment crosses with positive length."""
    lo = np.floor(np.minimum(p0, p1)).astype(int) - 1
    hi = np.floor(np.maximum(p0, p1)).astype(int) + 1
    cells = {}
    for cx in range(max(lo[0], 0), min(hi[0], size - 1) + 1):
        for cy in range(max(lo[1], 0), min(hi[1], size - 1) + 1):
            iv = clip_to_box(p0, p1, cx, cx + 1.0, cy, cy + 1.0)
            if iv is not None:
                cells[(cx, cy)] = iv
    return cells


def check_grads(build, inputs, tol=1e-5, h=1e-5, seed_grad=None):
    """Compare reverse-mode gradients of a scalar graph to central diffs.

    build(*tensors) must construct the graph from autodiff Tensors and
    return the scalar output Tensor. inputs is a list of ndarrays; every
    input is checked.
    """
    from strandforge import autodiff as ad

    tensors = [ad.Tensor(x, requires_grad=True) for x in inputs]
    out = build(*tensors)
    ad.backward(out, seed_grad)
    errors = []
    for k, x in enumerate(inputs):
        def f(xk, _k=k):
            args = [ad.Tensor(v) for v in inputs]
            args[_k] = ad.Tensor(xk)
            val = build(*args).data
            if seed_grad is not None:
                return float(np.sum(val * seed_grad))
            return float(np.sum(val))
        num = central_diff(f, x.copy(), h=h)
        errors.append(rel_err(tensors[k].grad, num))
    worst = max(errors)
    assert worst < tol, f"gradient mismatch: rel err {worst:.3e} >= {tol}"
    return worst
