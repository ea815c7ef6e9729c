"""Numba-jitted twins of the numpy kernels.

Same signatures and the same arithmetic as numpy_backend; loops are ordered
so accumulation matches the vectorized path (parity within float rounding,
exact for the rasterizer's fragment selection).
"""

import numpy as np
from numba import njit

from .numpy_backend import grid_nn_build  # build stage is shared

__all__ = [
    "raster_lines", "splat_scatter", "splat_gather",
    "texture_gather", "texture_scatter",
    "conv2d_fwd", "conv2d_bwd", "conv1d_fwd", "conv1d_bwd",
    "grid_nn_build", "grid_nn_query",
]


@njit(cache=True)
def _raster_impl(p0, p1, invz0, invz1, height, width, owner, tpar, zbuf):
    S = p0.shape[0]
    for s in range(S):
        x0 = p0[s, 0]
        y0 = p0[s, 1]
        dx = p1[s, 0] - x0
        dy = p1[s, 1] - y0
        ta, tb = 0.0, 1.0
        valid = True
        for side in range(4):
            if side == 0:
                p, q = -dx, x0
            elif side == 1:
                p, q = dx, width - x0
            elif side == 2:
                p, q = -dy, y0
            else:
                p, q = dy, height - y0
            if p == 0.0:
                if q < 0.0:
                    valid = False
                    break
            else:
                r = q / p
                if p < 0.0:
                    if r > ta:
                        ta = r
                else:
                    if r < tb:
                        tb = r
        if not valid or ta > tb:
            continue

        xa = x0 + ta * dx
        ya = y0 + ta * dy
        ix = int(np.floor(xa))
        iy = int(np.floor(ya))
        if ix > width - 1:
            ix = width - 1
        if iy > height - 1:
            iy = height - 1

        t_prev = ta
        iza = invz0[s]
        izb = invz1[s]
        for _ in range(2 * (height + width) + 4):
            if dx > 0.0:
                tx = ((ix + 1) - x0) / dx
            elif dx < 0.0:
                tx = (ix - x0) / dx
            else:
                tx = np.inf
            if dy > 0.0:
                ty = ((iy + 1) - y0) / dy
            elif dy < 0.0:
                ty = (iy - y0) / dy
            else:
                ty = np.inf
            t_next = tx if tx < ty else ty
            last = t_next >= tb
            if last:
                t_next = tb
            if t_next > t_prev:  # corner touches never produce fragments
                tmid = 0.5 * (t_prev + t_next)
                ex = int(np.floor(x0 + dx * tmid))
                ey = int(np.floor(y0 + dy * tmid))
                if 0 <= ex < width and 0 <= ey < height:
                    iz = iza + (izb - iza) * tmid
                    if owner[ey, ex] < 0 or iz > zbuf[ey, ex]:
                        owner[ey, ex] = s
                        tpar[ey, ex] = tmid
                        zbuf[ey, ex] = iz
            if last:
                break
            if tx <= ty:
                ix += 1 if dx > 0.0 else -1
            else:
                iy += 1 if dy > 0.0 else -1
            t_prev = t_next


def raster_lines(p0, p1, invz0, invz1, height, width):
    """Z-buffered segment rasterization; see numpy_backend.raster_lines."""
    owner = np.full((height, width), -1, dtype=np.int64)
    tpar = np.zeros((height, width))
    zbuf = np.zeros((height, width))
    if p0.shape[0]:
        _raster_impl(p0, p1, invz0, invz1, height, width, owner, tpar, zbuf)
    return owner, tpar, zbuf


@njit(cache=True)
def _splat_scatter_impl(px, g, gsum, wsum):
    height, width = wsum.shape
    P, C = g.shape
    for cy in range(2):
        for cx in range(2):
            for p in range(P):
                fx = px[p, 0] - 0.5
                fy = px[p, 1] - 0.5
                ix = int(np.floor(fx)) + cx
                iy = int(np.floor(fy)) + cy
                if ix < 0 or ix >= width or iy < 0 or iy >= height:
                    continue
                ax = fx - np.floor(fx)
                ay = fy - np.floor(fy)
                w = (ax if cx else 1.0 - ax) * (ay if cy else 1.0 - ay)
                for c in range(C):
                    gsum[iy, ix, c] += w * g[p, c]
                wsum[iy, ix] += w


def splat_scatter(px, g, height, width):
    gsum = np.zeros((height, width, g.shape[1]))
    wsum = np.zeros((height, width))
    if px.shape[0]:
        _splat_scatter_impl(px, g, gsum, wsum)
    return gsum, wsum


@njit(cache=True)
def _splat_gather_impl(px, g, dgsum, dwsum, dpx, dg):
    height, width = dwsum.shape
    P, C = g.shape
    for p in range(P):
        fx = px[p, 0] - 0.5
        fy = px[p, 1] - 0.5
        ix0 = int(np.floor(fx))
        iy0 = int(np.floor(fy))
        ax = fx - np.floor(fx)
        ay = fy - np.floor(fy)
        for cy in range(2):
            for cx in range(2):
                ix = ix0 + cx
                iy = iy0 + cy
                if ix < 0 or ix >= width or iy < 0 or iy >= height:
                    continue
                wxv = ax if cx else 1.0 - ax
                wyv = ay if cy else 1.0 - ay
                w = wxv * wyv
                dw = dwsum[iy, ix]
                for c in range(C):
                    dg[p, c] += w * dgsum[iy, ix, c]
                    dw += g[p, c] * dgsum[iy, ix, c]
                sx = 1.0 if cx else -1.0
                sy = 1.0 if cy else -1.0
                dpx[p, 0] += dw * sx * wyv
                dpx[p, 1] += dw * sy * wxv


def splat_gather(px, g, dgsum, dwsum):
    dpx = np.zeros((px.shape[0], 2))
    dg = np.zeros_like(g)
    if px.shape[0]:
        _splat_gather_impl(px, g, dgsum, dwsum, dpx, dg)
    return dpx, dg


@njit(cache=True)
def _texture_gather_impl(tex, uv, out):
    height, width, depth = tex.shape
    for p in range(uv.shape[0]):
        gx = uv[p, 0] * width - 0.5
        gy = uv[p, 1] * height - 0.5
        ix0 = int(np.floor(gx))
        iy0 = int(np.floor(gy))
        ax = gx - ix0
        ay = gy - iy0
        for cy in range(2):
            for cx in range(2):
                ix = min(max(ix0 + cx, 0), width - 1)
                iy = min(max(iy0 + cy, 0), height - 1)
                w = (ax if cx else 1.0 - ax) * (ay if cy else 1.0 - ay)
                for d in range(depth):
                    out[p, d] += w * tex[iy, ix, d]


def texture_gather(tex, uv):
    out = np.zeros((uv.shape[0], tex.shape[2]))
    if uv.shape[0]:
        _texture_gather_impl(tex, uv, out)
    return out


@njit(cache=True)
def _texture_scatter_impl(uv, dout, dtex):
    height, width, depth = dtex.shape
    for cy in range(2):
        for cx in range(2):
            for p in range(uv.shape[0]):
                gx = uv[p, 0] * width - 0.5
                gy = uv[p, 1] * height - 0.5
                ix0 = int(np.floor(gx))
                iy0 = int(np.floor(gy))
                ax = gx - ix0
                ay = gy - iy0
                ix = min(max(ix0 + cx, 0), width - 1)
                iy = min(max(iy0 + cy, 0), height - 1)
                w = (ax if cx else 1.0 - ax) * (ay if cy else 1.0 - ay)
                for d in range(depth):
                    dtex[iy, ix, d] += w * dout[p, d]


def texture_scatter(height, width, depth, uv, dout):
    dtex = np.zeros((height, width, depth))
    if uv.shape[0]:
        _texture_scatter_impl(uv, dout, dtex)
    return dtex


@njit(cache=True)
def _im2col2d(xp, kh, kw, ho, wo):
    cin = xp.shape[0]
    col = np.empty((ho * wo, cin * kh * kw))
    for i in range(ho):
        for j in range(wo):
            row = i * wo + j
            for c in range(cin):
                for u in range(kh):
                    for v in range(kw):
                        col[row, (c * kh + u) * kw + v] = xp[c, i + u, j + v]
    return col


@njit(cache=True)
def _conv2d_fwd_impl(x, w, pad):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((cin, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    ho = h + 2 * pad - kh + 1
    wo = wd + 2 * pad - kw + 1
    col = _im2col2d(xp, kh, kw, ho, wo)
    wt = w.reshape(cout, cin * kh * kw).T.copy()
    y = np.dot(col, wt)
    return y.T.copy().reshape(cout, ho, wo)


def conv2d_fwd(x, w, pad):
    return _conv2d_fwd_impl(x, w, pad)


@njit(cache=True)
def _conv2d_bwd_impl(x, w, dy, pad):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = dy.shape[1], dy.shape[2]
    xp = np.zeros((cin, h + 2 * pad, wd + 2 * pad))
    xp[:, pad:pad + h, pad:pad + wd] = x
    col = _im2col2d(xp, kh, kw, ho, wo)
    dy_mat = dy.reshape(cout, ho * wo).T.copy()
    dw = np.dot(dy_mat.T.copy(), col).reshape(cout, cin, kh, kw)
    wm = w.reshape(cout, cin * kh * kw).copy()
    dcol = np.dot(dy_mat, wm)
    dxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            for i in range(ho):
                for j in range(wo):
                    row = i * wo + j
                    for c in range(cin):
                        dxp[c, u + i, v + j] += dcol[row, (c * kh + u) * kw + v]
    dx = dxp[:, pad:pad + h, pad:pad + wd].copy()
    return dx, dw


def conv2d_bwd(x, w, dy, pad):
    return _conv2d_bwd_impl(x, w, dy, pad)


@njit(cache=True)
def _conv1d_fwd_impl(x, w, stride, pad):
    cin, n = x.shape
    cout, _, k = w.shape
    xp = np.zeros((cin, n + 2 * pad))
    xp[:, pad:pad + n] = x
    no = (n + 2 * pad - k) // stride + 1
    col = np.empty((no, cin * k))
    for i in range(no):
        for c in range(cin):
            for u in range(k):
                col[i, c * k + u] = xp[c, i * stride + u]
    wt = w.reshape(cout, cin * k).T.copy()
    y = np.dot(col, wt)
    return y.T.copy()


def conv1d_fwd(x, w, stride, pad):
    return _conv1d_fwd_impl(x, w, stride, pad)


@njit(cache=True)
def _conv1d_bwd_impl(x, w, dy, stride, pad):
    cin, n = x.shape
    cout, _, k = w.shape
    no = dy.shape[1]
    xp = np.zeros((cin, n + 2 * pad))
    xp[:, pad:pad + n] = x
    col = np.empty((no, cin * k))
    for i in range(no):
        for c in range(cin):
            for u in range(k):
                col[i, c * k + u] = xp[c, i * stride + u]
    dy_mat = dy.T.copy()
    dw = np.dot(dy_mat.T.copy(), col).reshape(cout, cin, k)
    wm = w.reshape(cout, cin * k).copy()
    dcol = np.dot(dy_mat, wm)
    dxp = np.zeros_like(xp)
    for u in range(k):
        for i in range(no):
            for c in range(cin):
                dxp[c, i * stride + u] += dcol[i, c * k + u]
    dx = dxp[:, pad:pad + n].copy()
    return dx, dw


def conv1d_bwd(x, w, dy, stride, pad):
    return _conv1d_bwd_impl(x, w, dy, stride, pad)


@njit(cache=True, inline="always")
def _scan_cell(ref, starts, order, dims, cx, cy, cz, qx, qy, qz,
               bd2, bidx):
    if cx < 0 or cx >= dims[0] or cy < 0 or cy >= dims[1] \
            or cz < 0 or cz >= dims[2]:
        return bd2, bidx
    flat = (cx * dims[1] + cy) * dims[2] + cz
    lo = np.int64(starts[flat])
    hi = np.int64(starts[flat + 1])
    for si in range(lo, hi):
        ri = order[si]
        d0 = qx - ref[ri, 0]
        d1 = qy - ref[ri, 1]
        d2v = qz - ref[ri, 2]
        d2 = d0 * d0 + d1 * d1 + d2v * d2v
        if d2 < bd2:
            bd2 = d2
            bidx = ri
    return bd2, bidx


@njit(cache=True, inline="always")
def _scan_shell(ref, starts, order, dims, cqx, cqy, cqz,
                qx, qy, qz, r, bd2, bidx):
    if r == 0:
        return _scan_cell(ref, starts, order, dims, cqx, cqy, cqz,
                          qx, qy, qz, bd2, bidx)
    for side in range(2):
        sx = -r if side == 0 else r
        for oy in range(-r, r + 1):  # x faces: full y/z planes
            for oz in range(-r, r + 1):
                bd2, bidx = _scan_cell(ref, starts, order, dims,
                                       cqx + sx, cqy + oy, cqz + oz,
                                       qx, qy, qz, bd2, bidx)
        for ox in range(-r + 1, r):  # y faces: interior x, full z
            for oz in range(-r, r + 1):
                bd2, bidx = _scan_cell(ref, starts, order, dims,
                                       cqx + ox, cqy + sx, cqz + oz,
                                       qx, qy, qz, bd2, bidx)
        for ox in range(-r + 1, r):  # z faces: interior x and y
            for oy in range(-r + 1, r):
                bd2, bidx = _scan_cell(ref, starts, order, dims,
                                       cqx + ox, cqy + oy, cqz + sx,
                                       qx, qy, qz, bd2, bidx)
    return bd2, bidx


@njit(cache=True)
def _grid_nn_query_impl(ref, origin, dims, starts, order, query, cell,
                        ring_cap):
    nq = query.shape[0]
    best = np.full(nq, -1, dtype=np.int64)
    for qi in range(nq):
        qx, qy, qz = query[qi, 0], query[qi, 1], query[qi, 2]
        cqx = int(np.floor((qx - origin[0]) / cell))
        cqy = int(np.floor((qy - origin[1]) / cell))
        cqz = int(np.floor((qz - origin[2]) / cell))
        # first shell that can touch the grid box
        r0 = 0
        gap = -cqx if cqx < 0 else (cqx - (dims[0] - 1) if cqx > dims[0] - 1 else 0)
        if gap > r0:
            r0 = gap
        gap = -cqy if cqy < 0 else (cqy - (dims[1] - 1) if cqy > dims[1] - 1 else 0)
        if gap > r0:
            r0 = gap
        gap = -cqz if cqz < 0 else (cqz - (dims[2] - 1) if cqz > dims[2] - 1 else 0)
        if gap > r0:
            r0 = gap
        # warm start: successive queries are polyline-coherent, so the
        # previous answer gives a tight initial bound on the search radius
        bd2 = np.inf
        bidx = -1
        if qi > 0 and best[qi - 1] >= 0:
            ri = best[qi - 1]
            d0 = qx - ref[ri, 0]
            d1 = qy - ref[ri, 1]
            d2v = qz - ref[ri, 2]
            bd2 = d0 * d0 + d1 * d1 + d2v * d2v
            bidx = ri
        resolved = False
        for radius in range(r0, r0 + ring_cap + 1):
            bd2, bidx = _scan_shell(ref, starts, order, dims,
                                    cqx, cqy, cqz, qx, qy, qz, radius,
                                    bd2, bidx)
            if bd2 <= (radius * cell) ** 2:
                resolved = True
                break
        if not resolved:
            # query far from every occupied cell: exact linear scan
            for ri in range(ref.shape[0]):
                d0 = qx - ref[ri, 0]
                d1 = qy - ref[ri, 1]
                d2v = qz - ref[ri, 2]
                d2 = d0 * d0 + d1 * d1 + d2v * d2v
                if d2 < bd2:
                    bd2 = d2
                    bidx = ri
        best[qi] = bidx
    return best


RING_CAP = 12  # beyond this many empty shells, linear scan is cheaper


def grid_nn_query(ref, grid, query, cell):
    """Exact nearest reference index per query; see numpy_backend."""
    origin, dims, starts, order = grid
    return _grid_nn_query_impl(ref, origin, dims, starts, order,
                               query, cell, RING_CAP)
