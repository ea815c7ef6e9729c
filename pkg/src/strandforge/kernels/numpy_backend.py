"""Pure-numpy implementations of the hot kernels.

Every function here has a twin in numba_backend with the same signature and
(bitwise, where accumulation order allows) the same result. Inputs are
float64 C-contiguous arrays; screen coordinates are continuous pixel
coordinates where pixel (ix, iy) spans [ix, ix+1) x [iy, iy+1).
"""

import numpy as np

MAX_RING_RADIUS = 8


def _ranges(counts):
    """Concatenated [0..c) for each c in counts."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.cumsum(counts) - counts
    return np.arange(total, dtype=np.int64) - np.repeat(starts, counts)


# ---------------------------------------------------------------------------
# line rasterization


def raster_lines(p0, p1, invz0, invz1, height, width):
    """Z-buffered rasterization of 2D segments by exact cell traversal.

    Args:
        p0, p1: (S, 2) segment endpoints in continuous pixel coords.
        invz0, invz1: (S,) inverse camera depth at the endpoints.
        height, width: image size in pixels.

    Returns:
        owner: (H, W) int64, index of the nearest covering segment, -1 empty.
        tpar: (H, W) screen-space interpolation parameter of the fragment.
        invz: (H, W) inverse depth of the fragment (0 where empty).
    """
    S = p0.shape[0]
    owner = np.full((height, width), -1, dtype=np.int64)
    tpar = np.zeros((height, width))
    zbuf = np.zeros((height, width))
    if S == 0:
        return owner, tpar, zbuf

    x0, y0 = p0[:, 0], p0[:, 1]
    x1, y1 = p1[:, 0], p1[:, 1]
    dx, dy = x1 - x0, y1 - y0

    # Liang-Barsky clip of the parameter range against the image rect.
    ta = np.zeros(S)
    tb = np.ones(S)
    valid = np.ones(S, dtype=bool)
    for p, q in ((-dx, x0), (dx, width - x0), (-dy, y0), (dy, height - y0)):
        nz = p != 0
        r = np.where(nz, q / np.where(nz, p, 1.0), 0.0)
        valid &= ~(~nz & (q < 0))
        ta = np.where(nz & (p < 0), np.maximum(ta, r), ta)
        tb = np.where(nz & (p > 0), np.minimum(tb, r), tb)
    valid &= ta <= tb

    idx = np.nonzero(valid)[0]
    if idx.size == 0:
        return owner, tpar, zbuf
    x0, y0, dx, dy = x0[idx], y0[idx], dx[idx], dy[idx]
    ta, tb = ta[idx], tb[idx]

    def axis_crossings(c0, dc, lim):
        ca = c0 + ta * dc
        cb = c0 + tb * dc
        ia = np.minimum(np.floor(ca), lim - 1).astype(np.int64)
        ib = np.minimum(np.floor(cb), lim - 1).astype(np.int64)
        n = np.abs(ib - ia)
        k = _ranges(n)
        seg = np.repeat(np.arange(idx.size, dtype=np.int64), n)
        fwd = dc[seg] > 0
        bound = np.where(fwd, ia[seg] + 1 + k, ia[seg] - k).astype(np.float64)
        t = (bound - c0[seg]) / dc[seg]
        return seg, t

    sx, tx = axis_crossings(x0, dx, width)
    sy, ty = axis_crossings(y0, dy, height)

    # knots per segment: [ta, crossings..., tb], sorted within segment
    seg_all = np.concatenate(
        [np.arange(idx.size, dtype=np.int64), sx, sy,
         np.arange(idx.size, dtype=np.int64)])
    t_all = np.concatenate([ta, tx, ty, tb])
    order = np.lexsort((t_all, seg_all))
    seg_all, t_all = seg_all[order], t_all[order]

    # positive-width intervals only: corner touches never produce fragments
    same = (seg_all[:-1] == seg_all[1:]) & (t_all[1:] > t_all[:-1])
    s = seg_all[:-1][same]
    tmid = 0.5 * (t_all[:-1][same] + t_all[1:][same])

    ix = np.floor(x0[s] + dx[s] * tmid).astype(np.int64)
    iy = np.floor(y0[s] + dy[s] * tmid).astype(np.int64)
    inb = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
    s, tmid, ix, iy = s[inb], tmid[inb], ix[inb], iy[inb]

    gseg = idx[s]
    iz = invz0[gseg] + (invz1[gseg] - invz0[gseg]) * tmid
    pix = iy * width + ix

    # nearest fragment per pixel; ties resolved by emission order
    rank = np.lexsort((np.arange(s.size), -iz, pix))
    pix_sorted = pix[rank]
    first = np.ones(pix_sorted.size, dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = rank[first]

    owner.reshape(-1)[pix[win]] = gseg[win]
    tpar.reshape(-1)[pix[win]] = tmid[win]
    zbuf.reshape(-1)[pix[win]] = iz[win]
    return owner, tpar, zbuf


# ---------------------------------------------------------------------------
# soft splatting


def _corner_setup(px, height, width):
    fx = px[:, 0] - 0.5
    fy = px[:, 1] - 0.5
    ix0 = np.floor(fx).astype(np.int64)
    iy0 = np.floor(fy).astype(np.int64)
    ax = fx - ix0
    ay = fy - iy0
    wx = (1.0 - ax, ax)
    wy = (1.0 - ay, ay)
    corners = []
    for cy in (0, 1):
        for cx in (0, 1):
            ix = ix0 + cx
            iy = iy0 + cy
            w = wx[cx] * wy[cy]
            ok = (ix >= 0) & (ix < width) & (iy >= 0) & (iy < height)
            corners.append((ix, iy, w, ok, cx, cy))
    return corners, ax, ay


def splat_scatter(px, g, height, width):
    """Accumulate bilinear point splats.

    Returns (gsum, wsum): weighted descriptor sums (H, W, C) and the weight
    image (H, W). Corners falling off the image are dropped.
    """
    C = g.shape[1]
    gsum = np.zeros((height, width, C))
    wsum = np.zeros((height, width))
    for ix, iy, w, ok, _, _ in _corner_setup(px, height, width)[0]:
        np.add.at(gsum, (iy[ok], ix[ok]), w[ok, None] * g[ok])
        np.add.at(wsum, (iy[ok], ix[ok]), w[ok])
    return gsum, wsum


def splat_gather(px, g, dgsum, dwsum):
    """Adjoint of splat_scatter.

    dgsum/dwsum are the loss gradients w.r.t. gsum/wsum. Returns (dpx, dg).
    """
    height, width = dwsum.shape
    P = px.shape[0]
    dpx = np.zeros((P, 2))
    dg = np.zeros_like(g)
    corners, ax, ay = _corner_setup(px, height, width)
    wx_d = (-1.0, 1.0)  # d(weight_x)/d(ax) for cx = 0, 1
    for ix, iy, w, ok, cx, cy in corners:
        dgu = np.zeros((P, g.shape[1]))
        dwu = np.zeros(P)
        dgu[ok] = dgsum[iy[ok], ix[ok]]
        dwu[ok] = dwsum[iy[ok], ix[ok]]
        dg += w[:, None] * dgu
        dw = np.einsum("pc,pc->p", g, dgu) + dwu
        wyv = ay if cy == 1 else 1.0 - ay
        wxv = ax if cx == 1 else 1.0 - ax
        dpx[:, 0] += dw * wx_d[cx] * wyv
        dpx[:, 1] += dw * wx_d[cy] * wxv
    return dpx, dg


# ---------------------------------------------------------------------------
# bilinear texture lookup (texel centers at (i + 0.5) / size)


def _texel_corners(uv, height, width):
    gx = uv[:, 0] * width - 0.5
    gy = uv[:, 1] * height - 0.5
    ix0 = np.floor(gx).astype(np.int64)
    iy0 = np.floor(gy).astype(np.int64)
    ax = gx - ix0
    ay = gy - iy0
    out = []
    for cy in (0, 1):
        for cx in (0, 1):
            ix = np.clip(ix0 + cx, 0, width - 1)
            iy = np.clip(iy0 + cy, 0, height - 1)
            w = (ax if cx else 1.0 - ax) * (ay if cy else 1.0 - ay)
            out.append((ix, iy, w))
    return out


def texture_gather(tex, uv):
    """Bilinear lookup of (N, 2) uv coords into an (H, W, D) texture."""
    height, width = tex.shape[:2]
    out = np.zeros((uv.shape[0], tex.shape[2]))
    for ix, iy, w in _texel_corners(uv, height, width):
        out += w[:, None] * tex[iy, ix]
    return out


def texture_scatter(height, width, depth, uv, dout):
    """Adjoint of texture_gather: scatter dout back onto the texel grid."""
    dtex = np.zeros((height, width, depth))
    for ix, iy, w in _texel_corners(uv, height, width):
        np.add.at(dtex, (iy, ix), w[:, None] * dout)
    return dtex


# ---------------------------------------------------------------------------
# convolution (stride-1 2D for the image net, strided 1D for the encoder)


def conv2d_fwd(x, w, pad):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    ho = h + 2 * pad - kh + 1
    wo = wd + 2 * pad - kw + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    col = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(
        ho * wo, cin * kh * kw)
    y = col @ w.reshape(cout, -1).T
    return np.ascontiguousarray(y.T.reshape(cout, ho, wo))


def conv2d_bwd(x, w, dy, pad):
    cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ho, wo = dy.shape[1:]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    col = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(
        ho * wo, cin * kh * kw)
    dy_mat = dy.reshape(cout, -1).T
    dw = (dy_mat.T @ col).reshape(w.shape)
    dcol = (dy_mat @ w.reshape(cout, -1)).reshape(ho, wo, cin, kh, kw)
    dxp = np.zeros_like(xp)
    for u in range(kh):
        for v in range(kw):
            dxp[:, u:u + ho, v:v + wo] += dcol[:, :, :, u, v].transpose(2, 0, 1)
    dx = dxp[:, pad:pad + h, pad:pad + wd] if pad else dxp
    return np.ascontiguousarray(dx), dw


def conv1d_fwd(x, w, stride, pad):
    cin, n = x.shape
    cout, _, k = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad)))
    no = (n + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]
    col = np.ascontiguousarray(win[:, :no].transpose(1, 0, 2)).reshape(
        no, cin * k)
    y = col @ w.reshape(cout, -1).T
    return np.ascontiguousarray(y.T)


def conv1d_bwd(x, w, dy, stride, pad):
    cin, n = x.shape
    cout, _, k = w.shape
    no = dy.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=1)[:, ::stride]
    col = np.ascontiguousarray(win[:, :no].transpose(1, 0, 2)).reshape(
        no, cin * k)
    dy_mat = dy.T
    dw = (dy_mat.T @ col).reshape(w.shape)
    dcol = (dy_mat @ w.reshape(cout, -1)).reshape(no, cin, k)
    dxp = np.zeros_like(xp)
    for u in range(k):
        dxp[:, u:u + no * stride:stride] += dcol[:, :, u].T
    dx = dxp[:, pad:pad + n] if pad else dxp
    return np.ascontiguousarray(dx), dw


# ---------------------------------------------------------------------------
# exact nearest neighbor on a uniform grid


def grid_nn_build(ref, cell):
    """Bucket reference points into a dense uniform grid.

    Returns (origin, dims, starts, counts, order): per-cell offsets into the
    cell-sorted point order, consumed by grid_nn_query.
    """
    origin = ref.min(axis=0) - 0.5 * cell
    ci = np.floor((ref - origin) / cell).astype(np.int64)
    dims = ci.max(axis=0) + 1
    nflat = int(np.prod(dims))
    if nflat > 2 ** 26:
        raise ValueError(
            f"grid_nn_build: {dims} cells at cell={cell} exceeds the dense "
            f"grid budget; increase the cell size")
    flat = (ci[:, 0] * dims[1] + ci[:, 1]) * dims[2] + ci[:, 2]
    order = np.argsort(flat, kind="stable").astype(np.int64)
    counts = np.bincount(flat, minlength=nflat)
    # single cumulative table: cell c spans order[starts[c]:starts[c + 1]]
    starts = np.zeros(nflat + 1, dtype=np.int32)
    np.cumsum(counts, out=starts[1:])
    return origin, dims, starts, order


def grid_nn_query(ref, grid, query, cell):
    """Exact nearest reference index for each query point.

    Searches Chebyshev shells of cells around each query, expanding until
    the best distance found is provably global (<= shell radius * cell).
    Queries outside the grid start at the first shell touching it.
    """
    origin, dims, starts, order = grid
    nq = query.shape[0]
    best = np.full(nq, -1, dtype=np.int64)
    best_d2 = np.full(nq, np.inf)
    cq = np.floor((query - origin) / cell).astype(np.int64)
    below = np.maximum(-cq, 0)
    above = np.maximum(cq - (dims - 1), 0)
    r0 = np.maximum(below, above).max(axis=1)

    # ring expansion resolves near-field queries in a pass or two; distant
    # stragglers (far outside or in a void) fall back to chunked brute force
    pending = np.arange(nq, dtype=np.int64)
    for radius in range(MAX_RING_RADIUS + 1):
        if not pending.size:
            break
        active = pending[r0[pending] <= radius]
        if active.size:
            offs = _shell_offsets(radius)
            chunk = max(1, int(4e6) // offs.shape[0])
            for i in range(0, active.size, chunk):
                _scan_shell(ref, query, dims, starts, order,
                            cq, offs, active[i:i + chunk], best, best_d2)
        done = best_d2[pending] <= (radius * cell) ** 2
        pending = pending[~done]
    if pending.size:
        m = ref.shape[0]
        chunk = max(1, int(4e6) // m)
        for i in range(0, pending.size, chunk):
            qs = pending[i:i + chunk]
            d2 = np.sum((query[qs][:, None, :] - ref[None, :, :]) ** 2,
                        axis=2)
            best[qs] = np.argmin(d2, axis=1)
            best_d2[qs] = d2[np.arange(qs.size), best[qs]]
    return best


def _scan_shell(ref, query, dims, starts, order, cq, offs,
                qs, best, best_d2):
    cc = cq[qs][:, None, :] + offs[None, :, :]
    ok = np.all((cc >= 0) & (cc < dims), axis=2)
    qi, oi = np.nonzero(ok)
    if qi.size == 0:
        return
    flat = (cc[qi, oi, 0] * dims[1] + cc[qi, oi, 1]) * dims[2] + cc[qi, oi, 2]
    lo = starts[flat].astype(np.int64)
    cnt = starts[flat + 1].astype(np.int64) - lo
    has = cnt > 0
    if not has.any():
        return
    qrep = qs[qi[has]].repeat(cnt[has])
    ridx = order[_ranges(cnt[has]) + np.repeat(lo[has], cnt[has])]
    d2 = np.sum((query[qrep] - ref[ridx]) ** 2, axis=1)
    # min per query via sort; strict improvement over the running best
    rank = np.lexsort((np.arange(d2.size), d2, qrep))
    qsrt = qrep[rank]
    keep = np.ones(qsrt.size, dtype=bool)
    keep[1:] = qsrt[1:] != qsrt[:-1]
    win = rank[keep]
    better = d2[win] < best_d2[qrep[win]]
    tgt = qrep[win][better]
    best_d2[tgt] = d2[win][better]
    best[tgt] = ridx[win][better]


def _shell_offsets(radius):
    """Integer offsets at exactly Chebyshev distance `radius` (O(r^2) many)."""
    if radius == 0:
        return np.zeros((1, 3), dtype=np.int64)
    r = radius
    side = np.arange(-r, r + 1, dtype=np.int64)
    inner = side[1:-1]
    faces = []
    yy, zz = np.meshgrid(side, side, indexing="ij")
    for sx in (-r, r):
        faces.append(np.stack(
            [np.full(yy.size, sx, dtype=np.int64), yy.ravel(), zz.ravel()], 1))
    if inner.size:
        xx, zz = np.meshgrid(inner, side, indexing="ij")
        for sy in (-r, r):
            faces.append(np.stack(
                [xx.ravel(), np.full(xx.size, sy, dtype=np.int64),
                 zz.ravel()], 1))
        xx, yy = np.meshgrid(inner, inner, indexing="ij")
        if xx.size:
            for sz in (-r, r):
                faces.append(np.stack(
                    [xx.ravel(), yy.ravel(),
                     np.full(xx.size, sz, dtype=np.int64)], 1))
    return np.concatenate(faces)
