"""Training objectives: VAE data/KL terms, geometric Chamfer, rendering and
alpha losses, and the scheduled weighted total.

Image losses use a per-pixel mean so the loss weights stay resolution
independent; strand and Chamfer losses keep their summed form. The Chamfer
nearest neighbors come from the exact uniform-grid kernel, with the cell
size auto-scaled (never below the 2 mm floor) from a sampled distance
estimate so distant point sets stay cheap.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .strands import UNIT_EPS

CHAMFER_CELL_FLOOR = 0.002  # meters, the geometric tolerance scale


@dataclass
class LossWeights:
    lambda_d: float = 1e-3    # direction term inside the VAE data loss
    lambda_kl: float = 1e-3   # KL regularizer
    lambda_l: float = 0.1     # perceptual-proxy term of the render loss
    lambda1: float = 1.0      # geometric
    lambda2: float = 1e-3     # rendering
    lambda3: float = 1e-3     # alpha
    warmup_iters: int = 1000  # rendering/alpha switched off before this

    def __post_init__(self):
        for name in ("lambda_d", "lambda_kl", "lambda_l", "lambda1",
                     "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"LossWeights.{name} must be non-negative")


def _unit(dirs):
    if isinstance(dirs, ad.Tensor):
        mag = ad.sqrt(ad.tsum(ad.mul(dirs, dirs), axis=dirs.data.ndim - 1,
                              keepdims=True))
        return ad.div(dirs, ad.clamp_min(mag, UNIT_EPS))
    mag = np.linalg.norm(dirs, axis=-1, keepdims=True)
    return dirs / np.maximum(mag, UNIT_EPS)


def vae_data_loss(pred_pts, pred_dirs, gt_pts, gt_dirs, lambda_d=1e-3):
    """Summed squared point error plus the direction alignment penalty.

    Direction vectors are unit-normalized internally; the penalty is
    lambda_d * (1 - d . d~) per segment.
    """
    gt_pts = np.asarray(gt_pts, dtype=np.float64)
    gt_units = _unit(np.asarray(gt_dirs, dtype=np.float64))
    diff = ad.sub(pred_pts, gt_pts)
    pos = ad.tsum(ad.mul(diff, diff))
    dots = ad.tsum(ad.mul(_unit(pred_dirs), gt_units),
                   axis=pred_dirs.data.ndim - 1)
    ndirs = int(np.prod(dots.shape))
    dir_term = ad.sub(float(ndirs), ad.tsum(dots))
    return ad.add(pos, ad.mul(dir_term, lambda_d))


def kl_loss(mu, sigma):
    """Closed-form KL(N(mu, sigma^2) || N(0, I)), summed over all entries."""
    sig = sigma.data if isinstance(sigma, ad.Tensor) else np.asarray(sigma)
    if np.any(sig <= 0):
        raise ValueError("kl_loss: sigma must be strictly positive")
    mu = ad.as_tensor(mu)
    sigma = ad.as_tensor(sigma)
    var = ad.mul(sigma, sigma)
    terms = ad.sub(ad.add(ad.mul(mu, mu), var), ad.add(ad.log(var), 1.0))
    return ad.mul(ad.tsum(terms), 0.5)


def _estimate_cell(ref, query, floor=CHAMFER_CELL_FLOOR, sample=128):
    """Cell size for the NN grid from a deterministic distance sample."""
    take = np.linspace(0, query.shape[0] - 1, min(sample, query.shape[0]),
                       dtype=np.int64)
    sub = query[take]
    d2 = np.sum((sub[:, None, :] - ref[None, :, :]) ** 2, axis=2)
    med = float(np.median(np.sqrt(d2.min(axis=1))))
    return max(floor, med)


def nearest_indices(ref, query, floor=CHAMFER_CELL_FLOOR):
    """Exact nearest-neighbor indices of query points into ref points."""
    ref = np.ascontiguousarray(ref, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    if ref.shape[0] == 0 or query.shape[0] == 0:
        raise ValueError("nearest_indices: empty point set")
    cell = _estimate_cell(ref, query, floor)
    grid = kernels.grid_nn_build(ref, cell)
    return kernels.grid_nn_query(ref, grid, query, cell)


def chamfer_geo(x_pts, x_dirs, y_pts, y_dirs, cell=CHAMFER_CELL_FLOOR,
                distance_scale=1.0):
    """Bidirectional Chamfer over positions and directions.

    X (generated) carries gradients; Y (scan) is fixed. Each point pairs
    with its Euclidean nearest neighbor in the other set and contributes
    distance_scale * ||x - y|| + (1 - d_x . d_y). Directions must be unit
    length. The scale sets the unit the distance term is measured in
    (1000 = millimeters for meter-valued points), balancing it against the
    dimensionless direction term.
    """
    xp = x_pts.data if isinstance(x_pts, ad.Tensor) else np.asarray(x_pts)
    yp = np.asarray(y_pts, dtype=np.float64)
    yd = np.asarray(y_dirs, dtype=np.float64)
    if xp.shape[0] == 0 or yp.shape[0] == 0:
        raise ValueError("chamfer_geo: empty point set")
    x_pts = ad.as_tensor(x_pts)
    x_dirs = ad.as_tensor(x_dirs)

    idx_xy = nearest_indices(yp, xp, cell)   # for each x, nearest y
    idx_yx = nearest_indices(xp, yp, cell)   # for each y, nearest x

    # X -> Y: all x points against constant nearest-y data
    dxy = ad.sub(x_pts, yp[idx_xy])
    dist_xy = ad.tsum(ad.sqrt(ad.tsum(ad.mul(dxy, dxy), axis=1)))
    dots_xy = ad.tsum(ad.mul(x_dirs, yd[idx_xy]))
    n_x = xp.shape[0]

    # Y -> X: gather the matched x rows, y side constant
    xg = ad.gather_rows(x_pts, idx_yx)
    dyx = ad.sub(xg, yp)
    dist_yx = ad.tsum(ad.sqrt(ad.tsum(ad.mul(dyx, dyx), axis=1)))
    dots_yx = ad.tsum(ad.mul(ad.gather_rows(x_dirs, idx_yx), yd))
    n_y = yp.shape[0]

    dist = ad.mul(ad.add(dist_xy, dist_yx), distance_scale)
    dirs = ad.add(ad.sub(float(n_x), dots_xy), ad.sub(float(n_y), dots_yx))
    return ad.add(dist, dirs)


def image_gradient_terms(img):
    """Horizontal and vertical finite differences of an (H, W, C) image."""
    h, w = img.shape[:2]
    out = []
    if w >= 2:
        out.append(ad.sub(img[:, 1:], img[:, :w - 1]))
    if h >= 2:
        out.append(ad.sub(img[1:, :], img[:h - 1, :]))
    return out


def render_loss(pred, gt, lambda_l=0.1, levels=3):
    """Mean squared color error plus a multi-scale gradient-difference term.

    The second term replaces a learned perceptual metric with the mean
    absolute difference of image gradients over a small binomial pyramid.
    """
    gt = np.asarray(gt, dtype=np.float64)
    pred = ad.as_tensor(pred)
    if pred.shape != gt.shape:
        raise ValueError(f"render_loss: shapes {pred.shape} vs {gt.shape}")
    loss = ad.tmean(ad.power(ad.sub(pred, gt), 2.0))

    pyr_terms = []
    p, g = pred, gt
    for level in range(levels):
        gp = image_gradient_terms(p)
        gg = image_gradient_terms(ad.Tensor(g))
        for a, b in zip(gp, gg):
            pyr_terms.append(ad.tmean(ad.absolute(ad.sub(a, b.data))))
        h, w = p.shape[:2]
        if level == levels - 1 or h < 4 or w < 4 or h % 2 or w % 2:
            break
        # (H, W, C) -> (C, H, W) for the resampler, then back
        p = _hwc(ad.resample2(_chw(p), "down2"))
        g = _down2_np(g)
    if pyr_terms:
        acc = pyr_terms[0]
        for t in pyr_terms[1:]:
            acc = ad.add(acc, t)
        loss = ad.add(loss, ad.mul(acc, lambda_l))
    return loss


def _chw(t):
    h, w, c = t.shape
    parts = [ad.reshape(t[:, :, i], (1, h, w)) for i in range(c)]
    return ad.concat(parts, axis=0)


def _hwc(t):
    c, h, w = t.shape
    parts = [ad.reshape(t[i], (h, w, 1)) for i in range(c)]
    return ad.concat(parts, axis=2)


def _chw_np(img):
    return np.transpose(img, (2, 0, 1))


def _hwc_np(img):
    return np.transpose(img, (1, 2, 0))


def _down2_np(img_hwc):
    t = ad.resample2(ad.Tensor(_chw_np(img_hwc)), "down2")
    return _hwc_np(t.data)


@dataclass
class Trimap:
    interior: np.ndarray
    exterior: np.ndarray
    band: np.ndarray

    def validate(self):
        total = (self.interior.astype(int) + self.exterior.astype(int)
                 + self.band.astype(int))
        if not np.all(total == 1):
            raise ValueError("Trimap regions must partition the image")


def _square_filter(mask, radius, op):
    if radius <= 0:
        return mask.copy()
    padded = np.pad(mask, radius, mode="constant", constant_values=False)
    win = np.lib.stride_tricks.sliding_window_view(
        padded, (2 * radius + 1, 2 * radius + 1))
    return op(win, axis=(2, 3))


def dilate(mask, radius):
    return _square_filter(mask.astype(bool), radius, np.any)


def erode(mask, radius):
    return _square_filter(mask.astype(bool), radius, np.all)


def build_trimap(mask, dilate_r, erode_r):
    """Split an image into certain-hair, certain-empty, and an
    unsupervised border band, from a hard coverage mask."""
    mask = np.asarray(mask).astype(bool)
    exterior = ~dilate(mask, dilate_r)
    interior = erode(mask, erode_r)
    band = ~(exterior | interior)
    tri = Trimap(interior=interior, exterior=exterior, band=band)
    tri.validate()
    return tri


def alpha_loss(alpha, trimap):
    """Masked squared alpha error, per-pixel mean over the full image.

    The reference is 1 on the interior and 0 on the exterior; band pixels
    are unsupervised.
    """
    alpha = ad.as_tensor(alpha)
    a2 = alpha if alpha.data.ndim == 2 else ad.reshape(alpha,
                                                       alpha.shape[:2])
    ref = trimap.interior.astype(np.float64)
    m = (trimap.interior | trimap.exterior).astype(np.float64)
    diff = ad.sub(a2, ref)
    n = ref.size
    return ad.mul(ad.tsum(ad.mul(ad.mul(diff, diff), m)), 1.0 / n)


def total_loss(l_geo, l_render, l_alpha, weights, iteration):
    """Scheduled weighted sum; render/alpha weights are zero during warmup."""
    parts = {"geometric": l_geo, "render": l_render, "alpha": l_alpha}
    for name, part in parts.items():
        value = part.item() if isinstance(part, ad.Tensor) else float(part)
        if not np.isfinite(value):
            raise FloatingPointError(f"total_loss: non-finite {name} part")
    w2 = 0.0 if iteration < weights.warmup_iters else weights.lambda2
    w3 = 0.0 if iteration < weights.warmup_iters else weights.lambda3
    total = ad.mul(ad.as_tensor(l_geo), weights.lambda1)
    if w2:
        total = ad.add(total, ad.mul(ad.as_tensor(l_render), w2))
    if w3:
        total = ad.add(total, ad.mul(ad.as_tensor(l_alpha), w3))
    return total
