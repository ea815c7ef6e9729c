"""Convolutional image synthesizer and compositing.

A small UNet turns the splatted descriptor pyramid plus per-pixel view
directions into hair RGB and alpha. Each pyramid level (descriptors,
weight channel, view directions) is concatenated to the encoder features
at the matching resolution; resampling uses the anti-aliased binomial
filters rather than strided convolutions.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .raster import view_direction_map
from .scalp import NeuralTexture

LEAKY_SLOPE = 0.1


def _conv_init(rng, cin, cout, k):
    bound = np.sqrt(6.0 / (cin * k * k))
    return rng.uniform(-bound, bound, size=(cout, cin, k, k))


class RendererParams:
    """UNet weights: `levels` encoder stages with channel doubling from
    `base`, pyramid injection at every stage, skip connections on the way
    up, and a 4-channel head (RGB + alpha logit)."""

    def __init__(self, rng, in_channels, levels=3, base=16):
        self.levels = levels
        self.base = base
        self.in_channels = in_channels
        ch = [min(base * (2 ** i), 64) for i in range(levels)]
        self.channels = ch
        self.enc_w1, self.enc_b1 = [], []
        self.enc_w2, self.enc_b2 = [], []
        for i in range(levels):
            cin = in_channels if i == 0 else ch[i - 1] + in_channels
            self.enc_w1.append(ad.Tensor(_conv_init(rng, cin, ch[i], 3),
                                         requires_grad=True))
            self.enc_b1.append(ad.Tensor(np.zeros((ch[i], 1, 1)),
                                         requires_grad=True))
            self.enc_w2.append(ad.Tensor(_conv_init(rng, ch[i], ch[i], 3),
                                         requires_grad=True))
            self.enc_b2.append(ad.Tensor(np.zeros((ch[i], 1, 1)),
                                         requires_grad=True))
        self.dec_w, self.dec_b = [], []
        for i in range(levels - 2, -1, -1):
            cin = ch[i + 1] + ch[i]
            self.dec_w.append(ad.Tensor(_conv_init(rng, cin, ch[i], 3),
                                        requires_grad=True))
            self.dec_b.append(ad.Tensor(np.zeros((ch[i], 1, 1)),
                                        requires_grad=True))
        self.head_w = ad.Tensor(_conv_init(rng, ch[0], 4, 1),
                                requires_grad=True)
        head_b = np.zeros((4, 1, 1))
        head_b[:3] = 0.5   # start RGB mid-range so the clamp does not gate
        head_b[3] = -1.0   # start mostly transparent
        self.head_b = ad.Tensor(head_b, requires_grad=True)

    def tensors(self):
        named = {"head_w": self.head_w, "head_b": self.head_b}
        for i in range(self.levels):
            named[f"enc_w1_{i}"] = self.enc_w1[i]
            named[f"enc_b1_{i}"] = self.enc_b1[i]
            named[f"enc_w2_{i}"] = self.enc_w2[i]
            named[f"enc_b2_{i}"] = self.enc_b2[i]
        for i, (w, b) in enumerate(zip(self.dec_w, self.dec_b)):
            named[f"dec_w_{i}"] = w
            named[f"dec_b_{i}"] = b
        return named


def _block(x, w1, b1, w2, b2):
    x = ad.leaky(ad.add(ad.conv2d(x, w1, pad=1), b1), LEAKY_SLOPE)
    return ad.leaky(ad.add(ad.conv2d(x, w2, pad=1), b2), LEAKY_SLOPE)


def _to_chw(hwc):
    h, w, c = hwc.shape
    parts = [ad.reshape(hwc[:, :, i], (1, h, w)) for i in range(c)]
    return ad.concat(parts, axis=0)


def _to_hwc(chw):
    c, h, w = chw.shape
    parts = [ad.reshape(chw[i], (h, w, 1)) for i in range(c)]
    return ad.concat(parts, axis=2)


def render_hair(params, pyramid, view_dirs):
    """Descriptor pyramid + view directions -> (rgb (H,W,3), alpha (H,W,1)).

    view_dirs is the full-resolution (H, W, 3) map; coarser copies are
    generated by averaging. Alpha is squashed by a logistic; RGB is clamped
    to [0, 1] at the output.
    """
    if len(pyramid.levels) != params.levels:
        raise ValueError(
            f"render_hair: pyramid has {len(pyramid.levels)} levels, "
            f"network expects {params.levels}")
    inputs = []
    vd = np.asarray(view_dirs, dtype=np.float64)
    for lvl, splat_map in enumerate(pyramid.levels):
        if vd.shape[:2] != splat_map.shape[:2]:
            vd = _avg_pool_np(vd, splat_map.shape[0], splat_map.shape[1])
        lvl_in = ad.concat([splat_map, ad.Tensor(vd)], axis=2)
        got = lvl_in.shape[2]
        if got != params.in_channels:
            raise ValueError(f"render_hair: level {lvl} provides {got} "
                             f"channels, expected {params.in_channels}")
        inputs.append(_to_chw(lvl_in))

    skips = []
    x = None
    for i in range(params.levels):
        inj = inputs[i]
        x = inj if x is None else ad.concat([x, inj], axis=0)
        x = _block(x, params.enc_w1[i], params.enc_b1[i],
                   params.enc_w2[i], params.enc_b2[i])
        skips.append(x)
        if i < params.levels - 1:
            x = ad.resample2(x, "down2")

    for di, i in enumerate(range(params.levels - 2, -1, -1)):
        x = ad.resample2(x, "up2")
        x = ad.concat([x, skips[i]], axis=0)
        x = ad.leaky(ad.add(ad.conv2d(x, params.dec_w[di], pad=1),
                            params.dec_b[di]), LEAKY_SLOPE)

    out = ad.add(ad.conv2d(x, params.head_w, pad=0), params.head_b)
    rgb = ad.clamp(_to_hwc(out[0:3]), 0.0, 1.0)
    alpha = ad.sigmoid(_to_hwc(out[3:4]))
    return rgb, alpha


def _avg_pool_np(img, ho, wo):
    h, w = img.shape[:2]
    fy, fx = h // ho, w // wo
    return img.reshape(ho, fy, wo, fx, -1).mean(axis=(1, 3))


def composite(hair_rgb, hair_alpha, backdrop):
    """Alpha-blend: C = a * hair + (1 - a) * backdrop, per pixel."""
    backdrop = ad.as_tensor(backdrop)
    a = hair_alpha
    one_minus = ad.sub(1.0, a)
    return ad.add(ad.mul(a, hair_rgb), ad.mul(one_minus, backdrop))


@dataclass
class SceneBackdrop:
    """Learnable low-resolution textures for the surrounding sphere and the
    head proxy; rendered by direct lookup along camera rays."""
    background: NeuralTexture
    body: NeuralTexture
    scalp: object

    @classmethod
    def create(cls, scalp, size=32, rng=None):
        rng = rng or np.random.default_rng(0)
        bg = NeuralTexture(size, size, 3, "appearance",
                           np.full((size, size, 3), 0.2)
                           + rng.normal(0, 0.01, (size, size, 3)))
        body = NeuralTexture(size, size, 3, "appearance",
                             np.full((size, size, 3), 0.45)
                             + rng.normal(0, 0.01, (size, size, 3)))
        return cls(background=bg, body=body, scalp=scalp)

    def render(self, camera):
        """(H, W, 3) backdrop image, differentiable w.r.t. both textures."""
        dirs = view_direction_map(camera)
        h, w = dirs.shape[:2]
        origin = -camera.rotation.T @ camera.translation

        # sphere hit test against the head proxy
        oc = origin - self.scalp.center
        b = np.einsum("hwc,c->hw", dirs, oc)
        disc = b * b - (np.dot(oc, oc) - self.scalp.radius ** 2)
        hit = disc >= 0
        tt = -b - np.sqrt(np.where(hit, disc, 0.0))
        hit &= tt > 0

        flat_dirs = dirs.reshape(-1, 3)
        # background sphere: equirectangular lookup of the ray direction
        u = (np.arctan2(flat_dirs[:, 1], flat_dirs[:, 0]) / (2 * np.pi)) % 1.0
        v = (flat_dirs[:, 2] + 1.0) * 0.5
        bg = ad.texture_sample(self.background.tensor,
                               np.stack([u, v], axis=1))

        normal = (origin + tt[:, :, None] * dirs - self.scalp.center) \
            / self.scalp.radius
        nf = normal.reshape(-1, 3)
        ub = (np.arctan2(nf[:, 1], nf[:, 0]) / (2 * np.pi)) % 1.0
        vb = np.clip((nf[:, 2] + 1.0) * 0.5, 0.0, 1.0)
        body = ad.texture_sample(self.body.tensor,
                                 np.stack([ub, vb], axis=1))

        mask = hit.reshape(-1, 1).astype(np.float64)
        img = ad.add(ad.mul(body, mask), ad.mul(bg, 1.0 - mask))
        return ad.reshape(img, (h, w, 3))

    def tensors(self):
        return {"backdrop_bg": self.background.tensor,
                "backdrop_body": self.body.tensor}
