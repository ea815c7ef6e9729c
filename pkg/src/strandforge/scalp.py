"""Neural scalp textures and the gradient-shaping schedules.

The scalp is an analytic hemisphere with a closed-form UV map and TBN frame
at every point, so roots can be laid out and framed without mesh assets.
Feature textures over that UV square hold per-strand shape/appearance codes
and are the main optimizable state of a fit.
"""

import logging

import numpy as np

from . import autodiff as ad
from .strands import Frame

logger = logging.getLogger(__name__)


class NeuralTexture:
    """H x W grid of D-dimensional features, sampled bilinearly.

    role is "shape" or "appearance"; defaults follow the full-scale
    configuration (shape 256^2 x 64, appearance 512^2 x 16) and are scaled
    down for desk runs through FitConfig.
    """

    def __init__(self, height, width, depth, role, data=None):
        self.height, self.width, self.depth = height, width, depth
        self.role = role
        if data is None:
            data = np.zeros((height, width, depth))
        self.tensor = ad.Tensor(np.asarray(data, dtype=np.float64),
                                requires_grad=True)
        if self.tensor.shape != (height, width, depth):
            raise ValueError(f"NeuralTexture: data shape "
                             f"{self.tensor.shape} != "
                             f"{(height, width, depth)}")

    @classmethod
    def shape_texture(cls, size=256, depth=64):
        # zeros = the generator prior mean, so initial strands are the
        # dataset-mean strand
        return cls(size, size, depth, "shape")

    @classmethod
    def appearance_texture(cls, size=512, depth=16, rng=None):
        rng = rng or np.random.default_rng(0)
        data = rng.normal(0.0, 0.01, size=(size, size, depth))
        return cls(size, size, depth, "appearance", data)

    @property
    def data(self):
        return self.tensor.data


def sample(texture, uv):
    """Bilinear lookup of (N, 2) uv points, differentiable w.r.t. texels.

    uv outside the unit square is clamped (and logged once per call).
    """
    tex = texture.tensor if isinstance(texture, NeuralTexture) else texture
    uv = np.asarray(uv, dtype=np.float64)
    if uv.ndim != 2 or uv.shape[1] != 2:
        raise ValueError(f"sample: uv must be (N, 2), got {uv.shape}")
    if uv.min() < 0.0 or uv.max() > 1.0:
        logger.warning("sample: %d uv points outside [0,1]^2 were clamped",
                       int(np.sum((uv < 0) | (uv > 1))))
        uv = np.clip(uv, 0.0, 1.0)
    return ad.texture_sample(tex, uv)


class ScalpSurface:
    """Upper hemisphere with analytic UV map and TBN frames.

    u is azimuth, v is elevation from the equator; the map is injective on
    the open unit square. Units are meters.
    """

    def __init__(self, center=(0.0, 0.0, 0.0), radius=0.1):
        self.center = np.asarray(center, dtype=np.float64)
        self.radius = float(radius)

    def uv_to_point(self, uv):
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        theta = uv[:, 0] * 2.0 * np.pi
        phi = uv[:, 1] * (np.pi / 2.0)
        d = np.stack([np.cos(phi) * np.cos(theta),
                      np.cos(phi) * np.sin(theta),
                      np.sin(phi)], axis=1)
        return self.center + self.radius * d

    def frame_at(self, uv):
        """TBN frame: tangent along +u, bitangent completing, normal radial."""
        uv = np.asarray(uv, dtype=np.float64)
        theta = uv[0] * 2.0 * np.pi
        phi = uv[1] * (np.pi / 2.0)
        normal = np.array([np.cos(phi) * np.cos(theta),
                           np.cos(phi) * np.sin(theta),
                           np.sin(phi)])
        tangent = np.array([-np.sin(theta), np.cos(theta), 0.0])
        bitangent = np.cross(normal, tangent)
        origin = self.center + self.radius * normal
        return Frame(origin=origin, tangent=tangent, bitangent=bitangent,
                     normal=normal)

    def distance_to_surface(self, points):
        """Unsigned distance from points to the sphere the scalp lies on."""
        r = np.linalg.norm(np.atleast_2d(points) - self.center, axis=1)
        return np.abs(r - self.radius)


def root_layout(count, rng, v_max=0.92):
    """Jittered-grid root UVs with near-uniform coverage, strictly inside
    the open unit square. v is capped away from the pole where the UV map
    degenerates."""
    k = int(np.ceil(np.sqrt(count)))
    us, vs = np.meshgrid((np.arange(k) + 0.5) / k, (np.arange(k) + 0.5) / k)
    uv = np.stack([us.ravel(), vs.ravel()], axis=1)
    jitter = rng.uniform(-0.4 / k, 0.4 / k, size=uv.shape)
    uv = uv + jitter
    keep = rng.permutation(uv.shape[0])[:count]
    uv = uv[np.sort(keep)]
    uv[:, 1] *= v_max
    return np.clip(uv, 1e-6, 1.0 - 1e-6)


def gaussian_kernel(sigma):
    """Normalized 1D Gaussian taps truncated at 3 sigma."""
    radius = max(1, int(np.ceil(3.0 * sigma)))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def blur_gradient(grad, sigma):
    """Per-channel Gaussian blur of a (H, W, D) texture gradient.

    sigma = 0 returns the input unchanged (same object). Symmetric padding
    plus a normalized kernel preserves the per-channel gradient mass.
    """
    if sigma <= 0:
        return grad
    k = gaussian_kernel(sigma)
    r = (len(k) - 1) // 2
    out = np.pad(grad, ((r, r), (0, 0), (0, 0)), mode="symmetric")
    win = np.lib.stride_tricks.sliding_window_view(out, len(k), axis=0)
    out = np.einsum("hwdk,k->hwd", win, k)
    out = np.pad(out, ((0, 0), (r, r), (0, 0)), mode="symmetric")
    win = np.lib.stride_tricks.sliding_window_view(out, len(k), axis=1)
    return np.einsum("hwdk,k->hwd", win, k)


def blur_schedule(iteration, total, sigma_start=16.0, sigma_end=0.0):
    """Linear decay of the blur sigma; reaches exactly sigma_end at total."""
    if total <= 0:
        return sigma_end
    f = min(max(iteration / total, 0.0), 1.0)
    return sigma_start + (sigma_end - sigma_start) * f


def root_to_tip_mask(iteration, anneal_iters, num_segments):
    """Per-node gradient weights: roots first, tips activated linearly.

    Active node count is 1 + floor(L * min(1, iteration / anneal_iters));
    active nodes weigh 1.0, the rest 0.0.
    """
    if anneal_iters <= 0:
        frac = 1.0
    else:
        frac = min(1.0, iteration / anneal_iters)
    active = 1 + int(np.floor(num_segments * frac))
    mask = np.zeros(num_segments + 1)
    mask[:active] = 1.0
    return mask
