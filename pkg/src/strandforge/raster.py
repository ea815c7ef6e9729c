"""Camera model, hard line rasterization with visibility, and the
differentiable descriptor splatting.

Two-pass design: a non-differentiable z-buffered pass picks one visible
(strand, segment, parameter) fragment per pixel; the visible 3D points and
their descriptors are then splatted softly, and only this second pass
carries gradients. Fragment selection is re-evaluated every forward pass
but treated as constant by the backward pass.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels

NEAR_PLANE = 1e-4


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray   # world -> camera, orthonormal, det +1
    translation: np.ndarray

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("Camera: focal lengths must be positive")
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3),
                           atol=1e-6):
            raise ValueError("Camera: rotation is not orthonormal")
        if np.linalg.det(self.rotation) < 0:
            raise ValueError("Camera: rotation must have determinant +1")

    def to_camera(self, world):
        return np.atleast_2d(world) @ self.rotation.T + self.translation

    def project_np(self, world):
        """(N, 3) world points -> (pixel xy (N, 2), depth (N,))."""
        cam = self.to_camera(world)
        z = cam[:, 2]
        px = np.stack([self.fx * cam[:, 0] / z + self.cx,
                       self.fy * cam[:, 1] / z + self.cy], axis=1)
        return px, z

    @classmethod
    def look_at(cls, position, target, up, fx, fy, cx, cy, width, height):
        forward = np.asarray(target, dtype=np.float64) - position
        forward = forward / np.linalg.norm(forward)
        right = np.cross(forward, up)
        nr = np.linalg.norm(right)
        if nr < 1e-9:  # camera axis parallel to up: pick another hint
            up = np.array([0.0, 1.0, 0.0])
            right = np.cross(forward, up)
            nr = np.linalg.norm(right)
        right = right / nr
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        trans = -rot @ np.asarray(position, dtype=np.float64)
        return cls(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height,
                   rotation=rot, translation=trans)


def project(world, camera):
    """Differentiable pinhole projection -> (N, 3) [px, py, depth].

    Points must already be in front of the near plane.
    """
    return ad.project(world, camera.rotation, camera.translation,
                      camera.fx, camera.fy, camera.cx, camera.cy)


@dataclass
class FragmentBuffer:
    """Per-pixel visible fragment: strand, segment, parameter, depth."""
    strand: np.ndarray   # (H, W) int64, -1 where empty
    segment: np.ndarray  # (H, W) int64 node index k of the segment
    tparam: np.ndarray   # (H, W) world-space interpolation parameter
    depth: np.ndarray    # (H, W) camera depth, 0 where empty

    @property
    def coverage(self):
        return self.strand >= 0


def _segments_of(points_world):
    """(N, L+1, 3) strand points -> flat segment endpoints and ids."""
    n, l1 = points_world.shape[:2]
    p0 = points_world[:, :-1].reshape(-1, 3)
    p1 = points_world[:, 1:].reshape(-1, 3)
    seg_strand = np.repeat(np.arange(n, dtype=np.int64), l1 - 1)
    seg_node = np.tile(np.arange(l1 - 1, dtype=np.int64), n)
    return p0, p1, seg_strand, seg_node


def _clip_near(p0, p1, z0, z1):
    """Clip segments to z > NEAR_PLANE, moving endpoints onto the plane.

    Returns adjusted copies plus per-segment world-parameter window
    (a, b) within the original segment, and the keep mask.
    """
    keep = (z0 > NEAR_PLANE) | (z1 > NEAR_PLANE)
    a = np.zeros(len(z0))
    b = np.ones(len(z0))
    dz = z1 - z0
    cross = keep & ((z0 <= NEAR_PLANE) | (z1 <= NEAR_PLANE))
    with np.errstate(divide="ignore", invalid="ignore"):
        tc = np.where(dz != 0, (NEAR_PLANE - z0) / np.where(dz == 0, 1, dz),
                      0.0)
    a = np.where(cross & (z0 <= NEAR_PLANE), tc, a)
    b = np.where(cross & (z1 <= NEAR_PLANE), tc, b)
    q0 = p0 + a[:, None] * (p1 - p0)
    q1 = p0 + b[:, None] * (p1 - p0)
    return q0, q1, a, b, keep


def hard_rasterize(points_world, camera):
    """Z-buffered fragment selection for a strand set.

    points_world: (N, L+1, 3) array. Returns a FragmentBuffer whose tparam
    is the perspective-correct world parameter along the owning segment.
    """
    points_world = np.asarray(points_world, dtype=np.float64)
    h, w = camera.height, camera.width
    if points_world.size == 0:
        return FragmentBuffer(strand=np.full((h, w), -1, dtype=np.int64),
                              segment=np.zeros((h, w), dtype=np.int64),
                              tparam=np.zeros((h, w)),
                              depth=np.zeros((h, w)))
    p0, p1, seg_strand, seg_node = _segments_of(points_world)
    cam0 = camera.to_camera(p0)
    cam1 = camera.to_camera(p1)
    q0, q1, a, b, keep = _clip_near(p0, p1, cam0[:, 2], cam1[:, 2])
    idx = np.nonzero(keep)[0]
    s0, _ = camera.project_np(q0[idx])
    s1, _ = camera.project_np(q1[idx])
    z0 = camera.to_camera(q0[idx])[:, 2]
    z1 = camera.to_camera(q1[idx])[:, 2]
    iz0, iz1 = 1.0 / z0, 1.0 / z1

    owner, t_screen, invz = kernels.raster_lines(
        np.ascontiguousarray(s0), np.ascontiguousarray(s1),
        np.ascontiguousarray(iz0), np.ascontiguousarray(iz1), h, w)

    covered = owner >= 0
    own = owner[covered]
    ts = t_screen[covered]
    # perspective-correct parameter within the clipped segment, then mapped
    # back into the original (unclipped) world segment
    t_clip = ts * iz1[own] / (iz0[own] + ts * (iz1[own] - iz0[own])) \
        if ts.size else ts
    gidx = idx[own]
    t_world = a[gidx] + t_clip * (b[gidx] - a[gidx])

    strand = np.full((h, w), -1, dtype=np.int64)
    segment = np.zeros((h, w), dtype=np.int64)
    tparam = np.zeros((h, w))
    depth = np.zeros((h, w))
    strand[covered] = seg_strand[gidx]
    segment[covered] = seg_node[gidx]
    tparam[covered] = t_world
    depth[covered] = 1.0 / invz[covered]
    return FragmentBuffer(strand=strand, segment=segment, tparam=tparam,
                          depth=depth)


@dataclass
class DescriptorPyramid:
    """Per-level (H_l, W_l, C+1) maps: normalized descriptors plus weight."""
    levels: list

    def __len__(self):
        return len(self.levels)


def splat(px, descriptors, camera, num_levels=4):
    """Splat visible point descriptors to a multi-resolution pyramid.

    px: (P, 2) Tensor of level-0 pixel positions (visibility already
    resolved). descriptors: (P, C) Tensor. Every level is splatted
    independently at its own resolution, reusing the level-0 visibility.
    """
    levels = []
    h, w = camera.height, camera.width
    for lvl in range(num_levels):
        hl, wl = h >> lvl, w >> lvl
        if hl < 1 or wl < 1:
            raise ValueError(f"splat: level {lvl} collapses below 1 px")
        if lvl == 0:
            pl = px
        else:
            scale = 1.0 / (1 << lvl)
            pl = ad.mul(px, scale)
        levels.append(ad.soft_splat(pl, descriptors, hl, wl))
    return DescriptorPyramid(levels=levels)


def view_direction_map(camera, size=None):
    """(H, W, 3) unit world-space ray directions through pixel centers."""
    h, w = size if size is not None else (camera.height, camera.width)
    sx = camera.width / w
    sy = camera.height / h
    xs = (np.arange(w) + 0.5) * sx
    ys = (np.arange(h) + 0.5) * sy
    gx, gy = np.meshgrid(xs, ys)
    d = np.stack([(gx - camera.cx) / camera.fx,
                  (gy - camera.cy) / camera.fy,
                  np.ones_like(gx)], axis=2)
    d = d / np.linalg.norm(d, axis=2, keepdims=True)
    return d @ camera.rotation  # R^T applied row-wise
