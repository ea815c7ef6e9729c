"""Explicit strand geometry: local frames, gradient-domain integration,
and rigid edits (haircut, wind).

A strand lives in the local frame of its root: points[0] is pinned to the
origin and successive points are reached by adding per-segment direction
vectors (directions carry magnitude). Integration and differencing are exact
inverses of each other.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

DEFAULT_NODES = 100  # segments per strand; points = DEFAULT_NODES + 1
UNIT_EPS = 1e-12


@dataclass
class Frame:
    """Orthonormal root frame: origin plus tangent/bitangent/normal axes."""
    origin: np.ndarray
    tangent: np.ndarray
    bitangent: np.ndarray
    normal: np.ndarray

    def matrix(self):
        """Rows are the local axes: local @ matrix() maps into world offsets."""
        return np.stack([self.tangent, self.bitangent, self.normal])

    def validate(self, tol=1e-9):
        m = self.matrix()
        gram = m @ m.T
        if not np.allclose(gram, np.eye(3), atol=tol):
            raise ValueError("Frame axes are not orthonormal")


@dataclass
class Strand:
    """Polyline of (L+1, 3) points in the local root frame."""
    points: np.ndarray
    root_uv: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.root_uv = np.asarray(self.root_uv, dtype=np.float64)

    @property
    def num_segments(self):
        return self.points.shape[0] - 1

    def arc_length(self):
        return float(np.linalg.norm(np.diff(self.points, axis=0),
                                    axis=1).sum())


@dataclass
class StrandSet:
    """Strands plus their per-root frames on a scalp surface."""
    strands: list
    frames: list
    scalp: object = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.strands) != len(self.frames):
            raise ValueError(
                f"StrandSet: {len(self.strands)} strands vs "
                f"{len(self.frames)} frames")

    def __len__(self):
        return len(self.strands)

    def points_local(self):
        """(N, L+1, 3) stack; all strands must share the node count."""
        if not self.strands:
            return np.zeros((0, DEFAULT_NODES + 1, 3))
        return np.stack([s.points for s in self.strands])

    def points_world(self):
        if not self.strands:
            return np.zeros((0, DEFAULT_NODES + 1, 3))
        mats = np.stack([f.matrix() for f in self.frames])
        origins = np.stack([f.origin for f in self.frames])
        return np.matmul(self.points_local(), mats) + origins[:, None, :]

    def root_uvs(self):
        if not self.strands:
            return np.zeros((0, 2))
        return np.stack([s.root_uv for s in self.strands])


def integrate(directions):
    """Cumulative sum of segment directions into strand points.

    directions: (..., L, 3) Tensor or array. Returns (..., L+1, 3) with the
    first point pinned at the local origin. Differentiable: the adjoint of
    the running sum is the suffix sum over downstream point gradients.
    """
    if isinstance(directions, ad.Tensor):
        data = directions.data
    else:
        data = np.asarray(directions, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise ValueError("integrate: non-finite directions")
        directions = ad.Tensor(data)
    zeros = ad.Tensor(np.zeros(data.shape[:-2] + (1, 3)))
    summed = ad.cumsum(directions, axis=data.ndim - 2)
    return ad.concat([zeros, summed], axis=data.ndim - 2)


def node_directions(points):
    """Forward differences d_k = p_{k+1} - p_k plus unit directions.

    Returns (dirs, units, mags): for arrays, plain arrays; zero-length
    segments yield a zero unit vector (flagged by mag < UNIT_EPS).
    """
    if isinstance(points, ad.Tensor):
        k = points.data.ndim - 2
        n = points.data.shape[k]
        head = points[(slice(None),) * k + (slice(0, n - 1),)]
        tail = points[(slice(None),) * k + (slice(1, n),)]
        dirs = ad.sub(tail, head)
        mag = ad.sqrt(ad.tsum(ad.mul(dirs, dirs), axis=k + 1, keepdims=True))
        units = ad.div(dirs, ad.clamp_min(mag, UNIT_EPS))
        return dirs, units, mag
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[-2] < 2:
        raise ValueError("node_directions: need at least 2 points")
    dirs = np.diff(pts, axis=-2)
    mag = np.linalg.norm(dirs, axis=-1, keepdims=True)
    units = dirs / np.maximum(mag, UNIT_EPS)
    units[np.broadcast_to(mag < UNIT_EPS, units.shape)] = 0.0
    return dirs, units, mag


def to_world(strand, frame):
    """Map local-frame points into world space: o + x*T + y*B + z*N."""
    frame.validate()
    return strand.points @ frame.matrix() + frame.origin


def to_local(points_world, frame):
    frame.validate()
    return (points_world - frame.origin) @ frame.matrix().T


def haircut_points(points, keep_fraction):
    """Array form of haircut over (..., L+1, 3) local points."""
    if not 0.0 <= keep_fraction <= 1.0:
        raise ValueError(f"haircut: keep_fraction {keep_fraction} outside "
                         f"[0, 1]")
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[-2] - 1
    cut = keep_fraction * n
    k = int(np.floor(cut))
    out = pts.copy()
    if k < n:
        frac = cut - k
        cut_point = (1.0 - frac) * pts[..., k, :] + frac * pts[..., k + 1, :]
        out[..., k + 1:, :] = cut_point[..., None, :]
    return out


def haircut(strand, keep_fraction):
    """Trim a strand: nodes past the cut collapse onto the cut point.

    The node count is preserved so downstream shapes stay static. The cut
    sits at arc parameter keep_fraction of the node index range.
    """
    return Strand(points=haircut_points(strand.points, keep_fraction),
                  root_uv=strand.root_uv)


def wind_points(points, direction, amplitude, phase, waves=2.5):
    """Array form of wind_deform over (..., L+1, 3) local points."""
    direction = np.asarray(direction, dtype=np.float64)
    norm = np.linalg.norm(direction)
    if abs(norm - 1.0) > 1e-6:
        raise ValueError("wind_deform: direction must be unit length")
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[-2] - 1
    dirs = np.diff(pts, axis=-2)
    t = (np.arange(n) + 1) / n
    sway = amplitude * t * np.sin(phase + waves * 2.0 * np.pi * t)
    new_dirs = dirs + sway[:, None] * direction
    summed = np.cumsum(new_dirs, axis=-2)
    out = np.concatenate([np.zeros(pts.shape[:-2] + (1, 3)), summed],
                         axis=-2)
    return out


def wind_deform(strand, direction, amplitude, phase, waves=2.5):
    """Perturb segment directions by a traveling sway and re-integrate.

    Each segment direction gains amplitude * t * sin(phase + waves*2pi*t)
    along the (unit) wind direction; the root never moves and the
    perturbation grows toward the tip.
    """
    return Strand(points=wind_points(strand.points, direction, amplitude,
                                     phase, waves),
                  root_uv=strand.root_uv)
