"""Procedural ground truth: hairstyles, camera rigs, target images, and
simulated partial scan segments standing in for line-based stereo output.

Everything here is a pure function of its inputs and a seed; the same seed
reproduces bit-identical data.
"""

from dataclasses import dataclass, field

import numpy as np

from .raster import Camera, hard_rasterize
from .scalp import ScalpSurface, root_layout
from .strands import DEFAULT_NODES, Strand, StrandSet, node_directions

SCALP_CLEARANCE = 0.002  # scan segments never approach the scalp closer

STYLE_PRESETS = {
    "straight": dict(family="straight", length_range=(0.05, 0.10),
                     droop=0.35),
    "wavy": dict(family="wavy", length_range=(0.05, 0.11),
                 curl_radius=0.010, curl_pitch=3.0),
    "curly": dict(family="curly", length_range=(0.04, 0.14),
                  curl_radius=0.015, curl_pitch=5.0),
}


def style_preset(name, **overrides):
    if name not in STYLE_PRESETS:
        raise ValueError(f"unknown style preset {name!r}")
    kw = dict(STYLE_PRESETS[name])
    kw.update(overrides)
    return StyleParams(**kw)


@dataclass
class StyleParams:
    family: str = "wavy"            # straight | wavy | curly
    length_range: tuple = (0.06, 0.12)
    curl_radius: float = 0.008
    curl_pitch: float = 3.0         # turns over the strand length
    droop: float = 0.5              # gravity bend coefficient
    root_color: tuple = (0.35, 0.22, 0.12)
    tip_color: tuple = (0.62, 0.45, 0.25)
    strand_count: int = 500

    def __post_init__(self):
        if self.family not in ("straight", "wavy", "curly"):
            raise ValueError(f"unknown style family {self.family!r}")
        if self.length_range[0] <= 0 or self.strand_count < 1:
            raise ValueError("StyleParams: positive lengths and counts")


@dataclass
class ScanSegments:
    """Open polylines with per-node unit directions, scalp-disconnected."""
    points: list = field(default_factory=list)      # (m_i, 3) arrays
    directions: list = field(default_factory=list)  # (m_i, 3) unit rows

    def all_points(self):
        return np.concatenate(self.points) if self.points else np.zeros((0, 3))

    def all_directions(self):
        return np.concatenate(self.directions) if self.directions \
            else np.zeros((0, 3))

    def __len__(self):
        return len(self.points)


def _strand_curve(style, frame, length, phase, rng, n=DEFAULT_NODES):
    """Grow one strand in its local frame: along the normal, drooped by
    gravity, with the family's waviness added on top."""
    t = (np.arange(n + 1) / n)[:, None]
    up_local = np.array([0.0, 0.0, 1.0])
    # gravity in the local frame
    g_world = np.array([0.0, 0.0, -1.0])
    g_local = frame.matrix() @ g_world
    axis = up_local[None, :] * length * t
    droop = 0.5 * style.droop * length * (t ** 2) * g_local[None, :]
    if style.family == "straight":
        wave = np.zeros((n + 1, 3))
    elif style.family == "wavy":
        amp = 0.35 * style.curl_radius
        wave = amp * np.sin(2 * np.pi * style.curl_pitch * t + phase) \
            * np.array([1.0, 0.0, 0.0])
    else:  # curly helix around the growth axis
        w = 2 * np.pi * style.curl_pitch * t + phase
        ramp = np.minimum(1.0, 4.0 * t)  # roots stay attached
        wave = style.curl_radius * ramp * np.concatenate(
            [np.cos(w) - np.cos(phase), np.sin(w) - np.sin(phase),
             np.zeros_like(w)], axis=1)
    pts = axis + droop + wave
    pts -= pts[0]
    return pts


def generate_hairstyle(style, scalp, seed):
    """Procedural StrandSet grown from a jittered-grid root layout."""
    rng = np.random.default_rng(seed)
    uvs = root_layout(style.strand_count, rng)
    strands, frames = [], []
    for uv in uvs:
        frame = scalp.frame_at(uv)
        length = rng.uniform(*style.length_range)
        phase = rng.uniform(0, 2 * np.pi)
        pts = _strand_curve(style, frame, length, phase, rng)
        strands.append(Strand(points=pts, root_uv=uv))
        frames.append(frame)
    return StrandSet(strands=strands, frames=frames, scalp=scalp,
                     extras={"style": style, "seed": seed})


def augment(points, rng):
    """Per-axis stretch, optional tangent/bitangent mirror, rotation about
    the normal; all in the local frame, root pinned."""
    pts = np.asarray(points, dtype=np.float64)
    scales = rng.uniform(0.8, 1.2, size=3)
    mirror = np.where(rng.uniform(size=2) < 0.5, -1.0, 1.0)
    angle = rng.uniform(0, 2 * np.pi)
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    out = pts * scales
    out[:, 0] *= mirror[0]
    out[:, 1] *= mirror[1]
    return out @ rot.T


def build_rig(n_cameras, radius, size, focal_scale=1.8, center=(0, 0, 0.05)):
    """Fibonacci-sphere camera rig, all looking at the head center."""
    if n_cameras < 1:
        raise ValueError("build_rig: need at least one camera")
    center = np.asarray(center, dtype=np.float64)
    cams = []
    golden = np.pi * (3.0 - np.sqrt(5.0))
    for i in range(n_cameras):
        if n_cameras == 1:
            d = np.array([0.0, -1.0, 0.0])
        else:
            z = 1.0 - 2.0 * i / (n_cameras - 1)
            z = np.clip(z, -0.999, 0.999)
            r = np.sqrt(1.0 - z * z)
            th = golden * i
            d = np.array([r * np.cos(th), r * np.sin(th), z])
        pos = center + radius * d
        f = focal_scale * size
        cams.append(Camera.look_at(
            position=pos, target=center, up=np.array([0.0, 0.0, 1.0]),
            fx=f, fy=f, cx=size / 2.0, cy=size / 2.0,
            width=size, height=size))
    return cams


def _visible_nodes(points_world, cameras):
    """Boolean (N, L+1): node belongs to a segment seen by >= 1 camera."""
    n, l1 = points_world.shape[:2]
    vis = np.zeros((n, l1), dtype=bool)
    for cam in cameras:
        frag = hard_rasterize(points_world, cam)
        cov = frag.coverage
        st = frag.strand[cov]
        seg = frag.segment[cov]
        vis[st, seg] = True
        vis[st, seg + 1] = True
    return vis


def simulate_scan(gt, cameras, noise_sigma=0.0005, drop_fraction=0.3,
                  seed=0, min_run=5, max_run=15):
    """Partial scan segments from the outer visible shell of a hairstyle.

    Visibility comes from the hard rasterizer; visible runs are split into
    short chunks, a fraction is dropped, points are jittered, and per-node
    directions recomputed with a consistent root-to-tip sign. Points closer
    than SCALP_CLEARANCE to the scalp are removed.
    """
    rng = np.random.default_rng(seed)
    world = gt.points_world()
    vis = _visible_nodes(world, cameras)
    if gt.scalp is not None:
        flat = world.reshape(-1, 3)
        near = gt.scalp.distance_to_surface(flat) < SCALP_CLEARANCE
        vis &= ~near.reshape(vis.shape)

    segments = ScanSegments()
    for si in range(world.shape[0]):
        runs = _runs(vis[si])
        for lo, hi in runs:
            pos = lo
            while hi - pos >= min_run:
                size = int(rng.integers(min_run, max_run + 1))
                chunk = world[si, pos:min(pos + size, hi)]
                pos += size
                if chunk.shape[0] < min_run:
                    break
                if rng.uniform() < drop_fraction:
                    continue
                pts = chunk + rng.normal(0.0, noise_sigma, size=chunk.shape)
                if gt.scalp is not None and np.min(
                        gt.scalp.distance_to_surface(pts)) <= SCALP_CLEARANCE:
                    continue  # jitter pushed a node into the clearance zone
                # directions come from the underlying clean line geometry
                # (line-based reconstruction estimates directions robustly;
                # differencing jittered points at segment scale would not)
                _, units, _ = node_directions(chunk)
                node_dirs = np.vstack([units, units[-1:]])
                segments.points.append(pts)
                segments.directions.append(node_dirs)
    return segments


def _runs(flags):
    out = []
    start = None
    for i, f in enumerate(flags):
        if f and start is None:
            start = i
        elif not f and start is not None:
            out.append((start, i))
            start = None
    if start is not None:
        out.append((start, len(flags)))
    return out


def backdrop_image(camera, scalp, light=(0.4, -0.3, 0.85)):
    """Simple shaded backdrop: head sphere lit by a fixed light over a
    vertical sky gradient."""
    from .raster import view_direction_map

    light = np.asarray(light) / np.linalg.norm(light)
    dirs = view_direction_map(camera)
    h, w = dirs.shape[:2]
    origin = -camera.rotation.T @ camera.translation
    sky_t = 0.5 * (dirs[:, :, 2] + 1.0)
    img = np.stack([0.12 + 0.25 * sky_t, 0.14 + 0.28 * sky_t,
                    0.18 + 0.34 * sky_t], axis=2)

    oc = origin - scalp.center
    b = np.einsum("hwc,c->hw", dirs, oc)
    disc = b * b - (np.dot(oc, oc) - scalp.radius ** 2)
    hit = disc >= 0
    tt = -b - np.sqrt(np.where(hit, disc, 0.0))
    hit &= tt > 0
    normal = (origin + tt[:, :, None] * dirs - scalp.center) / scalp.radius
    shade = np.clip(np.einsum("hwc,c->hw", normal, light), 0.0, 1.0)
    skin = np.array([0.55, 0.42, 0.35])
    shaded = (0.25 + 0.7 * shade)[:, :, None] * skin
    img[hit] = shaded[hit]
    return np.clip(img, 0.0, 1.0)


def render_targets(gt, cameras, size=None):
    """Ground-truth RGBA renders: hard-rasterized strand colors over the
    shaded backdrop; alpha is the hard coverage."""
    style = gt.extras.get("style")
    root = np.asarray(style.root_color if style else (0.3, 0.2, 0.1))
    tip = np.asarray(style.tip_color if style else (0.6, 0.45, 0.3))
    world = gt.points_world()
    n, l1 = world.shape[:2]
    t_node = np.arange(l1) / (l1 - 1)
    node_color = root[None, None] + t_node[None, :, None] \
        * (tip - root)[None, None]
    node_color = np.broadcast_to(node_color, (n, l1, 3))

    images = []
    for cam in cameras:
        frag = hard_rasterize(world, cam)
        cov = frag.coverage
        img = backdrop_image(cam, gt.scalp) if gt.scalp is not None \
            else np.zeros((cam.height, cam.width, 3))
        rgba = np.concatenate([img, np.zeros(img.shape[:2] + (1,))], axis=2)
        st = frag.strand[cov]
        seg = frag.segment[cov]
        tp = frag.tparam[cov]
        c0 = node_color[st, seg]
        c1 = node_color[st, np.minimum(seg + 1, l1 - 1)]
        rgba[cov, :3] = c0 + tp[:, None] * (c1 - c0)
        rgba[cov, 3] = 1.0
        images.append(rgba)
    return images
