"""End-to-end orchestration: scene synthesis, per-subject fitting with the
coarse-to-fine and root-to-tip schedules, evaluation metrics, and timing.

A fit optimizes the shape texture, appearance texture, renderer, and
backdrop against a frozen pretrained strand generator. The geometric loss
runs every iteration; rendering and alpha losses join after the warmup.
"""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import io_formats
from .generator import GeneratorConfig, GeneratorParams, decode
from .losses import (LossWeights, alpha_loss, build_trimap, chamfer_geo,
                     dilate, erode, nearest_indices, render_loss, total_loss)
from .raster import Camera, hard_rasterize, splat, view_direction_map
from .renderer import RendererParams, SceneBackdrop, composite, render_hair
from .scalp import (NeuralTexture, ScalpSurface, blur_gradient,
                    blur_schedule, root_layout, root_to_tip_mask, sample)
from .strands import haircut_points, integrate, node_directions, wind_points
from .synthdata import (ScanSegments, StyleParams, build_rig,
                        generate_hairstyle, render_targets, simulate_scan)

logger = logging.getLogger(__name__)

GEO_THRESHOLDS = ((0.001, 10.0), (0.002, 20.0), (0.003, 30.0))
PSNR_CAP = 99.0


@dataclass
class FitConfig:
    """Desk-scale defaults; the full-scale values from the module docs are
    reachable by overriding (shape_size=256, appearance_size=512,
    latent_dim=64, appearance_dim=16, image_size>=512, gen_hidden=128)."""
    iterations: int = 2000
    warmup_iters: int = 1000
    anneal_iters: int = 800
    blur_total: int = 0           # 0 means "over all iterations"
    blur_sigma_start: float = 16.0
    blur_sigma_end: float = 0.0
    coarse_to_fine: bool = True
    root_to_tip: bool = True
    lr_shape: float = 0.03
    lr_appearance: float = 0.03
    lr_renderer: float = 2e-3
    lr_backdrop: float = 0.05
    views_per_iter: int = 1
    seed: int = 0
    image_size: int = 128
    shape_size: int = 64
    appearance_size: int = 128
    latent_dim: int = 16
    appearance_dim: int = 8
    pyramid_levels: int = 3
    unet_base: int = 16
    backdrop_size: int = 32
    strand_count: int = 500
    num_segments: int = 100
    gen_hidden: int = 64
    gen_layers: int = 4
    modulator_hidden: int = 64
    trimap_dilate: int = 6
    trimap_erode: int = 4
    mask_close: int = 2
    chamfer_mm: float = 1000.0  # distance term unit inside the Chamfer
    lambda1: float = 1.0
    lambda2: float = 1e-3
    lambda3: float = 1e-3
    lambda_l: float = 0.1
    snapshot_every: int = 0
    log_every: int = 100

    def generator_config(self):
        return GeneratorConfig(latent_dim=self.latent_dim,
                               hidden=self.gen_hidden,
                               layers=self.gen_layers,
                               modulator_hidden=self.modulator_hidden,
                               num_segments=self.num_segments)

    def loss_weights(self):
        return LossWeights(lambda1=self.lambda1, lambda2=self.lambda2,
                           lambda3=self.lambda3, lambda_l=self.lambda_l,
                           warmup_iters=self.warmup_iters)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"FitConfig: unknown keys {sorted(unknown)}")
        return cls(**known)


@dataclass
class SceneData:
    cameras: list
    train_views: list
    holdout_views: list
    images: list
    scan: ScanSegments
    scalp: ScalpSurface
    gt: object = None
    meta: dict = field(default_factory=dict)


def synthesize_scene(style, n_views=16, holdout=4, image_size=128,
                     rig_radius=0.5, seed=0, noise_sigma=0.0002,
                     drop_fraction=0.1):
    """Full synthetic scene: hairstyle, rig, targets, simulated scan."""
    scalp = ScalpSurface(radius=0.1)
    gt = generate_hairstyle(style, scalp, seed=seed)
    cameras = build_rig(n_views, radius=rig_radius, size=image_size,
                        center=scalp.center)
    images = render_targets(gt, cameras)
    rng = np.random.default_rng(seed + 17)
    order = rng.permutation(n_views)
    holdout_views = sorted(int(v) for v in order[:holdout])
    train_views = sorted(int(v) for v in order[holdout:])
    scan = simulate_scan(gt, [cameras[v] for v in train_views],
                         noise_sigma=noise_sigma,
                         drop_fraction=drop_fraction, seed=seed + 29)
    return SceneData(cameras=cameras, train_views=train_views,
                     holdout_views=holdout_views, images=images, scan=scan,
                     scalp=scalp, gt=gt,
                     meta={"style": asdict(style), "seed": seed,
                           "image_size": image_size})


def save_scene(path, scene):
    import os
    os.makedirs(path, exist_ok=True)
    io_formats.save_rig(f"{path}/rig.json", scene.cameras)
    io_formats.save_segments(f"{path}/scan.nseg", scene.scan)
    if scene.gt is not None:
        io_formats.save_strands(f"{path}/gt.nstr", scene.gt)
    for i, img in enumerate(scene.images):
        io_formats.save_raw(f"{path}/target_{i:03d}.nraw", img)
        io_formats.save_png(f"{path}/target_{i:03d}.png", img)
    io_formats.save_json(f"{path}/scene.json", {
        "train_views": scene.train_views,
        "holdout_views": scene.holdout_views,
        "scalp": {"center": list(scene.scalp.center),
                  "radius": scene.scalp.radius},
        "meta": scene.meta})


def load_scene(path):
    meta = io_formats.load_json(f"{path}/scene.json")
    scalp = ScalpSurface(center=meta["scalp"]["center"],
                         radius=meta["scalp"]["radius"])
    cameras = io_formats.load_rig(f"{path}/rig.json")
    scan = io_formats.load_segments(f"{path}/scan.nseg")
    images = [io_formats.load_raw(f"{path}/target_{i:03d}.nraw")
              for i in range(len(cameras))]
    gt = None
    import os
    if os.path.exists(f"{path}/gt.nstr"):
        gt = io_formats.load_strands(f"{path}/gt.nstr", scalp=scalp)
    return SceneData(cameras=cameras, train_views=meta["train_views"],
                     holdout_views=meta["holdout_views"], images=images,
                     scan=scan, scalp=scalp, gt=gt,
                     meta=meta.get("meta", {}))


def scan_coverage_mask(scan, camera):
    """Hard coverage of the scan polylines in a camera, for trimaps."""
    pts = [np.asarray(p) for p in scan.points]
    if not pts:
        return np.zeros((camera.height, camera.width), dtype=bool)
    maxlen = max(p.shape[0] for p in pts)
    stacked = []
    for p in pts:
        pad = np.repeat(p[-1:], maxlen - p.shape[0], axis=0)
        stacked.append(np.concatenate([p, pad]))
    frag = hard_rasterize(np.stack(stacked), camera)
    return frag.coverage


class FitState:
    """Everything a fitted subject carries: frozen generator, optimizable
    textures/renderer/backdrop, and the fixed root layout."""

    def __init__(self, config, generator, shape_tex, appearance_tex,
                 renderer, backdrop, root_uvs, scalp):
        self.config = config
        self.generator = generator
        self.shape_tex = shape_tex
        self.appearance_tex = appearance_tex
        self.renderer = renderer
        self.backdrop = backdrop
        self.root_uvs = np.asarray(root_uvs, dtype=np.float64)
        self.scalp = scalp
        frames = [scalp.frame_at(uv) for uv in self.root_uvs]
        self.frame_mats = np.stack([f.matrix() for f in frames])
        self.frame_origins = np.stack([f.origin for f in frames])
        self.decode_calls = 0

    @classmethod
    def initialize(cls, config, generator, scalp):
        rng = np.random.default_rng(config.seed + 1)
        uvs = root_layout(config.strand_count, rng)
        shape_tex = NeuralTexture(config.shape_size, config.shape_size,
                                  config.latent_dim, "shape")
        app_tex = NeuralTexture(
            config.appearance_size, config.appearance_size,
            config.appearance_dim, "appearance",
            np.random.default_rng(config.seed + 2).normal(
                0.0, 0.01, (config.appearance_size, config.appearance_size,
                            config.appearance_dim)))
        renderer = RendererParams(
            np.random.default_rng(config.seed + 3),
            in_channels=config.appearance_dim + 4 + 3 + 1,
            levels=config.pyramid_levels, base=config.unet_base)
        backdrop = SceneBackdrop.create(
            scalp, size=config.backdrop_size,
            rng=np.random.default_rng(config.seed + 4))
        return cls(config, generator, shape_tex, app_tex, renderer,
                   backdrop, uvs, scalp)

    # --- differentiable forward pieces used by fit ---

    def strand_tensors(self, node_mask=None):
        """Decode every strand: returns (world, flat_world, flat_units)."""
        L = self.config.num_segments
        ts = np.arange(L) / L
        zg = sample(self.shape_tex, self.root_uvs)
        dirs = decode(self.generator, zg, ts)
        pts_local = integrate(dirs)
        if node_mask is not None:
            pts_local = ad.scale_grad(pts_local, node_mask)
        world = ad.apply_frames(pts_local, self.frame_mats,
                                self.frame_origins)
        n = self.root_uvs.shape[0]
        flat_world = ad.reshape(world, (n * (L + 1), 3))
        _, units, _ = node_directions(world)
        units_nodes = ad.concat([units, units[:, L - 1:L]], axis=1)
        flat_units = ad.reshape(units_nodes, (n * (L + 1), 3))
        return world, flat_world, flat_units

    # --- inference-time numpy paths (serving, eval, timing) ---

    def decode_geometry(self, haircut=None, wind=None, shape_overrides=None):
        """World-space strand points and per-node units (numpy, no grads).

        shape_overrides: optional list of (strand_index, dim, value) latent
        edits applied to the sampled codes before decoding.
        """
        self.decode_calls += 1
        from . import kernels
        L = self.config.num_segments
        ts = np.arange(L) / L
        zg = kernels.texture_gather(self.shape_tex.data, self.root_uvs)
        if shape_overrides:
            for si, dim, value in shape_overrides:
                zg[si, dim] = value
        dirs = decode(self.generator, ad.Tensor(zg), ts).data
        pts = integrate(dirs).data
        if haircut is not None:
            pts = haircut_points(pts, haircut)
        if wind is not None:
            direction, amplitude, phase = wind
            pts = wind_points(pts, direction, amplitude, phase)
        world = np.matmul(pts, self.frame_mats) \
            + self.frame_origins[:, None, :]
        _, units, _ = node_directions(world)
        units_nodes = np.concatenate([units, units[:, -1:]], axis=1)
        return world, units_nodes

    def render_view(self, camera, world=None, units=None):
        """Raster + synthesize + composite for one camera (numpy outputs)."""
        if world is None or units is None:
            world, units = self.decode_geometry()
        from . import kernels
        frag = hard_rasterize(world, camera)
        cov = frag.coverage
        n, l1 = world.shape[:2]
        za = kernels.texture_gather(self.appearance_tex.data, self.root_uvs)
        flat_world = world.reshape(-1, 3)
        flat_units = units.reshape(-1, 3)
        s = frag.strand[cov]
        k = frag.segment[cov]
        tw = frag.tparam[cov]
        idx0 = s * l1 + k
        idx1 = idx0 + 1
        p_vis = (1 - tw)[:, None] * flat_world[idx0] \
            + tw[:, None] * flat_world[idx1]
        d_vis = (1 - tw)[:, None] * flat_units[idx0] \
            + tw[:, None] * flat_units[idx1]
        t_vis = (k + tw) / (l1 - 1)
        desc = np.concatenate([za[s], d_vis, t_vis[:, None]], axis=1)
        px, _ = camera.project_np(p_vis)
        pyr = splat(ad.Tensor(px), ad.Tensor(desc), camera,
                    self.config.pyramid_levels)
        vd = view_direction_map(camera)
        rgb, alpha = render_hair(self.renderer, pyr, vd)
        back = self.backdrop.render(camera)
        full = composite(rgb, alpha, back)
        return {"rgb": rgb.data, "alpha": alpha.data[:, :, 0],
                "full": full.data, "backdrop": back.data}

    # --- persistence ---

    def named_tensors(self):
        named = {"shape_tex": self.shape_tex.tensor,
                 "appearance_tex": self.appearance_tex.tensor,
                 "root_uvs": ad.Tensor(self.root_uvs)}
        for k, v in self.renderer.tensors().items():
            named[f"renderer.{k}"] = v
        for k, v in self.backdrop.tensors().items():
            named[f"{k}"] = v
        for k, v in self.generator.tensors().items():
            named[f"generator.{k}"] = v
        return named

    def save(self, path):
        import os
        os.makedirs(path, exist_ok=True)
        io_formats.save_checkpoint(f"{path}/state.nckp",
                                   self.named_tensors())
        io_formats.save_json(f"{path}/state.json", {
            "config": self.config.to_dict(),
            "scalp": {"center": list(self.scalp.center),
                      "radius": self.scalp.radius}})

    @classmethod
    def load(cls, path):
        meta = io_formats.load_json(f"{path}/state.json")
        config = FitConfig.from_dict(meta["config"])
        scalp = ScalpSurface(center=meta["scalp"]["center"],
                             radius=meta["scalp"]["radius"])
        named = io_formats.load_checkpoint(
            f"{path}/state.nckp", expected=["shape_tex", "appearance_tex",
                                            "root_uvs"])
        generator = GeneratorParams(config.generator_config(),
                                    np.random.default_rng(0))
        _assign(generator.tensors(), named, "generator.")
        shape = NeuralTexture(config.shape_size, config.shape_size,
                              config.latent_dim, "shape",
                              named["shape_tex"])
        app = NeuralTexture(config.appearance_size, config.appearance_size,
                            config.appearance_dim, "appearance",
                            named["appearance_tex"])
        renderer = RendererParams(
            np.random.default_rng(0),
            in_channels=config.appearance_dim + 4 + 3 + 1,
            levels=config.pyramid_levels, base=config.unet_base)
        _assign(renderer.tensors(), named, "renderer.")
        backdrop = SceneBackdrop.create(scalp, size=config.backdrop_size)
        _assign(backdrop.tensors(), named, "")
        return cls(config, generator, shape, app, renderer, backdrop,
                   named["root_uvs"], scalp)


def _assign(target_named, loaded, prefix):
    for name, tensor in target_named.items():
        key = prefix + name
        if key not in loaded:
            raise io_formats.FormatError(f"checkpoint missing {key}")
        if loaded[key].shape != tensor.data.shape:
            raise io_formats.FormatError(
                f"checkpoint tensor {key}: shape {loaded[key].shape} != "
                f"{tensor.data.shape}")
        tensor.data = loaded[key]


def fit(scene, generator, config, snapshot_dir=None):
    """Joint optimization of textures, renderer, and backdrop.

    Returns (FitState, history dict). The generator is frozen. Gradients to
    the shape texture pass through both the Chamfer and (after warmup) the
    rendering losses; the coarse-to-fine blur shapes that gradient and the
    root-to-tip mask anneals per-node point gradients.
    """
    state = FitState.initialize(config, generator, scene.scalp)
    rng = np.random.default_rng(config.seed)
    weights = config.loss_weights()
    L = config.num_segments

    scan_pts = scene.scan.all_points()
    scan_dirs = scene.scan.all_directions()
    if scan_pts.shape[0] == 0:
        raise ValueError("fit: scan segments are empty")

    train_cams = [scene.cameras[v] for v in scene.train_views]
    targets = [np.ascontiguousarray(scene.images[v][:, :, :3])
               for v in scene.train_views]
    trimaps = []
    for cam in train_cams:
        mask = scan_coverage_mask(scene.scan, cam)
        if config.mask_close > 0:
            mask = erode(dilate(mask, config.mask_close), config.mask_close)
        trimaps.append(build_trimap(mask, config.trimap_dilate,
                                    config.trimap_erode))
    vd_maps = [view_direction_map(cam) for cam in train_cams]

    opt_shape = ad.Adam([state.shape_tex.tensor], lr=config.lr_shape)
    opt_app = ad.Adam([state.appearance_tex.tensor],
                      lr=config.lr_appearance)
    opt_rend = ad.Adam(list(state.renderer.tensors().values()),
                       lr=config.lr_renderer)
    opt_back = ad.Adam(list(state.backdrop.tensors().values()),
                       lr=config.lr_backdrop)
    optimizers = [opt_shape, opt_app, opt_rend, opt_back]

    blur_total = config.blur_total or config.iterations
    history = {"geo": [], "render": [], "alpha": [], "total": [],
               "sigma": []}
    t_start = time.perf_counter()

    for it in range(config.iterations):
        mask = root_to_tip_mask(it, config.anneal_iters, L) \
            if config.root_to_tip else None
        world, flat_world, flat_units = state.strand_tensors(mask)
        l_geo = chamfer_geo(flat_world, flat_units, scan_pts, scan_dirs,
                            distance_scale=config.chamfer_mm)

        # the view stream advances every iteration so schedule settings
        # never shift the random sequence
        picks = rng.integers(0, len(train_cams),
                             size=config.views_per_iter)
        l_render, l_alpha = 0.0, 0.0
        rendering = it >= weights.warmup_iters and \
            (weights.lambda2 > 0 or weights.lambda3 > 0)
        if rendering:
            za = sample(state.appearance_tex, state.root_uvs)
            for v in picks:
                lr_v, la_v = _view_losses(state, scene, flat_world,
                                          flat_units, za, train_cams[v],
                                          targets[v], trimaps[v],
                                          vd_maps[v], weights)
                l_render = ad.add(l_render, lr_v)
                l_alpha = ad.add(l_alpha, la_v)
            scale = 1.0 / len(picks)
            l_render = ad.mul(l_render, scale)
            l_alpha = ad.mul(l_alpha, scale)

        total = total_loss(l_geo, l_render, l_alpha, weights, it)
        for opt in optimizers:
            opt.zero_grad()
        ad.backward(total)

        sigma = blur_schedule(it, blur_total, config.blur_sigma_start,
                              config.blur_sigma_end) \
            if config.coarse_to_fine else 0.0
        g = state.shape_tex.tensor.grad
        if g is not None and sigma > 0:
            state.shape_tex.tensor.grad = blur_gradient(g, sigma)
        for opt in optimizers:
            opt.step()

        history["geo"].append(l_geo.item())
        history["render"].append(l_render.item()
                                 if isinstance(l_render, ad.Tensor)
                                 else float(l_render))
        history["alpha"].append(l_alpha.item()
                                if isinstance(l_alpha, ad.Tensor)
                                else float(l_alpha))
        history["total"].append(total.item())
        history["sigma"].append(sigma)

        if config.log_every and it % config.log_every == 0:
            logger.info("fit it=%d geo=%.4f render=%.5f alpha=%.5f "
                        "sigma=%.2f (%.1fs)", it, history["geo"][-1],
                        history["render"][-1], history["alpha"][-1], sigma,
                        time.perf_counter() - t_start)
        if snapshot_dir and config.snapshot_every \
                and it % config.snapshot_every == 0:
            _snapshot(state, scene, snapshot_dir, it)
    return state, history


def _view_losses(state, scene, flat_world, flat_units, za, cam, target,
                 trimap, vd, weights):
    frag = hard_rasterize(
        flat_world.data.reshape(state.root_uvs.shape[0], -1, 3), cam)
    cov = frag.coverage
    l1 = state.config.num_segments + 1
    s = frag.strand[cov]
    k = frag.segment[cov]
    tw = frag.tparam[cov]
    idx0 = s * l1 + k
    p_vis = ad.lerp_rows(flat_world, idx0, idx0 + 1, tw)
    d_vis = ad.lerp_rows(flat_units, idx0, idx0 + 1, tw)
    za_vis = ad.gather_rows(za, s)
    t_vis = ad.Tensor(((k + tw) / (l1 - 1))[:, None])
    desc = ad.concat([za_vis, d_vis, t_vis], axis=1)
    from .raster import project as project_op
    proj = project_op(p_vis, cam)
    px = proj[:, 0:2]
    pyr = splat(px, desc, cam, state.config.pyramid_levels)
    rgb, alpha = render_hair(state.renderer, pyr, vd)
    back = state.backdrop.render(cam)
    full = composite(rgb, alpha, back)
    return (render_loss(full, target, weights.lambda_l),
            alpha_loss(alpha, trimap))


def _snapshot(state, scene, out_dir, iteration):
    import os
    os.makedirs(out_dir, exist_ok=True)
    v = scene.holdout_views[0] if scene.holdout_views else 0
    out = state.render_view(scene.cameras[v])
    gt = scene.images[v][:, :, :3]
    grid = np.concatenate([out["full"], gt], axis=1)
    io_formats.save_png(f"{out_dir}/iter_{iteration:05d}.png", grid)


# ---------------------------------------------------------------------------
# metrics


def eval_geometry(pred_pts, pred_dirs, gt_pts, gt_dirs,
                  thresholds=GEO_THRESHOLDS):
    """Precision/recall/F-score over point clouds with directions.

    A point is a true positive iff its nearest neighbor in the other set is
    within tau_p meters and the direction angle is within tau_d degrees.
    """
    pred_pts = np.asarray(pred_pts, dtype=np.float64).reshape(-1, 3)
    gt_pts = np.asarray(gt_pts, dtype=np.float64).reshape(-1, 3)
    pred_dirs = np.asarray(pred_dirs, dtype=np.float64).reshape(-1, 3)
    gt_dirs = np.asarray(gt_dirs, dtype=np.float64).reshape(-1, 3)
    if pred_pts.shape[0] == 0 or gt_pts.shape[0] == 0:
        raise ValueError("eval_geometry: empty point set")

    idx_pg = nearest_indices(gt_pts, pred_pts)
    idx_gp = nearest_indices(pred_pts, gt_pts)
    d_pg = np.linalg.norm(pred_pts - gt_pts[idx_pg], axis=1)
    d_gp = np.linalg.norm(gt_pts - pred_pts[idx_gp], axis=1)
    ang_pg = _angles_deg(pred_dirs, gt_dirs[idx_pg])
    ang_gp = _angles_deg(gt_dirs, pred_dirs[idx_gp])

    out = {}
    for tau_p, tau_d in thresholds:
        p = 100.0 * np.mean((d_pg <= tau_p) & (ang_pg <= tau_d))
        r = 100.0 * np.mean((d_gp <= tau_p) & (ang_gp <= tau_d))
        f = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
        key = f"{tau_p * 1000:.0f}mm_{tau_d:.0f}deg"
        out[key] = {"precision": p, "recall": r, "fscore": f}
    return out


def _angles_deg(a, b):
    na = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    nb = b / np.maximum(np.linalg.norm(b, axis=1, keepdims=True), 1e-12)
    dots = np.clip(np.einsum("ij,ij->i", na, nb), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def psnr(pred, gt, peak=1.0):
    mse = float(np.mean((np.asarray(pred) - np.asarray(gt)) ** 2))
    if mse <= 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _gauss_window(size=11, sigma=1.5):
    xs = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def ssim(pred, gt, k1=0.01, k2=0.03, peak=1.0):
    """Mean SSIM with the standard 11x11 Gaussian window; multi-channel
    images are averaged over channels."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"ssim: shapes {pred.shape} vs {gt.shape}")
    if pred.ndim == 3:
        return float(np.mean([ssim(pred[:, :, c], gt[:, :, c], k1, k2, peak)
                              for c in range(pred.shape[2])]))
    win = _gauss_window()

    def filt(img):
        t = np.lib.stride_tricks.sliding_window_view(img, 11, axis=0)
        t = np.einsum("iwk,k->iw", t, win)
        t = np.lib.stride_tricks.sliding_window_view(t, 11, axis=1)
        return np.einsum("iwk,k->iw", t, win)

    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    mu_p, mu_g = filt(pred), filt(gt)
    var_p = filt(pred * pred) - mu_p ** 2
    var_g = filt(gt * gt) - mu_g ** 2
    cov = filt(pred * gt) - mu_p * mu_g
    num = (2 * mu_p * mu_g + c1) * (2 * cov + c2)
    den = (mu_p ** 2 + mu_g ** 2 + c1) * (var_p + var_g + c2)
    return float(np.mean(num / den))


def hair_crop(gt_rgba, pad=4):
    """Bounding box of the hair alpha region, padded and clipped."""
    alpha = gt_rgba[:, :, 3] > 0
    if not alpha.any():
        return (0, gt_rgba.shape[0], 0, gt_rgba.shape[1])
    ys, xs = np.nonzero(alpha)
    h, w = alpha.shape
    return (max(0, ys.min() - pad), min(h, ys.max() + pad + 1),
            max(0, xs.min() - pad), min(w, xs.max() + pad + 1))


def eval_images(pred_views, gt_views_rgba):
    """PSNR and SSIM over hair-region crops, mean across views, plus the
    best-constant-color baseline PSNR."""
    if len(pred_views) != len(gt_views_rgba):
        raise ValueError("eval_images: view count mismatch")
    psnrs, ssims, base = [], [], []
    for pred, gt in zip(pred_views, gt_views_rgba):
        if pred.shape[:2] != gt.shape[:2]:
            raise ValueError(f"eval_images: size mismatch {pred.shape} vs "
                             f"{gt.shape}")
        y0, y1, x0, x1 = hair_crop(gt)
        p = pred[y0:y1, x0:x1, :3]
        g = gt[y0:y1, x0:x1, :3]
        psnrs.append(psnr(p, g))
        ssims.append(ssim(p, g))
        const = g.mean(axis=(0, 1), keepdims=True)
        base.append(psnr(np.broadcast_to(const, g.shape), g))
    return {"psnr": float(np.mean(psnrs)), "ssim": float(np.mean(ssims)),
            "constant_baseline_psnr": float(np.mean(base))}


def time_stages(state, camera, repeats=20):
    """Median wall-clock of the decode and render stages, milliseconds."""
    decode_times, render_times = [], []
    world = units = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        world, units = state.decode_geometry()
        decode_times.append((time.perf_counter() - t0) * 1e3)
    for _ in range(repeats):
        t0 = time.perf_counter()
        state.render_view(camera, world, units)
        render_times.append((time.perf_counter() - t0) * 1e3)
    return {"decode_ms": float(np.median(decode_times)),
            "render_ms": float(np.median(render_times)),
            "decode_iqr_ms": float(np.subtract(
                *np.percentile(decode_times, [75, 25]))),
            "render_iqr_ms": float(np.subtract(
                *np.percentile(render_times, [75, 25])))}


def evaluate(state, scene, timing_repeats=20):
    """MetricsReport: geometry P/R/F, held-out image quality, timings."""
    world, units = state.decode_geometry()
    report = {}
    roots = world[:, 0]
    on_scalp = scene.scalp.distance_to_surface(roots) < 1e-6
    report["root_connected_percent"] = float(100.0 * np.mean(on_scalp))

    if scene.gt is not None:
        gt_world = scene.gt.points_world()
        _, gt_units, _ = node_directions(gt_world)
        gt_units_nodes = np.concatenate([gt_units, gt_units[:, -1:]], axis=1)
        report["geometry"] = eval_geometry(world, units, gt_world,
                                           gt_units_nodes)

    preds, gts = [], []
    for v in scene.holdout_views:
        preds.append(state.render_view(scene.cameras[v], world,
                                       units)["full"])
        gts.append(scene.images[v])
    if preds:
        report["image"] = eval_images(preds, gts)
    cam = scene.cameras[scene.holdout_views[0]] if scene.holdout_views \
        else scene.cameras[0]
    report["timing"] = time_stages(state, cam, repeats=timing_repeats)
    return report
