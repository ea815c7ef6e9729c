"""Strand generator: shape code -> per-segment direction vectors.

The decoder is a sinusoid MLP whose per-layer amplitude/frequency/phase are
produced from the shape code by a modulator network; integrating the decoded
directions yields the strand polyline. A small 1D-CNN encoder provides the
variational posterior used only during pretraining; afterwards the decoder
is frozen and the encoder kept solely for tests.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .strands import DEFAULT_NODES, Strand, integrate, node_directions

logger = logging.getLogger(__name__)


@dataclass
class GeneratorConfig:
    latent_dim: int = 64
    hidden: int = 128
    layers: int = 4
    modulator_hidden: int = 128
    omega0: float = 30.0
    dir_scale: float = 0.01  # initial output magnitude, meters per segment
    encoder_base: int = 32
    num_segments: int = DEFAULT_NODES


def _uniform(rng, fan_in, shape, scale=1.0):
    bound = np.sqrt(6.0 / fan_in) * scale
    return rng.uniform(-bound, bound, size=shape)


class GeneratorParams:
    """Weights of the modulator and the sinusoid synthesizer."""

    def __init__(self, config, rng):
        self.config = config
        c = config
        # modulator: latent -> hidden -> (a, f, phi) per synthesizer layer
        mod_out = 3 * c.hidden * c.layers
        self.mod_w1 = ad.Tensor(_uniform(rng, c.latent_dim,
                                         (c.latent_dim, c.modulator_hidden)),
                                requires_grad=True)
        self.mod_b1 = ad.Tensor(np.zeros(c.modulator_hidden),
                                requires_grad=True)
        # final modulator layer starts at zero so the initial network is an
        # unmodulated sinusoid MLP: a=1, f=1, phi=0
        self.mod_w2 = ad.Tensor(np.zeros((c.modulator_hidden, mod_out)),
                                requires_grad=True)
        bias = np.zeros(mod_out)
        bias[0:c.hidden * c.layers] = 1.0            # amplitudes
        bias[c.hidden * c.layers:2 * c.hidden * c.layers] = 1.0  # frequencies
        self.mod_b2 = ad.Tensor(bias, requires_grad=True)

        # synthesizer: t -> hidden sinusoid stack -> direction
        self.syn_w = [ad.Tensor(rng.uniform(-1.0, 1.0, size=(1, c.hidden)),
                                requires_grad=True)]
        self.syn_b = [ad.Tensor(np.zeros(c.hidden), requires_grad=True)]
        for _ in range(c.layers - 1):
            self.syn_w.append(ad.Tensor(
                _uniform(rng, c.hidden, (c.hidden, c.hidden)),
                requires_grad=True))
            self.syn_b.append(ad.Tensor(np.zeros(c.hidden),
                                        requires_grad=True))
        self.out_w = ad.Tensor(
            _uniform(rng, c.hidden, (c.hidden, 3), scale=c.dir_scale),
            requires_grad=True)
        self.out_b = ad.Tensor(np.zeros(3), requires_grad=True)

    def tensors(self):
        named = {"mod_w1": self.mod_w1, "mod_b1": self.mod_b1,
                 "mod_w2": self.mod_w2, "mod_b2": self.mod_b2,
                 "out_w": self.out_w, "out_b": self.out_b}
        for i, (w, b) in enumerate(zip(self.syn_w, self.syn_b)):
            named[f"syn_w{i}"] = w
            named[f"syn_b{i}"] = b
        return named


class EncoderParams:
    """1D CNN over strand points: 4 stages, kernel 5, stride 2, then
    average pooling and affine heads for the posterior mean / log-variance."""

    KERNEL = 5
    STRIDE = 2

    def __init__(self, config, rng):
        self.config = config
        c = config
        chans = [3] + [c.encoder_base * (2 ** i) for i in range(4)]
        self.conv_w = []
        self.conv_b = []
        for cin, cout in zip(chans[:-1], chans[1:]):
            self.conv_w.append(ad.Tensor(
                _uniform(rng, cin * self.KERNEL, (self.KERNEL * cin, cout)),
                requires_grad=True))
            self.conv_b.append(ad.Tensor(np.zeros(cout), requires_grad=True))
        self.mu_w = ad.Tensor(_uniform(rng, chans[-1],
                                       (chans[-1], c.latent_dim)),
                              requires_grad=True)
        self.mu_b = ad.Tensor(np.zeros(c.latent_dim), requires_grad=True)
        self.lv_w = ad.Tensor(_uniform(rng, chans[-1],
                                       (chans[-1], c.latent_dim)),
                              requires_grad=True)
        self.lv_b = ad.Tensor(np.zeros(c.latent_dim), requires_grad=True)

    def tensors(self):
        named = {"mu_w": self.mu_w, "mu_b": self.mu_b,
                 "lv_w": self.lv_w, "lv_b": self.lv_b}
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            named[f"conv_w{i}"] = w
            named[f"conv_b{i}"] = b
        return named


def _as_batch(z):
    if isinstance(z, ad.Tensor):
        return (ad.reshape(z, (1, z.shape[0])), True) if z.data.ndim == 1 \
            else (z, False)
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("decode: non-finite shape code")
    t = ad.Tensor(z)
    return (ad.reshape(t, (1, z.shape[0])), True) if z.ndim == 1 else (t, False)


def decode(params, z, ts):
    """Directions (with magnitude) for arc parameters ts in [0, 1].

    z: (D,) or (B, D) shape codes; ts: (K,) sorted ascending. Returns a
    Tensor of shape (B, K, 3) ((K, 3) squeezed for a single code), fully
    differentiable w.r.t. z and the generator weights.
    """
    ts = np.asarray(ts, dtype=np.float64)
    if ts.ndim != 1 or ts.size < 1:
        raise ValueError("decode: ts must be a non-empty 1D array")
    if np.any(np.diff(ts) < 0):
        raise ValueError("decode: ts must be sorted ascending")
    zb, squeeze = _as_batch(z)
    c = params.config
    B, K = zb.shape[0], ts.size

    # modulator
    h = ad.leaky(ad.add(ad.matmul(zb, params.mod_w1), params.mod_b1), 0.01)
    mods = ad.add(ad.matmul(h, params.mod_w2), params.mod_b2)
    n = c.hidden * c.layers
    amp = ad.reshape(mods[:, 0:n], (B, 1, c.layers, c.hidden))
    freq = ad.reshape(mods[:, n:2 * n], (B, 1, c.layers, c.hidden))
    phase = ad.reshape(mods[:, 2 * n:3 * n], (B, 1, c.layers, c.hidden))

    # synthesizer over the (strand, t) grid; t rescaled into [-1, 1]
    t_in = ad.Tensor((2.0 * ts - 1.0).reshape(K, 1))
    x = None
    for layer in range(c.layers):
        if layer == 0:
            pre = ad.mul(ad.add(ad.matmul(t_in, params.syn_w[0]),
                                params.syn_b[0]), c.omega0)
            pre = ad.reshape(pre, (1, K, c.hidden))
        else:
            flat = ad.reshape(x, (B * K, c.hidden))
            pre = ad.add(ad.matmul(flat, params.syn_w[layer]),
                         params.syn_b[layer])
            pre = ad.reshape(pre, (B, K, c.hidden))
        a = amp[:, :, layer]
        f = freq[:, :, layer]
        p = phase[:, :, layer]
        x = ad.mul(a, ad.sin(ad.add(ad.mul(f, pre), p)))

    flat = ad.reshape(x, (B * K, c.hidden))
    out = ad.add(ad.matmul(flat, params.out_w), params.out_b)
    out = ad.reshape(out, (B, K, 3))
    if squeeze:
        out = ad.reshape(out, (K, 3))
    return out


def decode_strand(params, z, num_segments=None):
    """Decode and integrate into local-frame points.

    Fewer segments take proportionally longer steps, trading accuracy for
    compute while covering the same arc.
    """
    c = params.config
    k = num_segments or c.num_segments
    ts = np.arange(k) / k
    dirs = decode(params, z, ts)
    if k != c.num_segments:
        dirs = ad.mul(dirs, c.num_segments / k)
    return integrate(dirs)


def _conv_stage(x, w, b, kernel, stride):
    """Batched strided 1D conv via shifted slices: x (B, L, Cin)."""
    B, L, cin = x.shape
    padded = ad.concat([ad.Tensor(np.zeros((B, 2, cin))), x,
                        ad.Tensor(np.zeros((B, 2, cin)))], axis=1)
    lp = L + 4
    lout = (lp - kernel) // stride + 1
    taps = [padded[:, k:k + (lout - 1) * stride + 1:stride, :]
            for k in range(kernel)]
    col = ad.concat(taps, axis=2)  # (B, Lout, K*Cin)
    flat = ad.reshape(col, (B * lout, kernel * cin))
    out = ad.add(ad.matmul(flat, w), b)
    return ad.leaky(ad.reshape(out, (B, lout, w.shape[1])), 0.01)


def encode_batch(params, points):
    """Posterior (mu, sigma) for a batch of local-frame strands.

    points: (B, L+1, 3) Tensor or array. sigma comes from exp(logvar / 2)
    and is therefore strictly positive.
    """
    x = points if isinstance(points, ad.Tensor) else ad.Tensor(points)
    for w, b in zip(params.conv_w, params.conv_b):
        x = _conv_stage(x, w, b, EncoderParams.KERNEL, EncoderParams.STRIDE)
    pooled = ad.tmean(x, axis=1)
    mu = ad.add(ad.matmul(pooled, params.mu_w), params.mu_b)
    logvar = ad.add(ad.matmul(pooled, params.lv_w), params.lv_b)
    sigma = ad.exp(ad.mul(logvar, 0.5))
    return mu, sigma


def encode(params, strand):
    """Posterior parameters for a single strand (returns (D,) tensors)."""
    pts = strand.points if isinstance(strand, Strand) else strand
    mu, sigma = encode_batch(params, np.asarray(pts)[None])
    d = params.config.latent_dim
    return ad.reshape(mu, (d,)), ad.reshape(sigma, (d,))


def reparameterize(mu, sigma, eps):
    """z = mu + eps * sigma with gradient flow into both moments."""
    eps = ad.as_tensor(eps)
    return ad.add(mu, ad.mul(eps, sigma))


def latent_traverse(params, z, dim, values, num_segments=None):
    """Strands decoded from z with coordinate `dim` swept over values."""
    z = np.asarray(z, dtype=np.float64)
    if not 0 <= dim < params.config.latent_dim:
        raise ValueError(f"latent_traverse: dim {dim} out of range")
    out = []
    for v in values:
        zi = z.copy()
        zi[dim] = v
        pts = decode_strand(params, zi, num_segments).data
        out.append(Strand(points=pts, root_uv=np.zeros(2)))
    return out


@dataclass
class PretrainResult:
    generator: GeneratorParams
    encoder: EncoderParams
    curve: list = field(default_factory=list)
    holdout_error: float = 0.0
    holdout_arc: float = 0.0


def clip_gradients(tensors, max_norm):
    """Scale all gradients down so their global L2 norm is <= max_norm."""
    total = 0.0
    for t in tensors:
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = np.sqrt(total)
    if norm > max_norm:
        scale = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad = t.grad * scale
    return norm


def pretrain_vae(points, config, iters=1500, batch=64, lr=1e-3, seed=0,
                 lambda_kl=1e-3, lambda_d=1e-3, augment_fn=None,
                 holdout_frac=0.1, log_every=200, lr_decay=0.1,
                 clip_norm=1.0):
    """Variational pretraining of the strand generator on local-frame curves.

    points: (N, L+1, 3) array of strands in their root frames. Returns
    PretrainResult with the frozen-ready generator, the encoder (kept for
    tests), the loss curve, and held-out reconstruction error. The learning
    rate decays cosine-style to lr * lr_decay; gradients are clipped to a
    global norm (sinusoid stacks blow up under large steps otherwise).
    """
    from .losses import kl_loss, vae_data_loss

    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_hold = max(1, int(n * holdout_frac))
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]

    gen = GeneratorParams(config, rng)
    enc = EncoderParams(config, rng)
    train_tensors = list(gen.tensors().values()) + list(
        enc.tensors().values())
    opt = ad.Adam(train_tensors, lr=lr)
    ts = np.arange(config.num_segments) / config.num_segments
    curve = []

    for step in range(iters):
        frac = step / max(1, iters - 1)
        opt.lr = lr * (lr_decay + (1 - lr_decay)
                       * 0.5 * (1 + np.cos(np.pi * frac)))
        idx = train_idx[rng.integers(0, train_idx.size, size=batch)]
        batch_pts = points[idx]
        if augment_fn is not None:
            batch_pts = np.stack([augment_fn(p, rng) for p in batch_pts])
        gt_dirs, gt_units, _ = node_directions(batch_pts)

        mu, sigma = encode_batch(enc, batch_pts)
        if not (np.all(np.isfinite(mu.data)) and np.all(sigma.data > 0)
                and np.all(np.isfinite(sigma.data))):
            raise RuntimeError(
                f"pretrain_vae: non-finite posterior at step {step}; "
                f"training diverged (|mu|max={np.abs(mu.data).max():.3g})")
        eps = rng.standard_normal(mu.shape)
        z = reparameterize(mu, sigma, eps)
        dirs = decode(gen, z, ts)
        pts = integrate(dirs)

        data_term = vae_data_loss(pts, dirs, batch_pts, gt_dirs,
                                  lambda_d=lambda_d)
        kl_term = kl_loss(mu, sigma)
        loss = ad.add(ad.mul(data_term, 1.0 / batch),
                      ad.mul(kl_term, lambda_kl / batch))
        value = loss.item()
        if not np.isfinite(value):
            raise RuntimeError(
                f"pretrain_vae: non-finite loss at step {step} "
                f"(data={data_term.item():.4g}, kl={kl_term.item():.4g})")
        curve.append(value)

        opt.zero_grad()
        ad.backward(loss)
        if clip_norm:
            clip_gradients(train_tensors, clip_norm)
        opt.step()
        if log_every and step % log_every == 0:
            logger.info("pretrain step %d loss %.6f", step, value)

    center_latent(gen, enc, points[train_idx])
    result = PretrainResult(generator=gen, encoder=enc, curve=curve)
    err, arc = reconstruction_error(gen, enc, points[hold_idx])
    result.holdout_error = err
    result.holdout_arc = arc
    return result


def center_latent(gen, enc, points, batch=256):
    """Shift the latent origin to the corpus mean code.

    The KL weight is too small to pin the posterior to the prior, so after
    training z = 0 need not decode to anything sensible. Folding the mean
    posterior code into the modulator input bias makes the zero code (the
    fit's texture initialization) decode the dataset-typical strand, and
    shifts the encoder heads to match.
    """
    pts = np.asarray(points, dtype=np.float64)
    means = []
    for i in range(0, pts.shape[0], batch):
        mu, _ = encode_batch(enc, pts[i:i + batch])
        means.append(mu.data)
    zbar = np.concatenate(means).mean(axis=0)
    gen.mod_b1.data = gen.mod_b1.data + zbar @ gen.mod_w1.data
    enc.mu_b.data = enc.mu_b.data - zbar


def reconstruction_error(gen, enc, points):
    """Mean per-point reconstruction distance on given strands, plus the
    mean arc length of those strands (posterior mean, no sampling)."""
    pts = np.asarray(points, dtype=np.float64)
    mu, _ = encode_batch(enc, pts)
    rec = decode_strand(gen, mu).data
    err = float(np.mean(np.linalg.norm(rec - pts, axis=2)))
    arc = float(np.mean(np.linalg.norm(np.diff(pts, axis=1),
                                       axis=2).sum(axis=1)))
    return err, arc
