"""Command-line entry point: synth | pretrain | fit | render | eval |
edit | serve.

Every command accepts --seed, logs the resolved configuration, writes its
outputs atomically, and exits 0 only when everything was written. Failures
print one structured error line to stderr.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

logger = logging.getLogger("strandforge")


def build_parser():
    p = argparse.ArgumentParser(prog="strandforge",
                                description="strand-based hair capture "
                                            "toolkit")
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic scene")
    ps.add_argument("--style", default="wavy",
                    choices=["straight", "wavy", "curly"])
    ps.add_argument("--strands", type=int, default=500)
    ps.add_argument("--views", type=int, default=16)
    ps.add_argument("--holdout", type=int, default=4)
    ps.add_argument("--size", type=int, default=128)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--out", required=True)

    pp = sub.add_parser("pretrain", help="train the strand generator VAE")
    pp.add_argument("--data", required=True,
                    help="scene directory (uses gt.nstr) or .nstr file")
    pp.add_argument("--out", required=True)
    pp.add_argument("--iters", type=int, default=1500)
    pp.add_argument("--batch", type=int, default=64)
    pp.add_argument("--lr", type=float, default=2e-3)
    pp.add_argument("--latent-dim", type=int, default=16)
    pp.add_argument("--hidden", type=int, default=64)
    pp.add_argument("--layers", type=int, default=4)
    pp.add_argument("--modulator-hidden", type=int, default=64)
    pp.add_argument("--seed", type=int, default=0)

    pf = sub.add_parser("fit", help="fit a scene")
    pf.add_argument("--scene", required=True)
    pf.add_argument("--generator", required=True,
                    help="pretrain output directory")
    pf.add_argument("--config", default=None, help="TOML overrides")
    pf.add_argument("--iters", type=int, default=None)
    pf.add_argument("--seed", type=int, default=None)
    pf.add_argument("--out", required=True)

    pr = sub.add_parser("render", help="render a fitted state")
    pr.add_argument("--state", required=True)
    pr.add_argument("--scene", required=True)
    pr.add_argument("--camera", type=int, default=0)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--out", required=True)

    pe = sub.add_parser("eval", help="metrics report for a fitted state")
    pe.add_argument("--state", required=True)
    pe.add_argument("--scene", required=True)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--out", required=True)

    pd = sub.add_parser("edit", help="edit strands and re-render")
    pd.add_argument("--state", required=True)
    pd.add_argument("--scene", required=True)
    pd.add_argument("--camera", type=int, default=0)
    pd.add_argument("--haircut", type=float, default=None)
    pd.add_argument("--wind", default=None,
                    help="dx,dy,dz,amplitude,phase")
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--out", required=True)

    pv = sub.add_parser("serve", help="HTTP service for a fitted state")
    pv.add_argument("--state", required=True)
    pv.add_argument("--scene", required=True)
    pv.add_argument("--port", type=int, default=8649)
    pv.add_argument("--seed", type=int, default=0)
    return p


def cmd_synth(args):
    from . import pipeline
    from .synthdata import style_preset

    style = style_preset(args.style, strand_count=args.strands)
    logger.info("synth: style=%s strands=%d views=%d size=%d seed=%d",
                args.style, args.strands, args.views, args.size, args.seed)
    scene = pipeline.synthesize_scene(style, n_views=args.views,
                                      holdout=args.holdout,
                                      image_size=args.size, seed=args.seed)
    pipeline.save_scene(args.out, scene)
    logger.info("synth: wrote scene with %d scan segments to %s",
                len(scene.scan), args.out)


def cmd_pretrain(args):
    from . import io_formats
    from .generator import GeneratorConfig, pretrain_vae
    from .synthdata import augment

    path = args.data
    if os.path.isdir(path):
        path = os.path.join(path, "gt.nstr")
    strands = io_formats.load_strands(path)
    pts = strands.points_local()
    cfg = GeneratorConfig(latent_dim=args.latent_dim, hidden=args.hidden,
                          layers=args.layers,
                          modulator_hidden=args.modulator_hidden,
                          num_segments=pts.shape[1] - 1)
    logger.info("pretrain: %d strands, config=%s seed=%d", pts.shape[0],
                cfg, args.seed)
    result = pretrain_vae(pts, cfg, iters=args.iters, batch=args.batch,
                          lr=args.lr, seed=args.seed, augment_fn=augment)
    os.makedirs(args.out, exist_ok=True)
    named = {f"generator.{k}": v for k, v in
             result.generator.tensors().items()}
    named.update({f"encoder.{k}": v for k, v in
                  result.encoder.tensors().items()})
    io_formats.save_checkpoint(os.path.join(args.out, "generator.nckp"),
                               named)
    io_formats.save_json(os.path.join(args.out, "generator.json"), {
        "latent_dim": cfg.latent_dim, "hidden": cfg.hidden,
        "layers": cfg.layers, "modulator_hidden": cfg.modulator_hidden,
        "num_segments": cfg.num_segments,
        "holdout_error": result.holdout_error,
        "holdout_arc": result.holdout_arc, "seed": args.seed})
    with open(os.path.join(args.out, "curve.csv"), "w") as f:
        f.write("step,loss\n")
        for i, v in enumerate(result.curve):
            f.write(f"{i},{v}\n")
    logger.info("pretrain: holdout error %.5f (%.1f%% of arc)",
                result.holdout_error,
                100 * result.holdout_error / max(result.holdout_arc, 1e-12))


def load_generator(path):
    from . import io_formats
    from .generator import GeneratorConfig, GeneratorParams

    meta = io_formats.load_json(os.path.join(path, "generator.json"))
    cfg = GeneratorConfig(latent_dim=meta["latent_dim"],
                          hidden=meta["hidden"], layers=meta["layers"],
                          modulator_hidden=meta["modulator_hidden"],
                          num_segments=meta["num_segments"])
    gen = GeneratorParams(cfg, np.random.default_rng(0))
    named = io_formats.load_checkpoint(os.path.join(path, "generator.nckp"))
    for k, t in gen.tensors().items():
        key = f"generator.{k}"
        if key not in named:
            raise io_formats.FormatError(f"{path}: missing tensor {key}")
        t.data = named[key]
    return gen, meta


def cmd_fit(args):
    from . import io_formats, pipeline

    scene = pipeline.load_scene(args.scene)
    gen, gen_meta = load_generator(args.generator)
    overrides = {}
    if args.config:
        overrides.update(io_formats.load_config(args.config))
    if args.iters is not None:
        overrides["iterations"] = args.iters
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides.setdefault("latent_dim", gen_meta["latent_dim"])
    overrides.setdefault("gen_hidden", gen_meta["hidden"])
    overrides.setdefault("gen_layers", gen_meta["layers"])
    overrides.setdefault("modulator_hidden", gen_meta["modulator_hidden"])
    overrides.setdefault("num_segments", gen_meta["num_segments"])
    overrides.setdefault("image_size", scene.meta.get("image_size", 128))
    config = pipeline.FitConfig.from_dict(overrides)
    logger.info("fit: resolved config %s", config.to_dict())

    snap = os.path.join(args.out, "snapshots") if config.snapshot_every \
        else None
    state, history = pipeline.fit(scene, gen, config, snapshot_dir=snap)
    state.save(args.out)
    io_formats.save_json(os.path.join(args.out, "history.json"), history)
    report = pipeline.evaluate(state, scene)
    io_formats.save_json(os.path.join(args.out, "report.json"), report)
    logger.info("fit: final geo %.4f (initial %.4f)", history["geo"][-1],
                history["geo"][0])


def cmd_render(args):
    from . import io_formats, pipeline

    scene = pipeline.load_scene(args.scene)
    state = pipeline.FitState.load(args.state)
    out = state.render_view(scene.cameras[args.camera])
    io_formats.save_png(args.out, out["full"])
    root, ext = os.path.splitext(args.out)
    io_formats.save_png(f"{root}_alpha{ext}", out["alpha"])
    logger.info("render: wrote %s", args.out)


def cmd_eval(args):
    from . import io_formats, pipeline

    scene = pipeline.load_scene(args.scene)
    state = pipeline.FitState.load(args.state)
    report = pipeline.evaluate(state, scene)
    io_formats.save_json(args.out, report)
    logger.info("eval: wrote %s", args.out)


def cmd_edit(args):
    from . import io_formats, pipeline
    from .strands import Frame, Strand, StrandSet

    scene = pipeline.load_scene(args.scene)
    state = pipeline.FitState.load(args.state)
    wind = None
    if args.wind:
        parts = [float(v) for v in args.wind.split(",")]
        if len(parts) != 5:
            raise ValueError("edit: --wind expects dx,dy,dz,amplitude,phase")
        d = np.asarray(parts[:3])
        d = d / np.linalg.norm(d)
        wind = (d, parts[3], parts[4])
    world, units = state.decode_geometry(haircut=args.haircut, wind=wind)
    os.makedirs(args.out, exist_ok=True)
    strands = [Strand(points=p, root_uv=uv)
               for p, uv in zip(world, state.root_uvs)]
    frames = [Frame(origin=np.zeros(3), tangent=np.array([1.0, 0, 0]),
                    bitangent=np.array([0, 1.0, 0]),
                    normal=np.array([0, 0, 1.0]))] * len(strands)
    io_formats.save_strands(os.path.join(args.out, "edited.nstr"),
                            StrandSet(strands=strands, frames=frames))
    out = state.render_view(scene.cameras[args.camera], world, units)
    io_formats.save_png(os.path.join(args.out, "edited.png"), out["full"])
    logger.info("edit: wrote %s", args.out)


def cmd_serve(args):
    from . import pipeline
    from .serve import run_server

    scene = pipeline.load_scene(args.scene)
    state = pipeline.FitState.load(args.state)
    run_server(state, scene, port=args.port)


COMMANDS = {"synth": cmd_synth, "pretrain": cmd_pretrain, "fit": cmd_fit,
            "render": cmd_render, "eval": cmd_eval, "edit": cmd_edit,
            "serve": cmd_serve}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    seed = getattr(args, "seed", None)
    logger.info("command=%s seed=%s", args.command, seed)
    try:
        COMMANDS[args.command](args)
    except Exception as exc:  # one structured line, nonzero exit
        print(json.dumps({"error": type(exc).__name__,
                          "message": str(exc),
                          "command": args.command}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
