"""Command-line entry points: train, eval, infer, visualize, serve.

Every configuration key doubles as a flag (``--loss.lambda1 5``), read after
an optional ``--config`` file, which is read after the optional ``--preset``;
a handful of short conveniences (--mode, --size, --iters, --seed) alias the
common keys. The effective configuration is embedded in every artifact.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import torch
from PIL import Image

from .config import DEFAULTS, ConfigError, RunConfig
from .data import PairSource, load_image, load_mask, to_uint8


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", choices=["desk"], help="bundled small-scale settings")
    parser.add_argument("--config", help="key = value file applied over the preset")
    group = parser.add_argument_group("configuration keys")
    for key, (default, _, help_text) in DEFAULTS.items():
        group.add_argument(f"--{key}", metavar="V", help=f"{help_text} (default {default})")
    parser.add_argument("--mode", choices=["det", "prob"], help="alias for --prior.mode")
    parser.add_argument("--size", type=int, help="alias for --model.image_size")
    parser.add_argument("--iters", type=int, help="alias for --train.iters")
    parser.add_argument("--seed", type=int, help="alias for --train.seed / --eval.seed")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if args.preset:
        cfg.apply_preset(args.preset)
    if args.config:
        cfg.update_from_file(args.config)
    if args.mode:
        cfg.set("prior.mode", args.mode)
    if args.size is not None:
        cfg.set("model.image_size", args.size)
    if args.iters is not None:
        cfg.set("train.iters", args.iters)
    if args.seed is not None:
        cfg.set("train.seed", args.seed)
        cfg.set("eval.seed", args.seed)
    values = vars(args)
    for key in DEFAULTS:
        if values.get(key) is not None:
            cfg.set(key, values[key])
    cfg.validate()
    return cfg


def _add_data_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", help="image directory")
    parser.add_argument("--masks", help="mask directory (optional)")
    parser.add_argument("--synthetic", type=int, default=0, metavar="N",
                        help="use N generated image/mask pairs instead of --data")


def _source(args, cfg: RunConfig, seed: int) -> PairSource:
    return PairSource(
        image_dir=args.data,
        mask_dir=args.masks,
        synthetic=args.synthetic,
        size=cfg["model.image_size"],
        seed=seed,
    )


def cmd_train(args) -> int:
    from . import training
    from .checkpoint import export_inference

    if args.resume:
        state = training.resume(args.resume)
        cfg = state.cfg
    else:
        cfg = _config_from_args(args)
        state = training.build_train_state(cfg)
    remaining = state.tc.total_iters - state.iteration
    if remaining <= 0:
        print("checkpoint already at the configured iteration count", file=sys.stderr)
    else:
        source = _source(args, cfg, cfg["train.seed"])
        training.fit(
            state,
            source.batches(state.tc.batch_size, remaining),
            ckpt_dir=args.out,
            log_every=args.log_every,
        )
    if args.export:
        export_inference(args.out, args.export)
        print(f"inference export written to {args.export}")
    return 0


class _IdentityModel:
    """Debug stand-in that returns the ground truth; pins the metric ceiling."""

    mode = "deterministic"

    def inpaint(self, image, mask, *, seed=None, sample_index=0, composited=True):
        return image.clone()


def cmd_eval(args) -> int:
    from .checkpoint import load_for_inference
    from .evaluation import StubEmbedding, evaluate

    cfg = _config_from_args(args)
    if args.identity:
        model = _IdentityModel()
    else:
        if not args.checkpoint:
            print("--checkpoint is required (or pass --identity)", file=sys.stderr)
            return 2
        model, ckpt_cfg, _ = load_for_inference(args.checkpoint)
        cfg = ckpt_cfg  # metrics must reflect the trained model's settings
    source = _source(args, cfg, cfg["eval.seed"])
    pairs = [source.pair(i) for i in range(len(source))]
    embedding = StubEmbedding(cfg["eval.embed_dim"], cfg["eval.embed_seed"])
    report = evaluate(
        model,
        pairs,
        k=int(args.k) if args.k else cfg["eval.k"],
        composited=cfg["eval.composited"],
        embedding=embedding,
        seed=cfg["eval.seed"],
    )
    table = report.to_table()
    print(table, end="")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.with_suffix(".tsv").write_text(table)
        keyvalues = report.to_keyvalues() + "".join(
            f"config.{line}\n" for line in cfg.to_text().splitlines()
        )
        out.with_suffix(".kv").write_text(keyvalues)
        print(f"report written to {out.with_suffix('.tsv')} and {out.with_suffix('.kv')}")
    return 0


def _load_pair_files(args, levels: int):
    with Image.open(args.image) as probe:
        w, h = probe.size
    size = args.size or min(w, h)
    step = 2 ** (levels - 1)
    if size % step:
        raise SystemExit(f"working size {size} must be a multiple of {step}; pass --size")
    return load_image(args.image, size), load_mask(args.mask, size)


def cmd_infer(args) -> int:
    from .checkpoint import load_for_inference

    model, cfg, _ = load_for_inference(args.checkpoint)
    image, mask = _load_pair_files(args, model.levels)
    samples = args.samples
    if model.mode == "deterministic" and samples > 1:
        print("deterministic model: producing a single image", file=sys.stderr)
        samples = 1
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    for j in range(samples):
        result = model.inpaint(
            image, mask, seed=args.seed, sample_index=j, composited=not args.raw
        )
        path = (
            out_path
            if samples == 1
            else out_path.with_name(f"{out_path.stem}-s{j}{out_path.suffix or '.png'}")
        )
        Image.fromarray(to_uint8(result)).save(path)
        print(f"wrote {path} (seed {args.seed}, sample {j})")
    return 0


def cmd_visualize(args) -> int:
    from .checkpoint import load_for_inference
    from .evaluation import cluster_levels, labels_to_rgb

    model, cfg, _ = load_for_inference(args.checkpoint)
    image, mask = _load_pair_files(args, model.levels)
    masked = (image * (1.0 - mask))[None]
    from .model import seed_generator

    with torch.no_grad():
        out = model.prior(masked, mask[None], use_posterior=False,
                          generator=seed_generator(args.seed))
    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for idx, labels in enumerate(cluster_levels(out.pyramid, args.clusters, seed=args.seed), 1):
        path = prefix.with_name(f"{prefix.stem}-level{idx}.png")
        Image.fromarray(labels_to_rgb(labels)).save(path)
        print(f"wrote {path}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _config_from_args(args)
    checkpoint = args.checkpoint or cfg["serve.checkpoint"] or None
    frontend = cfg["serve.frontend"] or None
    app = create_app(checkpoint, frontend=frontend, max_samples=cfg["serve.max_samples"])
    uvicorn.run(app, host=cfg["serve.host"], port=cfg["serve.port"], log_level="info")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pyramidfill",
                                     description="prior-pyramid image inpainting")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    _add_config_flags(p_train)
    _add_data_flags(p_train)
    p_train.add_argument("--out", required=True, help="checkpoint directory")
    p_train.add_argument("--resume", help="continue from a checkpoint directory")
    p_train.add_argument("--export", help="write an inference export here when done")
    p_train.add_argument("--log-every", type=int, default=100)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="metric report over a dataset")
    _add_config_flags(p_eval)
    _add_data_flags(p_eval)
    p_eval.add_argument("--checkpoint", help="checkpoint directory")
    p_eval.add_argument("--identity", action="store_true",
                        help="score the ground truth against itself (sanity ceiling)")
    p_eval.add_argument("--k", help="samples per image (best-of-k)")
    p_eval.add_argument("--out", help="report path prefix")
    p_eval.set_defaults(func=cmd_eval)

    p_infer = sub.add_parser("infer", help="inpaint one image/mask pair")
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--image", required=True)
    p_infer.add_argument("--mask", required=True)
    p_infer.add_argument("--out", required=True, help="output PNG path")
    p_infer.add_argument("--samples", type=int, default=1)
    p_infer.add_argument("--seed", type=int, default=0)
    p_infer.add_argument("--size", type=int, help="working resolution (square)")
    p_infer.add_argument("--raw", action="store_true", help="skip compositing")
    p_infer.set_defaults(func=cmd_infer)

    p_vis = sub.add_parser("visualize", help="cluster the prior pyramid of one input")
    p_vis.add_argument("--checkpoint", required=True)
    p_vis.add_argument("--image", required=True)
    p_vis.add_argument("--mask", required=True)
    p_vis.add_argument("--out", required=True, help="output path prefix")
    p_vis.add_argument("--clusters", type=int, default=8)
    p_vis.add_argument("--seed", type=int, default=0)
    p_vis.add_argument("--size", type=int, help="working resolution (square)")
    p_vis.set_defaults(func=cmd_visualize)

    p_serve = sub.add_parser("serve", help="run the HTTP inference service")
    _add_config_flags(p_serve)
    p_serve.add_argument("--checkpoint", help="alias for --serve.checkpoint")
    p_serve.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
