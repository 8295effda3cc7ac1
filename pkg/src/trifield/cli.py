"""Command line interface: train, render, eval, ablate, gen-scene.

Exit codes are a stable contract: 0 success, 2 usage or configuration
error, 3 numerical failure during optimization. Heavy imports happen after
--threads is applied so the BLAS pool size can still be pinned.
"""

from __future__ import annotations

import argparse
import os
import sys


def _apply_threads(n):
    if n is None:
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    if "numpy" in sys.modules:
        try:
            import threadpoolctl

            threadpoolctl.threadpool_limits(n)
        except ImportError:
            pass


def _add_common(p):
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trifield",
        description="Joint depth, light, and radiance fields on synthetic scenes",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model per the config schedule")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    _add_common(p)

    p = sub.add_parser("render", help="render a posed frame from a checkpoint")
    p.add_argument("--config", required=True, help="resolved config of the run")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", default=None, help="scene file (defaults to config)")
    p.add_argument("--frame", type=int, default=0, help="frame index in the scene")
    p.add_argument("--decoder", choices=("R", "DL", "both"), default="both")
    p.add_argument("--ply", action="store_true", help="also export a point cloud")
    _add_common(p)

    p = sub.add_parser("eval", help="compute metrics over a scene split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument("--split", choices=("train", "test"), default="test")
    _add_common(p)

    p = sub.add_parser("ablate", help="train and evaluate several variants")
    p.add_argument("--config", required=True)
    p.add_argument("--tags", required=True, help="comma-separated variant tags")
    _add_common(p)

    p = sub.add_parser("gen-scene", help="generate the procedural scene file")
    p.add_argument("--config", required=True)
    _add_common(p)
    return parser


def _load_run(args):
    from .config import load_config

    cfg = load_config(args.config)
    if args.seed is not None:
        import dataclasses

        cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
    if args.out is not None:
        cfg.out = args.out
    cfg.validate()
    return cfg


def _restore(cfg, checkpoint_path):
    import dataclasses

    from .checkpoint import load_checkpoint, restore_model
    from .optim import AdamWState
    from .trainer import ablation_variant, active_parameters, build_model

    tcfg = ablation_variant(cfg.train, cfg.ablation)
    model = build_model(tcfg)
    params = active_parameters(model, tcfg)
    opt = AdamWState([p for _, p in params])
    ck = load_checkpoint(checkpoint_path)
    restore_model(ck, params, opt, cfg.trajectory_hash())
    return model, tcfg


def cmd_train(args) -> int:
    from pathlib import Path

    from .config import format_config, resolve_scene
    from .trainer import ablation_variant, fit

    cfg = _load_run(args)
    scene = resolve_scene(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved").write_text(format_config(cfg))
    tcfg = ablation_variant(cfg.train, cfg.ablation)

    def progress(row):
        if row["epoch"] % 50 == 0 or row["epoch"] == tcfg.total_epochs - 1:
            print(
                f"epoch {row['epoch']:5d}  total {row['total']:.5f}  "
                f"l_s {row['l_s']:.5f}  l_p {row['l_p']:.5f}  l_v {row['l_v']:.5f}"
            )

    # checkpoints carry the run-level hash so resume rejects config edits
    fit(scene, tcfg, out_dir=out, resume=args.resume, progress=progress,
        config_hash=cfg.trajectory_hash())
    print(f"artifacts written under {out}")
    return 0


def cmd_render(args) -> int:
    from pathlib import Path

    import numpy as np

    from .config import resolve_scene
    from .evaluation import _render_frame, eval_sampling
    from .fileio import export_point_cloud, write_pfm, write_ppm

    cfg = _load_run(args)
    if args.scene is not None:
        cfg.scene = args.scene
    scene = resolve_scene(cfg)
    if not 0 <= args.frame < len(scene.frames):
        print(f"frame {args.frame} out of range (scene has {len(scene.frames)})",
              file=sys.stderr)
        return 2
    model, tcfg = _restore(cfg, args.checkpoint)
    camera = scene.frames[args.frame].camera
    out = Path(cfg.out if args.out is None else args.out)
    out.mkdir(parents=True, exist_ok=True)
    decoders = ("R", "DL") if args.decoder == "both" else (args.decoder,)
    sampling = eval_sampling(tcfg)
    for decoder in decoders:
        color, depth, _ = _render_frame(model, camera, decoder, sampling, seed=0)
        write_ppm(out / f"frame{args.frame:03d}_{decoder}.ppm", color)
        write_pfm(out / f"frame{args.frame:03d}_{decoder}.pfm", depth)
        if args.ply:
            n = export_point_cloud(
                out / f"frame{args.frame:03d}_{decoder}.ply", camera, color, depth
            )
            print(f"{decoder}: wrote {n} points")
    print(f"renders written under {out}")
    return 0


def cmd_eval(args) -> int:
    from pathlib import Path

    from .config import resolve_scene
    from .evaluation import evaluate_model, rows_to_csv

    cfg = _load_run(args)
    if args.scene is not None:
        cfg.scene = args.scene
    scene = resolve_scene(cfg)
    model, tcfg = _restore(cfg, args.checkpoint)
    rows = evaluate_model(model, scene, tcfg, split=args.split,
                          decoders=cfg.decoders())
    csv = rows_to_csv(rows)
    out = Path(cfg.out if args.out is None else args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"metrics_{args.split}.csv").write_text(csv)
    print(csv, end="")
    return 0


def cmd_ablate(args) -> int:
    from pathlib import Path

    from .config import resolve_scene
    from .evaluation import evaluate_model
    from .trainer import ablation_variant, fit

    cfg = _load_run(args)
    tags = [t.strip() for t in args.tags.split(",") if t.strip()]
    if len(tags) < 2:
        print("ablate needs at least two tags", file=sys.stderr)
        return 2
    scene = resolve_scene(cfg)
    out = Path(cfg.out if args.out is None else args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["variant,decoder,abs_rel,rmse,psnr,ssim,queries_per_pixel"]
    for tag in tags:
        tcfg = ablation_variant(cfg.train, tag)
        result = fit(scene, tcfg, out_dir=out / tag)
        decs = ("R", "DL")
        if not tcfg.enable_fields:
            decs = ("R",)
        elif not tcfg.enable_radiance:
            decs = ("DL",)
        rows = evaluate_model(result.model, scene, tcfg, decoders=decs)
        for row in rows:
            if row.frame != "mean":
                continue
            lines.append(
                f"{tag},{row.decoder},{row.abs_rel},{row.rmse},"
                f"{row.psnr},{row.ssim},{row.queries_per_pixel}"
            )
        print(f"variant {tag} done")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_gen_scene(args) -> int:
    from pathlib import Path

    from .config import resolve_scene
    from .scenes import save_scene

    cfg = _load_run(args)
    scene = resolve_scene(cfg)
    out = Path(cfg.out if args.out is None else args.out)
    if out.suffix != ".dlrs":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "scene.dlrs"
    save_scene(scene, out)
    print(f"scene with {len(scene.frames)} frames written to {out}")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "render": cmd_render,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "gen-scene": cmd_gen_scene,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_threads(args.threads)
    from .config import ConfigError
    from .trainer import NumericalError

    try:
        return _COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"missing file: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())
