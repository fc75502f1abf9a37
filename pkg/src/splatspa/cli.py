"""Command-line surface: fit, sparsify, baseline, prune-ply, eval.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or config.
All CSV output is comma-separated with a header row, LF line endings and
floats at 6 decimal places, so fixed-seed runs are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    InvalidBudgetError,
    InvalidParameterError,
    PlyError,
    ShapeMismatchError,
    SplatSpaError,
    UnsupportedImageError,
)
from .loss_metrics import LossConfig, psnr, ssim
from .model_io import (
    read_image,
    read_splat_ply,
    save_checkpoint,
    simplify_splat_ply,
    write_image,
    write_splat_ply,
)
from .renderer import RenderSettings, render
from .trainer import (
    PRUNE_HIT_COUNT,
    PRUNE_OPACITY,
    SparsifyConfig,
    init_cloud,
    make_schedule,
    oneshot_prune_baseline,
    train_dense,
    train_gaussianspa,
)

_INVALID_INPUT_ERRORS = (
    ConfigError, InvalidBudgetError, InvalidParameterError, ShapeMismatchError,
    PlyError, UnsupportedImageError, FileNotFoundError,
)


def _write_metrics_csv(path, rows, event_iter=None):
    with_event = event_iter is not None
    with open(path, "w", newline="\n") as f:
        f.write("iter,loss,psnr,ssim" + (",event" if with_event else "") + "\n")
        for row in rows:
            line = (f"{row['iter']},{row['loss']:.6f},"
                    f"{row['psnr']:.6f},{row['ssim']:.6f}")
            if with_event:
                line += ",prune" if row["iter"] == event_iter else ","
            f.write(line + "\n")


def _write_residual_csv(path, rows):
    with open(path, "w", newline="\n") as f:
        f.write("iter,residual\n")
        for row in rows:
            f.write(f"{row['iter']},{row['residual']:.6f}\n")


def _write_hist_csv(path, rows):
    bins = ",".join(f"bin_{i:02d}" for i in range(32))
    with open(path, "w", newline="\n") as f:
        f.write("iter," + bins + "\n")
        for row in rows:
            f.write(str(row["iter"]) + ","
                    + ",".join(str(int(c)) for c in row["counts"]) + "\n")


def _run_setup(config):
    gt = read_image(config.image)
    h, w = gt.shape[:2]
    settings = RenderSettings(width=w, height=h, tile_size=config.tile_size,
                              threads=config.threads)
    loss_cfg = LossConfig(rho=config.rho)
    cloud = init_cloud(gt, config.n, config.seed)
    return gt, settings, loss_cfg, cloud


def _dense_schedule(config, w, h):
    # sparsify start at total_iters keeps the sparsifying phase off
    return make_schedule(w, h, total_iters=config.iters,
                         sparsify_start_iter=config.iters,
                         prune_iter=config.iters, rng_seed=config.seed,
                         eval_every=config.eval_every)


def cmd_fit(config):
    config.validate()
    gt, settings, loss_cfg, cloud = _run_setup(config)
    schedule = _dense_schedule(config, settings.width, settings.height)
    result = train_dense(cloud, gt, schedule, loss_config=loss_cfg,
                         render_settings=settings)
    os.makedirs(config.out, exist_ok=True)
    _write_metrics_csv(os.path.join(config.out, "metrics.csv"), result.metrics)
    write_image(render(result.cloud, settings),
                os.path.join(config.out, "render.png"))
    save_checkpoint(result.checkpoint, os.path.join(config.out, "model.ckpt"))
    return 0


def cmd_sparsify(config):
    config.validate(need_kappa=True)
    gt, settings, loss_cfg, cloud = _run_setup(config)
    schedule = make_schedule(settings.width, settings.height,
                             total_iters=config.iters,
                             sparsify_start_iter=config.sparsify_start,
                             prune_iter=config.prune_iter, rng_seed=config.seed,
                             eval_every=config.eval_every)
    sparsify_cfg = SparsifyConfig(kappa=config.kappa, delta=config.delta,
                                  epsilon=config.epsilon,
                                  max_outer=config.max_outer,
                                  interval=config.interval)
    result = train_gaussianspa(cloud, gt, schedule, sparsify_cfg,
                               loss_config=loss_cfg, render_settings=settings)
    os.makedirs(config.out, exist_ok=True)
    _write_metrics_csv(os.path.join(config.out, "metrics.csv"), result.metrics)
    _write_residual_csv(os.path.join(config.out, "residual.csv"), result.residuals)
    _write_hist_csv(os.path.join(config.out, "opacity_hist.csv"),
                    result.opacity_hists)
    write_image(result.prune_render_before,
                os.path.join(config.out, "prune_before.png"))
    write_image(result.prune_render_after,
                os.path.join(config.out, "prune_after.png"))
    write_image(render(result.cloud, settings),
                os.path.join(config.out, "render.png"))
    save_checkpoint(result.checkpoint, os.path.join(config.out, "model.ckpt"))
    return 0


def cmd_baseline(config):
    config.validate(need_keep_fraction=True)
    gt, settings, loss_cfg, cloud = _run_setup(config)
    schedule = make_schedule(settings.width, settings.height,
                             total_iters=config.iters,
                             sparsify_start_iter=config.iters,
                             prune_iter=config.prune_iter, rng_seed=config.seed,
                             eval_every=config.eval_every)
    result = oneshot_prune_baseline(cloud, gt, schedule, config.criterion,
                                    config.keep_fraction, loss_config=loss_cfg,
                                    render_settings=settings)
    os.makedirs(config.out, exist_ok=True)
    _write_metrics_csv(os.path.join(config.out, "metrics.csv"), result.metrics,
                       event_iter=result.events["prune"]["iter"])
    write_image(render(result.cloud, settings),
                os.path.join(config.out, "render.png"))
    save_checkpoint(result.checkpoint, os.path.join(config.out, "model.ckpt"))
    return 0


def cmd_prune_ply(in_path, out_path, kappa):
    record = read_splat_ply(in_path)
    total = record.n
    simplified = simplify_splat_ply(record, kappa)
    write_splat_ply(simplified, out_path)
    mass_all = float(np.sum(record.opacities()))
    mass_kept = float(np.sum(simplified.opacities()))
    fraction = mass_kept / mass_all if mass_all > 0 else 1.0
    print(f"retained={simplified.n} total={total} opacity_mass={fraction:.6f}")
    return 0


def cmd_eval(render_path, gt_path):
    a = read_image(render_path)
    b = read_image(gt_path)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"image sizes differ: {a.shape[:2]} vs {b.shape[:2]}")
    window = min(11, min(a.shape[0], a.shape[1]))
    if window % 2 == 0:
        window -= 1
    if window < 3:
        raise ShapeMismatchError("images must be at least 3x3 for SSIM")
    print(f"psnr={psnr(a, b):.4f} ssim={ssim(a, b, LossConfig(ssim_window=window)):.4f}")
    return 0


def _add_run_flags(p, with_kappa=False, with_keep=False):
    p.add_argument("--config", help="TOML config file; flags override its keys")
    p.add_argument("--image", help="target image path (PNG or PPM)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--n", type=int, help="number of splats at init")
    p.add_argument("--iters", type=int, help="total training iterations")
    p.add_argument("--seed", type=int, help="RNG seed")
    p.add_argument("--eval-every", dest="eval_every", type=int,
                   help="iterations between metric rows")
    p.add_argument("--rho", type=float, help="structural-loss blend weight")
    p.add_argument("--tile-size", dest="tile_size", type=int)
    p.add_argument("--threads", type=int, help="renderer tile threads")
    if with_kappa:
        p.add_argument("--kappa", type=int, help="target splat budget")
        p.add_argument("--delta", type=float, help="penalty weight")
        p.add_argument("--epsilon", type=float, help="feasibility tolerance")
        p.add_argument("--max-outer", dest="max_outer", type=int,
                       help="outer iteration cap")
        p.add_argument("--interval", type=int,
                       help="training iterations between sparsify steps")
        p.add_argument("--sparsify-start", dest="sparsify_start", type=int)
    if with_kappa or with_keep:
        p.add_argument("--prune-iter", dest="prune_iter", type=int)
    if with_keep:
        p.add_argument("--keep-fraction", dest="keep_fraction", type=float)
        p.add_argument("--criterion", choices=[PRUNE_OPACITY, PRUNE_HIT_COUNT],
                       help="one-shot prune criterion")


_RUN_KEYS = ("image", "out", "n", "iters", "seed", "eval_every", "rho",
             "tile_size", "threads", "kappa", "delta", "epsilon", "max_outer",
             "interval", "sparsify_start", "prune_iter", "keep_fraction",
             "criterion")


def _config_from_args(args):
    overrides = {k: getattr(args, k) for k in _RUN_KEYS if hasattr(args, k)}
    return load_config(args.config, overrides)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="splatspa",
        description="Sparsity-constrained 2D Gaussian splat fitting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="dense fit of a splat cloud to an image")
    _add_run_flags(p)
    p.set_defaults(func=lambda a: cmd_fit(_config_from_args(a)))

    p = sub.add_parser("sparsify",
                       help="alternating optimize/sparsify run with pruning")
    _add_run_flags(p, with_kappa=True)
    p.set_defaults(func=lambda a: cmd_sparsify(_config_from_args(a)))

    p = sub.add_parser("baseline", help="one-shot pruning baseline run")
    _add_run_flags(p, with_keep=True)
    p.set_defaults(func=lambda a: cmd_baseline(_config_from_args(a)))

    p = sub.add_parser("prune-ply", help="top-k simplify of a splat PLY file")
    p.add_argument("input", help="input .ply (binary little-endian)")
    p.add_argument("output", help="output .ply")
    p.add_argument("--kappa", type=int, required=True, help="vertices to keep")
    p.set_defaults(func=lambda a: cmd_prune_ply(a.input, a.output, a.kappa))

    p = sub.add_parser("eval", help="print psnr/ssim between two images")
    p.add_argument("rendered", help="rendered or candidate image")
    p.add_argument("reference", help="ground-truth image")
    p.set_defaults(func=lambda a: cmd_eval(a.rendered, a.reference))

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _INVALID_INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SplatSpaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
