"""Command-line entry point: ``lfdepth <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import data_io, fixtures
from .config import STAGE_ID, STAGES, ConfigError, PipelineConfig, load_config
from .data_io import DataError
from .evaluation import covisible_mask, psnr, ssim, synthesize_view, zero_disparity_depths
from .fusion import fuse_view, fused_points, write_ply
from .geometry import GeometryError, PinholeCamera
from .pipeline import REGIONS, THRESHOLDS, StageError, depth_name, evaluate_view, run_pipeline
from .superpixel import InvalidParams

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3

# (flag, section, key, type, help)
_FLAGS = [
    ("--manifest", "pipeline", "manifest", str, "dataset manifest"),
    ("--out", "pipeline", "out", str, "output directory"),
    ("--seed", "pipeline", "seed", str, "RNG seed (unsigned 64-bit)"),
    ("--workers", "pipeline", "workers", str, "worker threads"),
    ("--max-neighbors", "pipeline", "max_neighbors", str, "match only the K nearest views"),
    ("--sp-size", "slic", "size", str, "superpixel size in pixels"),
    ("--compactness", "slic", "compactness", str, "SLIC compactness m"),
    ("--slic-iterations", "slic", "iterations", str, "SLIC iterations"),
    ("--levels", "sweep", "levels", str, "plane-sweep levels L"),
    ("--tssd-threshold", "sweep", "tssd_threshold", str, "TSSD truncation T"),
    ("--iterations", "refine", "iterations", str, "refinement iterations"),
    ("--sigma", "refine", "sigma", str, "depth tolerance (inverse depth)"),
    ("--alpha", "refine", "alpha", str, "colour tolerance (CIELAB)"),
    ("--eta", "refine", "eta", str, "occlusion weight"),
    ("--kernel-size", "refine", "kernel_size", str, "initial kernel extent (pixels)"),
    ("--kernel-step", "refine", "kernel_step", str, "initial kernel step (superpixels)"),
    ("--occlusion-band", "refine", "occlusion_band", str, "occlusion band in units of sigma"),
    ("--dump-every", "refine", "dump_every", str, "write depth maps every k iterations"),
    ("--epsilon", "fusion", "epsilon", str, "fusion agreement tolerance (inverse depth)"),
]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style config file; flags override it")
    for flag, _sec, _key, typ, hlp in _FLAGS:
        p.add_argument(flag, type=typ, help=hlp)
    p.add_argument("--resume", action="store_true", help="reuse existing stage outputs")
    p.add_argument("--no-smoothness", action="store_true", help="drop the smoothness term")
    p.add_argument("--no-consistency", action="store_true", help="drop the consistency term")


def _config_from_args(args, stages) -> PipelineConfig:
    over = {}
    for flag, sec, key, _typ, _h in _FLAGS:
        val = getattr(args, flag[2:].replace("-", "_"))
        if val is not None:
            over[(sec, key)] = val
    if args.resume:
        over[("pipeline", "resume")] = "true"
    if args.no_smoothness:
        over[("refine", "use_smoothness")] = "false"
    if args.no_consistency:
        over[("refine", "use_consistency")] = "false"
    if stages is not None:
        over[("pipeline", "stages")] = stages
    cfg = load_config(args.config, over)
    if cfg.manifest is None:
        raise ConfigError("no manifest given (--manifest or [pipeline] manifest)")
    return cfg


def _print_metrics(metrics: dict) -> None:
    if not metrics:
        print("no ground truth available; nothing scored")
        return
    cols = [f"{r}@{t:g}" for r in REGIONS for t in THRESHOLDS]
    print("view  map     " + "  ".join(f"{c:>9}" for c in cols) + "  invdepth_rms")
    for view, per in metrics.items():
        for stage, rec in per.items():
            bp = rec.get("bad_pixel") or {}
            cells = "  ".join(f"{bp[c]:9.2f}" if c in bp else f"{'-':>9}" for c in cols)
            rms = rec.get("inverse_depth_rms_over_range")
            rms_s = f"{100 * rms:10.3f}%" if rms is not None else "-"
            print(f"{view:<5} {stage:<7} {cells}  {rms_s}")


def _cmd_stage(args) -> int:
    stages = args.stages if args.command == "pipeline" else args.command
    cfg = _config_from_args(args, stages)
    res = run_pipeline(cfg)
    if "eval" in cfg.stages:
        _print_metrics(res.metrics)
    print(f"outputs in {cfg.out}")
    return EXIT_OK


def _load_maps(pattern: str, n: int) -> np.ndarray:
    maps = []
    for v in range(n):
        maps.append(data_io.read_pfm(pattern.format(v=v)).astype(np.float64))
    return np.stack(maps)


def _cmd_fuse_pfm(args) -> int:
    """Fuse arbitrary per-view PFMs named by ``--depth-pattern``."""
    desc, mvs = data_io.load_dataset(args.manifest)
    maps = _load_maps(args.depth_pattern, mvs.n_views)
    if maps.shape[1:] != (mvs.height, mvs.width):
        raise DataError("depth maps and images differ in size")
    eps = args.epsilon if args.epsilon is not None else mvs.depth_range.inverse_step(args.levels)
    if not eps > 0:
        raise ConfigError("epsilon must be positive")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for v in range(mvs.n_views):
        fused = fuse_view(v, maps, mvs.cameras, eps)
        data_io.write_pfm(fused.astype(np.float32), out / depth_name(v, "fuse"))
        data_io.write_depth_png(fused, mvs.depth_range, out / depth_name(v, "fuse", "png"))
        if args.ply:
            pts, cols = fused_points(fused, mvs.images[v], mvs.cameras[v])
            write_ply(out / f"fused_v{v}.ply", pts, cols)
    print(f"fused {mvs.n_views} views into {out}")
    return EXIT_OK


def _cmd_eval_pfm(args) -> int:
    desc, mvs = data_io.load_dataset(args.manifest)
    gt_depths = [data_io.load_gt_depth(desc, v) for v in range(mvs.n_views)]
    metrics = {}
    for v in range(mvs.n_views):
        path = Path(args.depth_pattern.format(v=v))
        if not path.exists():
            continue
        covis = None
        if all(g is not None for g in gt_depths):
            covis = covisible_mask(gt_depths, mvs.cameras, v)
        rec = evaluate_view(desc, v, data_io.read_pfm(path).astype(np.float64), covisible=covis)
        if rec is not None:
            metrics[f"view{v}"] = {"input": {"bad_pixel": rec}}
    _print_metrics(metrics)
    return EXIT_OK


def _target_camera(args, desc, mvs) -> tuple[PinholeCamera, list[int], np.ndarray | None]:
    """Target camera, input view indices and the reference image (if any)."""
    inputs = list(range(mvs.n_views))
    if args.target_view is not None:
        k = args.target_view
        if not 0 <= k < mvs.n_views:
            raise ConfigError(f"target view {k} outside 0..{mvs.n_views - 1}")
        inputs.remove(k)
        return mvs.cameras[k], inputs, mvs.images[k]
    if args.target_position is not None:
        if desc.rig is None:
            raise ConfigError("--target-position needs a rectified manifest")
        cam0 = mvs.cameras[0]
        pp = (float(cam0.intrinsics[0, 2]), float(cam0.intrinsics[1, 2]))
        cam = PinholeCamera.rectified(desc.rig.focal, pp, tuple(args.target_position),
                                      desc.rig.baseline, mvs.n_views)
        ref = data_io.read_image(args.reference) if args.reference else None
        return cam, inputs, ref
    raise ConfigError("give --target-view or --target-position")


def _cmd_synth(args) -> int:
    desc, mvs = data_io.load_dataset(args.manifest)
    cam, inputs, ref = _target_camera(args, desc, mvs)
    if args.exclude:
        inputs = [i for i in inputs if i not in set(args.exclude)]
    if not inputs:
        raise ConfigError("no input views left")
    sub = mvs.subset(inputs)
    if args.zero_disparity:
        maps = zero_disparity_depths(sub)
    else:
        maps = _load_maps(args.depth_pattern, mvs.n_views)[inputs]
    img, filled = synthesize_view(sub, maps, cam)
    data_io.write_image(img, args.output)
    print(f"wrote {args.output} ({100 * filled.mean():.1f}% filled)")
    if ref is not None:
        s = ssim(img, ref, mask=filled)
        p = psnr(img, ref, mask=filled)
        print(f"SSIM {s:.4f}  PSNR {'inf' if math.isinf(p) else f'{p:.2f}'} dB")
    return EXIT_OK


def _cmd_fixtures(args) -> int:
    if args.spec:
        spec = fixtures.scene_from_json(args.spec)
        name = args.name or Path(args.spec).stem
    else:
        spec = fixtures.SCENES[args.scene]()
        name = args.name or args.scene
    manifest = fixtures.write_dataset(spec, args.out, name)
    print(f"wrote {manifest}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lfdepth",
                                 description="Superpixel-plane multi-view depth estimation")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name, hlp in [("segment", "SLIC over-segmentation of every view"),
                      ("init", "plane-sweep initial depths"),
                      ("refine", "iterative plane refinement"),
                      ("eval", "bad-pixel scores against ground truth")]:
        p = sub.add_parser(name, help=hlp)
        _add_config_flags(p)
        if name == "eval":
            p.add_argument("--depth-pattern",
                           help="score these PFMs instead, e.g. 'run/disp{v}.pfm'")
        p.set_defaults(func=_cmd_eval if name == "eval" else _cmd_stage)

    p = sub.add_parser("fuse", help="stability-based fusion of refined depth maps")
    _add_config_flags(p)
    p.add_argument("--depth-pattern", help="fuse these PFMs instead, e.g. 'run/d{v}.pfm'")
    p.add_argument("--ply", action="store_true", help="also write fused point clouds")
    p.set_defaults(func=_cmd_fuse)

    p = sub.add_parser("pipeline", help="run segment, init, refine, fuse and eval")
    _add_config_flags(p)
    p.add_argument("--stages", default=None,
                   help=f"comma-separated subset of {','.join(STAGES)}")
    p.set_defaults(func=_cmd_stage)

    p = sub.add_parser("synth", help="forward-warp a novel view")
    p.add_argument("--manifest", required=True)
    p.add_argument("--depth-pattern", default=f"out/depth_v{{v}}_stage{STAGE_ID['fuse']}.pfm",
                   help="per-view depth PFMs, '{v}' = view index")
    p.add_argument("--target-view", type=int, help="hold out this view and synthesise it")
    p.add_argument("--target-position", type=float, nargs=2, metavar=("X", "Y"),
                   help="rig position of a virtual camera (rectified manifests)")
    p.add_argument("--reference", help="ground-truth image for --target-position")
    p.add_argument("--exclude", type=int, nargs="*", default=[], help="views not used as inputs")
    p.add_argument("--zero-disparity", action="store_true", help="use depth at infinity")
    p.add_argument("--output", default="synth.png")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fixtures", help="render a synthetic dataset")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scene", choices=sorted(fixtures.SCENES))
    g.add_argument("--spec", help="scene JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--name")
    p.set_defaults(func=_cmd_fixtures)
    return ap


def _cmd_fuse(args) -> int:
    if args.depth_pattern:
        if args.manifest is None:
            raise ConfigError("--depth-pattern needs --manifest")
        if args.out is None:
            raise ConfigError("--depth-pattern needs --out")
        args.levels = int(args.levels) if args.levels else PipelineConfig().sweep.levels
        args.epsilon = float(args.epsilon) if args.epsilon else None
        return _cmd_fuse_pfm(args)
    return _cmd_stage(args)


def _cmd_eval(args) -> int:
    if args.depth_pattern:
        if args.manifest is None:
            raise ConfigError("--depth-pattern needs --manifest")
        return _cmd_eval_pfm(args)
    return _cmd_stage(args)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, (ConfigError, InvalidParams)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, GeometryError)):
        return EXIT_DATA
    return EXIT_FAIL


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, StageError, InvalidParams, GeometryError) as exc:
        print(f"lfdepth: error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
