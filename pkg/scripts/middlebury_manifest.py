#!/usr/bin/env python3
"""Write an lfdepth manifest for a Middlebury 2003 multi-view scene (Teddy, Cones).

Expects the quarter-size layout: im0.png .. im8.png, disp2.png, disp6.png
(disparity x 4, 0 = unknown, between views 2 and 6) and optionally the
evaluation masks nonocc.png, all.png, disc.png of view 2.

    python scripts/middlebury_manifest.py data/teddy --name teddy
    export LFDEPTH_TEDDY_MANIFEST=data/teddy/manifest.txt
"""

import argparse
import sys
from pathlib import Path

from PIL import Image

MASKS = {"nocc": "nonocc.png", "all": "all.png", "disc": "disc.png"}
# ground-truth pairs span four view spacings
GT_SPACING = 4


def manifest_lines(root: Path, name: str, views: int, disp_range, gt_scale: float) -> list[str]:
    images = [root / f"im{i}.png" for i in range(views)]
    missing = [p.name for p in images if not p.exists()]
    if missing:
        raise FileNotFoundError(f"{root}: missing {', '.join(missing)}")
    with Image.open(images[0]) as im:
        w, h = im.size
    lines = [
        f"name = {name}",
        # depth is expressed as focal * baseline / disparity; the focal only sets units
        f"rectified.focal = {float(w)!r}",
        "rectified.baseline = 1.0",
        f"rectified.disparity_range = {disp_range[0]!r} {disp_range[1]!r}",
        f"eval.disparity_scale = {float(GT_SPACING)!r}",
    ]
    for i in range(views):
        lines += [f"view.{i}.image = im{i}.png", f"view.{i}.position = {float(i)!r} 0.0"]
        disp = root / f"disp{i}.png"
        if disp.exists():
            lines += [f"view.{i}.gt_disparity = {disp.name}",
                      f"view.{i}.gt_disparity_scale = {gt_scale!r}"]
        if i == 2:
            lines += [f"view.2.mask.{k} = {f}" for k, f in MASKS.items() if (root / f).exists()]
    return lines


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", type=Path, help="scene directory")
    ap.add_argument("--name", help="dataset name (default: directory name)")
    ap.add_argument("--views", type=int, default=9)
    ap.add_argument("--disparity-range", type=float, nargs=2, default=(2.0, 15.0),
                    metavar=("MIN", "MAX"), help="disparity between adjacent views, pixels")
    ap.add_argument("--gt-scale", type=float, default=4.0,
                    help="stored ground-truth value per pixel of disparity")
    ap.add_argument("--out", type=Path, help="manifest path (default: ROOT/manifest.txt)")
    args = ap.parse_args(argv)
    try:
        lines = manifest_lines(args.root, args.name or args.root.name, args.views,
                               args.disparity_range, args.gt_scale)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    out = args.out or args.root / "manifest.txt"
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
