"""Procedurally textured planar scenes rendered with exact ground truth.

Scenes are lists of rectangular patches seen by a rectified camera rig.
Everything is seeded, so every fixture is bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data_io import MultiViewSet, write_image, write_manifest, write_pfm
from .geometry import DepthRange, PinholeCamera

TEXTURE_RES = 512


@dataclass(frozen=True)
class Texture:
    kind: str = "noise"          # noise | checker | mixed
    seed: int = 0
    texel: float = 0.01          # world units per texel
    checker_cells: int = 16      # checker squares across the texture tile
    tint: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def image(self) -> np.ndarray:
        return _texture_image(self.kind, self.seed, self.checker_cells, self.tint)


@dataclass(frozen=True)
class Patch:
    center: tuple[float, float, float]
    u_axis: tuple[float, float, float] = (1.0, 0.0, 0.0)
    v_axis: tuple[float, float, float] = (0.0, 1.0, 0.0)
    half_extent: tuple[float, float] = (np.inf, np.inf)
    texture: Texture = field(default_factory=Texture)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(np.asarray(self.u_axis, float), np.asarray(self.v_axis, float))
        return n / np.linalg.norm(n)


@dataclass(frozen=True)
class RigSpec:
    focal: float
    width: int
    height: int
    baseline: float
    positions: tuple[tuple[float, float], ...] = ((0.0, 0.0), (1.0, 0.0))

    def cameras(self) -> list[PinholeCamera]:
        pp = ((self.width - 1) / 2.0, (self.height - 1) / 2.0)
        return [PinholeCamera.rectified(self.focal, pp, pos, self.baseline, i)
                for i, pos in enumerate(self.positions)]


@dataclass(frozen=True)
class SceneSpec:
    patches: tuple[Patch, ...]
    rig: RigSpec
    depth_range: DepthRange

    def __post_init__(self):
        if len(self.rig.positions) < 2:
            raise ValueError("a scene needs at least two cameras")
        for p in self.patches:
            u, v = np.asarray(p.u_axis, float), np.asarray(p.v_axis, float)
            if np.linalg.norm(np.cross(u, v)) < 1e-9:
                raise ValueError("degenerate patch axes")


_TEXTURE_CACHE: dict = {}


def _value_noise(rng, cells: int, res: int) -> np.ndarray:
    """Periodic bilinear value noise, (res, res, 3)."""
    grid = rng.random((cells, cells, 3))
    u = np.arange(res) * cells / res
    i0 = np.floor(u).astype(int)
    f = (u - i0)[:, None]
    i1 = (i0 + 1) % cells
    rows = grid[i0] * (1 - f)[:, :, None] + grid[i1] * f[:, :, None]
    f2 = (u - i0)[None, :, None]
    return rows[:, i0] * (1 - f2) + rows[:, i1] * f2


def _texture_image(kind: str, seed: int, checker_cells: int, tint) -> np.ndarray:
    key = (kind, seed, checker_cells, tuple(tint))
    if key in _TEXTURE_CACHE:
        return _TEXTURE_CACHE[key]
    rng = np.random.default_rng(seed)
    res = TEXTURE_RES
    noise = np.zeros((res, res, 3))
    weight = 0.0
    for cells, w in ((4, 1.0), (8, 0.8), (16, 0.6), (32, 0.5), (64, 0.35)):
        noise += w * _value_noise(rng, cells, res)
        weight += w
    noise /= weight
    lo, hi = noise.min(axis=(0, 1)), noise.max(axis=(0, 1))
    noise = (noise - lo) / np.maximum(hi - lo, 1e-9)
    idx = np.arange(res) * checker_cells // res
    checker = ((idx[:, None] + idx[None, :]) % 2).astype(float)[:, :, None]
    if kind == "noise":
        img = noise
    elif kind == "checker":
        img = 0.15 + 0.7 * np.repeat(checker, 3, axis=2)
    elif kind == "mixed":
        img = 0.75 * noise + 0.25 * checker
    elif kind == "flat":
        img = np.full((res, res, 3), 0.5)
    else:
        raise ValueError(f"unknown texture kind {kind!r}")
    img = np.clip(img * np.asarray(tint, float), 0.0, 1.0)
    _TEXTURE_CACHE[key] = img
    return img


def _sample_texture(tex: np.ndarray, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Bilinear, wrap-around lookup at texel coordinates (s, t)."""
    res = tex.shape[0]
    s0 = np.floor(s)
    t0 = np.floor(t)
    fs = (s - s0)[..., None]
    ft = (t - t0)[..., None]
    s0 = s0.astype(np.int64) % res
    t0 = t0.astype(np.int64) % res
    s1 = (s0 + 1) % res
    t1 = (t0 + 1) % res
    top = tex[t0, s0] * (1 - fs) + tex[t0, s1] * fs
    bot = tex[t1, s0] * (1 - fs) + tex[t1, s1] * fs
    return top * (1 - ft) + bot * ft


def _trace(patches, cam: PinholeCamera, rays_cam: np.ndarray):
    """Nearest patch hit along camera-frame rays: (colour, depth), depth 0 on a miss."""
    dirs = rays_cam @ cam.rotation          # world directions, camera z component = 1
    origin = cam.center
    shape = rays_cam.shape[:-1]
    best = np.full(shape, np.inf)
    color = np.zeros(shape + (3,))
    for patch in patches:
        n = patch.normal
        p0 = np.asarray(patch.center, float)
        u = np.asarray(patch.u_axis, float)
        v = np.asarray(patch.v_axis, float)
        den = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.dot(p0 - origin, n) / den
        X = origin + t[..., None] * dirs
        ls = (X - p0) @ u
        lt = (X - p0) @ v
        a, b = patch.half_extent
        hit = (np.abs(den) > 1e-12) & (t > 0) & (np.abs(ls) <= a) & (np.abs(lt) <= b) & (t < best)
        if not np.any(hit):
            continue
        tex = patch.texture.image()
        texel = patch.texture.texel
        best[hit] = t[hit]
        color[hit] = _sample_texture(tex, ls[hit] / texel, lt[hit] / texel)
    return color, np.where(np.isfinite(best), best, 0.0)


def render_view(patches, cam: PinholeCamera, width: int, height: int, supersample: int = 1):
    """Colour image box-filtered over ``supersample``² sub-pixel rays, and
    ground-truth depth along the pixel-centre rays (0 where no patch is hit)."""
    rays = cam.pixel_rays(width, height)
    _, depth = _trace(patches, cam, rays)
    k = max(1, int(supersample))
    offs = (np.arange(k) + 0.5) / k - 0.5
    acc = np.zeros((height, width, 3))
    for oy in offs:
        for ox in offs:
            sub = cam.kinv @ np.array([ox, oy, 0.0])
            acc += _trace(patches, cam, rays + sub)[0]
    return acc / (k * k), depth


def render_scene(spec: SceneSpec) -> tuple[MultiViewSet, np.ndarray]:
    cams = spec.rig.cameras()
    imgs, depths = [], []
    for cam in cams:
        c, d = render_view(spec.patches, cam, spec.rig.width, spec.rig.height)
        imgs.append(c)
        depths.append(d)
    return MultiViewSet(cams, np.stack(imgs), spec.depth_range), np.stack(depths)


# -- named scenes -----------------------------------------------------------

def _row(n: int) -> tuple[tuple[float, float], ...]:
    return tuple((float(i), 0.0) for i in range(n))


def fronto_wall(width=64, height=64, depth=10.0, focal=100.0, baseline=0.1, views=2,
                kind="mixed", seed=1, depth_range=(5.0, 20.0)) -> SceneSpec:
    rig = RigSpec(focal, width, height, baseline, _row(views))
    wall = Patch((0.0, 0.0, depth), texture=Texture(kind, seed, texel=depth / focal / 1.5))
    return SceneSpec((wall,), rig, DepthRange(*depth_range))


def slanted_plane(width=320, height=240, tilt_deg=30.0, depth=5.0, focal=320.0, baseline=0.3,
                  views=3, seed=3, depth_range=(3.0, 8.0)) -> SceneSpec:
    """One textured plane rotated ``tilt_deg`` about the vertical axis."""
    a = np.deg2rad(tilt_deg)
    u = (float(np.cos(a)), 0.0, float(np.sin(a)))
    rig = RigSpec(focal, width, height, baseline, _row(views))
    # centre the plane on the middle camera's optical axis
    cx = baseline * (views - 1) / 2.0
    plane = Patch((cx, 0.0, depth), u, (0.0, 1.0, 0.0),
                  texture=Texture("mixed", seed, texel=depth / focal / 1.5))
    return SceneSpec((plane,), rig, DepthRange(*depth_range))


def slanted_normal(tilt_deg: float = 30.0) -> np.ndarray:
    """Camera-facing unit normal of :func:`slanted_plane` in any rig camera."""
    a = np.deg2rad(tilt_deg)
    n = np.cross([np.cos(a), 0.0, np.sin(a)], [0.0, 1.0, 0.0])
    return n if n[2] < 0 else -n


def staircase(width=96, height=64, focal=100.0, baseline=0.1, views=3, seed=5,
              depths=(4.0, 6.0, 9.0), depth_range=(3.0, 12.0)) -> SceneSpec:
    """Three fronto-parallel strips side by side at increasing depth."""
    rig = RigSpec(focal, width, height, baseline, _row(views))
    patches = []
    cx = baseline * (views - 1) / 2.0
    strip = width / 3.0
    for k, d in enumerate(depths):
        # strip k covers image columns [k*strip, (k+1)*strip) of the middle view
        x_lo = (k * strip - (width - 1) / 2.0) * d / focal + cx
        x_hi = ((k + 1) * strip - (width - 1) / 2.0) * d / focal + cx
        if k == 0:
            x_lo -= 10.0
        if k == len(depths) - 1:
            x_hi += 10.0
        patches.append(Patch(((x_lo + x_hi) / 2, 0.0, d), half_extent=((x_hi - x_lo) / 2, 1e3),
                             texture=Texture("mixed", seed + k, texel=d / focal / 1.5)))
    return SceneSpec(tuple(patches), rig, DepthRange(*depth_range))


def occlusion(width=160, height=120, focal=160.0, baseline=0.15, views=3, seed=7,
              front_depth=4.0, back_depth=8.0, depth_range=(3.0, 10.0)) -> SceneSpec:
    """A reddish box face in front of a bluish-green wall."""
    rig = RigSpec(focal, width, height, baseline, _row(views))
    cx = baseline * (views - 1) / 2.0
    back = Patch((cx, 0.0, back_depth),
                 texture=Texture("noise", seed, texel=back_depth / focal / 1.5, tint=(0.35, 0.9, 1.0)))
    half_w = 0.22 * width * front_depth / focal
    half_h = 0.3 * height * front_depth / focal
    front = Patch((cx, 0.0, front_depth), half_extent=(half_w, half_h),
                  texture=Texture("noise", seed + 1, texel=front_depth / focal / 1.5,
                                  tint=(1.0, 0.45, 0.3)))
    return SceneSpec((front, back), rig, DepthRange(*depth_range))


def rig3x3(width=160, height=120, focal=160.0, baseline=0.12, seed=11,
           depth_range=(3.0, 12.0)) -> tuple[SceneSpec, PinholeCamera]:
    """3x3 rig looking at a wall plus a slanted card; also returns a held-out
    camera half-way between the first two cameras of the centre row."""
    positions = tuple((float(x), float(y)) for y in range(3) for x in range(3))
    rig = RigSpec(focal, width, height, baseline, positions)
    back = Patch((baseline, baseline, 9.0),
                 texture=Texture("mixed", seed, texel=9.0 / focal / 1.5, tint=(0.6, 0.9, 1.0)))
    a = np.deg2rad(25.0)
    card = Patch((baseline * 0.6, baseline, 4.5), (float(np.cos(a)), 0.0, float(np.sin(a))),
                 (0.0, 1.0, 0.0), half_extent=(0.9, 0.65),
                 texture=Texture("noise", seed + 1, texel=4.5 / focal / 1.5, tint=(1.0, 0.6, 0.4)))
    spec = SceneSpec((card, back), rig, DepthRange(*depth_range))
    pp = ((width - 1) / 2.0, (height - 1) / 2.0)
    held_out = PinholeCamera.rectified(focal, pp, (0.5, 1.0), baseline, len(positions))
    return spec, held_out


SCENES = {
    "wall": fronto_wall,
    "slanted": slanted_plane,
    "staircase": staircase,
    "occlusion": occlusion,
}


# -- scene spec files and dataset export ------------------------------------------

def scene_from_json(path) -> SceneSpec:
    """Load a scene description (see README for the schema)."""
    data = json.loads(Path(path).read_text())
    if "preset" in data:
        kwargs = data.get("args", {})
        return SCENES[data["preset"]](**kwargs)
    rig = data["rig"]
    rig_spec = RigSpec(float(rig["focal"]), int(rig["width"]), int(rig["height"]),
                       float(rig["baseline"]), tuple(tuple(map(float, p)) for p in rig["positions"]))
    patches = []
    for p in data["patches"]:
        tex = p.get("texture", {})
        patches.append(Patch(
            tuple(p["center"]), tuple(p.get("u_axis", (1, 0, 0))), tuple(p.get("v_axis", (0, 1, 0))),
            tuple(float(x) if x is not None else np.inf for x in p.get("half_extent", (None, None))),
            Texture(tex.get("kind", "noise"), int(tex.get("seed", 0)), float(tex.get("texel", 0.01)),
                    int(tex.get("checker_cells", 16)), tuple(tex.get("tint", (1, 1, 1))))))
    return SceneSpec(tuple(patches), rig_spec, DepthRange(*data["depth_range"]))


def write_dataset(spec: SceneSpec, out_dir, name: str = "synthetic") -> Path:
    """Render ``spec`` and write images, ground truth and a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(exist_ok=True)
    mvs, gt = render_scene(spec)
    rig = spec.rig
    lines = [
        f"name = {name}",
        f"rectified.focal = {float(rig.focal)!r}",
        f"rectified.baseline = {float(rig.baseline)!r}",
        f"rectified.principal = {(rig.width - 1) / 2.0!r} {(rig.height - 1) / 2.0!r}",
        f"depth_range = {float(spec.depth_range.d_min)!r} {float(spec.depth_range.d_max)!r}",
    ]
    for i, pos in enumerate(rig.positions):
        write_image(mvs.images[i], out / "images" / f"view{i}.png")
        write_pfm(gt[i].astype(np.float32), out / "gt" / f"depth{i}.pfm")
        lines += [
            f"view.{i}.image = images/view{i}.png",
            f"view.{i}.position = {float(pos[0])!r} {float(pos[1])!r}",
            f"view.{i}.gt_depth = gt/depth{i}.pfm",
        ]
    manifest = out / "manifest.txt"
    write_manifest(manifest, lines)
    return manifest
