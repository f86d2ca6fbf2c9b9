"""Dataset manifests, PFM rasters and PNG visualisations."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import DepthRange, GeometryError, InvalidRange, PinholeCamera


class DataError(Exception):
    """Base class for problems with input data."""


class ParseError(DataError):
    pass


class InvariantError(DataError):
    pass


class IoError(DataError):
    pass


@dataclass(frozen=True)
class EvalMask:
    """Boolean evaluation regions; ``nocc`` and ``disc`` are subsets of ``all``."""

    all: np.ndarray
    nocc: np.ndarray
    disc: np.ndarray

    def __post_init__(self):
        if not (self.all.shape == self.nocc.shape == self.disc.shape):
            raise InvariantError("mask shapes differ")
        if np.any(self.nocc & ~self.all) or np.any(self.disc & ~self.all):
            raise InvariantError("nocc and disc must be subsets of all")

    def region(self, name: str) -> np.ndarray:
        if name not in ("all", "nocc", "disc"):
            raise KeyError(name)
        return getattr(self, name)


@dataclass(frozen=True)
class RectifiedRig:
    focal: float
    baseline: float


@dataclass
class ViewRecord:
    view_id: int
    image_path: Path
    camera: PinholeCamera
    gt_depth_path: Path | None = None
    gt_disparity_path: Path | None = None
    gt_disparity_scale: float = 1.0
    mask_paths: dict[str, Path] = field(default_factory=dict)


@dataclass
class DatasetDescriptor:
    name: str
    root: Path
    views: list[ViewRecord]
    depth_range: DepthRange
    rig: RectifiedRig | None = None
    # converts per-baseline disparity f*B/d into the ground-truth units
    disparity_scale: float = 1.0

    @property
    def cameras(self) -> list[PinholeCamera]:
        return [v.camera for v in self.views]


@dataclass
class MultiViewSet:
    """Calibrated views sharing one depth range; images are (V, H, W, 3) in [0, 1]."""

    cameras: list[PinholeCamera]
    images: np.ndarray
    depth_range: DepthRange

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=np.float64)
        if imgs.ndim != 4 or imgs.shape[-1] != 3:
            raise InvariantError("images must have shape (views, height, width, 3)")
        if len(self.cameras) != imgs.shape[0]:
            raise InvariantError("one camera per image required")
        if not np.all(np.isfinite(imgs)):
            raise InvariantError("images contain non-finite samples")
        self.images = imgs

    @property
    def n_views(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def subset(self, indices) -> "MultiViewSet":
        idx = list(indices)
        return MultiViewSet([self.cameras[i] for i in idx], self.images[idx], self.depth_range)


# -- PFM -------------------------------------------------------------------

def write_pfm(depth: np.ndarray, path, little_endian: bool = True) -> None:
    """Write a single-channel float map (``Pf``); rows are stored bottom-up."""
    data = np.asarray(depth)
    if data.ndim != 2:
        raise ValueError("PFM depth maps must be 2-D")
    dtype = "<f4" if little_endian else ">f4"
    scale = -1.0 if little_endian else 1.0
    h, w = data.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"Pf\n{w} {h}\n{scale}\n".encode("ascii"))
            fh.write(np.ascontiguousarray(data[::-1], dtype=dtype).tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float32 (H, W) array."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    # header: identifier, width, height, signed scale (sign = endianness)
    m = re.match(rb"(P[fF])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if m is None:
        raise ParseError(f"{path}: malformed PFM header")
    if m.group(1) != b"Pf":
        raise ParseError(f"{path}: expected grayscale 'Pf', found {m.group(1).decode()}")
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise ParseError(f"{path}: bad scale") from exc
    if scale == 0:
        raise ParseError(f"{path}: zero scale")
    dtype = "<f4" if scale < 0 else ">f4"
    body = raw[m.end():]
    if len(body) < w * h * 4:
        raise ParseError(f"{path}: truncated data ({len(body)} bytes for {w}x{h})")
    data = np.frombuffer(body[: w * h * 4], dtype=dtype).reshape(h, w)[::-1]
    data = data.astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{path}: non-finite samples")
    return data


# -- PNG helpers ------------------------------------------------------------

def inverse_depth_to_u8(depth: np.ndarray, depth_range: DepthRange) -> np.ndarray:
    d = np.asarray(depth, dtype=np.float64)
    valid = d > 0
    inv = np.zeros_like(d)
    inv[valid] = 1.0 / d[valid]
    lo, hi = 1.0 / depth_range.d_max, 1.0 / depth_range.d_min
    v = np.clip((inv - lo) / (hi - lo), 0.0, 1.0)
    out = np.rint(255.0 * v).astype(np.uint8)
    out[~valid] = 0
    return out


def write_depth_png(depth: np.ndarray, depth_range: DepthRange, path) -> None:
    """8-bit rendering, near = bright, invalid = black."""
    try:
        Image.fromarray(inverse_depth_to_u8(depth, depth_range)).save(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_label_png(labels: np.ndarray, path) -> None:
    if labels.max(initial=0) > 65535:
        raise ValueError("too many labels for a 16-bit PNG")
    try:
        Image.fromarray(labels.astype(np.uint16)).save(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_label_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im).astype(np.int32)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


def read_image(path) -> np.ndarray:
    """RGB image as float64 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.array(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise IoError(f"missing image: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc
    return arr


def write_image(rgb: np.ndarray, path) -> None:
    arr = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(arr).save(path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_gray(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.array(im.convert("L"))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc


# -- manifests --------------------------------------------------------------

_VIEW_KEY = re.compile(r"view\.(\d+)\.(.+)")


def _floats(value: str, n: int | None, key: str) -> list[float]:
    try:
        vals = [float(x) for x in value.replace(",", " ").split()]
    except ValueError as exc:
        raise ParseError(f"{key}: expected numbers, got {value!r}") from exc
    if n is not None and len(vals) != n:
        raise ParseError(f"{key}: expected {n} numbers, got {len(vals)}")
    if not all(np.isfinite(vals)):
        raise ParseError(f"{key}: non-finite value")
    return vals


def parse_manifest(text: str) -> tuple[dict[str, str], dict[int, dict[str, str]], list[int]]:
    """Split manifest text into global keys and per-view keys (in file order)."""
    glob: dict[str, str] = {}
    views: dict[int, dict[str, str]] = {}
    order: list[int] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"line {lineno}: empty key")
        m = _VIEW_KEY.fullmatch(key)
        if m:
            vid = int(m.group(1))
            if vid not in views:
                views[vid] = {}
                order.append(vid)
            if m.group(2) in views[vid]:
                raise ParseError(f"line {lineno}: duplicate key {key}")
            views[vid][m.group(2)] = value
        else:
            if key in glob:
                raise ParseError(f"line {lineno}: duplicate key {key}")
            glob[key] = value
    return glob, views, order


def load_manifest(manifest_path) -> DatasetDescriptor:
    path = Path(manifest_path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc
    glob, views, order = parse_manifest(text)
    root = path.parent

    if len(order) < 2:
        raise InvariantError(f"{path}: a dataset needs at least 2 views, found {len(order)}")

    rig = None
    depth_range = None
    if "rectified.focal" in glob:
        focal = _floats(glob["rectified.focal"], 1, "rectified.focal")[0]
        baseline = _floats(glob.get("rectified.baseline", "1"), 1, "rectified.baseline")[0]
        if focal <= 0 or baseline <= 0:
            raise InvariantError("rectified focal and baseline must be positive")
        rig = RectifiedRig(focal, baseline)
        if "rectified.disparity_range" in glob:
            lo, hi = _floats(glob["rectified.disparity_range"], 2, "rectified.disparity_range")
            if not 0 < lo < hi:
                raise InvariantError("disparity range must satisfy 0 < min < max")
            depth_range = DepthRange(focal * baseline / hi, focal * baseline / lo)
    if "depth_range" in glob:
        lo, hi = _floats(glob["depth_range"], 2, "depth_range")
        try:
            depth_range = DepthRange(lo, hi)
        except InvalidRange as exc:
            raise InvariantError(str(exc)) from exc
    if depth_range is None:
        raise ParseError(f"{path}: no depth_range or rectified.disparity_range given")

    principal = None
    if "rectified.principal" in glob:
        principal = tuple(_floats(glob["rectified.principal"], 2, "rectified.principal"))

    records = []
    for vid in order:
        keys = views[vid]
        if "image" not in keys:
            raise ParseError(f"view {vid}: missing image")
        image_path = root / keys["image"]
        try:
            if "P" in keys:
                cam = PinholeCamera.from_projection(
                    np.array(_floats(keys["P"], 12, f"view.{vid}.P")).reshape(3, 4), vid)
            elif rig is not None:
                pos = _floats(keys.get("position", "0 0"), 2, f"view.{vid}.position")
                pp = principal
                if pp is None:
                    # principal point defaults to the image centre
                    w, h = _image_size(image_path)
                    pp = ((w - 1) / 2.0, (h - 1) / 2.0)
                cam = PinholeCamera.rectified(rig.focal, pp, tuple(pos), rig.baseline, vid)
            else:
                raise ParseError(f"view {vid}: no camera (P or rectified shorthand)")
        except GeometryError as exc:
            raise InvariantError(f"view {vid}: {exc}") from exc
        rec = ViewRecord(vid, image_path, cam)
        if "gt_depth" in keys:
            rec.gt_depth_path = root / keys["gt_depth"]
        if "gt_disparity" in keys:
            rec.gt_disparity_path = root / keys["gt_disparity"]
            rec.gt_disparity_scale = _floats(keys.get("gt_disparity_scale", "1"), 1,
                                             f"view.{vid}.gt_disparity_scale")[0]
        for k, v in keys.items():
            if k.startswith("mask."):
                rec.mask_paths[k[5:]] = root / v
        records.append(rec)

    disparity_scale = _floats(glob.get("eval.disparity_scale", "1"), 1, "eval.disparity_scale")[0]
    return DatasetDescriptor(glob.get("name", path.stem), root, records, depth_range, rig,
                             disparity_scale)


def _image_size(path: Path) -> tuple[int, int]:
    try:
        with Image.open(path) as im:
            return im.size
    except FileNotFoundError as exc:
        raise IoError(f"missing image: {path}") from exc
    except OSError as exc:
        raise IoError(f"cannot read image {path}: {exc}") from exc


def load_dataset(manifest_path) -> tuple[DatasetDescriptor, MultiViewSet]:
    desc = load_manifest(manifest_path)
    images = [read_image(v.image_path) for v in desc.views]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise InvariantError(f"images have differing sizes: {sorted(shapes)}")
    return desc, MultiViewSet(desc.cameras, np.stack(images), desc.depth_range)


def load_gt_disparity(desc: DatasetDescriptor, index: int) -> np.ndarray | None:
    """Ground-truth disparity of view ``index`` in dataset units; 0 = unknown."""
    rec = desc.views[index]
    if rec.gt_disparity_path is not None:
        if rec.gt_disparity_path.suffix.lower() == ".pfm":
            disp = read_pfm(rec.gt_disparity_path).astype(np.float64)
        else:
            disp = read_gray(rec.gt_disparity_path).astype(np.float64)
        return disp / rec.gt_disparity_scale
    if rec.gt_depth_path is not None and desc.rig is not None:
        return depth_to_disparity(read_pfm(rec.gt_depth_path), desc)
    return None


def load_gt_depth(desc: DatasetDescriptor, index: int) -> np.ndarray | None:
    rec = desc.views[index]
    if rec.gt_depth_path is not None:
        return read_pfm(rec.gt_depth_path).astype(np.float64)
    return None


def load_masks(desc: DatasetDescriptor, index: int) -> dict[str, np.ndarray]:
    """Shipped evaluation masks of a view (white = member)."""
    return {name: read_gray(p) > 127 for name, p in desc.views[index].mask_paths.items()}


def depth_to_disparity(depth: np.ndarray, desc: DatasetDescriptor) -> np.ndarray:
    if desc.rig is None:
        raise InvariantError("disparity needs a rectified rig (focal, baseline)")
    d = np.asarray(depth, dtype=np.float64)
    out = np.zeros_like(d)
    valid = d > 0
    out[valid] = desc.disparity_scale * desc.rig.focal * desc.rig.baseline / d[valid]
    return out


def write_manifest(path, lines: list[str]) -> None:
    try:
        Path(path).write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc

