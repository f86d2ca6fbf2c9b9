"""Stability-based fusion of per-view depth maps.

Every valid pixel of every view is re-projected into the reference view.
A candidate's stability is the number of other candidates at that pixel that
agree with it (inverse-depth difference within epsilon) minus the number that
disagree; the closest candidate with non-negative stability wins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import PinholeCamera, relative_pose


@dataclass(frozen=True)
class CandidateList:
    """Per-pixel candidate depths in CSR layout (row-major pixel order)."""

    height: int
    width: int
    offsets: np.ndarray      # (H*W + 1,)
    depth: np.ndarray        # reference-frame depth per candidate
    source_view: np.ndarray  # view id per candidate

    def at(self, x: int, y: int) -> list[tuple[float, int]]:
        p = y * self.width + x
        sl = slice(self.offsets[p], self.offsets[p + 1])
        return list(zip(self.depth[sl].tolist(), self.source_view[sl].tolist()))

    def counts(self) -> np.ndarray:
        return np.diff(self.offsets).reshape(self.height, self.width)


def _splat(depth: np.ndarray, src: PinholeCamera, ref: PinholeCamera, width: int, height: int):
    """Target pixel index and reference-frame depth of each valid source pixel."""
    h, w = depth.shape
    valid = np.isfinite(depth) & (depth > 0)
    src_idx = np.flatnonzero(valid.ravel())
    rays = src.pixel_rays(w, h).reshape(-1, 3)[src_idx]
    X = rays * depth.ravel()[src_idx, None]
    R, t = relative_pose(src, ref)
    Xr = X @ R.T + t
    z = Xr[:, 2]
    front = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        uvw = Xr @ ref.intrinsics.T
        qx = np.floor(uvw[:, 0] / z + 0.5)
        qy = np.floor(uvw[:, 1] / z + 0.5)
    inside = front & (qx >= 0) & (qx < width) & (qy >= 0) & (qy < height)
    tgt = (qy[inside] * width + qx[inside]).astype(np.int64)
    return tgt, z[inside], src_idx[inside]


def gather_candidates(reference_view: int, depth_maps, cameras) -> CandidateList:
    """Nearest-pixel splat of every valid pixel of every view into the reference view.

    Candidates at a pixel are ordered by (source view id, source pixel index).
    """
    ref = cameras[reference_view]
    h, w = np.asarray(depth_maps[reference_view]).shape
    tg, zs, vs, ps = [], [], [], []
    for cam, dm in zip(cameras, depth_maps):
        tgt, z, src_idx = _splat(np.asarray(dm, dtype=np.float64), cam, ref, w, h)
        tg.append(tgt)
        zs.append(z)
        vs.append(np.full(tgt.shape, cam.view_id, dtype=np.int64))
        ps.append(src_idx)
    tgt = np.concatenate(tg)
    z = np.concatenate(zs)
    view = np.concatenate(vs)
    pix = np.concatenate(ps)
    order = np.lexsort((pix, view, tgt))
    counts = np.bincount(tgt, minlength=h * w)
    offsets = np.zeros(h * w + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return CandidateList(h, w, offsets, z[order], view[order])


@njit(cache=True)
def _fuse(offsets, depth, view, eps, out):
    for p in range(offsets.shape[0] - 1):
        lo, hi = offsets[p], offsets[p + 1]
        best = 0.0
        best_view = -1
        for c in range(lo, hi):
            ic = 1.0 / depth[c]
            stab = 0
            for j in range(lo, hi):
                if j == c:
                    continue
                if abs(1.0 / depth[j] - ic) <= eps:
                    stab += 1
                else:
                    stab -= 1
            if stab < 0:
                continue
            d = depth[c]
            if best_view < 0 or d < best or (d == best and view[c] < best_view):
                best = d
                best_view = view[c]
        out[p] = best if best_view >= 0 else 0.0


def stability_fuse(candidates: CandidateList, epsilon: float) -> np.ndarray:
    """Closest candidate with non-negative stability per pixel; 0 where none."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    out = np.zeros(candidates.height * candidates.width)
    _fuse(candidates.offsets, np.ascontiguousarray(candidates.depth, dtype=np.float64),
          np.ascontiguousarray(candidates.source_view, dtype=np.int64), float(epsilon), out)
    return out.reshape(candidates.height, candidates.width)


def fuse_view(reference_view: int, depth_maps, cameras, epsilon: float) -> np.ndarray:
    return stability_fuse(gather_candidates(reference_view, depth_maps, cameras), epsilon)


def fuse_all(depth_maps, cameras, epsilon: float) -> np.ndarray:
    """Fused map for every view, (V, H, W)."""
    return np.stack([fuse_view(v, depth_maps, cameras, epsilon) for v in range(len(cameras))])


def fused_points(depth: np.ndarray, image: np.ndarray, cam: PinholeCamera):
    """World points and colours of the valid pixels of one fused map."""
    h, w = depth.shape
    valid = depth.ravel() > 0
    X = cam.pixel_rays(w, h).reshape(-1, 3)[valid] * depth.ravel()[valid, None]
    return cam.to_world(X), image.reshape(-1, 3)[valid]


def write_ply(path, points: np.ndarray, colors: np.ndarray) -> None:
    """ASCII PLY point cloud; colours in [0, 1]."""
    rgb = np.clip(np.round(np.asarray(colors) * 255), 0, 255).astype(np.uint8)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(points)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar red\nproperty uchar green\nproperty uchar blue\n")
        f.write("end_header\n")
        for (x, y, z), (r, g, b) in zip(points, rgb):
            f.write(f"{x:.6f} {y:.6f} {z:.6f} {r} {g} {b}\n")
