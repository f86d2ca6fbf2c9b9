"""Bad-pixel scoring against ground truth and image-quality scores of
forward-warped novel views."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .data_io import EvalMask, MultiViewSet
from .geometry import PinholeCamera, relative_pose

LUMA = np.array([0.299, 0.587, 0.114])
SSIM_SIGMA = 1.5
SSIM_WIN = 11
SSIM_K1 = 0.01
SSIM_K2 = 0.03

# depth standing in for zero disparity (points at infinity)
FAR_DEPTH = 1e12


class EmptyRegion(ValueError):
    pass


def _region(mask, region: str, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    if isinstance(mask, EvalMask):
        return mask.region(region)
    return np.asarray(mask, dtype=bool)


def bad_pixel_rate(estimate, truth, mask=None, region: str = "all", threshold: float = 1.0) -> float:
    """Percentage of region pixels whose disparity error exceeds ``threshold``.

    Pixels without a valid (finite, positive) estimate count as bad.
    """
    est = np.asarray(estimate, dtype=np.float64)
    gt = np.asarray(truth, dtype=np.float64)
    if est.shape != gt.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {gt.shape}")
    sel = _region(mask, region, gt.shape)
    n = int(sel.sum())
    if n == 0:
        raise EmptyRegion(f"region {region!r} has no pixels")
    e, g = est[sel], gt[sel]
    valid = np.isfinite(e) & (e > 0)
    bad = ~valid | (np.abs(np.where(valid, e, 0.0) - g) > threshold)
    return 100.0 * float(bad.sum()) / n


def discontinuity_mask(gt_disparity, valid=None, radius: int = 9, jump: float = 2.0) -> np.ndarray:
    """Pixels within ``radius`` of a ground-truth disparity jump larger than ``jump``."""
    d = np.asarray(gt_disparity, dtype=np.float64)
    ok = np.ones(d.shape, bool) if valid is None else np.asarray(valid, bool)
    edge = np.zeros(d.shape, bool)
    dx = np.abs(np.diff(d, axis=1)) > jump
    dx &= ok[:, 1:] & ok[:, :-1]
    edge[:, 1:] |= dx
    edge[:, :-1] |= dx
    dy = np.abs(np.diff(d, axis=0)) > jump
    dy &= ok[1:, :] & ok[:-1, :]
    edge[1:, :] |= dy
    edge[:-1, :] |= dy
    if not edge.any():
        return edge
    dist = ndimage.distance_transform_edt(~edge)
    return (dist <= radius) & ok


def _luma(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        return a[..., :3] @ LUMA
    return a


def _gauss(x: np.ndarray) -> np.ndarray:
    r = SSIM_WIN // 2
    return ndimage.gaussian_filter(x, SSIM_SIGMA, truncate=r / SSIM_SIGMA, mode="reflect")


def ssim_map(a, b) -> np.ndarray:
    """Per-pixel SSIM of the luma channels (dynamic range 1), full size."""
    x, y = _luma(a), _luma(b)
    if x.shape != y.shape:
        raise ValueError("images differ in size")
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mx, my = _gauss(x), _gauss(y)
    vx = _gauss(x * x) - mx * mx
    vy = _gauss(y * y) - my * my
    cxy = _gauss(x * y) - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    return num / den


def ssim(a, b, mask=None) -> float:
    """Mean SSIM over pixels whose full window lies inside the image
    (and inside ``mask`` when given)."""
    m = ssim_map(a, b)
    r = SSIM_WIN // 2
    sel = np.zeros(m.shape, bool)
    sel[r:m.shape[0] - r, r:m.shape[1] - r] = True
    if mask is not None:
        sel &= np.asarray(mask, bool)
    if not sel.any():
        raise EmptyRegion("no pixels to score")
    return float(m[sel].mean())


def psnr(a, b, mask=None) -> float:
    """PSNR in dB over all channels of the (masked) pixels; ``inf`` for identical images."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError("images differ in size")
    d = (x - y) ** 2
    if mask is not None:
        d = d[np.asarray(mask, bool)]
    if d.size == 0:
        raise EmptyRegion("no pixels to score")
    mse = float(d.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def synthesize_view(inputs: MultiViewSet, depth_maps, target_cam: PinholeCamera,
                    width: int | None = None, height: int | None = None,
                    z_tolerance: float = 0.01, eps_w: float = 1e-6):
    """Forward-warp all input views into ``target_cam``.

    Per target pixel, samples within ``z_tolerance`` (relative) of the nearest
    one survive and are blended with weights 1 / (camera distance + eps_w).
    Returns (image, filled mask); unfilled pixels are black.
    """
    W = inputs.width if width is None else width
    H = inputs.height if height is None else height
    tg, zs, cols, ws = [], [], [], []
    for v, cam in enumerate(inputs.cameras):
        dm = np.asarray(depth_maps[v], dtype=np.float64)
        valid = (np.isfinite(dm) & (dm > 0)).ravel()
        if not valid.any():
            continue
        rays = cam.pixel_rays(inputs.width, inputs.height).reshape(-1, 3)[valid]
        X = rays * dm.ravel()[valid, None]
        R, t = relative_pose(cam, target_cam)
        Xt = X @ R.T + t
        z = Xt[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uvw = Xt @ target_cam.intrinsics.T
            qx = np.floor(uvw[:, 0] / z + 0.5)
            qy = np.floor(uvw[:, 1] / z + 0.5)
        ok = (z > 0) & (qx >= 0) & (qx < W) & (qy >= 0) & (qy < H)
        tg.append((qy[ok] * W + qx[ok]).astype(np.int64))
        zs.append(z[ok])
        cols.append(inputs.images[v].reshape(-1, 3)[valid][ok])
        dist = float(np.linalg.norm(cam.center - target_cam.center))
        ws.append(np.full(int(ok.sum()), 1.0 / (dist + eps_w)))
    img = np.zeros((H * W, 3))
    filled = np.zeros(H * W, bool)
    if tg:
        tgt = np.concatenate(tg)
        z = np.concatenate(zs)
        col = np.concatenate(cols)
        w = np.concatenate(ws)
        zmin = np.full(H * W, np.inf)
        np.minimum.at(zmin, tgt, z)
        keep = z <= zmin[tgt] * (1.0 + z_tolerance)
        tgt, col, w = tgt[keep], col[keep], w[keep]
        wsum = np.bincount(tgt, weights=w, minlength=H * W)
        for c in range(3):
            img[:, c] = np.bincount(tgt, weights=w * col[:, c], minlength=H * W)
        filled = wsum > 0
        img[filled] /= wsum[filled, None]
    return img.reshape(H, W, 3), filled.reshape(H, W)


def covisible_mask(gt_depths, cameras, view: int, rel_tol: float = 1e-3) -> np.ndarray:
    """Pixels of ``view`` whose true surface point is also seen by another camera.

    A point counts as seen when it projects inside another view and its depth
    there lies within the span of that view's ground-truth depths at the 2x2
    pixels around the projection (widened by ``rel_tol``). The bracket keeps
    slanted surfaces visible without letting occluded points through.
    Pixels outside the mask carry no multi-view depth evidence at all.
    """
    gt = np.asarray(gt_depths[view], dtype=np.float64)
    h, w = gt.shape
    src = cameras[view]
    valid = (gt > 0).ravel()
    out = np.zeros(h * w, bool)
    X = src.pixel_rays(w, h).reshape(-1, 3)[valid] * gt.ravel()[valid, None]
    idx = np.flatnonzero(valid)
    for i, cam in enumerate(cameras):
        if i == view:
            continue
        other = np.asarray(gt_depths[i], dtype=np.float64)
        oh, ow = other.shape
        R, t = relative_pose(src, cam)
        Xt = X @ R.T + t
        z = Xt[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uvw = Xt @ cam.intrinsics.T
            qx = uvw[:, 0] / z
            qy = uvw[:, 1] / z
        inside = (z > 0) & (qx > -0.5) & (qx < ow - 0.5) & (qy > -0.5) & (qy < oh - 0.5)
        lo = np.full(z.shape, np.inf)
        hi = np.zeros(z.shape)
        x0 = np.floor(np.where(inside, qx, 0.0)).astype(np.int64)
        y0 = np.floor(np.where(inside, qy, 0.0)).astype(np.int64)
        for dy in (0, 1):
            for dx in (0, 1):
                xx = np.clip(x0 + dx, 0, ow - 1)
                yy = np.clip(y0 + dy, 0, oh - 1)
                d = other[yy, xx]
                use = inside & (d > 0)
                lo = np.where(use, np.minimum(lo, d), lo)
                hi = np.where(use, np.maximum(hi, d), hi)
        ok = inside & (hi > 0) & (z >= lo * (1 - rel_tol)) & (z <= hi * (1 + rel_tol))
        out[idx[ok]] = True
    return out.reshape(h, w)


def inverse_depth_rms(depth, gt_depth, depth_range, mask=None) -> tuple[float, float]:
    """RMS inverse-depth error as a fraction of the range's inverse-depth span,
    over pixels where both maps are valid (and ``mask`` holds); also returns
    the fraction of those pixels the estimate covers."""
    d = np.asarray(depth, dtype=np.float64)
    g = np.asarray(gt_depth, dtype=np.float64)
    sel = g > 0
    if mask is not None:
        sel &= np.asarray(mask, bool)
    if not sel.any():
        raise EmptyRegion("no ground truth to score")
    ok = sel & (d > 0)
    coverage = float(ok.sum()) / float(sel.sum())
    if not ok.any():
        return math.inf, 0.0
    err = 1.0 / d[ok] - 1.0 / g[ok]
    span = 1.0 / depth_range.d_min - 1.0 / depth_range.d_max
    return float(np.sqrt(np.mean(err * err)) / span), coverage


def zero_disparity_depths(inputs: MultiViewSet) -> np.ndarray:
    """Depth maps equivalent to zero disparity everywhere."""
    return np.full((inputs.n_views, inputs.height, inputs.width), FAR_DEPTH)


def error_overlay(disparity, truth, mask=None, threshold: float = 1.0, disparity_max=None):
    """Grey disparity image with bad pixels tinted red, (H, W, 3) in [0, 1]."""
    d = np.asarray(disparity, dtype=np.float64)
    gt = np.asarray(truth, dtype=np.float64)
    valid = np.isfinite(d) & (d > 0)
    top = disparity_max if disparity_max is not None else max(float(np.nanmax(gt)), 1e-9)
    grey = np.clip(np.where(valid, d, 0.0) / top, 0.0, 1.0)
    rgb = np.repeat(grey[..., None], 3, axis=2)
    sel = np.ones(d.shape, bool) if mask is None else np.asarray(mask, bool)
    bad = sel & (~valid | (np.abs(np.where(valid, d, 0.0) - gt) > threshold))
    rgb[bad] = 0.5 * rgb[bad] + 0.5 * np.array([1.0, 0.0, 0.0])
    return rgb
