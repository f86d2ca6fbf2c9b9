"""Initial superpixel depths by jittered fronto-parallel plane sweeping."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import sample_inverse_depths, superpixel_rng
from .parallel import run_chunks
from .stack import PlaneMap, ViewStack

# matching colours are CIELAB scaled by 1/100
LAB_SCALE = 0.01
# projections this close outside the image (pixels) are rounding, not misses
EDGE_EPS = 1e-9


@dataclass(frozen=True)
class SweepParams:
    levels: int = 64
    tssd_threshold: float = 0.05

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError("need at least 2 sweep levels")
        if not self.tssd_threshold > 0:
            raise ValueError("TSSD threshold must be positive")


def tssd(ref_color, mapped_color, T: float) -> float:
    """Truncated squared colour difference summed over channels."""
    d = np.asarray(ref_color, dtype=np.float64) - np.asarray(mapped_color, dtype=np.float64)
    return float(min(T, float(np.dot(d, d))))


@njit(cache=True, nogil=True)
def _bilinear(img, qx, qy, out):
    H, W = img.shape[0], img.shape[1]
    x0 = int(math.floor(qx))
    y0 = int(math.floor(qy))
    fx = qx - x0
    fy = qy - y0
    x1 = min(x0 + 1, W - 1)
    y1 = min(y0 + 1, H - 1)
    for c in range(img.shape[2]):
        top = img[y0, x0, c] * (1.0 - fx) + img[y0, x1, c] * fx
        bot = img[y1, x0, c] * (1.0 - fx) + img[y1, x1, c] * fx
        out[c] = top * (1.0 - fy) + bot * fy


@njit(cache=True, nogil=True)
def _sp_cost(v, s, z, rays, offsets, pixels, colors, rel_R, rel_t, K, other_views, T):
    H, W = colors.shape[1], colors.shape[2]
    mapped = np.empty(3)
    cost = 0.0
    for ii in range(other_views.shape[1]):
        i = other_views[v, ii]
        R = rel_R[v, i]
        t = rel_t[v, i]
        Ki = K[i]
        for o in range(offsets[v, s], offsets[v, s + 1]):
            p = pixels[v, o]
            x0 = z * rays[v, p, 0]
            x1 = z * rays[v, p, 1]
            x2 = z * rays[v, p, 2]
            X0 = R[0, 0] * x0 + R[0, 1] * x1 + R[0, 2] * x2 + t[0]
            X1 = R[1, 0] * x0 + R[1, 1] * x1 + R[1, 2] * x2 + t[1]
            X2 = R[2, 0] * x0 + R[2, 1] * x1 + R[2, 2] * x2 + t[2]
            if X2 <= 0.0:
                cost += T
                continue
            qx = (Ki[0, 0] * X0 + Ki[0, 1] * X1 + Ki[0, 2] * X2) / X2
            qy = (Ki[1, 1] * X1 + Ki[1, 2] * X2) / X2
            if not (qx >= -EDGE_EPS and qx <= W - 1 + EDGE_EPS
                    and qy >= -EDGE_EPS and qy <= H - 1 + EDGE_EPS):
                cost += T
                continue
            qx = min(max(qx, 0.0), W - 1.0)
            qy = min(max(qy, 0.0), H - 1.0)
            _bilinear(colors[i], qx, qy, mapped)
            py = p // W
            px = p % W
            ssd = 0.0
            for c in range(3):
                d = colors[v, py, px, c] - mapped[c]
                ssd += d * d
            cost += min(T, ssd)
    return cost


@njit(cache=True, nogil=True)
def _sweep_tasks(lo, hi, n_sp, hyps, rays, offsets, pixels, colors, rel_R, rel_t, K,
                 other_views, T, out):
    for task in range(lo, hi):
        v = task // n_sp
        s = task % n_sp
        best = -1.0
        best_cost = np.inf
        for k in range(hyps.shape[1]):
            z = hyps[task, k]
            c = _sp_cost(v, s, z, rays, offsets, pixels, colors, rel_R, rel_t, K, other_views, T)
            if c < best_cost or (c == best_cost and z < best):
                best_cost = c
                best = z
        out[task] = best


def matching_colors(stack: ViewStack) -> np.ndarray:
    """(V, H, W, 3) CIELAB/100 images used by the photo-consistency cost."""
    return np.ascontiguousarray(
        stack.lab.reshape(stack.n_views, stack.height, stack.width, 3) * LAB_SCALE)


def sweep_cost(stack: ViewStack, view: int, sp_id: int, depth: float, T: float,
               colors: np.ndarray | None = None) -> float:
    """Accumulated TSSD of a fronto-parallel hypothesis over the superpixel and all matched views."""
    if colors is None:
        colors = matching_colors(stack)
    return float(_sp_cost(view, sp_id, float(depth), stack.rays, stack.offsets, stack.pixels,
                          colors, stack.rel_R, stack.rel_t, stack.K, stack.other_views, float(T)))


def hypotheses(stack: ViewStack, levels: int, seed: int) -> np.ndarray:
    """(V*n, levels) jittered depth samples, one independent stream per superpixel."""
    V, n = stack.n_views, stack.n_sp
    out = np.empty((V * n, levels))
    for v in range(V):
        for s in range(n):
            out[v * n + s] = sample_inverse_depths(stack.depth_range, levels,
                                                   superpixel_rng(seed, v, s))
    return out


def plane_sweep_init(stack: ViewStack, params: SweepParams = SweepParams(), seed: int = 0,
                     workers: int = 1) -> PlaneMap:
    """Fronto-parallel plane per superpixel of every view minimising the sweep cost."""
    V, n = stack.n_views, stack.n_sp
    hyps = hypotheses(stack, params.levels, seed)
    colors = matching_colors(stack)
    out = np.empty(V * n)

    def work(lo, hi):
        _sweep_tasks(lo, hi, n, hyps, stack.rays, stack.offsets, stack.pixels, colors,
                     stack.rel_R, stack.rel_t, stack.K, stack.other_views,
                     float(params.tssd_threshold), out)

    run_chunks(work, V * n, workers)
    return PlaneMap.fronto(stack, out.reshape(V, n))
