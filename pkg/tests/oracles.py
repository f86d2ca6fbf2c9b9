"""Slow, literal reference implementations used to check the fast code paths.

Nothing here imports the numba kernels; geometry goes through world
coordinates and explicit camera matrices, and loops are written out.
"""

from __future__ import annotations

import math

import numpy as np


# -- geometry ------------------------------------------------------------------

def world_point(cam, x, y, depth):
    """Back-project via the explicit inverse of K and the camera pose."""
    ray = np.linalg.solve(cam.intrinsics, np.array([x, y, 1.0]))
    Xc = ray / ray[2] * depth
    return cam.rotation.T @ (Xc - cam.translation)


def project_world(cam, X):
    Xc = cam.rotation @ X + cam.translation
    u = cam.intrinsics @ Xc
    return u[0] / u[2], u[1] / u[2], Xc[2]


def line_plane_depth(cam, centroid, depth, normal, query):
    """Intersect the query ray with the plane through the lifted centroid by
    solving the 3x3 system  o + t*r = P + a*e1 + b*e2  (e1, e2 span the plane)."""
    P = np.linalg.solve(cam.intrinsics, np.array([centroid[0], centroid[1], 1.0])) * depth
    n = np.asarray(normal, float)
    e1 = np.cross(n, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.cross(n, [0.0, 1.0, 0.0])
    e2 = np.cross(n, e1)
    r = np.linalg.solve(cam.intrinsics, np.array([query[0], query[1], 1.0]))
    A = np.column_stack([r, -e1, -e2])
    t, _, _ = np.linalg.solve(A, P)
    return (t * r)[2]


# -- sweep ---------------------------------------------------------------------

def bilinear(img, qx, qy):
    H, W = img.shape[:2]
    x0, y0 = int(math.floor(qx)), int(math.floor(qy))
    fx, fy = qx - x0, qy - y0
    x1, y1 = min(x0 + 1, W - 1), min(y0 + 1, H - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def naive_sweep_cost(colors, cams, grid, view, sp, depth, T, edge=1e-9):
    """Accumulated truncated squared difference of a fronto-parallel plane."""
    H, W = colors.shape[1:3]
    members = np.flatnonzero(grid.labels.ravel() == sp)
    cost = 0.0
    for i, cam in enumerate(cams):
        if i == view:
            continue
        for p in members:
            y, x = divmod(int(p), W)
            X = world_point(cams[view], x, y, depth)
            qx, qy, z = project_world(cam, X)
            if z <= 0 or not (-edge <= qx <= W - 1 + edge and -edge <= qy <= H - 1 + edge):
                cost += T
                continue
            qx, qy = min(max(qx, 0.0), W - 1.0), min(max(qy, 0.0), H - 1.0)
            d = colors[view, y, x] - bilinear(colors[i], qx, qy)
            cost += min(T, float(d @ d))
    return cost


def naive_plane_sweep(colors, cams, grids, depth_range, levels, T, seed):
    """Exhaustive argmin over jittered hypotheses, ties to the smaller depth."""
    V = len(cams)
    n = grids[0].grid_w * grids[0].grid_h
    lo, hi = 1.0 / depth_range.d_max, 1.0 / depth_range.d_min
    step = (hi - lo) / (levels - 1)
    out = np.zeros((V, n))
    for v in range(V):
        for s in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([seed, v, s]))
            jitter = rng.random(levels)
            best, best_cost = None, math.inf
            for k in range(levels):
                inv = hi if k == levels - 1 else lo + k * step
                inv = min(inv + step * jitter[k], hi)
                d = 1.0 / inv
                c = naive_sweep_cost(colors, cams, grids[v], v, s, d, T)
                if c < best_cost or (c == best_cost and d < best):
                    best, best_cost = d, c
            out[v, s] = best
    return out


# -- refinement -----------------------------------------------------------------

def naive_schedule(size_init, steps_init, l):
    return size_init / l, max(1, int(math.floor(steps_init / l + 0.5)))


def naive_kernel(gx, gy, grid_w, grid_h, size_px, step, sp_size):
    """Ring first, then compass samples by direction then radius, deduplicated."""
    ring = [(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)]
    offs = list(ring)
    reach = size_px / sp_size
    for dx, dy in ring:
        r = step
        while r <= reach + 1e-9:
            if (dx * r, dy * r) not in offs:
                offs.append((dx * r, dy * r))
            r += step
    ids = []
    for dx, dy in offs:
        x, y = gx + dx, gy + dy
        if 0 <= x < grid_w and 0 <= y < grid_h:
            ids.append(y * grid_w + x)
    return ids


def naive_normal_candidates(cam, centroids, depths, ring_ids):
    """Triangle normals of consecutive ring pairs, flipped towards the camera."""
    def lift(k):
        r = np.linalg.solve(cam.intrinsics, np.array([*centroids[k], 1.0]))
        return r / r[2] * depths[k]

    out = []
    P = lift(ring_ids[0])
    ring = ring_ids[1:]
    for k in range(8):
        a, b = ring[k], ring[(k + 1) % 8]
        if a < 0 or b < 0:
            continue
        n = np.cross(lift(a) - P, lift(b) - P)
        if np.linalg.norm(n) < 1e-12:
            continue
        n = n / np.linalg.norm(n)
        if n @ (P / depths[ring_ids[0]]) > 0:
            n = -n
        out.append(n)
    return np.array(out).reshape(-1, 3)


# -- fusion --------------------------------------------------------------------

def naive_stability_pick(cands, eps):
    """cands: list of (depth, view). Returns the fused depth (0 if none)."""
    best = None
    for i, (d, v) in enumerate(cands):
        stab = 0
        for j, (dj, _) in enumerate(cands):
            if i == j:
                continue
            stab += 1 if abs(1.0 / dj - 1.0 / d) <= eps else -1
        if stab >= 0 and (best is None or (d, v) < best):
            best = (d, v)
    return 0.0 if best is None else best[0]


def naive_candidates(depth_maps, cams, ref):
    """Per-pixel candidate lists by explicit world-space reprojection."""
    H, W = depth_maps[0].shape
    lists = [[[] for _ in range(W)] for _ in range(H)]
    for v, (dm, cam) in enumerate(zip(depth_maps, cams)):
        for y in range(H):
            for x in range(W):
                d = dm[y, x]
                if not d > 0:
                    continue
                X = world_point(cam, x, y, d)
                qx, qy, z = project_world(cams[ref], X)
                if z <= 0:
                    continue
                ix, iy = math.floor(qx + 0.5), math.floor(qy + 0.5)
                if 0 <= ix < W and 0 <= iy < H:
                    lists[iy][ix].append((z, v))
    return lists


# -- evaluation ----------------------------------------------------------------

def naive_ssim(a, b):
    """Mean SSIM over all full 11x11 windows, written as explicit window sums."""
    luma = np.array([0.299, 0.587, 0.114])
    x = a @ luma if a.ndim == 3 else a
    y = b @ luma if b.ndim == 3 else b
    r = 5
    g = np.exp(-np.arange(-r, r + 1) ** 2 / (2 * 1.5 ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    H, W = x.shape
    vals = []
    for i in range(r, H - r):
        for j in range(r, W - r):
            px = x[i - r:i + r + 1, j - r:j + r + 1]
            py = y[i - r:i + r + 1, j - r:j + r + 1]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * px * px).sum() - mx * mx
            vy = (w * py * py).sum() - my * my
            cxy = (w * px * py).sum() - mx * my
            vals.append((2 * mx * my + c1) * (2 * cxy + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def naive_bad_pixels(est, gt, sel, t):
    n = bad = 0
    for e, g, s in zip(np.ravel(est), np.ravel(gt), np.ravel(sel)):
        if not s:
            continue
        n += 1
        if not (np.isfinite(e) and e > 0) or abs(e - g) > t:
            bad += 1
    return 100.0 * bad / n
