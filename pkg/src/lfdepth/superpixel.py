"""SLIC over-segmentation laid out on a regular superpixel grid.

Superpixel ``k`` is seeded in grid cell ``(k % grid_w, k // grid_w)`` and
keeps that id, so the label map doubles as an approximately regular grid
with 8-connected cell adjacency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

# compass ring E, NE, N, NW, W, SW, S, SE (image y grows downwards)
RING = np.array([(1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1)],
                dtype=np.int64)


class InvalidParams(ValueError):
    pass


@dataclass(frozen=True)
class SlicParams:
    size: int = 8
    compactness: float = 10.0
    iterations: int = 10

    def __post_init__(self):
        if self.size < 4:
            raise InvalidParams("superpixel size must be >= 4")
        if not self.compactness > 0:
            raise InvalidParams("compactness must be positive")
        if self.iterations < 1:
            raise InvalidParams("need at least one SLIC iteration")


@dataclass(frozen=True)
class SuperpixelGrid:
    labels: np.ndarray        # (H, W) int32
    grid_w: int
    grid_h: int
    size: int
    centroids: np.ndarray     # (n, 2) x, y
    mean_colors: np.ndarray   # (n, 3) CIELAB
    counts: np.ndarray        # (n,)
    offsets: np.ndarray       # (n + 1,) into ``pixels``
    pixels: np.ndarray        # flat pixel indices grouped by label, raster order within

    @property
    def n(self) -> int:
        return self.grid_w * self.grid_h

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def grid_pos(self, sp_id: int) -> tuple[int, int]:
        return sp_id % self.grid_w, sp_id // self.grid_w

    def sp_at(self, gx: int, gy: int) -> int:
        return gy * self.grid_w + gx

    def members(self, sp_id: int) -> np.ndarray:
        """Flat pixel indices of superpixel ``sp_id``."""
        return self.pixels[self.offsets[sp_id]:self.offsets[sp_id + 1]]

    @classmethod
    def from_labels(cls, labels: np.ndarray, lab: np.ndarray, grid_w: int, grid_h: int,
                    size: int, fallback_centers: np.ndarray | None = None) -> "SuperpixelGrid":
        """Statistics of an existing label map (labels must lie in [0, grid_w*grid_h))."""
        labels = np.ascontiguousarray(labels, dtype=np.int32)
        n = grid_w * grid_h
        if labels.min() < 0 or labels.max() >= n:
            raise InvalidParams("label outside the superpixel grid")
        if fallback_centers is None:
            fallback_centers = _cell_centers(labels.shape[1], labels.shape[0], size, grid_w, grid_h)
        cen, col, cnt, off, pix = _stats(labels, np.ascontiguousarray(lab, dtype=np.float64), n,
                                        np.ascontiguousarray(fallback_centers, dtype=np.float64))
        return cls(labels, grid_w, grid_h, size, cen, col, cnt, off, pix)


def rgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    from skimage.color import rgb2lab

    return rgb2lab(np.clip(rgb, 0.0, 1.0))


def grid_dims(width: int, height: int, size: int) -> tuple[int, int]:
    return math.ceil(width / size), math.ceil(height / size)


def _cell_centers(width, height, size, grid_w, grid_h) -> np.ndarray:
    c = np.zeros((grid_w * grid_h, 5))
    for gy in range(grid_h):
        for gx in range(grid_w):
            k = gy * grid_w + gx
            c[k, 0] = gx * size + (min(size, width - gx * size) - 1) / 2.0
            c[k, 1] = gy * size + (min(size, height - gy * size) - 1) / 2.0
    return c


@njit(cache=True)
def _update_centers(lab, labels, centers):
    n = centers.shape[0]
    acc = np.zeros((n, 5))
    cnt = np.zeros(n, dtype=np.int64)
    H, W = labels.shape
    for y in range(H):
        for x in range(W):
            k = labels[y, x]
            acc[k, 0] += x
            acc[k, 1] += y
            acc[k, 2] += lab[y, x, 0]
            acc[k, 3] += lab[y, x, 1]
            acc[k, 4] += lab[y, x, 2]
            cnt[k] += 1
    for k in range(n):
        if cnt[k] > 0:
            for j in range(5):
                centers[k, j] = acc[k, j] / cnt[k]
    return cnt


@njit(cache=True)
def _assign(lab, labels, centers, S, m, grid_w, grid_h):
    H, W = labels.shape
    n = centers.shape[0]
    # bucket centres by the cell they currently fall into
    bucket_count = np.zeros(grid_w * grid_h + 1, dtype=np.int64)
    cb = np.empty(n, dtype=np.int64)
    for k in range(n):
        bx = min(max(int(math.floor(centers[k, 0] / S)), 0), grid_w - 1)
        by = min(max(int(math.floor(centers[k, 1] / S)), 0), grid_h - 1)
        cb[k] = by * grid_w + bx
        bucket_count[cb[k] + 1] += 1
    for b in range(grid_w * grid_h):
        bucket_count[b + 1] += bucket_count[b]
    fill = bucket_count[:-1].copy()
    order = np.empty(n, dtype=np.int64)
    for k in range(n):
        order[fill[cb[k]]] = k
        fill[cb[k]] += 1
    ratio = m / S
    out = labels.copy()
    for y in range(H):
        by0 = max(int(math.floor((y - S) / S)), 0)
        by1 = min(int(math.floor((y + S) / S)), grid_h - 1)
        for x in range(W):
            bx0 = max(int(math.floor((x - S) / S)), 0)
            bx1 = min(int(math.floor((x + S) / S)), grid_w - 1)
            best = -1
            best_d = np.inf
            best_s = np.inf
            for by in range(by0, by1 + 1):
                for bx in range(bx0, bx1 + 1):
                    b = by * grid_w + bx
                    for o in range(bucket_count[b], bucket_count[b + 1]):
                        k = order[o]
                        dx = x - centers[k, 0]
                        dy = y - centers[k, 1]
                        if abs(dx) > S or abs(dy) > S:
                            continue
                        dl = lab[y, x, 0] - centers[k, 2]
                        da = lab[y, x, 1] - centers[k, 3]
                        db = lab[y, x, 2] - centers[k, 4]
                        ds = math.sqrt(dx * dx + dy * dy)
                        d = math.sqrt(dl * dl + da * da + db * db) + ratio * ds
                        if (d < best_d or (d == best_d and ds < best_s)
                                or (d == best_d and ds == best_s and k < best)):
                            best, best_d, best_s = k, d, ds
            if best >= 0:
                out[y, x] = best
    return out


def _reseed_empty(labels, centers, n):
    """Give every cluster that lost all its pixels the pixel nearest its centre.

    Only pixels of clusters with more than one pixel are taken, so no cluster
    is emptied in turn; connectivity enforcement afterwards keeps each label's
    largest component, which keeps every label alive.
    """
    counts = np.bincount(labels.ravel(), minlength=n)
    empty = np.flatnonzero(counts == 0)
    if empty.size == 0:
        return labels
    labels = labels.copy()
    H, W = labels.shape
    ys, xs = np.mgrid[0:H, 0:W]
    for k in empty:
        d2 = (xs - centers[k, 0]) ** 2 + (ys - centers[k, 1]) ** 2
        d2 = np.where(counts[labels] > 1, d2, np.inf)
        p = int(np.argmin(d2))  # first minimum in raster order
        y, x = divmod(p, W)
        counts[labels[y, x]] -= 1
        labels[y, x] = k
        counts[k] = 1
    return labels


@njit(cache=True)
def _components(labels):
    H, W = labels.shape
    comp = -np.ones((H, W), dtype=np.int64)
    sizes = []
    comp_label = []
    stack = np.empty(H * W, dtype=np.int64)
    c = 0
    for y0 in range(H):
        for x0 in range(W):
            if comp[y0, x0] >= 0:
                continue
            lbl = labels[y0, x0]
            comp[y0, x0] = c
            stack[0] = y0 * W + x0
            top = 1
            size = 0
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // W
                x = p % W
                size += 1
                for d in range(4):
                    nx = x + (1 if d == 0 else (-1 if d == 1 else 0))
                    ny = y + (1 if d == 2 else (-1 if d == 3 else 0))
                    if 0 <= nx < W and 0 <= ny < H and comp[ny, nx] < 0 and labels[ny, nx] == lbl:
                        comp[ny, nx] = c
                        stack[top] = ny * W + nx
                        top += 1
            sizes.append(size)
            comp_label.append(lbl)
            c += 1
    return comp, np.array(sizes, dtype=np.int64), np.array(comp_label, dtype=np.int64)


@njit(cache=True)
def _enforce_connectivity(labels, n_labels):
    H, W = labels.shape
    comp, sizes, comp_label = _components(labels)
    nc = sizes.shape[0]
    main = -np.ones(n_labels, dtype=np.int64)
    for c in range(nc):
        lbl = comp_label[c]
        if main[lbl] < 0 or sizes[c] > sizes[main[lbl]]:
            main[lbl] = c
    resolved = np.zeros(nc, dtype=np.bool_)
    count = np.zeros(n_labels, dtype=np.int64)
    for lbl in range(n_labels):
        if main[lbl] >= 0:
            resolved[main[lbl]] = True
            count[lbl] = sizes[main[lbl]]
    # pixel lists per component
    start = np.zeros(nc + 1, dtype=np.int64)
    flat = comp.ravel()
    for p in range(H * W):
        start[flat[p] + 1] += 1
    for c in range(nc):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    members = np.empty(H * W, dtype=np.int64)
    for p in range(H * W):
        members[fill[flat[p]]] = p
        fill[flat[p]] += 1
    remaining = nc - np.sum(resolved)
    while remaining > 0:
        progress = False
        for c in range(nc):
            if resolved[c]:
                continue
            best = -1
            for o in range(start[c], start[c + 1]):
                p = members[o]
                y = p // W
                x = p % W
                for d in range(4):
                    nx = x + (1 if d == 0 else (-1 if d == 1 else 0))
                    ny = y + (1 if d == 2 else (-1 if d == 3 else 0))
                    if not (0 <= nx < W and 0 <= ny < H):
                        continue
                    oc = comp[ny, nx]
                    if oc == c or not resolved[oc]:
                        continue
                    lbl = comp_label[oc]
                    if best < 0 or count[lbl] > count[best] or (count[lbl] == count[best] and lbl < best):
                        best = lbl
            if best >= 0:
                comp_label[c] = best
                count[best] += sizes[c]
                resolved[c] = True
                remaining -= 1
                progress = True
        if not progress:
            break
    out = np.empty_like(labels)
    for y in range(H):
        for x in range(W):
            out[y, x] = comp_label[comp[y, x]]
    return out


@njit(cache=True)
def _stats(labels, lab, n, fallback):
    H, W = labels.shape
    cnt = np.zeros(n, dtype=np.int64)
    acc = np.zeros((n, 5))
    for y in range(H):
        for x in range(W):
            k = labels[y, x]
            cnt[k] += 1
            acc[k, 0] += x
            acc[k, 1] += y
            for j in range(3):
                acc[k, 2 + j] += lab[y, x, j]
    cen = np.empty((n, 2))
    col = np.empty((n, 3))
    for k in range(n):
        if cnt[k] > 0:
            cen[k, 0] = acc[k, 0] / cnt[k]
            cen[k, 1] = acc[k, 1] / cnt[k]
            for j in range(3):
                col[k, j] = acc[k, 2 + j] / cnt[k]
        else:
            cen[k, 0] = fallback[k, 0]
            cen[k, 1] = fallback[k, 1]
            yy = min(max(int(round(fallback[k, 1])), 0), H - 1)
            xx = min(max(int(round(fallback[k, 0])), 0), W - 1)
            for j in range(3):
                col[k, j] = lab[yy, xx, j]
    off = np.zeros(n + 1, dtype=np.int64)
    for k in range(n):
        off[k + 1] = off[k] + cnt[k]
    fill = off[:-1].copy()
    pix = np.empty(H * W, dtype=np.int64)
    for y in range(H):
        for x in range(W):
            k = labels[y, x]
            pix[fill[k]] = y * W + x
            fill[k] += 1
    return cen, col, cnt, off, pix


def slic_segment(image: np.ndarray, params: SlicParams = SlicParams(),
                 lab: np.ndarray | None = None) -> SuperpixelGrid:
    """Segment an RGB image (H, W, 3) in [0, 1] into grid-addressable superpixels."""
    H, W = image.shape[:2]
    S = params.size
    if W < S or H < S:
        raise InvalidParams(f"image {W}x{H} smaller than superpixel size {S}")
    if lab is None:
        lab = rgb_to_lab(image)
    lab = np.ascontiguousarray(lab, dtype=np.float64)
    gw, gh = grid_dims(W, H, S)
    n = gw * gh
    xs = np.arange(W) // S
    ys = np.arange(H) // S
    labels = (ys[:, None] * gw + xs[None, :]).astype(np.int32)
    centers = _cell_centers(W, H, S, gw, gh)
    _update_centers(lab, labels, centers)
    for _ in range(params.iterations):
        labels = _assign(lab, labels, centers, float(S), float(params.compactness), gw, gh)
        _update_centers(lab, labels, centers)
    labels = _reseed_empty(labels, centers, n)
    labels = _enforce_connectivity(labels, n).astype(np.int32)
    return SuperpixelGrid.from_labels(labels, lab, gw, gh, S, fallback_centers=centers)


# -- grid topology ------------------------------------------------------------

def neighbor_table(grid_w: int, grid_h: int) -> np.ndarray:
    """(n, 8) ids of the ring neighbours of every cell, -1 outside the grid."""
    gy, gx = np.divmod(np.arange(grid_w * grid_h), grid_w)
    nx = gx[:, None] + RING[None, :, 0]
    ny = gy[:, None] + RING[None, :, 1]
    inside = (nx >= 0) & (nx < grid_w) & (ny >= 0) & (ny < grid_h)
    return np.where(inside, ny * grid_w + nx, -1).astype(np.int64)


def kernel_offsets(size_px: float, step_sp: int, sp_size: int) -> np.ndarray:
    """Grid offsets of the propagation kernel, ring first.

    Distant samples run along the 8 compass directions at multiples of
    ``step_sp`` cells out to ``size_px / sp_size`` cells.
    """
    step = max(1, int(step_sp))
    reach = size_px / sp_size
    offs = [tuple(o) for o in RING]
    seen = set(offs)
    for dx, dy in RING:
        r = step
        while r <= reach + 1e-9:
            o = (int(dx * r), int(dy * r))
            if o not in seen:
                seen.add(o)
                offs.append(o)
            r += step
    return np.array(offs, dtype=np.int64).reshape(-1, 2)


def grid_neighbors(grid: SuperpixelGrid, sp_id: int, pattern: str = "immediate8",
                   size_px: float | None = None, step_sp: int | None = None) -> list[int]:
    """Superpixel ids around ``sp_id``: the 8-ring or the propagation kernel."""
    if pattern == "immediate8":
        offs = RING
    elif pattern == "kernel":
        if size_px is None or step_sp is None:
            raise ValueError("kernel pattern needs size_px and step_sp")
        offs = kernel_offsets(size_px, step_sp, grid.size)
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    gx, gy = grid.grid_pos(sp_id)
    out = []
    for dx, dy in offs:
        x, y = gx + dx, gy + dy
        if 0 <= x < grid.grid_w and 0 <= y < grid.grid_h:
            out.append(grid.sp_at(x, y))
    return out


def min_neighbor_similarity(grid: SuperpixelGrid, sp_id: int, alpha: float) -> float:
    """Smallest colour similarity between ``sp_id`` and its ring neighbours."""
    nb = grid_neighbors(grid, sp_id)
    if not nb:
        return 1.0
    diff = grid.mean_colors[nb] - grid.mean_colors[sp_id]
    return float(np.exp(-np.sum(diff * diff, axis=1) / (2.0 * alpha * alpha)).min())


def min_neighbor_similarity_all(grid: SuperpixelGrid, alpha: float) -> np.ndarray:
    nbr = neighbor_table(grid.grid_w, grid.grid_h)
    c = grid.mean_colors
    diff = c[np.maximum(nbr, 0)] - c[:, None, :]
    w = np.exp(-np.sum(diff * diff, axis=2) / (2.0 * alpha * alpha))
    w[nbr < 0] = 1.0
    return w.min(axis=1)


def write_stats(grid: SuperpixelGrid, path) -> None:
    lines = ["# id gx gy cx cy L a b count"]
    for k in range(grid.n):
        gx, gy = grid.grid_pos(k)
        cx, cy = grid.centroids[k]
        L, a, b = grid.mean_colors[k]
        lines.append(f"{k} {gx} {gy} {cx:.6f} {cy:.6f} {L:.6f} {a:.6f} {b:.6f} {grid.counts[k]}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
