"""Packed per-view arrays shared by the sweep and refinement kernels."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .data_io import MultiViewSet
from .geometry import DepthRange, FRONTO_NORMAL, RAY_EPS, relative_pose
from .superpixel import SuperpixelGrid, neighbor_table, rgb_to_lab


@dataclass(frozen=True)
class ViewStack:
    depth_range: DepthRange
    width: int
    height: int
    grid_w: int
    grid_h: int
    sp_size: int
    K: np.ndarray            # (V, 3, 3)
    rays: np.ndarray         # (V, H*W, 3) camera-frame pixel rays, unit z
    centroid_rays: np.ndarray  # (V, n, 3)
    rel_R: np.ndarray        # (V, V, 3, 3) ref camera -> target camera
    rel_t: np.ndarray        # (V, V, 3)
    centers: np.ndarray      # (V, 3) camera centres (world)
    other_views: np.ndarray  # (V, N) views matched against each reference
    lab: np.ndarray          # (V, H*W, 3) CIELAB
    labels: np.ndarray       # (V, H*W)
    centroids: np.ndarray    # (V, n, 2)
    colors: np.ndarray       # (V, n, 3) superpixel mean CIELAB
    counts: np.ndarray       # (V, n)
    offsets: np.ndarray      # (V, n + 1)
    pixels: np.ndarray       # (V, H*W)
    ring: np.ndarray         # (n, 8) ring neighbour ids, -1 outside the grid
    grids: tuple

    @property
    def n_views(self) -> int:
        return self.K.shape[0]

    @property
    def n_sp(self) -> int:
        return self.grid_w * self.grid_h

    @classmethod
    def build(cls, mvs: MultiViewSet, grids: list[SuperpixelGrid],
              max_neighbors: int | None = None, lab: np.ndarray | None = None) -> "ViewStack":
        V, H, W = mvs.n_views, mvs.height, mvs.width
        if len(grids) != V:
            raise ValueError("one superpixel grid per view required")
        g0 = grids[0]
        if any((g.grid_w, g.grid_h, g.size) != (g0.grid_w, g0.grid_h, g0.size) for g in grids):
            raise ValueError("all views must share one superpixel grid layout")
        if lab is None:
            lab = np.stack([rgb_to_lab(im) for im in mvs.images])
        cams = mvs.cameras
        K = np.stack([c.intrinsics for c in cams])
        rays = np.stack([c.pixel_rays(W, H).reshape(-1, 3) for c in cams])
        centroids = np.stack([g.centroids for g in grids])
        hom = np.concatenate([centroids, np.ones(centroids.shape[:2] + (1,))], axis=2)
        centroid_rays = np.einsum("vij,vnj->vni", np.stack([c.kinv for c in cams]), hom)
        rel_R = np.zeros((V, V, 3, 3))
        rel_t = np.zeros((V, V, 3))
        for a in range(V):
            for b in range(V):
                rel_R[a, b], rel_t[a, b] = relative_pose(cams[a], cams[b])
        centers = np.stack([c.center for c in cams])
        other = []
        for a in range(V):
            cand = [b for b in range(V) if b != a]
            if max_neighbors is not None and max_neighbors < len(cand):
                dist = [np.linalg.norm(centers[b] - centers[a]) for b in cand]
                # stable sort keeps the lower view index on equal distances
                cand = [cand[i] for i in np.argsort(dist, kind="stable")[:max_neighbors]]
                cand.sort()
            other.append(cand)
        return cls(
            depth_range=mvs.depth_range, width=W, height=H,
            grid_w=g0.grid_w, grid_h=g0.grid_h, sp_size=g0.size,
            K=K, rays=np.ascontiguousarray(rays), centroid_rays=np.ascontiguousarray(centroid_rays),
            rel_R=rel_R, rel_t=rel_t, centers=centers,
            other_views=np.array(other, dtype=np.int64).reshape(V, -1),
            lab=np.ascontiguousarray(lab.reshape(V, H * W, 3), dtype=np.float64),
            labels=np.stack([g.labels.ravel() for g in grids]).astype(np.int64),
            centroids=centroids, colors=np.stack([g.mean_colors for g in grids]),
            counts=np.stack([g.counts for g in grids]).astype(np.int64),
            offsets=np.stack([g.offsets for g in grids]).astype(np.int64),
            pixels=np.stack([g.pixels for g in grids]).astype(np.int64),
            ring=neighbor_table(g0.grid_w, g0.grid_h),
            grids=tuple(grids),
        )


@dataclass(frozen=True)
class PlaneMap:
    """Per-view superpixel planes plus the depth maps they rasterise to."""

    depth: np.ndarray    # (V, n)
    normal: np.ndarray   # (V, n, 3)
    raster: np.ndarray   # (V, H, W), 0 = invalid

    @classmethod
    def from_planes(cls, stack: ViewStack, depth: np.ndarray, normal: np.ndarray) -> "PlaneMap":
        depth = np.ascontiguousarray(depth, dtype=np.float64)
        normal = np.ascontiguousarray(normal, dtype=np.float64)
        return cls(depth, normal, rasterize(stack, depth, normal))

    @classmethod
    def fronto(cls, stack: ViewStack, depth: np.ndarray) -> "PlaneMap":
        normal = np.broadcast_to(FRONTO_NORMAL, depth.shape + (3,)).copy()
        return cls.from_planes(stack, depth, normal)

    def plane(self, view: int, sp_id: int):
        from .geometry import SuperpixelPlane

        return SuperpixelPlane(float(self.depth[view, sp_id]), self.normal[view, sp_id].copy())

    def same_planes(self, other: "PlaneMap") -> bool:
        return bool(np.array_equal(self.depth, other.depth) and np.array_equal(self.normal, other.normal))


@njit(cache=True, nogil=True)
def _rasterize(rays, labels, centroid_rays, depth, normal, d_min, d_max, out):
    V, P = labels.shape
    for v in range(V):
        for p in range(P):
            s = labels[v, p]
            n0, n1, n2 = normal[v, s, 0], normal[v, s, 1], normal[v, s, 2]
            den = n0 * rays[v, p, 0] + n1 * rays[v, p, 1] + n2 * rays[v, p, 2]
            if abs(den) <= RAY_EPS:
                out[v, p] = 0.0
                continue
            d = depth[v, s]
            num = d * (n0 * centroid_rays[v, s, 0] + n1 * centroid_rays[v, s, 1]
                       + n2 * centroid_rays[v, s, 2])
            z = num / den
            if z <= 0.0:
                out[v, p] = 0.0
            else:
                out[v, p] = min(max(z, d_min), d_max)


def rasterize(stack: ViewStack, depth: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Per-pixel depth from each pixel's own superpixel plane, clamped to the depth range."""
    V = stack.n_views
    out = np.zeros((V, stack.height * stack.width))
    _rasterize(stack.rays, stack.labels, stack.centroid_rays, depth, normal,
               stack.depth_range.d_min, stack.depth_range.d_max, out)
    return out.reshape(V, stack.height, stack.width)
