"""Jacobi-parallel plane propagation and normal refinement.

Every superpixel of every view is updated in one pass that reads only the
previous state (the snapshot) and writes a fresh buffer. The score being
maximised is the product of a cross-view consistency term and a
colour-weighted smoothness term, both in (0, 1 + eta].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

from .geometry import RAY_EPS, SuperpixelPlane
from .parallel import run_chunks
from .stack import PlaneMap, ViewStack
from .superpixel import kernel_offsets

# pixels with target-frame depth up to D * (1 + VIS_TOL) count as visible
VIS_TOL = 1e-6


@dataclass(frozen=True)
class EnergyParams:
    sigma: float | None = None      # inverse-depth units; None -> 1.5 sweep steps
    alpha: float = 7.5              # CIELAB units
    eta: float = 0.5
    tssd_threshold: float = 0.05
    size_init: float | None = None  # pixels; None -> smaller image dimension
    steps_init: int = 5
    iterations: int = 5
    use_smoothness: bool = True
    use_consistency: bool = True
    # a pixel counts as occluded in a target view only when its inverse depth
    # lies more than occlusion_band * sigma behind the target surface
    occlusion_band: float = 3.0
    # average the photo similarity inside the consistency term over in-view pixels only
    in_view_similarity: bool = True

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if not self.tssd_threshold > 0:
            raise ValueError("tssd_threshold must be positive")
        if self.size_init is not None and not self.size_init > 0:
            raise ValueError("size_init must be positive")
        if self.steps_init < 1:
            raise ValueError("steps_init must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not self.occlusion_band >= 0:
            raise ValueError("occlusion_band must be >= 0")

    def resolved(self, stack: ViewStack, levels: int) -> "EnergyParams":
        """Fill data-dependent defaults."""
        sigma = self.sigma
        if sigma is None:
            sigma = 1.5 * stack.depth_range.inverse_step(levels)
        size = self.size_init
        if size is None:
            size = float(min(stack.width, stack.height))
        return replace(self, sigma=sigma, size_init=size)


def kernel_schedule(size_init: float, steps_init: int, l: int) -> tuple[float, int]:
    """Kernel extent (pixels) and step (superpixels) at iteration ``l >= 1``."""
    if l < 1:
        raise ValueError("iterations are numbered from 1")
    return size_init / l, max(1, int(math.floor(steps_init / l + 0.5)))


def color_similarity(c1, c2, alpha: float) -> float:
    d = np.asarray(c1, dtype=np.float64) - np.asarray(c2, dtype=np.float64)
    return float(np.exp(-np.dot(d, d) / (2.0 * alpha * alpha)))


def depth_consistency(d1: float, d2: float, sigma: float) -> float:
    r = 1.0 / d1 - 1.0 / d2
    return float(np.exp(-r * r / (2.0 * sigma * sigma)))


# -- numba kernels ------------------------------------------------------------------
#
# geo  = static stack arrays (see EnergyModel.__init__)
# snap = (centroid depth (V, n), raster (V, H*W), seen (V, n, N)) of the snapshot
# prm  = (sigma, alpha, eta, band, use_smoothness, use_consistency, in_view_similarity)

@njit(cache=True, nogil=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, nogil=True)
def _plane_z(d, n, anchor_ray, query_ray):
    """Plane depth along ``query_ray``; -1 when degenerate."""
    den = _dot(n, query_ray)
    if abs(den) <= RAY_EPS:
        return -1.0
    return d * _dot(n, anchor_ray) / den


@njit(cache=True, nogil=True)
def _smoothness(v, s, d, n, depth, geo, ring_w, sigma):
    cr = geo[1]
    ring = geo[11]
    num = 0.0
    den = 0.0
    plain = 0.0
    cnt = 0
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    for k in range(8):
        j = ring[s, k]
        if j < 0:
            continue
        w = ring_w[v, s, k]
        z = _plane_z(d, n, cr[v, s], cr[v, j])
        sk = 0.0
        if z > 0.0:
            r = 1.0 / depth[v, j] - 1.0 / z
            sk = math.exp(-r * r * inv2s2)
        num += w * sk
        den += w
        plain += sk
        cnt += 1
    if cnt == 0:
        return 1.0
    if den <= 0.0:
        return plain / cnt
    return num / den


@njit(cache=True, nogil=True)
def _map_pixel(v, p, i, z, geo):
    """Target pixel index of ref pixel p at depth z and its target-frame depth; (-1, 0) if lost."""
    rays, rel_R, rel_t, K = geo[0], geo[2], geo[3], geo[4]
    W = geo[12]
    H = geo[13]
    R = rel_R[v, i]
    t = rel_t[v, i]
    Ki = K[i]
    x0 = z * rays[v, p, 0]
    x1 = z * rays[v, p, 1]
    x2 = z * rays[v, p, 2]
    X0 = R[0, 0] * x0 + R[0, 1] * x1 + R[0, 2] * x2 + t[0]
    X1 = R[1, 0] * x0 + R[1, 1] * x1 + R[1, 2] * x2 + t[1]
    X2 = R[2, 0] * x0 + R[2, 1] * x1 + R[2, 2] * x2 + t[2]
    if X2 <= 0.0:
        return -1, 0.0
    qx = (Ki[0, 0] * X0 + Ki[0, 1] * X1 + Ki[0, 2] * X2) / X2
    qy = (Ki[1, 1] * X1 + Ki[1, 2] * X2) / X2
    ix = int(math.floor(qx + 0.5))
    iy = int(math.floor(qy + 0.5))
    if ix < 0 or ix >= W or iy < 0 or iy >= H:
        return -1, 0.0
    return iy * W + ix, X2


@njit(cache=True, nogil=True)
def _reaches(v, s, d, n, i, geo):
    """True when some member pixel of (v, s) on plane (d, n) lands inside view i."""
    rays, cr, offsets, pixels = geo[0], geo[1], geo[9], geo[10]
    anchor = d * _dot(n, cr[v, s])
    for o in range(offsets[v, s], offsets[v, s + 1]):
        p = pixels[v, o]
        den = _dot(n, rays[v, p])
        if abs(den) <= RAY_EPS:
            continue
        z = anchor / den
        if z <= 0.0:
            continue
        q, _ = _map_pixel(v, p, i, z, geo)
        if q >= 0:
            return True
    return False


@njit(cache=True, nogil=True)
def _view_terms(v, s, d, n, i, raster, geo, minsim, prm, out):
    """out <- (S, V, O, |X|, |Y|, pixels landing in view i)."""
    rays, cr = geo[0], geo[1]
    labels, colors, counts, offsets, pixels = geo[6], geo[7], geo[8], geo[9], geo[10]
    sigma, alpha, eta, band = prm[0], prm[1], prm[2], prm[3]
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    out[3] = 0.0
    out[4] = 0.0
    out[5] = 0.0
    cnt = counts[v, s]
    if cnt == 0:
        return
    anchor = d * _dot(n, cr[v, s])
    inv2a2 = 1.0 / (2.0 * alpha * alpha)
    inv2s2 = 1.0 / (2.0 * sigma * sigma)
    c0, c1, c2 = colors[v, s, 0], colors[v, s, 1], colors[v, s, 2]
    sw = 0.0
    xs = 0.0
    xc = 0
    yc = 0
    ni = 0
    for o in range(offsets[v, s], offsets[v, s + 1]):
        p = pixels[v, o]
        den = _dot(n, rays[v, p])
        if abs(den) <= RAY_EPS:
            continue
        z = anchor / den
        if z <= 0.0:
            continue
        q, zt = _map_pixel(v, p, i, z, geo)
        if q < 0:
            continue
        ni += 1
        tl = labels[i, q]
        e0 = c0 - colors[i, tl, 0]
        e1 = c1 - colors[i, tl, 1]
        e2 = c2 - colors[i, tl, 2]
        sw += math.exp(-(e0 * e0 + e1 * e1 + e2 * e2) * inv2a2)
        Dt = raster[i, q]
        if Dt <= 0.0:
            continue
        r = 1.0 / zt - 1.0 / Dt
        if zt <= Dt * (1.0 + VIS_TOL) or -r <= band * sigma:
            xs += math.exp(-r * r * inv2s2)
            xc += 1
        else:
            yc += 1
    out[0] = sw / cnt
    # optionally score photo similarity only over the pixels that land in view i
    S = sw / ni if (prm[6] and ni > 0) else sw / cnt
    if xc > 0:
        out[1] = S * xs / xc
    if yc > 0:
        out[2] = eta * (1.0 - minsim[v, s])
    out[3] = xc
    out[4] = yc
    out[5] = ni


@njit(cache=True, nogil=True)
def _mix(t):
    """Per-view consistency: each classified pixel scores V if visible, O if occluded."""
    k = t[3] + t[4]
    if k == 0.0:
        return 0.0
    return (t[3] * t[1] + t[4] * t[2]) / k


@njit(cache=True, nogil=True)
def _consistency(v, s, d, n, snap, geo, minsim, prm, buf):
    """Mean over the views the snapshot plane of (v, s) reaches of the
    visible/occluded pixel-weighted mix of V and O.

    A superpixel whose snapshot plane reaches no other view is unconstrained
    (1.0) and left to the smoothness term.
    """
    other = geo[5]
    counts = geo[8]
    raster = snap[1]
    seen = snap[2]
    N = other.shape[1]
    if N == 0 or counts[v, s] == 0:
        return 0.0
    total = 0.0
    m = 0
    for ii in range(N):
        if seen[v, s, ii] == 0:
            continue
        _view_terms(v, s, d, n, other[v, ii], raster, geo, minsim, prm, buf)
        total += _mix(buf)
        m += 1
    if m == 0:
        return 1.0
    return total / m


@njit(cache=True, nogil=True)
def _energy(v, s, d, n, snap, geo, minsim, ring_w, prm, buf):
    ec = 1.0
    if prm[5]:
        ec = _consistency(v, s, d, n, snap, geo, minsim, prm, buf)
        if ec == 0.0:
            return 0.0
    es = 1.0
    if prm[4]:
        es = _smoothness(v, s, d, n, snap[0], geo, ring_w, prm[0])
    return ec * es


@njit(cache=True, nogil=True)
def _seen_tasks(lo, hi, n_sp, depth, normal, geo, out):
    other = geo[5]
    for task in range(lo, hi):
        v = task // n_sp
        s = task % n_sp
        for ii in range(other.shape[1]):
            out[v, s, ii] = 1 if _reaches(v, s, depth[v, s], normal[v, s], other[v, ii], geo) else 0


@njit(cache=True, nogil=True)
def _normal_candidates(v, s, depth, geo, out):
    cr = geo[1]
    ring = geo[11]
    P = np.empty(3)
    A = np.empty(3)
    B = np.empty(3)
    for c in range(3):
        P[c] = depth[v, s] * cr[v, s, c]
    count = 0
    for k in range(8):
        a = ring[s, k]
        b = ring[s, (k + 1) % 8]
        if a < 0 or b < 0:
            continue
        for c in range(3):
            A[c] = depth[v, a] * cr[v, a, c] - P[c]
            B[c] = depth[v, b] * cr[v, b, c] - P[c]
        n0 = A[1] * B[2] - A[2] * B[1]
        n1 = A[2] * B[0] - A[0] * B[2]
        n2 = A[0] * B[1] - A[1] * B[0]
        ln = math.sqrt(n0 * n0 + n1 * n1 + n2 * n2)
        la = math.sqrt(_dot(A, A))
        lb = math.sqrt(_dot(B, B))
        # collinear or coincident vertices
        if ln == 0.0 or ln <= 1e-12 * la * lb:
            continue
        n0 /= ln
        n1 /= ln
        n2 /= ln
        f = n0 * cr[v, s, 0] + n1 * cr[v, s, 1] + n2 * cr[v, s, 2]
        if f == 0.0:
            continue
        if f > 0.0:
            n0, n1, n2 = -n0, -n1, -n2
        out[count, 0] = n0
        out[count, 1] = n1
        out[count, 2] = n2
        count += 1
    return count


@njit(cache=True, nogil=True)
def _refine_tasks(lo, hi, n_sp, grid_w, grid_h, offs, normal_in, snap, geo, minsim, ring_w,
                  prm, d_min, d_max, depth_out, normal_out, trace):
    cr = geo[1]
    depth_in = snap[0]
    buf = np.empty(6)
    cand = np.empty((8, 3))
    n = np.empty(3)
    bn = np.empty(3)
    for task in range(lo, hi):
        v = task // n_sp
        s = task % n_sp
        d = depth_in[v, s]
        for c in range(3):
            n[c] = normal_in[v, s, c]
        be = _energy(v, s, d, n, snap, geo, minsim, ring_w, prm, buf)
        trace[task, 0] = be
        # propagation: adopt the best strictly improving neighbour plane
        gx = s % grid_w
        gy = s // grid_w
        for c in range(3):
            bn[c] = n[c]
        bd = d
        for k in range(offs.shape[0]):
            x = gx + offs[k, 0]
            y = gy + offs[k, 1]
            if x < 0 or x >= grid_w or y < 0 or y >= grid_h:
                continue
            j = y * grid_w + x
            nj = normal_in[v, j]
            den = _dot(nj, cr[v, s])
            # the candidate must face the camera at this centroid
            if den >= -RAY_EPS:
                continue
            z = depth_in[v, j] * _dot(nj, cr[v, j]) / den
            if z < d_min or z > d_max:
                continue
            ec = _energy(v, s, z, nj, snap, geo, minsim, ring_w, prm, buf)
            if ec > be:
                be = ec
                bd = z
                for c in range(3):
                    bn[c] = nj[c]
        d = bd
        for c in range(3):
            n[c] = bn[c]
        trace[task, 1] = be
        trace[task, 3] = d
        for c in range(3):
            trace[task, 4 + c] = n[c]
        # refinement: slanted normals from neighbouring centroid triangles
        nc = _normal_candidates(v, s, depth_in, geo, cand)
        for k in range(nc):
            ec = _energy(v, s, d, cand[k], snap, geo, minsim, ring_w, prm, buf)
            if ec > be:
                be = ec
                for c in range(3):
                    bn[c] = cand[k, c]
        trace[task, 2] = be
        depth_out[v, s] = d
        for c in range(3):
            normal_out[v, s, c] = bn[c]


# -- Python API -------------------------------------------------------------------------

@dataclass
class IterationTrace:
    """Per-(view, superpixel) record of one refinement pass.

    ``energy`` columns: incumbent, after propagation, after normal refinement,
    all evaluated against the pass's snapshot. ``prop_depth``/``prop_normal``
    hold the plane chosen by the propagation phase.
    """

    energy: np.ndarray       # (V*n, 3)
    prop_depth: np.ndarray   # (V, n)
    prop_normal: np.ndarray  # (V, n, 3)

    @property
    def accepted_propagation(self) -> np.ndarray:
        return self.energy[:, 1] > self.energy[:, 0]

    @property
    def accepted_normal(self) -> np.ndarray:
        return self.energy[:, 2] > self.energy[:, 1]


class EnergyModel:
    """Energy evaluation for one view stack and one parameter set."""

    def __init__(self, stack: ViewStack, params: EnergyParams = EnergyParams(), levels: int = 64):
        if params.sigma is None or params.size_init is None:
            params = params.resolved(stack, levels)
        self.stack = stack
        self.params = params
        c = stack.colors
        ring = stack.ring
        diff = c[:, np.maximum(ring, 0), :] - c[:, :, None, :]
        w = np.exp(-np.sum(diff * diff, axis=3) / (2.0 * params.alpha ** 2))
        w[:, ring < 0] = 0.0
        self.ring_w = np.ascontiguousarray(w)
        sim = np.where(ring[None] < 0, 1.0, w)
        self.minsim = np.ascontiguousarray(sim.min(axis=2))
        self.geo = (stack.rays, stack.centroid_rays, stack.rel_R, stack.rel_t, stack.K,
                    stack.other_views, stack.labels, stack.colors, stack.counts, stack.offsets,
                    stack.pixels, stack.ring, stack.width, stack.height)
        self.prm = (float(params.sigma), float(params.alpha), float(params.eta),
                    float(params.occlusion_band), bool(params.use_smoothness),
                    bool(params.use_consistency), bool(params.in_view_similarity))
        self._last = (None, None)

    def snap(self, snapshot: PlaneMap, workers: int = 1):
        """Kernel view of a snapshot; cached for the most recent one."""
        if self._last[0] is snapshot:
            return self._last[1]
        st = self.stack
        V, n = st.n_views, st.n_sp
        seen = np.zeros((V, n, st.other_views.shape[1]), dtype=np.uint8)
        run_chunks(lambda lo, hi: _seen_tasks(lo, hi, n, snapshot.depth, snapshot.normal,
                                              self.geo, seen), V * n, workers)
        out = (np.ascontiguousarray(snapshot.depth),
               np.ascontiguousarray(snapshot.raster.reshape(V, -1)), seen)
        self._last = (snapshot, out)
        return out

    @staticmethod
    def _n(plane: SuperpixelPlane) -> np.ndarray:
        return np.ascontiguousarray(plane.normal, dtype=np.float64)

    def smoothness(self, snapshot, view, sp_id, plane) -> float:
        return float(_smoothness(view, sp_id, float(plane.depth), self._n(plane), snapshot.depth,
                                 self.geo, self.ring_w, self.prm[0]))

    def view_terms(self, snapshot, view, sp_id, plane, target) -> tuple[float, float, float]:
        out = np.empty(6)
        raster = self.snap(snapshot)[1]
        _view_terms(view, sp_id, float(plane.depth), self._n(plane), target, raster, self.geo,
                    self.minsim, self.prm, out)
        return float(out[0]), float(out[1]), float(out[2])

    def consistency(self, snapshot, view, sp_id, plane) -> float:
        return float(_consistency(view, sp_id, float(plane.depth), self._n(plane),
                                  self.snap(snapshot), self.geo, self.minsim, self.prm,
                                  np.empty(6)))

    def energy(self, snapshot, view, sp_id, plane) -> float:
        return float(_energy(view, sp_id, float(plane.depth), self._n(plane), self.snap(snapshot),
                             self.geo, self.minsim, self.ring_w, self.prm, np.empty(6)))

    def normal_candidates(self, snapshot, view, sp_id) -> np.ndarray:
        out = np.empty((8, 3))
        k = _normal_candidates(view, sp_id, np.ascontiguousarray(snapshot.depth), self.geo, out)
        return out[:k].copy()


def smoothness_term(model: EnergyModel, snapshot: PlaneMap, view: int, sp_id: int,
                    plane: SuperpixelPlane) -> float:
    """Colour-weighted agreement of the plane with the ring neighbours' centroid depths."""
    return model.smoothness(snapshot, view, sp_id, plane)


def superpixel_photo_similarity(model, snapshot, view, sp_id, plane, target_view) -> float:
    return model.view_terms(snapshot, view, sp_id, plane, target_view)[0]


def visibility_term(model, snapshot, view, sp_id, plane, target_view) -> float:
    return model.view_terms(snapshot, view, sp_id, plane, target_view)[1]


def occlusion_term(model, snapshot, view, sp_id, plane, target_view) -> float:
    return model.view_terms(snapshot, view, sp_id, plane, target_view)[2]


def consistency_term(model, snapshot, view, sp_id, plane) -> float:
    """Mean of visibility plus occlusion over the matched views."""
    return model.consistency(snapshot, view, sp_id, plane)


def energy(model, snapshot, view, sp_id, plane) -> float:
    return model.energy(snapshot, view, sp_id, plane)


def normal_candidates(model, snapshot, view, sp_id) -> np.ndarray:
    """Camera-facing normals of the triangles (centroid, ring[k], ring[k+1])."""
    return model.normal_candidates(snapshot, view, sp_id)


def refine_iteration(model: EnergyModel, state: PlaneMap, l: int, workers: int = 1,
                     with_trace: bool = False):
    """One Jacobi pass at iteration ``l``; returns the next state (and its trace)."""
    stack, p = model.stack, model.params
    size_l, step_l = kernel_schedule(p.size_init, p.steps_init, l)
    offs = kernel_offsets(size_l, step_l, stack.sp_size)
    V, n = stack.n_views, stack.n_sp
    depth_out = np.empty_like(state.depth)
    normal_out = np.empty_like(state.normal)
    trace = np.empty((V * n, 7))
    snap = model.snap(state, workers)
    normal_in = np.ascontiguousarray(state.normal)
    dr = stack.depth_range

    def work(lo, hi):
        _refine_tasks(lo, hi, n, stack.grid_w, stack.grid_h, offs, normal_in, snap, model.geo,
                      model.minsim, model.ring_w, model.prm, dr.d_min, dr.d_max,
                      depth_out, normal_out, trace)

    run_chunks(work, V * n, workers)
    nxt = PlaneMap.from_planes(stack, depth_out, normal_out)
    if not with_trace:
        return nxt
    tr = IterationTrace(trace[:, :3].copy(), trace[:, 3].reshape(V, n).copy(),
                        trace[:, 4:7].reshape(V, n, 3).copy())
    return nxt, tr


def run_refinement(model: EnergyModel, init: PlaneMap, workers: int = 1, callback=None,
                   iterations: int | None = None) -> PlaneMap:
    """Fold ``refine_iteration`` for l = 1..iterations; ``callback(l, state)`` after each."""
    iters = model.params.iterations if iterations is None else iterations
    state = init
    for l in range(1, iters + 1):
        state = refine_iteration(model, state, l, workers)
        if callback is not None:
            callback(l, state)
    return state
