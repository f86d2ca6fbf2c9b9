"""Pinhole camera model and plane-induced pixel mapping.

Conventions used throughout the package:

* pixel centres sit at integer coordinates, ``(x, y)`` with ``x`` along
  image columns and ``y`` along rows;
* ``X_cam = R @ X_world + t`` (world to camera), ``pixel = K @ X_cam / z``;
* depth is the camera-frame ``z`` coordinate, so the back-projected ray
  ``K^-1 [x, y, 1]`` has unit ``z`` and ``point = depth * ray``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RAY_EPS = 1e-9
FRONTO_NORMAL = np.array([0.0, 0.0, -1.0])


class GeometryError(ValueError):
    pass


class DegenerateRay(GeometryError):
    """The viewing ray is (numerically) parallel to the plane."""


class BehindCamera(GeometryError):
    """The mapped point lies on or behind the target camera plane."""


class InvalidRange(GeometryError):
    pass


@dataclass(frozen=True)
class PinholeCamera:
    intrinsics: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    view_id: int = 0
    _kinv: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64).reshape(3, 3)
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        self.validate()
        object.__setattr__(self, "_kinv", np.linalg.inv(K))

    def validate(self) -> None:
        K, R = self.intrinsics, self.rotation
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(R))
                and np.all(np.isfinite(self.translation))):
            raise GeometryError("camera parameters must be finite")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise GeometryError("rotation must have determinant +1")
        if K[0, 0] <= 0 or K[1, 1] <= 0 or K[2, 2] <= 0:
            raise GeometryError("intrinsics need positive focal entries")
        if K[1, 0] != 0 or K[2, 0] != 0 or K[2, 1] != 0:
            raise GeometryError("intrinsics must be upper triangular")

    @property
    def kinv(self) -> np.ndarray:
        return self._kinv

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.rotation.T @ self.translation

    @classmethod
    def rectified(cls, focal: float, principal: tuple[float, float],
                  position: tuple[float, float] = (0.0, 0.0),
                  baseline: float = 1.0, view_id: int = 0) -> "PinholeCamera":
        """Camera of a rectified array: identity rotation, centre in the z=0 plane.

        ``position`` is the grid position in baseline units, so the centre is
        ``(baseline * px, baseline * py, 0)``.
        """
        K = np.array([[focal, 0.0, principal[0]],
                      [0.0, focal, principal[1]],
                      [0.0, 0.0, 1.0]])
        c = np.array([baseline * position[0], baseline * position[1], 0.0])
        return cls(K, np.eye(3), -c, view_id)

    @classmethod
    def from_projection(cls, P: np.ndarray, view_id: int = 0) -> "PinholeCamera":
        """Decompose a 3x4 projection matrix ``P = K [R | t]``."""
        from scipy.linalg import rq

        P = np.asarray(P, dtype=np.float64).reshape(3, 4)
        M = P[:, :3]
        if not np.all(np.isfinite(P)) or abs(np.linalg.det(M)) <= 1e-12 * np.linalg.norm(M) ** 3:
            raise GeometryError("projection matrix has a singular left 3x3 block")
        K, R = rq(P[:, :3])
        # make the diagonal of K positive
        S = np.diag(np.where(np.diag(K) < 0, -1.0, 1.0))
        K, R = K @ S, S @ R
        t = np.linalg.solve(K, P[:, 3])
        if np.linalg.det(R) < 0:
            R, t = -R, -t
        K = K / K[2, 2]
        K[np.abs(K) < 1e-12] = 0.0
        K[1, 0] = K[2, 0] = K[2, 1] = 0.0
        # re-orthonormalise to kill rounding from the decomposition
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        return cls(K, R, t, view_id)

    def ray(self, pixel) -> np.ndarray:
        """Camera-frame ray through ``pixel`` with unit z component."""
        x, y = pixel
        return self._kinv @ np.array([x, y, 1.0])

    def pixel_rays(self, width: int, height: int) -> np.ndarray:
        """Rays for every pixel centre, shape (height, width, 3)."""
        xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                             np.arange(height, dtype=np.float64))
        hom = np.stack([xs, ys, np.ones_like(xs)], axis=-1)
        return hom @ self._kinv.T

    def to_camera(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.rotation.T + self.translation

    def to_world(self, X_cam: np.ndarray) -> np.ndarray:
        return (np.asarray(X_cam, dtype=np.float64) - self.translation) @ self.rotation


@dataclass(frozen=True)
class DepthRange:
    d_min: float
    d_max: float

    def __post_init__(self):
        if not (np.isfinite(self.d_min) and np.isfinite(self.d_max)):
            raise InvalidRange("depth range must be finite")
        if not 0 < self.d_min < self.d_max:
            raise InvalidRange(f"need 0 < d_min < d_max, got [{self.d_min}, {self.d_max}]")

    def inverse_step(self, levels: int) -> float:
        """Spacing of a ``levels``-point uniform grid in inverse depth."""
        if levels < 2:
            raise InvalidRange("need at least two quantization levels")
        return (1.0 / self.d_min - 1.0 / self.d_max) / (levels - 1)

    def contains(self, depth: float) -> bool:
        return self.d_min <= depth <= self.d_max


@dataclass(frozen=True)
class SuperpixelPlane:
    """Plane through the centroid ray at ``depth`` with camera-frame ``normal``."""

    depth: float
    normal: np.ndarray = field(default_factory=lambda: FRONTO_NORMAL.copy())

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        object.__setattr__(self, "normal", n)

    def is_valid(self, cam: PinholeCamera, centroid, depth_range: DepthRange | None = None) -> bool:
        n = self.normal
        if abs(np.linalg.norm(n) - 1.0) > 1e-9:
            return False
        if np.dot(n, cam.ray(centroid)) >= 0:
            return False
        if depth_range is not None and not depth_range.contains(self.depth):
            return False
        return self.depth > 0


def project(cam: PinholeCamera, X: np.ndarray) -> tuple[np.ndarray, float]:
    """Project a world point; returns ``(pixel, depth)``."""
    Xc = cam.to_camera(X)
    uvw = cam.intrinsics @ Xc
    return uvw[:2] / uvw[2], float(Xc[2])


def backproject(cam: PinholeCamera, pixel, depth: float) -> np.ndarray:
    """World point seen at ``pixel`` with camera-frame depth ``depth``."""
    return cam.to_world(depth * cam.ray(pixel))


def plane_depth_at(cam: PinholeCamera, plane: SuperpixelPlane, centroid, query_pixel) -> float:
    """Depth at ``query_pixel`` of the plane anchored at ``centroid``.

    Raises DegenerateRay when the query ray is parallel to the plane.
    """
    anchor = plane.depth * cam.ray(centroid)
    r = cam.ray(query_pixel)
    den = float(np.dot(plane.normal, r))
    if abs(den) <= RAY_EPS:
        raise DegenerateRay(f"ray through {tuple(query_pixel)} is parallel to the plane")
    return float(np.dot(plane.normal, anchor)) / den


def map_pixel_via_plane(ref: PinholeCamera, plane: SuperpixelPlane, centroid, pixel,
                        target: PinholeCamera) -> tuple[np.ndarray, float]:
    """Transfer ``pixel`` of ``ref`` into ``target`` through the superpixel plane."""
    z = plane_depth_at(ref, plane, centroid, pixel)
    if z <= 0:
        raise BehindCamera("plane point lies behind the reference camera")
    X = backproject(ref, pixel, z)
    q, zt = project(target, X)
    if zt <= 0:
        raise BehindCamera("plane point lies behind the target camera")
    return q, zt


def relative_pose(ref: PinholeCamera, target: PinholeCamera) -> tuple[np.ndarray, np.ndarray]:
    """``(R, t)`` taking ref-camera coordinates to target-camera coordinates."""
    R = target.rotation @ ref.rotation.T
    t = target.translation - R @ ref.translation
    return R, t


def sample_inverse_depths(depth_range: DepthRange, levels: int,
                          rng: np.random.Generator | None = None) -> np.ndarray:
    """Jittered depth hypotheses, uniform in inverse depth.

    Returns ``levels`` depths ordered by increasing inverse depth (far to
    near). Each grid point gets an independent jitter drawn from
    ``[0, step)``; ``rng=None`` disables jitter.
    """
    if levels < 2:
        raise InvalidRange("need at least two quantization levels")
    lo, hi = 1.0 / depth_range.d_max, 1.0 / depth_range.d_min
    step = (hi - lo) / (levels - 1)
    inv = lo + step * np.arange(levels, dtype=np.float64)
    inv[-1] = hi
    if rng is not None:
        inv = inv + step * rng.random(levels)
    inv = np.minimum(inv, hi)
    return 1.0 / inv


def superpixel_rng(seed: int, view: int, sp_id: int) -> np.random.Generator:
    """Independent random stream keyed only on ``(seed, view, sp_id)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(view), int(sp_id)]))
