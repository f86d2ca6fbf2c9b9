import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lfdepth import fixtures
from lfdepth.geometry import DepthRange, PinholeCamera
from lfdepth.stack import PlaneMap, ViewStack
from lfdepth.superpixel import SlicParams, slic_segment

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def build_stack(spec, size=8):
    mvs, gt = fixtures.render_scene(spec)
    grids = [slic_segment(im, SlicParams(size)) for im in mvs.images]
    return mvs, gt, grids, ViewStack.build(mvs, grids)


def gt_planes(stack, gt, normal=None):
    """Planes whose centroid depth comes from the ground-truth raster."""
    V, n = stack.n_views, stack.n_sp
    depth = np.zeros((V, n))
    for v in range(V):
        for s in range(n):
            cx, cy = stack.centroids[v, s]
            depth[v, s] = gt[v][int(round(cy)), int(round(cx))]
    if normal is None:
        return PlaneMap.fronto(stack, depth)
    nrm = np.broadcast_to(normal, (V, n, 3)).copy()
    return PlaneMap.from_planes(stack, depth, nrm)


@pytest.fixture(scope="session")
def wall_scene():
    """Three rectified views of one textured fronto-parallel wall at depth 6."""
    spec = fixtures.fronto_wall(width=96, height=64, depth=6.0, focal=100.0, baseline=0.2,
                                views=3, depth_range=(4.0, 10.0))
    return build_stack(spec)


@pytest.fixture(scope="session")
def slanted_small():
    spec = fixtures.slanted_plane(width=128, height=96, focal=128.0, baseline=0.3)
    return build_stack(spec)


@pytest.fixture
def identity_cam():
    return PinholeCamera(np.eye(3), np.eye(3), np.zeros(3))


@pytest.fixture
def unit_range():
    return DepthRange(1.0, 10.0)
