"""Shared fixtures. Expensive clouds and stencil sets are session-scoped;
tests must treat them as read-only."""

import warnings

import numpy as np
import pytest

from teichpc import (
    PointCloud,
    build_charts,
    build_knn,
    detect_boundary,
    sample_quasi_uniform,
)
from teichpc.operators import build_rings
from teichpc.parameterize import _chart_stencils


def grid_cloud(m, lo=0.0, hi=1.0):
    """(m*m, 2) tensor grid on [lo, hi]^2, row-major."""
    t = np.linspace(lo, hi, m)
    xx, yy = np.meshgrid(t, t, indexing="xy")
    return np.column_stack([xx.ravel(), yy.ravel()])


def rotational_landmarks(cloud, displacement=0.12, clip=(0.08, 0.92)):
    """Four interior landmarks near the cell centers of the unit square,
    displaced along a rigid rotation field about (0.5, 0.5)."""
    pts = cloud.points[:, :2]
    on_boundary = np.zeros(cloud.n, dtype=bool)
    on_boundary[cloud.boundary] = True
    out = []
    for cx, cy in [(0.3, 0.3), (0.7, 0.3), (0.7, 0.7), (0.3, 0.7)]:
        d = np.linalg.norm(pts - (cx, cy), axis=1)
        d[on_boundary] = np.inf
        i = int(d.argmin())
        rel = pts[i] - 0.5
        t = np.clip(pts[i] + displacement * np.array([-rel[1], rel[0]]),
                    clip[0], clip[1])
        out.append((i, (float(t[0]), float(t[1]))))
    return out


@pytest.fixture(scope="session")
def unit_cloud():
    return sample_quasi_uniform(1.0, 1.0, 900, 3)


@pytest.fixture(scope="session")
def unit_setup(unit_cloud):
    """(cloud, nbrs, charts, cycle, stencils, rings) for the shared cloud."""
    nbrs = build_knn(unit_cloud, 16)
    charts = build_charts(unit_cloud, nbrs)
    cycle = detect_boundary(unit_cloud, nbrs, charts)
    sten = _chart_stencils(unit_cloud, nbrs, charts)
    rings = build_rings(charts.coords, nbrs.idx, cycle)
    return unit_cloud, nbrs, charts, cycle, sten, rings


@pytest.fixture(scope="session")
def grid21():
    """21x21 unit-square grid cloud (boundary detectable exactly)."""
    return PointCloud(points=grid_cloud(21))


@pytest.fixture(autouse=True)
def _quiet_expected_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        yield
