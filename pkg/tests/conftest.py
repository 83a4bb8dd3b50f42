"""Shared fixtures: cameras, poses, and small analytic scenes."""

import numpy as np
import pytest

from fieldpose.fields import Bounds, SolidSphere, SphereCluster, TexturedBox
from fieldpose.geometry import Intrinsics, Se3Pose, exp_twist, look_at, Twist


@pytest.fixture
def intrinsics():
    return Intrinsics(fx=160.0, fy=160.0, cx=79.5, cy=79.5, width=160, height=160)


@pytest.fixture
def small_intrinsics():
    return Intrinsics(fx=100.0, fy=100.0, cx=49.5, cy=49.5, width=100, height=100)


def random_pose(rng) -> Se3Pose:
    omega = rng.normal(size=3)
    omega = omega / np.linalg.norm(omega) * rng.uniform(0.1, 2.5)
    v = rng.normal(size=3)
    return exp_twist(Twist(omega, v))


@pytest.fixture
def sphere_scene():
    return SolidSphere(center=(0.0, 0.0, 0.0), radius=1.0, density=40.0)


@pytest.fixture
def box_scene():
    return TexturedBox(Bounds([-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]), density=40.0)


@pytest.fixture
def cluster_scene():
    rng = np.random.default_rng(3)
    centers = rng.uniform(-0.7, 0.7, size=(6, 3))
    radii = rng.uniform(0.25, 0.45, size=6)
    return SphereCluster(centers, radii, density=40.0)


def orbit_camera(field, azimuth_deg: float, elevation_deg: float, radius_scale=1.6) -> Se3Pose:
    """Camera on a sphere around the field bounds, looking at the center."""
    b = field.bounds
    r = radius_scale * b.diagonal
    az = np.radians(azimuth_deg)
    el = np.radians(elevation_deg)
    offset = r * np.array(
        [np.cos(el) * np.cos(az), np.sin(el), np.cos(el) * np.sin(az)]
    )
    return look_at(b.center + offset, b.center)
