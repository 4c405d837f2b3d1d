import numpy as np
import pytest

from segnerf.scene import CameraIntrinsics
from segnerf.synthetic import (Background, ObjectSpec, SceneSpec,
                               fabricate_sparse_cloud, render_scene, ring_poses)


def small_intrinsics(size=96):
    return CameraIntrinsics(fx=size * 1.2, fy=size * 1.2, cx=size / 2 - 0.5,
                            cy=size / 2 - 0.5, width=size, height=size)


@pytest.fixture(scope="session")
def sphere_scene():
    """Single red sphere in a room, 12-view ring."""
    spec = SceneSpec(
        objects=(ObjectSpec("sphere", (0, 0, 0), 0.5, (0.9, 0.2, 0.15), 1),),
        intrinsics=small_intrinsics(),
        poses=ring_poses(12, 2.5, height=0.8),
        background=Background("room", half_size=6.0),
    )
    return spec, render_scene(spec)


@pytest.fixture(scope="session")
def sphere_cloud(sphere_scene):
    spec, rendered = sphere_scene
    return fabricate_sparse_cloud(spec, rendered, n_points=3000, noise_px=0.0,
                                  seed=1)


@pytest.fixture(scope="session")
def two_object_scene():
    """Two well-separated spheres in a room, 30-view ring."""
    spec = SceneSpec(
        objects=(
            ObjectSpec("sphere", (-0.8, 0.0, 0.0), 0.45, (0.9, 0.2, 0.15), 1),
            ObjectSpec("sphere", (0.8, 0.0, 0.0), 0.45, (0.15, 0.3, 0.9), 2),
        ),
        intrinsics=small_intrinsics(),
        poses=ring_poses(30, 3.0, height=1.0),
        background=Background("room", half_size=6.0),
    )
    return spec, render_scene(spec)
