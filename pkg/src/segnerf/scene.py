"""Core geometric types and pinhole camera math.

Conventions:
- World-to-camera pose: x_cam = R @ x_world + t, camera looks along +z.
- Pixels (u, v) from the top-left corner, u rightward, v downward, pixel
  centers at integer coordinates (COLMAP-style). The image rectangle spans
  [-0.5, W-0.5] x [-0.5, H-0.5].
- Colors are linear floats in [0, 1]; 8-bit conversion happens at I/O
  boundaries only.

All types are immutable after construction and safe to share across workers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(f"principal point ({self.cx}, {self.cy}) outside image "
                             f"{self.width}x{self.height}")


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray  # (3, 3), orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation determinant is not +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray  # (3,)
    direction: np.ndarray  # (3,), unit norm
    t_near: float
    t_far: float

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError(f"direction must be unit norm, got |d|={np.linalg.norm(d)}")
        if not (0 <= self.t_near < self.t_far):
            raise ValueError(f"need 0 <= t_near < t_far, got [{self.t_near}, {self.t_far}]")
        o.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class ViewImage:
    view_id: int
    rgb: np.ndarray  # (H, W, 3) floats in [0, 1]
    intrinsics: CameraIntrinsics
    pose: CameraPose
    depth: Optional[np.ndarray] = None  # (H, W), scene units, 0 = missing

    def __post_init__(self):
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.rgb.shape != (h, w, 3):
            raise ValueError(f"rgb shape {self.rgb.shape} does not match intrinsics {h}x{w}")
        if self.depth is not None and self.depth.shape != (h, w):
            raise ValueError(f"depth shape {self.depth.shape} does not match intrinsics {h}x{w}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.intrinsics.height, self.intrinsics.width


class MaskStatus(enum.Enum):
    ACCEPTED = "accepted"
    DISCARDED_OCCLUDED = "discarded_occluded"
    UNPROCESSED = "unprocessed"


@dataclass(frozen=True)
class Mask:
    view_id: int
    bits: np.ndarray  # (H, W) bool
    score: float = 1.0
    status: MaskStatus = MaskStatus.UNPROCESSED

    def __post_init__(self):
        if self.bits.dtype != np.bool_:
            object.__setattr__(self, "bits", self.bits.astype(bool))
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0,1], got {self.score}")

    @property
    def area(self) -> int:
        return int(self.bits.sum())


def project_point(point, intrinsics: CameraIntrinsics, pose: CameraPose):
    """Pinhole projection of one world point.

    Returns (u, v, z) or None when the point is behind the camera or outside
    the image rectangle. z is depth along the optical axis, not ray length.
    """
    p_cam = pose.rotation @ np.asarray(point, dtype=np.float64) + pose.translation
    z = p_cam[2]
    if z <= 0:
        return None
    u = intrinsics.fx * p_cam[0] / z + intrinsics.cx
    v = intrinsics.fy * p_cam[1] / z + intrinsics.cy
    if not (-0.5 <= u <= intrinsics.width - 0.5 and -0.5 <= v <= intrinsics.height - 0.5):
        return None
    return float(u), float(v), float(z)


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose):
    """Vectorized projection of (N, 3) world points.

    Returns (uv: (N, 2), z: (N,), valid: (N,) bool); uv/z are undefined where
    valid is False.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    p_cam = pts @ pose.rotation.T + pose.translation
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intrinsics.fx * p_cam[:, 0] / z + intrinsics.cx
        v = intrinsics.fy * p_cam[:, 1] / z + intrinsics.cy
    valid = (
        (z > 0)
        & (u >= -0.5) & (u <= intrinsics.width - 0.5)
        & (v >= -0.5) & (v <= intrinsics.height - 0.5)
    )
    return np.stack([u, v], axis=1), z, valid


def ray_for_pixel(u: float, v: float, view: ViewImage, t_near: float, t_far: float) -> Ray:
    """Back-project a pixel to a world-space ray through the camera center."""
    intr, pose = view.intrinsics, view.pose
    if not (-0.5 <= u <= intr.width - 0.5 and -0.5 <= v <= intr.height - 0.5):
        raise ValueError(f"pixel ({u}, {v}) outside image {intr.width}x{intr.height}")
    d_cam = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    d_world = pose.rotation.T @ d_cam
    d_world = d_world / np.linalg.norm(d_world)
    return Ray(origin=pose.camera_center, direction=d_world, t_near=t_near, t_far=t_far)


def rays_for_pixels(uv: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose):
    """Vectorized back-projection; returns (origins (N,3), unit directions (N,3))."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    d_cam = np.stack(
        [
            (uv[:, 0] - intrinsics.cx) / intrinsics.fx,
            (uv[:, 1] - intrinsics.cy) / intrinsics.fy,
            np.ones(len(uv)),
        ],
        axis=1,
    )
    d_world = d_cam @ pose.rotation
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(pose.camera_center, d_world.shape).copy()
    return origins, d_world


def look_at_pose(position, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """World-to-camera pose for a camera at `position` looking at `target`.

    +z forward, +x right, +y down (image-down), consistent with the pixel
    convention above.
    """
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise ValueError("camera position coincides with target")
    forward /= n
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # forward parallel to up; pick an arbitrary orthogonal axis
        up = np.array([1.0, 0.0, 0.0]) if abs(forward[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=0)
    translation = -rotation @ position
    return CameraPose(rotation=rotation, translation=translation)
