"""Scene edits: object removal via inverted-mask background training, and
add-on composition of a segmented object field into another field with a rigid
transform, uniform scale, and an affine color map."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .field import VoxelField
from .scene import CameraPose, Mask, MaskStatus, look_at_pose


@dataclass(frozen=True)
class RigidTransform:
    """Object-to-world map x_world = scale * R @ x_obj + translation, plus an
    affine RGB map applied to the object's colors (clamped to [0, 1])."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0
    color_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    color_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
            raise ValueError("rotation must be orthonormal with det +1")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "color_matrix",
                           np.asarray(self.color_matrix, dtype=np.float64))
        object.__setattr__(self, "color_offset",
                           np.asarray(self.color_offset, dtype=np.float64).reshape(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return self.scale * (np.atleast_2d(points) @ self.rotation.T) + self.translation

    def invert(self, points: np.ndarray) -> np.ndarray:
        return ((np.atleast_2d(points) - self.translation) @ self.rotation) / self.scale

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float, translation=(0, 0, 0),
                        scale: float = 1.0, color_matrix=None, color_offset=None):
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        k = np.array([[0, -axis[2], axis[1]],
                      [axis[2], 0, -axis[0]],
                      [-axis[1], axis[0], 0]])
        r = np.eye(3) + np.sin(angle_rad) * k + (1 - np.cos(angle_rad)) * (k @ k)
        return cls(rotation=r, translation=np.asarray(translation), scale=scale,
                   color_matrix=np.eye(3) if color_matrix is None else color_matrix,
                   color_offset=np.zeros(3) if color_offset is None else color_offset)


def removal_masks(masks: dict[int, Mask]) -> dict[int, Mask]:
    """Per-view complement masks: training on these reconstructs the
    background, with object-occluded areas inferred from other views."""
    out = {}
    for view_id, mask in masks.items():
        out[view_id] = replace(mask, bits=~mask.bits)
    return out


class CompositeField:
    """Virtual field merging a background field with a transformed object
    field: densities add, colors blend weighted by density."""

    def __init__(self, background: VoxelField, obj: VoxelField,
                 xform: RigidTransform):
        self.background = background
        self.object = obj
        self.xform = xform
        obj_corners = _aabb_corners(obj.aabb_min, obj.aabb_max)
        world_corners = xform.apply(obj_corners)
        self.aabb_min = np.minimum(background.aabb_min, world_corners.min(axis=0))
        self.aabb_max = np.maximum(background.aabb_max, world_corners.max(axis=0))
        self.dtype = background.dtype

    @property
    def aabb(self):
        return self.aabb_min, self.aabb_max

    def query(self, points: torch.Tensor, directions=None):
        sigma_bg, rgb_bg = self.background.query(points)
        pts_np = points.detach().numpy()
        obj_pts = torch.as_tensor(self.xform.invert(pts_np), dtype=points.dtype)
        sigma_obj, rgb_obj = self.object.query(obj_pts)
        m = torch.as_tensor(self.xform.color_matrix, dtype=points.dtype)
        b = torch.as_tensor(self.xform.color_offset, dtype=points.dtype)
        rgb_obj = torch.clamp(rgb_obj @ m.T + b, 0.0, 1.0)
        sigma = sigma_bg + sigma_obj
        weight = sigma_bg + sigma_obj
        rgb = torch.where(
            weight[:, None] > 1e-12,
            (sigma_bg[:, None] * rgb_bg + sigma_obj[:, None] * rgb_obj)
            / torch.clamp(weight[:, None], min=1e-12),
            rgb_bg,
        )
        return sigma, rgb


def _aabb_corners(lo, hi) -> np.ndarray:
    lo, hi = np.asarray(lo), np.asarray(hi)
    return np.array([[x, y, z] for x in (lo[0], hi[0])
                     for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])


def compose(background: VoxelField, obj: VoxelField,
            xform: RigidTransform = RigidTransform()) -> CompositeField:
    return CompositeField(background, obj, xform)


# ---------------------------------------------------------------------------
# camera paths
# ---------------------------------------------------------------------------

def camera_path(kind: str, **params) -> list[CameraPose]:
    """Deterministic pose sequences for turntable/walkthrough renders.

    orbit: n, radius, target=(0,0,0), height=0, start_angle=0
    line: keypoints (list of positions), n, target
    """
    if kind == "orbit":
        n = int(params["n"])
        radius = float(params["radius"])
        target = np.asarray(params.get("target", (0.0, 0.0, 0.0)), dtype=np.float64)
        height = float(params.get("height", 0.0))
        start = float(params.get("start_angle", 0.0))
        poses = []
        for i in range(n):
            a = start + 2 * np.pi * i / n
            pos = target + np.array([radius * np.cos(a), radius * np.sin(a), height])
            poses.append(look_at_pose(pos, target))
        return poses
    if kind == "line":
        keypoints = np.asarray(params["keypoints"], dtype=np.float64)
        n = int(params["n"])
        target = np.asarray(params["target"], dtype=np.float64)
        if len(keypoints) < 2:
            raise ValueError("line path needs >= 2 keypoints")
        # arc-length parameterized piecewise-linear interpolation
        seg = np.linalg.norm(np.diff(keypoints, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        ts = np.linspace(0.0, cum[-1], n)
        poses = []
        for t in ts:
            i = min(np.searchsorted(cum, t, side="right") - 1, len(seg) - 1)
            f = 0.0 if seg[i] == 0 else (t - cum[i]) / seg[i]
            pos = keypoints[i] * (1 - f) + keypoints[i + 1] * f
            poses.append(look_at_pose(pos, target))
        return poses
    raise ValueError(f"unknown camera path kind {kind!r}")


# ---------------------------------------------------------------------------
# edit scripts
# ---------------------------------------------------------------------------

def load_edit_script(path) -> dict:
    """Edit script JSON: {background_ckpt, object_ckpt, rotation (axis-angle:
    {axis, angle_deg}), translation, scale, color_map: {matrix, offset}}."""
    path = Path(path)
    script = json.loads(path.read_text())
    for key in ("background_ckpt", "object_ckpt"):
        if key not in script:
            raise ValueError(f"edit script missing {key!r}")
    return script


def xform_from_script(script: dict) -> RigidTransform:
    rot = script.get("rotation", {"axis": [0, 0, 1], "angle_deg": 0.0})
    cmap = script.get("color_map", {})
    return RigidTransform.from_axis_angle(
        axis=rot.get("axis", [0, 0, 1]),
        angle_rad=np.deg2rad(rot.get("angle_deg", 0.0)),
        translation=script.get("translation", (0, 0, 0)),
        scale=float(script.get("scale", 1.0)),
        color_matrix=np.asarray(cmap["matrix"]) if "matrix" in cmap else None,
        color_offset=np.asarray(cmap["offset"]) if "offset" in cmap else None,
    )
