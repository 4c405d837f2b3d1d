"""Analytic ray-traced scenes with exact ground truth.

Every pipeline stage can be exercised against these scenes without any neural
model: rendered RGB/depth/instance maps are exact, the fabricated sparse cloud
has known 3D-2D correspondence, and the oracle segmenter/box provider answer
from the instance maps.

Shading is Lambertian with one directional light plus 0.2 ambient; no shadows.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .colmap import Point3D, SparseCloud, ViewFeatures
from .errors import EmptyMaskError
from .scene import (CameraIntrinsics, CameraPose, Mask, MaskStatus, ViewImage,
                    look_at_pose, project_points, rays_for_pixels)

AMBIENT = 0.2
DIFFUSE = 0.8


@dataclass(frozen=True)
class ObjectSpec:
    shape: str  # "sphere" | "box"
    center: tuple[float, float, float]
    size: Union[float, tuple[float, float, float]]  # radius, or box half-extents
    albedo: tuple[float, float, float]
    instance_id: int

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise ValueError(f"shape must be sphere or box, got {self.shape!r}")
        if self.instance_id <= 0:
            raise ValueError("instance ids must be > 0 (0 is background)")

    @property
    def half_extents(self) -> np.ndarray:
        if self.shape == "sphere":
            return np.full(3, float(self.size))
        return np.asarray(self.size, dtype=np.float64)


@dataclass(frozen=True)
class Background:
    kind: str = "none"  # "none" | "room"
    half_size: float = 6.0
    albedo: tuple[float, float, float] = (0.6, 0.6, 0.6)


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[ObjectSpec, ...]
    intrinsics: CameraIntrinsics
    poses: tuple[CameraPose, ...]
    background: Background = Background()
    light: tuple[float, float, float] = (-0.3, 0.4, -0.85)

    def __post_init__(self):
        ids = [o.instance_id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be unique")
        light = np.asarray(self.light, dtype=np.float64)
        object.__setattr__(self, "light", tuple(light / np.linalg.norm(light)))
        for pose in self.poses:
            c = pose.camera_center
            for obj in self.objects:
                if _inside_object(obj, c):
                    raise ValueError(
                        f"camera at {c} is inside object {obj.instance_id}")


def _inside_object(obj: ObjectSpec, p) -> bool:
    d = np.asarray(p) - np.asarray(obj.center)
    if obj.shape == "sphere":
        return bool(np.linalg.norm(d) < float(obj.size))
    return bool(np.all(np.abs(d) < obj.half_extents))


@dataclass(frozen=True)
class RenderedScene:
    views: tuple[ViewImage, ...]
    instance_maps: tuple[np.ndarray, ...]  # (H, W) int per view

    def instance_map(self, view_id: int) -> np.ndarray:
        for view, imap in zip(self.views, self.instance_maps):
            if view.view_id == view_id:
                return imap
        raise KeyError(f"no view {view_id}")


def _intersect_sphere(origins, dirs, center, radius):
    oc = origins - center
    b = np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - c
    hit = disc >= 0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t0 = -b - sq
    t1 = -b + sq
    t = np.where(t0 > 1e-9, t0, t1)
    hit &= t > 1e-9
    t = np.where(hit, t, np.inf)
    tf = np.where(np.isfinite(t), t, 0.0)
    p = origins + tf[:, None] * dirs
    n = (p - center)
    norms = np.linalg.norm(n, axis=1, keepdims=True)
    n = np.divide(n, norms, out=np.zeros_like(n), where=norms > 0)
    return t, n


def _intersect_box(origins, dirs, center, half, inside_ok=False):
    """Slab intersection; returns (t, outward normal). With inside_ok the exit
    face is used when the origin is inside (room-box walls)."""
    lo = np.asarray(center) - half
    hi = np.asarray(center) + half
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    tmin = np.nanmax(np.minimum(t1, t2), axis=1)
    tmax = np.nanmin(np.maximum(t1, t2), axis=1)
    hit = (tmax >= np.maximum(tmin, 0.0)) & np.isfinite(tmax)
    t = np.where(tmin > 1e-9, tmin, np.where(inside_ok, tmax, np.inf))
    hit &= t > 1e-9
    t = np.where(hit, t, np.inf)
    p = origins + t[:, None] * dirs
    # face normal: axis of the largest |offset| / half-extent ratio
    rel = (p - np.asarray(center)) / half
    axis = np.argmax(np.abs(rel), axis=1)
    n = np.zeros_like(p)
    rows = np.arange(len(p))
    n[rows, axis] = np.sign(rel[rows, axis])
    return t, n


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Render every pose: RGB, depth (optical-axis depth), and instance map."""
    views = []
    imaps = []
    intr = spec.intrinsics
    h, w = intr.height, intr.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    light = np.asarray(spec.light)
    for view_id, pose in enumerate(spec.poses):
        origins, dirs = rays_for_pixels(uv, intr, pose)
        best_t = np.full(len(uv), np.inf)
        best_n = np.zeros((len(uv), 3))
        best_albedo = np.zeros((len(uv), 3))
        best_id = np.zeros(len(uv), dtype=np.int64)
        hits = []
        for obj in spec.objects:
            if obj.shape == "sphere":
                t, n = _intersect_sphere(origins, dirs, np.asarray(obj.center),
                                         float(obj.size))
            else:
                t, n = _intersect_box(origins, dirs, np.asarray(obj.center),
                                      obj.half_extents)
            hits.append((t, n, np.asarray(obj.albedo), obj.instance_id))
        if spec.background.kind == "room":
            t, n = _intersect_box(origins, dirs, np.zeros(3),
                                  np.full(3, spec.background.half_size),
                                  inside_ok=True)
            hits.append((t, -n, np.asarray(spec.background.albedo), 0))
        for t, n, albedo, inst in hits:
            closer = t < best_t
            best_t = np.where(closer, t, best_t)
            best_n[closer] = n[closer]
            best_albedo[closer] = albedo
            best_id = np.where(closer, inst, best_id)
        lit = AMBIENT + DIFFUSE * np.maximum(0.0, -best_n @ light)
        rgb = np.clip(best_albedo * lit[:, None], 0.0, 1.0)
        rgb[~np.isfinite(best_t)] = 0.0
        # depth along the optical axis = z of the hit point in camera frame
        p_world = origins + np.where(np.isfinite(best_t), best_t, 0.0)[:, None] * dirs
        z = (p_world @ pose.rotation.T + pose.translation)[:, 2]
        depth = np.where(np.isfinite(best_t), z, 0.0)
        views.append(ViewImage(view_id=view_id, rgb=rgb.reshape(h, w, 3),
                               intrinsics=intr, pose=pose,
                               depth=depth.reshape(h, w)))
        imaps.append(np.where(np.isfinite(best_t), best_id, 0).reshape(h, w))
    return RenderedScene(views=tuple(views), instance_maps=tuple(imaps))


# ---------------------------------------------------------------------------
# surface sampling + sparse cloud fabrication
# ---------------------------------------------------------------------------

def _sample_sphere(rng, center, radius, n):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return np.asarray(center) + radius * v


def _sample_box(rng, center, half, n, inward=False):
    areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]])
    areas = np.repeat(areas, 2)
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    pts = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = faces // 2
    sign = np.where(faces % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return np.asarray(center) + pts


def sample_surface_points(spec: SceneSpec, n_points: int, rng,
                          bg_share: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Sample points over object and background surfaces.

    Objects split (1 - bg_share) of the budget area-weighted among themselves;
    a room background gets the fixed bg_share (area weighting alone would
    starve small objects against large walls). Returns (xyz (N,3),
    instance ids (N,))."""
    surfaces = []
    for obj in spec.objects:
        if obj.shape == "sphere":
            area = 4 * np.pi * float(obj.size) ** 2
        else:
            he = obj.half_extents
            area = 8 * (he[0] * he[1] + he[1] * he[2] + he[0] * he[2])
        surfaces.append((obj, area))
    has_bg = spec.background.kind == "room"
    obj_budget = n_points * (1.0 - bg_share) if has_bg else n_points
    obj_total = sum(a for _, a in surfaces)
    xyz = []
    inst = []
    for obj, area in surfaces:
        n = max(1, int(round(obj_budget * area / obj_total)))
        if obj.shape == "sphere":
            pts = _sample_sphere(rng, obj.center, float(obj.size), n)
        else:
            pts = _sample_box(rng, obj.center, obj.half_extents, n)
        xyz.append(pts)
        inst.append(np.full(n, obj.instance_id))
    if has_bg:
        n = max(1, int(round(n_points * bg_share)))
        pts = _sample_box(rng, np.zeros(3), np.full(3, spec.background.half_size), n)
        xyz.append(pts)
        inst.append(np.zeros(n, dtype=np.int64))
    return np.concatenate(xyz), np.concatenate(inst).astype(np.int64)


def classify_points(spec: SceneSpec, xyz: np.ndarray, tol: float = 1e-3) -> np.ndarray:
    """Instance id of the object surface each point lies on (0 = background)."""
    xyz = np.atleast_2d(xyz)
    out = np.zeros(len(xyz), dtype=np.int64)
    for obj in spec.objects:
        d = xyz - np.asarray(obj.center)
        if obj.shape == "sphere":
            on = np.abs(np.linalg.norm(d, axis=1) - float(obj.size)) <= tol
        else:
            he = obj.half_extents
            inside = np.all(np.abs(d) <= he + tol, axis=1)
            on_face = np.any(np.abs(np.abs(d) - he) <= tol, axis=1)
            on = inside & on_face
        out[on] = obj.instance_id
    return out


def _nearest_hit_t(spec: SceneSpec, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distance to the closest surface along each ray (inf on miss)."""
    t_best = np.full(len(origins), np.inf)
    for obj in spec.objects:
        if obj.shape == "sphere":
            t, _ = _intersect_sphere(origins, dirs, np.asarray(obj.center),
                                     float(obj.size))
        else:
            t, _ = _intersect_box(origins, dirs, np.asarray(obj.center),
                                  obj.half_extents)
        t_best = np.minimum(t_best, t)
    if spec.background.kind == "room":
        t, _ = _intersect_box(origins, dirs, np.zeros(3),
                              np.full(3, spec.background.half_size), inside_ok=True)
        t_best = np.minimum(t_best, t)
    return t_best


def fabricate_sparse_cloud(spec: SceneSpec, rendered: RenderedScene,
                           n_points: int, noise_px: float = 0.0,
                           seed: int = 0, depth_tol: float = 1e-3) -> SparseCloud:
    """Build a COLMAP-like cloud from sampled surface points.

    Each point is projected into every view where an exact occlusion ray test
    passes (nothing closer along the camera-to-point ray than depth_tol);
    feature pixels get Gaussian noise of noise_px. Points observed in fewer
    than 2 views are dropped.
    """
    rng = np.random.default_rng(seed)
    xyz, inst = sample_surface_points(spec, n_points, rng)
    albedos = {obj.instance_id: np.asarray(obj.albedo) for obj in spec.objects}
    albedos[0] = np.asarray(spec.background.albedo)

    observations: list[list[tuple[int, float, float]]] = [[] for _ in range(len(xyz))]
    for view in rendered.views:
        uvs, z, valid = project_points(xyz, view.intrinsics, view.pose)
        center = view.pose.camera_center
        delta = xyz - center
        dist = np.linalg.norm(delta, axis=1)
        dirs = delta / np.maximum(dist, 1e-12)[:, None]
        t_hit = _nearest_hit_t(spec, np.broadcast_to(center, xyz.shape), dirs)
        visible = valid & (t_hit >= dist - depth_tol)
        for i, u, v in zip(np.nonzero(visible)[0], uvs[visible, 0], uvs[visible, 1]):
            observations[i].append((view.view_id, u, v))

    points: dict[int, Point3D] = {}
    feats_uv: dict[int, list] = {v.view_id: [] for v in rendered.views}
    feats_pid: dict[int, list] = {v.view_id: [] for v in rendered.views}
    next_id = 1
    for i, obs in enumerate(observations):
        if len(obs) < 2:
            continue
        track = []
        for view_id, u, v in obs:
            if noise_px > 0:
                u += rng.normal(scale=noise_px)
                v += rng.normal(scale=noise_px)
            intr = rendered.views[0].intrinsics
            u = float(np.clip(u, -0.5, intr.width - 0.5))
            v = float(np.clip(v, -0.5, intr.height - 0.5))
            track.append((view_id, len(feats_uv[view_id])))
            feats_uv[view_id].append((u, v))
            feats_pid[view_id].append(next_id)
        rgb = (np.clip(albedos[int(inst[i])], 0, 1) * 255).astype(np.uint8)
        points[next_id] = Point3D(next_id, xyz[i].copy(), rgb, float(noise_px),
                                  tuple(track))
        next_id += 1

    features = {
        view_id: ViewFeatures(
            view_id=view_id,
            uv=np.asarray(feats_uv[view_id], dtype=np.float64).reshape(-1, 2),
            point_ids=np.asarray(feats_pid[view_id], dtype=np.int64),
        )
        for view_id in feats_uv
    }
    return SparseCloud(points=points, features=features)


def point_instances(spec: SceneSpec, cloud: SparseCloud, tol: float = 1e-3) -> dict[int, int]:
    """Ground-truth instance id per cloud point."""
    ids = sorted(cloud.points)
    if not ids:
        return {}
    inst = classify_points(spec, cloud.xyz_array(ids), tol=tol)
    return {pid: int(i) for pid, i in zip(ids, inst)}


# ---------------------------------------------------------------------------
# oracle segmenter / box provider
# ---------------------------------------------------------------------------

def oracle_segment(instance_map: np.ndarray, points=(), box=None) -> Mask:
    """Ground-truth promptable segmentation over an instance map.

    Positive point prompts select the connected instance regions they land on;
    a box alone selects the majority instance under it. Negative prompts veto
    their whole instance. Background-only positives (no box) are an error.
    """
    points = list(points)
    if not points and box is None:
        raise ValueError("need at least one positive prompt or a box")
    h, w = instance_map.shape
    selected: set[tuple[int, int]] = set()  # (instance, region label)
    vetoed: set[int] = set()

    labels = {}

    def regions_of(inst):
        if inst not in labels:
            lab, _ = ndimage.label(instance_map == inst)
            labels[inst] = lab
        return labels[inst]

    pos_seen = False
    pos_background_only = True
    for u, v, positive in points:
        ui, vi = int(round(u)), int(round(v))
        if not (0 <= ui < w and 0 <= vi < h):
            raise ValueError(f"prompt ({u}, {v}) outside image {w}x{h}")
        inst = int(instance_map[vi, ui])
        if positive:
            pos_seen = True
            if inst > 0:
                pos_background_only = False
                selected.add((inst, int(regions_of(inst)[vi, ui])))
        else:
            if inst > 0:
                vetoed.add(inst)

    if box is not None and not selected:
        u0, v0, u1, v1 = box
        u0, v0 = max(0, int(np.floor(u0))), max(0, int(np.floor(v0)))
        u1, v1 = min(w - 1, int(np.ceil(u1))), min(h - 1, int(np.ceil(v1)))
        window = instance_map[v0:v1 + 1, u0:u1 + 1]
        vals, counts = np.unique(window[window > 0], return_counts=True)
        if len(vals):
            inst = int(vals[np.argmax(counts)])
            lab = regions_of(inst)
            for r in np.unique(lab[v0:v1 + 1, u0:u1 + 1]):
                if r > 0:
                    selected.add((inst, int(r)))

    selected = {(inst, r) for inst, r in selected if inst not in vetoed}
    if not selected:
        if pos_seen and pos_background_only and box is None:
            raise EmptyMaskError("all positive prompts lie on the background")
        raise EmptyMaskError("prompts select no object region")
    bits = np.zeros((h, w), dtype=bool)
    for inst, r in selected:
        bits |= regions_of(inst) == r
    return Mask(view_id=-1, bits=bits, score=1.0, status=MaskStatus.ACCEPTED)


def oracle_boxes(instance_map: np.ndarray, instance_id: int) -> list[tuple[tuple, float]]:
    """Tight boxes of the instance's connected regions; score = area fraction
    of the largest region. Sorted by descending score."""
    lab, n = ndimage.label(instance_map == instance_id)
    if n == 0:
        return []
    boxes = []
    areas = []
    for r in range(1, n + 1):
        ys, xs = np.nonzero(lab == r)
        boxes.append((float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max())))
        areas.append(len(xs))
    max_area = max(areas)
    scored = [(box, area / max_area) for box, area in zip(boxes, areas)]
    scored.sort(key=lambda x: -x[1])
    return scored


# ---------------------------------------------------------------------------
# camera paths & presets
# ---------------------------------------------------------------------------

def ring_poses(n: int, radius: float, target=(0.0, 0.0, 0.0), height: float = 0.0,
               elevation_arc: float = 0.0, start_angle: float = 0.0) -> tuple[CameraPose, ...]:
    """Ring of n cameras at fixed radius looking at target; optional elevation
    arc raises cameras sinusoidally by up to elevation_arc."""
    target = np.asarray(target, dtype=np.float64)
    poses = []
    for i in range(n):
        a = start_angle + 2 * np.pi * i / n
        z = height + elevation_arc * np.sin(2 * np.pi * i / n)
        pos = target + np.array([radius * np.cos(a), radius * np.sin(a), z])
        poses.append(look_at_pose(pos, target))
    return tuple(poses)


def preset_scene(name: str, n_views: int = 30, image_size: int = 128) -> SceneSpec:
    """Named scenes used by the CLI and the test-suite."""
    intr = CameraIntrinsics(fx=image_size * 1.2, fy=image_size * 1.2,
                            cx=image_size / 2 - 0.5, cy=image_size / 2 - 0.5,
                            width=image_size, height=image_size)
    if name == "sphere":
        objects = (ObjectSpec("sphere", (0, 0, 0), 0.5, (0.9, 0.2, 0.15), 1),)
        poses = ring_poses(n_views, 2.5, height=0.8)
        return SceneSpec(objects=objects, intrinsics=intr, poses=poses,
                         background=Background("room", half_size=6.0))
    if name == "two-spheres":
        objects = (
            ObjectSpec("sphere", (-0.8, 0.0, 0.0), 0.45, (0.9, 0.2, 0.15), 1),
            ObjectSpec("sphere", (0.8, 0.0, 0.0), 0.45, (0.15, 0.3, 0.9), 2),
        )
        poses = ring_poses(n_views, 3.0, height=1.0)
        return SceneSpec(objects=objects, intrinsics=intr, poses=poses,
                         background=Background("room", half_size=6.0))
    if name == "sphere-box":
        objects = (
            ObjectSpec("sphere", (0.0, 0.0, 0.3), 0.5, (0.9, 0.7, 0.1), 1),
            ObjectSpec("box", (1.2, 0.0, 0.0), (0.3, 0.3, 0.3), (0.2, 0.8, 0.3), 2),
        )
        poses = ring_poses(n_views, 3.0, height=0.9)
        return SceneSpec(objects=objects, intrinsics=intr, poses=poses,
                         background=Background("room", half_size=6.0))
    raise ValueError(f"unknown preset {name!r}; choose sphere, two-spheres, sphere-box")
