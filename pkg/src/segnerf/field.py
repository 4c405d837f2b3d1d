"""Voxel-grid radiance field: emissive-absorptive volume rendering, RGB +
depth losses with exact grid gradients, object AABB estimation, ray pruning,
training, and novel-view rendering.

The field holds dual grids over an axis-aligned box: pre-activation density
(softplus) and pre-activation color (sigmoid), trilinearly interpolated.
Color is view-independent; the query interface still accepts directions so a
view-dependent field can be dropped in later.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F

from .colmap import SparseCloud
from .errors import DegenerateBoxError, DivergenceError, IntegrityError
from .scene import (CameraIntrinsics, CameraPose, Mask, MaskStatus, Ray,
                    ViewImage, project_points, rays_for_pixels)

EPS_OPACITY = 1e-10
DEFAULT_NEAR, DEFAULT_FAR = 0.05, 100.0


# ---------------------------------------------------------------------------
# field
# ---------------------------------------------------------------------------

class VoxelField:
    """Dual density/color voxel grids over an AABB."""

    def __init__(self, aabb_min, aabb_max, resolution=(64, 64, 64),
                 dtype=torch.float32, density_init: float = -5.0,
                 color_init: float = 0.0):
        self.aabb_min = np.asarray(aabb_min, dtype=np.float64)
        self.aabb_max = np.asarray(aabb_max, dtype=np.float64)
        if not np.all(self.aabb_min < self.aabb_max):
            raise DegenerateBoxError(f"aabb min {self.aabb_min} not strictly below "
                                     f"max {self.aabb_max}")
        self.resolution = tuple(int(r) for r in resolution)
        nx, ny, nz = self.resolution
        self.density = torch.full((nx, ny, nz), density_init, dtype=dtype)
        self.color = torch.full((nx, ny, nz, 3), color_init, dtype=dtype)

    @property
    def dtype(self):
        return self.density.dtype

    @property
    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        return self.aabb_min, self.aabb_max

    def clone(self) -> "VoxelField":
        out = VoxelField(self.aabb_min, self.aabb_max, self.resolution,
                         dtype=self.dtype)
        out.density = self.density.detach().clone()
        out.color = self.color.detach().clone()
        return out

    def finite(self) -> bool:
        return bool(torch.isfinite(self.density).all()
                    and torch.isfinite(self.color).all())

    def _interp(self, grid: torch.Tensor, points: torch.Tensor) -> torch.Tensor:
        """Trilinear interpolation at world points (N, 3); grid-border values
        are clamped (no extrapolation)."""
        lo = torch.as_tensor(self.aabb_min, dtype=points.dtype)
        hi = torch.as_tensor(self.aabb_max, dtype=points.dtype)
        res = torch.tensor(self.resolution, dtype=points.dtype)
        g = (points - lo) / (hi - lo) * (res - 1)
        g = torch.clamp(g, torch.zeros(3, dtype=points.dtype), res - 1)
        i0 = torch.clamp(g.floor().long(), torch.zeros(3, dtype=torch.long),
                         (res - 2).long().clamp(min=0))
        f = (g - i0).clamp(0.0, 1.0)
        nx, ny, nz = self.resolution
        flat = grid.reshape(nx * ny * nz, -1)
        ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
        fx, fy, fz = f[:, 0:1], f[:, 1:2], f[:, 2:3]
        sx = 1 if nx > 1 else 0
        sy = 1 if ny > 1 else 0
        sz = 1 if nz > 1 else 0

        def gather(dx, dy, dz):
            idx = ((ix + dx * sx) * ny + (iy + dy * sy)) * nz + (iz + dz * sz)
            return flat[idx]

        c000, c100 = gather(0, 0, 0), gather(1, 0, 0)
        c010, c110 = gather(0, 1, 0), gather(1, 1, 0)
        c001, c101 = gather(0, 0, 1), gather(1, 0, 1)
        c011, c111 = gather(0, 1, 1), gather(1, 1, 1)
        c00 = c000 * (1 - fx) + c100 * fx
        c10 = c010 * (1 - fx) + c110 * fx
        c01 = c001 * (1 - fx) + c101 * fx
        c11 = c011 * (1 - fx) + c111 * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return c0 * (1 - fz) + c1 * fz

    def query(self, points: torch.Tensor, directions: Optional[torch.Tensor] = None
              ) -> tuple[torch.Tensor, torch.Tensor]:
        """Activated (sigma (N,), rgb (N, 3)) at world points. Points outside
        the AABB contribute zero density. Directions accepted, unused."""
        sigma = F.softplus(self._interp(self.density.unsqueeze(-1), points))[:, 0]
        rgb = torch.sigmoid(self._interp(self.color, points))
        lo = torch.as_tensor(self.aabb_min, dtype=points.dtype)
        hi = torch.as_tensor(self.aabb_max, dtype=points.dtype)
        inside = ((points >= lo) & (points <= hi)).all(dim=1)
        sigma = sigma * inside.to(sigma.dtype)
        return sigma, rgb


# ---------------------------------------------------------------------------
# ray batches + pruning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RayBatch:
    """Parallel ray arrays; gt_depth is NaN where absent."""

    origins: np.ndarray  # (N, 3)
    directions: np.ndarray  # (N, 3), unit
    t_near: np.ndarray  # (N,)
    t_far: np.ndarray  # (N,)
    gt_color: np.ndarray  # (N, 3)
    gt_depth: np.ndarray  # (N,), NaN = no depth target
    weight: np.ndarray  # (N,)

    def __post_init__(self):
        n = len(self.origins)
        for name in ("directions", "t_near", "t_far", "gt_color", "gt_depth",
                     "weight"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length mismatch: {len(getattr(self, name))} != {n}")
        present = ~np.isnan(self.gt_depth)
        if np.any(self.gt_depth[present] <= 0):
            raise ValueError("depth targets must be positive")

    def __len__(self) -> int:
        return len(self.origins)

    @classmethod
    def from_rays(cls, rays: Sequence[Ray], gt_color, gt_depth=None, weight=None):
        n = len(rays)
        gt_depth = np.full(n, np.nan) if gt_depth is None else np.asarray(gt_depth, float)
        weight = np.ones(n) if weight is None else np.asarray(weight, float)
        return cls(origins=np.array([r.origin for r in rays]),
                   directions=np.array([r.direction for r in rays]),
                   t_near=np.array([r.t_near for r in rays]),
                   t_far=np.array([r.t_far for r in rays]),
                   gt_color=np.asarray(gt_color, float).reshape(n, 3),
                   gt_depth=gt_depth, weight=weight)

    def take(self, idx) -> "RayBatch":
        return RayBatch(self.origins[idx], self.directions[idx], self.t_near[idx],
                        self.t_far[idx], self.gt_color[idx], self.gt_depth[idx],
                        self.weight[idx])


def ray_aabb_intersect(origins: np.ndarray, directions: np.ndarray,
                       aabb_min, aabb_max, t_near=None, t_far=None):
    """Slab test. Returns (hit (N,) bool, t_entry (N,), t_exit (N,)) with the
    interval clipped to [t_near, t_far] when given."""
    origins = np.atleast_2d(origins)
    directions = np.atleast_2d(directions)
    lo = np.asarray(aabb_min, dtype=np.float64)
    hi = np.asarray(aabb_max, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t1 = (lo - origins) * inv
        t2 = (hi - origins) * inv
    # rays parallel to an axis: inf*0 gives nan; a nan slab means the origin
    # coordinate decides, handled by replacing nan with +-inf appropriately
    tmin_ax = np.minimum(t1, t2)
    tmax_ax = np.maximum(t1, t2)
    parallel = directions == 0.0
    inside_slab = (origins >= lo) & (origins <= hi)
    tmin_ax = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), tmin_ax)
    tmax_ax = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), tmax_ax)
    entry = tmin_ax.max(axis=1)
    exit_ = tmax_ax.min(axis=1)
    if t_near is not None:
        entry = np.maximum(entry, np.asarray(t_near, dtype=np.float64))
    else:
        entry = np.maximum(entry, 0.0)
    if t_far is not None:
        exit_ = np.minimum(exit_, np.asarray(t_far, dtype=np.float64))
    hit = entry < exit_
    return hit, entry, exit_


def prune_rays(batch: RayBatch, aabb: tuple[np.ndarray, np.ndarray]
               ) -> tuple[RayBatch, np.ndarray]:
    """Keep only rays intersecting the AABB; t_near/t_far clipped to the box
    interval. Also returns the kept-ray index into the input batch."""
    hit, entry, exit_ = ray_aabb_intersect(batch.origins, batch.directions,
                                           aabb[0], aabb[1],
                                           batch.t_near, batch.t_far)
    idx = np.nonzero(hit)[0]
    kept = RayBatch(batch.origins[idx], batch.directions[idx], entry[idx],
                    exit_[idx], batch.gt_color[idx], batch.gt_depth[idx],
                    batch.weight[idx])
    return kept, idx


def object_aabb(object_cloud: SparseCloud, outlier_trim: float = 0.01,
                pad: float = 0.10) -> tuple[np.ndarray, np.ndarray]:
    """Percentile-trimmed box around the object points, padded per side."""
    xyz = object_cloud.xyz_array()
    if len(xyz) < 2:
        raise IntegrityError(f"aabb needs >= 2 points, got {len(xyz)}")
    lo = np.percentile(xyz, 100 * outlier_trim, axis=0)
    hi = np.percentile(xyz, 100 * (1 - outlier_trim), axis=0)
    extent = hi - lo
    if np.any(extent <= 0):
        raise DegenerateBoxError(f"zero extent on axis {int(np.argmin(extent))}")
    return lo - pad * extent, hi + pad * extent


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def render_rays(field_like, origins, directions, t_near, t_far,
                n_samples: int, jitter: Optional[np.ndarray] = None,
                dtype=None):
    """Quadrature rendering of a batch of rays against anything exposing
    .query(points) -> (sigma, rgb).

    jitter: (N, S) stratified offsets in [0, 1); None renders at midpoints.
    Returns torch tensors (color (N,3), depth (N,), opacity (N,)).
    """
    if dtype is None:
        dtype = getattr(field_like, "dtype", torch.float32)
    o = torch.as_tensor(np.atleast_2d(origins), dtype=dtype)
    d = torch.as_tensor(np.atleast_2d(directions), dtype=dtype)
    tn = torch.as_tensor(np.atleast_1d(t_near), dtype=dtype)
    tf = torch.as_tensor(np.atleast_1d(t_far), dtype=dtype)
    n = len(o)
    s = n_samples
    if jitter is None:
        offsets = torch.full((n, s), 0.5, dtype=dtype)
    else:
        offsets = torch.as_tensor(jitter, dtype=dtype)
    span = (tf - tn)[:, None]
    delta = span / s
    ts = tn[:, None] + (torch.arange(s, dtype=dtype)[None, :] + offsets) * delta
    points = (o[:, None, :] + ts[..., None] * d[:, None, :]).reshape(n * s, 3)
    sigma, rgb = field_like.query(points)
    sigma = sigma.reshape(n, s)
    rgb = rgb.reshape(n, s, 3)
    alpha = 1.0 - torch.exp(-sigma * delta)
    trans = torch.cumprod(
        torch.cat([torch.ones(n, 1, dtype=dtype), 1.0 - alpha + 1e-12], dim=1),
        dim=1)[:, :-1]
    wgt = trans * alpha
    color = (wgt[..., None] * rgb).sum(dim=1)
    opacity = wgt.sum(dim=1)
    depth = (wgt * ts).sum(dim=1) / torch.clamp(opacity, min=EPS_OPACITY)
    return color, depth, opacity


def render_ray(field_like, ray: Ray, n_samples: int):
    """Single-ray convenience wrapper; ray must intersect the field's AABB."""
    aabb = getattr(field_like, "aabb", None)
    tn, tf = ray.t_near, ray.t_far
    if aabb is not None:
        hit, entry, exit_ = ray_aabb_intersect(ray.origin, ray.direction,
                                               aabb[0], aabb[1],
                                               [ray.t_near], [ray.t_far])
        if not hit[0]:
            raise ValueError("ray does not intersect the field AABB")
        tn, tf = float(entry[0]), float(exit_[0])
    color, depth, opacity = render_rays(field_like, ray.origin[None],
                                        ray.direction[None], [tn], [tf],
                                        n_samples)
    return (color[0].detach().numpy(), float(depth[0]), float(opacity[0]))


@dataclass(frozen=True)
class TrainConfig:
    lambda_d: float = 0.1
    iters: int = 3000
    batch_rays: int = 4096
    lr_density: float = 0.1
    lr_color: float = 0.1
    samples_per_ray: int = 128
    near: Union[float, str] = "auto"
    far: Union[float, str] = "auto"
    aabb_pad: float = 0.10
    outlier_trim: float = 0.01
    seed: int = 0
    resolution: tuple[int, int, int] = (64, 64, 64)
    bg_ray_fraction: float = 0.25
    depth_mode: str = "auto"  # "dense" | "sparse" | "none" | "auto"
    holdout_view: Optional[int] = None

    def __post_init__(self):
        if self.lambda_d < 0:
            raise ValueError("lambda_d must be >= 0")
        if self.samples_per_ray < 2:
            raise ValueError("samples_per_ray must be >= 2")


def loss(field_obj: VoxelField, batch: RayBatch, cfg: TrainConfig,
         jitter: Optional[np.ndarray] = None):
    """Mean squared color error + lambda_d * mean squared depth error over
    depth-bearing rays, with exact gradients w.r.t. both grids."""
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    density = field_obj.density.detach().requires_grad_(True)
    color_grid = field_obj.color.detach().requires_grad_(True)
    shadow = VoxelField.__new__(VoxelField)
    shadow.aabb_min, shadow.aabb_max = field_obj.aabb_min, field_obj.aabb_max
    shadow.resolution = field_obj.resolution
    shadow.density, shadow.color = density, color_grid

    dtype = field_obj.dtype
    color, depth, _ = render_rays(shadow, batch.origins, batch.directions,
                                  batch.t_near, batch.t_far,
                                  cfg.samples_per_ray, jitter=jitter, dtype=dtype)
    gt_color = torch.as_tensor(batch.gt_color, dtype=dtype)
    l_rgb = ((color - gt_color) ** 2).sum(dim=1).mean()

    has_depth = ~np.isnan(batch.gt_depth)
    if has_depth.any() and cfg.lambda_d > 0:
        idx = torch.as_tensor(np.nonzero(has_depth)[0])
        gt_d = torch.as_tensor(batch.gt_depth[has_depth], dtype=dtype)
        l_depth = ((depth[idx] - gt_d) ** 2).mean()
    elif has_depth.any():
        with torch.no_grad():
            gt_d = torch.as_tensor(batch.gt_depth[has_depth], dtype=dtype)
            l_depth = ((depth[torch.as_tensor(np.nonzero(has_depth)[0])]
                        - gt_d) ** 2).mean()
    else:
        l_depth = torch.zeros((), dtype=dtype)

    total = l_rgb + cfg.lambda_d * l_depth
    g_density, g_color = torch.autograd.grad(total, [density, color_grid],
                                             allow_unused=True)
    if g_density is None:
        g_density = torch.zeros_like(density)
    if g_color is None:
        g_color = torch.zeros_like(color_grid)
    return (float(total.detach()), float(l_rgb.detach()),
            float(l_depth.detach()), (g_density.detach(), g_color.detach()))


# ---------------------------------------------------------------------------
# batch construction
# ---------------------------------------------------------------------------

def _global_bounds(cfg: TrainConfig) -> tuple[float, float]:
    near = DEFAULT_NEAR if cfg.near == "auto" else float(cfg.near)
    far = DEFAULT_FAR if cfg.far == "auto" else float(cfg.far)
    return near, far


@dataclass
class _RayPool:
    batch: RayBatch  # already pruned/clipped to the AABB

    def sample(self, rng, n) -> RayBatch:
        if len(self.batch) == 0:
            return self.batch
        idx = rng.integers(0, len(self.batch), size=n)
        return self.batch.take(idx)


def _z_to_ray_scale(uv: np.ndarray, intr) -> np.ndarray:
    """Per-pixel factor converting optical-axis depth to distance along the
    unit ray (rendered depth is the latter)."""
    x = (uv[:, 0] - intr.cx) / intr.fx
    y = (uv[:, 1] - intr.cy) / intr.fy
    return np.sqrt(x * x + y * y + 1.0)


def _view_sparse_depth(view: ViewImage, object_cloud: SparseCloud) -> dict[tuple[int, int], float]:
    """Pixel -> projection depth of the object point observed there."""
    out = {}
    feats = object_cloud.features.get(view.view_id)
    if feats is None:
        return out
    for i, pid in enumerate(feats.point_ids):
        if pid < 0:
            continue
        proj = project_points(object_cloud.points[int(pid)].xyz[None],
                              view.intrinsics, view.pose)
        uv, z, valid = proj
        if not valid[0]:
            continue
        ui = int(np.clip(round(feats.uv[i, 0]), 0, view.intrinsics.width - 1))
        vi = int(np.clip(round(feats.uv[i, 1]), 0, view.intrinsics.height - 1))
        out[(vi, ui)] = float(z[0])
    return out


def build_ray_pools(views: Sequence[ViewImage], masks: dict[int, Mask],
                    object_cloud: Optional[SparseCloud],
                    aabb: tuple[np.ndarray, np.ndarray], cfg: TrainConfig
                    ) -> tuple[_RayPool, _RayPool, str]:
    """Assemble the in-mask (object) and out-of-mask (emptiness) ray pools,
    pre-pruned against the AABB. Returns (object pool, background pool, depth
    mode actually used)."""
    near, far = _global_bounds(cfg)
    accepted = [v for v in views
                if masks.get(v.view_id) is not None
                and masks[v.view_id].status == MaskStatus.ACCEPTED]
    if not accepted:
        raise IntegrityError("no accepted views to build batches from")

    mode = cfg.depth_mode
    if mode == "auto":
        mode = "dense" if all(v.depth is not None for v in accepted) else (
            "sparse" if object_cloud is not None else "none")

    obj_parts, bg_parts = [], []
    for view in accepted:
        bits = masks[view.view_id].bits
        h, w = bits.shape
        vv, uu = np.nonzero(bits)
        uv = np.stack([uu, vv], axis=1).astype(np.float64)
        origins, dirs = rays_for_pixels(uv, view.intrinsics, view.pose)
        colors = view.rgb[vv, uu]
        depths = np.full(len(uv), np.nan)
        # stored depth maps and cloud projections are optical-axis depth;
        # rendered depth is distance along the unit ray, so convert targets
        scale = _z_to_ray_scale(uv, view.intrinsics)
        if mode == "dense" and view.depth is not None:
            d = view.depth[vv, uu] * scale
            depths = np.where(d > 0, d, np.nan)
        elif mode == "sparse" and object_cloud is not None:
            lookup = _view_sparse_depth(view, object_cloud)
            for j, (r, c) in enumerate(zip(vv, uu)):
                z = lookup.get((int(r), int(c)))
                if z is not None:
                    depths[j] = z * scale[j]
        obj_parts.append(RayBatch(origins, dirs, np.full(len(uv), near),
                                  np.full(len(uv), far), colors, depths,
                                  np.ones(len(uv))))
        vv, uu = np.nonzero(~bits)
        uv = np.stack([uu, vv], axis=1).astype(np.float64)
        origins, dirs = rays_for_pixels(uv, view.intrinsics, view.pose)
        bg_parts.append(RayBatch(origins, dirs, np.full(len(uv), near),
                                 np.full(len(uv), far),
                                 np.zeros((len(uv), 3)),
                                 np.full(len(uv), np.nan), np.ones(len(uv))))

    def concat(parts):
        return RayBatch(*(np.concatenate([getattr(p, f) for p in parts])
                          for f in ("origins", "directions", "t_near", "t_far",
                                    "gt_color", "gt_depth", "weight")))

    obj_pool, _ = prune_rays(concat(obj_parts), aabb)
    bg_pool, _ = prune_rays(concat(bg_parts), aabb)
    return _RayPool(obj_pool), _RayPool(bg_pool), mode


def build_batches(views, masks, object_cloud, aabb, cfg: TrainConfig, rng=None):
    """Infinite stream of mixed object/background RayBatches."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    obj_pool, bg_pool, _mode = build_ray_pools(views, masks, object_cloud, aabb, cfg)
    n_bg = int(round(cfg.batch_rays * cfg.bg_ray_fraction))
    n_obj = cfg.batch_rays - n_bg
    while True:
        parts = [obj_pool.sample(rng, n_obj)]
        if len(bg_pool.batch):
            parts.append(bg_pool.sample(rng, n_bg))
        batch = RayBatch(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in ("origins", "directions", "t_near", "t_far",
                                     "gt_color", "gt_depth", "weight")))
        yield batch


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse <= 0:
        return float("inf")
    return 10.0 * math.log10(1.0 / mse)


@dataclass
class TrainResult:
    field: VoxelField
    log: list[dict]
    depth_mode: str

    def save_log(self, path) -> Path:
        path = Path(path)
        with open(path, "w") as f:
            for entry in self.log:
                f.write(json.dumps(entry) + "\n")
        return path


def _masked_gt(view: ViewImage, mask: Mask) -> np.ndarray:
    return view.rgb * mask.bits[..., None]


def train(views: Sequence[ViewImage], masks: dict[int, Mask],
          object_cloud: Optional[SparseCloud], cfg: TrainConfig,
          aabb: Optional[tuple[np.ndarray, np.ndarray]] = None) -> TrainResult:
    """Fit a voxel field to the accepted masked views."""
    accepted = [v for v in views
                if masks.get(v.view_id) is not None
                and masks[v.view_id].status == MaskStatus.ACCEPTED]
    if len(accepted) < 2:
        raise IntegrityError(f"training needs >= 2 accepted views, got {len(accepted)}")
    if aabb is None:
        if object_cloud is None:
            raise ValueError("either an object cloud or an explicit aabb is required")
        aabb = object_aabb(object_cloud, cfg.outlier_trim, cfg.aabb_pad)

    holdout_id = cfg.holdout_view
    if holdout_id is None:
        holdout_id = accepted[-1].view_id
    train_views = [v for v in accepted if v.view_id != holdout_id]
    holdout = next((v for v in accepted if v.view_id == holdout_id), None)
    if len(train_views) < 2:
        train_views = accepted  # too few views to spare one
        holdout = None

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    field_obj = VoxelField(aabb[0], aabb[1], cfg.resolution)
    field_obj.density.requires_grad_(True)
    field_obj.color.requires_grad_(True)
    opt = torch.optim.Adam([
        {"params": [field_obj.density], "lr": cfg.lr_density},
        {"params": [field_obj.color], "lr": cfg.lr_color},
    ])

    stream = build_batches(train_views, masks, object_cloud, aabb, cfg, rng)
    _, _, depth_mode = build_ray_pools(train_views, masks, object_cloud, aabb, cfg)
    log = []
    eval_every = max(1, cfg.iters // 10)
    last_good = field_obj.clone()
    dtype = field_obj.dtype

    def eval_psnr():
        if holdout is None:
            return None
        rendered = render_view(field_obj, holdout.intrinsics, holdout.pose,
                               n_samples=cfg.samples_per_ray)
        return psnr(rendered.rgb, _masked_gt(holdout, masks[holdout.view_id]))

    for it in range(cfg.iters):
        batch = next(stream)
        jitter = rng.random((len(batch), cfg.samples_per_ray))
        color, depth, _ = render_rays(field_obj, batch.origins, batch.directions,
                                      batch.t_near, batch.t_far,
                                      cfg.samples_per_ray, jitter=jitter,
                                      dtype=dtype)
        gt_color = torch.as_tensor(batch.gt_color, dtype=dtype)
        l_rgb = ((color - gt_color) ** 2).sum(dim=1).mean()
        has_depth = ~np.isnan(batch.gt_depth)
        if has_depth.any() and cfg.lambda_d > 0:
            idx = torch.as_tensor(np.nonzero(has_depth)[0])
            gt_d = torch.as_tensor(batch.gt_depth[has_depth], dtype=dtype)
            l_depth = ((depth[idx] - gt_d) ** 2).mean()
        else:
            l_depth = torch.zeros((), dtype=dtype)
        total = l_rgb + cfg.lambda_d * l_depth
        opt.zero_grad()
        total.backward()
        opt.step()

        entry = {"iter": it, "l_rgb": float(l_rgb.detach()),
                 "l_depth": float(l_depth.detach())}
        if not field_obj.finite() or not math.isfinite(float(total.detach())):
            raise DivergenceError(f"non-finite grids at iteration {it}",
                                  last_good=last_good, iteration=it)
        if (it + 1) % eval_every == 0 or it == cfg.iters - 1:
            with torch.no_grad():
                p = eval_psnr()
            if p is not None:
                entry["psnr"] = p
            last_good = field_obj.clone()
        log.append(entry)

    if cfg.iters == 0 and holdout is not None:
        with torch.no_grad():
            log.append({"iter": 0, "l_rgb": None, "l_depth": None,
                        "psnr": eval_psnr()})
    field_obj.density.requires_grad_(False)
    field_obj.color.requires_grad_(False)
    return TrainResult(field=field_obj, log=log, depth_mode=depth_mode)


# ---------------------------------------------------------------------------
# full-view rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RenderedView:
    rgb: np.ndarray  # (H, W, 3)
    depth: np.ndarray  # (H, W), 0 where the ray misses the AABB
    alpha: np.ndarray  # (H, W) opacity
    intrinsics: CameraIntrinsics
    pose: CameraPose

    def to_view_image(self, view_id: int = 0) -> ViewImage:
        return ViewImage(view_id=view_id, rgb=self.rgb, depth=self.depth,
                         intrinsics=self.intrinsics, pose=self.pose)


def render_view(field_like, intrinsics: CameraIntrinsics, pose: CameraPose,
                n_samples: int = 128, near: float = DEFAULT_NEAR,
                far: float = DEFAULT_FAR, chunk: int = 16384) -> RenderedView:
    """Render every pixel; rays missing the AABB come out transparent black."""
    h, w = intrinsics.height, intrinsics.width
    uu, vv = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    origins, dirs = rays_for_pixels(uv, intrinsics, pose)
    aabb = getattr(field_like, "aabb", None)
    n = len(uv)
    rgb = np.zeros((n, 3))
    depth = np.zeros(n)
    alpha = np.zeros(n)
    if aabb is not None:
        hit, entry, exit_ = ray_aabb_intersect(origins, dirs, aabb[0], aabb[1],
                                               np.full(n, near), np.full(n, far))
    else:
        hit = np.ones(n, dtype=bool)
        entry, exit_ = np.full(n, near), np.full(n, far)
    idx = np.nonzero(hit)[0]
    with torch.no_grad():
        for start in range(0, len(idx), chunk):
            sel = idx[start:start + chunk]
            c, d, a = render_rays(field_like, origins[sel], dirs[sel],
                                  entry[sel], exit_[sel], n_samples)
            rgb[sel] = c.numpy()
            depth[sel] = d.numpy()
            alpha[sel] = a.numpy()
    return RenderedView(rgb=rgb.reshape(h, w, 3), depth=depth.reshape(h, w),
                        alpha=alpha.reshape(h, w), intrinsics=intrinsics,
                        pose=pose)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"SNVF"
CHECKPOINT_VERSION = 1


def save_checkpoint(field_obj: VoxelField, path) -> Path:
    path = Path(path)
    nx, ny, nz = field_obj.resolution
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<III", nx, ny, nz))
        f.write(struct.pack("<6d", *field_obj.aabb_min, *field_obj.aabb_max))
        f.write(field_obj.density.detach().numpy().astype("<f4").tobytes())
        f.write(field_obj.color.detach().numpy().astype("<f4").tobytes())
    return path


def load_checkpoint(path) -> VoxelField:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise IntegrityError(f"bad checkpoint magic {magic!r} in {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise IntegrityError(f"unsupported checkpoint version {version}")
        nx, ny, nz = struct.unpack("<III", f.read(12))
        vals = struct.unpack("<6d", f.read(48))
        field_obj = VoxelField(vals[:3], vals[3:], (nx, ny, nz))
        density = np.frombuffer(f.read(4 * nx * ny * nz), dtype="<f4")
        color = np.frombuffer(f.read(4 * nx * ny * nz * 3), dtype="<f4")
        field_obj.density = torch.from_numpy(
            density.reshape(nx, ny, nz).copy())
        field_obj.color = torch.from_numpy(
            color.reshape(nx, ny, nz, 3).copy())
    return field_obj
