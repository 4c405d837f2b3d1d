"""Detect views where the segmented mask disagrees with the projected object
cloud and discard them before training.

The estimated mask is the alpha-shape concave hull of the projected object
points (Delaunay triangles kept when their circumradius is below alpha),
rasterized, Gaussian-blurred, and re-thresholded. A low IoU between the
segmented and estimated masks flags an obstructed view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay, cKDTree
from skimage.draw import polygon

from .colmap import SparseCloud
from .errors import InsufficientPointsError
from .scene import Mask, MaskStatus, ViewImage, project_points


@dataclass(frozen=True)
class OcclusionConfig:
    alpha: Union[float, str] = "auto"  # pixels; auto = 3x median NN distance
    gaussian_sigma_px: float = 5.0
    mask_threshold: float = 0.5
    iou_discard_below: float = 0.5

    def __post_init__(self):
        if not (0 < self.mask_threshold < 1):
            raise ValueError("mask_threshold must be in (0, 1)")
        if not (0 < self.iou_discard_below < 1):
            raise ValueError("iou_discard_below must be in (0, 1)")


def auto_alpha(points: np.ndarray) -> float:
    """3x the 90th-percentile nearest-neighbor distance; scale-free default
    radius. A high percentile keeps the interior solid when projection crowds
    points near the silhouette and drags the median down."""
    tree = cKDTree(points)
    d, _ = tree.query(points, k=2)
    return 3.0 * float(np.percentile(d[:, 1], 90))


def alpha_shape_mask(points: np.ndarray, shape: tuple[int, int],
                     alpha: Union[float, str] = "auto") -> np.ndarray:
    """Rasterized alpha-complex of 2D points: union of Delaunay triangles with
    circumradius < alpha. alpha=inf reproduces the convex hull."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 3:
        raise InsufficientPointsError(f"alpha shape needs >= 3 points, got {len(points)}")
    if alpha == "auto":
        alpha = auto_alpha(points)
    try:
        tri = Delaunay(points)
    except Exception as exc:  # qhull degeneracy (collinear points)
        raise InsufficientPointsError(f"degenerate point set: {exc}")
    a = points[tri.simplices[:, 0]]
    b = points[tri.simplices[:, 1]]
    c = points[tri.simplices[:, 2]]
    # circumradius = product of side lengths / (4 * area)
    la = np.linalg.norm(b - c, axis=1)
    lb = np.linalg.norm(a - c, axis=1)
    lc = np.linalg.norm(a - b, axis=1)
    area2 = np.abs((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1])
                   - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1]))
    with np.errstate(divide="ignore"):
        circumradius = np.where(area2 > 1e-12, la * lb * lc
                                / (2.0 * np.maximum(area2, 1e-300)), np.inf)
    keep = circumradius < alpha
    # rasterize by locating pixel centers in the triangulation; drawing tiny
    # triangles one by one misses pixels when points are denser than the grid
    bits = np.zeros(shape, dtype=bool)
    if not keep.any():
        return bits
    h, w = shape
    u0 = int(np.clip(np.floor(points[:, 0].min()), 0, w - 1))
    u1 = int(np.clip(np.ceil(points[:, 0].max()), 0, w - 1))
    v0 = int(np.clip(np.floor(points[:, 1].min()), 0, h - 1))
    v1 = int(np.clip(np.ceil(points[:, 1].max()), 0, h - 1))
    uu, vv = np.meshgrid(np.arange(u0, u1 + 1), np.arange(v0, v1 + 1))
    simplex = tri.find_simplex(np.stack([uu.ravel(), vv.ravel()], axis=1)
                               .astype(np.float64))
    inside = (simplex >= 0) & keep[np.maximum(simplex, 0)]
    bits[vv.ravel()[inside], uu.ravel()[inside]] = True
    return bits


def estimate_mask_from_cloud(object_cloud: SparseCloud, view: ViewImage,
                             cfg: OcclusionConfig = OcclusionConfig()) -> Mask:
    """Project the object points into the view and turn them into a smooth
    silhouette estimate."""
    xyz = object_cloud.xyz_array()
    uv, _, valid = project_points(xyz, view.intrinsics, view.pose)
    uv = uv[valid]
    if len(uv) < 3:
        raise InsufficientPointsError(
            f"only {len(uv)} object points project into view {view.view_id}")
    bits = alpha_shape_mask(uv, view.shape, cfg.alpha)
    # interior pinholes are sampling artifacts, not silhouette structure
    bits = ndimage.binary_fill_holes(bits)
    smooth = ndimage.gaussian_filter(bits.astype(np.float64), cfg.gaussian_sigma_px)
    return Mask(view_id=view.view_id, bits=smooth > cfg.mask_threshold,
                score=1.0, status=MaskStatus.UNPROCESSED)


def occlusion_iou(estimated: Mask, segmented: Mask) -> float:
    if estimated.bits.shape != segmented.bits.shape:
        raise ValueError(f"mask shapes differ: {estimated.bits.shape} vs "
                         f"{segmented.bits.shape}")
    inter = np.logical_and(estimated.bits, segmented.bits).sum()
    union = np.logical_or(estimated.bits, segmented.bits).sum()
    if union == 0:
        return 0.0
    return float(inter / union)


@dataclass(frozen=True)
class FilterDecision:
    view_id: int
    iou: Optional[float]
    decision: str  # "accepted" | "discarded_occluded" | "skipped"


@dataclass(frozen=True)
class FilterReport:
    decisions: tuple[FilterDecision, ...]

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(
            [{"view_id": d.view_id, "iou": d.iou, "decision": d.decision}
             for d in self.decisions], indent=2))
        return path


def filter_views(masks: dict[int, Mask], object_cloud: SparseCloud,
                 views: Sequence[ViewImage],
                 cfg: OcclusionConfig = OcclusionConfig()
                 ) -> tuple[dict[int, Mask], FilterReport]:
    """Re-status Accepted masks whose IoU against the cloud estimate falls
    below the threshold. Mask bits are never modified."""
    by_id = {v.view_id: v for v in views}
    out: dict[int, Mask] = {}
    decisions = []
    for view_id in sorted(masks):
        mask = masks[view_id]
        if mask.status != MaskStatus.ACCEPTED:
            out[view_id] = mask
            decisions.append(FilterDecision(view_id, None, "skipped"))
            continue
        try:
            estimate = estimate_mask_from_cloud(object_cloud, by_id[view_id], cfg)
        except InsufficientPointsError:
            out[view_id] = replace(mask, status=MaskStatus.UNPROCESSED)
            decisions.append(FilterDecision(view_id, None, "skipped"))
            continue
        iou = occlusion_iou(estimate, mask)
        if iou < cfg.iou_discard_below:
            out[view_id] = replace(mask, status=MaskStatus.DISCARDED_OCCLUDED)
            decisions.append(FilterDecision(view_id, iou, "discarded_occluded"))
        else:
            out[view_id] = mask
            decisions.append(FilterDecision(view_id, iou, "accepted"))
    return out, FilterReport(decisions=tuple(decisions))
