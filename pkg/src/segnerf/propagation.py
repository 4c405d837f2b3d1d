"""Propagate initial prompts to all views through the sparse cloud.

The per-object 3D point list grows as masks are segmented view by view:
features of the current view that link into the list become point prompts,
the resulting mask's linked features add their 3D points back to the list.
The accumulated list doubles as the segmented object point cloud.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .colmap import SparseCloud
from .errors import EmptyMaskError, EmptyObjectError, UninitializableObjectError
from .scene import Mask, MaskStatus, ViewImage
from .segmenter import PromptSet

log = logging.getLogger(__name__)


@dataclass
class ObjectPointList:
    """Growing set of 3D point ids belonging to one object."""

    object_id: int
    point_ids: dict[int, None] = field(default_factory=dict)  # insertion-ordered set
    provenance: dict[int, int] = field(default_factory=dict)  # point_id -> view that added it

    def add(self, point_id: int, view_id: int):
        if point_id not in self.point_ids:
            self.point_ids[point_id] = None
            self.provenance[point_id] = view_id

    def __contains__(self, point_id: int) -> bool:
        return point_id in self.point_ids

    def __len__(self) -> int:
        return len(self.point_ids)

    def ids(self) -> list[int]:
        return list(self.point_ids)


@dataclass(frozen=True)
class PropagationConfig:
    prompts_per_view: int = 5
    min_track_hits: int = 2
    visit_order: str = "covisibility"  # or "input"
    erosion_px: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.prompts_per_view < 1:
            raise ValueError("prompts_per_view must be >= 1")
        if self.visit_order not in ("input", "covisibility"):
            raise ValueError(f"visit_order must be input or covisibility, "
                             f"got {self.visit_order!r}")


def _erode(bits: np.ndarray, px: int) -> np.ndarray:
    if px <= 0:
        return bits
    return ndimage.binary_erosion(bits, iterations=px)


def _in_mask_linked_features(cloud: SparseCloud, view_id: int, bits: np.ndarray):
    """Indices and point ids of linked features inside the (already eroded) mask."""
    feats = cloud.features.get(view_id)
    if feats is None or len(feats.uv) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=np.int64)
    h, w = bits.shape
    ui = np.clip(np.round(feats.uv[:, 0]).astype(int), 0, w - 1)
    vi = np.clip(np.round(feats.uv[:, 1]).astype(int), 0, h - 1)
    inside = bits[vi, ui] & (feats.point_ids >= 0)
    idx = np.nonzero(inside)[0]
    return idx, feats.point_ids[idx]


def init_object(cloud: SparseCloud, view0: ViewImage, prompts0: PromptSet,
                segmenter, cfg: PropagationConfig = PropagationConfig(),
                object_id: int = 1) -> tuple[Mask, ObjectPointList]:
    """Segment the starting view and seed the 3D point list from its features."""
    mask = segmenter.segment(view0, prompts0)
    eroded = _erode(mask.bits, cfg.erosion_px)
    _, point_ids = _in_mask_linked_features(cloud, view0.view_id, eroded)
    if len(point_ids) == 0:
        feats = cloud.features.get(view0.view_id)
        n_feats = 0 if feats is None else len(feats.uv)
        raise UninitializableObjectError(
            f"initial mask of view {view0.view_id} contains no linked feature "
            f"(view has {n_feats} features)")
    olist = ObjectPointList(object_id=object_id)
    for pid in point_ids:
        olist.add(int(pid), view0.view_id)
    return mask, olist


def _kmeans_medoids(points: np.ndarray, k: int, seed: int = 0,
                    iters: int = 50) -> np.ndarray:
    """Lloyd's k-means with seeded farthest-point init; returns indices of the
    cluster members nearest their centroid (medoids)."""
    n = len(points)
    if k >= n:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    centers = [int(rng.integers(n))]
    d2 = np.sum((points - points[centers[0]]) ** 2, axis=1)
    for _ in range(k - 1):
        centers.append(int(np.argmax(d2)))
        d2 = np.minimum(d2, np.sum((points - points[centers[-1]]) ** 2, axis=1))
    centroids = points[centers].astype(np.float64)
    assign = np.full(n, -1, dtype=int)
    for _ in range(iters):
        dists = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dists, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    medoids = []
    for j in range(k):
        members = np.nonzero(assign == j)[0]
        if len(members) == 0:
            continue
        d = np.sum((points[members] - centroids[j]) ** 2, axis=1)
        medoids.append(int(members[np.argmin(d)]))
    return np.asarray(sorted(set(medoids)), dtype=int)


def select_prompts(cloud: SparseCloud, olist: ObjectPointList, view: ViewImage,
                   cfg: PropagationConfig = PropagationConfig()) -> PromptSet:
    """Reduce the view's object-linked features to prompts_per_view positive
    point prompts (k-means medoids, so prompts are real feature pixels)."""
    feats = cloud.features.get(view.view_id)
    if feats is None or len(feats.uv) == 0:
        return PromptSet()
    member = np.fromiter((int(p) in olist for p in feats.point_ids),
                         dtype=bool, count=len(feats.point_ids))
    candidates = feats.uv[member]
    if len(candidates) == 0:
        return PromptSet()
    idx = _kmeans_medoids(candidates, cfg.prompts_per_view,
                          seed=cfg.seed + view.view_id)
    points = tuple((float(candidates[i, 0]), float(candidates[i, 1]), True)
                   for i in idx)
    return PromptSet(points=points)


def _covisibility_order(cloud: SparseCloud, lists: Sequence[ObjectPointList],
                        remaining: list[int]) -> int:
    """Unvisited view sharing the most tracks with any object list; ties by id."""
    member: set[int] = set()
    for ol in lists:
        member.update(ol.point_ids)
    best_view, best_count = None, -1
    for view_id in sorted(remaining):
        feats = cloud.features.get(view_id)
        count = 0
        if feats is not None and len(feats.point_ids):
            count = int(np.isin(feats.point_ids,
                                np.fromiter(member, dtype=np.int64, count=len(member))
                                ).sum()) if member else 0
        if count > best_count:
            best_view, best_count = view_id, count
    return best_view


@dataclass
class PropagationResult:
    masks: dict[int, dict[int, Mask]]  # object_id -> view_id -> Mask
    point_lists: dict[int, ObjectPointList]
    visit_order: list[int]


def propagate(cloud: SparseCloud, views: Sequence[ViewImage],
              objects: Sequence[tuple[ViewImage, PromptSet]], segmenter,
              cfg: PropagationConfig = PropagationConfig()) -> PropagationResult:
    """Run the propagation loop for one or more objects in a single pass."""
    if not objects:
        raise ValueError("need at least one object")
    by_id = {v.view_id: v for v in views}
    masks: dict[int, dict[int, Mask]] = {}
    lists: dict[int, ObjectPointList] = {}
    init_views: set[int] = set()
    for k, (view0, prompts0) in enumerate(objects, start=1):
        mask0, olist = init_object(cloud, view0, prompts0, cfg=cfg,
                                   segmenter=segmenter, object_id=k)
        masks[k] = {view0.view_id: mask0}
        lists[k] = olist
        init_views.add(view0.view_id)

    remaining = [v.view_id for v in views if v.view_id not in init_views]
    order: list[int] = sorted(init_views)
    while remaining:
        if cfg.visit_order == "covisibility":
            view_id = _covisibility_order(cloud, list(lists.values()), remaining)
        else:
            view_id = remaining[0]
        remaining.remove(view_id)
        order.append(view_id)
        view = by_id[view_id]
        for k, olist in lists.items():
            prompts = select_prompts(cloud, olist, view, cfg)
            if not prompts:
                masks[k][view_id] = Mask(view_id=view_id,
                                         bits=np.zeros(view.shape, dtype=bool),
                                         score=0.0, status=MaskStatus.UNPROCESSED)
                continue
            try:
                mask = segmenter.segment(view, prompts)
            except EmptyMaskError as exc:
                log.warning("object %d view %d: %s; skipping", k, view_id, exc)
                masks[k][view_id] = Mask(view_id=view_id,
                                         bits=np.zeros(view.shape, dtype=bool),
                                         score=0.0, status=MaskStatus.UNPROCESSED)
                continue
            masks[k][view_id] = mask
            eroded = _erode(mask.bits, cfg.erosion_px)
            _, point_ids = _in_mask_linked_features(cloud, view_id, eroded)
            for pid in point_ids:
                olist.add(int(pid), view_id)

    _prune_low_support(cloud, masks, lists, cfg)
    return PropagationResult(masks=masks, point_lists=lists, visit_order=order)


def _prune_low_support(cloud, masks, lists, cfg):
    """Drop points seen inside fewer than min_track_hits accepted masks."""
    if cfg.min_track_hits <= 1:
        return
    for k, olist in lists.items():
        keep = {}
        for pid in olist.ids():
            hits = 0
            for view_id, feat_idx in cloud.points[pid].track:
                mask = masks[k].get(view_id)
                if mask is None or mask.status != MaskStatus.ACCEPTED:
                    continue
                u, v = cloud.features[view_id].uv[feat_idx]
                h, w = mask.bits.shape
                ui = int(np.clip(round(u), 0, w - 1))
                vi = int(np.clip(round(v), 0, h - 1))
                if mask.bits[vi, ui]:
                    hits += 1
            if hits >= cfg.min_track_hits:
                keep[pid] = None
        dropped = len(olist.point_ids) - len(keep)
        if dropped:
            log.info("object %d: pruned %d low-support points", k, dropped)
        olist.point_ids = keep
        olist.provenance = {p: olist.provenance[p] for p in keep}


def export_object_cloud(cloud: SparseCloud, olist: ObjectPointList) -> SparseCloud:
    """Sub-cloud of the object's points with tracks intact."""
    if len(olist) == 0:
        raise EmptyObjectError(f"object {olist.object_id} has no points")
    return cloud.restrict(olist.ids())


def save_masks(masks: dict[int, dict[int, Mask]], root) -> Path:
    """Write masks as 0/255 PNGs plus a JSON index."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    index = []
    for object_id in sorted(masks):
        for view_id in sorted(masks[object_id]):
            mask = masks[object_id][view_id]
            rel = f"object_{object_id:02d}_view_{view_id:04d}.png"
            Image.fromarray(mask.bits.astype(np.uint8) * 255).save(root / rel)
            index.append({"view_id": view_id, "object_id": object_id,
                          "score": mask.score, "status": mask.status.value,
                          "file": rel})
    out = root / "masks.json"
    out.write_text(json.dumps(index, indent=2))
    return out


def load_masks(root) -> dict[int, dict[int, Mask]]:
    root = Path(root)
    index = json.loads((root / "masks.json").read_text())
    masks: dict[int, dict[int, Mask]] = {}
    for entry in index:
        bits = np.asarray(Image.open(root / entry["file"])) > 127
        mask = Mask(view_id=entry["view_id"], bits=bits, score=entry["score"],
                    status=MaskStatus(entry["status"]))
        masks.setdefault(entry["object_id"], {})[entry["view_id"]] = mask
    return masks
