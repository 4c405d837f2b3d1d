"""Turn a text label into initial point prompts.

Detector box -> box-prompted mask -> Euclidean distance-to-edge map -> pixels
in a near-edge band -> k-means medoids as positive point prompts. Batch mode
runs this per scene to seed propagation across a dataset.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import BandEmptyError, EmptyMaskError, NotFoundError
from .propagation import _kmeans_medoids
from .scene import Mask, ViewImage
from .segmenter import PromptSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelfPromptConfig:
    k: int = 5
    band_lo: float = 2.0
    band_hi: Optional[float] = None  # None: max(4, 5% of the mask's max distance)
    kmeans_iters: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.band_hi is not None and not (0 < self.band_lo < self.band_hi):
            raise ValueError("need 0 < band_lo < band_hi")


def box_to_mask(view: ViewImage, text: str, detector, segmenter) -> tuple[Mask, tuple]:
    """Highest-score detector box fed to the segmenter as a box prompt."""
    boxes = detector.detect_boxes(view, text)
    if not boxes:
        raise NotFoundError(f"no {text!r} detected in view {view.view_id}")
    box, _score = max(boxes, key=lambda b: b[1])
    mask = segmenter.segment(view, PromptSet(box=tuple(box)))
    return mask, tuple(box)


def distance_map(mask: Mask) -> np.ndarray:
    """Exact Euclidean distance to the nearest out-of-mask pixel (the image
    border counts as outside); 0 outside the mask."""
    if mask.area == 0:
        raise EmptyMaskError("distance map of an empty mask")
    padded = np.zeros((mask.bits.shape[0] + 2, mask.bits.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask.bits
    dist = ndimage.distance_transform_edt(padded)
    return dist[1:-1, 1:-1]


def edge_band_points(dist: np.ndarray, cfg: SelfPromptConfig = SelfPromptConfig()
                     ) -> np.ndarray:
    """(u, v) pixels whose distance-to-edge lies in [band_lo, band_hi]."""
    band_hi = cfg.band_hi
    if band_hi is None:
        band_hi = max(4.0, 0.05 * float(dist.max()))
    rows, cols = np.nonzero((dist >= cfg.band_lo) & (dist <= band_hi))
    if len(rows) == 0:
        raise BandEmptyError(
            f"no pixels with distance in [{cfg.band_lo}, {band_hi}]; "
            f"try band_lo={max(1.0, cfg.band_lo / 2)}",
            suggested_band=(max(1.0, cfg.band_lo / 2), band_hi * 2))
    return np.stack([cols, rows], axis=1).astype(np.float64)


def kmeans_prompts(points: np.ndarray, cfg: SelfPromptConfig = SelfPromptConfig()
                   ) -> PromptSet:
    """Cluster band pixels and return the k medoids as positive prompts."""
    points = np.asarray(points, dtype=np.float64)
    if len(points) < cfg.k:
        log.warning("only %d candidate points for k=%d; returning all",
                    len(points), cfg.k)
        idx = np.arange(len(points))
    else:
        idx = _kmeans_medoids(points, cfg.k, seed=cfg.seed, iters=cfg.kmeans_iters)
    prompts = tuple((float(points[i, 0]), float(points[i, 1]), True) for i in idx)
    return PromptSet(points=prompts)


def self_prompt_view(view: ViewImage, text: str, detector, segmenter,
                     cfg: SelfPromptConfig = SelfPromptConfig()
                     ) -> tuple[PromptSet, Mask, tuple]:
    mask, box = box_to_mask(view, text, detector, segmenter)
    dist = distance_map(mask)
    band = edge_band_points(dist, cfg)
    return kmeans_prompts(band, cfg), mask, box


@dataclass(frozen=True)
class SceneResult:
    scene: str
    status: str  # "ok" | "skipped"
    view_id: Optional[int] = None
    prompts: Optional[PromptSet] = None
    detector_score: Optional[float] = None
    reason: Optional[str] = None


def self_prompt_dataset(scenes: Sequence[tuple[str, Sequence[ViewImage], object, object]],
                        text: str, cfg: SelfPromptConfig = SelfPromptConfig()
                        ) -> list[SceneResult]:
    """Per scene: pick the view with the highest detector score and generate
    prompts there. Scenes where the object is not found are listed, not fatal.

    Each scene entry is (name, views, detector, segmenter): detector/segmenter
    handles are per-scene because the oracle backend is scene-bound.
    """
    results = []
    for name, views, detector, segmenter in scenes:
        best = None  # (score, view)
        for view in views:
            boxes = detector.detect_boxes(view, text)
            if boxes and (best is None or boxes[0][1] > best[0]):
                best = (boxes[0][1], view)
        if best is None:
            results.append(SceneResult(scene=name, status="skipped",
                                       reason=f"no {text!r} detected in any view"))
            continue
        score, view = best
        try:
            prompts, _mask, _box = self_prompt_view(view, text, detector,
                                                    segmenter, cfg)
        except (NotFoundError, EmptyMaskError, BandEmptyError) as exc:
            results.append(SceneResult(scene=name, status="skipped",
                                       reason=str(exc)))
            continue
        results.append(SceneResult(scene=name, status="ok", view_id=view.view_id,
                                   prompts=prompts, detector_score=float(score)))
    return results


def save_batch_report(results: Sequence[SceneResult], path) -> Path:
    path = Path(path)
    payload = []
    for r in results:
        entry = {"scene": r.scene, "status": r.status}
        if r.status == "ok":
            entry["view_id"] = r.view_id
            entry["prompts"] = [[u, v] for u, v, _ in r.prompts.points]
            entry["detector_score"] = r.detector_score
        else:
            entry["reason"] = r.reason
        payload.append(entry)
    path.write_text(json.dumps(payload, indent=2))
    return path
