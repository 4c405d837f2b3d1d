"""End-to-end check against the TypeScript bridge service over stdio.

Skipped unless node and the compiled service (bridge/dist/main.js) are
available; `npm install && npm run build` in bridge/ produces them.
"""

import shutil
from pathlib import Path

import numpy as np
import pytest

from segnerf.scene import ViewImage, look_at_pose
from segnerf.segmenter import BridgeSegmenter, PromptSet
from conftest import small_intrinsics

BRIDGE_ENTRY = Path(__file__).resolve().parents[1] / "bridge" / "dist" / "main.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not BRIDGE_ENTRY.exists(),
    reason="node or built bridge service not available",
)


@pytest.fixture()
def scene_view():
    size = 48
    rgb = np.full((size, size, 3), 0.3)
    rgb[8:24, 6:22] = [0.8, 0.15, 0.15]
    rgb[30:44, 26:44] = [0.15, 0.25, 0.8]
    return ViewImage(view_id=0, rgb=rgb, intrinsics=small_intrinsics(size),
                     pose=look_at_pose([0, 0, -2], [0, 0, 0]))


@pytest.fixture()
def bridge():
    with BridgeSegmenter(f"cmd:node {BRIDGE_ENTRY}", timeout=30.0) as seg:
        yield seg


def test_segment_round_trip(bridge, scene_view):
    mask = bridge.segment(scene_view, PromptSet(points=[(10.0, 12.0, True)]))
    assert mask.bits.shape == scene_view.shape
    assert mask.bits[12, 10]
    # mask covers the red rectangle and nothing else
    expected = np.zeros(scene_view.shape, bool)
    expected[8:24, 6:22] = True
    assert (mask.bits == expected).all()
    assert 0.0 <= mask.score <= 1.0


def test_negative_prompt_vetoes_region(bridge, scene_view):
    mask = bridge.segment(scene_view, PromptSet(points=[
        (10.0, 12.0, True), (30.0, 35.0, True), (30.0, 35.0, False)]))
    assert mask.bits[12, 10]
    assert not mask.bits[35, 30]


def test_detect_boxes_sorted(bridge, scene_view):
    boxes = bridge.detect_boxes(scene_view, "object")
    assert len(boxes) == 2
    scores = [s for _, s in boxes]
    assert scores == sorted(scores, reverse=True)
    (x0, y0, x1, y1), _ = boxes[0]  # red rectangle is larger (256 px vs 252)
    assert (x0, y0, x1, y1) == (6, 8, 22, 24)
