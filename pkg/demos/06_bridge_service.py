"""Talk to the external segmentation service over the wire protocol.

The bridge is a separate process (here the TypeScript service in
bridge/, but anything speaking the newline-delimited JSON protocol
works). The client sends a PNG plus point prompts and gets back a
run-length mask; detection returns score-sorted boxes for a text query.

Build the service first:  cd bridge && npm install && npm run build
"""

import sys
from pathlib import Path

import numpy as np

from segnerf.scene import CameraIntrinsics, ViewImage, look_at_pose
from segnerf.segmenter import BridgeSegmenter, PromptSet

entry = Path(__file__).parents[1] / "bridge" / "dist" / "main.js"
if not entry.exists():
    sys.exit("bridge not built; run: cd bridge && npm install && npm run build")

size = 48
rgb = np.full((size, size, 3), 0.3)
rgb[8:24, 6:22] = [0.8, 0.15, 0.15]   # red rectangle
rgb[30:44, 26:44] = [0.15, 0.25, 0.8]  # blue rectangle
intr = CameraIntrinsics(fx=size, fy=size, cx=size / 2, cy=size / 2,
                        width=size, height=size)
view = ViewImage(view_id=0, rgb=rgb, intrinsics=intr,
                 pose=look_at_pose([0, 0, -2], [0, 0, 0]))

with BridgeSegmenter(f"cmd:node {entry}") as bridge:
    mask = bridge.segment(view, PromptSet(points=[(10.0, 12.0, True)]))
    print(f"segment: {int(mask.bits.sum())} px selected, "
          f"score {mask.score:.2f}")
    for box, score in bridge.detect_boxes(view, "object"):
        print(f"detect: box {box} score {score:.2f}")
