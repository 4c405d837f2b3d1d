"""Remove an object from a scene, then re-add it somewhere else.

Removal: train a background field on the same views with the object's
pixels excluded entirely; the multi-view coverage inpaints the region the
object used to hide. Addition: compose a separately built object field
into the background under a rigid transform and render the result.
"""

import time
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from segnerf.editor import RigidTransform, compose, removal_masks
from segnerf.field import TrainConfig, VoxelField, psnr, render_view, train
from segnerf.scene import CameraIntrinsics, Mask, MaskStatus
from segnerf.synthetic import (Background, ObjectSpec, SceneSpec,
                               render_scene, ring_poses)

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

size = 64
intr = CameraIntrinsics(fx=size * 1.2, fy=size * 1.2, cx=size / 2 - 0.5,
                        cy=size / 2 - 0.5, width=size, height=size)
poses = ring_poses(16, 1.4, height=0.4)
room = Background("room", half_size=2.0)
sphere = ObjectSpec("sphere", (0.9, 0.0, 0.3), 0.4, (0.9, 0.2, 0.15), 1)
spec = SceneSpec(objects=(sphere,), intrinsics=intr, poses=poses,
                 background=room)
rendered = render_scene(spec)
reference = render_scene(SceneSpec(objects=(), intrinsics=intr, poses=poses,
                                   background=room))

masks = {v.view_id: Mask(view_id=v.view_id,
                         bits=rendered.instance_map(v.view_id) == 1,
                         score=1.0, status=MaskStatus.ACCEPTED)
         for v in rendered.views}
keep = removal_masks(masks)  # inverted: supervise everything but the object

cfg = TrainConfig(iters=600, batch_rays=2048, samples_per_ray=96,
                  resolution=(64, 64, 64), seed=0, holdout_view=15,
                  lambda_d=0.1, bg_ray_fraction=0.0, lr_density=0.3)
print("training the background with the object excluded ...")
t0 = time.time()
result = train(rendered.views, keep, None, cfg,
               aabb=(np.full(3, -2.1), np.full(3, 2.1)))
print(f"done in {time.time() - t0:.0f} s")

hold = rendered.views[15]
out = render_view(result.field, hold.intrinsics, hold.pose, n_samples=96)
region = rendered.instance_map(15) == 1
print(f"inpainted region vs object-free reference: "
      f"{psnr(out.rgb[region], reference.views[15].rgb[region]):.2f} dB PSNR")
strip = np.hstack([rendered.views[15].rgb, out.rgb, reference.views[15].rgb])
Image.fromarray((np.clip(strip, 0, 1) * 255).astype(np.uint8)).save(
    OUT / "removal_before_after_reference.png")
print(f"wrote {OUT / 'removal_before_after_reference.png'}")

# re-add a synthetic ball, shifted along +x
ball = VoxelField((-0.6, -0.6, -0.6), (0.6, 0.6, 0.6), (24, 24, 24))
axes = [np.linspace(-0.6, 0.6, 24)] * 3
xx, yy, zz = np.meshgrid(*axes, indexing="ij")
ball.density[torch.as_tensor(xx ** 2 + yy ** 2 + zz ** 2 <= 0.3 ** 2)] = 20.0
comp = compose(result.field, ball,
               RigidTransform(translation=np.array([-0.5, 0.0, 0.3])))
added = render_view(comp, hold.intrinsics, hold.pose, n_samples=96)
Image.fromarray((np.clip(added.rgb, 0, 1) * 255).astype(np.uint8)).save(
    OUT / "addition.png")
print(f"wrote {OUT / 'addition.png'}")
