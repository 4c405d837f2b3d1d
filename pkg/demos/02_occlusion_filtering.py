"""Discard views where the object is mostly hidden behind an occluder.

A thin wall stands close to a sphere, hiding it almost entirely from a
few cameras on the ring. The filter reprojects the object's 3D points
into each view, builds an expected-silhouette estimate, and compares it
to the 2D mask: views where the two barely overlap are discarded.
"""

import numpy as np

from segnerf.occlusion import filter_views
from segnerf.scene import CameraIntrinsics, Mask, MaskStatus
from segnerf.synthetic import (Background, ObjectSpec, SceneSpec,
                               fabricate_sparse_cloud, point_instances,
                               render_scene, ring_poses)

size = 96
intr = CameraIntrinsics(fx=size * 1.2, fy=size * 1.2, cx=size / 2 - 0.5,
                        cy=size / 2 - 0.5, width=size, height=size)
poses = ring_poses(30, 3.0, height=1.0, start_angle=np.pi / 30)
sphere = ObjectSpec("sphere", (0, 0, 0), 0.5, (0.9, 0.2, 0.15), 1)
wall = ObjectSpec("box", (1.6, 0.0, 0.45), (0.05, 0.7, 0.9), (0.4, 0.4, 0.4), 7)
spec = SceneSpec(objects=(sphere, wall), intrinsics=intr, poses=poses,
                 background=Background("room", half_size=6.0))

print("rendering the occluded ring ...")
rendered = render_scene(spec)
cloud = fabricate_sparse_cloud(spec, rendered, 3000, 0.0, seed=3)
inst = point_instances(spec, cloud)
obj_cloud = cloud.restrict([p for p, i in inst.items() if i == 1])
masks = {v.view_id: Mask(view_id=v.view_id,
                         bits=rendered.instance_map(v.view_id) == 1,
                         score=1.0, status=MaskStatus.ACCEPTED)
         for v in rendered.views}

kept, report = filter_views(masks, obj_cloud, rendered.views)
print(f"{sum(1 for d in report.decisions if d.decision == 'accepted')} views "
      f"accepted, {sum(1 for d in report.decisions if d.decision != 'accepted')} "
      "discarded:")
for d in report.decisions:
    if d.decision != "accepted":
        print(f"  view {d.view_id:2d}: IoU(estimate, mask) = {d.iou:.3f} "
              f"-> {d.decision}")
