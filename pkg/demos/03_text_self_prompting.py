"""Turn a text query into point prompts, no clicking required.

A text-grounded detector proposes a box for "sphere", the box seeds a
first mask, and k-medoids over the mask interior (away from the edge)
produces a compact, reproducible set of positive point prompts. Those
prompts then drive the same multi-view propagation a human click would.
"""

from segnerf.propagation import propagate
from segnerf.scene import MaskStatus
from segnerf.segmenter import OracleSegmenter
from segnerf.selfprompt import SelfPromptConfig, distance_map, self_prompt_view
from segnerf.synthetic import fabricate_sparse_cloud, preset_scene, render_scene

cfg = SelfPromptConfig(k=5, band_lo=2.0, seed=0)
spec = preset_scene("sphere-box", n_views=10, image_size=96)
rendered = render_scene(spec)
oracle = OracleSegmenter(rendered, label_map={"sphere": 1})
view = rendered.views[2]

prompts, mask, box = self_prompt_view(view, "sphere", oracle, oracle, cfg)
print(f'text "sphere" -> box {tuple(round(b, 1) for b in box)}')
dist = distance_map(mask)
for u, v, _positive in prompts.points:
    print(f"  prompt ({u:5.1f}, {v:5.1f}), {dist[int(v), int(u)]:.1f} px "
          "inside the mask edge")

print("reseeding propagation from the generated prompts ...")
cloud = fabricate_sparse_cloud(spec, rendered, 3000, 0.0, seed=5)
result = propagate(cloud, rendered.views, [(view, prompts)],
                   OracleSegmenter(rendered))
oid = next(iter(result.masks))
accepted = sum(1 for m in result.masks[oid].values()
               if m.status is MaskStatus.ACCEPTED)
print(f"propagated to {accepted}/10 views")

again, _, _ = self_prompt_view(view, "sphere", oracle, oracle, cfg)
print("prompts reproducible bit for bit:", again.points == prompts.points)
