"""Command-line pipeline orchestration.

Subcommands: synth, segment, selfprompt, train, render, edit. All artifacts
live under dataset/output directories given by flags; a single --config file
plus --seed reproduces every artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import colmap as colmap_io
from . import editor as editor_mod
from . import field as field_mod
from . import occlusion as occlusion_mod
from . import propagation as prop_mod
from . import selfprompt as selfprompt_mod
from . import synthetic as synth_mod
from .config import (SEED_OFFSET_SYNTH, PipelineConfig, load_config)
from .errors import IntegrityError, ParseError, SegNerfError
from .scene import MaskStatus
from .segmenter import BridgeSegmenter, OracleSegmenter, PromptSet

log = logging.getLogger("segnerf")

PRESET_LABELS = {
    "sphere": {"sphere": 1},
    "two-spheres": {"red sphere": 1, "blue sphere": 2, "sphere": 1},
    "sphere-box": {"sphere": 1, "box": 2},
}


def _parse_prompt(text: str):
    try:
        u, v, sign = text.split(",")
        if sign not in ("+", "-"):
            raise ValueError
        return float(u), float(v), sign == "+"
    except ValueError:
        raise ParseError(f"prompt must look like 'u,v,+' or 'u,v,-', got {text!r}")


def _parse_kv(text: str) -> dict:
    out = {}
    for item in text.split(","):
        if not item:
            continue
        key, _, value = item.partition("=")
        if not _:
            raise ParseError(f"expected key=value, got {item!r}")
        out[key] = float(value)
    return out


def _load_dataset(data_dir: Path):
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise ParseError("no manifest.json found", path=data_dir)
    views, manifest = colmap_io.load_manifest(manifest_path)
    return views, manifest


def _load_instances(data_dir: Path, manifest: dict, views):
    rel = manifest.get("instances")
    if rel is None:
        raise IntegrityError(
            "dataset has no instance maps; the oracle backend needs a "
            "synthetic dataset (run `segnerf synth`) or use --backend bridge")
    imaps = []
    for view in views:
        p = data_dir / rel / f"view_{view.view_id:04d}.png"
        imaps.append(np.asarray(Image.open(p), dtype=np.int64))
    return synth_mod.RenderedScene(views=tuple(views), instance_maps=tuple(imaps))


def _make_segmenter(args, cfg: PipelineConfig, data_dir, views, manifest):
    backend = args.backend or cfg.backend
    if backend == "oracle":
        rendered = _load_instances(data_dir, manifest, views)
        labels = manifest.get("labels", {})
        return OracleSegmenter(rendered, label_map=labels)
    endpoint = args.bridge_endpoint or cfg.bridge_endpoint
    return BridgeSegmenter(endpoint, timeout=cfg.bridge_timeout)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg: PipelineConfig) -> int:
    sc = cfg.synth
    preset = args.preset or sc.preset
    spec = synth_mod.preset_scene(preset, n_views=sc.n_views,
                                  image_size=sc.image_size)
    rendered = synth_mod.render_scene(spec)
    out = Path(args.out)
    cloud = synth_mod.fabricate_sparse_cloud(
        spec, rendered, n_points=sc.n_points, noise_px=sc.noise_px,
        seed=cfg.seed + SEED_OFFSET_SYNTH)
    metas = [colmap_io.ViewMeta(view_id=v.view_id, name=f"view_{v.view_id:04d}.png",
                                intrinsics=v.intrinsics, pose=v.pose)
             for v in rendered.views]
    colmap_io.save_colmap_model(cloud, metas, out / "sparse", fmt="text")
    manifest_path = colmap_io.save_manifest(
        list(rendered.views), out, colmap_dir="sparse", instance_dir="instances")
    (out / "instances").mkdir(exist_ok=True)
    for view, imap in zip(rendered.views, rendered.instance_maps):
        Image.fromarray(imap.astype(np.uint8)).save(
            out / "instances" / f"view_{view.view_id:04d}.png")
    manifest = json.loads(manifest_path.read_text())
    manifest["labels"] = PRESET_LABELS[preset]
    manifest["preset"] = preset
    manifest_path.write_text(json.dumps(manifest, indent=2))
    print(f"wrote {len(rendered.views)} views, {cloud.n_points} cloud points to {out}")
    return 0


def cmd_segment(args, cfg: PipelineConfig) -> int:
    data_dir = Path(args.data)
    views, manifest = _load_dataset(data_dir)
    cloud, _ = colmap_io.load_colmap_model(data_dir / manifest["colmap"])
    segmenter = _make_segmenter(args, cfg, data_dir, views, manifest)
    prompts = PromptSet(points=tuple(_parse_prompt(p) for p in args.prompt))
    if not prompts:
        raise ParseError("at least one --prompt is required")
    view0 = next((v for v in views if v.view_id == args.view), None)
    if view0 is None:
        raise IntegrityError(f"view {args.view} not in dataset")
    result = prop_mod.propagate(cloud, views, [(view0, prompts)], segmenter,
                                cfg.propagation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for object_id, olist in result.point_lists.items():
        object_cloud = prop_mod.export_object_cloud(cloud, olist)
        filtered, report = occlusion_mod.filter_views(
            result.masks[object_id], object_cloud, views, cfg.occlusion)
        result.masks[object_id] = filtered
        report.save(out / f"object_{object_id:02d}_filter.json")
        metas = [colmap_io.ViewMeta(view_id=v.view_id, name=f"view_{v.view_id:04d}",
                                    intrinsics=v.intrinsics, pose=v.pose)
                 for v in views]
        colmap_io.save_colmap_model(object_cloud, metas,
                                    out / f"object_{object_id:02d}_cloud", fmt="text")
    prop_mod.save_masks(result.masks, out / "masks")
    n_acc = sum(1 for m in result.masks[1].values()
                if m.status == MaskStatus.ACCEPTED)
    print(f"segmented {len(result.masks)} object(s); object 1: "
          f"{n_acc}/{len(views)} accepted masks; wrote {out}")
    return 0


def cmd_selfprompt(args, cfg: PipelineConfig) -> int:
    data_dir = Path(args.data)
    views, manifest = _load_dataset(data_dir)
    segmenter = _make_segmenter(args, cfg, data_dir, views, manifest)
    results = selfprompt_mod.self_prompt_dataset(
        [(data_dir.name, views, segmenter, segmenter)], args.text, cfg.selfprompt)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    selfprompt_mod.save_batch_report(results, out)
    ok = [r for r in results if r.status == "ok"]
    print(f"{len(ok)}/{len(results)} scene(s) prompted; report at {out}")
    if ok:
        r = ok[0]
        prompt_flags = " ".join(f"--prompt {u:.1f},{v:.1f},+"
                                for u, v, _ in r.prompts.points)
        print(f"next: segnerf segment --data {data_dir} --view {r.view_id} "
              f"{prompt_flags} --out <dir>")
    return 0


def cmd_train(args, cfg: PipelineConfig) -> int:
    data_dir = Path(args.data)
    views, manifest = _load_dataset(data_dir)
    seg_dir = Path(args.segmentation)
    masks = prop_mod.load_masks(seg_dir / "masks")[args.object_id]
    object_cloud, _ = colmap_io.load_colmap_model(
        seg_dir / f"object_{args.object_id:02d}_cloud")
    tc = cfg.train
    if args.iters is not None:
        tc = field_mod.replace(tc, iters=args.iters)
    result = field_mod.train(views, masks, object_cloud, tc)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    field_mod.save_checkpoint(result.field, out)
    result.save_log(out.with_suffix(".log.jsonl"))
    last_psnr = next((e["psnr"] for e in reversed(result.log) if "psnr" in e), None)
    print(f"trained {tc.iters} iters ({result.depth_mode} depth); "
          f"held-out PSNR {last_psnr if last_psnr is not None else 'n/a'}; "
          f"checkpoint {out}")
    return 0


def _render_path(field_like, args, out: Path, prefix: str = "frame"):
    orbit = _parse_kv(args.orbit) if args.orbit else {"n": 12, "radius": 3.0,
                                                     "height": 1.0}
    poses = editor_mod.camera_path("orbit", **orbit)
    size = args.image_size
    from .scene import CameraIntrinsics
    intr = CameraIntrinsics(fx=size * 1.2, fy=size * 1.2, cx=size / 2 - 0.5,
                            cy=size / 2 - 0.5, width=size, height=size)
    out.mkdir(parents=True, exist_ok=True)
    for i, pose in enumerate(poses):
        rendered = field_mod.render_view(field_like, intr, pose,
                                         n_samples=args.samples)
        rgba = np.concatenate([rendered.rgb, rendered.alpha[..., None]], axis=2)
        Image.fromarray((np.clip(rgba, 0, 1) * 255 + 0.5).astype(np.uint8),
                        mode="RGBA").save(out / f"{prefix}_{i:04d}.png")
    print(f"rendered {len(poses)} frames to {out}")


def cmd_render(args, cfg: PipelineConfig) -> int:
    field_obj = field_mod.load_checkpoint(args.ckpt)
    _render_path(field_obj, args, Path(args.out))
    return 0


def cmd_edit(args, cfg: PipelineConfig) -> int:
    script = editor_mod.load_edit_script(args.script)
    background = field_mod.load_checkpoint(script["background_ckpt"])
    obj = field_mod.load_checkpoint(script["object_ckpt"])
    composite = editor_mod.compose(background, obj,
                                   editor_mod.xform_from_script(script))
    _render_path(composite, args, Path(args.out), prefix="edit")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="segnerf")
    parser.add_argument("--config", help="TOML/JSON pipeline config")
    parser.add_argument("--seed", type=int, help="global seed override")
    parser.add_argument("--backend", choices=["oracle", "bridge"])
    parser.add_argument("--bridge-endpoint", default=None,
                        help="host:port or cmd:<command>")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic ground-truthed dataset")
    p.add_argument("--preset", choices=["sphere", "two-spheres", "sphere-box"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="propagate prompts and filter occlusions")
    p.add_argument("--data", required=True)
    p.add_argument("--prompt", action="append", default=[],
                   help="u,v,+ or u,v,- (repeatable)")
    p.add_argument("--view", type=int, default=0, help="initial view id")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("selfprompt", help="generate initial prompts from text")
    p.add_argument("--data", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_selfprompt)

    p = sub.add_parser("train", help="train the object voxel field")
    p.add_argument("--data", required=True)
    p.add_argument("--segmentation", required=True,
                   help="output dir of the segment command")
    p.add_argument("--object-id", type=int, default=1)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render a camera path from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--orbit", default=None, help="n=12,radius=3,height=1")
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--samples", type=int, default=128)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("edit", help="render an edit-script composition")
    p.add_argument("--script", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--orbit", default=None)
    p.add_argument("--image-size", type=int, default=128)
    p.add_argument("--samples", type=int, default=128)
    p.set_defaults(func=cmd_edit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.backend is not None:
        overrides["backend"] = args.backend
    if args.bridge_endpoint is not None:
        overrides["bridge_endpoint"] = args.bridge_endpoint
    try:
        cfg = load_config(args.config, overrides).seeded()
        return args.func(args, cfg)
    except SegNerfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
