"""COLMAP sparse-model reader/writer (text and binary) and the dataset manifest.

Only SIMPLE_PINHOLE and PINHOLE camera models are accepted; the geometry layer
is distortion-free. The binary layout follows COLMAP's documented format
(little-endian, same field order as colmap/src/base/reconstruction.cc).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .errors import IntegrityError, ParseError, UnsupportedModelError
from .scene import CameraIntrinsics, CameraPose, ViewImage

_SUPPORTED_MODELS = {
    "SIMPLE_PINHOLE": (0, 3),  # f, cx, cy
    "PINHOLE": (1, 4),  # fx, fy, cx, cy
}
_MODEL_BY_ID = {mid: (name, nparams) for name, (mid, nparams) in _SUPPORTED_MODELS.items()}
_KNOWN_MODEL_IDS = {  # full COLMAP table, for a clear unsupported-model message
    0: "SIMPLE_PINHOLE", 1: "PINHOLE", 2: "SIMPLE_RADIAL", 3: "RADIAL", 4: "OPENCV",
    5: "OPENCV_FISHEYE", 6: "FULL_OPENCV", 7: "FOV", 8: "SIMPLE_RADIAL_FISHEYE",
    9: "RADIAL_FISHEYE", 10: "THIN_PRISM_FISHEYE",
}


@dataclass(frozen=True)
class Point3D:
    point_id: int
    xyz: np.ndarray  # (3,)
    rgb: np.ndarray  # (3,) uint8
    error: float
    track: tuple[tuple[int, int], ...]  # (view_id, feature_index)


@dataclass(frozen=True)
class ViewFeatures:
    """2D feature points of one view with their 3D links (-1 = unlinked)."""

    view_id: int
    uv: np.ndarray  # (N, 2)
    point_ids: np.ndarray  # (N,) int64


@dataclass(frozen=True)
class ViewMeta:
    view_id: int
    name: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    camera_id: int = 1


@dataclass(frozen=True)
class SparseCloud:
    points: dict[int, Point3D]
    features: dict[int, ViewFeatures]

    def __post_init__(self):
        self.validate()

    def validate(self):
        for pid, pt in self.points.items():
            for view_id, feat_idx in pt.track:
                feats = self.features.get(view_id)
                if feats is None:
                    raise IntegrityError(f"point {pid} tracks unknown view {view_id}")
                if not (0 <= feat_idx < len(feats.uv)):
                    raise IntegrityError(
                        f"point {pid} tracks feature {feat_idx} of view {view_id}, "
                        f"which has only {len(feats.uv)} features")
                if feats.point_ids[feat_idx] != pid:
                    raise IntegrityError(
                        f"feature {feat_idx} of view {view_id} links to point "
                        f"{feats.point_ids[feat_idx]}, expected {pid}")
        for view_id, feats in self.features.items():
            linked = feats.point_ids[feats.point_ids >= 0]
            for pid in linked:
                if int(pid) not in self.points:
                    raise IntegrityError(f"view {view_id} links dangling point {pid}")

    @property
    def n_points(self) -> int:
        return len(self.points)

    def xyz_array(self, point_ids=None) -> np.ndarray:
        ids = sorted(self.points) if point_ids is None else list(point_ids)
        if not ids:
            return np.zeros((0, 3))
        return np.stack([self.points[i].xyz for i in ids])

    def restrict(self, point_ids) -> "SparseCloud":
        """Sub-cloud of the given points with tracks intact and feature
        indices remapped per view."""
        keep = set(int(p) for p in point_ids)
        new_features: dict[int, ViewFeatures] = {}
        index_map: dict[int, dict[int, int]] = {}
        for view_id, feats in self.features.items():
            sel = [i for i in range(len(feats.uv)) if int(feats.point_ids[i]) in keep]
            index_map[view_id] = {old: new for new, old in enumerate(sel)}
            new_features[view_id] = ViewFeatures(
                view_id=view_id,
                uv=feats.uv[sel].copy() if sel else np.zeros((0, 2)),
                point_ids=feats.point_ids[sel].copy() if sel else np.zeros(0, dtype=np.int64),
            )
        new_points = {}
        for pid in keep:
            pt = self.points[pid]
            track = tuple((v, index_map[v][f]) for v, f in pt.track)
            new_points[pid] = Point3D(pid, pt.xyz, pt.rgb, pt.error, track)
        return SparseCloud(points=new_points, features=new_features)


def _intrinsics_from_params(model_name, width, height, params, path):
    if model_name == "SIMPLE_PINHOLE":
        f, cx, cy = params
        return CameraIntrinsics(fx=f, fy=f, cx=cx, cy=cy, width=int(width), height=int(height))
    if model_name == "PINHOLE":
        fx, fy, cx, cy = params
        return CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=int(width), height=int(height))
    raise UnsupportedModelError(
        f"camera model {model_name} has distortion parameters; only "
        f"SIMPLE_PINHOLE and PINHOLE are supported", path=path)


def qvec_to_rotation(qvec) -> np.ndarray:
    w, x, y, z = np.asarray(qvec, dtype=np.float64)
    n = np.sqrt(w * w + x * x + y * y + z * z)
    w, x, y, z = w / n, x / n, y / n, z / n
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_qvec(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                      (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                      0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    if q[0] < 0:
        q = -q
    return q


# ---------------------------------------------------------------------------
# text format
# ---------------------------------------------------------------------------

def _read_text_lines(path: Path):
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line


def _load_cameras_text(path: Path):
    cameras = {}
    for lineno, line in _read_text_lines(path):
        parts = line.split()
        try:
            cam_id = int(parts[0])
            model = parts[1]
            width, height = int(parts[2]), int(parts[3])
            params = [float(p) for p in parts[4:]]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad camera line: {exc}", path=path, line=lineno)
        if model not in _SUPPORTED_MODELS:
            raise UnsupportedModelError(f"unsupported camera model {model}",
                                        path=path, line=lineno)
        if len(params) != _SUPPORTED_MODELS[model][1]:
            raise ParseError(f"camera model {model} expects "
                             f"{_SUPPORTED_MODELS[model][1]} params, got {len(params)}",
                             path=path, line=lineno)
        cameras[cam_id] = (model, width, height, params)
    return cameras


def _load_images_text(path: Path):
    # Blank lines are significant here: an image with zero features has an
    # empty points2D line. Only comments are skipped.
    images = {}
    lines = [(no, raw.strip()) for no, raw in
             enumerate(path.read_text().splitlines(), start=1)
             if not raw.strip().startswith("#")]
    while lines and not lines[-1][1]:
        lines.pop()
    i = 0
    while i < len(lines):
        lineno, line = lines[i]
        if not line:
            raise ParseError("unexpected blank image line", path=path, line=lineno)
        parts = line.split()
        try:
            image_id = int(parts[0])
            qvec = [float(x) for x in parts[1:5]]
            tvec = [float(x) for x in parts[5:8]]
            camera_id = int(parts[8])
            name = parts[9]
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad image line: {exc}", path=path, line=lineno)
        if i + 1 >= len(lines):
            # trailing empty points2D line stripped above
            pts_lineno, pts_line = lineno + 1, ""
        else:
            pts_lineno, pts_line = lines[i + 1]
        tokens = pts_line.split()
        if len(tokens) % 3 != 0:
            raise ParseError("points2D line length not a multiple of 3",
                             path=path, line=pts_lineno)
        try:
            uv = np.array([[float(tokens[j]), float(tokens[j + 1])]
                           for j in range(0, len(tokens), 3)], dtype=np.float64)
            pids = np.array([int(tokens[j + 2]) for j in range(0, len(tokens), 3)],
                            dtype=np.int64)
        except ValueError as exc:
            raise ParseError(f"bad points2D line: {exc}", path=path, line=pts_lineno)
        if len(tokens) == 0:
            uv = np.zeros((0, 2))
            pids = np.zeros(0, dtype=np.int64)
        images[image_id] = (qvec, tvec, camera_id, name, uv, pids)
        i += 2
    return images


def _load_points_text(path: Path):
    points = {}
    for lineno, line in _read_text_lines(path):
        parts = line.split()
        try:
            pid = int(parts[0])
            xyz = np.array([float(x) for x in parts[1:4]])
            rgb = np.array([int(x) for x in parts[4:7]], dtype=np.uint8)
            error = float(parts[7])
            rest = parts[8:]
            if len(rest) % 2 != 0:
                raise ValueError("odd track length")
            track = tuple((int(rest[j]), int(rest[j + 1])) for j in range(0, len(rest), 2))
        except (ValueError, IndexError) as exc:
            raise ParseError(f"bad point line: {exc}", path=path, line=lineno)
        points[pid] = Point3D(pid, xyz, rgb, error, track)
    return points


# ---------------------------------------------------------------------------
# binary format
# ---------------------------------------------------------------------------

def _read(fid, fmt):
    size = struct.calcsize("<" + fmt)
    data = fid.read(size)
    if len(data) != size:
        raise ParseError("unexpected end of file", path=getattr(fid, "name", None),
                         offset=fid.tell())
    return struct.unpack("<" + fmt, data)


def _load_cameras_binary(path: Path):
    cameras = {}
    with open(path, "rb") as fid:
        (n,) = _read(fid, "Q")
        for _ in range(n):
            cam_id, model_id, width, height = _read(fid, "iiQQ")
            name = _KNOWN_MODEL_IDS.get(model_id)
            if name is None:
                raise ParseError(f"unknown camera model id {model_id}", path=path,
                                 offset=fid.tell())
            if model_id not in _MODEL_BY_ID:
                raise UnsupportedModelError(f"unsupported camera model {name}", path=path)
            nparams = _MODEL_BY_ID[model_id][1]
            params = list(_read(fid, "d" * nparams))
            cameras[cam_id] = (name, width, height, params)
    return cameras


def _load_images_binary(path: Path):
    images = {}
    with open(path, "rb") as fid:
        (n,) = _read(fid, "Q")
        for _ in range(n):
            image_id = _read(fid, "i")[0]
            qvec = list(_read(fid, "dddd"))
            tvec = list(_read(fid, "ddd"))
            camera_id = _read(fid, "i")[0]
            name_bytes = b""
            while True:
                c = fid.read(1)
                if c in (b"", b"\x00"):
                    break
                name_bytes += c
            (n2d,) = _read(fid, "Q")
            uv = np.zeros((n2d, 2))
            pids = np.zeros(n2d, dtype=np.int64)
            for j in range(n2d):
                x, y, pid = _read(fid, "ddq")
                uv[j] = (x, y)
                pids[j] = pid
            images[image_id] = (qvec, tvec, camera_id, name_bytes.decode("utf-8"), uv, pids)
    return images


def _load_points_binary(path: Path):
    points = {}
    with open(path, "rb") as fid:
        (n,) = _read(fid, "Q")
        for _ in range(n):
            pid, x, y, z, r, g, b, error = _read(fid, "QdddBBBd")
            (track_len,) = _read(fid, "Q")
            flat = _read(fid, "ii" * track_len)
            track = tuple((flat[2 * j], flat[2 * j + 1]) for j in range(track_len))
            points[pid] = Point3D(int(pid), np.array([x, y, z]),
                                  np.array([r, g, b], dtype=np.uint8), error, track)
    return points


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def load_colmap_model(path) -> tuple[SparseCloud, list[ViewMeta]]:
    """Load a COLMAP sparse model directory (text or binary)."""
    path = Path(path)
    if (path / "cameras.bin").exists():
        cameras = _load_cameras_binary(path / "cameras.bin")
        images = _load_images_binary(path / "images.bin")
        points = _load_points_binary(path / "points3D.bin")
    elif (path / "cameras.txt").exists():
        cameras = _load_cameras_text(path / "cameras.txt")
        images = _load_images_text(path / "images.txt")
        points = _load_points_text(path / "points3D.txt")
    else:
        raise ParseError("no cameras.txt or cameras.bin found", path=path)

    views = []
    features = {}
    for image_id in sorted(images):
        qvec, tvec, camera_id, name, uv, pids = images[image_id]
        if camera_id not in cameras:
            raise IntegrityError(f"image {image_id} references unknown camera {camera_id}")
        model, width, height, params = cameras[camera_id]
        intr = _intrinsics_from_params(model, width, height, params, path)
        pose = CameraPose(rotation=qvec_to_rotation(qvec), translation=np.asarray(tvec))
        views.append(ViewMeta(view_id=image_id, name=name, intrinsics=intr,
                              pose=pose, camera_id=camera_id))
        features[image_id] = ViewFeatures(view_id=image_id, uv=uv, point_ids=pids)

    cloud = SparseCloud(points=points, features=features)  # validates cross-links
    return cloud, views


def save_colmap_model(cloud: SparseCloud, views: list[ViewMeta], path,
                      fmt: str = "text") -> None:
    """Write a COLMAP sparse model readable by load_colmap_model."""
    cloud.validate()
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if fmt == "text":
        _save_text(cloud, views, path)
    elif fmt == "binary":
        _save_binary(cloud, views, path)
    else:
        raise ValueError(f"format must be 'text' or 'binary', got {fmt!r}")


def _camera_records(views):
    cameras = {}
    for view in views:
        intr = view.intrinsics
        params = [intr.fx, intr.fy, intr.cx, intr.cy]
        cameras[view.camera_id] = ("PINHOLE", intr.width, intr.height, params)
    return cameras


def _save_text(cloud, views, path: Path):
    cameras = _camera_records(views)
    with open(path / "cameras.txt", "w") as f:
        f.write("# Camera list with one line of data per camera:\n")
        f.write("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n")
        for cam_id in sorted(cameras):
            model, w, h, params = cameras[cam_id]
            f.write(f"{cam_id} {model} {w} {h} " + " ".join(repr(float(p)) for p in params) + "\n")
    with open(path / "images.txt", "w") as f:
        f.write("# Image list with two lines of data per image:\n")
        f.write("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n")
        f.write("#   POINTS2D[] as (X, Y, POINT3D_ID)\n")
        for view in sorted(views, key=lambda v: v.view_id):
            q = rotation_to_qvec(view.pose.rotation)
            t = view.pose.translation
            f.write(f"{view.view_id} " + " ".join(repr(float(x)) for x in q)
                    + " " + " ".join(repr(float(x)) for x in t)
                    + f" {view.camera_id} {view.name}\n")
            feats = cloud.features.get(view.view_id)
            if feats is None or len(feats.uv) == 0:
                f.write("\n")
            else:
                f.write(" ".join(f"{float(feats.uv[i, 0])!r} {float(feats.uv[i, 1])!r} "
                                 f"{int(feats.point_ids[i])}"
                                 for i in range(len(feats.uv))) + "\n")
    with open(path / "points3D.txt", "w") as f:
        f.write("# 3D point list with one line of data per point:\n")
        f.write("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n")
        for pid in sorted(cloud.points):
            pt = cloud.points[pid]
            f.write(f"{pid} " + " ".join(repr(float(x)) for x in pt.xyz)
                    + " " + " ".join(str(int(x)) for x in pt.rgb)
                    + f" {float(pt.error)!r} "
                    + " ".join(f"{v} {fi}" for v, fi in pt.track) + "\n")


def _save_binary(cloud, views, path: Path):
    cameras = _camera_records(views)
    with open(path / "cameras.bin", "wb") as f:
        f.write(struct.pack("<Q", len(cameras)))
        for cam_id in sorted(cameras):
            model, w, h, params = cameras[cam_id]
            f.write(struct.pack("<iiQQ", cam_id, _SUPPORTED_MODELS[model][0], w, h))
            f.write(struct.pack("<" + "d" * len(params), *params))
    with open(path / "images.bin", "wb") as f:
        f.write(struct.pack("<Q", len(views)))
        for view in sorted(views, key=lambda v: v.view_id):
            q = rotation_to_qvec(view.pose.rotation)
            t = view.pose.translation
            f.write(struct.pack("<i", view.view_id))
            f.write(struct.pack("<dddd", *q))
            f.write(struct.pack("<ddd", *t))
            f.write(struct.pack("<i", view.camera_id))
            f.write(view.name.encode("utf-8") + b"\x00")
            feats = cloud.features.get(view.view_id)
            n2d = 0 if feats is None else len(feats.uv)
            f.write(struct.pack("<Q", n2d))
            for i in range(n2d):
                f.write(struct.pack("<ddq", feats.uv[i, 0], feats.uv[i, 1],
                                    int(feats.point_ids[i])))
    with open(path / "points3D.bin", "wb") as f:
        f.write(struct.pack("<Q", len(cloud.points)))
        for pid in sorted(cloud.points):
            pt = cloud.points[pid]
            f.write(struct.pack("<QdddBBBd", pid, *pt.xyz, *(int(c) for c in pt.rgb),
                                pt.error))
            f.write(struct.pack("<Q", len(pt.track)))
            for v, fi in pt.track:
                f.write(struct.pack("<ii", v, fi))


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------

MANIFEST_VERSION = 1


def save_manifest(views: list[ViewImage], root, depth_scale: float = 0.001,
                  colmap_dir: Optional[str] = None, pose_source: str = "manifest",
                  instance_dir: Optional[str] = None) -> Path:
    """Write images (+ optional 16-bit depth PNGs) and a manifest JSON.

    Depth PNGs store millimeter-like integer units; depth_scale converts one
    PNG unit to scene units (default 0.001 = millimeters).
    """
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for view in views:
        img_rel = f"images/view_{view.view_id:04d}.png"
        Image.fromarray((np.clip(view.rgb, 0, 1) * 255 + 0.5).astype(np.uint8)).save(
            root / img_rel)
        entry = {
            "view_id": view.view_id,
            "image": img_rel,
            "intrinsics": {
                "fx": view.intrinsics.fx, "fy": view.intrinsics.fy,
                "cx": view.intrinsics.cx, "cy": view.intrinsics.cy,
                "width": view.intrinsics.width, "height": view.intrinsics.height,
            },
            "pose": {
                "rotation": view.pose.rotation.tolist(),
                "translation": view.pose.translation.tolist(),
            },
        }
        if view.depth is not None:
            (root / "depth").mkdir(exist_ok=True)
            depth_rel = f"depth/view_{view.view_id:04d}.png"
            quantized = np.round(view.depth / depth_scale).astype(np.uint16)
            Image.fromarray(quantized).save(root / depth_rel)
            entry["depth"] = depth_rel
        entries.append(entry)
    manifest = {
        "version": MANIFEST_VERSION,
        "depth_scale": depth_scale,
        "pose_source": pose_source,
        "views": entries,
    }
    if colmap_dir is not None:
        manifest["colmap"] = colmap_dir
    if instance_dir is not None:
        manifest["instances"] = instance_dir
    out = root / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2))
    return out


def load_manifest(manifest_path) -> tuple[list[ViewImage], dict]:
    """Load views per the manifest; returns (views, raw manifest dict)."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}", path=manifest_path)
    if manifest.get("version") != MANIFEST_VERSION:
        raise ParseError(f"unsupported manifest version {manifest.get('version')}",
                         path=manifest_path)
    pose_source = manifest.get("pose_source", "manifest")
    if pose_source not in ("manifest", "colmap"):
        raise ParseError(f"pose_source must be 'manifest' or 'colmap', got {pose_source!r}",
                         path=manifest_path)
    root = manifest_path.parent
    depth_scale = float(manifest.get("depth_scale", 0.001))

    colmap_poses = {}
    if pose_source == "colmap":
        if "colmap" not in manifest:
            raise ParseError("pose_source=colmap but no colmap directory in manifest",
                             path=manifest_path)
        _, metas = load_colmap_model(root / manifest["colmap"])
        colmap_poses = {m.view_id: m.pose for m in metas}

    views = []
    for entry in manifest["views"]:
        view_id = int(entry["view_id"])
        rgb = np.asarray(Image.open(root / entry["image"]).convert("RGB"),
                         dtype=np.float64) / 255.0
        intr = CameraIntrinsics(**entry["intrinsics"])
        if pose_source == "colmap":
            if "pose" in entry:
                raise ParseError(f"view {view_id} carries a manifest pose but "
                                 "pose_source=colmap; mixing is rejected",
                                 path=manifest_path)
            if view_id not in colmap_poses:
                raise IntegrityError(f"view {view_id} missing from COLMAP model")
            pose = colmap_poses[view_id]
        else:
            pose = CameraPose(rotation=np.asarray(entry["pose"]["rotation"]),
                              translation=np.asarray(entry["pose"]["translation"]))
        depth = None
        if "depth" in entry:
            raw = np.asarray(Image.open(root / entry["depth"]), dtype=np.float64)
            depth = raw * depth_scale
        views.append(ViewImage(view_id=view_id, rgb=rgb, intrinsics=intr,
                               pose=pose, depth=depth))
    return views, manifest
