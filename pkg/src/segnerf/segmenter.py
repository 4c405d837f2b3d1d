"""Pluggable 2D segmentation / text-to-box interfaces.

Two backends:
- OracleSegmenter: answers from ground-truth instance maps (synthetic scenes).
- BridgeSegmenter: newline-delimited JSON over a TCP socket or a stdio
  subprocess, for wrapping external neural models.

Wire protocol (proto 1), one JSON object per line:
  -> {"id": n, "op": "hello", "proto": 1}
  <- {"id": n, "proto": 1}
  -> {"id": n, "op": "segment", "image": <base64 PNG>,
      "points": [[u, v, 1|0], ...], "box": [u0, v0, u1, v1] | null}
  <- {"id": n, "mask": {"size": [H, W], "counts": [...]}, "score": s}
  -> {"id": n, "op": "detect", "image": <base64 PNG>, "text": "..."}
  <- {"id": n, "boxes": [{"xyxy": [u0, v0, u1, v1], "score": s}, ...]}
  error replies: {"id": n | null, "error": {"code": "...", "message": "..."}}

Masks travel as row-major run-length counts starting with the number of zero
pixels (COCO-style uncompressed counts, row-major order).
"""

from __future__ import annotations

import base64
import io
import json
import shlex
import socket
import subprocess
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from .errors import ProtocolError, TransportError
from .scene import Mask, MaskStatus, ViewImage
from .synthetic import RenderedScene, oracle_boxes, oracle_segment

PROTO_VERSION = 1


@dataclass(frozen=True)
class PromptSet:
    """Point and box prompts for one view. Points are (u, v, positive)."""

    points: tuple[tuple[float, float, bool], ...] = ()
    box: Optional[tuple[float, float, float, float]] = None

    def __post_init__(self):
        if self.box is not None:
            u0, v0, u1, v1 = self.box
            if not (u0 <= u1 and v0 <= v1):
                raise ValueError(f"box {self.box} is not well-ordered")

    def __bool__(self):
        return bool(self.points) or self.box is not None

    @property
    def positives(self) -> list[tuple[float, float]]:
        return [(u, v) for u, v, pos in self.points if pos]

    def validate_for(self, view: ViewImage):
        w, h = view.intrinsics.width, view.intrinsics.height
        for u, v, _ in self.points:
            if not (-0.5 <= u <= w - 0.5 and -0.5 <= v <= h - 0.5):
                raise ValueError(f"prompt ({u}, {v}) outside image {w}x{h}")
        if self.box is not None:
            u0, v0, u1, v1 = self.box
            if not (-0.5 <= u0 and u1 <= w - 0.5 and -0.5 <= v0 and v1 <= h - 0.5):
                raise ValueError(f"box {self.box} outside image {w}x{h}")


# ---------------------------------------------------------------------------
# RLE codec
# ---------------------------------------------------------------------------

def encode_rle(bits: np.ndarray) -> dict:
    """Row-major run-length counts, first run counts zeros (possibly 0)."""
    flat = np.asarray(bits, dtype=bool).ravel()
    if flat.size == 0:
        return {"size": list(bits.shape), "counts": []}
    changes = np.nonzero(np.diff(flat))[0] + 1
    boundaries = np.concatenate([[0], changes, [flat.size]])
    counts = np.diff(boundaries).tolist()
    if flat[0]:
        counts = [0] + counts
    return {"size": [int(bits.shape[0]), int(bits.shape[1])], "counts": counts}


def decode_rle(rle: dict) -> np.ndarray:
    h, w = rle["size"]
    counts = rle["counts"]
    total = sum(counts)
    if total != h * w:
        raise ProtocolError(f"RLE counts sum to {total}, expected {h * w}")
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    value = False
    for c in counts:
        if value:
            flat[pos:pos + c] = True
        pos += c
        value = not value
    return flat.reshape(h, w)


def encode_image(rgb: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray((np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8)).save(buf, "PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

class OracleSegmenter:
    """Deterministic ground-truth backend over a rendered synthetic scene.

    label_map maps detector text queries to instance ids. An optional
    boundary_noise_px erodes/dilates oracle masks to emulate imperfect
    segmentation.
    """

    def __init__(self, rendered: RenderedScene, label_map: Optional[dict] = None,
                 boundary_noise_px: int = 0, seed: int = 0):
        self._rendered = rendered
        self._label_map = dict(label_map or {})
        self._noise = int(boundary_noise_px)
        self._rng = np.random.default_rng(seed)

    def segment(self, view: ViewImage, prompts: PromptSet) -> Mask:
        if not prompts:
            raise ValueError("prompts must be non-empty")
        prompts.validate_for(view)
        imap = self._rendered.instance_map(view.view_id)
        mask = oracle_segment(imap, prompts.points, prompts.box)
        bits = mask.bits
        if self._noise > 0:
            from scipy import ndimage
            n = int(self._rng.integers(-self._noise, self._noise + 1))
            if n > 0:
                bits = ndimage.binary_dilation(bits, iterations=n)
            elif n < 0:
                bits = ndimage.binary_erosion(bits, iterations=-n)
        return Mask(view_id=view.view_id, bits=bits, score=mask.score,
                    status=MaskStatus.ACCEPTED)

    def detect_boxes(self, view: ViewImage, text: str) -> list[tuple[tuple, float]]:
        if not text:
            raise ValueError("text must be non-empty")
        instance_id = self._label_map.get(text)
        if instance_id is None:
            return []
        return oracle_boxes(self._rendered.instance_map(view.view_id), instance_id)


class _NdjsonTransport:
    """One-request-in-flight NDJSON channel over TCP or a subprocess."""

    def __init__(self, endpoint: str, timeout: float):
        self.timeout = timeout
        self._proc = None
        self._sock = None
        try:
            if endpoint.startswith("cmd:"):
                self._proc = subprocess.Popen(
                    shlex.split(endpoint[4:]), stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE, text=True, bufsize=1)
                self._write = self._proc.stdin.write
                self._flush = self._proc.stdin.flush
                self._readline = self._proc.stdout.readline
            else:
                host, _, port = endpoint.rpartition(":")
                self._sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                                      timeout=timeout)
                self._sock.settimeout(timeout)
                self._rfile = self._sock.makefile("r", encoding="utf-8")
                self._wfile = self._sock.makefile("w", encoding="utf-8")
                self._write = self._wfile.write
                self._flush = self._wfile.flush
                self._readline = self._rfile.readline
        except (OSError, ValueError) as exc:
            raise TransportError(f"cannot reach bridge at {endpoint!r}: {exc}")

    def round_trip(self, request: dict) -> dict:
        try:
            self._write(json.dumps(request) + "\n")
            self._flush()
            line = self._readline()
        except (OSError, BrokenPipeError, socket.timeout) as exc:
            raise TransportError(f"bridge transport failed: {exc}")
        if not line:
            raise TransportError("bridge closed the connection")
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"bridge reply is not valid JSON: {exc}")
        if not isinstance(reply, dict):
            raise ProtocolError("bridge reply is not a JSON object")
        return reply

    def close(self):
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=5)


class BridgeSegmenter:
    """Wire-protocol client; endpoint is "host:port" or "cmd:<command line>"."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        if not endpoint:
            raise ValueError("bridge backend requires an endpoint")
        self.endpoint = endpoint
        self.timeout = timeout
        self._transport = _NdjsonTransport(endpoint, timeout)
        self._next_id = 0
        reply = self._call({"op": "hello", "proto": PROTO_VERSION})
        if reply.get("proto") != PROTO_VERSION:
            raise ProtocolError(f"bridge speaks proto {reply.get('proto')!r}, "
                                f"expected {PROTO_VERSION}")

    def _call(self, request: dict) -> dict:
        self._next_id += 1
        request = {"id": self._next_id, **request}
        reply = self._transport.round_trip(request)
        if "error" in reply:
            err = reply["error"]
            raise ProtocolError(f"bridge error {err.get('code')}: {err.get('message')}")
        if reply.get("id") != request["id"]:
            raise ProtocolError(f"reply id {reply.get('id')} does not match "
                                f"request id {request['id']}")
        return reply

    def segment(self, view: ViewImage, prompts: PromptSet) -> Mask:
        if not prompts:
            raise ValueError("prompts must be non-empty")
        prompts.validate_for(view)
        reply = self._call({
            "op": "segment",
            "image": encode_image(view.rgb),
            "points": [[float(u), float(v), 1 if pos else 0]
                       for u, v, pos in prompts.points],
            "box": list(prompts.box) if prompts.box is not None else None,
        })
        if "mask" not in reply:
            raise ProtocolError("segment reply carries no mask")
        try:
            bits = decode_rle(reply["mask"])
        except (KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed RLE mask: {exc}")
        if bits.shape != view.shape:
            raise ProtocolError(f"mask shape {bits.shape} does not match view "
                                f"{view.shape}")
        score = float(reply.get("score", 1.0))
        return Mask(view_id=view.view_id, bits=bits, score=min(max(score, 0.0), 1.0),
                    status=MaskStatus.ACCEPTED)

    def detect_boxes(self, view: ViewImage, text: str) -> list[tuple[tuple, float]]:
        if not text:
            raise ValueError("text must be non-empty")
        reply = self._call({"op": "detect", "image": encode_image(view.rgb),
                            "text": text})
        if "boxes" not in reply or not isinstance(reply["boxes"], list):
            raise ProtocolError("detect reply carries no box list")
        out = []
        try:
            for b in reply["boxes"]:
                out.append((tuple(float(x) for x in b["xyxy"]), float(b["score"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"malformed box entry: {exc}")
        out.sort(key=lambda x: -x[1])
        return out

    def close(self):
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_segmenter(backend: str, rendered: Optional[RenderedScene] = None,
                   endpoint: Optional[str] = None, timeout: float = 30.0,
                   label_map: Optional[dict] = None):
    if backend == "oracle":
        if rendered is None:
            raise ValueError("oracle backend needs a rendered scene")
        return OracleSegmenter(rendered, label_map=label_map)
    if backend == "bridge":
        return BridgeSegmenter(endpoint or "", timeout=timeout)
    raise ValueError(f"unknown backend {backend!r}")
