"""2D open-vocabulary segmentation backends and the mask wire encoding."""

from __future__ import annotations

import json
import threading
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from ..errors import BackendError, SchemaError
from ..scene import CameraView, Mask2D
from .http import JsonHttpClient
from .vlm import png_base64


class SegBackend(Protocol):
    def segment(self, view: CameraView, label: str) -> list[Mask2D]: ...


def rle_encode(bitmap: np.ndarray) -> dict:
    """Row-major run lengths, alternating off/on, starting with an off run."""
    flat = np.asarray(bitmap, dtype=bool).ravel()
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0]:
        runs = [0] + runs
    return {"size": [int(bitmap.shape[0]), int(bitmap.shape[1])], "counts": runs}


def rle_decode(rle: dict) -> np.ndarray:
    try:
        h, w = (int(x) for x in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed RLE mask ({exc})", rle) from None
    if any(c < 0 for c in counts) or sum(counts) != h * w:
        raise SchemaError(f"RLE counts do not cover a {h}x{w} mask", rle)
    values = np.arange(len(counts)) % 2 == 1
    return np.repeat(values, counts).reshape(h, w)


def _decode_for_view(rle: dict, view: CameraView) -> Mask2D:
    bitmap = rle_decode(rle)
    if bitmap.shape != (view.height, view.width):
        raise SchemaError(f"mask size {bitmap.shape} does not match view {view.view_id}", rle["size"])
    return Mask2D(view.view_id, bitmap)


class WireSeg:
    """POST ``{image, label, thresholds}`` -> ``{masks: [rle], scores: [float]}``."""

    def __init__(self, client: JsonHttpClient, *, path: str = "", box_threshold: float = 0.3, text_threshold: float = 0.25):
        self.client = client
        self.path = path
        self.thresholds = {"box": box_threshold, "text": text_threshold}

    def segment(self, view: CameraView, label: str) -> list[Mask2D]:
        if view.image is None:
            raise BackendError(f"view {view.view_id} has no image to segment")
        reply = self.client.post(
            self.path, {"image": png_base64(view.image), "label": label, "thresholds": self.thresholds}
        )
        if not isinstance(reply, dict) or set(reply) != {"masks", "scores"}:
            raise SchemaError("segmentation reply must have exactly 'masks' and 'scores'", reply)
        if len(reply["masks"]) != len(reply["scores"]):
            raise SchemaError("masks and scores differ in length", reply["scores"])
        return [_decode_for_view(rle, view) for rle in reply["masks"]]


class ScriptedSeg:
    """Fixed responses keyed by ``(view_id, label)``; unknown keys yield no masks."""

    def __init__(self, responses: dict[tuple[int, str], list[dict]]):
        self.responses = responses

    @classmethod
    def from_json(cls, data: dict, scene_id: Optional[str] = None) -> "ScriptedSeg":
        """Items may carry a ``scene_id``; with ``scene_id`` given, others are skipped."""
        responses: dict[tuple[int, str], list[dict]] = {}
        for item in data.get("responses", []):
            if scene_id is not None and item.get("scene_id", scene_id) != scene_id:
                continue
            key = (int(item["view_id"]), item["label"])
            if key in responses and responses[key] != item["masks"]:
                raise SchemaError(f"conflicting segmentation fixtures for view {key[0]}, {key[1]!r}", item)
            responses[key] = item["masks"]
        return cls(responses)

    @classmethod
    def from_file(cls, path: str | Path, scene_id: Optional[str] = None) -> "ScriptedSeg":
        return cls.from_json(json.loads(Path(path).read_text()), scene_id)

    def segment(self, view: CameraView, label: str) -> list[Mask2D]:
        return [_decode_for_view(r, view) for r in self.responses.get((view.view_id, label), [])]


class RecordingSeg:
    """Wraps a backend and captures masks in ``ScriptedSeg`` format."""

    def __init__(self, inner: SegBackend, scene_id: Optional[str] = None):
        self.inner = inner
        self.scene_id = scene_id
        self.log: list[dict] = []
        self._lock = threading.Lock()

    def segment(self, view: CameraView, label: str) -> list[Mask2D]:
        masks = self.inner.segment(view, label)
        item = {"view_id": int(view.view_id), "label": label, "masks": [rle_encode(m.bitmap) for m in masks]}
        if self.scene_id is not None:
            item["scene_id"] = self.scene_id
        with self._lock:
            self.log.append(item)
        return masks

    def responses(self) -> list[dict]:
        unique = {json.dumps(e, sort_keys=True): e for e in self.log}
        return [unique[k] for k in sorted(unique)]


class FailingSeg:
    """Raises for the listed views; delegates the rest (failure-path testing)."""

    def __init__(self, inner: Optional[SegBackend], fail_views: set[int] | None = None):
        self.inner = inner
        self.fail_views = fail_views

    def segment(self, view: CameraView, label: str) -> list[Mask2D]:
        if self.fail_views is None or view.view_id in self.fail_views or self.inner is None:
            raise BackendError(f"segmentation failed on view {view.view_id}")
        return self.inner.segment(view, label)
