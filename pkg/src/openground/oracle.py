"""Backends that answer from dense ground truth.

They stand in for the hosted models on synthetic scenes: the VLM oracle sees
only what a request exposes (query text, step label, annotated entries in
the images) and resolves it against ground-truth instances; the
segmentation oracle returns exact per-instance masks. Record their traffic
with ``RecordingVlm``/``RecordingSeg`` to produce replayable fixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .clients.replies import ChainReply, ParsedObjects, serialize_reply
from .clients.vlm import Annotation, VlmRequest
from .errors import BackendError
from .scene import AxisAlignedBox3D, CameraView, Mask2D, Scene, VisibilityConfig, box_iou_3d, project_points, visible_points


@dataclass
class GtInstance:
    index: int
    name: str
    label: str
    parent: Optional[str]
    attributes: dict
    points: np.ndarray
    box: AxisAlignedBox3D


class GroundTruth:
    def __init__(self, instances: Sequence[GtInstance], queries: Sequence[dict], n_points: int):
        self.instances = list(instances)
        self.by_name = {i.name: i for i in self.instances}
        self.queries = {q["query"]: q for q in queries}
        self.owner = np.full(n_points, -1, dtype=np.int64)
        for inst in self.instances:
            self.owner[inst.points] = inst.index

    @classmethod
    def from_json(cls, data: dict, n_points: int) -> "GroundTruth":
        insts = [
            GtInstance(
                int(d["index"]), d["name"], d["label"], d.get("parent"), dict(d.get("attributes", {})),
                np.asarray(d["point_indices"], dtype=np.int64), AxisAlignedBox3D.from_json(d["box"]),
            )
            for d in data["instances"]
        ]
        return cls(insts, data.get("queries", []), n_points)

    @classmethod
    def from_file(cls, path: str | Path, scene: Scene) -> "GroundTruth":
        return cls.from_json(json.loads(Path(path).read_text()), len(scene.cloud))

    @classmethod
    def from_synthetic(cls, synth) -> "GroundTruth":
        return cls.from_json(synth.gt_json(), len(synth.scene.cloud))

    def query(self, text: str) -> dict:
        try:
            return self.queries[text]
        except KeyError:
            raise BackendError(f"oracle has no ground truth for query {text!r}") from None

    def match(self, ann: Annotation) -> Optional[GtInstance]:
        """Ground-truth instance an annotated entry depicts (point majority, else box IoU)."""
        pts = np.asarray(ann.points if ann.points is not None else [], dtype=np.int64)
        if len(pts):
            owners = self.owner[pts]
            owners = owners[owners >= 0]
            if len(owners):
                return self.instances[int(np.bincount(owners).argmax())]
        if ann.box3d is None:
            return None
        ious = [box_iou_3d(ann.box3d, i.box) for i in self.instances]
        return self.instances[int(np.argmax(ious))] if ious and max(ious) > 0 else None


def _cf(x: str) -> str:
    return x.strip().casefold()


class OracleVlm:
    """Answers the four prompt templates from ground truth."""

    def __init__(self, gt: GroundTruth):
        self.gt = gt

    def complete(self, request: VlmRequest) -> str:
        handler = getattr(self, "_" + request.template_id, None)
        if handler is None:
            raise BackendError(f"oracle cannot answer template {request.template_id!r}")
        return serialize_reply(request.template_id, handler(request))

    def _objects_parsing(self, req):
        spec = self.gt.query(req.bindings["query"])
        return ParsedObjects(spec["chain"][-1], tuple(spec["chain"][:-1]))

    def _task_chain(self, req):
        spec = self.gt.query(req.bindings["query"])
        labels = req.context["labels"]
        rank = {_cf(x): k for k, x in enumerate(spec["chain"])}
        rel = labels[:-1]
        order = sorted(range(len(rel)), key=lambda i: (rank.get(_cf(rel[i]), -1), i))
        seq = tuple((rel[i], i) for i in order) + ((labels[-1], -1),)
        return ChainReply("reference objects first, following the containment in the query", seq)

    def _step(self, spec, label):
        for step in spec["steps"]:
            if _cf(step["label"]) == _cf(label):
                return step
        return None

    def _conditions(self, req):
        spec = self.gt.query(req.bindings["query"])
        label = req.context["step_label"]
        step = self._step(spec, label)
        if step is None:
            return [f"it is a {label}"]
        return [c["text"] for c in step["conditions"]]

    def _reasoning(self, req):
        spec = self.gt.query(req.bindings["query"])
        known = {c["text"]: c for step in spec["steps"] for c in step["conditions"]}
        anns = [a for im in req.images for a in im.annotations]
        candidates = req.context["candidates"]
        report = {}
        for cid in candidates:
            ann = next((a for a in anns if a.entry_id == cid and a.role == "candidate"), None)
            inst = self.gt.match(ann) if ann is not None else None
            met = []
            if inst is not None:
                for text in req.context["conditions"]:
                    cond = known.get(text)
                    if cond is not None and self._holds(inst, cond, anns, set(candidates)):
                        met.append(text)
            report[cid] = met
        return report

    def _holds(self, inst: GtInstance, cond: dict, anns, candidates) -> bool:
        kind = cond["kind"]
        if kind == "label":
            return _cf(inst.label) == _cf(cond["value"])
        if kind == "attribute":
            return inst.attributes.get(cond["key"]) == cond["value"]
        if kind == "relation":
            parent = self.gt.by_name.get(inst.parent) if inst.parent else None
            if parent is None:
                return False
            refs = {a.entry_id: a for a in anns if a.entry_id not in candidates and _cf(a.label) == _cf(cond["ref_label"])}
            if len(refs) == 1:
                ref = self.gt.match(next(iter(refs.values())))
                return ref is not None and ref.name == parent.name
            # no single marked reference: only the category of the parent is checkable
            return _cf(parent.label) == _cf(cond["ref_label"])
        return False


class OracleSeg:
    """Exact masks: pixels whose visible points all belong to one instance of ``label``."""

    def __init__(self, scene: Scene, gt: GroundTruth, vis: VisibilityConfig = VisibilityConfig(), min_pixels: int = 1):
        self.scene = scene
        self.gt = gt
        self.vis = vis
        self.min_pixels = min_pixels
        self._owners: dict[int, np.ndarray] = {}

    def _pixel_owner(self, view: CameraView) -> np.ndarray:
        if view.view_id not in self._owners:
            vis = visible_points(self.scene, view.view_id, self.vis)
            cols, rows, _, _ = project_points(self.scene.cloud.points[vis], view)
            pix = rows * view.width + cols
            inst = self.gt.owner[vis]
            owner = np.full(view.width * view.height, -1, dtype=np.int64)
            first = np.full(view.width * view.height, -3, dtype=np.int64)
            first[pix] = inst
            mixed = np.zeros(view.width * view.height, dtype=bool)
            mixed[pix[first[pix] != inst]] = True
            owner[pix] = first[pix]
            owner[mixed] = -2
            self._owners[view.view_id] = owner.reshape(view.height, view.width)
        return self._owners[view.view_id]

    def segment(self, view: CameraView, label: str) -> list[Mask2D]:
        owner = self._pixel_owner(self.scene.view(view.view_id))
        masks = []
        for inst in self.gt.instances:
            if _cf(inst.label) != _cf(label):
                continue
            bitmap = owner == inst.index
            if bitmap.sum() >= self.min_pixels:
                masks.append(Mask2D(view.view_id, bitmap))
        return masks
