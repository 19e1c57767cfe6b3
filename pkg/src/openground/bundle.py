"""Scene directories on disk and backend assembly for runs.

A scene directory holds ``manifest.json`` + cloud + images, and optionally
``olt.json`` (initial table), ``gt.json`` (ground truth for oracle backends),
``queries.jsonl``, ``fixtures.json`` (scripted VLM replies) and
``seg_fixtures.json`` (scripted masks).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .clients.embedding import make_embedder
from .clients.seg import RecordingSeg, ScriptedSeg
from .clients.vlm import RecordingVlm, ScriptedVlm
from .clients.wire import WireSettings, wire_backend
from .io import read_jsonl
from .olt import ObjectLookupTable, load_olt
from .oracle import GroundTruth, OracleSeg, OracleVlm
from .pipeline import Backends, EngineConfig, ground_batch
from .scene import Scene, load_scene

BACKENDS = ("wire", "mock", "oracle")
EMBEDDERS = ("exact", "hash", "wire")


@dataclass
class SceneBundle:
    path: Path
    scene: Scene
    table: ObjectLookupTable
    gt: Optional[GroundTruth] = None
    queries: list[dict] = field(default_factory=list)

    @property
    def scene_id(self) -> str:
        return self.scene.scene_id


def load_bundle(directory: str | Path, olt_path: Optional[str | Path] = None) -> SceneBundle:
    directory = Path(directory)
    if not directory.exists():
        raise FileNotFoundError(f"scene directory not found: {directory}")
    scene = load_scene(directory)
    if olt_path is not None:
        if not Path(olt_path).is_file():
            raise FileNotFoundError(f"OLT file not found: {olt_path}")
        table = load_olt(olt_path, scene)
    elif (directory / "olt.json").is_file():
        table = load_olt(directory / "olt.json", scene)
    else:
        table = ObjectLookupTable()
    gt = GroundTruth.from_file(directory / "gt.json", scene) if (directory / "gt.json").is_file() else None
    queries = read_jsonl(directory / "queries.jsonl") if (directory / "queries.jsonl").is_file() else []
    return SceneBundle(directory, scene, table, gt, queries)


def _oracle_gt(bundle: SceneBundle) -> GroundTruth:
    if bundle.gt is None:
        raise FileNotFoundError(f"oracle backends need ground truth: {bundle.path / 'gt.json'} not found")
    return bundle.gt


def make_backends(
    kind: str,
    bundle: SceneBundle,
    *,
    config: EngineConfig = EngineConfig(),
    fixtures: Optional[Sequence[dict]] = None,
    seg_fixtures: Optional[dict] = None,
    embedder: str = "exact",
    settings: Optional[WireSettings] = None,
) -> Backends:
    """Backends for one scene.

    ``mock`` replays scripted VLM fixtures; masks come from scripted
    segmentation fixtures when given, else from the oracle.
    """
    if kind not in BACKENDS:
        raise ValueError(f"unknown backend {kind!r}; choose from {BACKENDS}")
    if embedder == "wire":
        emb = wire_backend("embed", settings or WireSettings.from_env())
    else:
        emb = make_embedder(embedder, seed=config.seed)
    if kind == "wire":
        settings = settings or WireSettings.from_env()
        return Backends(wire_backend("vlm", settings), wire_backend("seg", settings), emb)
    if kind == "oracle":
        gt = _oracle_gt(bundle)
        return Backends(OracleVlm(gt), OracleSeg(bundle.scene, gt, config.visibility), emb)
    if fixtures is None:
        raise ValueError("mock backend needs VLM fixtures")
    vlm = ScriptedVlm(fixtures)
    if seg_fixtures is not None:
        seg = ScriptedSeg.from_json(seg_fixtures, bundle.scene_id)
    else:
        gt = _oracle_gt(bundle)
        seg = OracleSeg(bundle.scene, gt, config.visibility)
    return Backends(vlm, seg, emb)


def read_fixtures(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"fixture file not found: {path}")
    data = json.loads(path.read_text())
    if not isinstance(data, list):
        raise ValueError(f"{path}: fixture file must hold a JSON list")
    return data


@dataclass
class Recording:
    results: list[dict]
    vlm_fixtures: list[dict]
    seg_fixtures: dict


def record_run(
    bundles: Sequence[SceneBundle],
    queries: Sequence[dict],
    config: EngineConfig,
    inner: str = "oracle",
    *,
    embedder: str = "exact",
    settings: Optional[WireSettings] = None,
    trace_dir=None,
    out_path=None,
) -> Recording:
    """Run a batch through recording wrappers and collect replayable fixtures."""
    by_id = {b.scene_id: b for b in bundles}
    recorders = {}
    for sid, b in by_id.items():
        inner_b = make_backends(inner, b, config=config, embedder=embedder, settings=settings)
        recorders[sid] = Backends(RecordingVlm(inner_b.vlm), RecordingSeg(inner_b.seg, sid), inner_b.embedder)

    def factory(record):
        return recorders[record["scene_id"]]

    known = [q for q in queries if q.get("scene_id") in recorders]
    missing = [q["query_id"] for q in queries if q.get("scene_id") not in recorders]
    if missing:
        raise ValueError(f"queries reference unknown scenes: {missing}")
    results = ground_batch(
        {sid: b.scene for sid, b in by_id.items()},
        known,
        config,
        factory,
        tables={sid: b.table for sid, b in by_id.items()},
        trace_dir=trace_dir,
        out_path=out_path,
    )
    vlm = {json.dumps(f, sort_keys=True): f for r in recorders.values() for f in r.vlm.fixtures()}
    seg = [item for sid in sorted(recorders) for item in recorders[sid].seg.responses()]
    return Recording(results, [vlm[k] for k in sorted(vlm)], {"responses": seg})
