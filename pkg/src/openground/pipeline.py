"""Walk a task chain: retrieve, enhance when nothing matches, ground, repeat."""

from __future__ import annotations

import dataclasses
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .ace import AceConfig, enhance_detailed
from .clients.embedding import EmbeddingProvider
from .clients.seg import SegBackend
from .clients.vlm import VlmBackend
from .errors import GroundingError, OpenGroundError
from .grounding import GroundingConfig, ground_step
from .io import atomic_write_json, atomic_write_jsonl
from .olt import ObjectLookupTable, retrieve_candidates
from .scene import AxisAlignedBox3D, Scene, VisibilityConfig
from .task_chain import construct_chain, parse_objects

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EngineConfig:
    strategy: str = "full"
    seed: int = 0
    tau_cand: float = 0.9
    ace: AceConfig = AceConfig()
    grounding: GroundingConfig = GroundingConfig()
    visibility: VisibilityConfig = VisibilityConfig()
    use_initial_olt: bool = True
    vlm_retries: int = 2
    timing: bool = True


def with_knobs(config: EngineConfig, **knobs) -> EngineConfig:
    """Apply flat ablation/CLI knobs (``max_views`` sets both view budgets)."""
    ace, grd, vis = config.ace, config.grounding, config.visibility
    top = {}
    for key, value in knobs.items():
        if value is None:
            continue
        if key == "max_views":
            ace = dataclasses.replace(ace, max_views=int(value))
            grd = dataclasses.replace(grd, max_views=int(value))
        elif key == "alpha":
            grd = dataclasses.replace(grd, alpha=float(value))
        elif key == "annotation_mode":
            grd = dataclasses.replace(grd, annotation_mode=str(value))
        elif key == "tau_iou":
            ace = dataclasses.replace(ace, tau_iou=float(value))
        elif key == "fallback_tau":
            ace = dataclasses.replace(ace, fallback_tau=float(value))
        elif key == "coverage":
            ace = dataclasses.replace(ace, maximize_coverage=bool(value))
        elif key == "visibility_mode":
            vis = dataclasses.replace(vis, mode=str(value))
        elif key == "depth_tolerance":
            vis = dataclasses.replace(vis, depth_tolerance=float(value))
        elif key == "initial_olt":
            top["use_initial_olt"] = bool(value)
        elif key in ("strategy", "seed", "tau_cand", "timing", "vlm_retries"):
            top[key] = value
        else:
            raise ValueError(f"unknown knob {key!r}")
    return dataclasses.replace(config, ace=ace, grounding=grd, visibility=vis, **top)


@dataclass
class Backends:
    vlm: VlmBackend
    seg: SegBackend
    embedder: EmbeddingProvider


@dataclass
class StepTrace:
    index: int
    label: str
    ace_invoked: bool = False
    ace_views: list[int] = field(default_factory=list)
    ace_fallback: bool = False
    new_olt_ids: list[int] = field(default_factory=list)
    candidates: list[int] = field(default_factory=list)
    views: list[int] = field(default_factory=list)
    conditions: list[str] = field(default_factory=list)
    condition_report: dict = field(default_factory=dict)
    chosen_id: Optional[int] = None
    low_confidence: bool = False
    status: str = "ok"  # ok | skipped | failed
    wall_ms: Optional[float] = None


@dataclass
class GroundingTrace:
    query: str
    strategy: str
    target_label: str = ""
    relevant_labels: list[str] = field(default_factory=list)
    chain: list[str] = field(default_factory=list)
    steps: list[StepTrace] = field(default_factory=list)
    target_id: Optional[int] = None
    target_box: Optional[dict] = None
    degraded: bool = False
    wall_ms: Optional[float] = None

    @property
    def ace_invocations(self) -> int:
        return sum(s.ace_invoked for s in self.steps)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        for s in out["steps"]:
            s["condition_report"] = {str(k): v for k, v in sorted(s["condition_report"].items())}
        return out


class QueryFailed(GroundingError):
    def __init__(self, message, trace: GroundingTrace):
        super().__init__(message)
        self.trace = trace


def _ms(start: float, config: EngineConfig) -> Optional[float]:
    return round((time.perf_counter() - start) * 1000, 3) if config.timing else None


def ground(
    scene: Scene,
    table: ObjectLookupTable,
    query: str,
    config: EngineConfig,
    backends: Backends,
) -> tuple[AxisAlignedBox3D, GroundingTrace]:
    """Ground ``query``; ``table`` is copied, never mutated."""
    t0 = time.perf_counter()
    table = table.copy() if config.use_initial_olt else ObjectLookupTable()
    trace = GroundingTrace(query, config.strategy)
    retries = config.vlm_retries

    def candidates(label):
        return retrieve_candidates(table, label, backends.embedder, config.tau_cand)

    parsed = parse_objects(query, backends.vlm, retries=retries)
    trace.target_label, trace.relevant_labels = parsed.target_label, list(parsed.relevant_labels)
    counts = {label: len(candidates(label)) for label in parsed.labels}
    chain = construct_chain(query, parsed, counts, config.strategy, backends.vlm, config.seed, retries=retries)
    trace.chain = chain.sequence

    grounded: list[tuple[str, int]] = []
    for idx, label in enumerate(chain.sequence):
        ts = time.perf_counter()
        step = StepTrace(idx, label)
        trace.steps.append(step)
        is_target = idx == len(chain.sequence) - 1
        cands = candidates(label)
        if not cands:
            step.ace_invoked = True
            res = enhance_detailed(
                scene,
                table,
                [(i, table.points_of(i, scene)) for _, i in grounded],
                label,
                backends.seg,
                config.ace,
                config.visibility,
            )
            step.ace_views, step.ace_fallback, step.new_olt_ids = res.views, res.fallback, res.new_ids
            cands = candidates(label)
        step.candidates = cands
        if not cands:
            step.wall_ms = _ms(ts, config)
            if is_target:
                step.status = "failed"
                trace.wall_ms = _ms(t0, config)
                raise QueryFailed(f"no candidates for target {label!r} even after enhancement", trace)
            step.status = "skipped"
            trace.degraded = True
            continue
        outcome = ground_step(
            scene,
            table,
            query,
            label,
            chain.sequence,
            cands,
            grounded,
            backends.vlm,
            config.grounding,
            config.visibility,
            mentioned_labels=parsed.labels,
            retries=retries,
        )
        step.views = outcome.views
        step.conditions = outcome.conditions
        step.condition_report = dict(outcome.choice.report)
        step.chosen_id = outcome.choice.entry_id
        step.low_confidence = outcome.choice.low_confidence
        step.wall_ms = _ms(ts, config)
        grounded.append((label, outcome.choice.entry_id))

    target_id = grounded[-1][1]
    box = table[target_id].box
    trace.target_id, trace.target_box = target_id, box.to_json()
    trace.wall_ms = _ms(t0, config)
    return box, trace


# --- batches ---------------------------------------------------------------


def _run_one(record, scenes, tables, config, backends, trace_dir) -> dict:
    qid = str(record["query_id"])
    t0 = time.perf_counter()
    result = {
        "query_id": qid,
        "scene_id": record.get("scene_id"),
        "box": None,
        "status": "failed",
        "ace_invocations": 0,
        "chain": [],
        "wall_ms": None,
    }
    trace = None
    try:
        scene = scenes[record["scene_id"]]
        table = tables.get(record["scene_id"], ObjectLookupTable())
        box, trace = ground(scene, table, record["query"], config, backends)
        result.update(box=box.to_json(), status="degraded" if trace.degraded else "ok")
    except QueryFailed as exc:
        trace = exc.trace
        result["error"] = {"category": exc.category, "message": str(exc)}
    except (OpenGroundError, KeyError, ValueError) as exc:
        category = getattr(exc, "category", "input")
        result["error"] = {"category": category, "message": str(exc)}
        log.warning("query %s failed: %s", qid, exc)
    if trace is not None:
        result["ace_invocations"] = trace.ace_invocations
        result["chain"] = trace.chain
        if trace_dir is not None:
            path = Path(trace_dir) / f"{qid}.json"
            atomic_write_json(path, trace.to_json())
            result["trace"] = path.name
    result["wall_ms"] = _ms(t0, config)
    return result


def ground_batch(
    scenes: Mapping[str, Scene],
    queries: Sequence[dict],
    config: EngineConfig,
    backends: Backends | Callable[[dict], Backends],
    *,
    tables: Optional[Mapping[str, ObjectLookupTable]] = None,
    trace_dir: Optional[str | Path] = None,
    out_path: Optional[str | Path] = None,
    jobs: int = 1,
) -> list[dict]:
    """Ground every query; failures become records, never exceptions."""
    tables = tables or {}

    def run(record):
        b = backends(record) if callable(backends) else backends
        return _run_one(record, scenes, tables, config, b, trace_dir)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, queries))
    else:
        results = [run(q) for q in queries]
    if out_path is not None:
        atomic_write_jsonl(out_path, results)
    return results
