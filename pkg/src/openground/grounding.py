"""Ground a single task-chain step among lookup-table candidates."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .ace import CoverageState, coverage_gains
from .clients.prompts import format_labels
from .clients.vlm import Annotation, ViewImage, VlmBackend, ask
from .errors import SchemaError
from .olt import ObjectLookupTable
from .scene import PointSet, Scene, VisibilityConfig, visible_points

ANNOTATION_MODES = ("ours", "all_mentioned", "candidates_only")
STOP_EPS = 1e-9


@dataclass(frozen=True)
class GroundingConfig:
    max_views: int = 3
    alpha: float = 0.9
    annotation_mode: str = "ours"

    def __post_init__(self):
        if self.max_views < 1:
            raise ValueError("max_views must be >= 1")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.annotation_mode not in ANNOTATION_MODES:
            raise ValueError(f"annotation_mode must be one of {ANNOTATION_MODES}")


# --- view selection ----------------------------------------------------------


def pick_incumbent(gains: Sequence[tuple[int, float, float]], alpha: float) -> Optional[tuple[int, float, float]]:
    """Scan ``(view_id, primary, secondary)`` in order with the soft-margin rule.

    A view replaces the incumbent if its primary gain is strictly higher, or
    if it is above ``alpha`` times the best primary gain and its secondary
    gain beats the incumbent's.
    """
    best_p = best_s = 0.0
    chosen = None
    for vid, dp, ds in gains:
        if dp > best_p or (dp > alpha * best_p and ds > best_s):
            best_p = max(dp, best_p)
            best_s = ds
            chosen = (vid, dp, ds)
    return chosen


def lexicographic_select(
    mat: np.ndarray,
    view_ids: Sequence[int],
    candidate: PointSet,
    grounded: Sequence[PointSet],
    max_views: int,
    alpha: float,
) -> list[int]:
    ids = np.asarray(view_ids)
    order = np.argsort(ids, kind="stable")
    cand = CoverageState([np.asarray(candidate, dtype=np.int64)])
    prev = CoverageState([np.asarray(g, dtype=np.int64) for g in grounded])
    if not len(cand.objects[0]):
        return []
    taken = np.zeros(len(ids), dtype=bool)
    for _ in range(max_views):
        primary = coverage_gains(mat, cand)
        secondary = coverage_gains(mat, prev)
        pick = pick_incumbent(
            [(r, primary[r], secondary[r]) for r in order if not taken[r]], alpha
        )
        if pick is None or (pick[1] < STOP_EPS and pick[2] < STOP_EPS):
            break
        row = pick[0]
        taken[row] = True
        cand.views.append(int(ids[row]))
        cand.observed[0] |= mat[row, cand.objects[0]]
        for i, pts in enumerate(prev.objects):
            prev.observed[i] |= mat[row, pts]
        if cand.fully_observed() and prev.fully_observed():
            break
    return cand.views


def select_perspectives_step(
    scene: Scene,
    candidate: tuple[int, PointSet],
    grounded: Sequence[tuple[int, PointSet]],
    config: GroundingConfig = GroundingConfig(),
    vis: VisibilityConfig = VisibilityConfig(),
) -> list[int]:
    return lexicographic_select(
        scene.visibility_matrix(vis),
        scene.view_ids,
        candidate[1],
        [p for _, p in grounded],
        config.max_views,
        config.alpha,
    )


def union_perspectives(per_candidate: Sequence[Sequence[int]]) -> list[int]:
    return list(dict.fromkeys(v for views in per_candidate for v in views))


# --- annotation --------------------------------------------------------------


def annotation_targets(
    mode: str,
    table: ObjectLookupTable,
    grounded_ids: Sequence[int],
    candidate_ids: Sequence[int],
    mentioned_labels: Sequence[str] = (),
) -> list[tuple[int, str]]:
    """``(entry_id, role)`` pairs to draw, each id at most once."""
    out: dict[int, str] = {}
    if mode == "ours":
        for i in grounded_ids:
            out.setdefault(i, "grounded")
        for i in candidate_ids:
            out.setdefault(i, "candidate")
    elif mode == "candidates_only":
        for i in candidate_ids:
            out.setdefault(i, "candidate")
    elif mode == "all_mentioned":
        wanted = {x.casefold() for x in mentioned_labels}
        cands = set(candidate_ids)
        for e in table:
            if e.label.casefold() in wanted:
                out[e.id] = "candidate" if e.id in cands else "mentioned"
    else:
        raise ValueError(f"unknown annotation mode {mode!r}")
    return list(out.items())


def annotation_color(entry_id: int) -> tuple[int, int, int]:
    d = hashlib.sha256(str(entry_id).encode()).digest()
    # keep colours away from near-black/near-white
    return tuple(64 + b % 160 for b in d[:3])


def _box2d(scene: Scene, view_id: int, entry_box, points: PointSet, vis: VisibilityConfig):
    view = scene.view(view_id)
    if len(points):
        if not len(np.intersect1d(points, visible_points(scene, view_id, vis), assume_unique=True)):
            return None
    cam = view.to_camera(entry_box.corners())
    front = cam[:, 2] > 0
    if not front.any():
        return None
    cam = cam[front]
    u = view.fx * cam[:, 0] / cam[:, 2] + view.cx
    v = view.fy * cam[:, 1] / cam[:, 2] + view.cy
    x0, x1 = int(np.floor(u.min())), int(np.floor(u.max()))
    y0, y1 = int(np.floor(v.min())), int(np.floor(v.max()))
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, view.width - 1), min(y1, view.height - 1)
    if x0 > x1 or y0 > y1:
        return None
    return (x0, y0, x1, y1)


def render_annotations(
    scene: Scene,
    view_id: int,
    to_annotate: Sequence[tuple[int, str, str, object, PointSet]],
    vis: VisibilityConfig = VisibilityConfig(),
) -> ViewImage:
    """Draw ``label:id`` boxes for ``(id, label, role, box3d, points)`` items.

    Items with no visible point (or whose box projects entirely off-image or
    behind the camera) are skipped.
    """
    from PIL import Image, ImageDraw, ImageFont

    view = scene.view(view_id)
    base = view.image if view.image is not None else np.zeros((view.height, view.width, 3), np.uint8)
    img = Image.fromarray(np.ascontiguousarray(base))
    draw = ImageDraw.Draw(img)
    font = ImageFont.load_default()
    anns = []
    for entry_id, label, role, box3d, points in to_annotate:
        b = _box2d(scene, view_id, box3d, points, vis)
        if b is None:
            continue
        color = annotation_color(entry_id)
        draw.rectangle(b, outline=color, width=2)
        text = f"{label}:{entry_id}"
        draw.text((b[0], max(b[1] - 11, 0)), text, fill=color, font=font)
        anns.append(Annotation(entry_id, label, role, b, box3d, points))
    return ViewImage(view_id, np.asarray(img), tuple(anns))


def raw_image(scene: Scene, view_id: int) -> ViewImage:
    view = scene.view(view_id)
    base = view.image if view.image is not None else np.zeros((view.height, view.width, 3), np.uint8)
    return ViewImage(view_id, base)


# --- VLM reasoning ---------------------------------------------------------


def extract_conditions(
    query: str, related_labels: Sequence[str], step_label: str, vlm: VlmBackend, *, retries: int = 2
) -> list[str]:
    bindings = {"query": query, "related_objects": format_labels(related_labels), "target": f'"{step_label}"'}
    context = {"step_label": step_label, "related": list(related_labels)}
    return ask(vlm, "conditions", bindings, retries=retries, context=context)


@dataclass
class Choice:
    entry_id: int
    report: dict[int, list[str]]
    low_confidence: bool


def choose(candidates: Sequence[int], conditions: Sequence[str], report: dict[int, list[str]]) -> Choice:
    """All-conditions winner; else most conditions met, lowest id (low confidence)."""
    cands = sorted(candidates)
    if len(cands) == 1:
        return Choice(cands[0], report, False)
    need = set(conditions)
    full = [c for c in cands if need <= set(report.get(c, ()))]
    if len(full) == 1:
        return Choice(full[0], report, False)
    pool = full or cands
    best = max(len(set(report.get(c, ())) & need) for c in pool)
    winner = min(c for c in pool if len(set(report.get(c, ())) & need) == best)
    return Choice(winner, report, True)


def reason_and_choose(
    pairs: Sequence[tuple[ViewImage, ViewImage]],
    query: str,
    conditions: Sequence[str],
    candidates: Sequence[int],
    vlm: VlmBackend,
    *,
    retries: int = 2,
) -> Choice:
    """Ask which conditions each candidate meets, from (raw, annotated) view pairs."""
    if not candidates:
        raise ValueError("no candidates")
    if len(candidates) == 1:
        return Choice(candidates[0], {}, False)
    images = [im for pair in pairs for im in pair]
    known = set(candidates)
    allowed = set(conditions)

    def validate(report):
        unknown = sorted(set(report) - known)
        if unknown:
            raise SchemaError(f"reply names non-candidate id(s) {unknown}", unknown)
        for cid, conds in report.items():
            bad = [c for c in conds if c not in allowed]
            if bad:
                raise SchemaError(f"candidate {cid}: conditions not in the extracted list", bad)
        return report

    bindings = {"images": len(images), "query": query, "conditions": json.dumps(list(conditions))}
    context = {"candidates": sorted(candidates), "conditions": list(conditions)}
    report = ask(vlm, "reasoning", bindings, images, retries=retries, validate=validate, context=context)
    return choose(candidates, conditions, report)


@dataclass
class StepOutcome:
    candidates: list[int]
    views: list[int]
    per_candidate_views: dict[int, list[int]]
    conditions: list[str]
    choice: Choice
    annotated: list[ViewImage] = field(default_factory=list)


def ground_step(
    scene: Scene,
    table: ObjectLookupTable,
    query: str,
    step_label: str,
    chain_labels: Sequence[str],
    candidates: Sequence[int],
    grounded: Sequence[tuple[str, int]],
    vlm: VlmBackend,
    config: GroundingConfig = GroundingConfig(),
    vis: VisibilityConfig = VisibilityConfig(),
    mentioned_labels: Sequence[str] = (),
    retries: int = 2,
) -> StepOutcome:
    if not candidates:
        raise ValueError("ground_step needs at least one candidate")
    candidates = sorted(candidates)
    if len(candidates) == 1:
        return StepOutcome(candidates, [], {}, [], Choice(candidates[0], {}, False))
    grounded_pts = [(i, table.points_of(i, scene)) for _, i in grounded]
    per_cand = {
        c: select_perspectives_step(scene, (c, table.points_of(c, scene)), grounded_pts, config, vis)
        for c in candidates
    }
    views = union_perspectives([per_cand[c] for c in candidates])
    targets = annotation_targets(
        config.annotation_mode, table, [i for _, i in grounded], candidates, mentioned_labels
    )
    items = [(i, table[i].label, role, table[i].box, table.points_of(i, scene)) for i, role in targets]
    pairs = [(raw_image(scene, v), render_annotations(scene, v, items, vis)) for v in views]
    conditions = extract_conditions(query, list(chain_labels), step_label, vlm, retries=retries)
    choice = reason_and_choose(pairs, query, conditions, candidates, vlm, retries=retries)
    return StepOutcome(candidates, views, per_cand, conditions, choice, [a for _, a in pairs])
