"""Active cognition enhancement: perceive objects missing from the lookup table.

Views are chosen greedily to cover the points of already-grounded objects,
2D masks for the wanted label are lifted onto the cloud, overlapping lifts
are merged, sparse outliers dropped, and survivors appended to the table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .clients.seg import SegBackend
from .errors import BackendError, SceneError
from .olt import ObjectLookupTable, extend
from .scene import EMPTY, PointSet, Scene, VisibilityConfig, lift_mask, point_set_iou

log = logging.getLogger(__name__)

GAIN_EPS = 1e-12


@dataclass(frozen=True)
class NoiseFilterConfig:
    neighbor_radius: float = 0.05
    min_neighbors: int = 4


@dataclass(frozen=True)
class AceConfig:
    max_views: int = 3
    tau_iou: float = 0.5
    fallback_tau: float = 0.3
    noise_filter: NoiseFilterConfig = NoiseFilterConfig()
    maximize_coverage: bool = True

    def __post_init__(self):
        if self.max_views < 1:
            raise ValueError("max_views must be >= 1")
        for name in ("tau_iou", "fallback_tau"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class CoverageState:
    """Observed region per object (boolean over the object's points) and chosen views."""

    objects: list[PointSet]
    observed: list[np.ndarray] = field(default_factory=list)
    views: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.observed:
            self.observed = [np.zeros(len(o), dtype=bool) for o in self.objects]

    def region(self, i: int) -> PointSet:
        return self.objects[i][self.observed[i]]

    def fully_observed(self) -> bool:
        return all(obs.all() for obs in self.observed)


def _view_rows(scene: Scene) -> np.ndarray:
    """Row indices of the visibility matrix in ascending view_id order."""
    return np.argsort(np.asarray(scene.view_ids), kind="stable")


def coverage_gains(mat: np.ndarray, state: CoverageState) -> np.ndarray:
    """Summed fraction of still-unobserved object points each view would add."""
    gain = np.zeros(mat.shape[0])
    for pts, obs in zip(state.objects, state.observed):
        if len(pts):
            gain += (mat[:, pts] & ~obs).sum(axis=1) / len(pts)
    return gain


def greedy_coverage_matrix(
    mat: np.ndarray, view_ids: Sequence[int], objects: Sequence[PointSet], max_views: int
) -> CoverageState:
    """Greedy max-coverage over a (views x points) visibility matrix.

    Ties (gains within ``GAIN_EPS``) go to the smallest view id.
    """
    ids = np.asarray(view_ids)
    state = CoverageState([np.asarray(o, dtype=np.int64) for o in objects])
    if not any(len(o) for o in state.objects):
        return state
    available = np.ones(len(ids), dtype=bool)
    for _ in range(max_views):
        gain = coverage_gains(mat, state)
        gain[~available] = -np.inf
        best = gain.max() if len(gain) else 0.0
        if not best > GAIN_EPS:
            break
        ties = np.flatnonzero(gain >= best - GAIN_EPS)
        row = ties[np.argmin(ids[ties])]
        available[row] = False
        state.views.append(int(ids[row]))
        for i, pts in enumerate(state.objects):
            state.observed[i] |= mat[row, pts]
        if state.fully_observed():
            break
    return state


def greedy_coverage(
    scene: Scene, objects: Sequence[PointSet], max_views: int, vis: VisibilityConfig = VisibilityConfig()
) -> CoverageState:
    return greedy_coverage_matrix(scene.visibility_matrix(vis), scene.view_ids, objects, max_views)


def _most_visible(scene: Scene, objects: Sequence[PointSet], max_views: int, vis: VisibilityConfig) -> list[int]:
    """Coverage-off variant: top views by raw count of visible object points."""
    mat = scene.visibility_matrix(vis)
    ids = np.asarray(scene.view_ids)
    counts = np.zeros(len(ids), dtype=np.int64)
    for o in objects:
        if len(o):
            counts += mat[:, o].sum(axis=1)
    rows = sorted((r for r in range(len(ids)) if counts[r] > 0), key=lambda r: (-counts[r], ids[r]))
    return [int(ids[r]) for r in rows[:max_views]]


def fallback_views(scene: Scene, tau: float, vis: VisibilityConfig = VisibilityConfig()) -> list[int]:
    """Scan every view, keeping those whose visible points are at least ``tau`` new."""
    mat = scene.visibility_matrix(vis)
    ids = np.asarray(scene.view_ids)
    seen = np.zeros(mat.shape[1], dtype=bool)
    out = []
    for row in _view_rows(scene):
        visible = mat[row]
        n = visible.sum()
        if n == 0 or (visible & ~seen).sum() / n < tau:
            continue
        out.append(int(ids[row]))
        seen |= visible
    return out


def _select(scene, grounded, config, vis) -> tuple[list[int], bool]:
    if not scene.views:
        raise SceneError(f"scene {scene.scene_id} has no views")
    objects = [pts for _, pts in grounded]
    if config.maximize_coverage:
        views = greedy_coverage(scene, objects, config.max_views, vis).views
    else:
        views = _most_visible(scene, objects, config.max_views, vis)
    if views:
        return views, False
    return fallback_views(scene, config.fallback_tau, vis), True


def select_perspectives_ace(
    scene: Scene,
    grounded: Sequence[tuple[int, PointSet]],
    config: AceConfig = AceConfig(),
    vis: VisibilityConfig = VisibilityConfig(),
) -> list[int]:
    """Greedy coverage views around ``grounded``; whole-scene fallback when none help."""
    return _select(scene, grounded, config, vis)[0]


def segment_and_lift(
    scene: Scene,
    views: Sequence[int],
    label: str,
    seg: SegBackend,
    vis: VisibilityConfig = VisibilityConfig(),
    failures: Optional[list] = None,
) -> list[PointSet]:
    """Lift every mask the backend returns for ``label``, in (view, mask) order."""
    if not views:
        raise ValueError("no views to segment")
    lifted, failed = [], []
    for vid in views:
        view = scene.view(vid)
        try:
            masks = seg.segment(view, label)
        except BackendError as exc:
            log.warning("segmentation failed on view %s: %s", vid, exc)
            failed.append({"view_id": vid, "error": str(exc)})
            continue
        for m in masks:
            pts = lift_mask(scene, m, vis)
            if len(pts):
                lifted.append(pts)
    if failures is not None:
        failures.extend(failed)
    if len(failed) == len(views):
        raise BackendError(f"segmentation failed on all {len(views)} views for {label!r}")
    return lifted


def merge_masks(masks: Sequence[PointSet], tau_iou: float = 0.5) -> list[PointSet]:
    """Union the highest-IoU pair until no pair reaches ``tau_iou``."""
    if not 0 < tau_iou <= 1:
        raise ValueError("tau_iou must lie in (0, 1]")
    sets = [np.asarray(m, dtype=np.int64) for m in masks]
    n = len(sets)
    iou = np.full((n, n), -1.0)
    for i in range(n):
        for j in range(i + 1, n):
            iou[i, j] = point_set_iou(sets[i], sets[j])
    alive = np.ones(n, dtype=bool)
    while True:
        live = np.where(alive[:, None] & alive[None, :], iou, -1.0)
        flat = int(np.argmax(live)) if n else 0
        i, j = divmod(flat, n) if n else (0, 0)
        if not n or live[i, j] < tau_iou:
            break
        sets[i] = np.union1d(sets[i], sets[j])
        alive[j] = False
        for k in np.flatnonzero(alive):
            if k != i:
                a, b = min(i, k), max(i, k)
                iou[a, b] = point_set_iou(sets[a], sets[b])
    out = [sets[i] for i in np.flatnonzero(alive)]
    return sorted(out, key=lambda s: (-len(s), int(s[0]) if len(s) else -1))


def filter_noise(mask: PointSet, scene: Scene, config: NoiseFilterConfig = NoiseFilterConfig()) -> PointSet:
    """Drop points with fewer than ``min_neighbors`` mask-mates within ``neighbor_radius``."""
    if len(mask) == 0:
        return EMPTY
    xyz = scene.cloud.points[mask]
    counts = cKDTree(xyz).query_ball_point(xyz, config.neighbor_radius, return_length=True) - 1
    return np.asarray(mask, dtype=np.int64)[counts >= config.min_neighbors]


@dataclass
class AceResult:
    views: list[int]
    fallback: bool
    lifted: int
    merged: int
    new_ids: list[int]
    failures: list = field(default_factory=list)


def enhance_detailed(
    scene: Scene,
    table: ObjectLookupTable,
    grounded: Sequence[tuple[int, PointSet]],
    label: str,
    seg: SegBackend,
    config: AceConfig = AceConfig(),
    vis: VisibilityConfig = VisibilityConfig(),
) -> AceResult:
    if not label.strip():
        raise ValueError("empty label")
    views, fallback = _select(scene, grounded, config, vis)
    failures: list = []
    lifted = segment_and_lift(scene, views, label, seg, vis, failures) if views else []
    merged = merge_masks(lifted, config.tau_iou)
    kept = [m for m in (filter_noise(m, scene, config.noise_filter) for m in merged) if len(m)]
    new_ids = extend(table, kept, label, scene)
    log.info("ACE %r: views=%s lifted=%d merged=%d new=%s", label, views, len(lifted), len(merged), new_ids)
    return AceResult(views, fallback, len(lifted), len(merged), new_ids, failures)


def enhance(scene, table, grounded, label, seg, config: AceConfig = AceConfig(), vis: VisibilityConfig = VisibilityConfig()) -> list[int]:
    return enhance_detailed(scene, table, grounded, label, seg, config, vis).new_ids
