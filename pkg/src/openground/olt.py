"""Object lookup table: entries, label retrieval and ACE extension."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .clients.embedding import EmbeddingProvider
from .errors import EmbeddingError, OltError
from .io import atomic_write_json
from .scene import EMPTY, AxisAlignedBox3D, PointSet, Scene, as_point_set, bounding_box, points_in_box

INITIAL = "initial"
ACE_EXTENDED = "ace_extended"
_BOX_TOL = 1e-6


@dataclass
class OltEntry:
    id: int
    label: str
    box: AxisAlignedBox3D
    points: PointSet = field(default_factory=lambda: EMPTY)
    provenance: str = INITIAL

    def __post_init__(self):
        self.points = as_point_set(self.points)
        if self.provenance not in (INITIAL, ACE_EXTENDED):
            raise OltError(f"entry {self.id}: unknown provenance {self.provenance!r}")

    def __eq__(self, other):
        return (
            isinstance(other, OltEntry)
            and (self.id, self.label, self.box, self.provenance) == (other.id, other.label, other.box, other.provenance)
            and np.array_equal(self.points, other.points)
        )


class ObjectLookupTable:
    def __init__(self, entries: Sequence[OltEntry] = ()):
        self._entries: dict[int, OltEntry] = {}
        for e in entries:
            self.add(e)

    def add(self, entry: OltEntry) -> None:
        if entry.id in self._entries:
            raise OltError(f"duplicate entry id {entry.id}")
        self._entries[entry.id] = entry

    def __iter__(self) -> Iterator[OltEntry]:
        return iter(self._entries.values())

    def __len__(self):
        return len(self._entries)

    def __contains__(self, entry_id):
        return entry_id in self._entries

    def __getitem__(self, entry_id: int) -> OltEntry:
        try:
            return self._entries[entry_id]
        except KeyError:
            raise OltError(f"no entry with id {entry_id}") from None

    def __eq__(self, other):
        return isinstance(other, ObjectLookupTable) and list(self) == list(other)

    @property
    def ids(self) -> list[int]:
        return list(self._entries)

    def max_id(self) -> int:
        return max(self._entries, default=-1)

    def copy(self) -> "ObjectLookupTable":
        return copy.deepcopy(self)

    def points_of(self, entry_id: int, scene: Optional[Scene] = None) -> PointSet:
        """Member points; box-only entries fall back to cloud points inside the box."""
        e = self[entry_id]
        if len(e.points) or scene is None:
            return e.points
        return points_in_box(scene, e.box)


def retrieve_candidates(
    table: ObjectLookupTable, label: str, provider: EmbeddingProvider, tau_cand: float = 0.9
) -> list[int]:
    """Ids whose label embedding has cosine >= ``tau_cand`` with ``label``."""
    if not 0 <= tau_cand:
        raise ValueError(f"tau_cand must be non-negative, got {tau_cand}")
    query = _embed(provider, label)
    cache: dict[str, float] = {}
    out = []
    for e in table:
        if e.label not in cache:
            cache[e.label] = float(np.dot(query, _embed(provider, e.label)))
        if cache[e.label] >= tau_cand:
            out.append(e.id)
    return sorted(out)


def _embed(provider: EmbeddingProvider, text: str) -> np.ndarray:
    try:
        return provider.embed(text)
    except EmbeddingError:
        raise
    except Exception as exc:
        raise EmbeddingError(text, exc) from exc


def extend(table: ObjectLookupTable, masks: Sequence[PointSet], label: str, scene: Scene) -> list[int]:
    """Append one ``ace_extended`` entry per mask; returns new ids in input order."""
    for n, m in enumerate(masks):
        if len(m) == 0:
            raise OltError(f"mask #{n} for label {label!r} is empty")
    new_ids = []
    next_id = table.max_id() + 1
    for m in masks:
        pts = as_point_set(m)
        table.add(OltEntry(next_id, label, bounding_box(pts, scene), pts, ACE_EXTENDED))
        new_ids.append(next_id)
        next_id += 1
    return new_ids


# --- file format ------------------------------------------------------------


def olt_to_json(table: ObjectLookupTable) -> dict:
    entries = []
    for e in table:
        item = {"id": e.id, "label": e.label, "box": e.box.to_json(), "provenance": e.provenance}
        if len(e.points):
            item["point_indices"] = [int(i) for i in e.points]
        entries.append(item)
    return {"entries": entries}


def save_olt(table: ObjectLookupTable, path: str | Path) -> None:
    atomic_write_json(path, olt_to_json(table))


def olt_from_json(data: dict, scene: Optional[Scene] = None) -> ObjectLookupTable:
    """Validate and build a table. Every problem is reported, one per line."""
    if not isinstance(data, dict) or not isinstance(data.get("entries"), list):
        raise OltError("OLT file must be an object with an 'entries' list")
    problems, entries, first_seen = [], [], {}
    n_points = len(scene.cloud) if scene is not None else None
    for n, raw in enumerate(data["entries"]):
        where = f"entry #{n}"
        try:
            eid = raw["id"]
            if not isinstance(eid, int) or isinstance(eid, bool):
                raise ValueError(f"id must be an integer, got {eid!r}")
            where = f"entry #{n} (id {eid})"
            label = raw["label"]
            if not isinstance(label, str) or not label.strip():
                raise ValueError("label must be a non-empty string")
            box = AxisAlignedBox3D.from_json(raw["box"])
            idx = raw.get("point_indices") or []
            pts = as_point_set(idx) if idx else EMPTY
            if len(pts) != len(idx):
                raise ValueError("point_indices contains duplicates")
            if len(pts) and (pts[0] < 0 or (n_points is not None and pts[-1] >= n_points)):
                raise ValueError("point_indices out of range for the scene cloud")
            if len(pts) and scene is not None:
                expect = bounding_box(pts, scene)
                if not (
                    np.allclose(expect.min_corner, box.min_corner, atol=_BOX_TOL)
                    and np.allclose(expect.max_corner, box.max_corner, atol=_BOX_TOL)
                ):
                    raise ValueError(f"box {box.to_json()} is not the bounding box of its points {expect.to_json()}")
            entry = OltEntry(eid, label, box, pts, raw.get("provenance", INITIAL))
        except (KeyError, TypeError, ValueError, OltError) as exc:
            problems.append(f"{where}: {exc if not isinstance(exc, KeyError) else f'missing field {exc}'}")
            continue
        if eid in first_seen:
            problems.append(f"entry #{n} duplicates id {eid} of entry #{first_seen[eid]}")
            continue
        first_seen[eid] = n
        entries.append(entry)
    if problems:
        raise OltError("invalid OLT:\n  " + "\n  ".join(problems))
    return ObjectLookupTable(entries)


def load_olt(path: str | Path, scene: Optional[Scene] = None) -> ObjectLookupTable:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise OltError(f"{path}: invalid JSON ({exc.msg})") from exc
    return olt_from_json(data, scene)
