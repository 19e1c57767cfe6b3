"""Grounding accuracy, tag breakdowns, ablation grids and reports."""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .scene import AxisAlignedBox3D, box_iou_3d

THRESHOLDS = (0.25, 0.5)
UNTAGGED = "untagged"


@dataclass
class EvalRecord:
    query_id: str
    predicted: Optional[AxisAlignedBox3D]
    gt: Optional[AxisAlignedBox3D]
    tags: dict = field(default_factory=dict)
    status: str = "ok"  # ok | degraded | failed

    def __post_init__(self):
        if self.status != "failed" and self.gt is None:
            raise ValueError(f"record {self.query_id}: scored records need a ground-truth box")

    @property
    def iou(self) -> float:
        if self.status == "failed" or self.predicted is None or self.gt is None:
            return 0.0
        return box_iou_3d(self.predicted, self.gt)


def accuracy_at(records: Sequence[EvalRecord], threshold: float) -> float:
    """Fraction of records whose box IoU reaches ``threshold``; failures are misses."""
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    if not records:
        raise ValueError("accuracy of an empty record set is undefined")
    return sum(r.iou >= threshold for r in records) / len(records)


@dataclass
class BreakdownRow:
    value: str
    count: int
    accuracy: dict[float, float]


def _tag_sort_key(value):
    if value == UNTAGGED:
        return (2, 0, "")
    try:
        return (0, float(value), "")
    except (TypeError, ValueError):
        return (1, 0, str(value))


def breakdown(
    records: Sequence[EvalRecord], key: str, thresholds: Sequence[float] = THRESHOLDS
) -> list[BreakdownRow]:
    """Per-tag-value accuracy rows, then an ``overall`` row."""
    if not records:
        raise ValueError("breakdown of an empty record set is undefined")
    groups: dict = {}
    for r in records:
        groups.setdefault(r.tags.get(key, UNTAGGED), []).append(r)
    rows = [
        BreakdownRow(str(v), len(groups[v]), {t: accuracy_at(groups[v], t) for t in thresholds})
        for v in sorted(groups, key=_tag_sort_key)
    ]
    rows.append(BreakdownRow("overall", len(records), {t: accuracy_at(records, t) for t in thresholds}))
    return rows


def metrics(records: Sequence[EvalRecord], thresholds: Sequence[float] = THRESHOLDS) -> dict:
    out = {f"acc@{t:.2f}": accuracy_at(records, t) for t in thresholds}
    out["n"] = len(records)
    out["failed"] = sum(r.status == "failed" for r in records)
    out["degraded"] = sum(r.status == "degraded" for r in records)
    return out


def records_from_results(results: Sequence[dict], queries: Sequence[dict]) -> list[EvalRecord]:
    """Join batch results with the query file (ground-truth boxes and tags)."""
    by_id = {str(q["query_id"]): q for q in queries}
    out = []
    for res in results:
        qid = str(res["query_id"])
        if qid not in by_id:
            raise ValueError(f"result {qid} has no matching query record")
        q = by_id[qid]
        if q.get("gt_box") is None:
            raise ValueError(f"query {qid} has no gt_box")
        pred = AxisAlignedBox3D.from_json(res["box"]) if res.get("box") else None
        tags = dict(q.get("tags") or {})
        status = res.get("status", "ok") if pred is not None else "failed"
        out.append(EvalRecord(qid, pred, AxisAlignedBox3D.from_json(q["gt_box"]), tags, status))
    return out


# --- ablation grids ------------------------------------------------------------


@dataclass
class GridCell:
    knobs: dict
    metrics: dict
    records: list[EvalRecord] = field(default_factory=list, repr=False)


def grid_cells(space: Mapping[str, Sequence] | Sequence[Mapping]) -> list[dict]:
    """Cartesian product of a ``{knob: values}`` mapping, or an explicit list of cells."""
    if isinstance(space, Mapping):
        names = list(space)
        for n in names:
            if not len(space[n]):
                raise ValueError(f"knob {n!r} has no values")
        return [dict(zip(names, combo)) for combo in itertools.product(*(space[n] for n in names))]
    return [dict(c) for c in space]


def ablation_grid(
    space: Mapping[str, Sequence] | Sequence[Mapping],
    runner: Callable[[dict], Sequence[EvalRecord]],
    *,
    jobs: int = 1,
) -> list[GridCell]:
    """Run ``runner`` once per cell; rows come back in cell order."""
    cells = grid_cells(space)

    def run(knobs):
        recs = list(runner(dict(knobs)))
        return GridCell(knobs, metrics(recs), recs)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def batch_runner(scenes, queries, base_config, backends, *, tables=None, jobs: int = 1):
    """A grid runner that grounds ``queries`` under each cell's knobs."""
    from .pipeline import ground_batch, with_knobs

    def run(knobs):
        config = with_knobs(base_config, **knobs)
        results = ground_batch(scenes, queries, config, backends, tables=tables, jobs=jobs)
        return records_from_results(results, queries)

    return run


# --- reports -------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def text_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in header]] + [[_fmt(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def breakdown_json(rows: Sequence[BreakdownRow]) -> list[dict]:
    return [{"value": r.value, "count": r.count, **{f"acc@{t:.2f}": a for t, a in r.accuracy.items()}} for r in rows]


def breakdown_table(key: str, rows: Sequence[BreakdownRow]) -> tuple[list[str], list[list]]:
    ts = list(rows[0].accuracy) if rows else list(THRESHOLDS)
    header = [key, "n"] + [f"acc@{t:.2f}" for t in ts]
    return header, [[r.value, r.count] + [r.accuracy[t] for t in ts] for r in rows]


def grid_table(cells: Sequence[GridCell]) -> tuple[list[str], list[list]]:
    knob_names = list(dict.fromkeys(k for c in cells for k in c.knobs))
    metric_names = list(cells[0].metrics) if cells else []
    header = knob_names + metric_names
    rows = [[c.knobs.get(k, "") for k in knob_names] + [c.metrics[m] for m in metric_names] for c in cells]
    return header, rows


def grid_json(cells: Sequence[GridCell]) -> list[dict]:
    return [{"knobs": c.knobs, "metrics": c.metrics} for c in cells]
