"""Deterministic synthetic scenes with dense ground truth.

A scene spec lists parametric objects (axis-aligned boxes or z-axis
cylinders, sampled on the surface or through the volume) with labels,
attributes and parent links, plus camera rings. Generation yields the point
cloud, splatted RGB views, ground-truth instances, a partial lookup table
(withheld labels removed) and referring queries whose every chain step is
uniquely identifiable from its conditions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .io import atomic_write_json, atomic_write_jsonl
from .olt import INITIAL, ObjectLookupTable, OltEntry, save_olt
from .scene import AxisAlignedBox3D, CameraView, PointCloud, Scene, bounding_box, save_scene

BACKGROUND = (235, 235, 235)


@dataclass
class ObjectSpec:
    name: str
    label: str
    center: tuple[float, float, float]
    size: tuple[float, float, float]
    shape: str = "box"  # box | cylinder (size = [diameter, diameter, height])
    fill: str = "surface"  # surface | volume
    spacing: float = 0.03
    color: tuple[int, int, int] = (150, 150, 150)
    attributes: dict = field(default_factory=dict)
    parent: Optional[str] = None


@dataclass
class CameraRing:
    look_at: tuple[float, float, float]
    radius: float
    height: float
    count: int
    arc: tuple[float, float] = (0.0, 360.0)


@dataclass
class SceneSpec:
    scene_id: str
    objects: list[ObjectSpec]
    cameras: list[CameraRing]
    width: int = 160
    height: int = 120
    fx: float = 130.0
    fy: float = 130.0
    withhold: list[str] = field(default_factory=list)
    max_queries: Optional[int] = None

    @classmethod
    def from_json(cls, data: dict) -> "SceneSpec":
        objects = [
            ObjectSpec(**{**o, "center": tuple(o["center"]), "size": tuple(o["size"]), "color": tuple(o.get("color", (150, 150, 150)))})
            for o in data.get("objects", [])
        ]
        cameras = [CameraRing(**{**c, "look_at": tuple(c["look_at"]), "arc": tuple(c.get("arc", (0, 360)))}) for c in data.get("cameras", [])]
        image = data.get("image", {})
        names = [o.name for o in objects]
        if len(set(names)) != len(names):
            raise ValueError("object names must be unique")
        for o in objects:
            if o.parent is not None and o.parent not in names:
                raise ValueError(f"object {o.name}: unknown parent {o.parent!r}")
            if o.shape not in ("box", "cylinder") or o.fill not in ("surface", "volume"):
                raise ValueError(f"object {o.name}: bad shape/fill")
        return cls(
            scene_id=data.get("scene_id", "synthetic"),
            objects=objects,
            cameras=cameras,
            width=int(image.get("width", 160)),
            height=int(image.get("height", 120)),
            fx=float(image.get("fx", 130.0)),
            fy=float(image.get("fy", 130.0)),
            withhold=list(data.get("withhold", [])),
            max_queries=data.get("max_queries"),
        )

    def to_json(self) -> dict:
        from dataclasses import asdict

        return {
            "scene_id": self.scene_id,
            "image": {"width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy},
            "objects": [asdict(o) for o in self.objects],
            "cameras": [asdict(c) for c in self.cameras],
            "withhold": list(self.withhold),
            "max_queries": self.max_queries,
        }


# --- geometry sampling -------------------------------------------------------


def _sample_box(rng, center, size, fill, spacing):
    c, s = np.asarray(center, float), np.asarray(size, float)
    if fill == "volume":
        n = max(1, math.ceil(np.prod(np.maximum(s, spacing)) / spacing**3))
        return c + (rng.random((n, 3)) - 0.5) * s
    out = []
    for axis in range(3):
        a, b = [k for k in range(3) if k != axis]
        area = s[a] * s[b]
        n = max(1, math.ceil(area / spacing**2))
        for sign in (-0.5, 0.5):
            pts = (rng.random((n, 3)) - 0.5) * s
            pts[:, axis] = sign * s[axis]
            out.append(c + pts)
    return np.concatenate(out)


def _sample_cylinder(rng, center, size, fill, spacing):
    c = np.asarray(center, float)
    r, h = size[0] / 2, size[2]
    if fill == "volume":
        n = max(1, math.ceil(math.pi * r * r * h / spacing**3))
        rad = r * np.sqrt(rng.random(n))
    else:
        n = max(1, math.ceil(2 * math.pi * r * h / spacing**2))
        rad = np.full(n, r)
    theta = rng.random(n) * 2 * math.pi
    z = (rng.random(n) - 0.5) * h
    pts = np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)
    if fill == "surface":
        m = max(1, math.ceil(math.pi * r * r / spacing**2))
        caps = []
        for sign in (-0.5, 0.5):
            rr, tt = r * np.sqrt(rng.random(m)), rng.random(m) * 2 * math.pi
            caps.append(np.stack([rr * np.cos(tt), rr * np.sin(tt), np.full(m, sign * h)], axis=1))
        pts = np.concatenate([pts] + caps)
    return c + pts


def look_at(position, target, width, height, fx, fy, view_id) -> CameraView:
    pos, tgt = np.asarray(position, float), np.asarray(target, float)
    fwd = tgt - pos
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    if np.linalg.norm(right) < 1e-9:
        right = np.array([1.0, 0.0, 0.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd])
    return CameraView(view_id, width, height, fx, fy, width / 2, height / 2, rot, -rot @ pos)


def splat(points: np.ndarray, colors: np.ndarray, view: CameraView) -> np.ndarray:
    """Nearest-point-per-pixel render."""
    from .scene import project_points

    cols, rows, z, inside = project_points(points, view)
    img = np.empty((view.height, view.width, 3), np.uint8)
    img[:] = BACKGROUND
    idx = np.flatnonzero(inside)
    order = idx[np.argsort(-z[idx], kind="stable")]  # far to near, near wins
    img[rows[order], cols[order]] = colors[order]
    return img


# --- ground truth and queries ----------------------------------------------


@dataclass
class Instance:
    index: int
    name: str
    label: str
    parent: Optional[str]
    attributes: dict
    points: np.ndarray
    box: AxisAlignedBox3D


def attribute_condition(key: str, value) -> str:
    return f"its {key} is {value}"


def _phrase(inst: Instance) -> str:
    words = [str(v) for _, v in sorted(inst.attributes.items())]
    return " ".join(words + [inst.label])


def _step_conditions(inst: Instance, parent: Optional[Instance]) -> list[dict]:
    conds = [{"text": f"it is a {inst.label}", "kind": "label", "value": inst.label}]
    if parent is not None:
        conds.append({"text": f"it is attached to the {parent.label}", "kind": "relation", "ref_label": parent.label})
    for key, value in sorted(inst.attributes.items()):
        conds.append({"text": attribute_condition(key, value), "kind": "attribute", "key": key, "value": value})
    return conds


def _unique_step(inst: Instance, instances: list[Instance]) -> bool:
    rivals = [
        o
        for o in instances
        if o.label == inst.label
        and o.parent == inst.parent
        and all(o.attributes.get(k) == v for k, v in inst.attributes.items())
    ]
    return len(rivals) == 1


def build_queries(spec: SceneSpec, instances: list[Instance], rng) -> list[dict]:
    by_name = {i.name: i for i in instances}
    targets = [i for i in instances if (i.label in spec.withhold) or not spec.withhold]
    out = []
    for inst in targets:
        lineage = [inst]
        while lineage[0].parent is not None:
            lineage.insert(0, by_name[lineage[0].parent])
        if len({x.label for x in lineage}) != len(lineage):
            continue  # repeated labels in one chain are not expressible
        if not all(_unique_step(x, instances) for x in lineage):
            continue
        steps = []
        for k, x in enumerate(lineage):
            parent = lineage[k - 1] if k else None
            steps.append({"label": x.label, "instance": x.name, "conditions": _step_conditions(x, parent)})
        text = "Find the " + _phrase(inst) + "".join(f" on the {_phrase(a)}" for a in reversed(lineage[:-1])) + "."
        out.append(
            {
                "query": text,
                "target": inst.name,
                "chain": [x.label for x in lineage],
                "steps": steps,
                "tags": {
                    "chain_length": len(lineage),
                    "unique": "unique" if sum(o.label == inst.label for o in instances) == 1 else "multiple",
                    "withheld": inst.label in spec.withhold,
                },
            }
        )
    if spec.max_queries is not None and len(out) > spec.max_queries:
        keep = sorted(rng.choice(len(out), spec.max_queries, replace=False))
        out = [out[i] for i in keep]
    for n, q in enumerate(out):
        q["query_id"] = f"{spec.scene_id}_q{n:03d}"
    return out


@dataclass
class SyntheticScene:
    spec: SceneSpec
    scene: Scene
    instances: list[Instance]
    table: ObjectLookupTable
    queries: list[dict]

    def gt_json(self) -> dict:
        return {
            "scene_id": self.scene.scene_id,
            "instances": [
                {
                    "index": i.index,
                    "name": i.name,
                    "label": i.label,
                    "parent": i.parent,
                    "attributes": i.attributes,
                    "box": i.box.to_json(),
                    "point_indices": [int(p) for p in i.points],
                }
                for i in self.instances
            ],
            "queries": self.queries,
        }

    def query_records(self) -> list[dict]:
        by_name = {i.name: i for i in self.instances}
        return [
            {
                "query_id": q["query_id"],
                "scene_id": self.scene.scene_id,
                "query": q["query"],
                "gt_box": by_name[q["target"]].box.to_json(),
                "tags": q["tags"],
            }
            for q in self.queries
        ]

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        save_scene(self.scene, out)
        atomic_write_json(out / "gt.json", self.gt_json())
        save_olt(self.table, out / "olt.json")
        atomic_write_jsonl(out / "queries.jsonl", self.query_records())
        atomic_write_json(out / "spec.json", self.spec.to_json())


def generate(spec: SceneSpec, seed: int = 0) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    chunks, colors, instances = [], [], []
    start = 0
    for k, o in enumerate(spec.objects):
        sampler = _sample_box if o.shape == "box" else _sample_cylinder
        pts = sampler(rng, o.center, o.size, o.fill, o.spacing)
        jitter = rng.integers(-12, 13, size=(len(pts), 3))
        colors.append(np.clip(np.asarray(o.color) + jitter, 0, 255).astype(np.uint8))
        chunks.append(pts)
        idx = np.arange(start, start + len(pts), dtype=np.int64)
        start += len(pts)
        instances.append(Instance(k, o.name, o.label, o.parent, dict(o.attributes), idx, None))
    points = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    color_arr = np.concatenate(colors) if colors else np.zeros((0, 3), np.uint8)
    cloud = PointCloud(points, color_arr)

    views = []
    for ring in spec.cameras:
        lo, hi = ring.arc
        full = math.isclose((hi - lo) % 360, 0) and hi != lo
        n = ring.count
        for j in range(n):
            frac = j / n if full else (j / (n - 1) if n > 1 else 0.5)
            theta = math.radians(lo + (hi - lo) * frac)
            c = np.asarray(ring.look_at, float)
            pos = c + [ring.radius * math.cos(theta), ring.radius * math.sin(theta), ring.height - c[2]]
            view = look_at(pos, c, spec.width, spec.height, spec.fx, spec.fy, len(views))
            view.image = splat(points, color_arr, view)
            views.append(view)
    scene = Scene(cloud, views, spec.scene_id)
    for inst in instances:
        inst.box = bounding_box(inst.points, scene)

    table = ObjectLookupTable()
    for inst in instances:
        if inst.label not in spec.withhold:
            table.add(OltEntry(len(table), inst.label, inst.box, inst.points, INITIAL))
    queries = build_queries(spec, instances, rng)
    return SyntheticScene(spec, scene, instances, table, queries)


# --- ready-made families -------------------------------------------------------

COLORS = {
    "red": (200, 50, 50),
    "blue": (50, 80, 200),
    "green": (60, 170, 70),
    "yellow": (220, 200, 60),
    "white": (240, 240, 235),
    "brown": (130, 90, 50),
}
POSITIONS = ("top", "middle", "bottom")
SIDES = ("left", "right")


def cabinet_family_spec(
    seed: int = 0,
    *,
    n_cabinets: int = 3,
    n_drawers: int = 3,
    n_handles: int = 2,
    withhold: tuple[str, ...] = ("drawer", "handle"),
    max_queries: Optional[int] = None,
    scene_id: Optional[str] = None,
) -> SceneSpec:
    """A row of coloured cabinets, each with stacked drawers carrying handles.

    Handles and drawers are withheld from the lookup table by default, so
    every handle query needs cabinet -> drawer -> handle reasoning.
    """
    rng = np.random.default_rng(seed)
    colors = list(rng.permutation(sorted(COLORS)))[:n_cabinets]
    width, depth, height = 0.8, 0.5, 0.9
    gap = 0.15 + 0.1 * rng.random()
    objects = [ObjectSpec("floor", "floor", (0, 0.5, -0.01), (n_cabinets * 1.2 + 1.5, 3.0, 0.02), spacing=0.09, color=(110, 110, 115))]
    x0 = -(n_cabinets - 1) * (width + gap) / 2
    drawer_h = (height - 0.1) / n_drawers
    for c in range(n_cabinets):
        cx = x0 + c * (width + gap)
        cab = f"cabinet{c}"
        objects.append(
            ObjectSpec(cab, "cabinet", (cx, 0.0, height / 2), (width, depth, height), spacing=0.03,
                       color=COLORS[colors[c]], attributes={"color": colors[c]})
        )
        for d in range(n_drawers):
            dz = height - 0.05 - drawer_h * (d + 0.5)
            drw = f"{cab}_drawer{d}"
            objects.append(
                ObjectSpec(drw, "drawer", (cx, depth / 2 + 0.08, dz), (width - 0.08, 0.02, drawer_h - 0.04),
                           fill="volume", spacing=0.018, color=(225, 215, 190),
                           attributes={"position": POSITIONS[d] if n_drawers == 3 else f"level{d}"}, parent=cab)
            )
            for h in range(n_handles):
                hx = cx + (h - (n_handles - 1) / 2) * (width - 0.08) / n_handles
                objects.append(
                    ObjectSpec(f"{drw}_handle{h}", "handle", (hx, depth / 2 + 0.17, dz), (0.14, 0.035, 0.035),
                               fill="volume", spacing=0.012, color=(40, 40, 45),
                               attributes={"side": SIDES[h] if n_handles == 2 else f"slot{h}"}, parent=drw)
                )
    span = n_cabinets * (width + gap)
    center = (0.0, 0.0, height / 2)
    cameras = [CameraRing(center, radius=max(2.4, span * 0.95), height=1.5, count=6, arc=(35, 145))]
    for c in range(n_cabinets):
        cx = x0 + c * (width + gap)
        cameras.append(CameraRing((cx, depth / 2, height / 2), radius=1.1, height=1.0 + 0.3 * rng.random(), count=3, arc=(55, 125)))
    return SceneSpec(scene_id or f"cabinets_{seed:03d}", objects, cameras, withhold=list(withhold), max_queries=max_queries)


def load_spec(path: str | Path) -> SceneSpec:
    return SceneSpec.from_json(json.loads(Path(path).read_text()))
