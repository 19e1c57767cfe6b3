"""Scene geometry: point clouds, pinhole views, visibility, lifting and IoUs.

Point sets are represented as sorted, unique ``int64`` index arrays into the
scene cloud, so every IoU below is an exact set computation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import SceneError

PointSet = np.ndarray

_ROT_TOL = 1e-6


def as_point_set(indices: Iterable[int] | np.ndarray) -> PointSet:
    """Normalise any iterable of indices into a sorted unique int64 array."""
    arr = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices)
    return np.unique(arr.astype(np.int64, copy=False))


EMPTY = np.zeros(0, dtype=np.int64)


@dataclass(frozen=True)
class VisibilityConfig:
    mode: str = "occlusion"  # "occlusion" | "frustum"
    depth_tolerance: float = 0.05

    def __post_init__(self):
        if self.mode not in ("occlusion", "frustum"):
            raise ValueError(f"unknown visibility mode {self.mode!r}")
        if self.depth_tolerance < 0:
            raise ValueError("depth_tolerance must be non-negative")


@dataclass(frozen=True)
class AxisAlignedBox3D:
    min_corner: tuple[float, float, float]
    max_corner: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(x) for x in self.min_corner)
        hi = tuple(float(x) for x in self.max_corner)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("box corners must be 3-vectors")
        if not all(np.isfinite(lo + hi)):
            raise ValueError("box corners must be finite")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"min_corner {lo} exceeds max_corner {hi}")
        object.__setattr__(self, "min_corner", lo)
        object.__setattr__(self, "max_corner", hi)

    @property
    def extent(self) -> np.ndarray:
        return np.subtract(self.max_corner, self.min_corner)

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.min_corner) + np.asarray(self.max_corner)) / 2

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def corners(self) -> np.ndarray:
        lo, hi = self.min_corner, self.max_corner
        return np.array(
            [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
        )

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.min_corner) & (pts <= self.max_corner), axis=1)

    def to_json(self) -> dict:
        return {"min": list(self.min_corner), "max": list(self.max_corner)}

    @classmethod
    def from_json(cls, data: dict) -> "AxisAlignedBox3D":
        return cls(tuple(data["min"]), tuple(data["max"]))


@dataclass
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise SceneError("point cloud contains non-finite coordinates")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise SceneError("colors and points differ in length")

    def __len__(self):
        return len(self.points)


@dataclass
class CameraView:
    view_id: int
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # world -> camera
    translation: np.ndarray
    image: Optional[np.ndarray] = None  # (height, width, 3) uint8

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        problems = self.validate()
        if problems:
            raise SceneError(f"view {self.view_id}: " + "; ".join(problems))

    def validate(self) -> list[str]:
        problems = []
        r = self.rotation
        if not np.allclose(r @ r.T, np.eye(3), atol=_ROT_TOL) or abs(np.linalg.det(r) - 1) > _ROT_TOL:
            problems.append("rotation is not orthonormal with det +1")
        if not (self.fx > 0 and self.fy > 0):
            problems.append("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            problems.append("principal point outside image")
        if self.image is not None and self.image.shape[:2] != (self.height, self.width):
            problems.append(
                f"image is {self.image.shape[1]}x{self.image.shape[0]}, "
                f"manifest says {self.width}x{self.height}"
            )
        return problems

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.atleast_2d(points) @ self.rotation.T + self.translation


@dataclass
class Mask2D:
    view_id: int
    bitmap: np.ndarray  # (height, width) bool

    def __post_init__(self):
        self.bitmap = np.asarray(self.bitmap, dtype=bool)


@dataclass
class Scene:
    cloud: PointCloud
    views: list[CameraView]
    scene_id: str = "scene"
    _by_id: dict = field(init=False, repr=False)
    _vis_cache: dict = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self):
        self._by_id = {}
        for v in self.views:
            if v.view_id in self._by_id:
                raise SceneError(f"duplicate view_id {v.view_id}")
            self._by_id[v.view_id] = v

    @property
    def view_ids(self) -> list[int]:
        return [v.view_id for v in self.views]

    def view(self, view_id: int) -> CameraView:
        try:
            return self._by_id[view_id]
        except KeyError:
            raise SceneError(f"unknown view_id {view_id}") from None

    def visibility_matrix(self, config: VisibilityConfig) -> np.ndarray:
        """Boolean (n_views, n_points) matrix, rows in ``self.views`` order."""
        key = ("matrix", config)
        if key not in self._vis_cache:
            mat = np.zeros((len(self.views), len(self.cloud)), dtype=bool)
            for row, v in enumerate(self.views):
                mat[row, visible_points(self, v.view_id, config)] = True
            self._vis_cache[key] = mat
        return self._vis_cache[key]


def project(point: Sequence[float], view: CameraView) -> Optional[tuple[float, float]]:
    """Pinhole projection of one world point; ``None`` when behind the camera."""
    x, y, z = view.to_camera(np.asarray(point, dtype=np.float64))[0]
    if z <= 0:
        return None
    return (view.fx * x / z + view.cx, view.fy * y / z + view.cy)


def project_points(points: np.ndarray, view: CameraView):
    """Vectorised projection.

    Returns ``(cols, rows, depth, inside)`` where cols/rows are floored pixel
    indices (only meaningful where ``inside``).
    """
    cam = view.to_camera(points)
    z = cam[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = np.floor(view.fx * cam[:, 0] / safe_z + view.cx)
    v = np.floor(view.fy * cam[:, 1] / safe_z + view.cy)
    inside = front & (u >= 0) & (u < view.width) & (v >= 0) & (v < view.height)
    cols = np.where(inside, u, 0).astype(np.int64)
    rows = np.where(inside, v, 0).astype(np.int64)
    return cols, rows, z, inside


def visible_points(scene: Scene, view_id: int, config: VisibilityConfig = VisibilityConfig()) -> PointSet:
    key = (view_id, config)
    cached = scene._vis_cache.get(key)
    if cached is not None:
        return cached
    view = scene.view(view_id)
    cols, rows, z, inside = project_points(scene.cloud.points, view)
    idx = np.flatnonzero(inside)
    if config.mode == "occlusion" and len(idx):
        pix = rows[idx] * view.width + cols[idx]
        zbuf = np.full(view.width * view.height, np.inf)
        np.minimum.at(zbuf, pix, z[idx])
        idx = idx[z[idx] <= zbuf[pix] + config.depth_tolerance]
    idx = idx.astype(np.int64)
    scene._vis_cache[key] = idx
    return idx


def lift_mask(scene: Scene, mask: Mask2D, config: VisibilityConfig = VisibilityConfig()) -> PointSet:
    view = scene.view(mask.view_id)
    if mask.bitmap.shape != (view.height, view.width):
        raise SceneError(
            f"mask for view {view.view_id} is {mask.bitmap.shape}, expected {(view.height, view.width)}"
        )
    vis = visible_points(scene, view.view_id, config)
    if not len(vis):
        return EMPTY
    cols, rows, _, _ = project_points(scene.cloud.points[vis], view)
    return vis[mask.bitmap[rows, cols]]


def point_set_iou(a: PointSet, b: PointSet) -> float:
    if len(a) == 0 and len(b) == 0:
        return 1.0
    inter = len(np.intersect1d(a, b, assume_unique=True))
    return inter / (len(a) + len(b) - inter)


def bounding_box(points: PointSet, scene: Scene) -> AxisAlignedBox3D:
    if len(points) == 0:
        raise SceneError("bounding box of an empty point set")
    xyz = scene.cloud.points[points]
    return AxisAlignedBox3D(tuple(xyz.min(axis=0)), tuple(xyz.max(axis=0)))


def box_iou_3d(a: AxisAlignedBox3D, b: AxisAlignedBox3D) -> float:
    lo = np.maximum(a.min_corner, b.min_corner)
    hi = np.minimum(a.max_corner, b.max_corner)
    if a.volume == 0 or b.volume == 0:
        return 1.0 if a == b else 0.0
    inter = float(np.prod(np.clip(hi - lo, 0, None)))
    if inter == 0:
        return 0.0
    return inter / (a.volume + b.volume - inter)


def points_in_box(scene: Scene, box: AxisAlignedBox3D) -> PointSet:
    return np.flatnonzero(box.contains(scene.cloud.points)).astype(np.int64)


# --- on-disk scene directory -------------------------------------------------

MANIFEST = "manifest.json"


def read_ply(path: Path) -> PointCloud:
    from plyfile import PlyData

    try:
        ply = PlyData.read(str(path))
        v = ply["vertex"].data
    except (OSError, KeyError, ValueError) as exc:
        raise SceneError(f"cannot read point cloud {path}: {exc}") from exc
    names = v.dtype.names
    pts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([v["red"], v["green"], v["blue"]], axis=1).astype(np.uint8)
    return PointCloud(pts, colors)


def write_ply(cloud: PointCloud, path: Path) -> None:
    from plyfile import PlyData, PlyElement

    fields = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    if cloud.colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    arr = np.empty(len(cloud), dtype=fields)
    arr["x"], arr["y"], arr["z"] = cloud.points.T
    if cloud.colors is not None:
        arr["red"], arr["green"], arr["blue"] = cloud.colors.T
    PlyData([PlyElement.describe(arr, "vertex")], byte_order="<").write(str(path))


def load_scene(directory: str | Path) -> Scene:
    """Load a scene directory (``manifest.json`` + PLY cloud + images)."""
    from PIL import Image

    directory = Path(directory)
    manifest_path = directory / MANIFEST
    if not manifest_path.is_file():
        raise FileNotFoundError(f"scene manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    cloud = read_ply(directory / manifest.get("cloud", "cloud.ply"))
    views, problems = [], []
    for raw in manifest.get("views", []):
        vid = raw.get("view_id", "?")
        try:
            image = None
            if raw.get("image_path"):
                with Image.open(directory / raw["image_path"]) as im:
                    image = np.asarray(im.convert("RGB"))
            views.append(
                CameraView(
                    view_id=int(raw["view_id"]),
                    width=int(raw["width"]),
                    height=int(raw["height"]),
                    fx=float(raw["fx"]),
                    fy=float(raw["fy"]),
                    cx=float(raw["cx"]),
                    cy=float(raw["cy"]),
                    rotation=np.asarray(raw["rotation"], dtype=float).reshape(3, 3),
                    translation=raw["translation"],
                    image=image,
                )
            )
        except SceneError as exc:
            problems.append(str(exc))
        except (KeyError, ValueError, TypeError, OSError) as exc:
            problems.append(f"view {vid}: {exc}")
    if problems:
        raise SceneError("invalid scene manifest:\n  " + "\n  ".join(problems))
    return Scene(cloud, views, manifest.get("scene_id", directory.name))


def save_scene(scene: Scene, directory: str | Path) -> None:
    from PIL import Image

    from .io import atomic_write_bytes, atomic_write_json

    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    tmp = directory / "cloud.ply.tmp"
    write_ply(scene.cloud, tmp)
    tmp.replace(directory / "cloud.ply")
    views = []
    for v in scene.views:
        entry = {
            "view_id": v.view_id,
            "width": v.width,
            "height": v.height,
            "fx": v.fx,
            "fy": v.fy,
            "cx": v.cx,
            "cy": v.cy,
            "rotation": [float(x) for x in v.rotation.ravel()],
            "translation": [float(x) for x in v.translation],
        }
        if v.image is not None:
            rel = f"images/view_{v.view_id:04d}.png"
            import io as _io

            buf = _io.BytesIO()
            Image.fromarray(v.image).save(buf, format="PNG")
            atomic_write_bytes(directory / rel, buf.getvalue())
            entry["image_path"] = rel
        views.append(entry)
    atomic_write_json(directory / MANIFEST, {"scene_id": scene.scene_id, "cloud": "cloud.ply", "views": views})
