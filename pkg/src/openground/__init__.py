"""Open-vocabulary 3D visual grounding with an active perception loop."""

from .pipeline import Backends, EngineConfig, GroundingTrace, QueryFailed, ground, ground_batch, with_knobs
from .scene import AxisAlignedBox3D, CameraView, Mask2D, PointCloud, Scene, VisibilityConfig, load_scene
from .olt import ObjectLookupTable, OltEntry, load_olt

__all__ = [
    "AxisAlignedBox3D", "Backends", "CameraView", "EngineConfig", "GroundingTrace", "Mask2D",
    "ObjectLookupTable", "OltEntry", "PointCloud", "QueryFailed", "Scene", "VisibilityConfig",
    "ground", "ground_batch", "load_olt", "load_scene", "with_knobs",
]
__version__ = "0.1.0"
