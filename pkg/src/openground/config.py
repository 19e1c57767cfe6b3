"""TOML run configuration: engine knobs plus backend settings."""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

# file key -> engine knob
KNOB_KEYS = {
    "strategy": "strategy",
    "V": "max_views",
    "max_views": "max_views",
    "alpha": "alpha",
    "tau_cand": "tau_cand",
    "tau_iou": "tau_iou",
    "fallback_tau": "fallback_tau",
    "annotation_mode": "annotation_mode",
    "visibility": "visibility_mode",
    "visibility_mode": "visibility_mode",
    "depth_tolerance": "depth_tolerance",
    "coverage": "coverage",
    "initial_olt": "initial_olt",
    "seed": "seed",
    "vlm_retries": "vlm_retries",
}
BACKEND_KEYS = ("kind", "endpoint", "model", "seg_endpoint", "embed_endpoint", "temperature", "max_retries", "max_in_flight", "embedder", "fixtures", "seg_fixtures")


def parse_config(data: dict) -> tuple[dict, dict]:
    """Split a parsed config into ``(engine knobs, backend settings)``."""
    knobs, backend = {}, {}
    for key, value in data.items():
        if key == "backend":
            if not isinstance(value, dict):
                raise ValueError("[backend] must be a table")
            unknown = sorted(set(value) - set(BACKEND_KEYS))
            if unknown:
                raise ValueError(f"unknown [backend] keys: {unknown}")
            backend.update(value)
        elif key in KNOB_KEYS:
            knobs[KNOB_KEYS[key]] = value
        else:
            raise ValueError(f"unknown config key {key!r}")
    return knobs, backend


def load_config(path: str | Path) -> tuple[dict, dict]:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ValueError(f"{path}: invalid TOML ({exc})") from exc
    return parse_config(data)
