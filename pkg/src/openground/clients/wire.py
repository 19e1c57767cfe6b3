"""Construct wire-protocol backends from settings and environment."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import httpx

from ..errors import BackendError
from .embedding import WireEmbedder
from .http import JsonHttpClient
from .seg import WireSeg
from .vlm import DEFAULT_TEMPERATURE, WireVlm


@dataclass
class WireSettings:
    endpoint: Optional[str] = None
    api_key: Optional[str] = None
    model: Optional[str] = None
    seg_endpoint: Optional[str] = None
    embed_endpoint: Optional[str] = None
    temperature: float = DEFAULT_TEMPERATURE
    max_retries: int = 4
    max_in_flight: int = 4

    @classmethod
    def from_env(cls, **overrides) -> "WireSettings":
        base = cls(
            endpoint=os.environ.get("OPENGROUND_ENDPOINT"),
            api_key=os.environ.get("OPENGROUND_API_KEY"),
            model=os.environ.get("OPENGROUND_MODEL"),
            seg_endpoint=os.environ.get("OPENGROUND_SEG_ENDPOINT"),
            embed_endpoint=os.environ.get("OPENGROUND_EMBED_ENDPOINT"),
        )
        for k, v in overrides.items():
            if v is not None:
                setattr(base, k, v)
        return base


def wire_backend(kind: str, settings: WireSettings, *, transport: Optional[httpx.BaseTransport] = None, sleep=None):
    """Build a ``vlm``, ``seg`` or ``embed`` client."""
    endpoint = {"vlm": settings.endpoint, "seg": settings.seg_endpoint, "embed": settings.embed_endpoint}.get(kind, "")
    if kind not in ("vlm", "seg", "embed"):
        raise ValueError(f"unknown backend kind {kind!r}")
    if not endpoint:
        raise BackendError(f"no endpoint configured for the {kind} backend")
    if not settings.api_key:
        raise BackendError(f"no API key configured for the {kind} backend (OPENGROUND_API_KEY)")
    extra = {"sleep": sleep} if sleep is not None else {}
    client = JsonHttpClient(
        endpoint,
        settings.api_key,
        transport=transport,
        max_retries=settings.max_retries,
        max_in_flight=settings.max_in_flight,
        **extra,
    )
    if kind == "vlm":
        if not settings.model:
            raise BackendError("no model name configured (OPENGROUND_MODEL)")
        return WireVlm(client, settings.model, temperature=settings.temperature)
    if kind == "seg":
        return WireSeg(client)
    return WireEmbedder(client)
