"""Text embedding providers used for label retrieval."""

from __future__ import annotations

import hashlib
import threading
from typing import Optional, Protocol

import numpy as np

from ..errors import EmbeddingError, SchemaError
from .http import JsonHttpClient


class EmbeddingProvider(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


class ExactMatchEmbedder:
    """Cosine 1 for identical strings, 0 otherwise (one-hot per distinct string)."""

    def __init__(self, dim: int = 4096):
        self.dim = dim
        self._slots: dict[str, int] = {}
        self._lock = threading.Lock()

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            slot = self._slots.setdefault(text, len(self._slots))
        if slot >= self.dim:
            raise EmbeddingError(text, f"more than {self.dim} distinct strings")
        vec = np.zeros(self.dim)
        vec[slot] = 1.0
        return vec


class HashEmbedder:
    """Seeded random unit vector per distinct string.

    Components are drawn from the positive orthant so every cosine lies in
    [0, 1]. Distinct strings sit around cosine 0.64 with spread ~0.05 at 256
    dimensions: at the usual 0.9 threshold this acts as exact matching while
    still exercising real cosines.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = np.abs(rng.standard_normal(self.dim))
        return vec / np.linalg.norm(vec)


class WireEmbedder:
    """Remote embedding service: POST ``{texts}`` -> ``{embeddings}``."""

    def __init__(self, client: JsonHttpClient, path: str = ""):
        self.client = client
        self.path = path
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        if text in self._cache:
            return self._cache[text]
        try:
            reply = self.client.post(self.path, {"texts": [text]})
            vectors = reply["embeddings"]
            if not isinstance(vectors, list) or len(vectors) != 1:
                raise SchemaError("expected exactly one embedding", reply)
            vec = np.asarray(vectors[0], dtype=np.float64)
            norm = np.linalg.norm(vec)
            if vec.ndim != 1 or not np.isfinite(norm) or norm == 0:
                raise SchemaError("degenerate embedding vector")
        except EmbeddingError:
            raise
        except Exception as exc:
            raise EmbeddingError(text, exc) from exc
        vec = vec / norm
        self._cache[text] = vec
        return vec


def make_embedder(kind: str, *, seed: int = 0, client: Optional[JsonHttpClient] = None) -> EmbeddingProvider:
    if kind == "hash":
        return HashEmbedder(seed=seed)
    if kind == "exact":
        return ExactMatchEmbedder()
    if kind == "wire":
        if client is None:
            raise ValueError("wire embedder needs an HTTP client")
        return WireEmbedder(client)
    raise ValueError(f"unknown embedder {kind!r}")
