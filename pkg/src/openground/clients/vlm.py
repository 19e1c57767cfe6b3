"""Vision-language model backends.

A request carries the rendered prompt, the ordered images and, as side-channel
data that never goes over the wire, the template bindings. Scripted fixtures
match on ``(template_id, sha256(prompt), [sha256(image pixels)])``.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Protocol, Sequence

import numpy as np

from ..errors import BackendError, SchemaError
from ..io import atomic_write_json
from .http import JsonHttpClient

DEFAULT_TEMPERATURE = 0.2


@dataclass(frozen=True)
class Annotation:
    entry_id: int
    label: str
    role: str  # "grounded" | "candidate" | "mentioned"
    box2d: tuple[int, int, int, int]  # x0, y0, x1, y1 (inclusive pixels)
    box3d: Any = None
    points: Any = None  # PointSet of the annotated entry, if known


@dataclass(frozen=True)
class ViewImage:
    view_id: int
    pixels: np.ndarray  # (H, W, 3) uint8
    annotations: tuple[Annotation, ...] = ()

    @property
    def digest(self) -> str:
        return image_digest(self.pixels)


def image_digest(pixels: np.ndarray) -> str:
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    h = hashlib.sha256(repr(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def png_bytes(pixels: np.ndarray) -> bytes:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(pixels, dtype=np.uint8)).save(buf, format="PNG")
    return buf.getvalue()


def png_base64(pixels: np.ndarray) -> str:
    return base64.b64encode(png_bytes(pixels)).decode("ascii")


@dataclass(frozen=True)
class VlmRequest:
    template_id: str
    prompt: str
    images: tuple[ViewImage, ...] = ()
    bindings: dict = field(default_factory=dict, compare=False)
    temperature: float = DEFAULT_TEMPERATURE
    context: dict = field(default_factory=dict, compare=False)  # structured extras, never sent

    def key(self) -> tuple[str, str, tuple[str, ...]]:
        return (self.template_id, text_digest(self.prompt), tuple(im.digest for im in self.images))


class VlmBackend(Protocol):
    def complete(self, request: VlmRequest) -> str: ...


def _match(key) -> dict:
    return {"template_id": key[0], "prompt_digest": key[1], "image_digests": list(key[2])}


class ScriptedVlm:
    """Replays replies from a fixture list ``[{match, reply}]``."""

    def __init__(self, fixtures: Sequence[dict]):
        self._replies: dict[tuple, str] = {}
        for n, fx in enumerate(fixtures):
            try:
                m = fx["match"]
                key = (m["template_id"], m["prompt_digest"], tuple(m["image_digests"]))
                reply = fx["reply"]
            except (KeyError, TypeError) as exc:
                raise SchemaError(f"fixture #{n} malformed: missing {exc}", fx) from None
            if key in self._replies and self._replies[key] != reply:
                raise SchemaError(f"fixture #{n} conflicts with an earlier fixture", m)
            self._replies[key] = reply

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedVlm":
        return cls(json.loads(Path(path).read_text()))

    def __len__(self):
        return len(self._replies)

    def complete(self, request: VlmRequest) -> str:
        try:
            return self._replies[request.key()]
        except KeyError:
            raise BackendError(
                f"no scripted reply for {request.template_id} request "
                f"(prompt {text_digest(request.prompt)[:12]}, {len(request.images)} images)"
            ) from None


class RecordingVlm:
    """Wraps a backend and captures every exchange in fixture format."""

    def __init__(self, inner: VlmBackend):
        self.inner = inner
        self.log: list[dict] = []
        self._lock = threading.Lock()

    def complete(self, request: VlmRequest) -> str:
        reply = self.inner.complete(request)
        with self._lock:
            self.log.append({"match": _match(request.key()), "reply": reply})
        return reply

    def fixtures(self) -> list[dict]:
        unique = {json.dumps(e, sort_keys=True): e for e in self.log}
        return [unique[k] for k in sorted(unique)]

    def save(self, path: str | Path) -> None:
        atomic_write_json(path, self.fixtures())


class WireVlm:
    """OpenAI-compatible chat-completions client."""

    def __init__(self, client: JsonHttpClient, model: str, *, path: str = "chat/completions", temperature: Optional[float] = None):
        self.client = client
        self.model = model
        self.path = path
        self.temperature = temperature

    def payload(self, request: VlmRequest) -> dict:
        content = [{"type": "text", "text": request.prompt}]
        for im in request.images:
            content.append(
                {"type": "image_url", "image_url": {"url": "data:image/png;base64," + png_base64(im.pixels)}}
            )
        temperature = request.temperature if self.temperature is None else self.temperature
        return {
            "model": self.model,
            "temperature": temperature,
            "messages": [{"role": "user", "content": content}],
        }

    def complete(self, request: VlmRequest) -> str:
        reply = self.client.post(self.path, self.payload(request))
        try:
            content = reply["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise SchemaError("chat completion reply lacks choices[0].message.content", reply) from None
        if not isinstance(content, str):
            raise SchemaError("chat completion content is not text", content)
        return content


def ask(
    vlm: VlmBackend,
    template_id: str,
    bindings: dict,
    images: Sequence[ViewImage] = (),
    *,
    retries: int = 2,
    validate=None,
    temperature: float = DEFAULT_TEMPERATURE,
    context: dict | None = None,
):
    """Prompt, parse and optionally validate; re-prompt on schema violations.

    ``validate`` may transform the parsed payload and raises ``SchemaError``
    to reject it. After ``retries`` re-prompts the last error propagates.
    """
    from .prompts import instantiate
    from .replies import parse_reply

    prompt_bindings = dict(bindings)
    if "images" in prompt_bindings:
        prompt_bindings["images"] = len(images)
    request = VlmRequest(
        template_id,
        instantiate(template_id, prompt_bindings),
        tuple(images),
        dict(bindings),
        temperature,
        dict(context or {}),
    )
    last: SchemaError | None = None
    for _ in range(retries + 1):
        reply = vlm.complete(request)
        try:
            payload = parse_reply(template_id, reply)
            return validate(payload) if validate is not None else payload
        except SchemaError as exc:
            last = exc
    assert last is not None
    raise last
