"""JSON-over-HTTP with bounded retries and an in-flight cap."""

from __future__ import annotations

import json
import threading
import time
from typing import Any, Callable, Optional

import httpx

from ..errors import AuthError, BackendError, RateLimitError, SchemaError, TransportError


def encode_body(payload: Any) -> bytes:
    # Canonical bytes so recorded exchanges replay byte-identically.
    return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")


class JsonHttpClient:
    def __init__(
        self,
        endpoint: str,
        api_key: Optional[str] = None,
        *,
        transport: Optional[httpx.BaseTransport] = None,
        max_retries: int = 4,
        backoff: float = 0.5,
        timeout: float = 120.0,
        max_in_flight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not endpoint:
            raise BackendError("no endpoint configured")
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.max_retries = max_retries
        self.backoff = backoff
        self.sleep = sleep
        self._client = httpx.Client(transport=transport, timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def post(self, path: str, payload: Any) -> Any:
        url = f"{self.endpoint}/{path.lstrip('/')}" if path else self.endpoint
        headers = {"content-type": "application/json"}
        if self.api_key:
            headers["authorization"] = f"Bearer {self.api_key}"
        body = encode_body(payload)
        last: Exception = TransportError("no attempt made")
        for attempt in range(self.max_retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    resp = self._client.post(url, content=body, headers=headers)
            except httpx.TransportError as exc:
                last = TransportError(f"{url}: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{url}: HTTP {resp.status_code} (check API key)")
            if resp.status_code == 429:
                last = RateLimitError(f"{url}: HTTP 429")
                continue
            if resp.status_code >= 500:
                last = TransportError(f"{url}: HTTP {resp.status_code}")
                continue
            if resp.status_code >= 400:
                raise BackendError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise SchemaError("response is not JSON", resp.text[:200]) from exc
        raise last

    def close(self):
        self._client.close()
