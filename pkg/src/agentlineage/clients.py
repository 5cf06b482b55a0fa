"""Clients the proof server (and CLI) use to talk to lineage logs.

`LocalLogClient` serves in-process stores through the same interface the
HTTP client exposes, so the proof server stays at arm's length from store
internals either way.  Both keep per-endpoint call counters, which the
batching tests use to observe cache behaviour.
"""

from __future__ import annotations

from collections import Counter
from typing import Protocol

import httpx

from agentlineage.errors import NotFoundError, SubmissionRejected, TransportError
from agentlineage.events import LineageEvent
from agentlineage.store import LineageStore, LogRecord, SignedTreeHead


class LogClient(Protocol):
    def latest_sth(self) -> SignedTreeHead: ...

    def sth_at(self, size: int) -> SignedTreeHead: ...

    def get_entries(self, start: int, end: int) -> list[LogRecord]: ...


class LocalLogClient:
    """Direct view of an in-process LineageStore."""

    def __init__(self, store: LineageStore):
        self._store = store
        self.calls: Counter[str] = Counter()

    def latest_sth(self) -> SignedTreeHead:
        self.calls["sth"] += 1
        return self._store.latest_sth()

    def sth_at(self, size: int) -> SignedTreeHead:
        self.calls["sth_at"] += 1
        return self._store.sth_at(size)

    def get_entries(self, start: int, end: int) -> list[LogRecord]:
        self.calls["entries"] += 1
        return self._store.get_entries(start, end)

    def submit_event(self, event: LineageEvent) -> tuple[int, SignedTreeHead]:
        self.calls["submit"] += 1
        return self._store.submit_event(event)


class HttpLogClient:
    """Lineage store client over its HTTP+JSON interface."""

    def __init__(self, base_url: str, *, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(base_url=self.base_url, timeout=10.0)
        self.calls: Counter[str] = Counter()

    def close(self) -> None:
        self._client.close()

    def _get(self, path: str, **params) -> dict:
        try:
            response = self._client.get(path, params=params or None)
        except httpx.HTTPError as exc:
            raise TransportError(f"GET {path}: {exc}") from exc
        if response.status_code == 404:
            message = response.json().get("error", {}).get("message", "not found")
            raise NotFoundError(f"GET {path}: {message}")
        if response.status_code != 200:
            raise TransportError(f"GET {path}: HTTP {response.status_code}")
        return response.json()

    def latest_sth(self) -> SignedTreeHead:
        self.calls["sth"] += 1
        return SignedTreeHead.from_json_dict(self._get("/log/sth"))

    def sth_at(self, size: int) -> SignedTreeHead:
        self.calls["sth_at"] += 1
        return SignedTreeHead.from_json_dict(self._get(f"/log/sth/{size}"))

    def get_entries(self, start: int, end: int) -> list[LogRecord]:
        self.calls["entries"] += 1
        doc = self._get("/log/entries", start=start, end=end)
        return [LogRecord.from_json_dict(entry) for entry in doc["entries"]]

    def submit_event(self, event: LineageEvent) -> tuple[int, SignedTreeHead]:
        self.calls["submit"] += 1
        try:
            response = self._client.post("/log/entries", json=event.to_json_dict())
        except httpx.HTTPError as exc:
            raise TransportError(f"POST /log/entries: {exc}") from exc
        if response.status_code == 200:
            doc = response.json()
            return doc["leaf_index"], SignedTreeHead.from_json_dict(doc["sth"])
        if response.status_code == 400:
            error = response.json().get("error", {})
            raise SubmissionRejected(
                error.get("code", "rejected"), error.get("message", "rejected")
            )
        raise TransportError(f"POST /log/entries: HTTP {response.status_code}")
