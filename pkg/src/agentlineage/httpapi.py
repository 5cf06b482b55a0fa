"""HTTP+JSON surfaces for the lineage store and the proof server.

All hashes travel as lowercase hex, all signatures as "ed25519:"-prefixed
strings.  Errors come back as {"error": {"code", "message"}} with a status
that distinguishes bad requests (400), unknown resources (404), and a
refused audit (502).
"""

from __future__ import annotations

import httpx
from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse

from agentlineage.errors import (
    AuditFailure,
    EncodingError,
    NotFoundError,
    SubmissionRejected,
    TransportError,
)
from agentlineage.events import LineageEvent
from agentlineage.proofserver import (
    ConsistencyBundle,
    MultiproofPackage,
    ProofPackage,
    ProofServer,
)
from agentlineage.store import LineageStore


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(
        status_code=status, content={"error": {"code": code, "message": message}}
    )


def create_log_app(store: LineageStore) -> FastAPI:
    app = FastAPI(title="lineage-store", docs_url=None, redoc_url=None)

    @app.post("/log/entries")
    def submit_entry(payload: dict = Body(...)):
        try:
            event = LineageEvent.from_json_dict(payload)
        except EncodingError as exc:
            return _error(400, "malformed_event", str(exc))
        try:
            leaf_index, sth = store.submit_event(event)
        except SubmissionRejected as exc:
            return _error(400, exc.reason, str(exc))
        return {"leaf_index": leaf_index, "sth": sth.to_json_dict()}

    @app.get("/log/sth")
    def latest_sth():
        return store.latest_sth().to_json_dict()

    @app.get("/log/sth/{size}")
    def sth_at(size: int):
        try:
            return store.sth_at(size).to_json_dict()
        except ValueError as exc:
            return _error(404, "no_sth", str(exc))

    @app.get("/log/entries")
    def get_entries(start: int, end: int):
        try:
            records = store.get_entries(start, end)
        except ValueError as exc:
            return _error(400, "range", str(exc))
        return {"entries": [record.to_json_dict() for record in records]}

    @app.get("/.well-known/agent-card.json")
    def well_known_card(request: Request):
        agent_id = request.query_params.get("agent_id")
        cards = store.cards()
        if agent_id:
            for card in cards:
                if card.agent_id == agent_id:
                    return card.to_json_dict()
            return _error(404, "unknown_card", f"no card for {agent_id}")
        if len(cards) == 1:
            return cards[0].to_json_dict()
        return _error(
            404,
            "ambiguous_card",
            f"{len(cards)} cards registered; pass ?agent_id= or use /agents/<name>",
        )

    @app.get("/agents/{name}/.well-known/agent-card.json")
    def agent_card(name: str):
        card = store.card_by_name(name)
        if card is None:
            return _error(404, "unknown_card", f"no card named {name!r}")
        return card.to_json_dict()

    return app


def create_proof_app(server: ProofServer) -> FastAPI:
    app = FastAPI(title="proof-server", docs_url=None, redoc_url=None)

    @app.get("/proof/package/{event_digest}")
    def proof_package(event_digest: str):
        try:
            return server.build_proof_package(event_digest).to_json_dict()
        except NotFoundError as exc:
            return _error(404, "not_found", str(exc))
        except AuditFailure as exc:
            return _error(502, "audit_failure", str(exc))

    @app.post("/proof/multi")
    def proof_multi(payload: dict = Body(...)):
        try:
            log_id = bytes.fromhex(payload["log_id"])
            digests = list(payload["digests"])
        except (KeyError, ValueError, TypeError) as exc:
            return _error(400, "malformed_request", f"need log_id and digests: {exc}")
        try:
            return server.build_multiproof_package(digests, log_id).to_json_dict()
        except NotFoundError as exc:
            return JSONResponse(
                status_code=404,
                content={
                    "error": {
                        "code": "not_found",
                        "message": str(exc),
                        "missing": exc.missing,
                    }
                },
            )
        except AuditFailure as exc:
            return _error(502, "audit_failure", str(exc))

    @app.get("/proof/consistency")
    def proof_consistency(log_id: str, first: int, second: int):
        try:
            bundle = server.get_consistency(bytes.fromhex(log_id), first, second)
        except NotFoundError as exc:
            return _error(404, "not_found", str(exc))
        except ValueError as exc:
            return _error(400, "range", str(exc))
        except AuditFailure as exc:
            return _error(502, "audit_failure", str(exc))
        return bundle.to_json_dict()

    @app.get("/ps/key")
    def ps_key():
        return {"public_key": server.public_str}

    return app


class HttpProofClient:
    """Proof-server client; usable directly as a verify_chain package source."""

    def __init__(self, base_url: str, *, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(base_url=self.base_url, timeout=10.0)

    def close(self) -> None:
        self._client.close()

    def _request(self, method: str, path: str, **kwargs):
        try:
            response = self._client.request(method, path, **kwargs)
        except httpx.HTTPError as exc:
            raise TransportError(f"{method} {path}: {exc}") from exc
        if response.status_code == 404:
            doc = response.json().get("error", {})
            raise NotFoundError(
                doc.get("message", "not found"), missing=doc.get("missing", [])
            )
        if response.status_code == 502:
            doc = response.json().get("error", {})
            raise AuditFailure("?", doc.get("message", "audit failure"))
        if response.status_code != 200:
            raise TransportError(f"{method} {path}: HTTP {response.status_code}")
        return response.json()

    def fetch_package(self, event_digest: str) -> ProofPackage:
        doc = self._request("GET", f"/proof/package/{event_digest}")
        return ProofPackage.from_json_dict(doc)

    # Alias so the client satisfies the same duck type as ProofServer.
    build_proof_package = fetch_package

    def fetch_multiproof(self, log_id: str, digests: list[str]) -> MultiproofPackage:
        doc = self._request(
            "POST", "/proof/multi", json={"log_id": log_id, "digests": digests}
        )
        return MultiproofPackage.from_json_dict(doc)

    def fetch_consistency(self, log_id: str, first: int, second: int) -> ConsistencyBundle:
        doc = self._request(
            "GET",
            "/proof/consistency",
            params={"log_id": log_id, "first": first, "second": second},
        )
        return ConsistencyBundle.from_json_dict(doc)

    def public_key(self) -> str:
        return self._request("GET", "/ps/key")["public_key"]
