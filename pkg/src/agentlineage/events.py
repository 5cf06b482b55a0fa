"""Canonical action events and their signature binding.

A LineageEvent is the record an actor commits to the log: who acted
(agent_id), what (action_type plus an opaque context digest), when (ts),
and where it sits in the workflow (prev link and optional citations).

Two encodings matter:
  - the signing view: canonical bytes of every field except agent_sig
  - the committed view: canonical bytes including agent_sig

The committed view is what gets hashed into Merkle leaves and what event
digests (prev/cites references) are computed over.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace
from typing import Any

from agentlineage import crypto
from agentlineage.canonical import canonical_bytes
from agentlineage.errors import EncodingError, IdentityBindingError

_HEX_DIGEST_LEN = 64


def _is_hex_digest(value: Any) -> bool:
    if not isinstance(value, str) or len(value) != _HEX_DIGEST_LEN:
        return False
    try:
        bytes.fromhex(value)
    except ValueError:
        return False
    return value == value.lower()


@dataclass(frozen=True)
class LineageEvent:
    """One committed action record.

    `prev` and `cites` carry event digests (lowercase hex) of earlier
    events; `prev` is absent only on the genesis event of a workflow.
    """

    agent_id: str
    action_id: str
    ts: int
    action_type: str
    context_hash: str
    prev: str | None = None
    cites: tuple[str, ...] = ()
    agent_sig: str | None = None

    def to_json_dict(self, *, include_sig: bool = True) -> dict:
        doc: dict[str, Any] = {
            "agent_id": self.agent_id,
            "action_id": self.action_id,
            "ts": self.ts,
            "action_type": self.action_type,
            "context_hash": self.context_hash,
        }
        if self.prev is not None:
            doc["prev"] = self.prev
        if self.cites:
            doc["cites"] = list(self.cites)
        if include_sig and self.agent_sig is not None:
            doc["agent_sig"] = self.agent_sig
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LineageEvent":
        if not isinstance(doc, dict):
            raise EncodingError("event document must be a JSON object")
        try:
            event = cls(
                agent_id=doc["agent_id"],
                action_id=doc["action_id"],
                ts=doc["ts"],
                action_type=doc["action_type"],
                context_hash=doc["context_hash"],
                prev=doc.get("prev"),
                cites=tuple(doc.get("cites", ())),
                agent_sig=doc.get("agent_sig"),
            )
        except KeyError as exc:
            raise EncodingError(f"event missing mandatory field {exc.args[0]!r}") from exc
        _validate(event, require_sig="agent_sig" in doc)
        return event


def _validate(event: LineageEvent, *, require_sig: bool) -> None:
    if not isinstance(event.agent_id, str) or not event.agent_id:
        raise EncodingError("agent_id must be a non-empty string")
    if not isinstance(event.action_id, str) or not event.action_id:
        raise EncodingError("action_id must be a non-empty string")
    if not isinstance(event.ts, int) or isinstance(event.ts, bool) or event.ts < 0:
        raise EncodingError("ts must be a non-negative integer (unix seconds)")
    if not isinstance(event.action_type, str) or not event.action_type:
        raise EncodingError("action_type must be a non-empty string")
    if not _is_hex_digest(event.context_hash):
        raise EncodingError("context_hash must be 64 lowercase hex chars")
    if event.prev is not None and not _is_hex_digest(event.prev):
        raise EncodingError("prev must be an event digest (64 lowercase hex chars)")
    for ref in event.cites:
        if not _is_hex_digest(ref):
            raise EncodingError("cites entries must be event digests")
    if require_sig and not isinstance(event.agent_sig, str):
        raise EncodingError("agent_sig must be a string when present")


def canonical_encode(event: LineageEvent, *, include_sig: bool = True) -> bytes:
    """Deterministic byte encoding; insertion order never leaks into bytes."""
    _validate(event, require_sig=False)
    if include_sig and event.agent_sig is None:
        raise EncodingError("event is unsigned; cannot produce committed encoding")
    return canonical_bytes(event.to_json_dict(include_sig=include_sig))


def sign_event(event: LineageEvent, signer) -> LineageEvent:
    """Sign the event's canonical encoding (minus the signature field).

    `signer` is anything exposing `agent_id` and a `keypair` (agents and
    human identities both qualify); its agent_id must match the event's.
    """
    if signer.agent_id != event.agent_id:
        raise IdentityBindingError(
            f"signer {signer.agent_id} cannot sign for {event.agent_id}"
        )
    message = canonical_encode(event, include_sig=False)
    sig = crypto.encode_signature(signer.keypair.sign(message))
    return replace(event, agent_sig=sig)


def verify_event_sig(event: LineageEvent, public_key) -> bool:
    """True iff agent_sig verifies over the signing view of the event."""
    if event.agent_sig is None:
        return False
    try:
        sig = crypto.decode_signature(event.agent_sig)
        message = canonical_encode(event, include_sig=False)
    except (ValueError, EncodingError):
        return False
    return crypto.verify_signature(public_key, sig, message)


def event_digest(event: LineageEvent) -> bytes:
    """SHA-256 of the committed encoding; the identity events refer to."""
    return hashlib.sha256(canonical_encode(event, include_sig=True)).digest()


def event_digest_hex(event: LineageEvent) -> str:
    return event_digest(event).hex()
