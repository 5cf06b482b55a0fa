"""The Lineage Store: admission control, durable append, signed tree heads.

Events are accepted only when their signature verifies against a registered
identity (agent card or human registry entry), their prev link resolves,
and their (agent_id, action_id) pair is fresh.  Accepted events are written
to an append-only record file and fsynced before the covering STH is
released; rejected submissions land in a side journal, never in the tree.

Appends are serialized through one writer lock.  Readers (STHs, entries,
proofs) operate against the last committed size and never observe a
partially applied append.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from agentlineage import crypto
from agentlineage.canonical import canonical_bytes
from agentlineage.errors import SubmissionRejected
from agentlineage.events import LineageEvent, canonical_encode, event_digest
from agentlineage.identity import AgentCard, CardVerdict, HumanRegistry, verify_card
from agentlineage.merkle import (
    ConsistencyProof,
    InclusionProof,
    MerkleLog,
    Multiproof,
)

_RECORD_HEADER = struct.Struct(">QQ")  # append wallclock ms, payload length


def _default_clock() -> int:
    return time.time_ns() // 1_000_000


@dataclass(frozen=True)
class SignedTreeHead:
    """Signed snapshot of the log: (tree_size, root, time, counter, log id)."""

    tree_size: int
    root: bytes
    wallclock_t: int
    monotonic_ctr: int
    log_id: bytes
    signature: str

    def signing_body(self) -> bytes:
        return canonical_bytes(
            {
                "tree_size": self.tree_size,
                "root": self.root.hex(),
                "wallclock_t": self.wallclock_t,
                "monotonic_ctr": self.monotonic_ctr,
                "log_id": self.log_id.hex(),
            }
        )

    def to_json_dict(self) -> dict:
        return {
            "tree_size": self.tree_size,
            "root": self.root.hex(),
            "wallclock_t": self.wallclock_t,
            "monotonic_ctr": self.monotonic_ctr,
            "log_id": self.log_id.hex(),
            "signature": self.signature,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SignedTreeHead":
        return cls(
            tree_size=int(doc["tree_size"]),
            root=bytes.fromhex(doc["root"]),
            wallclock_t=int(doc["wallclock_t"]),
            monotonic_ctr=int(doc["monotonic_ctr"]),
            log_id=bytes.fromhex(doc["log_id"]),
            signature=doc["signature"],
        )


def verify_sth(sth: SignedTreeHead, public_key) -> bool:
    try:
        sig = crypto.decode_signature(sth.signature)
    except ValueError:
        return False
    return crypto.verify_signature(public_key, sig, sth.signing_body())


@dataclass(frozen=True)
class LogRecord:
    """One committed entry: position, event, digest, append wallclock."""

    leaf_index: int
    event: LineageEvent
    digest: bytes
    appended_at: int

    def to_json_dict(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "event": self.event.to_json_dict(),
            "event_digest": self.digest.hex(),
            "appended_at": self.appended_at,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "LogRecord":
        return cls(
            leaf_index=int(doc["leaf_index"]),
            event=LineageEvent.from_json_dict(doc["event"]),
            digest=bytes.fromhex(doc["event_digest"]),
            appended_at=int(doc["appended_at"]),
        )


class LineageStore:
    """Append-only event log over a Merkle tree, with durable persistence.

    `data_dir=None` keeps everything in memory (tests, throwaway demos).
    On restart the tree is rebuilt from the record file and checked against
    the persisted root checkpoint.
    """

    def __init__(
        self,
        signing_key: crypto.KeyPair,
        data_dir: str | Path | None = None,
        *,
        clock: Callable[[], int] | None = None,
    ):
        self._key = signing_key
        self.log_id = hashlib.sha256(signing_key.public_bytes).digest()
        self._clock = clock or _default_clock
        self._lock = threading.Lock()

        self._merkle = MerkleLog()
        self._records: list[LogRecord] = []
        self._digest_index: dict[str, int] = {}
        self._seen_actions: set[tuple[str, str]] = set()
        self._identities: dict[str, str] = {}  # agent_id -> public key string
        self._cards: dict[str, AgentCard] = {}  # card name -> card
        self._sth_by_size: dict[int, SignedTreeHead] = {}
        self._latest_sth: SignedTreeHead | None = None
        self._next_ctr = 0
        self._committed = 0

        self._data_dir = Path(data_dir) if data_dir is not None else None
        self._events_file = None
        self._sth_file = None
        if self._data_dir is not None:
            self._data_dir.mkdir(parents=True, exist_ok=True)
            self._load()
            self._events_file = open(self._data_dir / "events.log", "ab")
            self._sth_file = open(self._data_dir / "sths.jsonl", "a")
        if self._latest_sth is None:
            # fresh log: publish the empty-tree snapshot
            self._mint_sth()

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        for handle in (self._events_file, self._sth_file):
            if handle is not None:
                handle.close()
        self._events_file = None
        self._sth_file = None

    def _load(self) -> None:
        events_path = self._data_dir / "events.log"
        if events_path.exists():
            raw = events_path.read_bytes()
            offset = 0
            while offset < len(raw):
                appended_at, length = _RECORD_HEADER.unpack_from(raw, offset)
                offset += _RECORD_HEADER.size
                payload = raw[offset : offset + length]
                if len(payload) != length:
                    raise IOError(f"truncated record file {events_path}")
                offset += length
                event = LineageEvent.from_json_dict(json.loads(payload))
                self._ingest(event, payload, appended_at)
            self._committed = len(self._records)
        state_path = self._data_dir / "state.json"
        if state_path.exists():
            state = json.loads(state_path.read_text())
            if state["tree_size"] != self._merkle.size or state["root"] != (
                self._merkle.root.hex()
            ):
                raise IOError(
                    f"root checkpoint mismatch in {state_path}: "
                    "record file does not reproduce the checkpointed tree"
                )
        sth_path = self._data_dir / "sths.jsonl"
        if sth_path.exists():
            for line in sth_path.read_text().splitlines():
                if not line.strip():
                    continue
                sth = SignedTreeHead.from_json_dict(json.loads(line))
                self._sth_by_size.setdefault(sth.tree_size, sth)
                self._latest_sth = sth
                self._next_ctr = max(self._next_ctr, sth.monotonic_ctr + 1)
        cards_path = self._data_dir / "cards.json"
        if cards_path.exists():
            for doc in json.loads(cards_path.read_text()):
                card = AgentCard.from_json_dict(doc)
                self._cards[card.name] = card
                self._identities[card.agent_id] = card.public_key
        humans_path = self._data_dir / "humans.json"
        if humans_path.exists():
            registry = HumanRegistry.from_json_dict(json.loads(humans_path.read_text()))
            for entry in registry.entries.values():
                self._identities[entry["agent_id"]] = entry["public_key"]

    def _ingest(self, event: LineageEvent, payload: bytes, appended_at: int) -> None:
        digest = event_digest(event)
        index, _, _ = self._merkle.append(payload)
        record = LogRecord(
            leaf_index=index, event=event, digest=digest, appended_at=appended_at
        )
        self._records.append(record)
        self._digest_index[digest.hex()] = index
        self._seen_actions.add((event.agent_id, event.action_id))

    # -- identity registration ----------------------------------------------

    def register_card(self, card: AgentCard) -> None:
        """Admit an agent card after verifying it end to end."""
        verdict = verify_card(card)
        if verdict is not CardVerdict.OK:
            raise ValueError(f"refusing card {card.name!r}: {verdict.value}")
        self._cards[card.name] = card
        self._identities[card.agent_id] = card.public_key
        self._persist_cards()

    def register_humans(self, registry: HumanRegistry) -> None:
        if not registry.verify():
            raise ValueError("human registry failed its signature check")
        for entry in registry.entries.values():
            self._identities[entry["agent_id"]] = entry["public_key"]
        if self._data_dir is not None:
            (self._data_dir / "humans.json").write_text(
                json.dumps(registry.to_json_dict(), indent=2) + "\n"
            )

    def _persist_cards(self) -> None:
        if self._data_dir is not None:
            docs = [card.to_json_dict() for card in self._cards.values()]
            (self._data_dir / "cards.json").write_text(json.dumps(docs, indent=2) + "\n")

    def card_by_name(self, name: str) -> AgentCard | None:
        return self._cards.get(name)

    def cards(self) -> list[AgentCard]:
        return list(self._cards.values())

    # -- append path ---------------------------------------------------------

    def submit_event(self, event: LineageEvent) -> tuple[int, SignedTreeHead]:
        """Validate, durably append, and return (leaf_index, covering STH)."""
        with self._lock:
            try:
                self._admit(event)
            except SubmissionRejected as rejection:
                self._journal_rejection(event, rejection)
                raise
            payload = canonical_encode(event)
            appended_at = self._clock()
            if self._events_file is not None:
                self._events_file.write(
                    _RECORD_HEADER.pack(appended_at, len(payload)) + payload
                )
                self._events_file.flush()
                os.fsync(self._events_file.fileno())
            self._ingest(event, payload, appended_at)
            sth = self._mint_sth()
            self._committed = len(self._records)
            self._checkpoint()
            return len(self._records) - 1, sth

    def submit_batch(self, events: list[LineageEvent]) -> tuple[list[int], SignedTreeHead]:
        """Append several events under one covering STH.

        The whole batch is validated first; one bad event rejects the lot
        before anything is persisted.  Throughput knob only; durability
        ordering (records before STH) is the same as submit_event.
        """
        if not events:
            raise ValueError("batch must be non-empty")
        with self._lock:
            seen_in_batch: set[tuple[str, str]] = set()
            digests_in_batch: set[str] = set()
            for event in events:
                try:
                    self._admit(event, extra_prev=digests_in_batch)
                    key = (event.agent_id, event.action_id)
                    if key in seen_in_batch:
                        raise SubmissionRejected(
                            "duplicate", f"action_id {event.action_id} repeated in batch"
                        )
                    seen_in_batch.add(key)
                    digests_in_batch.add(event_digest(event).hex())
                except SubmissionRejected as rejection:
                    self._journal_rejection(event, rejection)
                    raise
            indices = []
            for event in events:
                payload = canonical_encode(event)
                appended_at = self._clock()
                if self._events_file is not None:
                    self._events_file.write(
                        _RECORD_HEADER.pack(appended_at, len(payload)) + payload
                    )
                self._ingest(event, payload, appended_at)
                indices.append(len(self._records) - 1)
            if self._events_file is not None:
                self._events_file.flush()
                os.fsync(self._events_file.fileno())
            sth = self._mint_sth()
            self._committed = len(self._records)
            self._checkpoint()
            return indices, sth

    def _admit(self, event: LineageEvent, extra_prev: set[str] | None = None) -> None:
        from agentlineage.events import verify_event_sig  # local to avoid cycle noise

        key_str = self._identities.get(event.agent_id)
        if key_str is None:
            raise SubmissionRejected(
                "unknown_agent", f"agent_id {event.agent_id} is not registered"
            )
        try:
            public_key = crypto.decode_public_key(key_str)
        except ValueError as exc:
            raise SubmissionRejected("unknown_agent", f"stored key unusable: {exc}")
        if not verify_event_sig(event, public_key):
            raise SubmissionRejected(
                "bad_signature", f"agent_sig does not verify for {event.agent_id}"
            )
        if (
            event.prev is not None
            and event.prev not in self._digest_index
            and event.prev not in (extra_prev or ())
        ):
            raise SubmissionRejected(
                "unknown_prev", f"prev {event.prev} is not a stored event"
            )
        if (event.agent_id, event.action_id) in self._seen_actions:
            raise SubmissionRejected(
                "duplicate",
                f"action_id {event.action_id} already committed for {event.agent_id}",
            )

    def _journal_rejection(self, event: LineageEvent, why: SubmissionRejected) -> None:
        if self._data_dir is None:
            return
        entry = {
            "at": self._clock(),
            "reason": why.reason,
            "message": str(why),
            "event": event.to_json_dict(),
        }
        with open(self._data_dir / "rejected.jsonl", "a") as journal:
            journal.write(json.dumps(entry) + "\n")

    def _mint_sth(self) -> SignedTreeHead:
        size = self._merkle.size
        unsigned = SignedTreeHead(
            tree_size=size,
            root=self._merkle.root_at(size),
            wallclock_t=self._clock(),
            monotonic_ctr=self._next_ctr,
            log_id=self.log_id,
            signature="",
        )
        sth = replace(
            unsigned,
            signature=crypto.encode_signature(self._key.sign(unsigned.signing_body())),
        )
        self._next_ctr += 1
        self._sth_by_size.setdefault(size, sth)
        self._latest_sth = sth
        if self._sth_file is not None:
            self._sth_file.write(json.dumps(sth.to_json_dict()) + "\n")
            self._sth_file.flush()
        return sth

    def _checkpoint(self) -> None:
        if self._data_dir is None:
            return
        state = {"tree_size": self._merkle.size, "root": self._merkle.root.hex()}
        (self._data_dir / "state.json").write_text(json.dumps(state) + "\n")

    # -- read path ------------------------------------------------------------

    @property
    def size(self) -> int:
        return self._committed

    @property
    def public_key_str(self) -> str:
        return self._key.public_str

    def latest_sth(self) -> SignedTreeHead:
        assert self._latest_sth is not None
        return self._latest_sth

    def sth_at(self, size: int) -> SignedTreeHead:
        sth = self._sth_by_size.get(size)
        if sth is None:
            raise ValueError(f"no STH issued at size {size} (log size {self.size})")
        return sth

    def issue_sth(self) -> SignedTreeHead:
        """Mint a fresh STH for the current size (on-demand signing)."""
        with self._lock:
            return self._mint_sth()

    def get_entries(self, start: int, end: int) -> list[LogRecord]:
        if not 0 <= start <= end <= self._committed:
            raise ValueError(
                f"range [{start}, {end}) invalid for log of size {self._committed}"
            )
        return self._records[start:end]

    def record_by_digest(self, digest_hex: str) -> LogRecord | None:
        index = self._digest_index.get(digest_hex)
        return self._records[index] if index is not None else None

    def root_at(self, size: int) -> bytes:
        if size > self._committed:
            raise ValueError(f"size {size} beyond committed {self._committed}")
        return self._merkle.root_at(size)

    def prove_inclusion(self, leaf_index: int, size: int) -> InclusionProof:
        if size > self._committed:
            raise ValueError(f"size {size} beyond committed {self._committed}")
        return self._merkle.prove_inclusion(leaf_index, size)

    def prove_consistency(self, first: int, second: int) -> ConsistencyProof:
        if second > self._committed:
            raise ValueError(f"size {second} beyond committed {self._committed}")
        return self._merkle.prove_consistency(first, second)

    def prove_multi(self, indices, size: int) -> Multiproof:
        if size > self._committed:
            raise ValueError(f"size {size} beyond committed {self._committed}")
        return self._merkle.prove_multi(indices, size)
