"""The Proof Server: an auditor over one or more lineage logs.

The server mirrors each configured log through the log's public client
API, re-deriving every leaf hash itself.  A new tree head is accepted only
after (a) its signature checks out, (b) the mirrored tree reproduces its
root, and (c) a consistency proof links it to the previously verified head
for that log.  Only then will the server assemble and counter-sign proof
packages.  A log that fails any of these checks is marked poisoned and the
incident recorded; no signature is ever issued from a failed audit.

Verified tree heads are cached; concurrent requests against the same
snapshot coalesce onto a single upstream fetch.
"""

from __future__ import annotations

import enum
import json
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

from agentlineage import crypto
from agentlineage.canonical import canonical_bytes
from agentlineage.clients import LogClient
from agentlineage.errors import AuditFailure, NotFoundError
from agentlineage.events import LineageEvent, canonical_encode, event_digest
from agentlineage.merkle import (
    ConsistencyProof,
    InclusionProof,
    MerkleLog,
    Multiproof,
    hash_leaf,
    verify_consistency,
    verify_inclusion,
    verify_multi,
)
from agentlineage.store import LogRecord, SignedTreeHead, verify_sth


@dataclass(frozen=True)
class ProofPackage:
    """Audited bundle for one event: STH + inclusion proof per covering log,
    counter-signed by the proof server."""

    event: LineageEvent
    leaf_hash: bytes
    sths: tuple[SignedTreeHead, ...]
    inclusion_proofs: tuple[InclusionProof, ...]
    ps_signature: str

    def signing_body(self) -> bytes:
        return canonical_bytes(
            {
                "event": self.event.to_json_dict(),
                "leaf_hash": self.leaf_hash.hex(),
                "sths": [sth.to_json_dict() for sth in self.sths],
                "inclusion_proofs": [p.to_json_dict() for p in self.inclusion_proofs],
            }
        )

    def to_json_dict(self) -> dict:
        return {
            "event": self.event.to_json_dict(),
            "leaf_hash": self.leaf_hash.hex(),
            "sths": [sth.to_json_dict() for sth in self.sths],
            "inclusion_proofs": [p.to_json_dict() for p in self.inclusion_proofs],
            "ps_signature": self.ps_signature,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ProofPackage":
        return cls(
            event=LineageEvent.from_json_dict(doc["event"]),
            leaf_hash=bytes.fromhex(doc["leaf_hash"]),
            sths=tuple(SignedTreeHead.from_json_dict(s) for s in doc["sths"]),
            inclusion_proofs=tuple(
                InclusionProof.from_json_dict(p) for p in doc["inclusion_proofs"]
            ),
            ps_signature=doc["ps_signature"],
        )


@dataclass(frozen=True)
class MultiproofPackage:
    """Batch bundle: several events of one log under a single multiproof."""

    log_id: bytes
    events: tuple[LineageEvent, ...]
    multiproof: Multiproof
    sth: SignedTreeHead
    ps_signature: str

    def signing_body(self) -> bytes:
        return canonical_bytes(
            {
                "log_id": self.log_id.hex(),
                "events": [e.to_json_dict() for e in self.events],
                "multiproof": self.multiproof.to_json_dict(),
                "sth": self.sth.to_json_dict(),
            }
        )

    def to_json_dict(self) -> dict:
        return {
            "log_id": self.log_id.hex(),
            "events": [e.to_json_dict() for e in self.events],
            "multiproof": self.multiproof.to_json_dict(),
            "sth": self.sth.to_json_dict(),
            "ps_signature": self.ps_signature,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "MultiproofPackage":
        return cls(
            log_id=bytes.fromhex(doc["log_id"]),
            events=tuple(LineageEvent.from_json_dict(e) for e in doc["events"]),
            multiproof=Multiproof.from_json_dict(doc["multiproof"]),
            sth=SignedTreeHead.from_json_dict(doc["sth"]),
            ps_signature=doc["ps_signature"],
        )


@dataclass(frozen=True)
class ConsistencyBundle:
    """Consistency proof between two audited snapshots of one log."""

    log_id: bytes
    proof: ConsistencyProof
    sth_first: SignedTreeHead
    sth_second: SignedTreeHead
    ps_signature: str

    def signing_body(self) -> bytes:
        return canonical_bytes(
            {
                "log_id": self.log_id.hex(),
                "proof": self.proof.to_json_dict(),
                "sth_first": self.sth_first.to_json_dict(),
                "sth_second": self.sth_second.to_json_dict(),
            }
        )

    def to_json_dict(self) -> dict:
        return {
            "log_id": self.log_id.hex(),
            "proof": self.proof.to_json_dict(),
            "sth_first": self.sth_first.to_json_dict(),
            "sth_second": self.sth_second.to_json_dict(),
            "ps_signature": self.ps_signature,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ConsistencyBundle":
        return cls(
            log_id=bytes.fromhex(doc["log_id"]),
            proof=ConsistencyProof.from_json_dict(doc["proof"]),
            sth_first=SignedTreeHead.from_json_dict(doc["sth_first"]),
            sth_second=SignedTreeHead.from_json_dict(doc["sth_second"]),
            ps_signature=doc["ps_signature"],
        )


class PackageVerdict(enum.Enum):
    OK = "ok"
    BAD_PS_SIG = "bad_ps_sig"
    BAD_STH_SIG = "bad_sth_sig"
    BAD_INCLUSION = "bad_inclusion"
    BAD_LEAF = "bad_leaf"


def _resolve_key(value):
    if isinstance(value, str):
        return crypto.decode_public_key(value)
    return value


def verify_proof_package(
    pkg: ProofPackage,
    ps_public_key,
    trusted_log_keys: Mapping[str, object],
) -> PackageVerdict:
    """Full client-side check of an audited proof package.

    Verifies, in order: the leaf hash against the embedded event, each
    STH's signature under its log's trusted key, each inclusion proof
    against its paired STH, and finally the proof-server signature over
    the whole body.  The first failing layer names the verdict.
    """
    try:
        ps_key = _resolve_key(ps_public_key)
    except ValueError:
        return PackageVerdict.BAD_PS_SIG
    try:
        leaf = hash_leaf(canonical_encode(pkg.event))
    except Exception:
        return PackageVerdict.BAD_LEAF
    if leaf != pkg.leaf_hash:
        return PackageVerdict.BAD_LEAF
    if not pkg.sths or len(pkg.sths) != len(pkg.inclusion_proofs):
        return PackageVerdict.BAD_INCLUSION
    for sth in pkg.sths:
        trusted = trusted_log_keys.get(sth.log_id.hex())
        if trusted is None:
            return PackageVerdict.BAD_STH_SIG
        try:
            log_key = _resolve_key(trusted)
        except ValueError:
            return PackageVerdict.BAD_STH_SIG
        if not verify_sth(sth, log_key):
            return PackageVerdict.BAD_STH_SIG
    for sth, proof in zip(pkg.sths, pkg.inclusion_proofs):
        if not verify_inclusion(leaf, proof, sth.root):
            return PackageVerdict.BAD_INCLUSION
    try:
        sig = crypto.decode_signature(pkg.ps_signature)
    except ValueError:
        return PackageVerdict.BAD_PS_SIG
    if not crypto.verify_signature(ps_key, sig, pkg.signing_body()):
        return PackageVerdict.BAD_PS_SIG
    return PackageVerdict.OK


def verify_multiproof_package(
    pkg: MultiproofPackage,
    ps_public_key,
    trusted_log_keys: Mapping[str, object],
) -> PackageVerdict:
    try:
        ps_key = _resolve_key(ps_public_key)
    except ValueError:
        return PackageVerdict.BAD_PS_SIG
    if len(pkg.events) != len(pkg.multiproof.indices):
        return PackageVerdict.BAD_LEAF
    try:
        leaves = {
            index: hash_leaf(canonical_encode(event))
            for index, event in zip(pkg.multiproof.indices, pkg.events)
        }
    except Exception:
        return PackageVerdict.BAD_LEAF
    trusted = trusted_log_keys.get(pkg.sth.log_id.hex())
    if trusted is None or pkg.sth.log_id != pkg.log_id:
        return PackageVerdict.BAD_STH_SIG
    try:
        log_key = _resolve_key(trusted)
    except ValueError:
        return PackageVerdict.BAD_STH_SIG
    if not verify_sth(pkg.sth, log_key):
        return PackageVerdict.BAD_STH_SIG
    if not verify_multi(leaves, pkg.multiproof, pkg.sth.root):
        return PackageVerdict.BAD_INCLUSION
    try:
        sig = crypto.decode_signature(pkg.ps_signature)
    except ValueError:
        return PackageVerdict.BAD_PS_SIG
    if not crypto.verify_signature(ps_key, sig, pkg.signing_body()):
        return PackageVerdict.BAD_PS_SIG
    return PackageVerdict.OK


@dataclass
class _LogHandle:
    log_id: bytes
    public_key: object
    client: LogClient
    mirror: MerkleLog = field(default_factory=MerkleLog)
    records: list[LogRecord] = field(default_factory=list)
    digest_index: dict[str, int] = field(default_factory=dict)
    verified_sth: SignedTreeHead | None = None
    synced_at: float = float("-inf")
    poisoned: str | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    # hot cache of audited historical STHs, keyed by size (bounded FIFO)
    recent_sths: dict[int, SignedTreeHead] = field(default_factory=dict)


class ProofServer:
    """Assembles, audits, and counter-signs proof packages.

    `logs` maps each upstream to (log_id, log public key, client).  The
    optional state directory persists the last verified STH per log and
    an incident journal, so a restarted server keeps its audit baseline.
    """

    def __init__(
        self,
        signing_key: crypto.KeyPair,
        logs: list[tuple[bytes, object, LogClient]],
        *,
        sth_cache_ttl: float = 1.0,
        sth_cache_size: int = 16,
        state_dir: str | Path | None = None,
    ):
        self._key = signing_key
        self.public_str = signing_key.public_str
        self._ttl = sth_cache_ttl
        self._cache_size = max(0, sth_cache_size)
        self._state_dir = Path(state_dir) if state_dir is not None else None
        if self._state_dir is not None:
            self._state_dir.mkdir(parents=True, exist_ok=True)
        self.incidents: list[dict] = []
        self.packages_signed = 0
        self._handles: dict[str, _LogHandle] = {}
        for log_id, public_key, client in logs:
            handle = _LogHandle(
                log_id=log_id,
                public_key=_resolve_key(public_key),
                client=client,
            )
            self._handles[log_id.hex()] = handle
        self._load_baselines()

    # -- audit baseline persistence -----------------------------------------

    def _baseline_path(self) -> Path | None:
        return None if self._state_dir is None else self._state_dir / "verified_sths.json"

    def _load_baselines(self) -> None:
        path = self._baseline_path()
        if path is None or not path.exists():
            return
        stored = json.loads(path.read_text())
        for log_hex, doc in stored.items():
            handle = self._handles.get(log_hex)
            if handle is not None:
                handle.verified_sth = SignedTreeHead.from_json_dict(doc)
                # Mirror is rebuilt lazily; until then treat the stored STH
                # as the consistency baseline only.
                handle.synced_at = float("-inf")

    def _persist_baseline(self) -> None:
        path = self._baseline_path()
        if path is None:
            return
        doc = {
            log_hex: handle.verified_sth.to_json_dict()
            for log_hex, handle in self._handles.items()
            if handle.verified_sth is not None
        }
        path.write_text(json.dumps(doc, indent=2) + "\n")

    def _record_incident(self, log_id: bytes, reason: str) -> None:
        incident = {"at": time.time(), "log_id": log_id.hex(), "reason": reason}
        self.incidents.append(incident)
        if self._state_dir is not None:
            with open(self._state_dir / "incidents.jsonl", "a") as journal:
                journal.write(json.dumps(incident) + "\n")

    def _fail_audit(self, handle: _LogHandle, reason: str) -> AuditFailure:
        handle.poisoned = reason
        self._record_incident(handle.log_id, reason)
        return AuditFailure(handle.log_id.hex(), reason)

    # -- mirror synchronisation ----------------------------------------------

    def _fresh(self, handle: _LogHandle) -> bool:
        return (
            handle.verified_sth is not None
            and time.monotonic() - handle.synced_at < self._ttl
        )

    def _ensure_fresh(self, handle: _LogHandle) -> None:
        """Sync unless the cached verified STH is inside its TTL.

        Double-checked locking: concurrent requests against the same
        snapshot coalesce onto a single upstream fetch.
        """
        if handle.poisoned:
            raise AuditFailure(handle.log_id.hex(), handle.poisoned)
        if self._fresh(handle):
            return
        with handle.lock:
            if handle.poisoned:
                raise AuditFailure(handle.log_id.hex(), handle.poisoned)
            if self._fresh(handle):
                return
            self._sync_locked(handle)
            handle.synced_at = time.monotonic()

    def _ensure_digest(self, handle: _LogHandle, digest_hex: str) -> None:
        """Sync if the digest is unknown or the cached STH fell out of TTL.

        Same single-flight discipline as _ensure_fresh, so a burst of
        requests for one snapshot still costs one upstream fetch.
        """

        def satisfied() -> bool:
            return digest_hex in handle.digest_index and self._fresh(handle)

        if handle.poisoned:
            raise AuditFailure(handle.log_id.hex(), handle.poisoned)
        if satisfied():
            return
        with handle.lock:
            if handle.poisoned:
                raise AuditFailure(handle.log_id.hex(), handle.poisoned)
            if satisfied():
                return
            self._sync_locked(handle)
            handle.synced_at = time.monotonic()

    def _sync_locked(self, handle: _LogHandle) -> None:
        sth = handle.client.latest_sth()
        previous = handle.verified_sth
        if sth.log_id != handle.log_id:
            raise self._fail_audit(handle, "log_id mismatch in served STH")
        if not verify_sth(sth, handle.public_key):
            raise self._fail_audit(handle, "STH signature invalid")
        if previous is not None:
            if sth.tree_size < previous.tree_size:
                raise self._fail_audit(
                    handle,
                    f"log shrank: verified size {previous.tree_size}, served {sth.tree_size}",
                )
            if sth.tree_size == previous.tree_size and sth.root != previous.root:
                raise self._fail_audit(
                    handle, f"equivocation: two roots at size {sth.tree_size}"
                )

        new_records: list[LogRecord] = []
        if sth.tree_size > handle.mirror.size:
            new_records = handle.client.get_entries(handle.mirror.size, sth.tree_size)
            if len(new_records) != sth.tree_size - handle.mirror.size:
                raise self._fail_audit(handle, "entry range came back short")
            payloads = []
            for offset, record in enumerate(new_records):
                expected_index = handle.mirror.size + offset
                if record.leaf_index != expected_index:
                    raise self._fail_audit(
                        handle, f"entry at position {expected_index} misnumbered"
                    )
                payload = canonical_encode(record.event)
                if event_digest(record.event) != record.digest:
                    raise self._fail_audit(
                        handle, f"entry {expected_index} digest mismatch"
                    )
                payloads.append((record, payload))
            for record, payload in payloads:
                handle.mirror.append(payload)
                handle.records.append(record)

        if handle.mirror.size < sth.tree_size:
            raise self._fail_audit(handle, "mirror shorter than served STH")
        if handle.mirror.root_at(sth.tree_size) != sth.root:
            raise self._fail_audit(
                handle,
                f"served root at size {sth.tree_size} does not match mirrored entries "
                "(possible fork)",
            )
        if previous is not None and previous.tree_size > 0:
            proof = handle.mirror.prove_consistency(previous.tree_size, sth.tree_size)
            if not verify_consistency(previous.root, sth.root, proof):
                raise self._fail_audit(
                    handle,
                    f"consistency check {previous.tree_size}->{sth.tree_size} failed",
                )
        # Publish order matters for lock-free readers: the verified STH must
        # advance before any new digest becomes findable, so a found index is
        # always covered by the STH a reader observes next.
        handle.verified_sth = sth
        for record in new_records:
            handle.digest_index[record.digest.hex()] = record.leaf_index
        self._persist_baseline()

    def refresh(self) -> None:
        """Force re-audit of every upstream log."""
        for handle in self._handles.values():
            if handle.poisoned:
                raise AuditFailure(handle.log_id.hex(), handle.poisoned)
            with handle.lock:
                self._sync_locked(handle)
                handle.synced_at = time.monotonic()

    # -- proof assembly --------------------------------------------------------

    def _covering_handles(self, digest_hex: str) -> list[_LogHandle]:
        covering = []
        for handle in self._handles.values():
            self._ensure_digest(handle, digest_hex)
            if digest_hex in handle.digest_index:
                covering.append(handle)
        return covering

    def build_proof_package(self, digest_hex: str) -> ProofPackage:
        """Assemble and sign the audited package for one event digest."""
        covering = self._covering_handles(digest_hex)
        if not covering:
            raise NotFoundError(
                f"event {digest_hex} not present in any configured log",
                missing=[digest_hex],
            )
        event: LineageEvent | None = None
        sths: list[SignedTreeHead] = []
        proofs: list[InclusionProof] = []
        leaf = b""
        for handle in covering:
            index = handle.digest_index[digest_hex]
            sth = handle.verified_sth
            assert sth is not None and index < sth.tree_size
            proof = handle.mirror.prove_inclusion(index, sth.tree_size)
            leaf = handle.mirror.leaf_hash_at(index)
            if not verify_inclusion(leaf, proof, sth.root):
                raise self._fail_audit(
                    handle, f"own inclusion proof for {digest_hex} failed verification"
                )
            event = handle.records[index].event
            sths.append(sth)
            proofs.append(proof)
        assert event is not None
        unsigned = ProofPackage(
            event=event,
            leaf_hash=leaf,
            sths=tuple(sths),
            inclusion_proofs=tuple(proofs),
            ps_signature="",
        )
        return self._countersign(unsigned)

    def _countersign(self, unsigned):
        signature = crypto.encode_signature(self._key.sign(unsigned.signing_body()))
        self.packages_signed += 1
        return replace(unsigned, ps_signature=signature)

    def build_multiproof_package(
        self, digest_hexes: list[str], log_id: bytes
    ) -> MultiproofPackage:
        handle = self._handles.get(log_id.hex())
        if handle is None:
            raise NotFoundError(f"log {log_id.hex()} is not configured")
        for digest_hex in digest_hexes:
            self._ensure_digest(handle, digest_hex)
        missing = [d for d in digest_hexes if d not in handle.digest_index]
        if missing:
            raise NotFoundError(
                f"{len(missing)} digests not present in log {log_id.hex()}: "
                + ", ".join(missing),
                missing=missing,
            )
        sth = handle.verified_sth
        assert sth is not None
        indices = sorted(handle.digest_index[d] for d in digest_hexes)
        proof = handle.mirror.prove_multi(tuple(indices), sth.tree_size)
        leaves = {i: handle.mirror.leaf_hash_at(i) for i in indices}
        if not verify_multi(leaves, proof, sth.root):
            raise self._fail_audit(handle, "own multiproof failed verification")
        unsigned = MultiproofPackage(
            log_id=handle.log_id,
            events=tuple(handle.records[i].event for i in indices),
            multiproof=proof,
            sth=sth,
            ps_signature="",
        )
        return self._countersign(unsigned)

    def get_consistency(
        self, log_id: bytes, first: int, second: int
    ) -> ConsistencyBundle:
        handle = self._handles.get(log_id.hex())
        if handle is None:
            raise NotFoundError(f"log {log_id.hex()} is not configured")
        if not 0 <= first <= second:
            raise ValueError("need 0 <= first <= second")
        current = handle.verified_sth
        if current is None or second > current.tree_size:
            if handle.poisoned:
                raise AuditFailure(handle.log_id.hex(), handle.poisoned)
            with handle.lock:
                self._sync_locked(handle)
                handle.synced_at = time.monotonic()
            current = handle.verified_sth
        if current is None or second > current.tree_size:
            raise ValueError(f"second size {second} beyond audited log size")
        sth_first = self._audited_sth_at(handle, first)
        sth_second = self._audited_sth_at(handle, second)
        proof = handle.mirror.prove_consistency(first, second)
        if not verify_consistency(sth_first.root, sth_second.root, proof):
            raise self._fail_audit(handle, "own consistency proof failed verification")
        unsigned = ConsistencyBundle(
            log_id=handle.log_id,
            proof=proof,
            sth_first=sth_first,
            sth_second=sth_second,
            ps_signature="",
        )
        return self._countersign(unsigned)

    def _audited_sth_at(self, handle: _LogHandle, size: int) -> SignedTreeHead:
        """Historical STH for one size, validated once then served hot.

        Eviction only costs a refetch; a cached entry was audited against
        the mirror before admission, so answers never change.
        """
        cached = handle.recent_sths.get(size)
        if cached is not None:
            return cached
        sth = handle.client.sth_at(size)
        if not verify_sth(sth, handle.public_key) or sth.log_id != handle.log_id:
            raise self._fail_audit(handle, f"historical STH at {size} invalid")
        if handle.mirror.root_at(sth.tree_size) != sth.root:
            raise self._fail_audit(
                handle, f"historical STH root at {size} mismatches mirror"
            )
        if self._cache_size:
            if len(handle.recent_sths) >= self._cache_size:
                handle.recent_sths.pop(next(iter(handle.recent_sths)))
            handle.recent_sths[size] = sth
        return sth

    # -- introspection ----------------------------------------------------------

    def log_ids(self) -> list[str]:
        return list(self._handles.keys())

    def client_for(self, log_id: bytes) -> LogClient:
        return self._handles[log_id.hex()].client
