"""Client-side verification of multi-hop call chains.

Starting from a head event digest, the verifier walks prev links back to
genesis, and for every event checks actor authenticity (card or registry),
the audited proof package, and citation validity.  It also recomputes the
workflow hash-chain commitments R_0..R_n (the linear fold over canonical
event bytes, distinct from the Merkle roots).

Verification is diagnostic: a failing step is marked but ancestors are
still examined, and the overall verdict is the conjunction of every check.
A failing verdict means dependent events must not be appended.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import httpx

from agentlineage import crypto
from agentlineage.errors import (
    CardFetchError,
    CardParseError,
    NotFoundError,
    TransportError,
)
from agentlineage.events import (
    LineageEvent,
    canonical_encode,
    event_digest_hex,
    verify_event_sig,
)
from agentlineage.identity import (
    AgentCard,
    CardVerdict,
    HumanRegistry,
    fetch_card,
    verify_card,
)
from agentlineage.proofserver import PackageVerdict, ProofPackage, verify_proof_package


class ActorVerdict(enum.Enum):
    OK = "ok"
    UNKNOWN_ACTOR = "unknown_actor"
    CARD_INVALID = "card_invalid"
    IDENTITY_MISMATCH = "identity_mismatch"
    BAD_SIGNATURE = "bad_signature"


def verify_actor(event: LineageEvent, card_or_entry) -> ActorVerdict:
    """Authenticate one event against an agent card or registry entry.

    Agents present a card: the card itself must verify, its agent_id must
    match the event, and the event signature must check under the card's
    key.  Humans present a registry entry (agent_id + public key).
    """
    if isinstance(card_or_entry, AgentCard):
        if verify_card(card_or_entry) is not CardVerdict.OK:
            return ActorVerdict.CARD_INVALID
        if card_or_entry.agent_id != event.agent_id:
            return ActorVerdict.IDENTITY_MISMATCH
        key_str = card_or_entry.public_key
    elif isinstance(card_or_entry, Mapping):
        if card_or_entry.get("agent_id") != event.agent_id:
            return ActorVerdict.IDENTITY_MISMATCH
        key_str = card_or_entry.get("public_key", "")
    else:
        return ActorVerdict.UNKNOWN_ACTOR
    try:
        public_key = crypto.decode_public_key(key_str)
    except (ValueError, TypeError):
        return ActorVerdict.UNKNOWN_ACTOR
    if not verify_event_sig(event, public_key):
        return ActorVerdict.BAD_SIGNATURE
    return ActorVerdict.OK


@dataclass(frozen=True)
class LogTrust:
    log_id: str  # lowercase hex
    public_key: str
    base_url: str | None = None


@dataclass
class TrustConfig:
    """Trust roots a verifier needs: PS key, log keys, cards, human registry."""

    ps_public_key: str
    logs: list[LogTrust] = field(default_factory=list)
    cards: list[AgentCard] = field(default_factory=list)
    card_urls: list[str] = field(default_factory=list)
    human_registry: HumanRegistry | None = None

    def __post_init__(self):
        ids = [entry.log_id for entry in self.logs]
        if len(set(ids)) != len(ids):
            raise ValueError("trust config log_ids must be unique")

    @property
    def trusted_log_keys(self) -> dict[str, str]:
        return {entry.log_id: entry.public_key for entry in self.logs}

    def to_json_dict(self) -> dict:
        return {
            "ps_public_key": self.ps_public_key,
            "logs": [
                {
                    "log_id": entry.log_id,
                    "public_key": entry.public_key,
                    "base_url": entry.base_url,
                }
                for entry in self.logs
            ],
            "cards": [card.to_json_dict() for card in self.cards],
            "card_urls": list(self.card_urls),
            "human_registry": (
                self.human_registry.to_json_dict() if self.human_registry else None
            ),
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "TrustConfig":
        registry = doc.get("human_registry")
        return cls(
            ps_public_key=doc["ps_public_key"],
            logs=[
                LogTrust(
                    log_id=entry["log_id"],
                    public_key=entry["public_key"],
                    base_url=entry.get("base_url"),
                )
                for entry in doc.get("logs", [])
            ],
            cards=[AgentCard.from_json_dict(c) for c in doc.get("cards", [])],
            card_urls=list(doc.get("card_urls", [])),
            human_registry=HumanRegistry.from_json_dict(registry) if registry else None,
        )

    @classmethod
    def load(cls, path: str | Path) -> "TrustConfig":
        return cls.from_json_dict(json.loads(Path(path).read_text()))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")


class _ActorDirectory:
    """agent_id -> card / registry entry, assembled from a trust config."""

    def __init__(self, trust: TrustConfig, *, http_client: httpx.Client | None = None):
        self._cards: dict[str, AgentCard] = {
            card.agent_id: card for card in trust.cards
        }
        for url in trust.card_urls:
            try:
                card = fetch_card(url, client=http_client)
            except CardFetchError as exc:
                raise TransportError(f"card source {url}: {exc}") from exc
            except CardParseError as exc:
                raise TransportError(f"card source {url}: {exc}") from exc
            self._cards[card.agent_id] = card
        self._registry = trust.human_registry
        self._registry_ok = bool(self._registry) and self._registry.verify()

    def lookup(self, agent_id: str):
        """Returns ("agent", card), ("human", role, entry), or None."""
        card = self._cards.get(agent_id)
        if card is not None:
            return ("agent", card)
        if self._registry is not None and self._registry_ok:
            found = self._registry.entry_for_agent_id(agent_id)
            if found is not None:
                role, entry = found
                return ("human", role, entry)
        return None


@dataclass
class StepReport:
    """Verification outcome for one event on the chain."""

    position: int
    event_digest: str
    actor_id: str
    actor_kind: str  # agent | human | unknown
    actor_label: str  # card name or registry role
    action_type: str
    actor_verdict: str
    package_verdict: str
    prev_verdict: str
    cites_verdicts: dict[str, str] = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json_dict(self) -> dict:
        return {
            "position": self.position,
            "event_digest": self.event_digest,
            "actor_id": self.actor_id,
            "actor_kind": self.actor_kind,
            "actor_label": self.actor_label,
            "action_type": self.action_type,
            "actor_verdict": self.actor_verdict,
            "package_verdict": self.package_verdict,
            "prev_verdict": self.prev_verdict,
            "cites_verdicts": self.cites_verdicts,
            "ok": self.ok,
            "failures": self.failures,
        }


@dataclass
class ChainReport:
    """Ordered (genesis-first) step reports plus the recomputed commitments."""

    head: str
    steps: list[StepReport]
    commitment_roots: list[str]
    overall_ok: bool
    first_failure: str | None
    package_verifications: int

    def to_json_dict(self) -> dict:
        return {
            "head": self.head,
            "overall": "ok" if self.overall_ok else "fail",
            "first_failure": self.first_failure,
            "commitment_roots": self.commitment_roots,
            "package_verifications": self.package_verifications,
            "steps": [step.to_json_dict() for step in self.steps],
        }


def commitment_roots(events: list[LineageEvent]) -> list[bytes]:
    """Workflow hash-chain roots: R_0 = H(e_0), R_t = H(R_{t-1} || e_t).

    Events must be prev-linked in order; a broken link raises ValueError.
    """
    if not events:
        raise ValueError("event list must be non-empty")
    roots: list[bytes] = []
    prev_digest: str | None = None
    for position, event in enumerate(events):
        if position > 0 and event.prev != prev_digest:
            raise ValueError(f"broken prev link at position {position}")
        encoding = canonical_encode(event)
        if not roots:
            roots.append(hashlib.sha256(encoding).digest())
        else:
            roots.append(hashlib.sha256(roots[-1] + encoding).digest())
        prev_digest = event_digest_hex(event)
    return roots


def _as_fetcher(source) -> Callable[[str], ProofPackage]:
    if callable(source):
        return source
    if hasattr(source, "build_proof_package"):
        return source.build_proof_package
    if hasattr(source, "fetch_package"):
        return source.fetch_package
    raise TypeError(f"cannot fetch packages from {type(source).__name__}")


#: Citation policy for verify_chain: action types that must cite at least one
#: event of each named action type.
CitesPolicy = Mapping[str, frozenset[str] | set[str]]


def verify_chain(
    head: str,
    package_source,
    trust: TrustConfig,
    *,
    required_cites: CitesPolicy | None = None,
    http_client: httpx.Client | None = None,
    max_depth: int = 100_000,
) -> ChainReport:
    """Walk prev links from `head` to genesis and verify every step.

    `package_source` is anything that yields proof packages by digest: a
    ProofServer, an HTTP proof client, an offline capsule source, or a bare
    callable.  Transport problems raise TransportError; everything else is
    reported as a verdict, never an exception.
    """
    fetch = _as_fetcher(package_source)
    directory = _ActorDirectory(trust, http_client=http_client)
    log_keys = trust.trusted_log_keys

    packages: dict[str, ProofPackage | None] = {}
    verdicts: dict[str, PackageVerdict] = {}
    verification_count = 0

    def get_package(digest_hex: str) -> ProofPackage | None:
        if digest_hex in packages:
            return packages[digest_hex]
        try:
            pkg = fetch(digest_hex)
        except NotFoundError:
            pkg = None
        packages[digest_hex] = pkg
        return pkg

    def get_verdict(digest_hex: str) -> PackageVerdict | None:
        nonlocal verification_count
        if digest_hex in verdicts:
            return verdicts[digest_hex]
        pkg = get_package(digest_hex)
        if pkg is None:
            return None
        verdict = verify_proof_package(pkg, trust.ps_public_key, log_keys)
        verification_count += 1
        verdicts[digest_hex] = verdict
        return verdict

    # Walk to genesis.
    walk: list[tuple[str, ProofPackage | None]] = []
    visited: set[str] = set()
    cursor: str | None = head
    broken: str | None = None  # cycle / depth diagnostics
    while cursor is not None:
        if cursor in visited:
            broken = f"prev cycle at {cursor}"
            break
        if len(walk) >= max_depth:
            broken = f"chain exceeds max depth {max_depth}"
            break
        visited.add(cursor)
        pkg = get_package(cursor)
        walk.append((cursor, pkg))
        if pkg is None:
            break  # missing package: cannot walk deeper
        cursor = pkg.event.prev
    walk.reverse()  # genesis (or deepest reachable event) first

    steps: list[StepReport] = []
    for position, (digest_hex, pkg) in enumerate(walk):
        if pkg is None:
            steps.append(
                StepReport(
                    position=position,
                    event_digest=digest_hex,
                    actor_id="",
                    actor_kind="unknown",
                    actor_label="",
                    action_type="",
                    actor_verdict=ActorVerdict.UNKNOWN_ACTOR.value,
                    package_verdict="missing",
                    prev_verdict="unverifiable",
                    failures=["package:missing"],
                )
            )
            continue
        event = pkg.event
        failures: list[str] = []

        if event_digest_hex(event) != digest_hex:
            failures.append("digest:mismatch")

        found = directory.lookup(event.agent_id)
        if found is None:
            actor_kind, actor_label = "unknown", ""
            actor_verdict = ActorVerdict.UNKNOWN_ACTOR
        elif found[0] == "agent":
            actor_kind, actor_label = "agent", found[1].name
            actor_verdict = verify_actor(event, found[1])
        else:
            actor_kind, actor_label = "human", found[1]
            actor_verdict = verify_actor(event, found[2])
        if actor_verdict is not ActorVerdict.OK:
            failures.append(f"actor:{actor_verdict.value}")

        package_verdict = get_verdict(digest_hex)
        assert package_verdict is not None
        if package_verdict is not PackageVerdict.OK:
            failures.append(f"package:{package_verdict.value}")

        if position == 0:
            if event.prev is None:
                prev_verdict = "genesis"
            else:
                prev_verdict = "unresolved"
                failures.append("prev:unresolved")
        else:
            prev_verdict = "ok"  # linkage holds by construction of the walk

        cites_verdicts: dict[str, str] = {}
        for cited in event.cites:
            cited_verdict = get_verdict(cited)
            if cited_verdict is None:
                cites_verdicts[cited] = "missing"
                failures.append(f"cites:{cited[:16]}:missing")
            elif cited_verdict is not PackageVerdict.OK:
                cites_verdicts[cited] = cited_verdict.value
                failures.append(f"cites:{cited[:16]}:{cited_verdict.value}")
            else:
                cites_verdicts[cited] = "ok"
        if required_cites and event.action_type in required_cites:
            cited_types = set()
            for cited in event.cites:
                cited_pkg = packages.get(cited)
                if cited_pkg is not None:
                    cited_types.add(cited_pkg.event.action_type)
            for needed in sorted(required_cites[event.action_type]):
                if needed not in cited_types:
                    cites_verdicts[f"required:{needed}"] = "missing"
                    failures.append(f"cites:required:{needed}:missing")

        steps.append(
            StepReport(
                position=position,
                event_digest=digest_hex,
                actor_id=event.agent_id,
                actor_kind=actor_kind,
                actor_label=actor_label,
                action_type=event.action_type,
                actor_verdict=actor_verdict.value,
                package_verdict=package_verdict.value,
                prev_verdict=prev_verdict,
                cites_verdicts=cites_verdicts,
                failures=failures,
            )
        )

    roots: list[str] = []
    events = [pkg.event for _, pkg in walk if pkg is not None]
    if events and len(events) == len(walk) and broken is None:
        try:
            roots = [r.hex() for r in commitment_roots(events)]
        except ValueError:
            roots = []

    overall_ok = bool(steps) and all(step.ok for step in steps) and broken is None
    first_failure = None
    if broken is not None:
        first_failure = broken
        overall_ok = False
    else:
        for step in steps:
            if not step.ok:
                first_failure = (
                    f"step {step.position} ({step.action_type or step.event_digest[:16]}): "
                    + step.failures[0]
                )
                break

    return ChainReport(
        head=head,
        steps=steps,
        commitment_roots=roots,
        overall_ok=overall_ok,
        first_failure=first_failure,
        package_verifications=verification_count,
    )
