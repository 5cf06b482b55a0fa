"""Agent identities, enhanced agent cards, and the human approver registry.

An agent's identifier is derived from its key material and provider:

    agent_id = "aid://" + SHA-256(public_key_raw32 || utf8(domain) || ascii_decimal(timestamp))

The card binds that identifier to the agent's declared skills through
identity_proof = Sign(agent_id || canonical(skills)).  Because the issuance
timestamp participates in the digest, the card carries it explicitly
(identity.issued_at) so verifiers can recompute the id.

Human approvers reuse the same keypair machinery; their public keys are
distributed through a signed registry file instead of per-agent cards.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from agentlineage import crypto
from agentlineage.canonical import canonical_bytes
from agentlineage.errors import CardFetchError, CardParseError

WELL_KNOWN_PATH = "/.well-known/agent-card.json"
MAX_CARD_BYTES = 1 << 20  # 1 MiB fetch cap


def derive_agent_id(public_key_bytes: bytes, domain: str, timestamp: int) -> str:
    """Deterministic agent identifier; stable across runs and processes."""
    if len(public_key_bytes) != 32:
        raise ValueError("public key must be 32 raw bytes")
    if not domain:
        raise ValueError("domain must be non-empty")
    if timestamp <= 0:
        raise ValueError("timestamp must be positive unix seconds")
    preimage = public_key_bytes + domain.encode("utf-8") + str(timestamp).encode("ascii")
    return "aid://" + hashlib.sha256(preimage).hexdigest()


@dataclass(frozen=True)
class Skill:
    id: str
    name: str
    description: str

    def to_json_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "description": self.description}


def skills_encoding(skills: tuple[Skill, ...]) -> bytes:
    return canonical_bytes([s.to_json_dict() for s in skills])


def identity_proof_message(agent_id: str, skills: tuple[Skill, ...]) -> bytes:
    return agent_id.encode("utf-8") + skills_encoding(skills)


@dataclass(frozen=True)
class AgentCard:
    """Enhanced agent card: A2A descriptor plus the identity block."""

    protocol_version: str
    name: str
    description: str
    url: str
    provider_name: str
    provider_domain: str
    skills: tuple[Skill, ...]
    agent_id: str
    public_key: str
    identity_proof: str
    issued_at: int | None
    merkle_proof_generation: bool = True
    dpop_binding: bool = True
    version: str | None = None
    capabilities: dict | None = None
    preferred_transport: str | None = None

    def to_json_dict(self) -> dict:
        doc: dict = {
            "protocolVersion": self.protocol_version,
            "name": self.name,
            "description": self.description,
            "url": self.url,
            "provider": {"name": self.provider_name, "domain": self.provider_domain},
            "skills": [s.to_json_dict() for s in self.skills],
            "identity": {
                "agent_id": self.agent_id,
                "public_key": self.public_key,
                "identity_proof": self.identity_proof,
                "lineage_support": {
                    "merkle_proof_generation": self.merkle_proof_generation,
                    "dpop_binding": self.dpop_binding,
                },
            },
        }
        if self.issued_at is not None:
            doc["identity"]["issued_at"] = self.issued_at
        if self.version is not None:
            doc["version"] = self.version
        if self.capabilities is not None:
            doc["capabilities"] = self.capabilities
        if self.preferred_transport is not None:
            doc["preferredTransport"] = self.preferred_transport
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AgentCard":
        if not isinstance(doc, dict):
            raise CardParseError("card must be a JSON object")
        try:
            provider = doc["provider"]
            identity = doc["identity"]
            lineage = identity.get("lineage_support", {})
            skills = tuple(
                Skill(id=s["id"], name=s["name"], description=s["description"])
                for s in doc["skills"]
            )
            issued_at = identity.get("issued_at")
            if issued_at is not None:
                issued_at = int(issued_at)
            return cls(
                protocol_version=doc["protocolVersion"],
                name=doc["name"],
                description=doc["description"],
                url=doc["url"],
                provider_name=provider["name"],
                provider_domain=provider["domain"],
                skills=skills,
                agent_id=identity["agent_id"],
                public_key=identity["public_key"],
                identity_proof=identity["identity_proof"],
                issued_at=issued_at,
                merkle_proof_generation=bool(lineage.get("merkle_proof_generation", False)),
                dpop_binding=bool(lineage.get("dpop_binding", False)),
                version=doc.get("version"),
                capabilities=doc.get("capabilities"),
                preferred_transport=doc.get("preferredTransport"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CardParseError(f"invalid agent card: {exc!r}") from exc


class CardVerdict(enum.Enum):
    OK = "ok"
    BAD_ID = "bad_id"
    BAD_PROOF = "bad_proof"
    MALFORMED = "malformed"


def verify_card(card: AgentCard, expected_timestamp: int | None = None) -> CardVerdict:
    """Recompute the agent_id and validate the identity proof.

    The issuance timestamp comes from the card (identity.issued_at) unless
    the caller pins one explicitly; disagreement between the two is a
    bad_id, a card without either is malformed.
    """
    try:
        public_key = crypto.decode_public_key(card.public_key)
        raw_key = public_key.public_bytes_raw()
    except (ValueError, TypeError):
        return CardVerdict.MALFORMED
    if not card.provider_domain or not isinstance(card.agent_id, str):
        return CardVerdict.MALFORMED
    timestamp = expected_timestamp if expected_timestamp is not None else card.issued_at
    if timestamp is None:
        return CardVerdict.MALFORMED
    if card.issued_at is not None and expected_timestamp is not None:
        if card.issued_at != expected_timestamp:
            return CardVerdict.BAD_ID
    try:
        expected_id = derive_agent_id(raw_key, card.provider_domain, timestamp)
    except ValueError:
        return CardVerdict.MALFORMED
    if expected_id != card.agent_id:
        return CardVerdict.BAD_ID
    try:
        sig = crypto.decode_signature(card.identity_proof)
    except ValueError:
        return CardVerdict.BAD_PROOF
    message = identity_proof_message(card.agent_id, card.skills)
    if not crypto.verify_signature(public_key, sig, message):
        return CardVerdict.BAD_PROOF
    return CardVerdict.OK


@dataclass(frozen=True)
class AgentIdentity:
    """Keypair plus the card it is published under."""

    keypair: crypto.KeyPair
    card: AgentCard

    @property
    def agent_id(self) -> str:
        return self.card.agent_id

    @property
    def public_key(self):
        return self.keypair.public_key


def generate_identity(
    domain: str,
    timestamp: int,
    *,
    name: str,
    description: str = "",
    url: str = "",
    skills: list[Skill] | tuple[Skill, ...] = (),
    provider_name: str | None = None,
    protocol_version: str = "1.0",
    version: str | None = None,
    capabilities: dict | None = None,
    preferred_transport: str | None = None,
    keypair: crypto.KeyPair | None = None,
) -> AgentIdentity:
    """Mint a keypair (unless given one) and its self-consistent card."""
    keypair = keypair or crypto.generate_keypair()
    agent_id = derive_agent_id(keypair.public_bytes, domain, timestamp)
    skills = tuple(skills)
    proof = crypto.encode_signature(
        keypair.sign(identity_proof_message(agent_id, skills))
    )
    card = AgentCard(
        protocol_version=protocol_version,
        name=name,
        description=description,
        url=url or f"https://agents.{domain}/{name}",
        provider_name=provider_name or domain,
        provider_domain=domain,
        skills=skills,
        agent_id=agent_id,
        public_key=keypair.public_str,
        identity_proof=proof,
        issued_at=timestamp,
        version=version,
        capabilities=capabilities,
        preferred_transport=preferred_transport,
    )
    return AgentIdentity(keypair=keypair, card=card)


def fetch_card(base_url: str, *, client: httpx.Client | None = None) -> AgentCard:
    """GET the card from the provider's well-known path.

    Transport problems (unreachable host, non-200 status, oversized body)
    raise CardFetchError; a reachable but unparseable document raises
    CardParseError.  Callers still need verify_card on the result.
    """
    url = base_url.rstrip("/") + WELL_KNOWN_PATH
    owned = client is None
    client = client or httpx.Client(timeout=10.0)
    try:
        try:
            response = client.get(url)
        except httpx.HTTPError as exc:
            raise CardFetchError(f"fetching {url}: {exc}") from exc
        if response.status_code != 200:
            raise CardFetchError(f"fetching {url}: HTTP {response.status_code}")
        if len(response.content) > MAX_CARD_BYTES:
            raise CardFetchError(f"fetching {url}: body exceeds {MAX_CARD_BYTES} bytes")
        try:
            doc = json.loads(response.content)
        except ValueError as exc:
            raise CardParseError(f"card at {url} is not valid JSON: {exc}") from exc
        return AgentCard.from_json_dict(doc)
    finally:
        if owned:
            client.close()


# --- human approvers -------------------------------------------------------

@dataclass(frozen=True)
class HumanIdentity:
    """A human trust anchor (AO, CL, SO, 3PAO) with signing capability."""

    role: str
    keypair: crypto.KeyPair
    agent_id: str

    @classmethod
    def create(
        cls,
        role: str,
        domain: str,
        timestamp: int,
        keypair: crypto.KeyPair | None = None,
    ) -> "HumanIdentity":
        keypair = keypair or crypto.generate_keypair()
        agent_id = derive_agent_id(keypair.public_bytes, domain, timestamp)
        return cls(role=role, keypair=keypair, agent_id=agent_id)


@dataclass
class HumanRegistry:
    """Role -> public identity map, integrity-protected by a registry key.

    The registry file is a local trust root distributed out of band; its
    self-signature covers the canonical encoding of the entries so that a
    tampered file fails to load.
    """

    entries: dict[str, dict] = field(default_factory=dict)
    authority_public_key: str | None = None
    signature: str | None = None

    @classmethod
    def build(
        cls, humans: list[HumanIdentity], authority: crypto.KeyPair
    ) -> "HumanRegistry":
        entries = {
            h.role: {"agent_id": h.agent_id, "public_key": h.keypair.public_str}
            for h in humans
        }
        signature = crypto.encode_signature(authority.sign(canonical_bytes(entries)))
        return cls(
            entries=entries,
            authority_public_key=authority.public_str,
            signature=signature,
        )

    def verify(self) -> bool:
        if not self.authority_public_key or not self.signature:
            return False
        try:
            key = crypto.decode_public_key(self.authority_public_key)
            sig = crypto.decode_signature(self.signature)
        except ValueError:
            return False
        return crypto.verify_signature(key, sig, canonical_bytes(self.entries))

    def entry_for_agent_id(self, agent_id: str) -> tuple[str, dict] | None:
        for role, entry in self.entries.items():
            if entry.get("agent_id") == agent_id:
                return role, entry
        return None

    def to_json_dict(self) -> dict:
        return {
            "entries": {role: dict(entry) for role, entry in self.entries.items()},
            "authority_public_key": self.authority_public_key,
            "signature": self.signature,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "HumanRegistry":
        return cls(
            entries={
                role: dict(entry) for role, entry in doc.get("entries", {}).items()
            },
            authority_public_key=doc.get("authority_public_key"),
            signature=doc.get("signature"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "HumanRegistry":
        registry = cls.from_json_dict(json.loads(Path(path).read_text()))
        if not registry.verify():
            raise CardParseError(f"human registry at {path} failed its signature check")
        return registry

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json_dict(), indent=2) + "\n")
