"""Verifiable lineage for autonomous agents.

An append-only Merkle transparency log records signed action events from
non-human identities (agents) and human approvers.  A proof server audits
one or more logs and counter-signs proof packages that external verifiers
can check offline against a small set of trust roots.
"""

from agentlineage.canonical import canonical_bytes, canonical_dumps
from agentlineage.chain import (
    ActorVerdict,
    ChainReport,
    LogTrust,
    TrustConfig,
    commitment_roots,
    verify_actor,
    verify_chain,
)
from agentlineage.errors import (
    AuditFailure,
    CardFetchError,
    CardParseError,
    EncodingError,
    IdentityBindingError,
    LineageError,
    NotFoundError,
    SubmissionRejected,
    TransportError,
)
from agentlineage.events import (
    LineageEvent,
    canonical_encode,
    event_digest,
    event_digest_hex,
    sign_event,
    verify_event_sig,
)
from agentlineage.identity import (
    AgentCard,
    AgentIdentity,
    CardVerdict,
    HumanIdentity,
    HumanRegistry,
    Skill,
    derive_agent_id,
    fetch_card,
    generate_identity,
    verify_card,
)
from agentlineage.merkle import (
    ConsistencyProof,
    InclusionProof,
    MerkleLog,
    Multiproof,
    hash_children,
    hash_leaf,
    verify_consistency,
    verify_inclusion,
    verify_multi,
)
from agentlineage.proofserver import (
    ConsistencyBundle,
    MultiproofPackage,
    PackageVerdict,
    ProofPackage,
    ProofServer,
    verify_multiproof_package,
    verify_proof_package,
)
from agentlineage.store import LineageStore, LogRecord, SignedTreeHead, verify_sth

__version__ = "0.1.0"
