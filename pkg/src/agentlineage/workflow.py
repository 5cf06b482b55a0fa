"""Scripted end-to-end compliance scenario with agents and human approvers.

Five agents (readiness coordination, evidence harvesting, scanning, SSP
packaging, assessor liaison) and four human roles (AO, CL, SO, 3PAO) emit
an eleven-event chain:

    E0 boundary_approval   (AO)          genesis, human trust anchor
    E1 readiness_start     (A1)
    E2 collect_inventory   (A2)          context = H(inventory artifact)
    E2a inventory_approval (CL)
    E3 scan_results        (A3)          context = H(scan report)
    E3a risk_acceptance    (SO)
    E4 build_ssp           (A4)          cites E2, E3; context = H(ssp)
    E4a ssp_approval       (CL)
    E5 publish_capsule     (A5)          cites E2, E3, E4
    E5a sar_signed         (3PAO)
    E6 ato_decision        (AO)

In deterministic mode every key, timestamp, and identifier derives from a
seed and the script, so two runs produce byte-identical transcripts,
commitments, and capsules.  Tamper directives exist for negative testing:
script-level ones change what gets logged, transcript-level ones corrupt
the already-appended data handed to the verifier.
"""

from __future__ import annotations

import hashlib
import json
import uuid
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

from agentlineage import crypto
from agentlineage.canonical import canonical_bytes
from agentlineage.chain import (
    ActorVerdict,
    ChainReport,
    LogTrust,
    TrustConfig,
    verify_actor,
    verify_chain,
)
from agentlineage.clients import LocalLogClient
from agentlineage.errors import NotFoundError
from agentlineage.events import LineageEvent, event_digest_hex, sign_event
from agentlineage.identity import (
    AgentCard,
    AgentIdentity,
    CardVerdict,
    HumanIdentity,
    HumanRegistry,
    Skill,
    generate_identity,
    verify_card,
)
from agentlineage.proofserver import (
    PackageVerdict,
    ProofPackage,
    ProofServer,
    verify_proof_package,
)
from agentlineage.store import LineageStore, LogRecord

HUMAN_ACTION_TYPES = frozenset(
    {
        "boundary_approval",
        "inventory_approval",
        "risk_acceptance",
        "ssp_approval",
        "sar_signed",
        "ato_decision",
    }
)

REQUIRED_CITES = {
    "build_ssp": frozenset({"collect_inventory", "scan_results"}),
    "publish_capsule": frozenset({"collect_inventory", "scan_results", "build_ssp"}),
}

_AGENT_PROFILES = {
    "A1": ("readiness-coordinator", "initiate-workflow", "Workflow Initiation"),
    "A2": ("evidence-harvester", "collect-inventory", "Asset Inventory Collection"),
    "A3": ("scanner-orchestrator", "vulnerability-scan", "Vulnerability Scanning"),
    "A4": ("ssp-packager", "assemble-ssp", "SSP Assembly"),
    "A5": ("3pao-liaison", "package-evidence", "Evidence Capsule Packaging"),
}

_HUMAN_ROLES = ("AO", "CL", "SO", "3PAO")


@dataclass(frozen=True)
class StepSpec:
    step_id: str
    actor: str  # A1..A5 or a human role
    action_type: str
    prev_step: str | None
    cites_steps: tuple[str, ...] = ()
    artifact: str | None = None  # key into the artifact fixtures


@dataclass
class WorkflowScript:
    steps: list[StepSpec]
    base_ts: int = 1_758_075_040
    step_interval: int = 60
    domain: str = "fedramp.example"
    seed: str = "fedramp-demo"

    def ts_for(self, position: int) -> int:
        return self.base_ts + position * self.step_interval


def fedramp_script(**overrides) -> WorkflowScript:
    steps = [
        StepSpec("E0", "AO", "boundary_approval", None),
        StepSpec("E1", "A1", "readiness_start", "E0"),
        StepSpec("E2", "A2", "collect_inventory", "E1", artifact="inventory.json"),
        StepSpec("E2a", "CL", "inventory_approval", "E2"),
        StepSpec("E3", "A3", "scan_results", "E2a", artifact="scan-report.json"),
        StepSpec("E3a", "SO", "risk_acceptance", "E3"),
        StepSpec("E4", "A4", "build_ssp", "E3a", ("E2", "E3"), artifact="ssp.md"),
        StepSpec("E4a", "CL", "ssp_approval", "E4"),
        StepSpec("E5", "A5", "publish_capsule", "E4a", ("E2", "E3", "E4")),
        StepSpec("E5a", "3PAO", "sar_signed", "E5"),
        StepSpec("E6", "AO", "ato_decision", "E5a"),
    ]
    return WorkflowScript(steps=steps, **overrides)


def skip_approval(script: WorkflowScript, step_id: str) -> WorkflowScript:
    """Drop an approval step and rewire its successor's prev link."""
    kept: list[StepSpec] = []
    removed_prev: str | None = None
    for step in script.steps:
        if step.step_id == step_id:
            removed_prev = step.prev_step
            continue
        if step.prev_step == step_id:
            step = replace(step, prev_step=removed_prev)
        kept.append(step)
    if removed_prev is None and all(s.step_id != step_id for s in script.steps):
        raise ValueError(f"no step {step_id!r} in script")
    return replace(script, steps=kept)


def _artifact_fixtures(seed: str) -> dict[str, str]:
    inventory = {
        "source": "mock-cloud-sor",
        "seed": seed,
        "assets": [
            {"id": "vm-web-01", "type": "compute", "region": "us-gov-west-1"},
            {"id": "db-main", "type": "managed-database", "region": "us-gov-west-1"},
            {"id": "bucket-evidence", "type": "object-store", "region": "us-gov-east-1"},
        ],
        "iam_policies": ["least-privilege-admin", "readonly-auditor"],
    }
    scan = {
        "scanner": "mock-scanner/7.2",
        "seed": seed,
        "targets": ["vm-web-01", "db-main", "bucket-evidence"],
        "findings": [
            {"id": "CVE-2024-0001", "severity": "medium", "target": "vm-web-01"},
            {"id": "CFG-TLS-01", "severity": "low", "target": "bucket-evidence"},
        ],
    }
    ssp = (
        "# System Security Plan (synthetic)\n\n"
        f"Seed: {seed}\n\n"
        "## Boundary\nThree assets inside the approved boundary.\n\n"
        "## Evidence\nInventory and scan results are cited by digest from the "
        "lineage log rather than copied into this document.\n"
    )
    return {
        "inventory.json": json.dumps(inventory, indent=2, sort_keys=True) + "\n",
        "scan-report.json": json.dumps(scan, indent=2, sort_keys=True) + "\n",
        "ssp.md": ssp,
    }


def _seeded_keypair(seed: str, label: str) -> crypto.KeyPair:
    material = hashlib.sha256(f"{seed}/{label}".encode()).digest()
    return crypto.keypair_from_seed(material)


@dataclass
class Cast:
    """Everyone participating in one scenario run."""

    agents: dict[str, AgentIdentity]
    humans: dict[str, HumanIdentity]
    registry: HumanRegistry

    def signer_for(self, actor: str):
        if actor in self.agents:
            return self.agents[actor]
        return self.humans[actor]


def build_cast(script: WorkflowScript, *, deterministic: bool = True) -> Cast:
    issued_at = script.base_ts
    agents: dict[str, AgentIdentity] = {}
    for tag, (name, skill_id, skill_name) in _AGENT_PROFILES.items():
        keypair = _seeded_keypair(script.seed, tag) if deterministic else None
        agents[tag] = generate_identity(
            script.domain,
            issued_at,
            name=name,
            description=f"{skill_name} agent for the scripted compliance workflow",
            skills=[Skill(skill_id, skill_name, f"{skill_name} over the approved boundary")],
            provider_name="Compliance Automation Office",
            protocol_version="0.3.0",
            keypair=keypair,
        )
    humans = {
        role: HumanIdentity.create(
            role,
            script.domain,
            issued_at,
            keypair=_seeded_keypair(script.seed, f"human/{role}") if deterministic else None,
        )
        for role in _HUMAN_ROLES
    }
    authority = (
        _seeded_keypair(script.seed, "registry-authority")
        if deterministic
        else crypto.generate_keypair()
    )
    registry = HumanRegistry.build(list(humans.values()), authority)
    return Cast(agents=agents, humans=humans, registry=registry)


def _context_hash(script: WorkflowScript, step: StepSpec, artifacts: dict[str, str]) -> str:
    if step.artifact is not None:
        return hashlib.sha256(artifacts[step.artifact].encode()).hexdigest()
    context = {
        "workflow": "fedramp",
        "baseline": "moderate",
        "policy": "rev5",
        "step": step.step_id,
    }
    return hashlib.sha256(canonical_bytes(context)).hexdigest()


def _action_id(script: WorkflowScript, step: StepSpec, *, deterministic: bool) -> str:
    if deterministic:
        return str(uuid.uuid5(uuid.NAMESPACE_URL, f"lineage/{script.seed}/{step.step_id}"))
    return str(uuid.uuid4())


@dataclass
class FedrampRun:
    """Everything a scenario run produced, for inspection and export."""

    script: WorkflowScript
    cast: Cast
    store: LineageStore
    proof_server: ProofServer
    artifacts: dict[str, str]
    records: list[LogRecord]
    events: dict[str, LineageEvent]
    digests: dict[str, str]
    order: list[str]
    trust: TrustConfig
    report: ChainReport
    policy_findings: list[str]

    @property
    def head(self) -> str:
        return self.digests[self.order[-1]]

    def transcript_json_dict(self) -> dict:
        return {
            "workflow": "fedramp",
            "log_id": self.store.log_id.hex(),
            "head": self.head,
            "steps": [
                {"step": step_id, "event_digest": self.digests[step_id]}
                for step_id in self.order
            ],
            "records": [record.to_json_dict() for record in self.records],
            "latest_sth": self.store.latest_sth().to_json_dict(),
        }


def run_fedramp(
    script: WorkflowScript,
    store: LineageStore,
    proof_server: ProofServer,
    *,
    cast: Cast | None = None,
    deterministic: bool = True,
) -> FedrampRun:
    """Drive the scripted workflow end to end and verify the result.

    Registers the cast with the store, submits every event in script order,
    then verifies the whole chain through the proof server under a trust
    config rebuilt from its own serialized form (the independent-assessor
    view), and runs the workflow policy checklist.
    """
    cast = cast or build_cast(script, deterministic=deterministic)
    artifacts = _artifact_fixtures(script.seed)
    for identity in cast.agents.values():
        store.register_card(identity.card)
    store.register_humans(cast.registry)

    records: list[LogRecord] = []
    events: dict[str, LineageEvent] = {}
    digests: dict[str, str] = {}
    order: list[str] = []
    for position, step in enumerate(script.steps):
        signer = cast.signer_for(step.actor)
        event = LineageEvent(
            agent_id=signer.agent_id,
            action_id=_action_id(script, step, deterministic=deterministic),
            ts=script.ts_for(position),
            action_type=step.action_type,
            context_hash=_context_hash(script, step, artifacts),
            prev=digests[step.prev_step] if step.prev_step is not None else None,
            cites=tuple(digests[c] for c in step.cites_steps),
        )
        signed = sign_event(event, signer)
        index, _ = store.submit_event(signed)
        digest_hex = event_digest_hex(signed)
        record = store.get_entries(index, index + 1)[0]
        records.append(record)
        events[step.step_id] = signed
        digests[step.step_id] = digest_hex
        order.append(step.step_id)

    trust = TrustConfig(
        ps_public_key=proof_server.public_str,
        logs=[
            LogTrust(log_id=store.log_id.hex(), public_key=store.public_key_str)
        ],
        cards=[identity.card for identity in cast.agents.values()],
        human_registry=cast.registry,
    )
    # Independent-assessor view: verify under a trust config round-tripped
    # through its JSON form, not the in-memory objects.
    assessor_trust = TrustConfig.from_json_dict(trust.to_json_dict())
    report = verify_chain(
        digests[order[-1]],
        proof_server,
        assessor_trust,
        required_cites=REQUIRED_CITES,
    )
    findings = policy_check([record.event for record in records])
    return FedrampRun(
        script=script,
        cast=cast,
        store=store,
        proof_server=proof_server,
        artifacts=artifacts,
        records=records,
        events=events,
        digests=digests,
        order=order,
        trust=trust,
        report=report,
        policy_findings=findings,
    )


def policy_check(events: list[LineageEvent]) -> list[str]:
    """Workflow-level checklist on top of the cryptographic verdicts.

    Flags a missing genesis approval, agent activity before it, and any
    absent human approval step.
    """
    findings: list[str] = []
    if not events:
        return ["empty transcript"]
    if events[0].action_type != "boundary_approval" or events[0].prev is not None:
        findings.append("genesis event is not a boundary_approval trust anchor")
    seen_types = [event.action_type for event in events]
    for required in sorted(HUMAN_ACTION_TYPES):
        if required not in seen_types:
            findings.append(f"required human approval missing: {required}")
    return findings


# -- offline bundles and the evidence capsule --------------------------------

class OfflinePackageSource:
    """Proof packages held as plain JSON documents; no services required."""

    def __init__(self, package_docs: dict[str, dict]):
        self._docs = package_docs

    def fetch_package(self, digest_hex: str) -> ProofPackage:
        doc = self._docs.get(digest_hex)
        if doc is None:
            raise NotFoundError(f"no package for {digest_hex}", missing=[digest_hex])
        return ProofPackage.from_json_dict(doc)


def build_verification_bundle(run: FedrampRun) -> dict:
    """Self-contained chain-verification input: every package plus trust."""
    packages = {
        digest: run.proof_server.build_proof_package(digest).to_json_dict()
        for digest in run.digests.values()
    }
    return {
        "head": run.head,
        "packages": packages,
        "trust": run.trust.to_json_dict(),
    }


def verify_bundle(bundle: dict, *, required_cites=REQUIRED_CITES) -> ChainReport:
    trust = TrustConfig.from_json_dict(bundle["trust"])
    source = OfflinePackageSource(bundle["packages"])
    return verify_chain(
        bundle["head"], source, trust, required_cites=required_cites
    )


#: Steps whose artifacts are delivered to the independent assessor.
CAPSULE_CITED_STEPS = ("E2", "E3", "E4")


def build_capsule(run: FedrampRun) -> dict:
    """Evidence capsule: cited events, their artifacts, proofs, and cards.

    The capsule is a portable JSON archive an assessor can validate with
    nothing but a trust config; no log or proof server access needed.
    """
    items = []
    for step_id in CAPSULE_CITED_STEPS:
        if step_id not in run.digests:
            raise NotFoundError(f"cited step {step_id} missing from the run")
        digest = run.digests[step_id]
        package = run.proof_server.build_proof_package(digest)
        spec = next(s for s in run.script.steps if s.step_id == step_id)
        items.append(
            {
                "step": step_id,
                "event_digest": digest,
                "artifact_name": spec.artifact,
                "artifact": run.artifacts[spec.artifact] if spec.artifact else None,
                "package": package.to_json_dict(),
            }
        )
    return {
        "capsule": "fedramp-evidence",
        "workflow_head": run.head,
        "cited": items,
        "cards": [identity.card.to_json_dict() for identity in run.cast.agents.values()],
        "latest_sth": run.store.latest_sth().to_json_dict(),
    }


@dataclass
class CapsuleReport:
    items: list[dict]
    overall_ok: bool
    first_failure: str | None

    def to_json_dict(self) -> dict:
        return {
            "overall": "ok" if self.overall_ok else "fail",
            "first_failure": self.first_failure,
            "items": self.items,
        }


def verify_capsule(capsule: dict, trust: TrustConfig) -> CapsuleReport:
    """Offline validation of an evidence capsule against trust roots only."""
    cards = {}
    for doc in capsule.get("cards", []):
        try:
            card = AgentCard.from_json_dict(doc)
        except Exception:
            continue
        if verify_card(card) is CardVerdict.OK:
            cards[card.agent_id] = card
    items: list[dict] = []
    failures: list[str] = []
    for cited in capsule.get("cited", []):
        step = cited.get("step", "?")
        item = {"step": step, "event_digest": cited.get("event_digest", "")}
        try:
            package = ProofPackage.from_json_dict(cited["package"])
        except Exception:
            item["package_verdict"] = "malformed"
            item["ok"] = False
            items.append(item)
            failures.append(f"{step}: package malformed")
            continue
        verdict = verify_proof_package(
            package, trust.ps_public_key, trust.trusted_log_keys
        )
        item["package_verdict"] = verdict.value
        digest_ok = event_digest_hex(package.event) == cited.get("event_digest")
        item["digest_ok"] = digest_ok
        artifact = cited.get("artifact")
        if artifact is not None:
            artifact_ok = (
                hashlib.sha256(artifact.encode()).hexdigest()
                == package.event.context_hash
            )
        else:
            artifact_ok = True
        item["artifact_ok"] = artifact_ok
        card = cards.get(package.event.agent_id)
        actor_ok = card is not None and verify_actor(package.event, card) is ActorVerdict.OK
        item["actor_ok"] = actor_ok
        ok = verdict is PackageVerdict.OK and digest_ok and artifact_ok and actor_ok
        item["ok"] = ok
        items.append(item)
        if not ok:
            reason = (
                verdict.value
                if verdict is not PackageVerdict.OK
                else "digest" if not digest_ok else "artifact" if not artifact_ok else "actor"
            )
            failures.append(f"{step}: {reason}")
    overall = bool(items) and not failures
    return CapsuleReport(
        items=items,
        overall_ok=overall,
        first_failure=failures[0] if failures else None,
    )


# -- transcript-level tampering ----------------------------------------------

def parse_tamper(spec: str) -> tuple[str, str]:
    """Parse a --tamper directive: '<kind>:<step>'."""
    kind, _, step = spec.partition(":")
    if kind not in {"mutate-context", "skip-approval"} or not step:
        raise ValueError(
            f"unknown tamper spec {spec!r}; expected mutate-context:<step> "
            "or skip-approval:<step>"
        )
    return kind, step


def tamper_mutate_context(bundle: dict, digest_hex: str) -> dict:
    """Flip the stored context hash of one event inside an offline bundle."""
    mutated = json.loads(json.dumps(bundle))
    doc = mutated["packages"][digest_hex]["event"]
    original = doc["context_hash"]
    doc["context_hash"] = ("0" if original[0] != "0" else "1") + original[1:]
    return mutated


# -- DOT rendering -------------------------------------------------------------

def lineage_dot(run: FedrampRun) -> str:
    """Graphviz rendering of the event chain (prev solid, cites dashed)."""
    lines = [
        "digraph lineage {",
        "  rankdir=LR;",
        '  node [shape=box, fontname="Helvetica"];',
    ]
    for step_id in run.order:
        event = run.events[step_id]
        actor = next(s.actor for s in run.script.steps if s.step_id == step_id)
        shape = "box" if actor in run.cast.agents else "ellipse"
        lines.append(
            f'  "{step_id}" [label="{step_id}\\n{event.action_type}\\n{actor}", shape={shape}];'
        )
    by_digest = {digest: step for step, digest in run.digests.items()}
    for step_id in run.order:
        event = run.events[step_id]
        if event.prev and event.prev in by_digest:
            lines.append(f'  "{by_digest[event.prev]}" -> "{step_id}";')
        for cited in event.cites:
            if cited in by_digest:
                lines.append(
                    f'  "{by_digest[cited]}" -> "{step_id}" [style=dashed, color=gray50];'
                )
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- turnkey demo ---------------------------------------------------------------

def demo_fedramp(
    out_dir: str | Path | None = None,
    *,
    deterministic: bool = True,
    seed: str = "fedramp-demo",
    tamper: list[str] | None = None,
    clock: Callable[[], int] | None = None,
) -> dict:
    """Run the scenario (optionally tampered) and emit its artifacts.

    Returns a result dict with the transcript, capsule, chain report, and
    policy findings; writes them under `out_dir` when given.
    """
    script = fedramp_script(seed=seed)
    directives = [parse_tamper(t) for t in (tamper or [])]
    for kind, step in directives:
        if kind == "skip-approval":
            script = skip_approval(script, step)

    if deterministic and clock is None:
        base_ms = script.base_ts * 1000
        counter = iter(range(1_000_000))
        clock = lambda: base_ms + next(counter)  # noqa: E731

    ls_key = (
        _seeded_keypair(seed, "lineage-store") if deterministic else crypto.generate_keypair()
    )
    ps_key = (
        _seeded_keypair(seed, "proof-server") if deterministic else crypto.generate_keypair()
    )
    store = LineageStore(ls_key, clock=clock)
    proof_server = ProofServer(
        ps_key,
        [(store.log_id, ls_key.public_str, LocalLogClient(store))],
        sth_cache_ttl=0.0,
    )
    run = run_fedramp(script, store, proof_server, deterministic=deterministic)

    bundle = build_verification_bundle(run)
    report = run.report
    for kind, step in directives:
        if kind == "mutate-context":
            if step not in run.digests:
                raise ValueError(f"tamper step {step!r} not in transcript")
            bundle = tamper_mutate_context(bundle, run.digests[step])
    if any(kind == "mutate-context" for kind, _ in directives):
        report = verify_bundle(bundle)

    capsule = build_capsule(run)
    result = {
        "transcript": run.transcript_json_dict(),
        "capsule": capsule,
        "report": report.to_json_dict(),
        "policy_findings": run.policy_findings,
        "trust": run.trust.to_json_dict(),
        "bundle": bundle,
        "dot": lineage_dot(run),
        "run": run,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, key in (
            ("transcript.json", "transcript"),
            ("capsule.json", "capsule"),
            ("chain-report.json", "report"),
            ("trust.json", "trust"),
            ("bundle.json", "bundle"),
        ):
            (out / name).write_text(
                json.dumps(result[key], indent=2, sort_keys=True) + "\n"
            )
        (out / "policy-findings.json").write_text(
            json.dumps(run.policy_findings, indent=2) + "\n"
        )
        (out / "lineage.dot").write_text(result["dot"])
    return result
