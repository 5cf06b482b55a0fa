import hashlib
import json
import random
from dataclasses import replace

import pytest
from fastapi import FastAPI
from fastapi.testclient import TestClient

from agentlineage.crypto import (
    decode_public_key,
    decode_signature,
    encode_public_key,
    generate_keypair,
    keypair_from_seed,
)
from agentlineage.errors import CardFetchError, CardParseError
from agentlineage.events import LineageEvent, sign_event, verify_event_sig
from agentlineage.identity import (
    AgentCard,
    CardVerdict,
    HumanIdentity,
    HumanRegistry,
    Skill,
    derive_agent_id,
    fetch_card,
    generate_identity,
    verify_card,
)

SKILLS = [
    Skill("approve-task", "Task Approval", "Approves and routes workflow tasks"),
    Skill("route-task", "Task Routing", "Moves tasks between queues"),
]


@pytest.fixture()
def identity():
    return generate_identity(
        "example.com",
        1640995200,
        name="workflow-approver",
        description="Automated approval and routing agent",
        skills=SKILLS,
        provider_name="ExampleOrg",
    )


class TestDerivation:
    def test_fixed_vector_against_sha256_oracle(self):
        derived = derive_agent_id(b"\x00" * 32, "example.com", 1640995200)
        oracle = hashlib.sha256(
            b"\x00" * 32 + b"example.com" + b"1640995200"
        ).hexdigest()
        assert derived == "aid://" + oracle
        assert derived == (
            "aid://031ce2d79a01ebd3a621223febb729619eec0331632c7777c556233f057250aa"
        )

    def test_timestamp_sensitivity(self):
        key = b"\x11" * 32
        assert derive_agent_id(key, "example.com", 1) != derive_agent_id(
            key, "example.com", 2
        )

    def test_deterministic(self):
        key = b"\x22" * 32
        assert derive_agent_id(key, "d.example", 99) == derive_agent_id(
            key, "d.example", 99
        )

    def test_domain_sensitivity(self):
        keypair = generate_keypair()
        a = generate_identity("a.example", 7, name="x", keypair=keypair)
        b = generate_identity("b.example", 7, name="x", keypair=keypair)
        assert a.agent_id != b.agent_id

    @pytest.mark.parametrize(
        "args",
        [(b"\x00" * 16, "d", 1), (b"\x00" * 32, "", 1), (b"\x00" * 32, "d", 0)],
    )
    def test_bad_inputs_raise(self, args):
        with pytest.raises(ValueError):
            derive_agent_id(*args)


class TestCardVerification:
    def test_self_generated_card_ok(self, identity):
        assert verify_card(identity.card) is CardVerdict.OK

    def test_expected_timestamp_pin(self, identity):
        assert verify_card(identity.card, 1640995200) is CardVerdict.OK
        assert verify_card(identity.card, 1640995201) is CardVerdict.BAD_ID

    def test_mutated_skills_bad_proof(self, identity):
        mutated = replace(
            identity.card,
            skills=identity.card.skills + (Skill("extra", "Extra", "injected"),),
        )
        assert verify_card(mutated) is CardVerdict.BAD_PROOF

    def test_swapped_public_key_bad_id(self, identity):
        other = generate_keypair()
        mutated = replace(identity.card, public_key=other.public_str)
        # recomputed digest uses the new key, so it no longer matches agent_id
        oracle = hashlib.sha256(
            other.public_bytes + b"example.com" + b"1640995200"
        ).hexdigest()
        assert identity.card.agent_id != "aid://" + oracle
        assert verify_card(mutated) is CardVerdict.BAD_ID

    def test_garbage_key_malformed(self, identity):
        mutated = replace(identity.card, public_key="ed25519:zzzz")
        assert verify_card(mutated) is CardVerdict.MALFORMED

    def test_missing_issued_at_malformed(self, identity):
        mutated = replace(identity.card, issued_at=None)
        assert verify_card(mutated) is CardVerdict.MALFORMED
        assert verify_card(mutated, 1640995200) is CardVerdict.OK

    def test_unforgeability_sweep(self, identity):
        # mutations across the bound surface must all be caught
        rng = random.Random(42)
        card = identity.card
        hits = {"bad_id": 0, "bad_proof": 0, "malformed": 0}
        for _ in range(300):
            choice = rng.randrange(6)
            if choice == 0:
                flipped = hex((int(card.agent_id[6:][0], 16) + 1) % 16)[2:]
                mutated = replace(card, agent_id="aid://" + flipped + card.agent_id[7:])
            elif choice == 1:
                mutated = replace(card, public_key=generate_keypair().public_str)
            elif choice == 2:
                sig = bytearray(decode_signature(card.identity_proof))
                sig[rng.randrange(64)] ^= 1 << rng.randrange(8)
                mutated = replace(card, identity_proof="ed25519:" + bytes(sig).hex())
            elif choice == 3:
                mutated = replace(card, issued_at=card.issued_at + rng.randint(1, 10**6))
            elif choice == 4:
                mutated = replace(card, provider_domain="evil.example")
            else:
                skills = list(card.skills)
                victim = rng.randrange(len(skills))
                skills[victim] = Skill(
                    skills[victim].id, skills[victim].name + "!", skills[victim].description
                )
                mutated = replace(card, skills=tuple(skills))
            verdict = verify_card(mutated)
            assert verdict is not CardVerdict.OK, choice
            hits[verdict.value] += 1
        assert hits["bad_id"] and hits["bad_proof"]


class TestCardSerialization:
    def test_roundtrip_byte_stable(self, identity):
        from agentlineage.canonical import canonical_dumps

        doc = identity.card.to_json_dict()
        reparsed = AgentCard.from_json_dict(json.loads(json.dumps(doc)))
        assert canonical_dumps(reparsed.to_json_dict()) == canonical_dumps(doc)
        assert verify_card(reparsed) is CardVerdict.OK

    def test_paper_style_card_parses(self):
        # Appendix-style card: base64 key material, placeholder agent_id,
        # no issued_at extension.  It must parse; verification then stops
        # at the unknowable timestamp.
        doc = {
            "protocolVersion": "0.3.0",
            "name": "readiness-coordinator",
            "description": "FedRAMP readiness coordinator agent",
            "url": "https://agents.fedramp.gov/readiness-coordinator",
            "preferredTransport": "JSONRPC",
            "version": "1.0.0",
            "capabilities": {"streaming": False, "pushNotifications": True},
            "skills": [
                {
                    "id": "initiate-workflow",
                    "name": "Workflow Initiation",
                    "description": "Initiates FedRAMP compliance workflows",
                }
            ],
            "provider": {"name": "FedRAMP Authority", "domain": "fedramp.gov"},
            "identity": {
                "agent_id": "aid://sha256(2A393A61||fedramp.gov||1758075040)",
                "public_key": "ed25519:DvQgYrpYTgaKB/YDFNoc+ztyYIy7hbxgTB9pmcHkhow=",
                "identity_proof": "ed25519:BC5BE98B05B8488178F7BA78BFEDEF491CC146BE",
                "lineage_support": {
                    "merkle_proof_generation": True,
                    "dpop_binding": True,
                },
            },
        }
        card = AgentCard.from_json_dict(doc)
        assert card.name == "readiness-coordinator"
        assert card.preferred_transport == "JSONRPC"
        assert card.merkle_proof_generation and card.dpop_binding
        # base64 key decodes to 32 bytes
        assert len(decode_public_key(card.public_key).public_bytes_raw()) == 32
        assert verify_card(card) is CardVerdict.MALFORMED  # no issued_at
        assert verify_card(card, 1758075040) is CardVerdict.BAD_ID  # placeholder id

    def test_truncated_doc_raises_parse_error(self):
        with pytest.raises(CardParseError):
            AgentCard.from_json_dict({"protocolVersion": "1.0"})


class TestFetchCard:
    def _app_serving(self, payload, status=200):
        app = FastAPI()

        @app.get("/.well-known/agent-card.json")
        def well_known():
            from fastapi.responses import Response

            return Response(content=payload, status_code=status, media_type="application/json")

        return app

    def test_fetch_and_verify_flow(self, identity):
        payload = json.dumps(identity.card.to_json_dict())
        client = TestClient(self._app_serving(payload))
        card = fetch_card("http://testserver", client=client)
        assert verify_card(card) is CardVerdict.OK

    def test_404_is_fetch_error(self):
        client = TestClient(self._app_serving("{}", status=404))
        with pytest.raises(CardFetchError):
            fetch_card("http://testserver", client=client)

    def test_truncated_json_is_parse_error(self, identity):
        payload = json.dumps(identity.card.to_json_dict())[:40]
        client = TestClient(self._app_serving(payload))
        with pytest.raises(CardParseError):
            fetch_card("http://testserver", client=client)

    def test_oversized_body_refused(self):
        client = TestClient(self._app_serving("x" * (1 << 20 + 1)))
        with pytest.raises(CardFetchError):
            fetch_card("http://testserver", client=client)

    def test_unreachable_host_is_fetch_error(self):
        with pytest.raises(CardFetchError):
            fetch_card("http://127.0.0.1:1")  # nothing listens on port 1

    def test_served_fixture_card_reaches_signature_check(self):
        # appendix-style evidence-harvester card with base64 key material:
        # fetch and parse succeed, and verification proceeds past fetch and
        # parse all the way to the cryptographic checks
        doc = {
            "protocolVersion": "0.3.0",
            "name": "evidence-harvester",
            "description": "Evidence collection agent",
            "url": "https://agents.fedramp.gov/evidence-harvester",
            "version": "2.1.0",
            "skills": [
                {
                    "id": "collect-inventory",
                    "name": "Asset Inventory Collection",
                    "description": "Queries cloud provider APIs",
                }
            ],
            "provider": {"name": "FedRAMP Authority", "domain": "fedramp.gov"},
            "identity": {
                "agent_id": "aid://sha256(07372DF2||fedramp.gov||1758075040)",
                "public_key": "ed25519:ycbVVaBqXXomnQSv2U7VieUIdLwrxPGLIjqhjICaEOE=",
                "identity_proof": "ed25519:0B8A5D2D07730EC3B8604872B8CE02802C328D60",
                "issued_at": 1758075040,
                "lineage_support": {
                    "merkle_proof_generation": True,
                    "dpop_binding": True,
                },
            },
        }
        client = TestClient(self._app_serving(json.dumps(doc)))
        card = fetch_card("http://testserver", client=client)
        assert card.name == "evidence-harvester"
        # the placeholder agent_id cannot recompute from the real key bytes
        assert verify_card(card) is CardVerdict.BAD_ID


class TestHumanRegistry:
    def test_build_verify_roundtrip(self, tmp_path):
        humans = [
            HumanIdentity.create(role, "gov.example", 100 + i)
            for i, role in enumerate(["AO", "CL", "SO", "3PAO"])
        ]
        authority = generate_keypair()
        registry = HumanRegistry.build(humans, authority)
        assert registry.verify()
        path = tmp_path / "registry.json"
        registry.save(path)
        loaded = HumanRegistry.load(path)
        assert loaded.entries == registry.entries

    def test_tampered_registry_fails(self, tmp_path):
        humans = [HumanIdentity.create("AO", "gov.example", 5)]
        registry = HumanRegistry.build(humans, generate_keypair())
        registry.entries["AO"]["public_key"] = generate_keypair().public_str
        assert not registry.verify()
        path = tmp_path / "registry.json"
        registry.save(path)
        with pytest.raises(CardParseError):
            HumanRegistry.load(path)

    def test_lookup_by_agent_id(self):
        human = HumanIdentity.create("SO", "gov.example", 9)
        registry = HumanRegistry.build([human], generate_keypair())
        role, entry = registry.entry_for_agent_id(human.agent_id)
        assert role == "SO"
        assert entry["public_key"] == human.keypair.public_str
        assert registry.entry_for_agent_id("aid://" + "0" * 64) is None


def test_event_card_linkage_across_agents():
    # an event signed by one agent verifies only against that agent's card
    idents = [
        generate_identity(f"a{i}.example", 10 + i, name=f"agent-{i}", skills=SKILLS[:1])
        for i in range(3)
    ]
    context = hashlib.sha256(b"ctx").hexdigest()
    for signer in idents:
        event = sign_event(
            LineageEvent(
                agent_id=signer.agent_id,
                action_id="act",
                ts=1,
                action_type="t",
                context_hash=context,
            ),
            signer,
        )
        for other in idents:
            key = decode_public_key(other.card.public_key)
            assert verify_event_sig(event, key) == (other is signer)


def test_seeded_keypair_is_deterministic():
    a = keypair_from_seed(b"\x07" * 32)
    b = keypair_from_seed(b"\x07" * 32)
    assert a.public_str == b.public_str
    assert encode_public_key(a.public_key) == a.public_str
