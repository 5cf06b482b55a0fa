import hashlib

import pytest
from fastapi.testclient import TestClient

from agentlineage.chain import LogTrust, TrustConfig, verify_chain
from agentlineage.clients import HttpLogClient, LocalLogClient
from agentlineage.crypto import generate_keypair
from agentlineage.errors import (
    NotFoundError,
    SubmissionRejected,
    TransportError,
)
from agentlineage.events import LineageEvent, event_digest_hex, sign_event
from agentlineage.httpapi import HttpProofClient, create_log_app, create_proof_app
from agentlineage.identity import Skill, fetch_card, generate_identity, verify_card
from agentlineage.identity import CardVerdict
from agentlineage.proofserver import PackageVerdict, ProofServer, verify_proof_package
from agentlineage.store import LineageStore

CONTEXT = hashlib.sha256(b"http-ctx").hexdigest()


@pytest.fixture()
def stack():
    """LS app + PS app wired over the real HTTP client layer."""
    agent = generate_identity(
        "http.example", 1700000000, name="http-agent", skills=[Skill("s", "S", "d")]
    )
    ls_key = generate_keypair()
    store = LineageStore(ls_key)
    store.register_card(agent.card)
    log_app = create_log_app(store)
    log_client = HttpLogClient("http://testserver", client=TestClient(log_app))

    digests = []
    prev = None
    for i in range(6):
        event = sign_event(
            LineageEvent(
                agent_id=agent.agent_id,
                action_id=f"h{i}",
                ts=1700000000 + i,
                action_type="http_action",
                context_hash=CONTEXT,
                prev=prev,
            ),
            agent,
        )
        log_client.submit_event(event)
        prev = event_digest_hex(event)
        digests.append(prev)

    ps_key = generate_keypair()
    ps = ProofServer(ps_key, [(store.log_id, ls_key.public_str, log_client)])
    proof_app = create_proof_app(ps)
    proof_client = HttpProofClient("http://testserver", client=TestClient(proof_app))
    trust = TrustConfig(
        ps_public_key=ps_key.public_str,
        logs=[LogTrust(log_id=store.log_id.hex(), public_key=ls_key.public_str)],
        cards=[agent.card],
    )
    return store, agent, log_client, proof_client, digests, trust, log_app


class TestLogEndpoints:
    def test_submit_and_sth_roundtrip(self, stack):
        store, agent, log_client, *_ = stack
        sth = log_client.latest_sth()
        assert sth.tree_size == store.size == 6
        assert log_client.sth_at(3).tree_size == 3

    def test_rejection_maps_to_submission_rejected(self, stack):
        store, agent, log_client, *_ = stack
        event = sign_event(
            LineageEvent(
                agent_id=agent.agent_id,
                action_id="dup-test",
                ts=1,
                action_type="http_action",
                context_hash=CONTEXT,
            ),
            agent,
        )
        log_client.submit_event(event)
        with pytest.raises(SubmissionRejected) as excinfo:
            log_client.submit_event(event)
        assert excinfo.value.reason == "duplicate"

    def test_malformed_event_rejected(self, stack):
        *_, log_app = stack
        response = TestClient(log_app).post("/log/entries", json={"ts": "soon"})
        assert response.status_code == 400
        assert response.json()["error"]["code"] == "malformed_event"

    def test_entries_roundtrip_and_range_error(self, stack):
        store, _, log_client, *_ = stack
        records = log_client.get_entries(0, store.size)
        assert [r.leaf_index for r in records] == list(range(store.size))
        with pytest.raises(TransportError):
            log_client.get_entries(0, 999)

    def test_missing_sth_is_404(self, stack):
        *_, log_app = stack
        response = TestClient(log_app).get("/log/sth/999")
        assert response.status_code == 404

    def test_card_well_known_single(self, stack):
        store, agent, *_ = stack
        client = TestClient(create_log_app(store))
        card = fetch_card("http://testserver", client=client)
        assert card.agent_id == agent.agent_id
        assert verify_card(card) is CardVerdict.OK

    def test_card_by_agent_path(self, stack):
        store, agent, *_ = stack
        client = TestClient(create_log_app(store))
        card = fetch_card("http://testserver/agents/http-agent", client=client)
        assert card.agent_id == agent.agent_id
        response = client.get("/agents/nobody/.well-known/agent-card.json")
        assert response.status_code == 404

    def test_card_query_param_disambiguation(self, stack):
        store, agent, *_ = stack
        second = generate_identity(
            "http.example", 1700000001, name="second-agent", skills=[]
        )
        store.register_card(second.card)
        client = TestClient(create_log_app(store))
        bare = client.get("/.well-known/agent-card.json")
        assert bare.status_code == 404  # two cards: ambiguous
        scoped = client.get(
            "/.well-known/agent-card.json", params={"agent_id": second.agent_id}
        )
        assert scoped.status_code == 200
        assert scoped.json()["identity"]["agent_id"] == second.agent_id


class TestProofEndpoints:
    def test_package_over_http(self, stack):
        _, _, _, proof_client, digests, trust, _ = stack
        pkg = proof_client.fetch_package(digests[2])
        assert (
            verify_proof_package(pkg, trust.ps_public_key, trust.trusted_log_keys)
            is PackageVerdict.OK
        )

    def test_unknown_package_404(self, stack):
        proof_client = stack[3]
        with pytest.raises(NotFoundError):
            proof_client.fetch_package("00" * 32)

    def test_multiproof_over_http(self, stack):
        store, _, _, proof_client, digests, trust, _ = stack
        pkg = proof_client.fetch_multiproof(store.log_id.hex(), digests[:3])
        assert len(pkg.events) == 3
        missing = "ff" * 32
        with pytest.raises(NotFoundError) as excinfo:
            proof_client.fetch_multiproof(store.log_id.hex(), [digests[0], missing])
        assert missing in excinfo.value.missing

    def test_consistency_over_http(self, stack):
        store, _, _, proof_client, *_ = stack
        bundle = proof_client.fetch_consistency(store.log_id.hex(), 2, 6)
        assert bundle.sth_first.tree_size == 2
        assert bundle.sth_second.tree_size == 6
        with pytest.raises(TransportError):
            proof_client.fetch_consistency(store.log_id.hex(), 6, 2)

    def test_ps_key_endpoint(self, stack):
        proof_client, trust = stack[3], stack[5]
        assert proof_client.public_key() == trust.ps_public_key

    def test_audit_failure_maps_to_502(self):
        agent = generate_identity(
            "http.example", 1700000000, name="http-agent", skills=[]
        )
        ls_key = generate_keypair()
        honest = LineageStore(ls_key)
        honest.register_card(agent.card)
        digests = []
        prev = None
        for i in range(4):
            event = sign_event(
                LineageEvent(
                    agent_id=agent.agent_id,
                    action_id=f"x{i}",
                    ts=i + 1,
                    action_type="http_action",
                    context_hash=CONTEXT,
                    prev=prev,
                ),
                agent,
            )
            honest.submit_event(event)
            prev = event_digest_hex(event)
            digests.append(prev)

        class Swappable:
            def __init__(self, store):
                self.c = LocalLogClient(store)

            def latest_sth(self):
                return self.c.latest_sth()

            def sth_at(self, size):
                return self.c.sth_at(size)

            def get_entries(self, start, end):
                return self.c.get_entries(start, end)

        client = Swappable(honest)
        ps = ProofServer(
            generate_keypair(),
            [(honest.log_id, ls_key.public_str, client)],
            sth_cache_ttl=0.0,
        )
        ps.refresh()
        fork = LineageStore(ls_key)
        fork.register_card(agent.card)
        for i in range(6):
            event = sign_event(
                LineageEvent(
                    agent_id=agent.agent_id,
                    action_id=f"fork{i}",
                    ts=100 + i,
                    action_type="http_action",
                    context_hash=CONTEXT,
                ),
                agent,
            )
            fork.submit_event(event)
        client.c = LocalLogClient(fork)
        http = TestClient(create_proof_app(ps))
        response = http.get(f"/proof/package/{digests[0]}")
        assert response.status_code == 502
        assert response.json()["error"]["code"] == "audit_failure"


class TestChainOverHttp:
    def test_verify_chain_through_http_proof_client(self, stack):
        _, _, _, proof_client, digests, trust, _ = stack
        report = verify_chain(digests[-1], proof_client, trust)
        assert report.overall_ok
        assert len(report.steps) == 6

    def test_unreachable_ps_raises_transport_error(self, stack):
        digests, trust = stack[4], stack[5]
        dead = HttpProofClient("http://127.0.0.1:1")
        with pytest.raises(TransportError):
            verify_chain(digests[-1], dead, trust)
