import hashlib
import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import pytest

from agentlineage.clients import LocalLogClient
from agentlineage.crypto import generate_keypair
from agentlineage.errors import AuditFailure, NotFoundError
from agentlineage.events import LineageEvent, event_digest_hex, sign_event
from agentlineage.identity import Skill, generate_identity
from agentlineage.merkle import verify_consistency, verify_multi
from agentlineage.proofserver import (
    PackageVerdict,
    ProofPackage,
    ProofServer,
    verify_multiproof_package,
    verify_proof_package,
)
from agentlineage.store import LineageStore, SignedTreeHead

CONTEXT = hashlib.sha256(b"ctx").hexdigest()


def make_agent(domain="ps.example"):
    return generate_identity(
        domain, 1700000000, name="emitter", skills=[Skill("s", "S", "d")]
    )


def fill_store(store, agent, count, start=0, prev=None):
    digests = []
    for i in range(start, start + count):
        event = sign_event(
            LineageEvent(
                agent_id=agent.agent_id,
                action_id=f"a{i}",
                ts=1700000000 + i,
                action_type="test_action",
                context_hash=CONTEXT,
                prev=prev,
            ),
            agent,
        )
        store.submit_event(event)
        prev = event_digest_hex(event)
        digests.append(prev)
    return digests


@pytest.fixture()
def rig():
    """One store with 8 events, a PS over it, and the trust mapping."""
    agent = make_agent()
    ls_key = generate_keypair()
    store = LineageStore(ls_key)
    store.register_card(agent.card)
    digests = fill_store(store, agent, 8)
    ps_key = generate_keypair()
    client = LocalLogClient(store)
    ps = ProofServer(ps_key, [(store.log_id, ls_key.public_str, client)], sth_cache_ttl=3600)
    trust = {store.log_id.hex(): ls_key.public_str}
    return ps, store, client, digests, trust, ps_key, ls_key, agent


class TestPackages:
    def test_single_log_package(self, rig):
        ps, store, client, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[2])
        assert len(pkg.sths) == 1
        assert len(pkg.inclusion_proofs) == 1
        assert len(pkg.inclusion_proofs[0].audit_path) == 3  # size-8 tree
        assert verify_proof_package(pkg, ps_key.public_str, trust) is PackageVerdict.OK

    def test_unknown_digest_not_found(self, rig):
        ps, *_ = rig
        with pytest.raises(NotFoundError):
            ps.build_proof_package("00" * 32)

    def test_verdict_bad_leaf_on_event_mutation(self, rig):
        ps, _, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[0])
        mutated = replace(pkg, event=replace(pkg.event, ts=pkg.event.ts + 1))
        assert (
            verify_proof_package(mutated, ps_key.public_str, trust)
            is PackageVerdict.BAD_LEAF
        )

    def test_verdict_bad_inclusion_on_sth_swap(self, rig):
        ps, store, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[0])
        other_sth = store.sth_at(4)  # genuine signature, different snapshot
        mutated = replace(pkg, sths=(other_sth,))
        assert (
            verify_proof_package(mutated, ps_key.public_str, trust)
            is PackageVerdict.BAD_INCLUSION
        )

    def test_verdict_bad_sth_sig(self, rig):
        ps, _, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[0])
        sth = pkg.sths[0]
        forged = replace(sth, signature="ed25519:" + "11" * 64)
        mutated = replace(pkg, sths=(forged,))
        assert (
            verify_proof_package(mutated, ps_key.public_str, trust)
            is PackageVerdict.BAD_STH_SIG
        )

    def test_verdict_bad_sth_sig_untrusted_log(self, rig):
        ps, _, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[0])
        assert (
            verify_proof_package(pkg, ps_key.public_str, {})
            is PackageVerdict.BAD_STH_SIG
        )

    def test_verdict_bad_ps_sig(self, rig):
        ps, _, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[0])
        mutated = replace(pkg, ps_signature="ed25519:" + "22" * 64)
        assert (
            verify_proof_package(mutated, ps_key.public_str, trust)
            is PackageVerdict.BAD_PS_SIG
        )
        wrong_key = generate_keypair()
        assert (
            verify_proof_package(pkg, wrong_key.public_str, trust)
            is PackageVerdict.BAD_PS_SIG
        )

    def test_verdict_bad_inclusion_on_stripped_proofs(self, rig):
        ps, _, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[0])
        mutated = replace(pkg, sths=(), inclusion_proofs=())
        assert (
            verify_proof_package(mutated, ps_key.public_str, trust)
            is PackageVerdict.BAD_INCLUSION
        )

    def test_json_roundtrip_preserves_verdict(self, rig):
        ps, _, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_proof_package(digests[5])
        reparsed = ProofPackage.from_json_dict(json.loads(json.dumps(pkg.to_json_dict())))
        assert reparsed == pkg
        assert verify_proof_package(reparsed, ps_key.public_str, trust) is PackageVerdict.OK


class TestFederation:
    def test_event_in_two_logs_two_pairs(self):
        agent = make_agent()
        keys = [generate_keypair(), generate_keypair()]
        stores = [LineageStore(k) for k in keys]
        for s in stores:
            s.register_card(agent.card)
        # mirror the same events into both logs
        event = sign_event(
            LineageEvent(
                agent_id=agent.agent_id,
                action_id="mirrored",
                ts=1,
                action_type="test_action",
                context_hash=CONTEXT,
            ),
            agent,
        )
        for s in stores:
            s.submit_event(event)
        fill_store(stores[0], agent, 3, start=10)  # sizes now differ
        ps_key = generate_keypair()
        ps = ProofServer(
            ps_key,
            [(s.log_id, k.public_str, LocalLogClient(s)) for s, k in zip(stores, keys)],
        )
        trust = {s.log_id.hex(): k.public_str for s, k in zip(stores, keys)}
        pkg = ps.build_proof_package(event_digest_hex(event))
        assert len(pkg.sths) == 2 and len(pkg.inclusion_proofs) == 2
        assert {sth.log_id for sth in pkg.sths} == {s.log_id for s in stores}
        assert verify_proof_package(pkg, ps_key.public_str, trust) is PackageVerdict.OK
        # each (STH, proof) pair verifies independently
        from agentlineage.merkle import verify_inclusion

        for sth, proof in zip(pkg.sths, pkg.inclusion_proofs):
            assert verify_inclusion(pkg.leaf_hash, proof, sth.root)

    def test_statelessness_same_config_same_packages(self, rig):
        _, store, _, digests, trust, ps_key, ls_key, _ = rig
        build = lambda: ProofServer(
            ps_key, [(store.log_id, ls_key.public_str, LocalLogClient(store))]
        )
        pkg_a = build().build_proof_package(digests[4])
        pkg_b = build().build_proof_package(digests[4])
        assert pkg_a.to_json_dict() == pkg_b.to_json_dict()
        assert verify_proof_package(pkg_a, ps_key.public_str, trust) is PackageVerdict.OK


class TestMultiproofPackages:
    def test_batch_of_three_in_sixteen(self):
        agent = make_agent()
        ls_key = generate_keypair()
        store = LineageStore(ls_key)
        store.register_card(agent.card)
        digests = fill_store(store, agent, 16)
        ps_key = generate_keypair()
        ps = ProofServer(ps_key, [(store.log_id, ls_key.public_str, LocalLogClient(store))])
        picked = [digests[2], digests[3], digests[9]]
        pkg = ps.build_multiproof_package(picked, store.log_id)
        assert len(pkg.events) == 3
        assert len(pkg.multiproof.nodes) < 3 * 4
        trust = {store.log_id.hex(): ls_key.public_str}
        assert (
            verify_multiproof_package(pkg, ps_key.public_str, trust)
            is PackageVerdict.OK
        )

    def test_all_events_empty_node_set(self, rig):
        ps, store, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_multiproof_package(digests, store.log_id)
        assert pkg.multiproof.nodes == ()
        assert (
            verify_multiproof_package(pkg, ps_key.public_str, trust)
            is PackageVerdict.OK
        )

    def test_missing_digest_named(self, rig):
        ps, store, _, digests, *_ = rig
        ghost = "ab" * 32
        with pytest.raises(NotFoundError) as excinfo:
            ps.build_multiproof_package([digests[0], ghost], store.log_id)
        assert excinfo.value.missing == [ghost]
        assert ghost in str(excinfo.value)

    def test_tampered_event_fails(self, rig):
        ps, store, _, digests, trust, ps_key, *_ = rig
        pkg = ps.build_multiproof_package(digests[:2], store.log_id)
        mutated = replace(
            pkg, events=(replace(pkg.events[0], ts=999), pkg.events[1])
        )
        assert (
            verify_multiproof_package(mutated, ps_key.public_str, trust)
            is not PackageVerdict.OK
        )


class TestConsistencyBundles:
    def test_bundle_verifies(self, rig):
        ps, store, _, _, trust, ps_key, ls_key, agent = rig
        fill_store(store, agent, 4, start=100)
        bundle = ps.get_consistency(store.log_id, 8, 12)
        assert bundle.sth_first.tree_size == 8
        assert bundle.sth_second.tree_size == 12
        assert verify_consistency(
            bundle.sth_first.root, bundle.sth_second.root, bundle.proof
        )

    def test_equal_and_zero_sizes(self, rig):
        ps, store, *_ = rig
        for first, second in [(8, 8), (0, 8), (0, 0)]:
            bundle = ps.get_consistency(store.log_id, first, second)
            assert bundle.proof.path == ()
            assert verify_consistency(
                bundle.sth_first.root, bundle.sth_second.root, bundle.proof
            )

    def test_range_errors(self, rig):
        ps, store, *_ = rig
        with pytest.raises(ValueError):
            ps.get_consistency(store.log_id, 6, 2)
        with pytest.raises(ValueError):
            ps.get_consistency(store.log_id, 2, 999)
        with pytest.raises(NotFoundError):
            ps.get_consistency(b"\x00" * 32, 0, 1)


class TestCachingAndCoalescing:
    def test_hundred_concurrent_queries_one_sth_fetch(self, rig):
        ps, _, client, digests, trust, ps_key, *_ = rig
        assert client.calls["sth"] == 0  # cold cache
        with ThreadPoolExecutor(max_workers=32) as pool:
            packages = list(
                pool.map(lambda _: ps.build_proof_package(digests[3]), range(100))
            )
        assert client.calls["sth"] == 1
        assert client.calls["entries"] == 1
        bodies = {json.dumps(p.to_json_dict(), sort_keys=True) for p in packages}
        assert len(bodies) == 1  # identical STH observed by every request
        assert (
            verify_proof_package(packages[0], ps_key.public_str, trust)
            is PackageVerdict.OK
        )

    def test_cache_disabled_vs_enabled_identical_packages(self, rig):
        _, store, _, digests, trust, ps_key, ls_key, _ = rig
        cached = ProofServer(
            ps_key,
            [(store.log_id, ls_key.public_str, LocalLogClient(store))],
            sth_cache_ttl=3600,
        )
        uncached = ProofServer(
            ps_key,
            [(store.log_id, ls_key.public_str, LocalLogClient(store))],
            sth_cache_ttl=0.0,
        )
        a = [cached.build_proof_package(d).to_json_dict() for d in digests[:4]]
        b = [uncached.build_proof_package(d).to_json_dict() for d in digests[:4]]
        assert a == b

    def test_consistency_sth_hot_cache(self, rig):
        ps, store, client, *_ = rig
        before = client.calls["sth_at"]
        first_bundle = ps.get_consistency(store.log_id, 3, 8)
        after_first = client.calls["sth_at"]
        assert after_first == before + 2  # both historical STHs fetched
        second_bundle = ps.get_consistency(store.log_id, 3, 8)
        assert client.calls["sth_at"] == after_first  # served from hot cache
        assert first_bundle.to_json_dict() == second_bundle.to_json_dict()

    def test_consistency_cache_eviction_keeps_answers(self):
        agent = make_agent()
        ls_key = generate_keypair()
        store = LineageStore(ls_key)
        store.register_card(agent.card)
        fill_store(store, agent, 8)
        ps = ProofServer(
            generate_keypair(),
            [(store.log_id, ls_key.public_str, LocalLogClient(store))],
            sth_cache_size=1,  # evict aggressively
        )
        a = ps.get_consistency(store.log_id, 2, 8).to_json_dict()
        b = ps.get_consistency(store.log_id, 3, 8).to_json_dict()
        again = ps.get_consistency(store.log_id, 2, 8).to_json_dict()
        assert a == again  # eviction changed latency, never the answer

    def test_new_appends_refresh_verified_sth(self, rig):
        ps, store, client, digests, trust, ps_key, ls_key, agent = rig
        first = ps.build_proof_package(digests[0])
        assert first.sths[0].tree_size == 8
        new_digests = fill_store(store, agent, 2, start=50)
        pkg = ps.build_proof_package(new_digests[-1])
        assert pkg.sths[0].tree_size == 10
        assert verify_proof_package(pkg, ps_key.public_str, trust) is PackageVerdict.OK
        # the old event is now served under the newer verified STH too
        again = ps.build_proof_package(digests[0])
        assert again.sths[0].tree_size == 10


def test_concurrent_builds_race_append_sync():
    # packages built while the log grows and the mirror re-syncs must stay
    # internally consistent (index always covered by the observed STH)
    import threading

    agent = make_agent()
    ls_key = generate_keypair()
    store = LineageStore(ls_key)
    store.register_card(agent.card)
    digests = fill_store(store, agent, 4)
    ps_key = generate_keypair()
    ps = ProofServer(
        ps_key,
        [(store.log_id, ls_key.public_str, LocalLogClient(store))],
        sth_cache_ttl=0.0,  # every request re-audits
    )
    trust = {store.log_id.hex(): ls_key.public_str}
    known = list(digests)
    errors = []
    built = []
    stop = threading.Event()

    def builder(seed):
        rng = random.Random(seed)
        while not stop.is_set():
            digest = known[rng.randrange(len(known))]
            try:
                pkg = ps.build_proof_package(digest)
                verdict = verify_proof_package(pkg, ps_key.public_str, trust)
                if verdict is not PackageVerdict.OK:
                    errors.append(f"verdict {verdict} for {digest[:8]}")
                    return
                built.append(digest)
            except Exception as exc:  # pragma: no cover - failure path
                errors.append(repr(exc))
                return

    threads = [threading.Thread(target=builder, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    for batch in range(40):
        known.extend(fill_store(store, agent, 3, start=100 + batch * 3))
    stop.set()
    for t in threads:
        t.join()
    assert not errors, errors[:3]
    assert len(built) > 50  # the race actually ran


class _SwappableClient:
    """Client whose backing store can be swapped to simulate a forked log."""

    def __init__(self, store):
        self.inner = LocalLogClient(store)

    def swap(self, store):
        self.inner = LocalLogClient(store)

    def latest_sth(self):
        return self.inner.latest_sth()

    def sth_at(self, size):
        return self.inner.sth_at(size)

    def get_entries(self, start, end):
        return self.inner.get_entries(start, end)


class _TamperingClient:
    """Wraps a client and corrupts what the LS serves at the boundary."""

    def __init__(self, store, *, corrupt_entry=None, sth_mutator=None):
        self.inner = LocalLogClient(store)
        self.corrupt_entry = corrupt_entry
        self.sth_mutator = sth_mutator

    def latest_sth(self):
        sth = self.inner.latest_sth()
        return self.sth_mutator(sth) if self.sth_mutator else sth

    def sth_at(self, size):
        return self.inner.sth_at(size)

    def get_entries(self, start, end):
        records = self.inner.get_entries(start, end)
        if self.corrupt_entry is not None:
            records = [
                replace(r, event=replace(r.event, ts=r.event.ts + 1))
                if r.leaf_index == self.corrupt_entry
                else r
                for r in records
            ]
        return records


def _forked_rig():
    agent = make_agent()
    ls_key = generate_keypair()
    honest = LineageStore(ls_key)
    honest.register_card(agent.card)
    fill_store(honest, agent, 8)
    # the fork: same signing key (same log_id), different content, size 12
    fork = LineageStore(ls_key)
    fork.register_card(agent.card)
    for i in range(12):
        fill_store(fork, agent, 1, start=1000 + i)
    return agent, ls_key, honest, fork


class TestAuditorSoundness:
    def test_forked_log_triggers_audit_failure(self):
        agent, ls_key, honest, fork = _forked_rig()
        client = _SwappableClient(honest)
        ps = ProofServer(
            generate_keypair(),
            [(honest.log_id, ls_key.public_str, client)],
            sth_cache_ttl=0.0,
        )
        honest_digest = honest.get_entries(0, 1)[0].digest.hex()
        ps.build_proof_package(honest_digest)  # baseline at size 8
        signed_before = ps.packages_signed
        client.swap(fork)
        with pytest.raises(AuditFailure):
            ps.build_proof_package(fork.get_entries(8, 9)[0].digest.hex())
        assert ps.packages_signed == signed_before
        assert ps.incidents and "fork" in ps.incidents[-1]["reason"]
        # the handle stays poisoned: even old queries refuse service
        with pytest.raises(AuditFailure):
            ps.build_proof_package(honest_digest)

    def test_equivocation_same_size_different_root(self):
        agent, ls_key, honest, _ = _forked_rig()
        other = LineageStore(ls_key)
        other.register_card(agent.card)
        fill_store(other, agent, 8, start=500)  # same size, different content
        client = _SwappableClient(honest)
        ps = ProofServer(
            generate_keypair(),
            [(honest.log_id, ls_key.public_str, client)],
            sth_cache_ttl=0.0,
        )
        ps.refresh()
        client.swap(other)
        with pytest.raises(AuditFailure):
            ps.refresh()
        assert ps.packages_signed == 0

    def test_shrunken_log_refused(self):
        agent, ls_key, honest, _ = _forked_rig()
        smaller = LineageStore(ls_key)
        smaller.register_card(agent.card)
        fill_store(smaller, agent, 3, start=700)
        client = _SwappableClient(honest)
        ps = ProofServer(
            generate_keypair(),
            [(honest.log_id, ls_key.public_str, client)],
            sth_cache_ttl=0.0,
        )
        ps.refresh()
        client.swap(smaller)
        with pytest.raises(AuditFailure):
            ps.refresh()

    def test_corrupted_entry_at_boundary_never_signed(self):
        agent = make_agent()
        ls_key = generate_keypair()
        store = LineageStore(ls_key)
        store.register_card(agent.card)
        digests = fill_store(store, agent, 6)
        client = _TamperingClient(store, corrupt_entry=2)
        ps = ProofServer(
            generate_keypair(),
            [(store.log_id, ls_key.public_str, client)],
            sth_cache_ttl=0.0,
        )
        with pytest.raises(AuditFailure):
            ps.build_proof_package(digests[0])
        assert ps.packages_signed == 0

    def test_resigned_sth_by_wrong_key_refused(self):
        agent = make_agent()
        ls_key = generate_keypair()
        store = LineageStore(ls_key)
        store.register_card(agent.card)
        digests = fill_store(store, agent, 4)
        impostor = generate_keypair()

        def resign(sth: SignedTreeHead) -> SignedTreeHead:
            from agentlineage.crypto import encode_signature

            return replace(
                sth, signature=encode_signature(impostor.sign(sth.signing_body()))
            )

        client = _TamperingClient(store, sth_mutator=resign)
        ps = ProofServer(
            generate_keypair(),
            [(store.log_id, ls_key.public_str, client)],
            sth_cache_ttl=0.0,
        )
        with pytest.raises(AuditFailure):
            ps.build_proof_package(digests[0])
        assert ps.packages_signed == 0

    def test_baseline_survives_restart(self, tmp_path):
        agent, ls_key, honest, fork = _forked_rig()
        client = _SwappableClient(honest)
        state = tmp_path / "ps-state"
        ps_key = generate_keypair()
        ps = ProofServer(
            ps_key,
            [(honest.log_id, ls_key.public_str, client)],
            sth_cache_ttl=0.0,
            state_dir=state,
        )
        ps.refresh()  # verified baseline at size 8 persisted

        fork_client = _SwappableClient(fork)
        revived = ProofServer(
            ps_key,
            [(honest.log_id, ls_key.public_str, fork_client)],
            sth_cache_ttl=0.0,
            state_dir=state,
        )
        with pytest.raises(AuditFailure):
            revived.refresh()
        assert revived.packages_signed == 0
        assert (state / "incidents.jsonl").exists()
