"""Operator command line.

Exit codes: 0 success / verified, 1 verification failure, 2 usage error,
3 transport error.  Commands that check something accept --json for
machine-readable output including the verdict and, on failure, the first
failing check.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from agentlineage import crypto
from agentlineage.chain import TrustConfig, verify_chain
from agentlineage.clients import HttpLogClient
from agentlineage.errors import (
    AuditFailure,
    CardFetchError,
    CardParseError,
    LineageError,
    NotFoundError,
    SubmissionRejected,
    TransportError,
)
from agentlineage.events import LineageEvent, event_digest_hex, sign_event
from agentlineage.identity import (
    AgentCard,
    CardVerdict,
    Skill,
    fetch_card,
    generate_identity,
    verify_card,
)
from agentlineage.httpapi import HttpProofClient
from agentlineage.merkle import verify_consistency, verify_inclusion
from agentlineage.proofserver import (
    PackageVerdict,
    verify_multiproof_package,
    verify_proof_package,
)
from agentlineage.store import verify_sth
from agentlineage.workflow import (
    OfflinePackageSource,
    REQUIRED_CITES,
    demo_fedramp,
)

EXIT_VERIFY_FAIL = 1
EXIT_TRANSPORT = 3


def _emit(doc: dict, as_json: bool, human: str) -> None:
    if as_json:
        click.echo(json.dumps(doc, indent=2, sort_keys=True))
    else:
        click.echo(human)


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise click.UsageError(f"cannot read {path}: {exc}")


@click.group()
def main():
    """Verifiable agent lineage: logs, proofs, identities, and the demo."""


# -- keys and cards -----------------------------------------------------------

@main.command()
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def keygen(out):
    """Generate an Ed25519 keypair file."""
    keypair = crypto.generate_keypair()
    crypto.save_keypair(keypair, out)
    click.echo(f"wrote {out} (public key {keypair.public_str})")


@main.group()
def card():
    """Create, verify, and serve enhanced agent cards."""


@card.command("create")
@click.option("--key", "key_path", type=click.Path(exists=True), required=True)
@click.option("--domain", required=True)
@click.option("--name", required=True)
@click.option("--description", default="")
@click.option("--url", default="")
@click.option("--timestamp", type=int, required=True, help="Issuance unix seconds.")
@click.option(
    "--skill",
    "skills",
    multiple=True,
    help="Repeatable skill spec 'id:name:description'.",
)
@click.option("--provider-name", default=None)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def card_create(key_path, domain, name, description, url, timestamp, skills, provider_name, out):
    """Build a self-signed agent card for an existing keypair."""
    keypair = crypto.load_keypair(key_path)
    parsed_skills = []
    for spec in skills:
        parts = spec.split(":", 2)
        if len(parts) != 3:
            raise click.UsageError(f"bad --skill {spec!r}; expected id:name:description")
        parsed_skills.append(Skill(*parts))
    identity = generate_identity(
        domain,
        timestamp,
        name=name,
        description=description,
        url=url,
        skills=parsed_skills,
        provider_name=provider_name,
        keypair=keypair,
    )
    Path(out).write_text(json.dumps(identity.card.to_json_dict(), indent=2) + "\n")
    click.echo(f"wrote {out} ({identity.agent_id})")


@card.command("verify")
@click.option("--card", "card_path", type=click.Path(exists=True), required=True)
@click.option("--timestamp", type=int, default=None, help="Pin the issuance time.")
@click.option("--json", "as_json", is_flag=True)
def card_verify(card_path, timestamp, as_json):
    """Verify a card's identity derivation and proof of key possession."""
    try:
        parsed = AgentCard.from_json_dict(_read_json(card_path))
    except CardParseError as exc:
        raise click.UsageError(str(exc))
    verdict = verify_card(parsed, timestamp)
    _emit(
        {"verdict": verdict.value, "agent_id": parsed.agent_id},
        as_json,
        f"{verdict.value}: {parsed.agent_id}",
    )
    if verdict is not CardVerdict.OK:
        sys.exit(EXIT_VERIFY_FAIL)


@card.command("serve")
@click.option("--card", "card_path", type=click.Path(exists=True), required=True)
@click.option("--listen", default="127.0.0.1:8402", show_default=True)
def card_serve(card_path, listen):
    """Serve one card at /.well-known/agent-card.json."""
    from fastapi import FastAPI
    import uvicorn

    doc = _read_json(card_path)
    app = FastAPI(docs_url=None, redoc_url=None)

    @app.get("/.well-known/agent-card.json")
    def well_known():
        return doc

    host, port = _parse_listen(listen)
    uvicorn.run(app, host=host, port=port, log_level="warning")


@card.command("fetch")
@click.option("--url", required=True, help="Provider base URL.")
@click.option("--json", "as_json", is_flag=True)
def card_fetch(url, as_json):
    """Fetch a card from a provider's well-known path and verify it."""
    parsed = fetch_card(url)
    verdict = verify_card(parsed)
    _emit(
        {"verdict": verdict.value, "card": parsed.to_json_dict()},
        as_json,
        f"{verdict.value}: {parsed.agent_id}",
    )
    if verdict is not CardVerdict.OK:
        sys.exit(EXIT_VERIFY_FAIL)


# -- events ---------------------------------------------------------------------

@main.group()
def event():
    """Sign and submit lineage events."""


@event.command("sign")
@click.option("--key", "key_path", type=click.Path(exists=True), required=True)
@click.option("--agent-id", required=True)
@click.option("--action-id", required=True)
@click.option("--action-type", required=True)
@click.option("--context-hash", required=True, help="64 hex chars.")
@click.option("--ts", type=int, required=True)
@click.option("--prev", default=None)
@click.option("--cites", multiple=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True)
def event_sign(key_path, agent_id, action_id, action_type, context_hash, ts, prev, cites, out):
    """Sign an event; the key must belong to the claimed agent_id."""
    keypair = crypto.load_keypair(key_path)

    class _Signer:
        def __init__(self):
            self.agent_id = agent_id
            self.keypair = keypair

    unsigned = LineageEvent(
        agent_id=agent_id,
        action_id=action_id,
        ts=ts,
        action_type=action_type,
        context_hash=context_hash,
        prev=prev,
        cites=tuple(cites),
    )
    signed = sign_event(unsigned, _Signer())
    Path(out).write_text(json.dumps(signed.to_json_dict(), indent=2) + "\n")
    click.echo(f"wrote {out} (digest {event_digest_hex(signed)})")


@event.command("submit")
@click.option("--log-url", required=True)
@click.option("--event", "event_path", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
def event_submit(log_url, event_path, as_json):
    """Submit a signed event to a lineage store."""
    parsed = LineageEvent.from_json_dict(_read_json(event_path))
    client = HttpLogClient(log_url)
    try:
        leaf_index, sth = client.submit_event(parsed)
    except SubmissionRejected as exc:
        _emit(
            {"verdict": "rejected", "reason": exc.reason, "message": str(exc)},
            as_json,
            f"rejected ({exc.reason}): {exc}",
        )
        sys.exit(EXIT_VERIFY_FAIL)
    finally:
        client.close()
    _emit(
        {"leaf_index": leaf_index, "sth": sth.to_json_dict()},
        as_json,
        f"appended at index {leaf_index}; tree size {sth.tree_size}",
    )


# -- tree heads and proofs --------------------------------------------------------

@main.group()
def sth():
    """Fetch signed tree heads."""


@sth.command("get")
@click.option("--log-url", required=True)
@click.option("--size", type=int, default=None)
@click.option("--log-key", default=None, help="Verify against this log public key.")
@click.option("--json", "as_json", is_flag=True)
def sth_get(log_url, size, log_key, as_json):
    """Fetch the latest (or a historical) STH, optionally verifying it."""
    client = HttpLogClient(log_url)
    try:
        head = client.latest_sth() if size is None else client.sth_at(size)
    finally:
        client.close()
    doc = head.to_json_dict()
    if log_key is not None:
        ok = verify_sth(head, crypto.decode_public_key(log_key))
        doc["verdict"] = "ok" if ok else "bad_sth_sig"
        _emit(
            doc,
            as_json,
            f"size {head.tree_size} root {head.root.hex()} {doc['verdict']}",
        )
        if not ok:
            sys.exit(EXIT_VERIFY_FAIL)
    else:
        _emit(doc, as_json, f"size {head.tree_size} root {head.root.hex()}")


@main.group()
def proof():
    """Fetch and verify proofs from a proof server."""


def _trust_from_file(path: str) -> TrustConfig:
    return TrustConfig.from_json_dict(_read_json(path))


@proof.command("package")
@click.option("--ps-url", required=True)
@click.option("--digest", required=True)
@click.option("--trust", "trust_path", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
def proof_package(ps_url, digest, trust_path, as_json):
    """Fetch the audited package for one event and verify it."""
    trust = _trust_from_file(trust_path)
    client = HttpProofClient(ps_url)
    try:
        pkg = client.fetch_package(digest)
    finally:
        client.close()
    verdict = verify_proof_package(pkg, trust.ps_public_key, trust.trusted_log_keys)
    _emit(
        {"verdict": verdict.value, "package": pkg.to_json_dict()},
        as_json,
        f"{verdict.value}: event {digest[:16]} anchored in {len(pkg.sths)} log(s)",
    )
    if verdict is not PackageVerdict.OK:
        sys.exit(EXIT_VERIFY_FAIL)


@proof.command("inclusion")
@click.option("--ps-url", required=True)
@click.option("--digest", required=True)
@click.option("--trust", "trust_path", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
def proof_inclusion(ps_url, digest, trust_path, as_json):
    """Check the inclusion proofs inside an event's audited package."""
    trust = _trust_from_file(trust_path)
    client = HttpProofClient(ps_url)
    try:
        pkg = client.fetch_package(digest)
    finally:
        client.close()
    results = []
    all_ok = True
    for head, inc in zip(pkg.sths, pkg.inclusion_proofs):
        ok = verify_inclusion(pkg.leaf_hash, inc, head.root)
        all_ok &= ok
        results.append(
            {
                "log_id": head.log_id.hex(),
                "tree_size": head.tree_size,
                "path_length": len(inc.audit_path),
                "ok": ok,
            }
        )
    _emit(
        {"verdict": "ok" if all_ok else "bad_inclusion", "proofs": results},
        as_json,
        "\n".join(
            f"log {r['log_id'][:12]} size {r['tree_size']} path {r['path_length']} ok={r['ok']}"
            for r in results
        ),
    )
    if not all_ok:
        sys.exit(EXIT_VERIFY_FAIL)


@proof.command("consistency")
@click.option("--ps-url", required=True)
@click.option("--log-id", required=True)
@click.option("--first", type=int, required=True)
@click.option("--second", type=int, required=True)
@click.option("--trust", "trust_path", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
def proof_consistency(ps_url, log_id, first, second, trust_path, as_json):
    """Fetch and check a consistency bundle between two snapshots."""
    trust = _trust_from_file(trust_path)
    client = HttpProofClient(ps_url)
    try:
        bundle = client.fetch_consistency(log_id, first, second)
    finally:
        client.close()
    log_key_str = trust.trusted_log_keys.get(log_id)
    checks = {
        "sth_first": log_key_str is not None
        and verify_sth(bundle.sth_first, crypto.decode_public_key(log_key_str)),
        "sth_second": log_key_str is not None
        and verify_sth(bundle.sth_second, crypto.decode_public_key(log_key_str)),
        "consistency": verify_consistency(
            bundle.sth_first.root, bundle.sth_second.root, bundle.proof
        ),
    }
    ok = all(checks.values())
    _emit(
        {"verdict": "ok" if ok else "fail", "checks": checks},
        as_json,
        f"{first}->{second}: " + ("consistent" if ok else f"FAILED {checks}"),
    )
    if not ok:
        sys.exit(EXIT_VERIFY_FAIL)


@proof.command("multi")
@click.option("--ps-url", required=True)
@click.option("--log-id", required=True)
@click.option("--digest", "digests", multiple=True, required=True)
@click.option("--trust", "trust_path", type=click.Path(exists=True), required=True)
@click.option("--json", "as_json", is_flag=True)
def proof_multi(ps_url, log_id, digests, trust_path, as_json):
    """Fetch and verify a batched multiproof package."""
    trust = _trust_from_file(trust_path)
    client = HttpProofClient(ps_url)
    try:
        pkg = client.fetch_multiproof(log_id, list(digests))
    finally:
        client.close()
    verdict = verify_multiproof_package(pkg, trust.ps_public_key, trust.trusted_log_keys)
    _emit(
        {
            "verdict": verdict.value,
            "indices": list(pkg.multiproof.indices),
            "node_count": len(pkg.multiproof.nodes),
        },
        as_json,
        f"{verdict.value}: {len(pkg.events)} events, {len(pkg.multiproof.nodes)} proof nodes",
    )
    if verdict is not PackageVerdict.OK:
        sys.exit(EXIT_VERIFY_FAIL)


# -- chain verification -------------------------------------------------------------

@main.group()
def verify():
    """Verify call chains."""


@verify.command("chain")
@click.option("--head", required=True, help="Event digest to start from.")
@click.option("--trust", "trust_path", type=click.Path(exists=True), required=True)
@click.option("--ps-url", default=None, help="Proof server to pull packages from.")
@click.option(
    "--bundle",
    "bundle_path",
    type=click.Path(exists=True),
    default=None,
    help="Offline bundle of packages (alternative to --ps-url).",
)
@click.option("--fedramp-policy", is_flag=True, help="Apply the demo citation policy.")
@click.option("--json", "as_json", is_flag=True)
def verify_chain_cmd(head, trust_path, ps_url, bundle_path, fedramp_policy, as_json):
    """Walk prev links from --head and verify every event end to end."""
    if (ps_url is None) == (bundle_path is None):
        raise click.UsageError("pass exactly one of --ps-url or --bundle")
    trust = _trust_from_file(trust_path)
    if bundle_path is not None:
        bundle = _read_json(bundle_path)
        source = OfflinePackageSource(bundle.get("packages", bundle))
        client = None
    else:
        client = HttpProofClient(ps_url)
        source = client
    try:
        report = verify_chain(
            head,
            source,
            trust,
            required_cites=REQUIRED_CITES if fedramp_policy else None,
        )
    finally:
        if client is not None:
            client.close()
    human = [
        f"chain of {len(report.steps)} events: "
        + ("OK" if report.overall_ok else f"FAIL ({report.first_failure})")
    ]
    for step in report.steps:
        mark = "ok " if step.ok else "FAIL"
        human.append(
            f"  [{mark}] {step.position:2d} {step.action_type:20s} "
            f"{step.actor_kind}:{step.actor_label}"
        )
    _emit(report.to_json_dict(), as_json, "\n".join(human))
    if not report.overall_ok:
        sys.exit(EXIT_VERIFY_FAIL)


# -- demo -----------------------------------------------------------------------------

@main.group()
def demo():
    """Scripted end-to-end scenarios."""


@demo.command("fedramp")
@click.option("--deterministic/--live", default=True, show_default=True)
@click.option("--seed", default="fedramp-demo", show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--tamper", multiple=True, help="mutate-context:<step> | skip-approval:<step>")
@click.option("--json", "as_json", is_flag=True)
def demo_fedramp_cmd(deterministic, seed, out_dir, tamper, as_json):
    """Run the eleven-event workflow, verify it, and emit artifacts."""
    try:
        result = demo_fedramp(
            out_dir, deterministic=deterministic, seed=seed, tamper=list(tamper)
        )
    except ValueError as exc:
        raise click.UsageError(str(exc))
    report = result["report"]
    doc = {
        "overall": report["overall"],
        "first_failure": report["first_failure"],
        "events": len(result["transcript"]["records"]),
        "head": result["transcript"]["head"],
        "policy_findings": result["policy_findings"],
        "out_dir": str(out_dir) if out_dir else None,
    }
    human = (
        f"{doc['events']} events, chain {report['overall']}"
        + (f" ({report['first_failure']})" if report["first_failure"] else "")
        + (
            "\npolicy findings: " + "; ".join(result["policy_findings"])
            if result["policy_findings"]
            else ""
        )
        + (f"\nartifacts in {out_dir}" if out_dir else "")
    )
    _emit(doc, as_json, human)
    if report["overall"] != "ok" or result["policy_findings"]:
        sys.exit(EXIT_VERIFY_FAIL)


# -- services ----------------------------------------------------------------------------

def _parse_listen(listen: str) -> tuple[str, int]:
    host, _, port = listen.rpartition(":")
    if not host or not port.isdigit():
        raise click.UsageError(f"bad --listen {listen!r}; expected host:port")
    return host, int(port)


def _config_value(config: dict, key: str, env: str, flag_value, default=None):
    if flag_value is not None:
        return flag_value
    if env in os.environ:
        return os.environ[env]
    return config.get(key, default)


@main.group()
def serve():
    """Run the lineage store or proof server over HTTP."""


@serve.command("ls")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--listen", default=None, help="host:port (default 127.0.0.1:8400)")
@click.option("--data-dir", default=None)
@click.option("--key", "key_path", default=None, help="LS signing key file.")
def serve_ls(config_path, listen, data_dir, key_path):
    """Serve a lineage store; config file keys: listen, data_dir, signing_key."""
    import uvicorn

    from agentlineage.httpapi import create_log_app
    from agentlineage.store import LineageStore

    config = _read_json(config_path) if config_path else {}
    listen = _config_value(config, "listen", "AGENTLINEAGE_LS_LISTEN", listen, "127.0.0.1:8400")
    data_dir = _config_value(config, "data_dir", "AGENTLINEAGE_LS_DATA_DIR", data_dir)
    key_path = _config_value(config, "signing_key", "AGENTLINEAGE_LS_KEY", key_path)
    if key_path is None:
        raise click.UsageError("need a signing key (--key, config, or AGENTLINEAGE_LS_KEY)")
    store = LineageStore(crypto.load_keypair(key_path), data_dir)
    host, port = _parse_listen(listen)
    click.echo(f"lineage store {store.log_id.hex()[:16]} on {host}:{port}", err=True)
    uvicorn.run(create_log_app(store), host=host, port=port, log_level="warning")


@serve.command("ps")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--listen", default=None)
def serve_ps(config_path, listen):
    """Serve a proof server; config: listen, signing_key, logs[], cache_ttl, state_dir."""
    import uvicorn

    from agentlineage.httpapi import create_proof_app
    from agentlineage.proofserver import ProofServer

    config = _read_json(config_path)
    listen = _config_value(config, "listen", "AGENTLINEAGE_PS_LISTEN", listen, "127.0.0.1:8401")
    key_path = _config_value(config, "signing_key", "AGENTLINEAGE_PS_KEY", None)
    if key_path is None:
        raise click.UsageError("config must name the PS signing_key")
    logs = []
    for upstream in config.get("logs", []):
        logs.append(
            (
                bytes.fromhex(upstream["log_id"]),
                upstream["public_key"],
                HttpLogClient(upstream["base_url"]),
            )
        )
    if not logs:
        raise click.UsageError("config must list at least one upstream log")
    server = ProofServer(
        crypto.load_keypair(key_path),
        logs,
        sth_cache_ttl=float(config.get("cache_ttl", 1.0)),
        sth_cache_size=int(config.get("cache_size", 16)),
        state_dir=config.get("state_dir"),
    )
    host, port = _parse_listen(listen)
    click.echo(f"proof server over {len(logs)} log(s) on {host}:{port}", err=True)
    uvicorn.run(create_proof_app(server), host=host, port=port, log_level="warning")


def entrypoint(argv=None) -> int:
    """Entry point that maps error classes onto exit-code classes."""
    try:
        main.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    except (TransportError, CardFetchError) as exc:
        click.echo(f"transport error: {exc}", err=True)
        return EXIT_TRANSPORT
    except (NotFoundError, AuditFailure, SubmissionRejected) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VERIFY_FAIL
    except LineageError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_VERIFY_FAIL


if __name__ == "__main__":
    sys.exit(entrypoint())
