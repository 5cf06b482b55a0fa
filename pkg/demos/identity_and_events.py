"""Agent identity lifecycle: keypair, card, signed events, tamper evidence.

Run with:  python demos/identity_and_events.py
"""

import hashlib
from dataclasses import replace

from agentlineage.events import (
    LineageEvent,
    event_digest_hex,
    sign_event,
    verify_event_sig,
)
from agentlineage.identity import Skill, generate_identity, verify_card

print("== minting an agent identity ==")
agent = generate_identity(
    "example.com",
    1710525600,
    name="workflow-approver",
    description="Automated approval and routing agent",
    skills=[Skill("approve-task", "Task Approval", "Approves and routes workflow tasks")],
    provider_name="ExampleOrg",
)
print(f"  agent_id:  {agent.agent_id}")
print(f"  publishes: {agent.card.public_key[:32]}…")
print(f"  card verdict: {verify_card(agent.card).value}")

print("\n== the identity proof binds the declared skills ==")
inflated = replace(
    agent.card, skills=agent.card.skills + (Skill("root", "Root Access", "added later"),)
)
print(f"  verdict after adding an unsigned skill: {verify_card(inflated).value}")

print("\n== signing an action event ==")
event = LineageEvent(
    agent_id=agent.agent_id,
    action_id="uuid-1234",
    ts=1710525600,
    action_type="approve_invoice",
    context_hash=hashlib.sha256(b"policy-v7").hexdigest(),
)
signed = sign_event(event, agent)
print(f"  digest: {event_digest_hex(signed)}")
print(f"  signature verifies: {verify_event_sig(signed, agent.public_key)}")

shifted = replace(signed, ts=signed.ts + 1)
print(f"  …but not after nudging ts by one second: "
      f"{verify_event_sig(shifted, agent.public_key)}")
print(f"  and the digest changed too: {event_digest_hex(shifted)[:16]}… "
      f"vs {event_digest_hex(signed)[:16]}…")
