"""The full story: log, proof server, eleven-event workflow, offline capsule.

Run with:  python demos/end_to_end_workflow.py
"""

import json

from agentlineage.chain import TrustConfig
from agentlineage.workflow import demo_fedramp, verify_bundle, verify_capsule

print("== deterministic compliance workflow ==")
result = demo_fedramp()
run = result["run"]
for step in result["report"]["steps"]:
    print(f"  [{'ok' if step['ok'] else 'XX'}] {step['action_type']:20s}"
          f" by {step['actor_kind']}:{step['actor_label']}")
print(f"  overall: {result['report']['overall']}, "
      f"{len(run.records)} events, head {run.head[:16]}…")

print("\n== replaying is byte-stable ==")
again = demo_fedramp()
same = json.dumps(result["transcript"], sort_keys=True) == json.dumps(
    again["transcript"], sort_keys=True
)
print(f"  second run produced an identical transcript: {same}")

print("\n== the evidence capsule verifies offline ==")
trust = TrustConfig.from_json_dict(result["trust"])
capsule_report = verify_capsule(result["capsule"], trust)
print(f"  capsule verdict: {'ok' if capsule_report.overall_ok else 'fail'} "
      f"({len(capsule_report.items)} cited artifacts)")

print("\n== tampering anywhere flips the verdict ==")
tampered = demo_fedramp(tamper=["mutate-context:E3"])
print(f"  mutate the stored scan-report hash: {tampered['report']['overall']} "
      f"at '{tampered['report']['first_failure']}'")

skipped = demo_fedramp(tamper=["skip-approval:E3a"])
print(f"  skip the risk-acceptance approval: chain {skipped['report']['overall']}, "
      f"policy says {skipped['policy_findings']}")

print("\n== offline chain verification from the exported bundle ==")
bundle_report = verify_bundle(result["bundle"])
print(f"  verdict with no services running: "
      f"{'ok' if bundle_report.overall_ok else 'fail'} "
      f"after {bundle_report.package_verifications} package verifications")
