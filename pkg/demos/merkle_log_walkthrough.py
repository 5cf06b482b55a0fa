"""Walkthrough of the append-only Merkle log and its three proof kinds.

Run with:  python demos/merkle_log_walkthrough.py
"""

from agentlineage.merkle import (
    MerkleLog,
    verify_consistency,
    verify_inclusion,
    verify_multi,
)

log = MerkleLog()
print("== appending eight receipts ==")
for i in range(8):
    index, leaf, root = log.append(f"receipt-{i}".encode())
    print(f"  leaf {index}: root is now {root.hex()[:16]}…")

root_8 = log.root_at(8)

print("\n== inclusion proof: receipt-3 is in the size-8 snapshot ==")
proof = log.prove_inclusion(3, 8)
print(f"  audit path has {len(proof.audit_path)} siblings (log2(8) = 3)")
ok = verify_inclusion(log.leaf_hash_at(3), proof, root_8)
print(f"  verifies against the root: {ok}")

tampered = bytearray(log.leaf_hash_at(3))
tampered[0] ^= 0xFF
print(f"  a tampered leaf verifies:  {verify_inclusion(bytes(tampered), proof, root_8)}")

print("\n== consistency proof: the log only ever grew ==")
for _ in range(5):
    log.append(b"later entry")
cons = log.prove_consistency(8, 13)
print(f"  proof ({len(cons.path)} nodes) that size-8 is a prefix of size-13:",
      verify_consistency(root_8, log.root_at(13), cons))

print("\n== multiproof: one de-duplicated bundle for several leaves ==")
indices = (2, 3, 9)
multi = log.prove_multi(indices, 13)
separate = sum(len(log.prove_inclusion(i, 13).audit_path) for i in indices)
print(f"  {len(multi.nodes)} shared nodes instead of {separate} across "
      f"{len(indices)} separate paths")
leaves = {i: log.leaf_hash_at(i) for i in indices}
print("  reconstructs the root:", verify_multi(leaves, multi, log.root_at(13)))
