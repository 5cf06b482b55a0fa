"""Append-only Merkle tree with inclusion, consistency, and multi-leaf proofs.

The tree follows the Certificate Transparency construction: SHA-256 with
domain separation (0x00 for leaf hashing, 0x01 for internal nodes), and the
left subtree of an n-leaf tree holding the largest power of two strictly
below n.  Proofs therefore interoperate with the standard CT verification
algorithms, which are implemented here as pure functions that never raise
on untrusted input.

Nodes inside a multiproof are addressed by the half-open leaf range
``(lo, hi)`` they commit to; ranges are unambiguous in this tree shape and
stay valid as the log grows.
"""

from __future__ import annotations

import hashlib
import threading
from bisect import bisect_left
from dataclasses import dataclass
from typing import Mapping

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

#: Root of the empty tree: SHA-256 of the empty string.
EMPTY_ROOT = hashlib.sha256(b"").digest()


def hash_leaf(payload: bytes) -> bytes:
    """Leaf hash H(0x00 || payload)."""
    return hashlib.sha256(LEAF_PREFIX + payload).digest()


def hash_children(left: bytes, right: bytes) -> bytes:
    """Internal node hash H(0x01 || left || right)."""
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


def _split(n: int) -> int:
    """Largest power of two strictly less than n (n >= 2)."""
    return 1 << (n - 1).bit_length() - 1


@dataclass(frozen=True)
class InclusionProof:
    """Audit path for one leaf against the root of a given snapshot."""

    leaf_index: int
    tree_size: int
    audit_path: tuple[bytes, ...]

    def to_json_dict(self) -> dict:
        return {
            "leaf_index": self.leaf_index,
            "tree_size": self.tree_size,
            "audit_path": [h.hex() for h in self.audit_path],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "InclusionProof":
        return cls(
            leaf_index=int(doc["leaf_index"]),
            tree_size=int(doc["tree_size"]),
            audit_path=tuple(bytes.fromhex(h) for h in doc["audit_path"]),
        )


@dataclass(frozen=True)
class ConsistencyProof:
    """Evidence that the snapshot at first_size is a prefix of second_size."""

    first_size: int
    second_size: int
    path: tuple[bytes, ...]

    def to_json_dict(self) -> dict:
        return {
            "first_size": self.first_size,
            "second_size": self.second_size,
            "path": [h.hex() for h in self.path],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ConsistencyProof":
        return cls(
            first_size=int(doc["first_size"]),
            second_size=int(doc["second_size"]),
            path=tuple(bytes.fromhex(h) for h in doc["path"]),
        )


@dataclass(frozen=True)
class Multiproof:
    """De-duplicated node set proving several leaves at once.

    ``nodes`` holds ``((lo, hi), hash)`` pairs: each hash is the root of the
    maximal subtree covering leaves [lo, hi) that contains no target leaf.
    They are sorted by (subtree size, lo), i.e. level ascending then
    horizontal position ascending.
    """

    indices: tuple[int, ...]
    tree_size: int
    nodes: tuple[tuple[tuple[int, int], bytes], ...]

    def to_json_dict(self) -> dict:
        return {
            "indices": list(self.indices),
            "tree_size": self.tree_size,
            "nodes": [
                {"lo": lo, "hi": hi, "hash": h.hex()} for (lo, hi), h in self.nodes
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "Multiproof":
        return cls(
            indices=tuple(int(i) for i in doc["indices"]),
            tree_size=int(doc["tree_size"]),
            nodes=tuple(
                ((int(n["lo"]), int(n["hi"])), bytes.fromhex(n["hash"]))
                for n in doc["nodes"]
            ),
        )


class MerkleLog:
    """Append-only sequence of leaves with cached internal nodes.

    Single-writer appends; any number of concurrent readers may ask for
    roots and proofs at sizes up to the current one.  Leaf payloads are
    retained so the log can be re-audited and replayed.
    """

    def __init__(self) -> None:
        self._leaves: list[bytes] = []
        self._payloads: list[bytes] = []
        # Perfect (power-of-two sized) subtree hashes never change once the
        # leaves below them exist, so they are cached forever; the O(log n)
        # spine above them is recomputed per query.
        self._node_cache: dict[tuple[int, int], bytes] = {}
        self._cache_lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._leaves)

    @property
    def size(self) -> int:
        return len(self._leaves)

    def append(self, payload: bytes) -> tuple[int, bytes, bytes]:
        """Append a payload; returns (leaf_index, leaf_hash, new root)."""
        leaf = hash_leaf(payload)
        index = len(self._leaves)
        self._payloads.append(payload)
        self._leaves.append(leaf)
        return index, leaf, self.root_at(index + 1)

    def leaf_hash_at(self, index: int) -> bytes:
        return self._leaves[index]

    def payload_at(self, index: int) -> bytes:
        return self._payloads[index]

    def _subtree_root(self, lo: int, hi: int) -> bytes:
        if hi - lo == 1:
            return self._leaves[lo]
        n = hi - lo
        perfect = n & (n - 1) == 0
        if perfect:
            cached = self._node_cache.get((lo, hi))
            if cached is not None:
                return cached
        k = _split(n)
        node = hash_children(
            self._subtree_root(lo, lo + k), self._subtree_root(lo + k, hi)
        )
        if perfect:
            with self._cache_lock:
                self._node_cache[(lo, hi)] = node
        return node

    def root_at(self, size: int) -> bytes:
        """Root of the tree over the first `size` leaves."""
        if size < 0 or size > len(self._leaves):
            raise ValueError(f"size {size} out of range (log has {len(self._leaves)})")
        if size == 0:
            return EMPTY_ROOT
        return self._subtree_root(0, size)

    @property
    def root(self) -> bytes:
        return self.root_at(len(self._leaves))

    def prove_inclusion(self, leaf_index: int, size: int) -> InclusionProof:
        """Audit path for `leaf_index` within the snapshot of `size` leaves."""
        if size < 1 or size > len(self._leaves):
            raise ValueError(f"size {size} out of range (log has {len(self._leaves)})")
        if leaf_index < 0 or leaf_index >= size:
            raise ValueError(f"leaf_index {leaf_index} out of range for size {size}")
        lo, hi, index = 0, size, leaf_index
        stack: list[bytes] = []
        while hi - lo > 1:
            k = _split(hi - lo)
            if index < lo + k:
                stack.append(self._subtree_root(lo + k, hi))
                hi = lo + k
            else:
                stack.append(self._subtree_root(lo, lo + k))
                lo = lo + k
        path = list(reversed(stack))
        return InclusionProof(leaf_index=leaf_index, tree_size=size, audit_path=tuple(path))

    def _consistency_subproof(
        self, m: int, lo: int, hi: int, complete: bool
    ) -> list[bytes]:
        n = hi - lo
        if m == n:
            return [] if complete else [self._subtree_root(lo, hi)]
        k = _split(n)
        if m <= k:
            path = self._consistency_subproof(m, lo, lo + k, complete)
            path.append(self._subtree_root(lo + k, hi))
        else:
            path = self._consistency_subproof(m - k, lo + k, hi, False)
            path.append(self._subtree_root(lo, lo + k))
        return path

    def prove_consistency(self, first: int, second: int) -> ConsistencyProof:
        """Proof that the first-size snapshot is a prefix of the second."""
        if not 0 <= first <= second <= len(self._leaves):
            raise ValueError(
                f"need 0 <= first <= second <= {len(self._leaves)}, "
                f"got first={first} second={second}"
            )
        if first == 0 or first == second:
            path: list[bytes] = []
        else:
            path = self._consistency_subproof(first, 0, second, True)
        return ConsistencyProof(first_size=first, second_size=second, path=tuple(path))

    def prove_multi(self, indices: list[int] | tuple[int, ...], size: int) -> Multiproof:
        """De-duplicated proof for a set of leaves within one snapshot."""
        idx = tuple(indices)
        if not idx:
            raise ValueError("indices must be non-empty")
        if len(set(idx)) != len(idx):
            raise ValueError("indices must be distinct")
        if tuple(sorted(idx)) != idx:
            raise ValueError("indices must be sorted ascending")
        if size < 1 or size > len(self._leaves):
            raise ValueError(f"size {size} out of range (log has {len(self._leaves)})")
        if idx[0] < 0 or idx[-1] >= size:
            raise ValueError("index out of range for snapshot size")

        nodes: list[tuple[tuple[int, int], bytes]] = []

        def walk(lo: int, hi: int) -> None:
            pos = bisect_left(idx, lo)
            if pos >= len(idx) or idx[pos] >= hi:
                nodes.append(((lo, hi), self._subtree_root(lo, hi)))
                return
            if hi - lo == 1:
                return  # a target leaf, supplied by the verifier
            k = _split(hi - lo)
            walk(lo, lo + k)
            walk(lo + k, hi)

        walk(0, size)
        nodes.sort(key=lambda item: (item[0][1] - item[0][0], item[0][0]))
        return Multiproof(indices=idx, tree_size=size, nodes=tuple(nodes))


def verify_inclusion(leaf: bytes, proof: InclusionProof, root: bytes) -> bool:
    """Check an audit path; malformed input yields False, never an exception."""
    try:
        index, size = proof.leaf_index, proof.tree_size
        if index < 0 or size < 1 or index >= size:
            return False
        if len(leaf) != 32 or len(root) != 32:
            return False
        fn, sn = index, size - 1
        value = leaf
        for node in proof.audit_path:
            if not isinstance(node, bytes) or len(node) != 32:
                return False
            if sn == 0:
                return False
            if fn & 1 or fn == sn:
                value = hash_children(node, value)
                if not fn & 1:
                    while True:
                        fn >>= 1
                        sn >>= 1
                        if fn & 1 or fn == 0:
                            break
            else:
                value = hash_children(value, node)
            fn >>= 1
            sn >>= 1
        return sn == 0 and value == root
    except (TypeError, AttributeError):
        return False


def verify_consistency(old_root: bytes, new_root: bytes, proof: ConsistencyProof) -> bool:
    """Check a consistency proof between two snapshot roots."""
    try:
        first, second = proof.first_size, proof.second_size
        if first < 0 or second < first:
            return False
        if len(old_root) != 32 or len(new_root) != 32:
            return False
        path = list(proof.path)
        if any(not isinstance(h, bytes) or len(h) != 32 for h in path):
            return False
        if first == second:
            return not path and old_root == new_root
        if first == 0:
            return not path  # the empty tree is a prefix of everything
        if first & (first - 1) == 0:
            path = [old_root] + path
        if not path:
            return False
        fn, sn = first - 1, second - 1
        while fn & 1:
            fn >>= 1
            sn >>= 1
        fr = sr = path[0]
        for node in path[1:]:
            if sn == 0:
                return False
            if fn & 1 or fn == sn:
                fr = hash_children(node, fr)
                sr = hash_children(node, sr)
                if not fn & 1:
                    while True:
                        fn >>= 1
                        sn >>= 1
                        if fn & 1 or fn == 0:
                            break
            else:
                sr = hash_children(sr, node)
            fn >>= 1
            sn >>= 1
        return sn == 0 and fr == old_root and sr == new_root
    except (TypeError, AttributeError):
        return False


def verify_multi(leaves: Mapping[int, bytes], proof: Multiproof, root: bytes) -> bool:
    """Check that supplied leaves plus proof nodes reconstruct the root.

    Every proof node must be consumed exactly once; missing, surplus, or
    duplicated nodes fail the check.
    """
    try:
        indices = tuple(proof.indices)
        size = proof.tree_size
        if not indices or size < 1:
            return False
        if list(indices) != sorted(set(indices)):
            return False
        if indices[0] < 0 or indices[-1] >= size:
            return False
        if set(leaves.keys()) != set(indices):
            return False
        nodes: dict[tuple[int, int], bytes] = {}
        for (lo, hi), value in proof.nodes:
            if (lo, hi) in nodes or not isinstance(value, bytes) or len(value) != 32:
                return False
            nodes[(lo, hi)] = value
        used: set[tuple[int, int]] = set()

        def build(lo: int, hi: int) -> bytes:
            pos = bisect_left(indices, lo)
            if pos >= len(indices) or indices[pos] >= hi:
                used.add((lo, hi))
                return nodes[(lo, hi)]
            if hi - lo == 1:
                leaf = leaves[lo]
                if not isinstance(leaf, bytes) or len(leaf) != 32:
                    raise ValueError("bad leaf")
                return leaf
            k = _split(hi - lo)
            return hash_children(build(lo, lo + k), build(lo + k, hi))

        computed = build(0, size)
        if used != set(nodes):
            return False
        return computed == root
    except (KeyError, ValueError, TypeError, AttributeError):
        return False
