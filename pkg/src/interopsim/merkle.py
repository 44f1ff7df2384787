"""Authenticated key-value map: binary Merkle tree over bytewise-sorted keys.

Leaves are digest(key || canonical(value)); odd levels pad by duplicating
the last node.  Membership proofs carry the sibling path; absence proofs
carry the adjacent leaf pair bracketing the missing key (or one neighbor
plus an edge check when the key falls outside the key range).

Leaf indices are recoverable from path directions ('L' sibling-on-left
means the node was a right child), which lets the verifier check that two
neighbor leaves are adjacent without trusting a leaf count.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Optional

from .errors import EncodingError
from .values import Value, digest, encode_value, decode_value, lp, read_lp

EMPTY_ROOT = digest(b"")

MEMBERSHIP = "membership"
ABSENCE = "absence"

# path direction: "L" = sibling hash goes on the left, "R" = on the right
PathStep = tuple[bytes, str]


def leaf_digest(key: bytes, value: Value) -> bytes:
    return digest(key + encode_value(value))


def fold_path(leaf: bytes, path: list[PathStep]) -> bytes:
    h = leaf
    for sibling, direction in path:
        if direction == "L":
            h = digest(sibling + h)
        elif direction == "R":
            h = digest(h + sibling)
        else:
            raise EncodingError(f"bad path direction {direction!r}")
    return h


def path_index(path: list[PathStep]) -> int:
    """Leaf index implied by the directions (bit i set = right child at level i)."""
    idx = 0
    for i, (_, direction) in enumerate(path):
        if direction == "L":
            idx |= 1 << i
    return idx


def path_is_rightmost(leaf: bytes, path: list[PathStep]) -> bool:
    """True iff every right-hand sibling is the node's own duplicate."""
    h = leaf
    for sibling, direction in path:
        if direction == "R":
            if sibling != h:
                return False
            h = digest(h + sibling)
        else:
            h = digest(sibling + h)
    return True


@dataclass(frozen=True)
class Neighbor:
    key: bytes
    value: Value
    path: tuple[PathStep, ...]


@dataclass(frozen=True)
class MerkleProof:
    kind: str
    leaf_key: bytes
    leaf_value: Value = None
    path: tuple[PathStep, ...] = ()
    root_height: int = 0
    left: Optional[Neighbor] = None
    right: Optional[Neighbor] = None


class MerkleMap:
    """Tree snapshot over a fixed set of (key, value) items."""

    def __init__(self, items: dict[bytes, Value]):
        self.keys = sorted(items.keys())
        self.values = {k: items[k] for k in self.keys}
        self.levels: list[list[bytes]] = []
        if self.keys:
            level = [leaf_digest(k, items[k]) for k in self.keys]
            self.levels.append(level)
            while len(level) > 1:
                nxt = []
                for i in range(0, len(level), 2):
                    left = level[i]
                    right = level[i + 1] if i + 1 < len(level) else level[i]
                    nxt.append(digest(left + right))
                self.levels.append(nxt)
                level = nxt

    @property
    def root(self) -> bytes:
        if not self.levels:
            return EMPTY_ROOT
        return self.levels[-1][0]

    def _path_for_index(self, idx: int) -> tuple[PathStep, ...]:
        path = []
        for level in self.levels[:-1]:
            if idx % 2 == 0:
                sibling = level[idx + 1] if idx + 1 < len(level) else level[idx]
                path.append((sibling, "R"))
            else:
                path.append((level[idx - 1], "L"))
            idx //= 2
        return tuple(path)

    def _neighbor(self, idx: int) -> Neighbor:
        key = self.keys[idx]
        return Neighbor(key=key, value=self.values[key], path=self._path_for_index(idx))

    def prove(self, key: bytes, root_height: int = 0) -> MerkleProof:
        if key in self.values:
            idx = self.keys.index(key)
            return MerkleProof(
                kind=MEMBERSHIP,
                leaf_key=key,
                leaf_value=self.values[key],
                path=self._path_for_index(idx),
                root_height=root_height,
            )
        # absence: bracket the missing key with its sorted neighbors
        pos = bisect.bisect_left(self.keys, key)
        left = self._neighbor(pos - 1) if pos > 0 else None
        right = self._neighbor(pos) if pos < len(self.keys) else None
        return MerkleProof(
            kind=ABSENCE,
            leaf_key=key,
            path=(),
            root_height=root_height,
            left=left,
            right=right,
        )


def _verify_neighbor(root: bytes, n: Neighbor) -> bool:
    try:
        leaf = leaf_digest(n.key, n.value)
    except EncodingError:
        return False
    return fold_path(leaf, list(n.path)) == root


def verify_proof(state_root: bytes, proof: MerkleProof) -> bool:
    """True iff the proof is consistent with state_root; false on any defect."""
    try:
        if proof.kind == MEMBERSHIP:
            leaf = leaf_digest(proof.leaf_key, proof.leaf_value)
            return fold_path(leaf, list(proof.path)) == state_root
        if proof.kind != ABSENCE:
            return False
        left, right = proof.left, proof.right
        if left is None and right is None:
            return state_root == EMPTY_ROOT
        if left is not None:
            if not (left.key < proof.leaf_key and _verify_neighbor(state_root, left)):
                return False
        if right is not None:
            if not (proof.leaf_key < right.key and _verify_neighbor(state_root, right)):
                return False
        if left is not None and right is not None:
            return path_index(list(left.path)) + 1 == path_index(list(right.path))
        if right is not None:
            # key precedes every leaf: neighbor must be the leftmost leaf
            return path_index(list(right.path)) == 0
        # key follows every leaf: neighbor must be the rightmost leaf
        leaf = leaf_digest(left.key, left.value)
        return path_is_rightmost(leaf, list(left.path))
    except Exception:
        return False


def root_of_digests(leaves: list[bytes]) -> bytes:
    """Merkle root over an ordered list of 32-byte digests (txn roots)."""
    if not leaves:
        return EMPTY_ROOT
    level = list(leaves)
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            left = level[i]
            right = level[i + 1] if i + 1 < len(level) else level[i]
            nxt.append(digest(left + right))
        level = nxt
    return level[0]


# --- wire form (rides in read-response payloads) ---


def _encode_path(path: tuple[PathStep, ...]) -> bytes:
    out = [len(path).to_bytes(2, "big")]
    for sibling, direction in path:
        out.append(sibling)
        out.append(b"\x01" if direction == "L" else b"\x00")
    return b"".join(out)


def _decode_path(data: bytes, offset: int) -> tuple[tuple[PathStep, ...], int]:
    if offset + 2 > len(data):
        raise EncodingError("truncated path")
    n = int.from_bytes(data[offset : offset + 2], "big")
    offset += 2
    path = []
    for _ in range(n):
        if offset + 33 > len(data):
            raise EncodingError("truncated path step")
        sibling = data[offset : offset + 32]
        direction = "L" if data[offset + 32] else "R"
        path.append((sibling, direction))
        offset += 33
    return tuple(path), offset


def _encode_neighbor(n: Optional[Neighbor]) -> bytes:
    if n is None:
        return b"\x00"
    return b"\x01" + lp(n.key) + encode_value(n.value) + _encode_path(n.path)


def _decode_neighbor(data: bytes, offset: int) -> tuple[Optional[Neighbor], int]:
    if offset >= len(data):
        raise EncodingError("truncated neighbor")
    flag = data[offset]
    offset += 1
    if flag == 0:
        return None, offset
    key, offset = read_lp(data, offset)
    value, offset = decode_value(data, offset)
    path, offset = _decode_path(data, offset)
    return Neighbor(key=key, value=value, path=path), offset


def encode_proof(p: MerkleProof) -> bytes:
    kind = b"\x01" if p.kind == MEMBERSHIP else b"\x00"
    return b"".join(
        [
            kind,
            lp(p.leaf_key),
            encode_value(p.leaf_value),
            _encode_path(p.path),
            p.root_height.to_bytes(8, "big"),
            _encode_neighbor(p.left),
            _encode_neighbor(p.right),
        ]
    )


def decode_proof(data: bytes, offset: int = 0) -> tuple[MerkleProof, int]:
    if offset >= len(data):
        raise EncodingError("truncated proof")
    kind = MEMBERSHIP if data[offset] else ABSENCE
    offset += 1
    leaf_key, offset = read_lp(data, offset)
    leaf_value, offset = decode_value(data, offset)
    path, offset = _decode_path(data, offset)
    if offset + 8 > len(data):
        raise EncodingError("truncated proof height")
    root_height = int.from_bytes(data[offset : offset + 8], "big")
    offset += 8
    left, offset = _decode_neighbor(data, offset)
    right, offset = _decode_neighbor(data, offset)
    return (
        MerkleProof(
            kind=kind,
            leaf_key=leaf_key,
            leaf_value=leaf_value,
            path=path,
            root_height=root_height,
            left=left,
            right=right,
        ),
        offset,
    )
