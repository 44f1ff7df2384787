import hashlib
import random

import pytest

from interopsim.merkle import (
    ABSENCE,
    EMPTY_ROOT,
    MEMBERSHIP,
    MerkleMap,
    MerkleProof,
    Neighbor,
    decode_proof,
    encode_proof,
    verify_proof,
)
from interopsim.values import encode_value


def reference_root(items):
    """Independent tree rebuild: sorted keys, duplicate-last padding."""
    keys = sorted(items)
    if not keys:
        return hashlib.sha256(b"").digest()
    level = [
        hashlib.sha256(k + encode_value(items[k])).digest() for k in keys
    ]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level), 2):
            l = level[i]
            r = level[i + 1] if i + 1 < len(level) else level[i]
            nxt.append(hashlib.sha256(l + r).digest())
        level = nxt
    return level[0]


def reference_neighbors(items, key):
    """Bracketing pair for an absent key by direct sorted scan."""
    keys = sorted(items)
    left = max((k for k in keys if k < key), default=None)
    right = min((k for k in keys if k > key), default=None)
    return left, right


@pytest.mark.parametrize("n", [0, 1, 2, 3, 4, 5, 7, 8, 13])
def test_root_matches_reference(n):
    items = {f"k{i:03d}".encode(): i for i in range(n)}
    assert MerkleMap(items).root == reference_root(items)


def test_empty_tree_root():
    assert MerkleMap({}).root == EMPTY_ROOT
    assert EMPTY_ROOT == hashlib.sha256(b"").digest()


def test_membership_proof_verifies():
    items = {b"a": 1, b"b": "x", b"c": None, b"d": b"zz"}
    tree = MerkleMap(items)
    for key in items:
        proof = tree.prove(key)
        assert proof.kind == MEMBERSHIP
        assert verify_proof(tree.root, proof)


def test_membership_tamper_fails():
    tree = MerkleMap({b"a": 1, b"b": 2, b"c": 3})
    proof = tree.prove(b"b")
    bad = MerkleProof(
        kind=proof.kind,
        leaf_key=proof.leaf_key,
        leaf_value=99,  # flip the value
        path=proof.path,
        root_height=proof.root_height,
    )
    assert not verify_proof(tree.root, bad)


def test_absence_proof_with_bracketing_neighbors():
    items = {b"a": 1, b"c": 2, b"e": 3}
    tree = MerkleMap(items)
    proof = tree.prove(b"b")
    assert proof.kind == ABSENCE
    lref, rref = reference_neighbors(items, b"b")
    assert proof.left.key == lref and proof.right.key == rref
    assert verify_proof(tree.root, proof)


def test_absence_outside_range():
    items = {b"b": 1, b"d": 2}
    tree = MerkleMap(items)
    low = tree.prove(b"a")
    assert low.left is None and low.right.key == b"b"
    assert verify_proof(tree.root, low)
    high = tree.prove(b"z")
    assert high.right is None and high.left.key == b"d"
    assert verify_proof(tree.root, high)


def test_absence_against_empty_tree():
    proof = MerkleProof(kind=ABSENCE, leaf_key=b"anything")
    assert verify_proof(EMPTY_ROOT, proof)
    assert not verify_proof(b"\x01" * 32, proof)


def test_proof_against_wrong_root_fails():
    t1 = MerkleMap({b"a": 1, b"b": 2})
    t2 = MerkleMap({b"a": 1, b"b": 3})
    assert not verify_proof(t2.root, t1.prove(b"a"))


def test_absence_non_adjacent_neighbors_fail():
    # neighbors that both verify but are not adjacent must be rejected
    tree = MerkleMap({b"a": 1, b"c": 2, b"e": 3, b"g": 4})
    pa = tree.prove(b"a")
    pe = tree.prove(b"e")
    forged = MerkleProof(
        kind=ABSENCE,
        leaf_key=b"b",
        left=Neighbor(b"a", 1, pa.path),
        right=Neighbor(b"e", 3, pe.path),
    )
    assert not verify_proof(tree.root, forged)


def test_absence_fake_boundary_fails():
    # claiming an interior leaf is the rightmost must fail
    tree = MerkleMap({b"a": 1, b"c": 2, b"e": 3})
    pc = tree.prove(b"c")
    forged = MerkleProof(
        kind=ABSENCE,
        leaf_key=b"z",
        left=Neighbor(b"c", 2, pc.path),
    )
    assert not verify_proof(tree.root, forged)


def test_proof_wire_roundtrip():
    tree = MerkleMap({b"a": 1, b"c": "v", b"e": None})
    for key in (b"a", b"b", b"\x00", b"zzz"):
        proof = tree.prove(key, root_height=7)
        back, end = decode_proof(encode_proof(proof))
        assert back == proof
        assert verify_proof(tree.root, back) == verify_proof(tree.root, proof)


def test_fuzz_proofs_and_mutations():
    rng = random.Random(1234)
    for round_ in range(60):
        n = rng.randint(1, 40)
        items = {}
        while len(items) < n:
            k = bytes(rng.randrange(256) for _ in range(rng.randint(1, 12)))
            items[k] = rng.choice([rng.randrange(-5000, 5000), "s" * rng.randint(0, 3), None, True])
        tree = MerkleMap(items)
        assert tree.root == reference_root(items)
        # membership
        key = rng.choice(sorted(items))
        proof = tree.prove(key)
        assert verify_proof(tree.root, proof)
        # absence of a fresh key
        while True:
            absent = bytes(rng.randrange(256) for _ in range(rng.randint(1, 12)))
            if absent not in items:
                break
        aproof = tree.prove(absent)
        assert verify_proof(tree.root, aproof)
        lref, rref = reference_neighbors(items, absent)
        assert (aproof.left.key if aproof.left else None) == lref
        assert (aproof.right.key if aproof.right else None) == rref
        # single-byte mutation of a committed sibling digest must fail
        if proof.path:
            i = rng.randrange(len(proof.path))
            sib, d = proof.path[i]
            j = rng.randrange(32)
            bad_sib = sib[:j] + bytes([sib[j] ^ 0x5A]) + sib[j + 1 :]
            bad_path = proof.path[:i] + ((bad_sib, d),) + proof.path[i + 1 :]
            bad = MerkleProof(MEMBERSHIP, proof.leaf_key, proof.leaf_value, bad_path)
            assert not verify_proof(tree.root, bad)
        # mutated membership key must fail
        k = proof.leaf_key
        j = rng.randrange(len(k))
        bad_key = k[:j] + bytes([k[j] ^ 0x01]) + k[j + 1 :]
        bad = MerkleProof(MEMBERSHIP, bad_key, proof.leaf_value, proof.path)
        assert not verify_proof(tree.root, bad)
