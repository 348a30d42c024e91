from __future__ import annotations

import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from intercloud import wire
from intercloud.core import MIB, AckMsg, BlockId, DataBlock, MigrationKey
from intercloud.crypto import hash_digest, seal
from intercloud.dfs import Cluster, DataNode, RetransmitState, VerifiedAck, plan_blocks
from intercloud.errors import DuplicateFile, InvalidProof, MissingBlock


def test_100mib_file_gives_two_blocks_on_distinct_nodes():
    plan = plan_blocks(100 * MIB, 64 * MIB, 3)
    assert [(s, e) for _, s, e, _ in plan] == [(0, 64 * MIB), (64 * MIB, 100 * MIB)]
    assert len({n for *_, n in plan}) == 2


def test_empty_payload_gives_one_empty_block():
    c = Cluster("A", 3, block_size=64)
    meta = c.put_file("f", b"")
    assert len(meta.block_ids) == 1
    assert c.datanode(meta.datanode_addresses[0]).read_block(meta.block_ids[0]).payload == b""


def test_16gib_file_placement_matches_independent_round_robin():
    plan = plan_blocks(16 * 1024 * MIB, 64 * MIB, 3)
    assert len(plan) == 256
    expected = [i % 3 for i in range(256)]
    assert [n for *_, n in plan] == expected
    assert Counter(expected) == {0: 86, 1: 85, 2: 85}


@settings(max_examples=100, deadline=None)
@given(payload=st.binary(max_size=2000), bs=st.integers(1, 300), nodes=st.integers(1, 5))
def test_put_then_read_roundtrips(payload, bs, nodes):
    c = Cluster("A", nodes, block_size=bs)
    meta = c.put_file("f", payload)
    assert c.read_file("f") == payload
    assert meta.file_size == len(payload)
    assert all(len(c.datanode(a).read_block(b).payload) <= bs for b, a in zip(meta.block_ids, meta.datanode_addresses))


def test_duplicate_file_rejected():
    c = Cluster("A", block_size=8)
    c.put_file("f", b"abc")
    with pytest.raises(DuplicateFile):
        c.put_file("f", b"abc")


def test_read_absent_block():
    with pytest.raises(MissingBlock):
        DataNode("dn").read_block(BlockId("f", 0))


def _node_with_pending(rng=random.Random(0)):
    """A data node holding one block with a pending transfer and a matching ack."""
    key = MigrationKey.generate(rng)
    dn = DataNode("A/dn0")
    bid = BlockId("f", 0)
    dn.store_block(DataBlock(bid, b"payload"), verified=True)
    dn.session_keys["s"] = key
    nonce = rng.randbytes(16)
    digest = hash_digest(b"payload", nonce)
    dn.pending["r1"] = RetransmitState("r1", bid, 1, 1.0, digest, nonce, session_id="s")
    receipt = wire.encode_receipt(digest.value, bid, "r1")
    ack = AckMsg("s", "r1", seal(key, receipt, wire.ack_aad("s", "r1"), rng))
    return dn, bid, ack


def test_verified_ack_deletes_block_and_double_delete_fails():
    dn, bid, ack = _node_with_pending()
    dn.delete_block(bid, VerifiedAck("r1", bid, ack))
    with pytest.raises(MissingBlock):
        dn.read_block(bid)
    with pytest.raises(MissingBlock):
        dn.delete_block(bid, VerifiedAck("r1", bid, ack))


def test_forged_proofs_are_refused_and_block_retained():
    dn, bid, ack = _node_with_pending()
    forged = [
        VerifiedAck("r-wrong", bid, ack),
        VerifiedAck("r1", BlockId("f", 1), ack),
        VerifiedAck("r1", bid, AckMsg("s", "r1", seal(bytes(32), b"x", wire.ack_aad("s", "r1"), random.Random(1)))),
        "not evidence",
    ]
    for proof in forged:
        with pytest.raises(InvalidProof):
            dn.delete_block(bid, proof)
    assert dn.read_block(bid).payload == b"payload"


def test_snapshot_is_deterministic():
    a, b = Cluster("A", 2, block_size=4, rng=random.Random(0)), Cluster("A", 2, block_size=4, rng=random.Random(0))
    for c in (a, b):
        c.put_file("f", b"0123456789")
    assert a.dump() == b.dump()
