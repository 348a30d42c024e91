"""A minimal HDFS-like cluster: one name node, N data nodes, one copy per block."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from . import wire
from .core import (
    DEFAULT_BLOCK_SIZE,
    AckMsg,
    BlockId,
    DataBlock,
    MetadataRecord,
    MigrationKey,
)
from .crypto import KEY_SIZE, Digest, SealedBox, open_box
from .errors import AuthFailure, DuplicateFile, InvalidProof, MalformedMessage, MissingBlock, UnknownFile


@dataclass
class RetransmitState:
    request_id: str
    block_id: BlockId
    attempt: int
    timer_deadline: float
    digest: Digest
    nonce: bytes
    session_id: str = ""
    reply_to: str = ""
    sealed_hash: Optional[SealedBox] = None
    data: bytes = field(default=b"", repr=False)
    timer: Any = None


@dataclass(frozen=True)
class VerifiedAck:
    """Evidence that an acknowledgment for ``request_id`` opened under K_t.

    :meth:`DataNode.delete_block` re-verifies it, so constructing one by hand
    buys an attacker nothing.
    """

    request_id: str
    block_id: BlockId
    ack: AckMsg


@dataclass
class NameNode:
    cloud_id: str
    address: str
    files: dict[str, MetadataRecord] = field(default_factory=dict)
    # user_id -> (salt, verifier); the verifier is derive_key(password, salt)
    accounts: dict[str, tuple[bytes, bytes]] = field(default_factory=dict)
    session_keys: dict[str, MigrationKey] = field(default_factory=dict)
    pending_keys: dict[str, MigrationKey] = field(default_factory=dict)


@dataclass
class DataNode:
    address: str
    blocks: dict[BlockId, DataBlock] = field(default_factory=dict)
    token_cache: dict[str, Any] = field(default_factory=dict)
    pending: dict[str, RetransmitState] = field(default_factory=dict)
    session_keys: dict[str, MigrationKey] = field(default_factory=dict)
    verified: set = field(default_factory=set)
    deletion_log: list[tuple[BlockId, str]] = field(default_factory=list)

    def read_block(self, block_id: BlockId) -> DataBlock:
        try:
            return self.blocks[block_id]
        except KeyError:
            raise MissingBlock(f"{block_id} not on {self.address}") from None

    def store_block(self, block: DataBlock, *, verified: bool) -> None:
        self.blocks[block.id] = block
        if verified:
            self.verified.add(block.id)

    def delete_block(self, block_id: BlockId, proof: VerifiedAck) -> None:
        if block_id not in self.blocks:
            raise MissingBlock(f"{block_id} not on {self.address}")
        if not isinstance(proof, VerifiedAck) or not self._proof_holds(block_id, proof):
            raise InvalidProof(f"deletion of {block_id} refused")
        del self.blocks[block_id]
        self.verified.discard(block_id)
        self.deletion_log.append((block_id, proof.request_id))

    def _proof_holds(self, block_id: BlockId, proof: VerifiedAck) -> bool:
        state = self.pending.get(proof.request_id)
        if state is None or state.block_id != block_id or proof.block_id != block_id:
            return False
        if proof.ack.request_id != proof.request_id:
            return False
        key = self.session_keys.get(proof.ack.session_id)
        if key is None:
            return False
        try:
            receipt = open_box(key, proof.ack.sealed_receipt, wire.ack_aad(proof.ack.session_id, proof.request_id))
            digest, bid, rid = wire.decode_receipt(receipt)
        except (AuthFailure, MalformedMessage):
            return False
        return digest == state.digest.value and bid == block_id and rid == proof.request_id


def plan_blocks(size: int, block_size: int, n_nodes: int) -> list[tuple[int, int, int, int]]:
    """``(index, start, end, node)`` for each block; round-robin placement.

    An empty file still gets one (empty) block so it has a location.
    """
    if block_size <= 0 or n_nodes <= 0:
        raise ValueError("block_size and n_nodes must be positive")
    count = max(1, math.ceil(size / block_size))
    return [(i, i * block_size, min(size, (i + 1) * block_size), i % n_nodes) for i in range(count)]


class Cluster:
    def __init__(
        self,
        cloud_id: str,
        n_datanodes: int = 3,
        *,
        block_size: int = DEFAULT_BLOCK_SIZE,
        rng: Optional[random.Random] = None,
    ):
        if n_datanodes < 1:
            raise ValueError("a cluster needs at least one data node")
        self.cloud_id = cloud_id
        self.block_size = block_size
        self.namenode = NameNode(cloud_id, f"{cloud_id}/nn")
        self.datanodes = [DataNode(f"{cloud_id}/dn{i}") for i in range(n_datanodes)]
        rng = rng or random.Random(0)
        # stands in for HDFS's own intra-cluster security layer
        self.internal_key = rng.randbytes(KEY_SIZE)

    def datanode(self, address: str) -> DataNode:
        for dn in self.datanodes:
            if dn.address == address:
                return dn
        raise KeyError(address)

    def put_file(self, file_id: str, payload: bytes, owner_encrypted: bool = True) -> MetadataRecord:
        if file_id in self.namenode.files:
            raise DuplicateFile(file_id)
        ids, addrs = [], []
        for index, start, end, node in plan_blocks(len(payload), self.block_size, len(self.datanodes)):
            bid = BlockId(file_id, index)
            self.datanodes[node].store_block(
                DataBlock(bid, bytes(payload[start:end]), owner_encrypted), verified=True
            )
            ids.append(bid)
            addrs.append(self.datanodes[node].address)
        meta = MetadataRecord(file_id, tuple(ids), tuple(addrs), len(payload), owner_encrypted)
        self.namenode.files[file_id] = meta
        return meta

    def metadata(self, file_id: str) -> MetadataRecord:
        try:
            return self.namenode.files[file_id]
        except KeyError:
            raise UnknownFile(file_id) from None

    def locate(self, block_id: BlockId) -> Optional[DataNode]:
        for dn in self.datanodes:
            if block_id in dn.blocks:
                return dn
        return None

    def read_file(self, file_id: str) -> bytes:
        meta = self.metadata(file_id)
        return b"".join(self.datanode(a).read_block(b).payload for b, a in zip(meta.block_ids, meta.datanode_addresses))

    def snapshot(self) -> dict:
        """Canonically ordered view of the cluster, for reports and golden tests."""
        nn = self.namenode
        return {
            "cloud_id": self.cloud_id,
            "block_size": self.block_size,
            "namenode": {
                "files": {
                    fid: {
                        "file_size": m.file_size,
                        "blocks": [[str(b), a] for b, a in zip(m.block_ids, m.datanode_addresses)],
                    }
                    for fid, m in sorted(nn.files.items())
                },
                "accounts": sorted(nn.accounts),
                "sessions": sorted(nn.session_keys),
            },
            "datanodes": {
                dn.address: {
                    "blocks": {
                        str(b): {"size": len(blk.payload), "verified": b in dn.verified}
                        for b, blk in sorted(dn.blocks.items())
                    },
                    "deleted": [[str(b), rid] for b, rid in dn.deletion_log],
                }
                for dn in self.datanodes
            },
        }

    def dump(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, indent=2) + "\n"
