"""Domain values shared by the cluster, protocol and adversary modules.

Everything here is an immutable value except :class:`MigrationLedger`, which
is owned by a single simulation and only mutated from its event loop.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Mapping

from .crypto import KEY_SIZE, Digest, SealedBox
from .errors import SameCloud, UnknownCloud, UnknownUser

MIB = 2**20
DEFAULT_BLOCK_SIZE = 64 * MIB
NONCE_SIZE = 16


def new_id(rng: random.Random, prefix: str = "") -> str:
    return prefix + rng.randbytes(8).hex()


@dataclass(frozen=True)
class MigrationKey:
    key_id: str
    material: bytes = field(repr=False)

    def __post_init__(self):
        if len(self.material) != KEY_SIZE:
            raise ValueError(f"migration key must be {KEY_SIZE} bytes")

    @classmethod
    def generate(cls, rng: random.Random) -> "MigrationKey":
        return cls(key_id=new_id(rng, "k-"), material=rng.randbytes(KEY_SIZE))


@dataclass(frozen=True, order=True)
class BlockId:
    file_id: str
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("block index must be non-negative")

    def __str__(self) -> str:
        return f"{self.file_id}#{self.index}"


@dataclass(frozen=True)
class DataBlock:
    id: BlockId
    payload: bytes = field(repr=False)
    owner_encrypted: bool = True


@dataclass(frozen=True)
class MetadataRecord:
    file_id: str
    block_ids: tuple[BlockId, ...]
    datanode_addresses: tuple[str, ...]
    file_size: int
    owner_encrypted: bool = True

    def __post_init__(self):
        if len(self.block_ids) != len(self.datanode_addresses):
            raise ValueError("every block needs exactly one source data node address")

    def location(self, block_id: BlockId) -> str:
        return self.datanode_addresses[self.block_ids.index(block_id)]


@dataclass(frozen=True)
class BlockAccessToken:
    block_id: BlockId
    target_datanode: str
    request_id: str
    expiry: float


@dataclass(frozen=True)
class DataMsg:
    session_id: str
    request_id: str
    block_id: BlockId
    data: bytes = field(repr=False)
    nonce: bytes
    sealed_hash: SealedBox
    attempt: int = 1


@dataclass(frozen=True)
class AckMsg:
    session_id: str
    request_id: str
    sealed_receipt: SealedBox


@dataclass(frozen=True)
class Credentials:
    user_id: str
    password: bytes = field(repr=False)
    salt: bytes


@dataclass(frozen=True)
class AdminAlert:
    cloud_id: str
    kind: str  # one of the *_ALERT kinds below
    request_id: str
    sim_time: float


SOURCE_MAX_RETRANSMIT = "source-max-retransmit"
TARGET_DUPLICATE_FLOOD = "target-duplicate-flood"
# the target gave up on a block whose requests never got an answer
TARGET_REQUEST_ABANDONED = "target-request-abandoned"

PENDING = "pending"
SENT = "sent"
ACKED_DELETED = "acked-deleted"
FAILED_ALERTED = "failed-alerted"
TERMINAL = frozenset({ACKED_DELETED, FAILED_ALERTED})


@dataclass
class MigrationLedger:
    """Per-block progress of one file migration plus protocol counters."""

    session_id: str
    file_id: str = ""
    status: dict[BlockId, str] = field(default_factory=dict)
    transmissions: Counter = field(default_factory=Counter)
    duplicates: Counter = field(default_factory=Counter)
    alerts: list[AdminAlert] = field(default_factory=list)
    security_events: list[tuple[float, str, str]] = field(default_factory=list)
    # protocol step number -> label of what protected it
    protection: dict[int, str] = field(default_factory=dict)
    aborted: bool = False
    started: bool = False

    def init_blocks(self, file_id: str, block_ids) -> None:
        self.file_id = file_id
        self.started = True
        for b in block_ids:
            self.status[b] = PENDING

    def mark(self, block_id: BlockId, state: str) -> None:
        current = self.status.get(block_id)
        if current in TERMINAL:
            return
        self.status[block_id] = state

    @property
    def complete(self) -> bool:
        return self.started and not self.aborted and all(
            s == ACKED_DELETED for s in self.status.values()
        )

    @property
    def settled(self) -> bool:
        return all(s in TERMINAL for s in self.status.values())

    def count(self, state: str) -> int:
        return sum(1 for s in self.status.values() if s == state)


@dataclass
class MigrationSession:
    session_id: str
    user_id: str
    source: str
    target: str
    key: MigrationKey = field(repr=False)
    ledger: MigrationLedger = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.ledger is None:
            self.ledger = MigrationLedger(session_id=self.session_id)


def new_migration_session(
    user: str,
    source: str,
    target: str,
    *,
    clouds: Mapping[str, Collection[str]],
    rng: random.Random,
) -> MigrationSession:
    """Create a session with a fresh migration key.

    ``clouds`` maps each cloud id to the user ids registered there.
    """
    for cloud in (source, target):
        if cloud not in clouds:
            raise UnknownCloud(cloud)
    if source == target:
        raise SameCloud(f"source and target are both {source!r}")
    for cloud in (source, target):
        if user not in clouds[cloud]:
            raise UnknownUser(f"{user!r} has no account at {cloud!r}")
    return MigrationSession(
        session_id=new_id(rng, "s-"),
        user_id=user,
        source=source,
        target=target,
        key=MigrationKey.generate(rng),
    )
