"""Key setup and block migration as five event-driven state machines.

The actors are the user, the source and target name nodes, and the source and
target data nodes.  They talk only through :class:`~intercloud.netsim.Network`
by exchanging encoded frames, so an adversary hook on a link sees exactly the
bytes a real wire would carry.  :class:`MigrationEngine` builds the two
clusters, the actors and the topology, and checks the custody invariant after
every event.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from . import wire
from .core import (
    ACKED_DELETED,
    DEFAULT_BLOCK_SIZE,
    FAILED_ALERTED,
    NONCE_SIZE,
    SENT,
    SOURCE_MAX_RETRANSMIT,
    TARGET_DUPLICATE_FLOOD,
    TARGET_REQUEST_ABANDONED,
    AckMsg,
    AdminAlert,
    BlockAccessToken,
    BlockId,
    Credentials,
    DataBlock,
    DataMsg,
    MetadataRecord,
    MigrationKey,
    MigrationLedger,
    new_id,
    new_migration_session,
)
from .crypto import DEFAULT_KDF_COST, SealedBox, derive_key, hash_digest, open_box, seal
from .dfs import Cluster, DataNode, NameNode, RetransmitState, VerifiedAck
from .errors import (
    AuthFailure,
    InvalidProof,
    MalformedMessage,
    MigrationError,
    MissingBlock,
    UnknownCloud,
    UnknownSession,
)
from .netsim import Envelope, LinkModel, Network, Trace

# which key protects each migration step on the wire; "internal" is the
# cluster's own security layer
PROTECTION_K_T = "K_t"
PROTECTION_INTERNAL = "internal"


@dataclass(frozen=True)
class ProtocolConfig:
    max_ret: int = 5
    retransmit_timeout: Optional[float] = None  # None: derived from the data link
    parallel_streams: int = 1
    token_lifetime: Optional[float] = None  # None: 10x retransmit_timeout
    request_retry: Optional[float] = None  # None: retransmit_timeout
    kdf_cost: int = DEFAULT_KDF_COST

    def __post_init__(self):
        if self.max_ret < 1:
            raise ValueError("max_ret must be at least 1")
        if self.parallel_streams < 1:
            raise ValueError("parallel_streams must be at least 1")
        for name in ("retransmit_timeout", "token_lifetime", "request_retry"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    def resolved(self, link: LinkModel, block_size: int) -> "ProtocolConfig":
        timeout = self.retransmit_timeout
        if timeout is None:
            timeout = 2 * (2 * link.latency + link.transmission_time(block_size))
        return ProtocolConfig(
            max_ret=self.max_ret,
            retransmit_timeout=timeout,
            parallel_streams=self.parallel_streams,
            token_lifetime=self.token_lifetime if self.token_lifetime is not None else 10 * timeout,
            request_retry=self.request_retry if self.request_retry is not None else timeout,
            kdf_cost=self.kdf_cost,
        )


Message = Any


class Actor:
    def __init__(self, engine: "MigrationEngine", address: str, cloud_id: str):
        self.engine = engine
        self.address = address
        self.cloud_id = cloud_id

    @property
    def now(self) -> float:
        return self.engine.net.now

    def send(self, dst: str, msg: Message, *, size: Optional[int] = None) -> None:
        self.engine.net.send(Envelope(self.address, dst, wire.encode(msg), size=size))

    def emit(self, event: str, request_id: str = "", **detail) -> None:
        self.engine.trace.emit(self.now, self.address, event, request_id, **detail)

    def security_event(self, session_id: str, kind: str, request_id: str = "", **detail) -> None:
        self.emit(kind, request_id, **detail)
        self.engine.record_security_event(session_id, self.now, self.address, kind)

    def on_envelope(self, env: Envelope) -> None:
        try:
            msg = wire.decode(env.payload)
        except MalformedMessage:
            self.security_event("", "malformed-message", src=env.src)
            return
        handler = getattr(self, "on_" + type(msg).__name__, None)
        if handler is None:
            self.security_event(getattr(msg, "session_id", ""), "unexpected-message", kind=env.kind, src=env.src)
            return
        handler(msg, env)


# ---------------------------------------------------------------------------
# user


@dataclass
class _SetupState:
    key: MigrationKey
    clouds: dict[str, str]  # cloud_id -> name node address
    replies: dict[str, bool] = field(default_factory=dict)
    outcome: str = "pending"  # pending | committed | aborted


class UserAgent(Actor):
    def __init__(self, engine, user_id: str):
        super().__init__(engine, f"user/{user_id}", "user")
        self.user_id = user_id
        self.credentials: dict[str, Credentials] = {}
        self.setups: dict[str, _SetupState] = {}

    def begin_key_setup(self, session_id: str, key: MigrationKey, namenodes: dict[str, str]) -> None:
        """Deliver K_t to each cloud, wrapped under that cloud's password key."""
        st = _SetupState(key, dict(namenodes))
        self.setups[session_id] = st
        rng = self.engine.rng
        for cloud_id, nn_addr in namenodes.items():
            cred = self.credentials[cloud_id]
            kek = derive_key(cred.password, cred.salt, cost=self.engine.config.kdf_cost)
            wrapped = seal(kek, key.material, wire.key_wrap_aad(session_id, cloud_id, self.user_id), rng)
            self.send(nn_addr, wire.KeyDelivery(self.user_id, session_id, cloud_id, wrapped))
            self.emit("key-delivered", cloud=cloud_id)

    def on_KeySetupReply(self, msg: wire.KeySetupReply, env: Envelope) -> None:
        st = self.setups.get(msg.session_id)
        if st is None or st.outcome != "pending" or msg.cloud_id not in st.clouds:
            return
        ok = msg.ok
        if ok:
            try:
                box = SealedBox.from_bytes(msg.proof)
                ok = open_box(st.key, box, wire.setup_reply_aad(msg.session_id, msg.cloud_id)) == b"ok"
            except (AuthFailure, MalformedMessage):
                ok = False
        st.replies[msg.cloud_id] = ok
        if not ok:
            self._finish(msg.session_id, st, commit=False)
        elif len(st.replies) == len(st.clouds) and all(st.replies.values()):
            self._finish(msg.session_id, st, commit=True)

    def _finish(self, session_id: str, st: _SetupState, *, commit: bool) -> None:
        st.outcome = "committed" if commit else "aborted"
        rng = self.engine.rng
        for cloud_id, nn_addr in st.clouds.items():
            if commit:
                proof = seal(st.key, b"commit", wire.commit_aad(session_id), rng)
                self.send(nn_addr, wire.KeyCommit(session_id, proof))
            else:
                proof = seal(st.key, b"abort", wire.abort_aad(session_id), rng)
                self.send(nn_addr, wire.KeyAbort(session_id, proof))
        self.emit("key-setup-" + st.outcome)

    def trigger(self, session_id: str, file_id: str, source_nn: str) -> None:
        st = self.setups[session_id]
        sealed = seal(st.key, file_id.encode(), wire.trigger_aad(session_id), self.engine.rng)
        self.send(source_nn, wire.MigrateRequest(session_id, sealed))
        self.emit("migration-requested", file=file_id)


# ---------------------------------------------------------------------------
# name nodes


class NameNodeActor(Actor):
    """Key-setup behaviour common to both name nodes."""

    def __init__(self, engine, cluster: Cluster):
        super().__init__(engine, cluster.namenode.address, cluster.cloud_id)
        self.cluster = cluster
        self.state: NameNode = cluster.namenode

    def on_KeyDelivery(self, msg: wire.KeyDelivery, env: Envelope) -> None:
        account = self.state.accounts.get(msg.user_id)
        reply_ok = False
        if account is not None and msg.cloud_id == self.cloud_id:
            _, verifier = account
            try:
                material = open_box(verifier, msg.wrapped_key, wire.key_wrap_aad(msg.session_id, self.cloud_id, msg.user_id))
                key = MigrationKey(new_id(random.Random(material), "k-"), material)
                self.state.pending_keys[msg.session_id] = key
                reply_ok = True
            except (AuthFailure, ValueError):
                pass
        if reply_ok:
            proof = seal(key, b"ok", wire.setup_reply_aad(msg.session_id, self.cloud_id), self.engine.rng).to_bytes()
            self.emit("key-accepted", user=msg.user_id)
        else:
            proof = b""
            self.security_event(msg.session_id, "key-auth-failure", user=msg.user_id)
        self.send(env.src, wire.KeySetupReply(msg.session_id, self.cloud_id, reply_ok, proof))

    def on_KeyCommit(self, msg: wire.KeyCommit, env: Envelope) -> None:
        key = self.state.pending_keys.get(msg.session_id)
        if key is None or not self._opens(key, msg.proof, wire.commit_aad(msg.session_id)):
            self.security_event(msg.session_id, "bad-key-commit")
            return
        self.state.session_keys[msg.session_id] = self.state.pending_keys.pop(msg.session_id)
        self.emit("key-committed")

    def on_KeyAbort(self, msg: wire.KeyAbort, env: Envelope) -> None:
        key = self.state.pending_keys.get(msg.session_id)
        if key is None or not self._opens(key, msg.proof, wire.abort_aad(msg.session_id)):
            return
        del self.state.pending_keys[msg.session_id]
        self.emit("key-discarded")

    @staticmethod
    def _opens(key, box: SealedBox, aad: bytes) -> bool:
        try:
            open_box(key, box, aad)
            return True
        except AuthFailure:
            return False

    def share_key(self, session_id: str, key: MigrationKey) -> None:
        """Hand K_t to every local data node under the cluster's internal key."""
        aad = wire.key_share_aad(session_id, self.cloud_id)
        for dn in self.cluster.datanodes:
            sealed = seal(self.cluster.internal_key, key.material, aad, self.engine.rng)
            self.send(dn.address, wire.KeyShare(session_id, sealed))


class SourceNameNodeActor(NameNodeActor):
    def __init__(self, engine, cluster: Cluster, target_nn: str):
        super().__init__(engine, cluster)
        self.target_nn = target_nn
        self.migrating: dict[str, MetadataRecord] = {}
        self.deleted: dict[str, set] = {}

    def on_MigrateRequest(self, msg: wire.MigrateRequest, env: Envelope) -> None:
        key = self.state.session_keys.get(msg.session_id)
        if key is None:
            self.security_event(msg.session_id, "unknown-session")
            return
        try:
            file_id = open_box(key, msg.sealed_file_id, wire.trigger_aad(msg.session_id)).decode()
        except (AuthFailure, UnicodeDecodeError):
            self.security_event(msg.session_id, "trigger-auth-failure")
            return
        try:
            self.start_migration(msg.session_id, file_id)
        except MigrationError as exc:
            self.security_event(msg.session_id, "migration-refused", reason=type(exc).__name__)

    def start_migration(self, session_id: str, file_id: str) -> MigrationLedger:
        """Step 1: seal the file's metadata under K_t and send it to the target."""
        key = self.state.session_keys.get(session_id)
        if key is None:
            raise UnknownSession(session_id)
        meta = self.cluster.metadata(file_id)
        ledger = self.engine.ledger_for(session_id)
        ledger.init_blocks(file_id, meta.block_ids)
        self.migrating[session_id] = meta
        self.deleted[session_id] = set()
        self.share_key(session_id, key)
        sealed = seal(key, wire.encode_metadata(meta), wire.metadata_aad(session_id), self.engine.rng)
        self.send(self.target_nn, wire.MetadataMsg(session_id, sealed))
        ledger.protection[1] = PROTECTION_K_T
        self.emit("metadata-sent", file=file_id, blocks=len(meta.block_ids))
        return ledger

    def on_BlockDeleted(self, msg: wire.BlockDeleted, env: Envelope) -> None:
        meta = self.migrating.get(msg.session_id)
        if meta is None:
            return
        done = self.deleted[msg.session_id]
        done.add(msg.block_id)
        if done >= set(meta.block_ids):
            # every block is now held (verified) by the target
            self.state.files.pop(meta.file_id, None)
            del self.migrating[msg.session_id]
            self.emit("source-metadata-removed", file=meta.file_id)


@dataclass
class _Incoming:
    meta: MetadataRecord
    tokens: dict[str, tuple[BlockId, str]]  # request_id -> (block, target dn)
    stored: dict[BlockId, str] = field(default_factory=dict)  # block -> target dn


class TargetNameNodeActor(NameNodeActor):
    def __init__(self, engine, cluster: Cluster):
        super().__init__(engine, cluster)
        self.incoming: dict[str, _Incoming] = {}
        self.renewals: dict[str, int] = {}

    def on_MetadataMsg(self, msg: wire.MetadataMsg, env: Envelope) -> None:
        key = self.state.session_keys.get(msg.session_id)
        if key is None:
            self.security_event(msg.session_id, "unknown-session")
            self.engine.abort(msg.session_id)
            return
        try:
            meta = wire.decode_metadata(open_box(key, msg.sealed_metadata, wire.metadata_aad(msg.session_id)))
        except (AuthFailure, MalformedMessage):
            self.security_event(msg.session_id, "metadata-auth-failure")
            self.engine.abort(msg.session_id)
            return
        if msg.session_id in self.incoming:
            self.emit("duplicate-metadata")
            return
        self.emit("metadata-accepted", file=meta.file_id, blocks=len(meta.block_ids))
        self.share_key(msg.session_id, key)
        self.issue_tokens(msg.session_id, meta)

    def issue_tokens(self, session_id: str, meta: MetadataRecord) -> list[SealedBox]:
        """Steps 2-3: one K_t-sealed token per block, dealt round-robin to local data nodes."""
        key = self.state.session_keys[session_id]
        cfg = self.engine.config
        nodes = self.cluster.datanodes
        inc = _Incoming(meta, {})
        self.incoming[session_id] = inc
        sealed_tokens = []
        for i, (bid, src_dn) in enumerate(zip(meta.block_ids, meta.datanode_addresses)):
            dn = nodes[i % len(nodes)].address
            rid = new_id(self.engine.rng, "r-")
            inc.tokens[rid] = (bid, dn)
            box = self._mint(key, session_id, BlockAccessToken(bid, dn, rid, self.now + cfg.token_lifetime))
            sealed_tokens.append(box)
            self.send(dn, wire.TokenShare(session_id, src_dn, rid, box, meta.owner_encrypted))
        ledger = self.engine.ledger_for(session_id)
        ledger.protection[3] = PROTECTION_INTERNAL
        self.emit("tokens-issued", count=len(sealed_tokens))
        if not meta.block_ids:
            self._complete(session_id, inc)
        return sealed_tokens

    def _mint(self, key, session_id: str, token: BlockAccessToken) -> SealedBox:
        return seal(key, wire.encode_token(token), wire.token_aad(session_id), self.engine.rng)

    def on_TokenRenew(self, msg: wire.TokenRenew, env: Envelope) -> None:
        inc = self.incoming.get(msg.session_id)
        if inc is None or msg.request_id not in inc.tokens:
            return
        bid, dn = inc.tokens[msg.request_id]
        if env.src != dn or bid in inc.stored:
            return
        key = self.state.session_keys[msg.session_id]
        box = self._mint(key, msg.session_id, BlockAccessToken(bid, dn, msg.request_id, self.now + self.engine.config.token_lifetime))
        src_dn = inc.meta.location(bid)
        self.send(dn, wire.TokenShare(msg.session_id, src_dn, msg.request_id, box, inc.meta.owner_encrypted))
        self.renewals[msg.request_id] = self.renewals.get(msg.request_id, 0) + 1
        self.emit("token-renewed", msg.request_id)

    def on_BlockStored(self, msg: wire.BlockStored, env: Envelope) -> None:
        inc = self.incoming.get(msg.session_id)
        if inc is None or msg.block_id not in inc.meta.block_ids:
            return
        inc.stored[msg.block_id] = env.src
        if len(inc.stored) == len(inc.meta.block_ids):
            self._complete(msg.session_id, inc)

    def _complete(self, session_id: str, inc: _Incoming) -> None:
        m = inc.meta
        self.state.files[m.file_id] = MetadataRecord(
            m.file_id, m.block_ids, tuple(inc.stored[b] for b in m.block_ids), m.file_size, m.owner_encrypted
        )
        self.emit("migration-complete", file=m.file_id)


# ---------------------------------------------------------------------------
# data nodes


class DataNodeActor(Actor):
    def __init__(self, engine, cluster: Cluster, node: DataNode):
        super().__init__(engine, node.address, cluster.cloud_id)
        self.cluster = cluster
        self.node = node

    def on_KeyShare(self, msg: wire.KeyShare, env: Envelope) -> None:
        try:
            material = open_box(self.cluster.internal_key, msg.sealed_key, wire.key_share_aad(msg.session_id, self.cloud_id))
        except AuthFailure:
            self.security_event(msg.session_id, "key-share-auth-failure")
            return
        self.node.session_keys[msg.session_id] = MigrationKey(new_id(random.Random(material), "k-"), material)


class SourceDataNodeActor(DataNodeActor):
    def __init__(self, engine, cluster, node):
        super().__init__(engine, cluster, node)
        self.finished: dict[str, str] = {}  # request_id -> "acked" | "failed"

    def on_ReadRequest(self, msg: wire.ReadRequest, env: Envelope) -> None:
        self.verify_and_send(msg, env.src)

    def verify_and_send(self, request: wire.ReadRequest, requester: str) -> Optional[DataMsg]:
        """Steps 5-6: check the token, then send the block with its sealed hash."""
        sid = request.session_id
        key = self.node.session_keys.get(sid)
        if key is None:
            self.security_event(sid, "unknown-session", src=requester)
            return None
        try:
            token = wire.decode_token(open_box(key, request.sealed_token, wire.token_aad(sid)))
        except (AuthFailure, MalformedMessage):
            self.security_event(sid, "token-auth-failure", src=requester)
            return None
        rid = token.request_id
        if rid in self.node.pending or rid in self.finished:
            self.emit("duplicate-request", rid)
            return None
        if self.now > token.expiry:
            self.emit("token-expired", rid)
            return None
        try:
            block = self.node.read_block(token.block_id)
        except MissingBlock:
            self.emit("missing-block", rid, block=token.block_id)
            self.send(requester, wire.ProtocolError(sid, rid, "missing-block"))
            return None
        rng = self.engine.rng
        nonce = rng.randbytes(NONCE_SIZE)
        digest = hash_digest(block.payload, nonce)
        sealed_hash = seal(key, digest.value, wire.hash_aad(sid, rid), rng)
        msg = DataMsg(sid, rid, block.id, block.payload, nonce, sealed_hash, attempt=1)
        timeout = self.engine.config.retransmit_timeout
        state = RetransmitState(
            request_id=rid,
            block_id=block.id,
            attempt=1,
            timer_deadline=self.now + timeout,
            digest=digest,
            nonce=nonce,
            session_id=sid,
            reply_to=requester,
            sealed_hash=sealed_hash,
            data=block.payload,
        )
        self.node.pending[rid] = state
        self._transmit(state, msg)
        ledger = self.engine.ledger_for(sid)
        ledger.protection[4] = PROTECTION_K_T
        ledger.protection[6] = PROTECTION_K_T
        return msg

    def _transmit(self, state: RetransmitState, msg: DataMsg) -> None:
        self.send(state.reply_to, msg)
        ledger = self.engine.ledger_for(state.session_id)
        ledger.transmissions[state.block_id] += 1
        ledger.mark(state.block_id, SENT)
        self.emit("data-sent" if msg.attempt == 1 else "retransmit", state.request_id, attempt=msg.attempt)
        timeout = self.engine.config.retransmit_timeout
        state.timer_deadline = self.now + timeout
        state.timer = self.engine.net.schedule(timeout, self.handle_timeout, state.request_id, label="retransmit")

    def handle_timeout(self, request_id: str, now: Optional[float] = None) -> Union[DataMsg, AdminAlert, None]:
        state = self.node.pending.get(request_id)
        if state is None:
            return None
        now = self.now if now is None else now
        max_ret = self.engine.config.max_ret
        if state.attempt <= max_ret:
            state.attempt += 1
            msg = DataMsg(state.session_id, request_id, state.block_id, state.data, state.nonce, state.sealed_hash, state.attempt)
            self._transmit(state, msg)
            return msg
        alert = AdminAlert(self.cloud_id, SOURCE_MAX_RETRANSMIT, request_id, now)
        del self.node.pending[request_id]
        self.finished[request_id] = "failed"
        ledger = self.engine.ledger_for(state.session_id)
        ledger.alerts.append(alert)
        ledger.mark(state.block_id, FAILED_ALERTED)
        self.emit("source-alert", request_id, block=state.block_id)
        return alert

    def on_AckMsg(self, msg: AckMsg, env: Envelope) -> None:
        self.handle_ack(msg)

    def handle_ack(self, ack: AckMsg) -> Optional[VerifiedAck]:
        """Step 9: delete the block only against a receipt that opens under K_t."""
        state = self.node.pending.get(ack.request_id)
        if state is None:
            if ack.request_id in self.finished:
                self.emit("stale-ack", ack.request_id)
            else:
                self.security_event(ack.session_id, "unsolicited-ack", ack.request_id)
            return None
        key = self.node.session_keys.get(state.session_id)
        try:
            if ack.session_id != state.session_id or key is None:
                raise AuthFailure("session mismatch")
            digest, bid, rid = wire.decode_receipt(open_box(key, ack.sealed_receipt, wire.ack_aad(ack.session_id, ack.request_id)))
        except (AuthFailure, MalformedMessage):
            self.security_event(state.session_id, "forged-ack", ack.request_id)
            return None
        if (digest, bid, rid) != (state.digest.value, state.block_id, state.request_id):
            self.security_event(state.session_id, "ack-mismatch", ack.request_id)
            return None
        proof = VerifiedAck(ack.request_id, state.block_id, ack)
        try:
            self.node.delete_block(state.block_id, proof)
        except (MissingBlock, InvalidProof):
            self.security_event(state.session_id, "deletion-refused", ack.request_id)
            return None
        if state.timer is not None:
            state.timer.cancel()
        del self.node.pending[ack.request_id]
        self.finished[ack.request_id] = "acked"
        ledger = self.engine.ledger_for(state.session_id)
        ledger.mark(state.block_id, ACKED_DELETED)
        ledger.protection[8] = PROTECTION_K_T
        self.emit("block-deleted", ack.request_id, block=state.block_id)
        self.send(self.cluster.namenode.address, wire.BlockDeleted(state.session_id, state.block_id, ack.request_id))
        return proof

    def on_ProtocolError(self, msg, env) -> None:
        self.emit("protocol-error-received", msg.request_id, reason=msg.reason)


@dataclass
class TokenEntry:
    session_id: str
    request_id: str
    source_datanode: str
    sealed_token: SealedBox
    block_id: BlockId
    expiry: float
    owner_encrypted: bool
    state: str = "queued"  # queued | requested | renewing | done | abandoned
    renewals: int = 0
    timer: Any = None


class TargetDataNodeActor(DataNodeActor):
    def __init__(self, engine, cluster, node):
        super().__init__(engine, cluster, node)
        self.queue: list[str] = []
        self.outstanding: set[str] = set()
        self.completed: dict[str, bytes] = {}  # request_id -> encoded ack
        self.copies: dict[str, int] = {}
        self.alerted: set[str] = set()
        self.stored_count: dict[BlockId, int] = {}

    def on_TokenShare(self, msg: wire.TokenShare, env: Envelope) -> None:
        key = self.node.session_keys.get(msg.session_id)
        if key is None:
            self.security_event(msg.session_id, "unknown-session")
            return
        try:
            token = wire.decode_token(open_box(key, msg.sealed_token, wire.token_aad(msg.session_id)))
        except (AuthFailure, MalformedMessage):
            self.security_event(msg.session_id, "token-auth-failure")
            return
        entry = self.node.token_cache.get(msg.request_id)
        if entry is None:
            entry = TokenEntry(msg.session_id, msg.request_id, msg.source_datanode, msg.sealed_token,
                               token.block_id, token.expiry, msg.owner_encrypted)
            self.node.token_cache[msg.request_id] = entry
            self.queue.append(msg.request_id)
            self.emit("token-cached", msg.request_id)
        elif entry.state == "renewing":
            entry.sealed_token, entry.expiry = msg.sealed_token, token.expiry
            entry.state = "requested"
            self.request_block(entry.source_datanode, entry.sealed_token, entry)
        self.pump()

    def pump(self) -> None:
        while self.queue and len(self.outstanding) < self.engine.config.parallel_streams:
            rid = self.queue.pop(0)
            entry = self.node.token_cache[rid]
            self.outstanding.add(rid)
            if self.now >= entry.expiry:
                # expired while queued behind other blocks; not a failure
                entry.state = "renewing"
                self.send(self.cluster.namenode.address, wire.TokenRenew(entry.session_id, rid))
                continue
            entry.state = "requested"
            self.request_block(entry.source_datanode, entry.sealed_token, entry)

    def request_block(self, source_addr: str, sealed_token: SealedBox, entry: Optional[TokenEntry] = None) -> None:
        """Step 4: present the sealed token to the source data node."""
        if entry is None:
            entry = next(e for e in self.node.token_cache.values() if e.sealed_token == sealed_token)
        self.send(source_addr, wire.ReadRequest(entry.session_id, sealed_token))
        self.emit("request-sent", entry.request_id)
        if entry.timer is not None:
            entry.timer.cancel()
        entry.timer = self.engine.net.schedule(self.engine.config.request_retry, self._request_timeout, entry.request_id, label="request-retry")

    def _request_timeout(self, request_id: str) -> None:
        entry = self.node.token_cache.get(request_id)
        if entry is None or entry.state != "requested":
            return
        if self.now < entry.expiry:
            self.request_block(entry.source_datanode, entry.sealed_token, entry)
            return
        # expired with the request still outstanding
        if entry.renewals < self.engine.config.max_ret:
            entry.renewals += 1
            entry.state = "renewing"
            self.send(self.cluster.namenode.address, wire.TokenRenew(entry.session_id, request_id))
            return
        entry.state = "abandoned"
        self.outstanding.discard(request_id)
        ledger = self.engine.ledger_for(entry.session_id)
        ledger.alerts.append(AdminAlert(self.cloud_id, TARGET_REQUEST_ABANDONED, request_id, self.now))
        ledger.mark(entry.block_id, FAILED_ALERTED)
        self.emit("request-abandoned", request_id, block=entry.block_id)
        self.pump()

    def on_DataMsg(self, msg: DataMsg, env: Envelope) -> None:
        self.handle_data(msg)

    def handle_data(self, msg: DataMsg) -> Optional[AckMsg]:
        """Steps 7-8: verify the hash, store once, acknowledge every copy."""
        entry = self.node.token_cache.get(msg.request_id)
        if entry is None or entry.session_id != msg.session_id:
            self.security_event(msg.session_id, "unsolicited-data", msg.request_id)
            return None
        key = self.node.session_keys[entry.session_id]
        ledger = self.engine.ledger_for(entry.session_id)
        if entry.state == "abandoned":
            self.emit("late-data", msg.request_id)
            return None
        if msg.request_id in self.completed:
            self.copies[msg.request_id] += 1
            ledger.duplicates[entry.block_id] += 1
            self.emit("duplicate-data", msg.request_id, copies=self.copies[msg.request_id])
            if self.copies[msg.request_id] > self.engine.config.max_ret and msg.request_id not in self.alerted:
                self.alerted.add(msg.request_id)
                ledger.alerts.append(AdminAlert(self.cloud_id, TARGET_DUPLICATE_FLOOD, msg.request_id, self.now))
                self.emit("target-alert", msg.request_id, block=entry.block_id)
            raw = self.completed[msg.request_id]
            self.engine.net.send(Envelope(self.address, entry.source_datanode, raw))
            return wire.decode(raw)
        try:
            if msg.block_id != entry.block_id:
                raise AuthFailure("block mismatch")
            expected = open_box(key, msg.sealed_hash, wire.hash_aad(entry.session_id, msg.request_id))
        except AuthFailure:
            self.security_event(entry.session_id, "integrity-failure", msg.request_id)
            return None
        digest = hash_digest(msg.data, msg.nonce)
        if digest.value != expected:
            self.security_event(entry.session_id, "integrity-failure", msg.request_id)
            return None
        self.node.store_block(DataBlock(entry.block_id, msg.data, entry.owner_encrypted), verified=True)
        self.stored_count[entry.block_id] = self.stored_count.get(entry.block_id, 0) + 1
        receipt = wire.encode_receipt(digest.value, entry.block_id, msg.request_id)
        sealed = seal(key, receipt, wire.ack_aad(entry.session_id, msg.request_id), self.engine.rng)
        ack = AckMsg(entry.session_id, msg.request_id, sealed)
        raw = wire.encode(ack)
        self.completed[msg.request_id] = raw
        self.copies[msg.request_id] = 1
        entry.state = "done"
        if entry.timer is not None:
            entry.timer.cancel()
        self.outstanding.discard(msg.request_id)
        self.emit("data-stored", msg.request_id, block=entry.block_id)
        self.engine.net.send(Envelope(self.address, entry.source_datanode, raw))
        self.send(self.cluster.namenode.address, wire.BlockStored(entry.session_id, entry.block_id, msg.request_id))
        ledger.protection[8] = PROTECTION_K_T
        self.pump()
        return ack

    def on_ProtocolError(self, msg: wire.ProtocolError, env: Envelope) -> None:
        entry = self.node.token_cache.get(msg.request_id)
        self.emit("protocol-error-received", msg.request_id, reason=msg.reason)
        if entry is not None and entry.state == "requested" and env.src == entry.source_datanode:
            entry.state = "abandoned"
            if entry.timer is not None:
                entry.timer.cancel()
            self.outstanding.discard(msg.request_id)
            self.pump()


# ---------------------------------------------------------------------------
# engine


class CustodyViolation(AssertionError):
    pass


DEFAULT_CONTROL_LINK = LinkModel(rate=1e9, latency=1e-4)

USER = "alice"
PASSWORDS = {"A": b"correct horse", "B": b"battery staple"}


class MigrationEngine:
    """Two clusters, their actors, the user, and the network between them.

    ``link`` models the source-to-target data links and ``reverse_link`` the
    target-to-source direction (defaults to ``link``).  Name-node, user and
    intra-cloud traffic uses ``control_link``.
    """

    def __init__(
        self,
        *,
        seed: int = 0,
        link: LinkModel = LinkModel(),
        reverse_link: Optional[LinkModel] = None,
        control_link: LinkModel = DEFAULT_CONTROL_LINK,
        protocol: ProtocolConfig = ProtocolConfig(),
        source_datanodes: int = 3,
        target_datanodes: int = 3,
        block_size: int = DEFAULT_BLOCK_SIZE,
        source_id: str = "A",
        target_id: str = "B",
        record_wire: bool = True,
        check_custody: bool = True,
    ):
        self.seed = seed
        self.rng = random.Random(seed)
        self.trace = Trace()
        self.net = Network(self.rng, self.trace, record_wire=record_wire)
        self.link, self.reverse_link, self.control_link = link, reverse_link or link, control_link
        self.config = protocol.resolved(link, block_size)
        self.source = Cluster(source_id, source_datanodes, block_size=block_size, rng=self.rng)
        self.target = Cluster(target_id, target_datanodes, block_size=block_size, rng=self.rng)
        self.check_custody = check_custody
        self.ledgers: dict[str, MigrationLedger] = {}
        self.security_events: list[tuple[float, str, str]] = []
        self.violations: list[str] = []
        self.users: dict[str, UserAgent] = {}

        self.source_nn = SourceNameNodeActor(self, self.source, self.target.namenode.address)
        self.target_nn = TargetNameNodeActor(self, self.target)
        self.source_dns = [SourceDataNodeActor(self, self.source, dn) for dn in self.source.datanodes]
        self.target_dns = [TargetDataNodeActor(self, self.target, dn) for dn in self.target.datanodes]
        self.actors: dict[str, Actor] = {}
        for a in [self.source_nn, self.target_nn, *self.source_dns, *self.target_dns]:
            self._attach(a)
        self.net.add_link(self.source_nn.address, self.target_nn.address, control_link)
        for cluster in (self.source, self.target):
            for dn in cluster.datanodes:
                self.net.add_link(cluster.namenode.address, dn.address, control_link)
        for s in self.source.datanodes:
            for t in self.target.datanodes:
                self.net.add_link(s.address, t.address, self.link, both=False)
                self.net.add_link(t.address, s.address, self.reverse_link, both=False)

    def _attach(self, actor: Actor) -> None:
        self.actors[actor.address] = actor
        self.net.add_node(actor.address, actor.on_envelope)

    # -- setup ----------------------------------------------------------------

    def register_user(self, user_id: str, passwords: dict[str, bytes]) -> UserAgent:
        """Create accounts at each named cloud; ``passwords`` maps cloud id to password."""
        user = self.users.get(user_id) or UserAgent(self, user_id)
        if user_id not in self.users:
            self.users[user_id] = user
            self._attach(user)
            for nn in (self.source_nn, self.target_nn):
                self.net.add_link(user.address, nn.address, self.control_link)
        for cloud_id, password in passwords.items():
            nn = self._namenode(cloud_id)
            salt = self.rng.randbytes(16)
            nn.accounts[user_id] = (salt, derive_key(password, salt, cost=self.config.kdf_cost))
            user.credentials[cloud_id] = Credentials(user_id, password, salt)
        return user

    def _namenode(self, cloud_id: str) -> NameNode:
        for c in (self.source, self.target):
            if c.cloud_id == cloud_id:
                return c.namenode
        raise UnknownCloud(cloud_id)

    def put_file(self, file_id: str, payload: bytes, owner_encrypted: bool = True) -> MetadataRecord:
        return self.source.put_file(file_id, payload, owner_encrypted)

    def add_node(self, address: str, handler, *, links: tuple[str, ...] = (), model: Optional[LinkModel] = None) -> None:
        """Attach a foreign node (e.g. an attacker) linked both ways to ``links``."""
        self.net.add_node(address, handler)
        for peer in links:
            self.net.add_link(address, peer, model or self.link)

    # -- ledgers and checks ---------------------------------------------------

    def ledger_for(self, session_id: str) -> MigrationLedger:
        if session_id not in self.ledgers:
            self.ledgers[session_id] = MigrationLedger(session_id)
        return self.ledgers[session_id]

    def abort(self, session_id: str) -> None:
        self.ledger_for(session_id).aborted = True

    def record_security_event(self, session_id: str, time: float, actor: str, kind: str) -> None:
        event = (time, actor, kind)
        self.security_events.append(event)
        if session_id in self.ledgers:
            self.ledgers[session_id].security_events.append(event)

    def custody_holds(self) -> bool:
        """Each migrating block is at the source or stored and verified at the target."""
        for ledger in self.ledgers.values():
            for bid in ledger.status:
                if self.source.locate(bid) is not None:
                    continue
                dn = self.target.locate(bid)
                if dn is None or bid not in dn.verified:
                    return False
        return True

    def _after_event(self, ev) -> None:
        if self.check_custody and not self.custody_holds():
            self.violations.append(f"custody broken at t={ev.time}")
            raise CustodyViolation(self.violations[-1])

    def run(self, max_events: Optional[int] = None) -> int:
        return self.net.run(max_events=max_events, after_event=self._after_event)

    # -- the user-facing operations -------------------------------------------

    def key_setup(self, user_id: str) -> str:
        """Run key setup for ``user_id`` at both clouds; return the session id."""
        clouds = {
            self.source.cloud_id: set(self.source.namenode.accounts),
            self.target.cloud_id: set(self.target.namenode.accounts),
        }
        session = new_migration_session(user_id, self.source.cloud_id, self.target.cloud_id, clouds=clouds, rng=self.rng)
        self.ledgers[session.session_id] = session.ledger
        user = self.users[user_id]
        user.begin_key_setup(
            session.session_id,
            session.key,
            {self.source.cloud_id: self.source_nn.address, self.target.cloud_id: self.target_nn.address},
        )
        self.run()
        if user.setups[session.session_id].outcome != "committed":
            raise AuthFailure(f"key setup for {user_id!r} failed")
        return session.session_id

    def migrate(self, user_id: str, session_id: str, file_id: str) -> MigrationLedger:
        """Have the user trigger migration of ``file_id`` and run to quiescence."""
        self.users[user_id].trigger(session_id, file_id, self.source_nn.address)
        self.run()
        return self.ledger_for(session_id)

    def start_migration(self, session_id: str, file_id: str) -> MigrationLedger:
        """Source-side step 1 invoked directly (no user message); the caller runs the loop."""
        return self.source_nn.start_migration(session_id, file_id)

    # -- inspection -----------------------------------------------------------

    def target_dn(self, address: str) -> TargetDataNodeActor:
        return next(a for a in self.target_dns if a.address == address)

    def source_dn(self, address: str) -> SourceDataNodeActor:
        return next(a for a in self.source_dns if a.address == address)

    def stored_counts(self) -> dict[BlockId, int]:
        out: dict[BlockId, int] = {}
        for a in self.target_dns:
            for b, n in a.stored_count.items():
                out[b] = out.get(b, 0) + n
        return out

    def data_transmissions(self) -> int:
        """DataMsg frames put on the wire by the source data nodes."""
        src = {dn.address for dn in self.source.datanodes}
        return sum(1 for _, s, _, p in self.net.wire_log if s in src and wire.kind_of(p) == "data")

    def outcome(self, session_id: str) -> dict:
        ledger = self.ledger_for(session_id)
        return {
            "session_id": session_id,
            "file_id": ledger.file_id,
            "complete": ledger.complete,
            "aborted": ledger.aborted,
            "blocks": len(ledger.status),
            "acked_deleted": ledger.count(ACKED_DELETED),
            "failed_alerted": ledger.count(FAILED_ALERTED),
            "transmissions": sum(ledger.transmissions.values()),
            "duplicates": sum(ledger.duplicates.values()),
            "alerts": [[a.cloud_id, a.kind, a.request_id, a.sim_time] for a in ledger.alerts],
            "security_events": [list(e) for e in ledger.security_events],
            "protection": {str(k): v for k, v in sorted(ledger.protection.items())},
            "custody_holds": self.custody_holds() and not self.violations,
            "sim_time": self.net.now,
        }


def prepare_engine(
    engine: MigrationEngine,
    *,
    file_id: str = "f",
    payload: Optional[bytes] = None,
    file_size: Optional[int] = None,
) -> MigrationEngine:
    """Register the user at both clouds and place one owner-encrypted file at the source.

    Without ``payload`` the file is ``file_size`` seeded random bytes
    (default: two full blocks and a short third).
    """
    engine.register_user(USER, {engine.source.cloud_id: PASSWORDS["A"], engine.target.cloud_id: PASSWORDS["B"]})
    if payload is None:
        size = 2 * engine.source.block_size + 17 if file_size is None else file_size
        payload = random.Random(f"payload/{engine.seed}").randbytes(size)
    engine.put_file(file_id, payload)
    return engine
