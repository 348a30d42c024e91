"""Byte-level wire format for every message exchanged in the simulation.

Frame layout: one tag byte, a field count, then each field as a 4-byte
big-endian length followed by its bytes.  Decoding is strict; anything that
does not parse raises :class:`MalformedMessage`, which receivers treat as a
dropped, logged message.
"""

from __future__ import annotations

import dataclasses
import struct
import typing
from dataclasses import dataclass

from .core import AckMsg, BlockAccessToken, BlockId, DataMsg, MetadataRecord
from .crypto import SealedBox, make_aad
from .errors import MalformedMessage


@dataclass(frozen=True)
class KeyDelivery:
    user_id: str
    session_id: str
    cloud_id: str
    wrapped_key: SealedBox  # K_t under derive_key(password, salt)


@dataclass(frozen=True)
class KeySetupReply:
    session_id: str
    cloud_id: str
    ok: bool
    proof: bytes  # sealed box under K_t when ok, empty otherwise


@dataclass(frozen=True)
class KeyCommit:
    session_id: str
    proof: SealedBox


@dataclass(frozen=True)
class KeyAbort:
    session_id: str
    proof: SealedBox


@dataclass(frozen=True)
class MigrateRequest:
    session_id: str
    sealed_file_id: SealedBox


@dataclass(frozen=True)
class MetadataMsg:
    session_id: str
    sealed_metadata: SealedBox


@dataclass(frozen=True)
class KeyShare:
    """Intra-cloud distribution of K_t, sealed under the cluster's internal key."""

    session_id: str
    sealed_key: SealedBox


@dataclass(frozen=True)
class TokenShare:
    session_id: str
    source_datanode: str
    request_id: str
    sealed_token: SealedBox
    owner_encrypted: bool


@dataclass(frozen=True)
class TokenRenew:
    session_id: str
    request_id: str


@dataclass(frozen=True)
class ReadRequest:
    session_id: str
    sealed_token: SealedBox


@dataclass(frozen=True)
class ProtocolError:
    session_id: str
    request_id: str
    reason: str


@dataclass(frozen=True)
class BlockStored:
    session_id: str
    block_id: BlockId
    request_id: str


@dataclass(frozen=True)
class BlockDeleted:
    session_id: str
    block_id: BlockId
    request_id: str


MESSAGE_TYPES: tuple[type, ...] = (
    KeyDelivery,
    KeySetupReply,
    KeyCommit,
    KeyAbort,
    MigrateRequest,
    MetadataMsg,
    KeyShare,
    TokenShare,
    TokenRenew,
    ReadRequest,
    DataMsg,
    AckMsg,
    ProtocolError,
    BlockStored,
    BlockDeleted,
)
_TAG_OF = {cls: i + 1 for i, cls in enumerate(MESSAGE_TYPES)}
_CLS_OF = {tag: cls for cls, tag in _TAG_OF.items()}

KIND_NAMES = {
    KeyDelivery: "key-delivery",
    KeySetupReply: "key-setup-reply",
    KeyCommit: "key-commit",
    KeyAbort: "key-abort",
    MigrateRequest: "migrate-request",
    MetadataMsg: "metadata",
    KeyShare: "key-share",
    TokenShare: "token-share",
    TokenRenew: "token-renew",
    ReadRequest: "read-request",
    DataMsg: "data",
    AckMsg: "ack",
    ProtocolError: "protocol-error",
    BlockStored: "block-stored",
    BlockDeleted: "block-deleted",
}


def _field_kinds(cls) -> list[tuple[str, str]]:
    hints = typing.get_type_hints(cls)
    return [(f.name, hints[f.name].__name__) for f in dataclasses.fields(cls)]


_LAYOUT = {cls: _field_kinds(cls) for cls in MESSAGE_TYPES}


def _frame(tag: int, fields: list[bytes]) -> bytes:
    out = bytearray(struct.pack(">BH", tag, len(fields)))
    for f in fields:
        out += struct.pack(">I", len(f)) + f
    return bytes(out)


def _unframe(raw: bytes) -> tuple[int, list[bytes]]:
    try:
        tag, count = struct.unpack_from(">BH", raw, 0)
        pos, fields = 3, []
        for _ in range(count):
            (n,) = struct.unpack_from(">I", raw, pos)
            pos += 4
            if pos + n > len(raw):
                raise MalformedMessage("field overruns frame")
            fields.append(bytes(raw[pos : pos + n]))
            pos += n
    except struct.error as exc:
        raise MalformedMessage(str(exc)) from None
    if pos != len(raw):
        raise MalformedMessage("trailing bytes")
    return tag, fields


def _enc(kind: str, value) -> bytes:
    if kind == "str":
        return value.encode()
    if kind == "bytes":
        return bytes(value)
    if kind == "bool":
        return b"\x01" if value else b"\x00"
    if kind == "int":
        return struct.pack(">q", value)
    if kind == "float":
        return struct.pack(">d", value)
    if kind == "BlockId":
        return _frame(0, [value.file_id.encode(), struct.pack(">q", value.index)])
    if kind == "SealedBox":
        return value.to_bytes()
    raise TypeError(kind)


def _dec(kind: str, raw: bytes):
    try:
        if kind == "str":
            return raw.decode()
        if kind == "bytes":
            return raw
        if kind == "bool":
            if raw not in (b"\x00", b"\x01"):
                raise MalformedMessage("bad bool")
            return raw == b"\x01"
        if kind == "int":
            return struct.unpack(">q", raw)[0]
        if kind == "float":
            return struct.unpack(">d", raw)[0]
        if kind == "BlockId":
            _, (fid, idx) = _unframe(raw)
            return BlockId(fid.decode(), struct.unpack(">q", idx)[0])
        if kind == "SealedBox":
            return SealedBox.from_bytes(raw)
    except (UnicodeDecodeError, struct.error, ValueError) as exc:
        raise MalformedMessage(str(exc)) from None
    raise TypeError(kind)


def encode(msg) -> bytes:
    cls = type(msg)
    return _frame(_TAG_OF[cls], [_enc(k, getattr(msg, name)) for name, k in _LAYOUT[cls]])


def decode(raw: bytes):
    tag, fields = _unframe(raw)
    cls = _CLS_OF.get(tag)
    if cls is None:
        raise MalformedMessage(f"unknown tag {tag}")
    layout = _LAYOUT[cls]
    if len(fields) != len(layout):
        raise MalformedMessage("wrong field count")
    return cls(**{name: _dec(k, f) for (name, k), f in zip(layout, fields)})


def kind_of(raw: bytes) -> str:
    """Message kind name from the tag byte alone (no full decode)."""
    if not raw:
        return "empty"
    cls = _CLS_OF.get(raw[0])
    return KIND_NAMES[cls] if cls else "unknown"


# ---------------------------------------------------------------------------
# plaintexts that travel inside sealed boxes


def encode_token(token: BlockAccessToken) -> bytes:
    return _frame(
        0,
        [
            _enc("BlockId", token.block_id),
            token.target_datanode.encode(),
            token.request_id.encode(),
            _enc("float", token.expiry),
        ],
    )


def decode_token(raw: bytes) -> BlockAccessToken:
    _, f = _unframe(raw)
    if len(f) != 4:
        raise MalformedMessage("bad token")
    return BlockAccessToken(
        block_id=_dec("BlockId", f[0]),
        target_datanode=_dec("str", f[1]),
        request_id=_dec("str", f[2]),
        expiry=_dec("float", f[3]),
    )


def encode_metadata(meta: MetadataRecord) -> bytes:
    blocks = _frame(0, [_enc("BlockId", b) for b in meta.block_ids])
    nodes = _frame(0, [a.encode() for a in meta.datanode_addresses])
    return _frame(
        0,
        [
            meta.file_id.encode(),
            blocks,
            nodes,
            _enc("int", meta.file_size),
            _enc("bool", meta.owner_encrypted),
        ],
    )


def decode_metadata(raw: bytes) -> MetadataRecord:
    _, f = _unframe(raw)
    if len(f) != 5:
        raise MalformedMessage("bad metadata")
    _, blocks = _unframe(f[1])
    _, nodes = _unframe(f[2])
    try:
        return MetadataRecord(
            file_id=_dec("str", f[0]),
            block_ids=tuple(_dec("BlockId", b) for b in blocks),
            datanode_addresses=tuple(_dec("str", n) for n in nodes),
            file_size=_dec("int", f[3]),
            owner_encrypted=_dec("bool", f[4]),
        )
    except ValueError as exc:
        raise MalformedMessage(str(exc)) from None


def encode_receipt(digest: bytes, block_id: BlockId, request_id: str) -> bytes:
    """Ack receipt plaintext: H(data||nonce) || block_id || request_id."""
    return _frame(0, [digest, _enc("BlockId", block_id), request_id.encode()])


def decode_receipt(raw: bytes) -> tuple[bytes, BlockId, str]:
    _, f = _unframe(raw)
    if len(f) != 3:
        raise MalformedMessage("bad receipt")
    return f[0], _dec("BlockId", f[1]), _dec("str", f[2])


# ---------------------------------------------------------------------------
# associated data: (message-type, session-id[, request-id]) for domain separation


def key_wrap_aad(session_id: str, cloud_id: str, user_id: str) -> bytes:
    return make_aad("key-wrap", session_id, cloud_id, user_id)


def setup_reply_aad(session_id: str, cloud_id: str) -> bytes:
    return make_aad("key-setup-ok", session_id, cloud_id)


def commit_aad(session_id: str) -> bytes:
    return make_aad("key-commit", session_id)


def abort_aad(session_id: str) -> bytes:
    return make_aad("key-abort", session_id)


def trigger_aad(session_id: str) -> bytes:
    return make_aad("migrate", session_id)


def metadata_aad(session_id: str) -> bytes:
    return make_aad("metadata", session_id)


def key_share_aad(session_id: str, cloud_id: str) -> bytes:
    return make_aad("key-share", session_id, cloud_id)


def token_aad(session_id: str) -> bytes:
    return make_aad("token", session_id)


def hash_aad(session_id: str, request_id: str) -> bytes:
    return make_aad("data-hash", session_id, request_id)


def ack_aad(session_id: str, request_id: str) -> bytes:
    return make_aad("ack", session_id, request_id)
