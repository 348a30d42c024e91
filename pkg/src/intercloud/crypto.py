"""AEAD sealing, hashing and password-based key derivation.

AES-256-GCM (via ``cryptography``) provides the AEAD, SHA-256 the digest and
scrypt the password KDF.  Nonces are drawn from the caller's seeded
``random.Random`` so that whole simulations replay bit-for-bit.  That RNG is
not a CSPRNG; this is a simulator, not a deployment.
"""

from __future__ import annotations

import hashlib
import random
import struct
from dataclasses import dataclass
from typing import Any, Union

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from .errors import AuthFailure, EmptyPassword, MalformedMessage

KEY_SIZE = 32
DIGEST_SIZE = 32
AEAD_NONCE_SIZE = 12
TAG_SIZE = 16
DEFAULT_KDF_COST = 2**10


@dataclass(frozen=True)
class SealedBox:
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.tag + self.ciphertext

    @classmethod
    def from_bytes(cls, raw: bytes) -> "SealedBox":
        if len(raw) < AEAD_NONCE_SIZE + TAG_SIZE:
            raise MalformedMessage("sealed box too short")
        n, t = AEAD_NONCE_SIZE, AEAD_NONCE_SIZE + TAG_SIZE
        return cls(nonce=bytes(raw[:n]), tag=bytes(raw[n:t]), ciphertext=bytes(raw[t:]))

    def __len__(self) -> int:
        return len(self.nonce) + len(self.tag) + len(self.ciphertext)


@dataclass(frozen=True)
class Digest:
    value: bytes

    def __post_init__(self):
        if len(self.value) != DIGEST_SIZE:
            raise ValueError(f"digest must be {DIGEST_SIZE} bytes")

    def hex(self) -> str:
        return self.value.hex()


# raw 32-byte key or anything with a ``material`` attribute (MigrationKey)
KeyLike = Union[bytes, Any]


def _material(key) -> bytes:
    raw = getattr(key, "material", key)
    if not isinstance(raw, (bytes, bytearray)) or len(raw) != KEY_SIZE:
        raise ValueError(f"key material must be {KEY_SIZE} bytes")
    return bytes(raw)


def make_aad(*parts: Union[str, bytes, int]) -> bytes:
    """Canonical associated data: each part length-prefixed, so no two part
    lists encode to the same bytes."""
    out = bytearray()
    for part in parts:
        if isinstance(part, int):
            part = str(part)
        if isinstance(part, str):
            part = part.encode()
        out += struct.pack(">I", len(part)) + part
    return bytes(out)


def seal(key: KeyLike, plaintext: bytes, aad: bytes, rng: random.Random) -> SealedBox:
    nonce = rng.randbytes(AEAD_NONCE_SIZE)
    sealed = AESGCM(_material(key)).encrypt(nonce, bytes(plaintext), bytes(aad))
    return SealedBox(nonce=nonce, ciphertext=sealed[:-TAG_SIZE], tag=sealed[-TAG_SIZE:])


def open_box(key: KeyLike, box: SealedBox, aad: bytes) -> bytes:
    """Return the plaintext, or raise :class:`AuthFailure`.

    Tampering, a wrong key and wrong associated data are indistinguishable to
    the caller by design.
    """
    if len(box.nonce) != AEAD_NONCE_SIZE or len(box.tag) != TAG_SIZE:
        raise AuthFailure("malformed sealed box")
    try:
        return AESGCM(_material(key)).decrypt(box.nonce, box.ciphertext + box.tag, bytes(aad))
    except InvalidTag:
        raise AuthFailure("authentication failed") from None


def hash_digest(data: bytes, nonce: bytes) -> Digest:
    return Digest(hashlib.sha256(bytes(data) + bytes(nonce)).digest())


def derive_key(password: bytes, salt: bytes, *, cost: int = DEFAULT_KDF_COST) -> bytes:
    """scrypt(password, salt) -> 32-byte key.  ``cost`` is scrypt's N."""
    if not password:
        raise EmptyPassword("password must be non-empty")
    return hashlib.scrypt(bytes(password), salt=bytes(salt), n=cost, r=8, p=1, dklen=KEY_SIZE)
