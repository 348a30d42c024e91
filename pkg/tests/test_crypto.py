from __future__ import annotations

import hashlib
import random

import pytest
from cryptography.hazmat.primitives import hashes
from hypothesis import given, settings
from hypothesis import strategies as st

from intercloud.core import NONCE_SIZE
from intercloud.crypto import (
    AEAD_NONCE_SIZE,
    DIGEST_SIZE,
    KEY_SIZE,
    TAG_SIZE,
    SealedBox,
    derive_key,
    hash_digest,
    make_aad,
    open_box,
    seal,
)
from intercloud.errors import AuthFailure, EmptyPassword, MalformedMessage

keys = st.binary(min_size=KEY_SIZE, max_size=KEY_SIZE)


@settings(max_examples=200, deadline=None)
@given(key=keys, pt=st.binary(max_size=512), aad=st.binary(max_size=64), seed=st.integers(0, 2**32))
def test_open_inverts_seal(key, pt, aad, seed):
    box = seal(key, pt, aad, random.Random(seed))
    assert open_box(key, box, aad) == pt
    assert len(box) == AEAD_NONCE_SIZE + TAG_SIZE + len(pt)


@settings(max_examples=100, deadline=None)
@given(key=keys, other=keys, pt=st.binary(max_size=128))
def test_wrong_key_fails(key, other, pt):
    box = seal(key, pt, b"a", random.Random(0))
    if other != key:
        with pytest.raises(AuthFailure):
            open_box(other, box, b"a")


@settings(max_examples=100, deadline=None)
@given(pt=st.binary(min_size=1, max_size=64), data=st.data())
def test_single_bit_flip_fails(pt, data):
    key = bytes(range(KEY_SIZE))
    raw = bytearray(seal(key, pt, b"aad", random.Random(1)).to_bytes())
    bit = data.draw(st.integers(0, len(raw) * 8 - 1))
    raw[bit // 8] ^= 1 << (bit % 8)
    with pytest.raises(AuthFailure):
        open_box(key, SealedBox.from_bytes(bytes(raw)), b"aad")


def test_wrong_aad_fails():
    key = bytes(KEY_SIZE)
    box = seal(key, b"token", make_aad("token", "s1"), random.Random(0))
    with pytest.raises(AuthFailure):
        open_box(key, box, make_aad("ack", "s1"))


def test_seal_is_randomised_per_call():
    key, r = bytes(KEY_SIZE), random.Random(5)
    a, b = seal(key, b"same", b"", r), seal(key, b"same", b"", r)
    assert a.nonce != b.nonce and a.ciphertext != b.ciphertext


def test_sealed_box_roundtrip_and_short_input():
    box = seal(bytes(KEY_SIZE), b"xyz", b"", random.Random(0))
    assert SealedBox.from_bytes(box.to_bytes()) == box
    with pytest.raises(MalformedMessage):
        SealedBox.from_bytes(b"\x00" * 5)


def test_truncated_tag_is_auth_failure():
    box = seal(bytes(KEY_SIZE), b"xyz", b"", random.Random(0))
    with pytest.raises(AuthFailure):
        open_box(bytes(KEY_SIZE), SealedBox(box.nonce, box.ciphertext, box.tag[:8]), b"")


def test_make_aad_is_injective_on_boundaries():
    assert make_aad("ab", "c") != make_aad("a", "bc")
    assert make_aad("a") != make_aad("a", "")
    assert make_aad(3) == make_aad("3")


# -- hashing -------------------------------------------------------------------

ZERO16_SHA256 = "374708fff7719dd5979ec875d56cd2286f6d3cf7ec317a3b25632aab28ec37bb"


def test_digest_of_empty_data_with_zero_nonce_matches_reference():
    d = hash_digest(b"", bytes(NONCE_SIZE))
    ref = hashes.Hash(hashes.SHA256())
    ref.update(bytes(16))
    assert d.value == ref.finalize()
    assert d.hex() == ZERO16_SHA256
    assert len(d.value) == DIGEST_SIZE


@settings(max_examples=100, deadline=None)
@given(data=st.binary(max_size=256), nonce=st.binary(min_size=NONCE_SIZE, max_size=NONCE_SIZE))
def test_hash_repeatable_and_matches_sha256(data, nonce):
    assert hash_digest(data, nonce) == hash_digest(data, nonce)
    assert hash_digest(data, nonce).value == hashlib.sha256(data + nonce).digest()


def test_nonce_changes_digest():
    r = random.Random(9)
    for _ in range(200):
        d = r.randbytes(r.randint(0, 64))
        n1, n2 = r.randbytes(NONCE_SIZE), r.randbytes(NONCE_SIZE)
        assert n1 == n2 or hash_digest(d, n1) != hash_digest(d, n2)


# -- key derivation ------------------------------------------------------------


def test_derive_key_deterministic_and_salted():
    k1 = derive_key(b"pw", b"salt-1", cost=16)
    assert k1 == derive_key(b"pw", b"salt-1", cost=16)
    assert k1 != derive_key(b"pw", b"salt-2", cost=16)
    assert len(k1) == KEY_SIZE


def test_derive_key_matches_stdlib_scrypt():
    assert derive_key(b"pw", b"s", cost=16) == hashlib.scrypt(b"pw", salt=b"s", n=16, r=8, p=1, dklen=32)


def test_derive_key_rejects_empty_password():
    with pytest.raises(EmptyPassword):
        derive_key(b"", b"salt")
