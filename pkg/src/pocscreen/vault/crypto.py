"""Record encryption: AES-256-CBC with PKCS7 padding and a keyed-SHA-256
(HMAC) integrity tag computed over (format version || IV || ciphertext).

The integrity key is derived independently from the encryption key, and the
tag is verified in constant time BEFORE any decryption happens, which closes
CBC padding oracles. Padding failures after a valid tag indicate corruption
introduced by the holder of the keys (or a software fault), never an attack
surface, and are reported as corruption.
"""

from __future__ import annotations

import hmac
import secrets
import struct
from dataclasses import dataclass
from hashlib import sha256
from typing import Callable

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..errors import CorruptRecordError, IntegrityError

BLOCK_SIZE = 16
KEY_SIZE = 32
TAG_SIZE = 32
FORMAT_VERSION = 1

BLOB_MAGIC = b"EHR1"

_PAD_ERROR = "integrity check failed"  # uniform: no padding detail leaks

_HKDF_ENC_INFO = b"pocscreen/record-encryption/v1"
_HKDF_MAC_INFO = b"pocscreen/record-integrity/v1"


def pkcs7_pad(data: bytes) -> bytes:
    """Append k bytes of value k to reach a 16-byte boundary (full block when
    already aligned)."""
    k = BLOCK_SIZE - (len(data) % BLOCK_SIZE)
    return data + bytes([k]) * k


def pkcs7_unpad(padded: bytes) -> bytes:
    """Strip and validate PKCS7 padding; every failure mode raises the same
    uniform IntegrityError."""
    if len(padded) < BLOCK_SIZE or len(padded) % BLOCK_SIZE != 0:
        raise IntegrityError(_PAD_ERROR)
    k = padded[-1]
    if not 1 <= k <= BLOCK_SIZE:
        raise IntegrityError(_PAD_ERROR)
    if padded[-k:] != bytes([k]) * k:
        raise IntegrityError(_PAD_ERROR)
    return padded[:-k]


def aes256_cbc_encrypt(key: bytes, iv: bytes, plaintext: bytes) -> bytes:
    """Raw CBC core over block-aligned input (no padding)."""
    enc = Cipher(algorithms.AES(bytes(key)), modes.CBC(bytes(iv))).encryptor()
    return enc.update(plaintext) + enc.finalize()


def aes256_cbc_decrypt(key: bytes, iv: bytes, ciphertext: bytes) -> bytes:
    dec = Cipher(algorithms.AES(bytes(key)), modes.CBC(bytes(iv))).decryptor()
    return dec.update(ciphertext) + dec.finalize()


def _hkdf_sha256(master: bytes, info: bytes, length: int = KEY_SIZE) -> bytes:
    # RFC 5869 with an empty salt; one expand round suffices for 32 bytes.
    prk = hmac.new(b"\x00" * 32, master, sha256).digest()
    return hmac.new(prk, info + b"\x01", sha256).digest()[:length]


class KeyMaterial:
    """Derived encryption and integrity keys; zeroized on destroy().

    Python cannot guarantee no copies exist, but the mutable buffers held
    here are wiped, which is the strongest contract available in-process.
    """

    def __init__(self, enc_key: bytes, mac_key: bytes):
        if len(enc_key) != KEY_SIZE or len(mac_key) != KEY_SIZE:
            raise ValueError("keys must be 32 bytes")
        if hmac.compare_digest(enc_key, mac_key):
            raise ValueError("encryption and integrity keys must differ")
        self._enc = bytearray(enc_key)
        self._mac = bytearray(mac_key)
        self._live = True

    @classmethod
    def from_master(cls, master: bytes) -> "KeyMaterial":
        if len(master) != KEY_SIZE:
            raise ValueError("master key must be 32 bytes")
        return cls(
            _hkdf_sha256(master, _HKDF_ENC_INFO), _hkdf_sha256(master, _HKDF_MAC_INFO)
        )

    @property
    def enc_key(self) -> bytes:
        self._check()
        return bytes(self._enc)

    @property
    def mac_key(self) -> bytes:
        self._check()
        return bytes(self._mac)

    def _check(self):
        if not self._live:
            raise ValueError("key material has been destroyed")

    def destroy(self):
        for buf in (self._enc, self._mac):
            for i in range(len(buf)):
                buf[i] = 0
        self._live = False


@dataclass(frozen=True)
class EncryptedBlob:
    """At-rest record form: versioned IV + ciphertext + integrity tag."""

    format_version: int
    iv: bytes
    ciphertext: bytes
    tag: bytes

    def __post_init__(self):
        if len(self.iv) != BLOCK_SIZE:
            raise ValueError("IV must be 16 bytes")
        if len(self.tag) != TAG_SIZE:
            raise ValueError("tag must be 32 bytes")
        if len(self.ciphertext) % BLOCK_SIZE != 0 or not self.ciphertext:
            raise ValueError("ciphertext must be a positive multiple of 16 bytes")

    def to_bytes(self) -> bytes:
        return (
            BLOB_MAGIC
            + struct.pack("<H", self.format_version)
            + self.iv
            + self.tag
            + self.ciphertext
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "EncryptedBlob":
        head = len(BLOB_MAGIC) + 2 + BLOCK_SIZE + TAG_SIZE
        if len(raw) < head + BLOCK_SIZE or raw[:4] != BLOB_MAGIC:
            raise CorruptRecordError("not an encrypted record blob")
        version = struct.unpack("<H", raw[4:6])[0]
        iv = raw[6 : 6 + BLOCK_SIZE]
        tag = raw[6 + BLOCK_SIZE : head]
        ciphertext = raw[head:]
        if len(ciphertext) % BLOCK_SIZE != 0:
            raise CorruptRecordError("ciphertext length is not block-aligned")
        return cls(version, iv, ciphertext, tag)


def _tag_input(format_version: int, iv: bytes, ciphertext: bytes) -> bytes:
    return struct.pack("<H", format_version) + iv + ciphertext


def encrypt_record(
    plaintext: bytes,
    keys: KeyMaterial,
    rng: Callable[[int], bytes] = secrets.token_bytes,
) -> EncryptedBlob:
    """Encrypt one record under a fresh random IV and tag it."""
    iv = rng(BLOCK_SIZE)
    if not isinstance(iv, (bytes, bytearray)) or len(iv) != BLOCK_SIZE:
        raise ValueError("random source failed to produce a 16-byte IV")
    iv = bytes(iv)
    ciphertext = aes256_cbc_encrypt(keys.enc_key, iv, pkcs7_pad(plaintext))
    tag = hmac.new(keys.mac_key, _tag_input(FORMAT_VERSION, iv, ciphertext), sha256).digest()
    return EncryptedBlob(FORMAT_VERSION, iv, ciphertext, tag)


def decrypt_record(blob: EncryptedBlob, keys: KeyMaterial) -> bytes:
    """Verify the tag in constant time, then decrypt and unpad."""
    expected = hmac.new(
        keys.mac_key, _tag_input(blob.format_version, blob.iv, blob.ciphertext), sha256
    ).digest()
    if not hmac.compare_digest(expected, blob.tag):
        raise IntegrityError("integrity check failed")
    if blob.format_version != FORMAT_VERSION:
        raise CorruptRecordError(f"unknown blob format version {blob.format_version}")
    padded = aes256_cbc_decrypt(keys.enc_key, blob.iv, blob.ciphertext)
    try:
        return pkcs7_unpad(padded)
    except IntegrityError:
        # Tag already authenticated the ciphertext; bad padding here means the
        # stored data was corrupted before tagging, not tampered after.
        raise CorruptRecordError("authenticated blob failed to unpad")
