"""Record-level encrypted persistence: AES-256-CBC + keyed-SHA-256 integrity."""

from .crypto import (
    BLOCK_SIZE,
    FORMAT_VERSION,
    EncryptedBlob,
    KeyMaterial,
    aes256_cbc_decrypt,
    aes256_cbc_encrypt,
    decrypt_record,
    encrypt_record,
    pkcs7_pad,
    pkcs7_unpad,
)
from .records import Demographics, Encounter, PatientRecord, ScreeningEntry
from .store import RecordStore, StoreHeader

__all__ = [
    "BLOCK_SIZE",
    "FORMAT_VERSION",
    "EncryptedBlob",
    "KeyMaterial",
    "aes256_cbc_encrypt",
    "aes256_cbc_decrypt",
    "encrypt_record",
    "decrypt_record",
    "pkcs7_pad",
    "pkcs7_unpad",
    "Demographics",
    "Encounter",
    "PatientRecord",
    "ScreeningEntry",
    "RecordStore",
    "StoreHeader",
]
