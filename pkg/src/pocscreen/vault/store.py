"""Encrypted record store over a plain directory.

Layout:
    store/header            salt, KDF parameters, device id (plaintext JSON)
    store/records/<id>.enc  one EncryptedBlob per patient record
    store/system/<name>.enc system payloads (users, ...) under the same keys
    store/index             id -> {version_hash, updated_at} (plaintext JSON)
    store/.lock             advisory writer lock

Writes follow write-temp/fsync/rename, so a crash at any point leaves the
previous version readable. Version hashes are SHA-256 over the canonical
plaintext, which keeps them stable across key rotations and identical across
devices that share content.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path

from ..errors import RecordNotFoundError, StoreLockedError, VaultError
from .crypto import EncryptedBlob, KeyMaterial, decrypt_record, encrypt_record
from .records import PATIENT_ID_RE, PatientRecord

STORE_FORMAT_VERSION = 1

SCRYPT_N = 2**14
SCRYPT_R = 8
SCRYPT_P = 1


def _fsync_dir(path: Path):
    fd = os.open(path, os.O_RDONLY)
    try:
        os.fsync(fd)
    finally:
        os.close(fd)


def _atomic_write(path: Path, data: bytes):
    """write-temp, fsync, rename, fsync-dir: old content survives a crash."""
    tmp = path.parent / f".tmp-{path.name}-{secrets.token_hex(6)}"
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    _replace(tmp, path)
    _fsync_dir(path.parent)


def _replace(tmp: Path, path: Path):
    os.replace(tmp, path)  # separated so fault-injection tests can intercept


def derive_master_key(passphrase: str, salt: bytes) -> bytes:
    """Memory-hard passphrase stretching (scrypt, parameters pinned above)."""
    return hashlib.scrypt(
        passphrase.encode("utf-8"), salt=salt, n=SCRYPT_N, r=SCRYPT_R, p=SCRYPT_P, dklen=32
    )


@dataclass(frozen=True)
class StoreHeader:
    format_version: int
    salt: bytes
    device_id: str
    kdf: dict

    def to_bytes(self) -> bytes:
        return json.dumps(
            {
                "format_version": self.format_version,
                "salt": self.salt.hex(),
                "device_id": self.device_id,
                "kdf": self.kdf,
            },
            sort_keys=True,
        ).encode()

    @classmethod
    def from_bytes(cls, raw: bytes) -> "StoreHeader":
        d = json.loads(raw.decode())
        return cls(
            int(d["format_version"]), bytes.fromhex(d["salt"]), str(d["device_id"]), d["kdf"]
        )


class RecordStore:
    """Single-writer, multi-reader encrypted store on one directory."""

    def __init__(self, path: Path, keys: KeyMaterial, header: StoreHeader, lock_fd: int):
        self.path = Path(path)
        self.header = header
        self._keys = keys
        self._lock_fd = lock_fd
        self._write_lock = threading.RLock()
        self._records_dir = self.path / "records"
        self._system_dir = self.path / "system"
        self._index_path = self.path / "index"

    # -- lifecycle -----------------------------------------------------------

    @classmethod
    def create(
        cls,
        path: str | Path,
        master_key: bytes | None = None,
        passphrase: str | None = None,
    ) -> "RecordStore":
        path = Path(path)
        if (path / "header").exists():
            raise VaultError(f"store already exists at {path}")
        path.mkdir(parents=True, exist_ok=True)
        (path / "records").mkdir(exist_ok=True)
        (path / "system").mkdir(exist_ok=True)
        salt = secrets.token_bytes(16)
        header = StoreHeader(
            STORE_FORMAT_VERSION,
            salt,
            secrets.token_hex(16),  # 128-bit device identity, minted once
            {"name": "scrypt", "n": SCRYPT_N, "r": SCRYPT_R, "p": SCRYPT_P},
        )
        _atomic_write(path / "header", header.to_bytes())
        _atomic_write(path / "index", b"{}")
        return cls.open(path, master_key=master_key, passphrase=passphrase)

    @classmethod
    def open(
        cls,
        path: str | Path,
        master_key: bytes | None = None,
        passphrase: str | None = None,
    ) -> "RecordStore":
        path = Path(path)
        header_path = path / "header"
        if not header_path.exists():
            raise VaultError(f"no store at {path}")
        header = StoreHeader.from_bytes(header_path.read_bytes())
        if header.format_version != STORE_FORMAT_VERSION:
            raise VaultError(f"unsupported store format version {header.format_version}")
        keys = cls._resolve_keys(header, master_key, passphrase)
        lock_fd = os.open(path / ".lock", os.O_RDWR | os.O_CREAT, 0o600)
        try:
            fcntl.flock(lock_fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            os.close(lock_fd)
            raise StoreLockedError(f"another process holds the writer lock on {path}")
        return cls(path, keys, header, lock_fd)

    @staticmethod
    def _resolve_keys(
        header: StoreHeader, master_key: bytes | None, passphrase: str | None
    ) -> KeyMaterial:
        if (master_key is None) == (passphrase is None):
            raise ValueError("provide exactly one of master_key or passphrase")
        if passphrase is not None:
            master_key = derive_master_key(passphrase, header.salt)
        return KeyMaterial.from_master(master_key)

    def close(self):
        if self._lock_fd is not None:
            fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
            os.close(self._lock_fd)
            self._lock_fd = None
        self._keys.destroy()

    def __enter__(self) -> "RecordStore":
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def device_id(self) -> str:
        return self.header.device_id

    # -- index ---------------------------------------------------------------

    def _read_index(self) -> dict:
        return json.loads(self._index_path.read_bytes().decode())

    def _write_index(self, index: dict):
        _atomic_write(self._index_path, json.dumps(index, sort_keys=True).encode())

    def version_hash(self, patient_id: str) -> str | None:
        entry = self._read_index().get(patient_id)
        return entry["version_hash"] if entry else None

    def list_ids(self) -> list[str]:
        return sorted(self._read_index().keys())

    def has_record(self, patient_id: str) -> bool:
        return patient_id in self._read_index()

    # -- record operations -----------------------------------------------------

    def _record_path(self, patient_id: str) -> Path:
        if not PATIENT_ID_RE.match(patient_id):
            raise ValueError(f"invalid patient id {patient_id!r}")
        return self._records_dir / f"{patient_id}.enc"

    def put_record(self, record: PatientRecord) -> str:
        """Encrypt and durably write one record; returns its version hash."""
        plaintext = record.to_canonical_bytes()
        version_hash = hashlib.sha256(plaintext).hexdigest()
        blob = encrypt_record(plaintext, self._keys)
        with self._write_lock:
            _atomic_write(self._record_path(record.patient_id), blob.to_bytes())
            index = self._read_index()
            index[record.patient_id] = {
                "version_hash": version_hash,
                "updated_at": time.time(),
            }
            self._write_index(index)
        return version_hash

    def get_record(self, patient_id: str) -> PatientRecord:
        path = self._record_path(patient_id)
        if not path.exists():
            raise RecordNotFoundError(f"no record for patient {patient_id!r}")
        blob = EncryptedBlob.from_bytes(path.read_bytes())
        return PatientRecord.from_bytes(decrypt_record(blob, self._keys))

    def delete_record(self, patient_id: str):
        path = self._record_path(patient_id)
        if not path.exists():
            raise RecordNotFoundError(f"no record for patient {patient_id!r}")
        with self._write_lock:
            os.unlink(path)
            index = self._read_index()
            index.pop(patient_id, None)
            self._write_index(index)

    # Raw-blob access used by the sync engine: payloads move between devices
    # still encrypted; the caller supplies the (verified) version hash.

    def get_blob_bytes(self, patient_id: str) -> bytes:
        path = self._record_path(patient_id)
        if not path.exists():
            raise RecordNotFoundError(f"no record for patient {patient_id!r}")
        return path.read_bytes()

    def put_blob_bytes(self, patient_id: str, raw: bytes, version_hash: str):
        EncryptedBlob.from_bytes(raw)  # structural validation
        with self._write_lock:
            _atomic_write(self._record_path(patient_id), raw)
            index = self._read_index()
            index[patient_id] = {"version_hash": version_hash, "updated_at": time.time()}
            self._write_index(index)

    def decrypt_blob(self, raw: bytes) -> bytes:
        return decrypt_record(EncryptedBlob.from_bytes(raw), self._keys)

    # -- system payloads -------------------------------------------------------

    def _system_path(self, name: str) -> Path:
        if not PATIENT_ID_RE.match(name):
            raise ValueError(f"invalid system payload name {name!r}")
        return self._system_dir / f"{name}.enc"

    def put_system(self, name: str, payload: bytes):
        blob = encrypt_record(payload, self._keys)
        with self._write_lock:
            _atomic_write(self._system_path(name), blob.to_bytes())

    def get_system(self, name: str) -> bytes:
        path = self._system_path(name)
        if not path.exists():
            raise RecordNotFoundError(f"no system payload {name!r}")
        return decrypt_record(EncryptedBlob.from_bytes(path.read_bytes()), self._keys)

    def has_system(self, name: str) -> bool:
        return self._system_path(name).exists()

    def list_system(self) -> list[str]:
        return sorted(p.stem for p in self._system_dir.glob("*.enc"))

    # -- key rotation ----------------------------------------------------------

    def rotate_keys(
        self,
        new_master_key: bytes | None = None,
        new_passphrase: str | None = None,
    ) -> dict:
        """Re-encrypt every record and system payload under new keys.

        Phase 1 decrypts everything under the current keys; any failure aborts
        with the failing id and the store untouched. Phase 2 writes each item
        atomically under the new keys with fresh IVs.
        """
        new_salt = secrets.token_bytes(16)
        if new_passphrase is not None:
            new_master = derive_master_key(new_passphrase, new_salt)
        elif new_master_key is not None:
            new_master = new_master_key
        else:
            raise ValueError("provide new_master_key or new_passphrase")
        new_keys = KeyMaterial.from_master(new_master)

        with self._write_lock:
            plaintexts: dict[str, bytes] = {}
            for pid in self.list_ids():
                try:
                    blob = EncryptedBlob.from_bytes(self.get_blob_bytes(pid))
                    plaintexts[pid] = decrypt_record(blob, self._keys)
                except VaultError as exc:
                    raise VaultError(f"rotation aborted: record {pid!r} failed: {exc}")
            systems: dict[str, bytes] = {}
            for name in self.list_system():
                try:
                    systems[name] = self.get_system(name)
                except VaultError as exc:
                    raise VaultError(f"rotation aborted: system payload {name!r} failed: {exc}")

            for pid, plaintext in plaintexts.items():
                blob = encrypt_record(plaintext, new_keys)
                _atomic_write(self._record_path(pid), blob.to_bytes())
            for name, payload in systems.items():
                blob = encrypt_record(payload, new_keys)
                _atomic_write(self._system_path(name), blob.to_bytes())

            header = StoreHeader(
                self.header.format_version, new_salt, self.header.device_id, self.header.kdf
            )
            _atomic_write(self.path / "header", header.to_bytes())
            self.header = header
            old = self._keys
            self._keys = new_keys
            old.destroy()
        return {"records": len(plaintexts), "system": len(systems)}
