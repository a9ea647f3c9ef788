"""Optional two-device synchronization over the change-log protocol.

Every local mutation appends an immutable ChangeLogEntry (per-device monotone
sequence). Devices exchange entries the other side has not acknowledged
(watermarks = highest sequence seen per origin device). Concurrent edits of
the same patient resolve last-writer-wins ordered by (wall timestamp,
device id, sequence); the losing version is retained in the conflict archive
rather than destroyed. Payloads travel still encrypted; both devices must
share the store keys.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import time
from dataclasses import dataclass
from typing import Callable

import httpx

from ..errors import SyncError, VaultError
from ..vault.records import PatientRecord
from ..vault.store import RecordStore

PROTOCOL_VERSION = 1


@dataclass(frozen=True)
class ChangeLogEntry:
    sequence: int
    device_id: str
    patient_id: str
    operation: str  # "put" | "delete"
    version_hash: str  # "" for deletes
    prev_hash: str  # hash of the version this mutation replaced, "" if none
    timestamp: float

    def __post_init__(self):
        if self.operation not in ("put", "delete"):
            raise ValueError(f"unknown operation {self.operation!r}")

    @property
    def stamp(self) -> tuple[float, str, int]:
        return (self.timestamp, self.device_id, self.sequence)

    def to_dict(self) -> dict:
        return {
            "sequence": self.sequence,
            "device_id": self.device_id,
            "patient_id": self.patient_id,
            "operation": self.operation,
            "version_hash": self.version_hash,
            "prev_hash": self.prev_hash,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChangeLogEntry":
        return cls(
            int(d["sequence"]),
            str(d["device_id"]),
            str(d["patient_id"]),
            str(d["operation"]),
            str(d.get("version_hash", "")),
            str(d.get("prev_hash", "")),
            float(d["timestamp"]),
        )


class SyncLog:
    """Append-only change log (own and replicated foreign entries)."""

    def __init__(self, store: RecordStore):
        self._store = store
        self._path = store.path / "changelog"
        self._entries: list[ChangeLogEntry] = []
        self._by_key: dict[tuple[str, int], ChangeLogEntry] = {}
        self._latest: dict[str, ChangeLogEntry] = {}  # patient -> newest by stamp
        if self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    self._absorb(ChangeLogEntry.from_dict(json.loads(line)))

    def _absorb(self, entry: ChangeLogEntry):
        self._entries.append(entry)
        self._by_key[(entry.device_id, entry.sequence)] = entry
        latest = self._latest.get(entry.patient_id)
        if latest is None or entry.stamp > latest.stamp:
            self._latest[entry.patient_id] = entry

    def _append_line(self, entry: ChangeLogEntry):
        with open(self._path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def has(self, device_id: str, sequence: int) -> bool:
        return (device_id, sequence) in self._by_key

    def next_own_sequence(self) -> int:
        own = [e.sequence for e in self._entries if e.device_id == self._store.device_id]
        return (max(own) + 1) if own else 1

    def record_local(
        self, patient_id: str, operation: str, version_hash: str, prev_hash: str, ts: float
    ) -> ChangeLogEntry:
        entry = ChangeLogEntry(
            self.next_own_sequence(),
            self._store.device_id,
            patient_id,
            operation,
            version_hash,
            prev_hash,
            ts,
        )
        self._append_line(entry)
        self._absorb(entry)
        return entry

    def append_foreign(self, entry: ChangeLogEntry):
        if self.has(entry.device_id, entry.sequence):
            return
        self._append_line(entry)
        self._absorb(entry)

    def watermarks(self) -> dict[str, int]:
        marks: dict[str, int] = {}
        for entry in self._entries:
            if entry.sequence > marks.get(entry.device_id, 0):
                marks[entry.device_id] = entry.sequence
        return marks

    def entries_missing_from(self, peer_watermarks: dict[str, int]) -> list[ChangeLogEntry]:
        out = [
            e
            for e in self._entries
            if e.sequence > int(peer_watermarks.get(e.device_id, 0))
        ]
        out.sort(key=lambda e: e.stamp)
        return out

    def latest_for_patient(self, patient_id: str) -> ChangeLogEntry | None:
        return self._latest.get(patient_id)

    @property
    def entries(self) -> tuple[ChangeLogEntry, ...]:
        return tuple(self._entries)


@dataclass
class SyncReport:
    ok: bool
    remote_device_id: str = ""
    pushed: int = 0
    pulled: int = 0
    applied: int = 0
    conflicts: int = 0
    archived: int = 0
    skipped: int = 0
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "remote_device_id": self.remote_device_id,
            "pushed": self.pushed,
            "pulled": self.pulled,
            "applied": self.applied,
            "conflicts": self.conflicts,
            "archived": self.archived,
            "skipped": self.skipped,
            "error": self.error,
        }


@dataclass
class ApplyStats:
    applied: int = 0
    conflicts: int = 0
    archived: int = 0
    skipped: int = 0


class SyncEngine:
    """Binds a store to its change log; performs mutations and exchanges."""

    def __init__(self, store: RecordStore, clock: Callable[[], float] = time.time):
        self.store = store
        self.log = SyncLog(store)
        self.clock = clock
        self._archive_dir = store.path / "conflicts"
        self._archive_dir.mkdir(exist_ok=True)

    # -- local mutations (called by the service endpoints) ----------------------

    def record_put(self, record: PatientRecord, ts: float | None = None) -> str:
        prev = self.store.version_hash(record.patient_id) or ""
        version_hash = self.store.put_record(record)
        self.log.record_local(
            record.patient_id, "put", version_hash, prev, self.clock() if ts is None else ts
        )
        return version_hash

    def record_delete(self, patient_id: str, ts: float | None = None):
        prev = self.store.version_hash(patient_id) or ""
        self.store.delete_record(patient_id)
        self.log.record_local(
            patient_id, "delete", "", prev, self.clock() if ts is None else ts
        )

    # -- archive -----------------------------------------------------------------

    def _archive(self, patient_id: str, version_hash: str, blob: bytes, reason: str):
        tag = version_hash[:12] or "deleted"
        name = f"{patient_id}-{tag}-{int(self.clock() * 1000)}.enc"
        (self._archive_dir / name).write_bytes(blob)
        with open(self._archive_dir / "index.jsonl", "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "patient_id": patient_id,
                        "version_hash": version_hash,
                        "file": name,
                        "reason": reason,
                        "archived_at": self.clock(),
                    },
                    sort_keys=True,
                )
                + "\n"
            )

    # -- wire payload assembly ------------------------------------------------------

    def collect_for_peer(self, peer_watermarks: dict[str, int]) -> list[dict]:
        """Entries the peer lacks; the newest put per patient carries the
        encrypted payload when it matches the store's current state."""
        missing = self.log.entries_missing_from(peer_watermarks)
        newest: dict[str, ChangeLogEntry] = {}
        for entry in missing:
            newest[entry.patient_id] = entry  # sorted ascending by stamp
        wire = []
        for entry in missing:
            item: dict = {"entry": entry.to_dict()}
            if (
                entry.operation == "put"
                and newest[entry.patient_id] is entry
                and self.store.version_hash(entry.patient_id) == entry.version_hash
            ):
                raw = self.store.get_blob_bytes(entry.patient_id)
                item["payload"] = base64.b64encode(raw).decode("ascii")
            wire.append(item)
        return wire

    # -- application ------------------------------------------------------------------

    def apply_remote(self, wire_items: list[dict]) -> ApplyStats:
        stats = ApplyStats()
        fresh: list[tuple[ChangeLogEntry, bytes | None]] = []
        for item in wire_items:
            entry = ChangeLogEntry.from_dict(item["entry"])
            if self.log.has(entry.device_id, entry.sequence):
                stats.skipped += 1
                continue
            payload = None
            if "payload" in item and item["payload"]:
                payload = base64.b64decode(item["payload"])
            fresh.append((entry, payload))

        by_patient: dict[str, list[tuple[ChangeLogEntry, bytes | None]]] = {}
        for entry, payload in fresh:
            by_patient.setdefault(entry.patient_id, []).append((entry, payload))

        for patient_id, items in by_patient.items():
            items.sort(key=lambda ep: ep[0].stamp)
            self._apply_patient(patient_id, items, stats)
            for entry, _ in items:
                self.log.append_foreign(entry)
                stats.applied += 1
        return stats

    def _apply_patient(
        self,
        patient_id: str,
        items: list[tuple[ChangeLogEntry, bytes | None]],
        stats: ApplyStats,
    ):
        incoming_winner, winner_payload = items[-1]
        local_latest = self.log.latest_for_patient(patient_id)
        current_hash = self.store.version_hash(patient_id) or ""

        if local_latest is not None and local_latest.stamp > incoming_winner.stamp:
            # Local state wins; retain the newest losing incoming version.
            losing_payload = next(
                (p for e, p in reversed(items) if e.operation == "put" and p), None
            )
            if losing_payload is not None:
                losing_entry = next(
                    e for e, p in reversed(items) if e.operation == "put" and p
                )
                self._verify_payload(losing_entry, losing_payload)
                self._archive(
                    patient_id, losing_entry.version_hash, losing_payload, "lost_lww"
                )
                stats.archived += 1
            stats.conflicts += 1
            return

        fast_forward = (
            local_latest is None or incoming_winner.prev_hash == current_hash
        ) or _chain_covers(items, current_hash)
        conflict = local_latest is not None and not fast_forward

        if incoming_winner.operation == "delete":
            if current_hash:
                if conflict:
                    self._archive(
                        patient_id,
                        current_hash,
                        self.store.get_blob_bytes(patient_id),
                        "lost_lww",
                    )
                    stats.archived += 1
                self.store.delete_record(patient_id)
            if conflict:
                stats.conflicts += 1
            return

        if incoming_winner.version_hash == current_hash:
            return  # states already agree
        if winner_payload is None:
            raise SyncError(
                f"winning entry for patient {patient_id!r} arrived without a payload"
            )
        self._verify_payload(incoming_winner, winner_payload)
        if conflict and current_hash:
            self._archive(
                patient_id, current_hash, self.store.get_blob_bytes(patient_id), "lost_lww"
            )
            stats.archived += 1
        if conflict:
            stats.conflicts += 1
        self.store.put_blob_bytes(patient_id, winner_payload, incoming_winner.version_hash)

    def _verify_payload(self, entry: ChangeLogEntry, payload: bytes):
        """Decrypt and re-hash the payload: rejects corrupt or mislabeled blobs."""
        try:
            plaintext = self.store.decrypt_blob(payload)
        except VaultError as exc:
            raise SyncError(f"payload for {entry.patient_id!r} failed decryption: {exc}")
        if hashlib.sha256(plaintext).hexdigest() != entry.version_hash:
            raise SyncError(f"payload hash mismatch for patient {entry.patient_id!r}")


def _chain_covers(items: list[tuple[ChangeLogEntry, bytes | None]], current_hash: str) -> bool:
    """True when the incoming entries form a hash chain rooted at the local
    state (pure fast-forward, no concurrent local edit)."""
    expect = current_hash
    for entry, _ in items:
        if entry.prev_hash != expect:
            return False
        expect = entry.version_hash
    return True


def sync_local_pair(a: SyncEngine, b: SyncEngine) -> tuple[ApplyStats, ApplyStats]:
    """In-process exchange used by simulations and tests: b pulls from a,
    then a pulls from b (the same dataflow as one HTTP sync run)."""
    to_b = a.collect_for_peer(b.log.watermarks())
    stats_b = b.apply_remote(to_b)
    to_a = b.collect_for_peer(a.log.watermarks())
    stats_a = a.apply_remote(to_a)
    return stats_a, stats_b


def sync_with_remote(
    engine: SyncEngine,
    remote_url: str,
    username: str,
    password: str,
    timeout_s: float = 5.0,
) -> SyncReport:
    """Full HTTP sync run against a peer service; failures leave local state
    untouched and are reported rather than raised."""
    report = SyncReport(ok=False)
    try:
        with httpx.Client(base_url=remote_url, timeout=timeout_s) as client:
            login = client.post(
                "/auth/login", json={"username": username, "password": password}
            )
            if login.status_code != 200:
                raise SyncError(f"remote login failed with status {login.status_code}")
            headers = {"Authorization": f"Bearer {login.json()['token']}"}

            marks = client.get("/sync/watermarks", headers=headers)
            if marks.status_code != 200:
                raise SyncError(f"watermark fetch failed with status {marks.status_code}")
            peer = marks.json()
            if int(peer.get("protocol_version", -1)) != PROTOCOL_VERSION:
                raise SyncError(
                    f"sync protocol mismatch: peer speaks "
                    f"v{peer.get('protocol_version')}, local v{PROTOCOL_VERSION}"
                )

            outgoing = engine.collect_for_peer(peer["watermarks"])
            exchange = client.post(
                "/sync/exchange",
                headers=headers,
                json={
                    "protocol_version": PROTOCOL_VERSION,
                    "device_id": engine.store.device_id,
                    "watermarks": engine.log.watermarks(),
                    "entries": outgoing,
                },
            )
            if exchange.status_code != 200:
                raise SyncError(f"exchange failed with status {exchange.status_code}")
            body = exchange.json()
            stats = engine.apply_remote(body.get("entries", []))
            return SyncReport(
                ok=True,
                remote_device_id=peer.get("device_id", ""),
                pushed=len(outgoing),
                pulled=len(body.get("entries", [])),
                applied=stats.applied,
                conflicts=stats.conflicts,
                archived=stats.archived,
                skipped=stats.skipped,
            )
    except (httpx.HTTPError, SyncError, OSError, KeyError, ValueError) as exc:
        report.error = f"{type(exc).__name__}: {exc}"
        return report
