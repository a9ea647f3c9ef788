"""Patient record model and its canonical, schema-evolvable serialization.

Canonical bytes are compact JSON with sorted keys, so identical record state
always serializes to identical bytes (the basis for version hashes). Unknown
top-level fields survive a parse/serialize round-trip untouched.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

from ..errors import CorruptRecordError

SCHEMA_VERSION = 1

_KNOWN_FIELDS = {
    "schema_version",
    "patient_id",
    "demographics",
    "encounters",
    "screenings",
    "revision",
}

#: Opaque ids are restricted to a filesystem- and URL-safe alphabet.
PATIENT_ID_RE = re.compile(r"^[A-Za-z0-9_-]{1,64}$")


@dataclass(frozen=True)
class Demographics:
    name: str = ""
    birth_date: str = ""  # ISO date, may be empty when unknown
    sex: str = ""
    contact: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "birth_date": self.birth_date,
            "sex": self.sex,
            "contact": self.contact,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Demographics":
        return cls(
            str(d.get("name", "")),
            str(d.get("birth_date", "")),
            str(d.get("sex", "")),
            str(d.get("contact", "")),
        )


@dataclass(frozen=True)
class Encounter:
    timestamp: float
    notes: str

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "notes": self.notes}

    @classmethod
    def from_dict(cls, d: dict) -> "Encounter":
        return cls(float(d["timestamp"]), str(d.get("notes", "")))


@dataclass(frozen=True)
class ScreeningEntry:
    timestamp: float
    image_ref: str
    features: tuple[float, ...] | None
    predicted_hb_gdl: float
    remark: str
    severity: str
    model_version: str
    latency_ms: float

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "image_ref": self.image_ref,
            "features": list(self.features) if self.features is not None else None,
            "predicted_hb_gdl": self.predicted_hb_gdl,
            "remark": self.remark,
            "severity": self.severity,
            "model_version": self.model_version,
            "latency_ms": self.latency_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScreeningEntry":
        features = d.get("features")
        return cls(
            float(d["timestamp"]),
            str(d.get("image_ref", "")),
            tuple(float(v) for v in features) if features is not None else None,
            float(d["predicted_hb_gdl"]),
            str(d["remark"]),
            str(d["severity"]),
            str(d.get("model_version", "")),
            float(d.get("latency_ms", 0.0)),
        )


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    demographics: Demographics = Demographics()
    encounters: tuple[Encounter, ...] = ()
    screenings: tuple[ScreeningEntry, ...] = ()
    revision: int = 0
    extra: dict = field(default_factory=dict)  # unknown fields, preserved

    def __post_init__(self):
        if not PATIENT_ID_RE.match(self.patient_id):
            raise ValueError(f"invalid patient id {self.patient_id!r}")
        for seq in (self.encounters, self.screenings):
            stamps = [e.timestamp for e in seq]
            if any(b < a for a, b in zip(stamps, stamps[1:])):
                raise ValueError("timestamps must be non-decreasing in append order")

    def with_screening(self, entry: ScreeningEntry) -> "PatientRecord":
        if self.screenings and entry.timestamp < self.screenings[-1].timestamp:
            raise ValueError("screening timestamp older than the last entry")
        return replace(
            self, screenings=self.screenings + (entry,), revision=self.revision + 1
        )

    def with_encounter(self, enc: Encounter) -> "PatientRecord":
        if self.encounters and enc.timestamp < self.encounters[-1].timestamp:
            raise ValueError("encounter timestamp older than the last entry")
        return replace(self, encounters=self.encounters + (enc,), revision=self.revision + 1)

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "patient_id": self.patient_id,
            "demographics": self.demographics.to_dict(),
            "encounters": [e.to_dict() for e in self.encounters],
            "screenings": [s.to_dict() for s in self.screenings],
            "revision": self.revision,
        }
        for key, value in self.extra.items():
            out.setdefault(key, value)
        return out

    def to_canonical_bytes(self) -> bytes:
        return json.dumps(
            self.to_dict(), sort_keys=True, separators=(",", ":"), ensure_ascii=False
        ).encode("utf-8")

    @classmethod
    def from_dict(cls, d: dict) -> "PatientRecord":
        version = d.get("schema_version", SCHEMA_VERSION)
        if version > SCHEMA_VERSION:
            raise CorruptRecordError(f"record schema version {version} is newer than supported")
        extra = {k: v for k, v in d.items() if k not in _KNOWN_FIELDS}
        return cls(
            str(d["patient_id"]),
            Demographics.from_dict(d.get("demographics", {})),
            tuple(Encounter.from_dict(e) for e in d.get("encounters", [])),
            tuple(ScreeningEntry.from_dict(s) for s in d.get("screenings", [])),
            int(d.get("revision", 0)),
            extra,
        )

    @classmethod
    def from_bytes(cls, raw: bytes) -> "PatientRecord":
        try:
            d = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptRecordError(f"record payload is not valid JSON: {exc}")
        if not isinstance(d, dict) or "patient_id" not in d:
            raise CorruptRecordError("record payload missing patient_id")
        try:
            return cls.from_dict(d)
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptRecordError(f"record payload malformed: {exc}")
