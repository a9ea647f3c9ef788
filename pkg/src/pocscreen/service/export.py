"""Anonymized screening export: one CSV row per screening, no identifiers.

Pseudonyms are keyed hashes of the patient id: stable within one export key
epoch, unlinkable across epochs. Ages are bucketed into 5-year bins and
timestamps truncated to dates.
"""

from __future__ import annotations

import hmac
import time
from datetime import date, datetime, timezone
from hashlib import sha256
from typing import Callable, Iterator

from ..vault.store import RecordStore

CSV_HEADER = "pseudonym,age_bucket,sex,hb_gdl,remark,severity,date"

AGE_BIN_YEARS = 5


def pseudonym(export_key: bytes, patient_id: str) -> str:
    return hmac.new(export_key, patient_id.encode("utf-8"), sha256).hexdigest()[:16]


def age_bucket(birth_date: str, on: date) -> str:
    try:
        born = date.fromisoformat(birth_date)
    except (TypeError, ValueError):
        return "unknown"
    age = on.year - born.year - ((on.month, on.day) < (born.month, born.day))
    if age < 0:
        return "unknown"
    low = (age // AGE_BIN_YEARS) * AGE_BIN_YEARS
    return f"{low}-{low + AGE_BIN_YEARS - 1}"


def export_anonymized(
    store: RecordStore,
    export_key: bytes,
    clock: Callable[[], float] = time.time,
) -> Iterator[str]:
    """Yield CSV lines (header first)."""
    if not export_key:
        raise ValueError("export key must be non-empty")
    today = datetime.fromtimestamp(clock(), tz=timezone.utc).date()
    yield CSV_HEADER
    for patient_id in store.list_ids():
        record = store.get_record(patient_id)
        alias = pseudonym(export_key, patient_id)
        bucket = age_bucket(record.demographics.birth_date, today)
        sex = record.demographics.sex or "unknown"
        for screening in record.screenings:
            day = datetime.fromtimestamp(screening.timestamp, tz=timezone.utc).date()
            yield (
                f"{alias},{bucket},{sex},{screening.predicted_hb_gdl:.3f},"
                f"{screening.remark},{screening.severity},{day.isoformat()}"
            )
