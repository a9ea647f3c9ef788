"""Offline-first REST API binding screening, vault, and access together.

Authentication is a bearer token from POST /auth/login. A request with no
token gets 401; a presented token that fails for any reason (invalid,
expired, revoked user, missing permission) gets a uniform 403 so the wire
reveals nothing about which check failed. The audit log keeps the true cause.
"""

from __future__ import annotations

import io
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from hashlib import sha256
from typing import Callable

import numpy as np
from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, StreamingResponse
from pydantic import BaseModel

from .. import imaging
from ..access import AccessControl, AuthContext
from ..errors import (
    AnnotationError,
    AuthenticationError,
    AuthorizationError,
    PocscreenError,
    RecordNotFoundError,
)
from ..vault.records import Demographics, PatientRecord, ScreeningEntry
from ..vault.store import STORE_FORMAT_VERSION, RecordStore
from .config import ServiceConfig
from .export import export_anonymized
from .screening import ScreeningRequest, ScreeningStageError, run_screening
from .sync import PROTOCOL_VERSION, SyncEngine, sync_with_remote

logger = logging.getLogger(__name__)

DEFAULT_PAGE_SIZE = 50


@dataclass
class ServiceContext:
    store: RecordStore
    access: AccessControl
    engine: SyncEngine
    config: ServiceConfig
    model: object | None = None
    model_version: str = ""
    clock: Callable[[], float] = time.time
    sync_lock: threading.Lock = field(default_factory=threading.Lock)


class LoginBody(BaseModel):
    username: str
    password: str


class DemographicsBody(BaseModel):
    name: str = ""
    birth_date: str = ""
    sex: str = ""
    contact: str = ""

    def to_domain(self) -> Demographics:
        return Demographics(self.name, self.birth_date, self.sex, self.contact)


class PatientCreateBody(BaseModel):
    demographics: DemographicsBody = DemographicsBody()


class PatientUpdateBody(BaseModel):
    demographics: DemographicsBody
    revision: int


class FeatureScreeningBody(BaseModel):
    features: list[float]
    model_version: str = ""


class SyncRunBody(BaseModel):
    remote_url: str = ""


class SyncExchangeBody(BaseModel):
    protocol_version: int
    device_id: str
    watermarks: dict[str, int]
    entries: list[dict]


def _record_json(record: PatientRecord) -> dict:
    return record.to_dict()


def create_app(ctx: ServiceContext) -> FastAPI:
    app = FastAPI(title="pocscreen", docs_url=None, redoc_url=None)

    # -- error shaping ---------------------------------------------------------

    @app.exception_handler(HTTPException)
    async def http_error(request: Request, exc: HTTPException):
        return JSONResponse(
            {"error": exc.detail}, status_code=exc.status_code, headers=exc.headers
        )

    @app.exception_handler(RequestValidationError)
    async def validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse({"error": "validation failed", "detail": exc.errors()}, 422)

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception):
        incident = uuid.uuid4().hex[:12]
        logger.exception("incident %s: unhandled error on %s", incident, request.url.path)
        return JSONResponse({"error": "internal error", "incident": incident}, 500)

    # -- auth plumbing ---------------------------------------------------------

    def require(permission: str):
        def dependency(request: Request) -> AuthContext:
            header = request.headers.get("authorization", "")
            if not header.lower().startswith("bearer "):
                raise HTTPException(401, "authentication required")
            token = header[7:].strip()
            try:
                return ctx.access.authorize(token, permission)
            except AuthorizationError:
                raise HTTPException(403, "access denied")

        return Depends(dependency)

    def reject_during_sync():
        if ctx.sync_lock.locked():
            raise HTTPException(
                503, "sync in progress; retry shortly", headers={"Retry-After": "1"}
            )

    # -- endpoints ---------------------------------------------------------------

    @app.post("/auth/login")
    def login(body: LoginBody):
        try:
            session = ctx.access.authenticate(body.username, body.password)
        except AuthenticationError:
            raise HTTPException(401, "invalid credentials")
        return {"token": session.token, "expires_at": session.expires_at}

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "model_version": ctx.model_version,
            "store_version": STORE_FORMAT_VERSION,
        }

    @app.post("/patients", status_code=201)
    def create_patient(body: PatientCreateBody, auth: AuthContext = require("record.write")):
        reject_during_sync()
        record = PatientRecord(uuid.uuid4().hex, body.demographics.to_domain())
        ctx.engine.record_put(record, ctx.clock())
        return _record_json(record)

    @app.get("/patients")
    def list_patients(
        limit: int = DEFAULT_PAGE_SIZE,
        offset: int = 0,
        auth: AuthContext = require("record.read"),
    ):
        if limit < 1 or offset < 0:
            raise HTTPException(422, "limit must be >= 1 and offset >= 0")
        ids = ctx.store.list_ids()
        page = ids[offset : offset + limit]
        patients = []
        for pid in page:
            record = ctx.store.get_record(pid)
            patients.append(
                {
                    "patient_id": pid,
                    "name": record.demographics.name,
                    "revision": record.revision,
                    "n_screenings": len(record.screenings),
                }
            )
        return {"patients": patients, "total": len(ids), "limit": limit, "offset": offset}

    def _load(patient_id: str) -> PatientRecord:
        try:
            return ctx.store.get_record(patient_id)
        except (RecordNotFoundError, ValueError):
            raise HTTPException(404, f"unknown patient {patient_id}")

    @app.get("/patients/{patient_id}")
    def get_patient(patient_id: str, auth: AuthContext = require("record.read")):
        return _record_json(_load(patient_id))

    @app.put("/patients/{patient_id}")
    def update_patient(
        patient_id: str,
        body: PatientUpdateBody,
        auth: AuthContext = require("record.write"),
    ):
        reject_during_sync()
        record = _load(patient_id)
        if body.revision != record.revision:
            raise HTTPException(
                409,
                f"version conflict: expected revision {record.revision}, got {body.revision}",
            )
        updated = PatientRecord(
            record.patient_id,
            body.demographics.to_domain(),
            record.encounters,
            record.screenings,
            record.revision + 1,
            record.extra,
        )
        ctx.engine.record_put(updated, ctx.clock())
        return _record_json(updated)

    @app.delete("/patients/{patient_id}")
    def delete_patient(patient_id: str, auth: AuthContext = require("record.write")):
        reject_during_sync()
        _load(patient_id)
        ctx.engine.record_delete(patient_id, ctx.clock())
        return {"deleted": patient_id}

    @app.post("/patients/{patient_id}/screenings", status_code=201)
    async def submit_screening(
        patient_id: str,
        request: Request,
        auth: AuthContext = require("screening.run"),
    ):
        reject_during_sync()
        record = _load(patient_id)
        if ctx.model is None:
            raise HTTPException(503, "no model loaded")
        content_type = request.headers.get("content-type", "")
        try:
            if content_type.startswith("multipart/form-data"):
                screening_request, image_ref = await _multipart_request(patient_id, request)
            else:
                body = FeatureScreeningBody.model_validate(await request.json())
                features = np.asarray(body.features, dtype=np.float64)
                if features.size == imaging.N_FEATURES:
                    features = imaging.FeatureVector(features)
                screening_request = ScreeningRequest(
                    patient_id, features=features, model_version=body.model_version
                )
                image_ref = ""
        except (ValueError, AnnotationError) as exc:
            raise HTTPException(422, f"invalid screening submission: {exc}")

        try:
            result, features_used = run_screening(screening_request, ctx.model, ctx.model_version)
        except ScreeningStageError as exc:
            raise HTTPException(422, f"{exc.stage}: {exc}")
        except PocscreenError as exc:
            raise HTTPException(422, str(exc))

        feature_values = (
            features_used.values
            if isinstance(features_used, imaging.FeatureVector)
            else np.asarray(features_used)
        )
        entry = ScreeningEntry(
            timestamp=result.timestamp,
            image_ref=image_ref,
            features=tuple(float(v) for v in feature_values),
            predicted_hb_gdl=result.predicted_hb_gdl,
            remark=result.remark,
            severity=result.severity,
            model_version=result.model_version,
            latency_ms=result.latency_ms,
        )
        updated = record.with_screening(entry)
        ctx.engine.record_put(updated, ctx.clock())
        stored = updated.screenings[-1]
        return {"patient_id": patient_id, "screening": stored.to_dict()}

    async def _multipart_request(patient_id: str, request: Request):
        form = await request.form()
        upload = form.get("image")
        annotations_part = form.get("annotations")
        if upload is None or annotations_part is None:
            raise ValueError("multipart submissions need `image` and `annotations` parts")
        image_bytes = await upload.read() if hasattr(upload, "read") else bytes(upload)
        if hasattr(annotations_part, "read"):
            annotation_text = (await annotations_part.read()).decode("utf-8")
        else:
            annotation_text = str(annotations_part)
        try:
            from PIL import Image

            decoded = Image.open(io.BytesIO(image_bytes)).convert("RGB")
        except Exception as exc:
            raise ValueError(f"image decode failed: {exc}")
        buffer = imaging.ImageBuffer(np.asarray(decoded, dtype=np.uint8))
        boxes = imaging.parse_annotations(annotation_text)
        model_version = str(form.get("model_version", ""))
        ref = f"upload:{sha256(image_bytes).hexdigest()[:12]}"
        return (
            ScreeningRequest(
                patient_id, image=buffer, annotations=boxes, model_version=model_version
            ),
            ref,
        )

    @app.get("/patients/{patient_id}/screenings")
    def list_screenings(patient_id: str, auth: AuthContext = require("record.read")):
        record = _load(patient_id)
        return {
            "patient_id": patient_id,
            "screenings": [s.to_dict() for s in record.screenings],
        }

    @app.get("/export/anonymized")
    def export(auth: AuthContext = require("export.run")):
        key = ctx.config.export_key.encode("utf-8")
        if not key:
            raise HTTPException(503, "no export key configured")

        def stream():
            for line in export_anonymized(ctx.store, key, ctx.clock):
                yield line + "\n"

        return StreamingResponse(stream(), media_type="text/csv")

    @app.post("/sync/run")
    def sync_run(body: SyncRunBody, auth: AuthContext = require("sync.run")):
        remote = body.remote_url or ctx.config.sync_remote_url
        if not remote:
            raise HTTPException(422, "no sync remote configured")
        if not ctx.sync_lock.acquire(blocking=False):
            raise HTTPException(503, "sync already running", headers={"Retry-After": "1"})
        try:
            report = sync_with_remote(
                ctx.engine, remote, ctx.config.sync_username, ctx.config.sync_password
            )
        finally:
            ctx.sync_lock.release()
        return report.to_dict()

    @app.get("/sync/watermarks")
    def sync_watermarks(auth: AuthContext = require("sync.run")):
        return {
            "protocol_version": PROTOCOL_VERSION,
            "device_id": ctx.store.device_id,
            "watermarks": ctx.engine.log.watermarks(),
        }

    @app.post("/sync/exchange")
    def sync_exchange(body: SyncExchangeBody, auth: AuthContext = require("sync.run")):
        if body.protocol_version != PROTOCOL_VERSION:
            raise HTTPException(
                409,
                f"sync protocol mismatch: got v{body.protocol_version}, "
                f"local v{PROTOCOL_VERSION}",
            )
        if not ctx.sync_lock.acquire(blocking=False):
            raise HTTPException(503, "sync already running", headers={"Retry-After": "1"})
        try:
            stats = ctx.engine.apply_remote(body.entries)
            outgoing = ctx.engine.collect_for_peer(body.watermarks)
        finally:
            ctx.sync_lock.release()
        return {
            "protocol_version": PROTOCOL_VERSION,
            "device_id": ctx.store.device_id,
            "entries": outgoing,
            "applied": stats.applied,
            "conflicts": stats.conflicts,
            "archived": stats.archived,
            "skipped": stats.skipped,
        }

    return app
