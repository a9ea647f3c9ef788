"""Screening pipeline: image + annotations (or precomputed features) to a
persisted ScreeningResult."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import imaging
from ..balance import remark_of, severity_of
from ..errors import PocscreenError
from ..models import predict


class ScreeningStageError(PocscreenError):
    """Pipeline failure with the failing stage named (maps to HTTP 422)."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(message)


@dataclass(frozen=True)
class ScreeningRequest:
    """Exactly one of (image + annotations) or features must be present."""

    patient_id: str
    image: imaging.ImageBuffer | None = None
    annotations: Sequence[imaging.BoundingBox] | None = None
    features: imaging.FeatureVector | np.ndarray | None = None
    model_version: str = ""

    def __post_init__(self):
        has_image = self.image is not None
        has_features = self.features is not None
        if has_image == has_features:
            raise ValueError("provide exactly one of (image + annotations) or features")
        if has_image and self.annotations is None:
            raise ValueError("image submissions require annotations")


@dataclass(frozen=True)
class ScreeningResult:
    predicted_hb_gdl: float
    remark: str
    severity: str
    model_version: str
    latency_ms: float
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "predicted_hb_gdl": self.predicted_hb_gdl,
            "remark": self.remark,
            "severity": self.severity,
            "model_version": self.model_version,
            "latency_ms": self.latency_ms,
            "timestamp": self.timestamp,
        }


def compute_features(
    image: imaging.ImageBuffer, annotations: Sequence[imaging.BoundingBox]
) -> imaging.FeatureVector:
    """Imaging stages with error attribution."""
    groups = imaging.split_by_region(annotations)
    if not groups[imaging.RegionClass.NAIL]:
        raise ScreeningStageError("roi", "no nail region")
    if groups[imaging.RegionClass.REFERENCE]:
        try:
            image = imaging.white_balance(image, groups[imaging.RegionClass.REFERENCE])
        except PocscreenError as exc:
            raise ScreeningStageError("white_balance", str(exc))
    try:
        nails = [imaging.crop_roi(image, b) for b in groups[imaging.RegionClass.NAIL]]
        skins = [imaging.crop_roi(image, b) for b in groups[imaging.RegionClass.SKIN]]
    except PocscreenError as exc:
        raise ScreeningStageError("crop", str(exc))
    try:
        return imaging.extract_features(nails, skins)
    except PocscreenError as exc:
        raise ScreeningStageError("features", str(exc))


def run_screening(request: ScreeningRequest, model, model_version: str) -> tuple[
    ScreeningResult, imaging.FeatureVector | np.ndarray
]:
    """Execute the pipeline and return (result, features used).

    Persistence is the caller's job so a single vault write covers the whole
    request (atomicity against the store).
    """
    start = time.perf_counter()
    if request.features is not None:
        features = request.features
    else:
        features = compute_features(request.image, request.annotations)
    try:
        hb = predict(model, features)
    except PocscreenError as exc:
        raise ScreeningStageError("predict", str(exc))
    try:
        remark = remark_of(hb)
        severity = severity_of(hb)
    except ValueError as exc:
        raise ScreeningStageError("label", str(exc))
    latency_ms = (time.perf_counter() - start) * 1e3
    result = ScreeningResult(
        predicted_hb_gdl=hb,
        remark=remark.value,
        severity=severity.value,
        model_version=request.model_version or model_version,
        latency_ms=latency_ms,
        timestamp=time.time(),
    )
    return result, features
