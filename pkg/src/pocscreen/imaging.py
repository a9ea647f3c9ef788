"""Fingernail image features: ROI cropping, white balance, CIELAB statistics.

All functions are pure; images are immutable once constructed. The feature
vector layout is a versioned contract (FEATURE_CONTRACT_VERSION): models
trained against one version refuse vectors from another.
"""

from __future__ import annotations

import enum
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AnnotationError, ImagingError

logger = logging.getLogger(__name__)

FEATURE_CONTRACT_VERSION = 1

REGIONS = ("nail", "skin")
CHANNELS = ("r", "g", "b", "lab_l", "lab_a", "lab_b")
STATS = ("mean", "std", "skew", "p10", "p50", "p90")

#: Feature order contract, version 1: region-major, then channel, then statistic.
FEATURE_NAMES: tuple[str, ...] = tuple(
    f"{region}_{channel}_{stat}"
    for region in REGIONS
    for channel in CHANNELS
    for stat in STATS
)

N_FEATURES = len(FEATURE_NAMES)  # 2 regions x 6 channels x 6 stats = 72

# sRGB -> XYZ matrix (D65, 2 degree observer). The reference white is the
# image of linear RGB (1,1,1) under this matrix, so pure white maps to
# exactly (100, 0, 0).
_SRGB_TO_XYZ = np.array(
    [
        [0.4124, 0.3576, 0.1805],
        [0.2126, 0.7152, 0.0722],
        [0.0193, 0.1192, 0.9505],
    ]
)
_WHITE_XYZ = _SRGB_TO_XYZ.sum(axis=1)
_LAB_DELTA = 6.0 / 29.0
_LAB_DELTA3 = _LAB_DELTA**3
_LAB_LINEAR_SLOPE = 1.0 / (3.0 * _LAB_DELTA**2)
# matrix already scaled by the reference white: (lin @ _XYZ_NORM_T) = XYZ/white
_XYZ_NORM_T = (_SRGB_TO_XYZ / _WHITE_XYZ[:, None]).T

# 8-bit sRGB -> linear lookup table (exact double precision per code value).
_GAMMA_LUT = np.array(
    [
        (c / 255.0) / 12.92
        if (c / 255.0) <= 0.04045
        else (((c / 255.0) + 0.055) / 1.055) ** 2.4
        for c in range(256)
    ]
)


class RegionClass(enum.Enum):
    NAIL = "nail"
    SKIN = "skin"
    REFERENCE = "reference"


_CLASS_IDS = {0: RegionClass.NAIL, 1: RegionClass.SKIN, 2: RegionClass.REFERENCE}


@dataclass(frozen=True)
class ImageBuffer:
    """Decoded 8-bit RGB image, row-major. Codec decoding happens at the edges."""

    pixels: np.ndarray  # shape (height, width, 3), uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (h, w, 3) pixel array, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if px.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {px.dtype}")
        px = px.copy()
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class BoundingBox:
    """Normalized center-format box, fractions of image dimensions."""

    region_class: RegionClass
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("cx", "cy", "w", "h"):
            v = getattr(self, name)
            if not math.isfinite(v) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v!r} outside [0, 1]")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box width and height must be positive")


@dataclass(frozen=True)
class RoiPatch:
    """Pixels cropped from one annotated region."""

    region_class: RegionClass
    pixels: np.ndarray  # shape (h, w, 3), uint8

    def __post_init__(self):
        if self.pixels.size == 0:
            raise ValueError("patch must be non-empty")


@dataclass(frozen=True)
class FeatureVector:
    """72 color statistics over the nail and skin pools (contract version 1)."""

    values: np.ndarray
    contract_version: int = FEATURE_CONTRACT_VERSION
    names: tuple[str, ...] = field(default=FEATURE_NAMES, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.names),):
            raise ValueError(
                f"expected {len(self.names)} features, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("feature vector contains NaN or infinity")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values.tolist()))


def parse_annotations(text: str) -> list[BoundingBox]:
    """Parse detector-export annotation text: `class_id cx cy w h` per line.

    class_id 0=nail, 1=skin, 2=reference. Blank lines and `#` comments are
    ignored. Raises AnnotationError with the offending line number.
    """
    boxes: list[BoundingBox] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise AnnotationError(
                f"expected 5 fields `class cx cy w h`, got {len(parts)}", lineno
            )
        try:
            class_id = int(parts[0])
        except ValueError:
            raise AnnotationError(f"class id {parts[0]!r} is not an integer", lineno)
        if class_id not in _CLASS_IDS:
            raise AnnotationError(f"unknown class id {class_id}", lineno)
        try:
            cx, cy, w, h = (float(p) for p in parts[1:])
        except ValueError:
            raise AnnotationError("coordinates must be decimal numbers", lineno)
        try:
            boxes.append(BoundingBox(_CLASS_IDS[class_id], cx, cy, w, h))
        except ValueError as exc:
            raise AnnotationError(str(exc), lineno)
    return boxes


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _box_bounds(image: ImageBuffer, box: BoundingBox) -> tuple[int, int, int, int]:
    """Pixel bounds [x0, x1) x [y0, y1): half-up rounding, clamped to the image."""
    x0 = _round_half_up((box.cx - box.w / 2) * image.width)
    x1 = _round_half_up((box.cx + box.w / 2) * image.width)
    y0 = _round_half_up((box.cy - box.h / 2) * image.height)
    y1 = _round_half_up((box.cy + box.h / 2) * image.height)
    x0, x1 = max(0, x0), min(image.width, x1)
    y0, y1 = max(0, y0), min(image.height, y1)
    return x0, x1, y0, y1


def crop_roi(image: ImageBuffer, box: BoundingBox) -> RoiPatch:
    """Crop the pixels inside a normalized box."""
    x0, x1, y0, y1 = _box_bounds(image, box)
    if x1 <= x0 or y1 <= y0:
        raise ImagingError(
            f"box {box.region_class.value} ({box.cx}, {box.cy}, {box.w}, {box.h}) "
            f"rounds to zero area on a {image.width}x{image.height} image"
        )
    return RoiPatch(box.region_class, image.pixels[y0:y1, x0:x1].copy())


def white_balance(
    image: ImageBuffer, reference: BoundingBox | Sequence[BoundingBox]
) -> ImageBuffer:
    """Scale each channel so the reference region's channel means become 255.

    Multiple reference boxes pool their pixels. Output channels are clamped to
    [0, 255] and rounded half-up. For a near-uniform reference (a calibration
    card) the operation is idempotent to within one unit per channel; a
    reference whose scaled values straddle saturation weakens that bound.
    """
    refs = [reference] if isinstance(reference, BoundingBox) else list(reference)
    if not refs:
        raise ImagingError("at least one reference box is required")
    pools = []
    for box in refs:
        x0, x1, y0, y1 = _box_bounds(image, box)
        if x1 <= x0 or y1 <= y0:
            raise ImagingError("reference box rounds to zero area")
        pools.append(image.pixels[y0:y1, x0:x1].reshape(-1, 3))
    ref_pixels = np.concatenate(pools, axis=0)
    means = ref_pixels.astype(np.float64).mean(axis=0)
    if np.any(means == 0):
        raise ImagingError("reference channel mean is zero; cannot normalize")
    scale = 255.0 / means
    scaled = image.pixels * scale  # upcasts to float64
    np.clip(scaled, 0.0, 255.0, out=scaled)
    scaled += 0.5
    np.floor(scaled, out=scaled)
    return ImageBuffer(scaled.astype(np.uint8))


def rgb_to_lab(pixel: tuple[float, float, float]) -> tuple[float, float, float]:
    """Convert one 8-bit sRGB triplet to CIELAB (D65), double precision."""
    r, g, b = pixel
    for v in (r, g, b):
        if not 0 <= v <= 255:
            raise ValueError(f"channel value {v} outside [0, 255]")
    lab = _lab_from_linear(
        np.array([[_srgb_component_to_linear(v) for v in (r, g, b)]])
    )[0]
    return float(lab[0]), float(lab[1]), float(lab[2])


def rgb_to_lab_array(pixels: np.ndarray) -> np.ndarray:
    """Vectorized CIELAB conversion for a (n, 3) uint8 pixel array."""
    return np.column_stack(_lab_channels(pixels, _workspace_for(pixels.shape[0])))


def _srgb_component_to_linear(c8: float) -> float:
    c = c8 / 255.0
    return c / 12.92 if c <= 0.04045 else ((c + 0.055) / 1.055) ** 2.4


_CHUNK = 65536  # pixels per conversion chunk; keeps intermediates cache-sized

#: Pools up to this many pixels reuse per-thread buffers; larger ones allocate
#: fresh (keeps the per-thread cache bounded to ~20 MB).
_WORKSPACE_PIXEL_CAP = 1 << 19

_TLS = threading.local()


class _Workspace:
    """Reusable per-thread arrays: fresh multi-megabyte temporaries per call
    cost more in page faults than the arithmetic they hold."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.planes = np.empty((3, capacity))
        self.scratch_a = np.empty(capacity)
        self.scratch_b = np.empty(capacity)
        self.int_scratch = np.empty(capacity, dtype=np.intp)  # bincount input
        self.u8_channels = np.empty((3, capacity), dtype=np.uint8)
        width = min(capacity, _CHUNK)
        # channel-major chunk buffers: every arithmetic pass runs contiguous
        self.chunk_lin = np.empty((3, width))
        self.chunk_tn = np.empty((3, width))
        self.chunk_f = np.empty((3, width))
        self.chunk_mask = np.empty((3, width), dtype=bool)
        self.chunk_tmp = np.empty(width)


def _workspace_for(n: int) -> _Workspace:
    if n > _WORKSPACE_PIXEL_CAP:
        return _Workspace(n)
    ws = getattr(_TLS, "workspace", None)
    if ws is None or ws.capacity < n:
        ws = _Workspace(max(n, _CHUNK))
        _TLS.workspace = ws
    return ws


def _lab_channels(
    pixels: np.ndarray, ws: _Workspace
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(L*, a*, b*) as contiguous planes inside the workspace; the views are
    valid until the next call that borrows the same workspace. np.cbrt covers
    the whole range, then near-black pixels on the linear segment are patched.
    """
    n = pixels.shape[0]
    planes = ws.planes[:, :n]
    for start in range(0, n, _CHUNK):
        end = min(n, start + _CHUNK)
        k = end - start
        lin, tn, f = ws.chunk_lin[:, :k], ws.chunk_tn[:, :k], ws.chunk_f[:, :k]
        source = pixels[start:end]
        for c in range(3):
            np.take(_GAMMA_LUT, source[:, c], out=lin[c])
        # 3x3 transform as explicit multiply-adds: BLAS worker threads cost
        # more in wake/sleep churn than these tiny products save
        tmp = ws.chunk_tmp[:k]
        for i in range(3):
            row = tn[i]
            np.multiply(lin[0], _XYZ_NORM_T[0, i], out=row)
            np.multiply(lin[1], _XYZ_NORM_T[1, i], out=tmp)
            row += tmp
            np.multiply(lin[2], _XYZ_NORM_T[2, i], out=tmp)
            row += tmp
        np.cbrt(tn, out=f)
        small = ws.chunk_mask[:, :k]
        np.less_equal(tn, _LAB_DELTA3, out=small)
        if small.any():
            f[small] = tn[small] * _LAB_LINEAR_SLOPE + 4.0 / 29.0
        out_l, out_a, out_b = (planes[i, start:end] for i in range(3))
        np.multiply(f[1], 116.0, out=out_l)
        out_l -= 16.0
        np.subtract(f[0], f[1], out=out_a)
        out_a *= 500.0
        np.subtract(f[1], f[2], out=out_b)
        out_b *= 200.0
    return planes[0], planes[1], planes[2]


def _lab_from_linear(lin: np.ndarray) -> np.ndarray:
    tn = lin @ _XYZ_NORM_T
    f = np.cbrt(tn)
    small = tn <= _LAB_DELTA3
    if small.any():
        f[small] = tn[small] * _LAB_LINEAR_SLOPE + 4.0 / 29.0
    out = np.empty_like(f)
    out[:, 0] = 116.0 * f[:, 1] - 16.0
    out[:, 1] = 500.0 * (f[:, 0] - f[:, 1])
    out[:, 2] = 200.0 * (f[:, 1] - f[:, 2])
    return out


def _pool_pixels(patches: Iterable[RoiPatch]) -> np.ndarray:
    flats = [p.pixels.reshape(-1, 3) for p in patches]
    if not flats:
        return np.empty((0, 3), dtype=np.uint8)
    if len(flats) == 1:
        return flats[0]  # reshape of a contiguous patch is a free view
    return np.concatenate(flats, axis=0)


def _lerp(a: float, b: float, t: float) -> float:
    # numpy's percentile interpolation form, kept for bit agreement
    return a + t * (b - a) if t < 0.5 else b - (b - a) * (1.0 - t)


def _percentiles_exact(
    values: np.ndarray, work: np.ndarray | None = None, qs=(10.0, 50.0, 90.0)
) -> list[float]:
    """Linear-interpolated percentiles identical to np.percentile, computed
    with narrowed single-pivot partitions (much cheaper on large pools).
    qs must be ascending; `work` is an optional reusable scratch buffer."""
    n = values.size
    if n < 2048:
        ordered = np.sort(values)
        out = []
        for q in qs:
            pos = (n - 1) * q / 100.0
            lo = math.floor(pos)
            frac = pos - lo
            a = float(ordered[lo])
            out.append(a if frac == 0.0 else _lerp(a, float(ordered[lo + 1]), frac))
        return out
    positions = [(n - 1) * q / 100.0 for q in qs]
    cuts = [math.floor(p) for p in positions]
    if any(b - a < 2 for a, b in zip(cuts, cuts[1:])):
        ordered = np.sort(values)  # cuts too close for disjoint narrowing
        return [
            float(ordered[lo]) if p == lo else _lerp(float(ordered[lo]), float(ordered[lo + 1]), p - lo)
            for p, lo in zip(positions, cuts)
        ]
    if work is None:
        work = np.empty(n)
    work = work[:n]
    np.copyto(work, values)

    # median first: each remaining percentile then partitions a disjoint
    # sub-range, so no pass disturbs another's placed order statistics
    mid = len(qs) // 2
    results: dict[int, tuple[float, float]] = {}

    def order_stat_pair(lo: int, start: int, stop: int) -> tuple[float, float]:
        # [start, stop) holds exactly the order statistics start..stop-1
        work[start:stop].partition(lo - start)
        a = float(work[lo])
        b = float(work[lo + 1 : stop].min()) if lo + 1 < stop else a
        return a, b

    results[mid] = order_stat_pair(cuts[mid], 0, n)
    for i in range(mid - 1, -1, -1):
        results[i] = order_stat_pair(cuts[i], 0, cuts[i + 1])
    for i in range(mid + 1, len(qs)):
        results[i] = order_stat_pair(cuts[i], cuts[i - 1] + 1, n)
    out = []
    for i, p in enumerate(positions):
        frac = p - cuts[i]
        a, b = results[i]
        out.append(a if frac == 0.0 else _lerp(a, b, frac))
    return out


def _skew_from_moments(m2: float, m3: float) -> float:
    # zero-variance pool: skewness defined as 0 to keep vectors finite
    return m3 / m2**1.5 if m2 > 0.0 else 0.0


def _uint8_channel_stats(channel: np.ndarray, int_scratch: np.ndarray | None = None) -> list[float]:
    """mean, population std, skewness, p10/p50/p90 for one 8-bit channel,
    computed exactly from its 256-bin histogram."""
    if int_scratch is not None:
        # bincount casts uint8 input to intp internally; reuse a buffer for it
        view = int_scratch[: channel.size]
        np.copyto(view, channel)
        counts = np.bincount(view, minlength=256).astype(np.float64)
    else:
        counts = np.bincount(channel, minlength=256).astype(np.float64)
    n = channel.size
    values = np.arange(256, dtype=np.float64)
    mean = float(counts @ values) / n
    centered = values - mean
    sq = centered * centered
    m2 = float(counts @ sq) / n
    m3 = float(counts @ (sq * centered)) / n
    cumulative = np.cumsum(counts)
    pcts = []
    for q in (10.0, 50.0, 90.0):
        pos = (n - 1) * q / 100.0
        lo = math.floor(pos)
        frac = pos - lo
        a = float(np.searchsorted(cumulative, lo, side="right"))
        if frac == 0.0:
            pcts.append(a)
        else:
            b = float(np.searchsorted(cumulative, lo + 1, side="right"))
            pcts.append(_lerp(a, b, frac))
    return [mean, math.sqrt(m2), _skew_from_moments(m2, m3), *pcts]


def _float_channel_stats(
    values: np.ndarray, scratch: tuple[np.ndarray, np.ndarray] | None = None
) -> list[float]:
    """Same statistic set for a contiguous float channel (the CIELAB planes)."""
    n = values.size
    mean = float(values.mean())
    if scratch is None:
        centered = values - mean
        squared = centered * centered
        work = None
    else:
        centered, squared = scratch[0][:n], scratch[1][:n]
        np.subtract(values, mean, out=centered)
        np.multiply(centered, centered, out=squared)
        work = scratch[1]
    m2 = float(squared.sum()) / n
    np.multiply(squared, centered, out=squared)
    m3 = float(squared.sum()) / n
    skew = _skew_from_moments(m2, m3)
    # squared doubles as the percentile scratch once the moments are done
    return [mean, math.sqrt(m2), skew, *_percentiles_exact(values, work)]


def _region_features(pool: np.ndarray) -> list[float]:
    n = pool.shape[0]
    ws = _workspace_for(n)
    channels = ws.u8_channels[:, :n]
    np.copyto(channels, pool.T)
    feats: list[float] = []
    for col in range(3):
        feats.extend(_uint8_channel_stats(channels[col], ws.int_scratch))
    scratch = (ws.scratch_a, ws.scratch_b)
    for lab_plane in _lab_channels(pool, ws):
        feats.extend(_float_channel_stats(lab_plane, scratch))
    return feats


def extract_features(
    nail_patches: Sequence[RoiPatch], skin_patches: Sequence[RoiPatch]
) -> FeatureVector:
    """Pool pixels per region class and compute the 72-feature contract.

    Missing skin regions mirror the nail statistics into the skin slots so
    the vector length stays fixed; this is logged as a data-quality warning.
    """
    nail_pool = _pool_pixels(nail_patches)
    if nail_pool.shape[0] == 0:
        raise ImagingError("empty nail pixel pool; at least one nail patch required")
    nail_feats = _region_features(nail_pool)

    skin_pool = _pool_pixels(skin_patches)
    if skin_pool.shape[0] == 0:
        logger.warning("no skin patches; mirroring nail statistics into skin slots")
        skin_feats = list(nail_feats)
    else:
        skin_feats = _region_features(skin_pool)

    return FeatureVector(np.array(nail_feats + skin_feats))


def split_by_region(
    boxes: Sequence[BoundingBox],
) -> dict[RegionClass, list[BoundingBox]]:
    """Group annotation boxes by region class, preserving order."""
    groups: dict[RegionClass, list[BoundingBox]] = {rc: [] for rc in RegionClass}
    for box in boxes:
        groups[box.region_class].append(box)
    return groups


def features_from_annotations(
    image: ImageBuffer, boxes: Sequence[BoundingBox]
) -> FeatureVector:
    """Full imaging pipeline: white balance (if reference present), crop, extract."""
    groups = split_by_region(boxes)
    if not groups[RegionClass.NAIL]:
        raise ImagingError("no nail region")
    if groups[RegionClass.REFERENCE]:
        image = white_balance(image, groups[RegionClass.REFERENCE])
    nails = [crop_roi(image, b) for b in groups[RegionClass.NAIL]]
    skins = [crop_roi(image, b) for b in groups[RegionClass.SKIN]]
    return extract_features(nails, skins)
