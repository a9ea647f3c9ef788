"""Hemoglobin labeling and KDE-weighted undersampling.

Class rebalancing keeps a subset of the original samples: within each
over-represented class, samples in dense hemoglobin ranges are down-weighted
(weight inversely proportional to a Gaussian KDE density) and the target
count is drawn without replacement. The draw algorithm is sequential
cumulative-weight selection fed by NumPy's PCG64 generator, so results are
reproducible from (input order, seed).
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .imaging import FeatureVector

#: Anemia threshold, g/dL: anemic iff hb < 12.0 (strict).
ANEMIA_THRESHOLD_GDL = 12.0

#: WHO-style severity cutoffs, g/dL: severe < 8.0, moderate [8.0, 11.0),
#: mild [11.0, 12.0), non-anemic >= 12.0.
SEVERE_BELOW_GDL = 8.0
MODERATE_BELOW_GDL = 11.0
MILD_BELOW_GDL = ANEMIA_THRESHOLD_GDL

#: Physiological sanity bounds for laboratory hemoglobin, g/dL (exclusive).
HB_MIN_GDL = 0.0
HB_MAX_GDL = 25.0

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class RemarkClass(enum.Enum):
    ANEMIC = "anemic"
    NON_ANEMIC = "non_anemic"


class SeverityClass(enum.Enum):
    NON_ANEMIC = "non_anemic"
    MILD = "mild"
    MODERATE = "moderate"
    SEVERE = "severe"


@dataclass(frozen=True, eq=False)  # identity equality: features may be arrays
class LabeledSample:
    """One training unit: a feature vector plus its laboratory hemoglobin."""

    features: FeatureVector | np.ndarray
    hb_gdl: float

    def __post_init__(self):
        _check_hb(self.hb_gdl)

    @property
    def feature_values(self) -> np.ndarray:
        if isinstance(self.features, FeatureVector):
            return self.features.values
        return np.asarray(self.features, dtype=np.float64)


@dataclass(frozen=True)
class ClassBalance:
    label: str
    before: int
    after: int
    bandwidth: float | None  # None when the class was kept whole


@dataclass(frozen=True)
class BalanceReport:
    classes: tuple[ClassBalance, ...]
    seed: int
    mode: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "mode": self.mode,
                "classes": [
                    {
                        "class": c.label,
                        "before": c.before,
                        "after": c.after,
                        "bandwidth": c.bandwidth,
                    }
                    for c in self.classes
                ],
            },
            sort_keys=True,
        )

    def to_csv(self) -> str:
        lines = ["class,before,after,bandwidth,seed"]
        for c in self.classes:
            bw = "" if c.bandwidth is None else repr(c.bandwidth)
            lines.append(f"{c.label},{c.before},{c.after},{bw},{self.seed}")
        return "\n".join(lines) + "\n"


def _check_hb(hb_gdl: float) -> float:
    if not (HB_MIN_GDL < hb_gdl < HB_MAX_GDL) or not math.isfinite(hb_gdl):
        raise ValueError(
            f"hemoglobin {hb_gdl!r} g/dL outside sanity bounds "
            f"({HB_MIN_GDL}, {HB_MAX_GDL})"
        )
    return float(hb_gdl)


def remark_of(hb_gdl: float) -> RemarkClass:
    """Anemic iff hb < 12.0 g/dL (strict inequality)."""
    _check_hb(hb_gdl)
    return RemarkClass.ANEMIC if hb_gdl < ANEMIA_THRESHOLD_GDL else RemarkClass.NON_ANEMIC


def severity_of(hb_gdl: float) -> SeverityClass:
    """Grade severity by the configured cutoffs."""
    _check_hb(hb_gdl)
    if hb_gdl < SEVERE_BELOW_GDL:
        return SeverityClass.SEVERE
    if hb_gdl < MODERATE_BELOW_GDL:
        return SeverityClass.MODERATE
    if hb_gdl < MILD_BELOW_GDL:
        return SeverityClass.MILD
    return SeverityClass.NON_ANEMIC


def kde_density(values: Sequence[float], bandwidth: float, x: float) -> float:
    """Gaussian KDE: (1/(n*h)) * sum(phi((x - v_i)/h))."""
    if bandwidth <= 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    vals = np.asarray(values, dtype=np.float64)
    if vals.size == 0:
        raise ValueError("at least one value is required")
    u = (x - vals) / bandwidth
    return float(np.exp(-0.5 * u * u).sum() / (vals.size * bandwidth * _SQRT_2PI))


def _kde_density_many(values: np.ndarray, bandwidth: float, xs: np.ndarray) -> np.ndarray:
    u = (xs[:, None] - values[None, :]) / bandwidth
    return np.exp(-0.5 * u * u).sum(axis=1) / (values.size * bandwidth * _SQRT_2PI)


def silverman_bandwidth(values: Sequence[float]) -> float:
    """Silverman's rule of thumb: 0.9 * min(sigma, IQR/1.34) * n^(-1/5).

    sigma is the sample standard deviation. When the IQR collapses to zero on
    non-constant data, sigma alone sets the scale.
    """
    vals = np.asarray(values, dtype=np.float64)
    n = vals.size
    if n < 2:
        raise ValueError("at least two values are required")
    sigma = float(vals.std(ddof=1))
    if sigma == 0.0:
        raise ValueError("constant values have no bandwidth scale")
    q25, q75 = np.percentile(vals, [25, 75])
    iqr = float(q75 - q25)
    scale = min(sigma, iqr / 1.34) if iqr > 0 else sigma
    return 0.9 * scale * n ** (-0.2)


def _weighted_sample_without_replacement(
    rng: np.random.Generator, weights: Sequence[float], k: int
) -> list[int]:
    """Sequential weighted draw: renormalize over the remainder at each step.

    One uniform variate is consumed per draw, walked against the cumulative
    weights of the not-yet-chosen items.
    """
    remaining = list(range(len(weights)))
    w = [float(x) for x in weights]
    chosen: list[int] = []
    for _ in range(k):
        total = sum(w[i] for i in remaining)
        u = rng.random() * total
        acc = 0.0
        pick = len(remaining) - 1
        for pos, idx in enumerate(remaining):
            acc += w[idx]
            if u < acc:
                pick = pos
                break
        chosen.append(remaining.pop(pick))
    return chosen


def kde_undersample_indices(
    hb_values: Sequence[float],
    labeler: Callable[[float], enum.Enum],
    seed: int,
    mode: str = "",
) -> tuple[list[int], BalanceReport]:
    """Pick a class-balanced subset of indices; see kde_undersample."""
    hb = [(i, _check_hb(v)) for i, v in enumerate(hb_values)]
    if not hb:
        raise ValueError("no samples to balance")
    label_cls = type(labeler(hb[0][1]))
    by_class: dict[enum.Enum, list[tuple[int, float]]] = {m: [] for m in label_cls}
    for i, v in hb:
        by_class[labeler(v)].append((i, v))

    empties = [m.value for m in label_cls if not by_class[m]]
    if empties:
        raise ValueError(f"class {empties[0]!r} has no samples; cannot balance")

    target = min(len(v) for v in by_class.values())
    rng = np.random.default_rng(seed)
    kept: list[int] = []
    rows: list[ClassBalance] = []
    for member in label_cls:  # fixed enum order keeps the draw deterministic
        group = by_class[member]
        if len(group) == target:
            kept.extend(i for i, _ in group)
            rows.append(ClassBalance(member.value, len(group), target, None))
            continue
        values = np.array([v for _, v in group])
        if np.all(values == values[0]):
            # Identical hb values: density is flat across the class anyway.
            bandwidth = None
            weights = np.ones(len(group))
        else:
            bandwidth = silverman_bandwidth(values)
            density = _kde_density_many(values, bandwidth, values)
            weights = 1.0 / density
        picks = _weighted_sample_without_replacement(rng, weights, target)
        kept.extend(group[p][0] for p in picks)
        rows.append(ClassBalance(member.value, len(group), target, bandwidth))

    kept.sort()  # preserve original sample order in the output
    return kept, BalanceReport(tuple(rows), seed, mode)


def kde_undersample(
    samples: Sequence[LabeledSample],
    labeler: Callable[[float], enum.Enum],
    seed: int,
) -> tuple[list[LabeledSample], BalanceReport]:
    """Equalize class counts by KDE-weighted undersampling.

    The target count is the smallest class size. Larger classes are thinned by
    drawing without replacement with weights proportional to 1/density, where
    the density is a Gaussian KDE (Silverman bandwidth) over that class's
    hemoglobin values. The output is a subset of the input, in input order.
    """
    mode = "remark" if labeler is remark_of else "severity" if labeler is severity_of else ""
    kept, report = kde_undersample_indices(
        [s.hb_gdl for s in samples], labeler, seed, mode=mode
    )
    return [samples[i] for i in kept], report
