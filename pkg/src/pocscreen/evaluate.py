"""Evaluation protocol: metrics, agreement analysis, k-fold CV, model survey,
and latency benchmarking.

The survey mirrors the deployment protocol: hold out a seeded 20% test split,
KDE-balance the training remainder, run 7-fold CV for diagnostics, fit each
roster model on the full balanced training data, and report test metrics
sorted ascending by RMSE.
"""

from __future__ import annotations

import enum
import gc
import json
import math
import statistics
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import balance as bal
from . import models as mdl
from .balance import LabeledSample, RemarkClass, SeverityClass, remark_of, severity_of
from .errors import UndefinedMetricError

DEFAULT_TEST_FRACTION = 0.2
DEFAULT_FOLDS = 7

# Declared default hyperparameters for the linear roster entries; the survey
# protocol fixes these rather than searching them.
RIDGE_LAM = 1.0
LASSO_LAM = 0.1
ENET_LAM = 0.1
ENET_L1_RATIO = 0.5
HUBER_DELTA = 1.35
HUBER_LAM = 1e-3
RANSAC_ITERS = 100
RANSAC_THRESHOLD_GDL = 1.0
MEAN_BASELINE_LAM = 1e12  # ridge in the infinite-penalty limit: predicts mean(y)


def rmse(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    t, p = _paired(y_true, y_pred)
    return float(np.sqrt(np.mean((p - t) ** 2)))


def mae(y_true: Sequence[float], y_pred: Sequence[float]) -> float:
    t, p = _paired(y_true, y_pred)
    return float(np.mean(np.abs(p - t)))


def _paired(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if t.shape != p.shape or t.ndim != 1:
        raise ValueError(f"length mismatch: {t.shape} vs {p.shape}")
    if t.size == 0:
        raise ValueError("empty vectors")
    return t, p


def classify_from_hb(
    y_pred: Sequence[float], labeler: Callable[[float], enum.Enum]
) -> list[enum.Enum]:
    """Threshold predicted hemoglobin through a labeler."""
    return [labeler(float(v)) for v in y_pred]


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray  # counts[true][predicted]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (len(self.labels), len(self.labels)):
            raise ValueError("counts must be square over the label set")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(
        cls, y_true: Sequence[enum.Enum], y_pred: Sequence[enum.Enum], labels: Sequence[enum.Enum]
    ) -> "ConfusionMatrix":
        if len(y_true) != len(y_pred):
            raise ValueError("true/predicted label lengths differ")
        index = {lab: i for i, lab in enumerate(labels)}
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        for t, p in zip(y_true, y_pred):
            counts[index[t]][index[p]] += 1
        return cls(tuple(l.value for l in labels), counts)


def binary_metrics(cm: ConfusionMatrix) -> tuple[float, float]:
    """(sensitivity, specificity) for a 2x2 matrix with the positive class first."""
    if cm.counts.shape != (2, 2):
        raise ValueError("binary metrics need a 2x2 confusion matrix")
    tp, fn = int(cm.counts[0][0]), int(cm.counts[0][1])
    fp, tn = int(cm.counts[1][0]), int(cm.counts[1][1])
    if tp + fn == 0:
        raise UndefinedMetricError("sensitivity undefined: no positive cases")
    if tn + fp == 0:
        raise UndefinedMetricError("specificity undefined: no negative cases")
    return tp / (tp + fn), tn / (tn + fp)


@dataclass(frozen=True)
class BlandAltman:
    bias_gdl: float
    lower_gdl: float
    upper_gdl: float


def bland_altman(y_true: Sequence[float], y_pred: Sequence[float]) -> BlandAltman:
    """Bias and 1.96-sigma limits of agreement on pred - true differences."""
    t, p = _paired(y_true, y_pred)
    if t.size < 2:
        raise ValueError("Bland-Altman needs at least two pairs")
    diffs = p - t
    bias = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    return BlandAltman(bias, bias - 1.96 * sd, bias + 1.96 * sd)


@dataclass(frozen=True)
class FoldSplit:
    k: int
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]


def kfold(ids: Sequence[int], k: int = DEFAULT_FOLDS, seed: int = 0) -> list[FoldSplit]:
    """Seeded shuffle then contiguous chunks with sizes differing by at most 1."""
    ids = list(ids)
    n = len(ids)
    if n < k:
        raise ValueError(f"cannot make {k} folds from {n} ids")
    if k < 2:
        raise ValueError("k must be at least 2")
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in perm]
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for j in range(k):
        size = base + (1 if j < extra else 0)
        test = tuple(shuffled[start : start + size])
        train = tuple(shuffled[:start] + shuffled[start + size :])
        folds.append(FoldSplit(j, train, test))
        start += size
    return folds


@dataclass(frozen=True)
class MetricRow:
    model: str
    sensitivity: float
    specificity: float
    mae_gdl: float
    rmse_gdl: float

    def __post_init__(self):
        if not (0.0 <= self.sensitivity <= 1.0 and 0.0 <= self.specificity <= 1.0):
            raise ValueError("sensitivity/specificity must lie in [0, 1]")
        if self.mae_gdl > self.rmse_gdl + 1e-12:
            raise ValueError("MAE cannot exceed RMSE")


@dataclass(frozen=True)
class CvRow:
    model: str
    cv_rmse_mean: float
    cv_rmse_std: float


@dataclass(frozen=True)
class SurveyResult:
    mode: str
    seed: int
    rows: tuple[MetricRow, ...]
    cv_rows: tuple[CvRow, ...]
    test_ids: tuple[int, ...]
    train_ids: tuple[int, ...]
    balanced_ids: tuple[int, ...]
    balance_report: bal.BalanceReport
    test_hb: tuple[float, ...] = ()
    predictions: dict = field(default_factory=dict)  # model -> tuple of hb


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _roster_trainers(seed: int) -> dict[str, tuple[str, Callable]]:
    """name -> (display name, trainer(X, y, model_seed) -> model)."""
    return {
        "rf": (
            "Random Forest",
            lambda X, y, s: mdl.train_forest((X, y), mdl.TrainConfig(seed=s)),
        ),
        "gbm": (
            "Gradient Boosting",
            lambda X, y, s: mdl.train_gbm((X, y), mdl.TrainConfig(seed=s)),
        ),
        "ridge": ("Ridge", lambda X, y, s: mdl.train_ridge((X, y), RIDGE_LAM)),
        "lasso": ("Lasso", lambda X, y, s: mdl.train_lasso((X, y), LASSO_LAM)),
        "enet": (
            "ElasticNet",
            lambda X, y, s: mdl.train_elastic_net((X, y), ENET_LAM, ENET_L1_RATIO),
        ),
        "huber": ("Huber", lambda X, y, s: mdl.train_huber((X, y), HUBER_DELTA, HUBER_LAM)),
        "ransac": (
            "RANSAC",
            lambda X, y, s: mdl.train_ransac(
                (X, y), n_iters=RANSAC_ITERS, inlier_threshold=RANSAC_THRESHOLD_GDL, seed=s
            ),
        ),
        "mean": ("Mean Baseline", lambda X, y, s: mdl.train_ridge((X, y), MEAN_BASELINE_LAM)),
    }


DEFAULT_ROSTER = ("rf", "gbm", "ridge", "lasso", "enet", "huber", "ransac")


def _binary_truth(y: Sequence[float], mode: str) -> list[enum.Enum]:
    if mode == "remark":
        return [remark_of(v) for v in y]
    if mode == "severity":
        # One-vs-rest pooling: any anemia grade counts as positive.
        return [
            RemarkClass.ANEMIC
            if severity_of(v) is not SeverityClass.NON_ANEMIC
            else RemarkClass.NON_ANEMIC
            for v in y
        ]
    raise ValueError(f"unknown balance mode {mode!r}")


def run_survey(
    samples: Sequence[LabeledSample],
    balance_mode: str,
    model_roster: Sequence[str] = DEFAULT_ROSTER,
    seed: int = 0,
    k: int = DEFAULT_FOLDS,
    test_fraction: float = DEFAULT_TEST_FRACTION,
) -> SurveyResult:
    """Train and score the roster under the survey protocol; never leaks the
    held-out test ids into balancing or training."""
    if not model_roster:
        raise ValueError("model roster is empty")
    labeler = {"remark": remark_of, "severity": severity_of}.get(balance_mode)
    if labeler is None:
        raise ValueError(f"unknown balance mode {balance_mode!r}")
    trainers = _roster_trainers(seed)
    unknown = [m for m in model_roster if m not in trainers]
    if unknown:
        raise ValueError(f"unknown roster models: {unknown}")

    n = len(samples)
    perm = np.random.default_rng(_derived_seed(seed, 1)).permutation(n)
    n_test = max(1, round(test_fraction * n))
    test_ids = tuple(int(i) for i in perm[:n_test])
    train_ids = tuple(int(i) for i in perm[n_test:])

    train_hb = [samples[i].hb_gdl for i in train_ids]
    kept, report = bal.kde_undersample_indices(
        train_hb, labeler, _derived_seed(seed, 2), mode=balance_mode
    )
    balanced_ids = tuple(train_ids[j] for j in kept)
    assert not set(balanced_ids) & set(test_ids)

    X_bal = np.stack([samples[i].feature_values for i in balanced_ids])
    y_bal = np.array([samples[i].hb_gdl for i in balanced_ids])
    X_test = np.stack([samples[i].feature_values for i in test_ids])
    y_test = np.array([samples[i].hb_gdl for i in test_ids])

    folds = kfold(list(range(len(balanced_ids))), k=k, seed=_derived_seed(seed, 3))
    truth = _binary_truth(y_test, balance_mode)
    binary_labels = (RemarkClass.ANEMIC, RemarkClass.NON_ANEMIC)

    rows: list[MetricRow] = []
    cv_rows: list[CvRow] = []
    predictions: dict[str, tuple[float, ...]] = {}
    for m_idx, name in enumerate(model_roster):
        display, trainer = trainers[name]
        try:
            fold_rmses = []
            for fold in folds:
                tr = np.array(fold.train_ids)
                te = np.array(fold.test_ids)
                fm = trainer(X_bal[tr], y_bal[tr], _derived_seed(seed, 4, m_idx, fold.k))
                fold_rmses.append(rmse(y_bal[te], fm.predict_many(X_bal[te])))
            cv_rows.append(
                CvRow(
                    display,
                    statistics.fmean(fold_rmses),
                    statistics.pstdev(fold_rmses),
                )
            )
            model = trainer(X_bal, y_bal, _derived_seed(seed, 5, m_idx))
            pred = model.predict_many(X_test)
            predictions[display] = tuple(float(v) for v in pred)
            predicted = _binary_truth(pred, balance_mode)
            cm = ConfusionMatrix.from_labels(truth, predicted, binary_labels)
            sens, spec = binary_metrics(cm)
            rows.append(MetricRow(display, sens, spec, mae(y_test, pred), rmse(y_test, pred)))
        except Exception as exc:
            raise RuntimeError(f"survey failed for model {display!r}: {exc}") from exc

    rows.sort(key=lambda r: r.rmse_gdl)
    return SurveyResult(
        balance_mode,
        seed,
        tuple(rows),
        tuple(cv_rows),
        test_ids,
        train_ids,
        balanced_ids,
        report,
        tuple(float(v) for v in y_test),
        predictions,
    )


def report_csv(rows: Sequence[MetricRow]) -> str:
    lines = ["model,sensitivity,specificity,mae_gdl,rmse_gdl"]
    for r in rows:
        lines.append(
            f"{r.model},{r.sensitivity:.3f},{r.specificity:.3f},"
            f"{r.mae_gdl:.3f},{r.rmse_gdl:.3f}"
        )
    return "\n".join(lines) + "\n"


def points_csv(result: SurveyResult) -> str:
    """Per-sample (true, predicted) pairs plus Bland-Altman parameters, one
    block per model: the plotting substrate for agreement/scatter figures."""
    lines = ["model,y_true_gdl,y_pred_gdl"]
    for model, preds in result.predictions.items():
        for t, p in zip(result.test_hb, preds):
            lines.append(f"{model},{t:.4f},{p:.4f}")
    lines.append("")
    lines.append("model,bias_gdl,loa_lower_gdl,loa_upper_gdl")
    for model, preds in result.predictions.items():
        ba = bland_altman(result.test_hb, preds)
        lines.append(f"{model},{ba.bias_gdl:.4f},{ba.lower_gdl:.4f},{ba.upper_gdl:.4f}")
    return "\n".join(lines) + "\n"


def cv_report_csv(rows: Sequence[CvRow]) -> str:
    lines = ["model,cv_rmse_mean,cv_rmse_std"]
    for r in rows:
        lines.append(f"{r.model},{r.cv_rmse_mean:.3f},{r.cv_rmse_std:.3f}")
    return "\n".join(lines) + "\n"


def format_table(rows: Sequence[MetricRow]) -> str:
    """Aligned text table mirroring the survey report column order."""
    header = ("Model", "Sensitivity", "Specificity", "MAE", "RMSE")
    body = [
        (r.model, f"{r.sensitivity:.3f}", f"{r.specificity:.3f}",
         f"{r.mae_gdl:.3f}", f"{r.rmse_gdl:.3f}")
        for r in rows
    ]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(header)]
    def fmt(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    return "\n".join([fmt(header)] + [fmt(b) for b in body]) + "\n"


@dataclass(frozen=True)
class LatencyStats:
    op: str
    n_runs: int
    mean_ms: float
    p50_ms: float
    p95_ms: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "op": self.op,
                "n_runs": self.n_runs,
                "mean_ms": self.mean_ms,
                "p50_ms": self.p50_ms,
                "p95_ms": self.p95_ms,
            }
        )


def benchmark_latency(
    op_handle: Callable[[], object],
    n_warmup: int = 3,
    n_runs: int = 30,
    op_name: str = "op",
) -> LatencyStats:
    """Monotonic-clock wall timings of op_handle after warmup runs.

    The collector is paused while timing (as timeit does): GC pauses scale
    with unrelated heap size and would be attributed to the measured op.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(n_warmup):
            op_handle()
        timings = []
        for _ in range(n_runs):
            start = time.perf_counter()
            op_handle()
            timings.append((time.perf_counter() - start) * 1e3)
    finally:
        if gc_was_enabled:
            gc.enable()
    arr = np.array(timings)
    return LatencyStats(
        op_name,
        n_runs,
        float(arr.mean()),
        float(np.percentile(arr, 50)),
        float(np.percentile(arr, 95)),
    )
