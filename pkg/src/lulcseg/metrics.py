"""Confusion matrices and the per-class / aggregate accuracy metrics.

Undefined values (a zero denominator) are NaN throughout and are skipped by
the averages.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, EmptyMatrix, EmptyReportList, LabelOutOfRange, WeightSumInvalid

METRIC_NAMES = ("csi", "precision", "recall", "f1")


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """``counts[i, j]`` = pixels with ground truth ``i`` predicted as ``j``."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or (c < 0).any():
            raise ValueError("confusion counts must be a square non-negative matrix")
        object.__setattr__(self, "counts", c)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.counts).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    __hash__ = None


def _labels(x):
    return np.asarray(getattr(x, "labels", x))


def confusion(pred, truth, num_classes: int) -> ConfusionMatrix:
    pred, truth = _labels(pred), _labels(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"prediction {pred.shape} and ground truth {truth.shape} differ")
    for name, arr in (("prediction", pred), ("ground truth", truth)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise LabelOutOfRange(f"{name} labels span [{arr.min()}, {arr.max()}] for {num_classes} classes")
    return ConfusionMatrix(kernels.confusion_counts(truth, pred, num_classes))


def overall_accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise EmptyMatrix("overall accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


def _ratio(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.full(num.shape, np.nan)
    np.divide(num, den, out=out, where=den > 0)
    return out


@dataclass
class PerClass:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    csi: np.ndarray
    support: np.ndarray

    def metric(self, name: str) -> np.ndarray:
        return getattr(self, name)


def f1_from(precision, recall):
    """Harmonic mean of precision and recall."""
    return 2.0 * precision * recall / (precision + recall)


def csi_from(precision, recall):
    """CSI from precision and recall via 1/CSI = 1/P + 1/R - 1."""
    return 1.0 / (1.0 / precision + 1.0 / recall - 1.0)


def per_class(cm: ConfusionMatrix) -> PerClass:
    tp, fp, fn = cm.tp, cm.fp, cm.fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    f1 = _ratio(2.0 * precision * recall, precision + recall)
    # a class that occurs but is never hit has F1 = 0 even if precision is 0/0
    missed = (tp == 0) & (fp + fn > 0)
    f1[missed] = 0.0
    f1[np.isnan(precision) & np.isnan(recall)] = np.nan
    csi = _ratio(tp, tp + fp + fn)
    return PerClass(precision, recall, f1, csi, cm.support)


def average(values) -> float:
    """Simple mean over defined entries."""
    v = np.asarray(values, dtype=np.float64)
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else float("nan")


def weighted_average(values, weights) -> float:
    """sum(w_i * M_i) over defined entries, weights renormalised over those entries."""
    v = np.asarray(values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    ok = ~np.isnan(v) & (w > 0)
    if not ok.any():
        return float("nan")
    return float((v[ok] * w[ok]).sum() / w[ok].sum())


@dataclass
class MetricsReport:
    per_class: PerClass
    oa: float
    weights: np.ndarray
    method: str = "pooled"
    class_names: list[str] | None = None
    average: dict = field(default_factory=dict)
    weighted_average: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.average:
            self.average = {m: average(self.per_class.metric(m)) for m in METRIC_NAMES}
        if not self.weighted_average:
            self.weighted_average = {m: weighted_average(self.per_class.metric(m), self.weights) for m in METRIC_NAMES}

    @property
    def num_classes(self) -> int:
        return len(self.weights)

    def names(self) -> list[str]:
        return self.class_names or [str(i) for i in range(self.num_classes)]

    def summary(self) -> dict:
        def pct(x):
            return None if x != x else round(100.0 * x, 2)

        return {
            "method": self.method,
            "oa": pct(self.oa),
            "average": {m: pct(self.average[m]) for m in METRIC_NAMES},
            "weighted_average": {m: pct(self.weighted_average[m]) for m in METRIC_NAMES},
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"

    def per_class_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["class", "CSI", "precision", "recall", "F1"])
        for i, name in enumerate(self.names()):
            row = [self.per_class.metric(m)[i] for m in METRIC_NAMES]
            writer.writerow([name] + ["undefined" if v != v else f"{100 * v:.2f}" for v in row])
        return buf.getvalue()


def report_from_confusion(cm: ConfusionMatrix, class_names=None) -> MetricsReport:
    """Pooled report: every metric computed from one (summed) matrix."""
    if cm.total == 0:
        raise EmptyMatrix("cannot report on an empty confusion matrix")
    return MetricsReport(
        per_class=per_class(cm),
        oa=overall_accuracy(cm),
        weights=cm.support / cm.total,
        method="pooled",
        class_names=class_names,
    )


def aggregate(reports, weights=None, class_names=None) -> MetricsReport:
    """Combine per-tile reports into a global one.

    For each class the global value is the average of the tile values
    weighted by each tile's share of that class's ground-truth pixels
    (``weights[k, i]``, columns summing to 1 over tiles that contain the
    class). Tiles where the metric is undefined are skipped and the
    remaining weights renormalised. OA is weighted by tile pixel count.
    """
    reports = list(reports)
    if not reports:
        raise EmptyReportList("aggregate needs at least one per-tile report")
    support = np.stack([r.per_class.support for r in reports]).astype(np.float64)
    totals = support.sum(axis=0)
    if weights is None:
        weights = _ratio(support, np.broadcast_to(totals, support.shape))
        weights = np.nan_to_num(weights)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != support.shape:
            raise WeightSumInvalid(f"weights shape {weights.shape} != (tiles, classes) {support.shape}")
        sums = weights.sum(axis=0)
        bad = (totals > 0) & ~np.isclose(sums, 1.0, rtol=0, atol=1e-9)
        if bad.any() or (weights < 0).any():
            raise WeightSumInvalid(f"per-class tile weights must be >= 0 and sum to 1, got sums {sums[bad]}")
    glob = {}
    for m in METRIC_NAMES:
        vals = np.stack([r.per_class.metric(m) for r in reports])
        glob[m] = np.array([weighted_average(vals[:, i], weights[:, i]) for i in range(vals.shape[1])])
    pixels = np.array([r.per_class.support.sum() for r in reports], dtype=np.float64)
    oa = float((np.array([r.oa for r in reports]) * pixels).sum() / pixels.sum())
    pc = PerClass(glob["precision"], glob["recall"], glob["f1"], glob["csi"], totals.astype(np.int64))
    return MetricsReport(
        per_class=pc,
        oa=oa,
        weights=totals / totals.sum(),
        method="per_tile",
        class_names=class_names or reports[0].class_names,
    )


def tile_confusions(pred, truth, num_classes: int, tile_size: int) -> list[ConfusionMatrix]:
    """Confusion matrices on the disjoint tile grid; trailing margins form partial tiles."""
    pred, truth = _labels(pred), _labels(truth)
    if pred.shape != truth.shape:
        raise DimensionMismatch(f"prediction {pred.shape} and ground truth {truth.shape} differ")
    h, w = truth.shape
    out = []
    for r in range(0, h, tile_size):
        for c in range(0, w, tile_size):
            out.append(confusion(pred[r:r + tile_size, c:c + tile_size], truth[r:r + tile_size, c:c + tile_size], num_classes))
    return out


def class_frequency_csv(cm: ConfusionMatrix, class_names=None) -> str:
    names = class_names or [str(i) for i in range(cm.num_classes)]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["class", "pixel_percentage", "pixels"])
    for name, n in zip(names, cm.support):
        writer.writerow([name, f"{100.0 * n / cm.total:.2f}", int(n)])
    return buf.getvalue()


def confusion_csv(cm: ConfusionMatrix) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["truth\\pred"] + list(range(cm.num_classes)))
    for i, row in enumerate(cm.counts):
        writer.writerow([i] + row.tolist())
    return buf.getvalue()
