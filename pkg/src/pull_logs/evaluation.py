"""Precision/recall/F1, threshold sweeps, iteration trends and grid export."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ShapeError

TREND_TOLERANCE = 1e-4


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "Metrics":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(int(tp), int(fp), int(fn), int(tn), precision, recall, f1)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_metrics(predicted, ground_truth) -> Metrics:
    """Confusion counts with abnormal (1) as the positive class."""
    p = np.asarray(predicted).astype(bool)
    y = np.asarray(ground_truth).astype(bool)
    if p.shape != y.shape:
        raise ShapeError(f"length mismatch: {p.shape} vs {y.shape}")
    tp = int(np.sum(p & y))
    fp = int(np.sum(p & ~y))
    fn = int(np.sum(~p & y))
    return Metrics.from_counts(tp, fp, fn, p.size - tp - fp - fn)


def best_threshold(scores, ground_truth) -> tuple[float, Metrics]:
    """Threshold maximising F1 when predicting ``score >= threshold``.

    Every distinct score is a candidate cut; one pass over the scores sorted
    in descending order.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(ground_truth).astype(bool)
    if s.shape != y.shape or s.size == 0:
        raise ShapeError("scores and ground truth must be equal-length and non-empty")
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    # only cut after the last element of each group of tied scores
    last = np.r_[s_sorted[1:] != s_sorted[:-1], True]
    tp, k = tp[last], np.flatnonzero(last) + 1
    fp = k - tp
    n_pos = int(y.sum())
    fn = n_pos - tp
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    best = int(np.argmax(f1))
    thr = float(s_sorted[k[best] - 1])
    return thr, Metrics.from_counts(int(tp[best]), int(fp[best]), int(fn[best]), int(s.size - k[best] - fn[best]))


def evaluate_scores(smoothed, ground_truth, threshold: float) -> dict:
    """Fixed-threshold (``score > threshold``) and best-threshold metrics side by side."""
    s = np.asarray(smoothed, dtype=np.float64)
    fixed = compute_metrics(s > threshold, ground_truth)
    best_t, best = best_threshold(s, ground_truth)
    return {
        "fixed": {"threshold": threshold, **fixed.to_dict()},
        "best": {"threshold": best_t, **best.to_dict()},
    }


def trend(reports_or_f1: Sequence, which: str = "best", tol: float = TREND_TOLERANCE) -> tuple[list[float], str]:
    """Per-iteration F1 series and a verdict: ``improving``, ``degrading`` or ``flat``.

    Accepts iteration reports (their ``metrics[which]["f1"]`` is used) or a
    plain F1 sequence.
    """
    series = []
    for r in reports_or_f1:
        if isinstance(r, (int, float, np.floating)):
            series.append(float(r))
            continue
        metrics = getattr(r, "metrics", None)
        if not metrics:
            raise ValueError(f"iteration {getattr(r, 'iteration', '?')} has no ground-truth metrics")
        series.append(float(metrics[which]["f1"]))
    if len(series) < 2:
        raise ValueError("trend needs at least two iterations")
    diffs = np.diff(series)
    if np.all(diffs > tol):
        verdict = "improving"
    elif np.all(diffs < -tol):
        verdict = "degrading"
    else:
        verdict = "flat"
    return series, verdict


GRID_COLUMNS = ("dataset", "delta_ms", "method", "iteration", "threshold_mode", "precision", "recall", "f1")


@dataclass
class GridResult:
    cells: dict[tuple, Metrics] = field(default_factory=dict)

    def add(self, dataset: str, delta_ms: int, method: str, iteration: int, metrics: Metrics, mode: str = "best"):
        key = (dataset, int(delta_ms), method, int(iteration), mode)
        if key in self.cells:
            raise KeyError(f"duplicate grid cell {key}")
        self.cells[key] = metrics

    def add_report_metrics(self, dataset: str, delta_ms: int, method: str, iteration: int, metrics: dict):
        for mode in ("fixed", "best"):
            m = metrics[mode]
            self.add(dataset, delta_ms, method, iteration,
                     Metrics(m["tp"], m["fp"], m["fn"], m["tn"], m["precision"], m["recall"], m["f1"]), mode)

    def rows(self) -> Iterable[dict]:
        for key in sorted(self.cells):
            m = self.cells[key]
            yield dict(zip(GRID_COLUMNS, (*key, m.precision, m.recall, m.f1)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=GRID_COLUMNS)
            w.writeheader()
            for row in self.rows():
                w.writerow(row)
