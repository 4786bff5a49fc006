"""Weak labels from failure time windows.

Every log event within ``delta_ms`` of an abnormal event (or an externally
supplied alert time) is placed in the unlabeled class U (label 1); all other
events form the positive class P (label 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import DegenerateDatasetError, EmptyCorpusError, ShapeError
from .ingest import Corpus


@dataclass(frozen=True)
class WindowConfig:
    delta_ms: int

    def __post_init__(self):
        if self.delta_ms < 0:
            raise ValueError("delta_ms must be non-negative")


@dataclass
class WeakDataset:
    line_ids: np.ndarray
    weak_labels: np.ndarray
    ground_truth: np.ndarray
    delta_ms: int = 0
    ids: Optional[np.ndarray] = field(default=None, repr=False)
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.weak_labels = np.asarray(self.weak_labels, dtype=np.float64)
        self.ground_truth = np.asarray(self.ground_truth, dtype=np.int8)
        self.line_ids = np.asarray(self.line_ids, dtype=np.int64)
        n = len(self.weak_labels)
        if len(self.ground_truth) != n or len(self.line_ids) != n:
            raise ShapeError("weak_labels, ground_truth and line_ids must have equal length")
        if n and (self.weak_labels.min() < 0 or self.weak_labels.max() > 1):
            raise ValueError("weak labels must lie in [0, 1]")
        if self.ids is not None:
            self._check_inputs(self.ids, self.mask)

    def _check_inputs(self, ids, mask) -> None:
        if mask is None or ids.shape != mask.shape or ids.ndim != 2 or ids.shape[0] != len(self):
            raise ShapeError(f"inputs must be ({len(self)}, s) arrays with a matching mask")

    def __len__(self) -> int:
        return len(self.weak_labels)

    @property
    def p_count(self) -> float:
        return float(np.sum(1.0 - self.weak_labels))

    @property
    def u_count(self) -> float:
        return float(np.sum(self.weak_labels))

    @property
    def inputs(self):
        """Token sequences as :class:`~pull_logs.tokenizer.TokenSequence` objects."""
        from .tokenizer import TokenSequence

        if self.ids is None:
            return []
        return [
            TokenSequence(tuple(int(t) for t in row), tuple(bool(m) for m in mrow), int(lid))
            for row, mrow, lid in zip(self.ids, self.mask, self.line_ids)
        ]

    def with_inputs(self, ids: np.ndarray, mask: np.ndarray) -> "WeakDataset":
        self._check_inputs(ids, mask)
        self.ids, self.mask = np.asarray(ids, dtype=np.int64), np.asarray(mask, dtype=bool)
        return self

    def summary(self) -> dict:
        return {
            "delta_ms": int(self.delta_ms),
            "total": len(self),
            "p_count": self.p_count,
            "u_count": self.u_count,
            "abnormal_ground_truth": int(self.ground_truth.sum()),
        }


def merge_windows(anomaly_ts: np.ndarray, delta_ms: int) -> tuple[np.ndarray, np.ndarray]:
    """Union of the closed intervals ``[t - delta, t + delta]`` as sorted, disjoint (starts, ends)."""
    ts = np.sort(np.asarray(anomaly_ts, dtype=np.int64))
    if ts.size == 0:
        return ts, ts
    starts, ends = ts - delta_ms, ts + delta_ms
    # a new interval opens wherever the gap to the previous event exceeds 2*delta
    new = np.empty(ts.size, dtype=bool)
    new[0] = True
    new[1:] = starts[1:] > ends[:-1]
    last = np.r_[np.flatnonzero(new)[1:] - 1, ts.size - 1]
    return starts[new], ends[last]


def window_mask(timestamps: np.ndarray, anomaly_ts: np.ndarray, delta_ms: int) -> np.ndarray:
    """Boolean mask of timestamps inside any window (inclusive at both ends)."""
    starts, ends = merge_windows(anomaly_ts, delta_ms)
    t = np.asarray(timestamps, dtype=np.int64)
    if starts.size == 0:
        return np.zeros(t.shape, dtype=bool)
    k = np.searchsorted(starts, t, side="right") - 1
    inside = k >= 0
    inside[inside] = t[inside] <= ends[k[inside]]
    return inside


def assign_weak_labels(
    corpus: Corpus, cfg: WindowConfig, alert_ts: Optional[Iterable[int]] = None
) -> WeakDataset:
    """Label every record within ``cfg.delta_ms`` of an abnormal record as U.

    ``alert_ts`` replaces the ground-truth anomaly times as window centres,
    for when failure times come from a monitoring system.
    """
    if len(corpus) == 0:
        raise EmptyCorpusError("corpus is empty")
    y = corpus.labels()
    ts = corpus.timestamps()
    centres = ts[y == 1] if alert_ts is None else np.fromiter(alert_ts, dtype=np.int64)
    if centres.size == 0:
        raise DegenerateDatasetError("no abnormal records: class U would be empty")
    weak = window_mask(ts, centres, cfg.delta_ms).astype(np.float64)
    line_ids = np.fromiter((r.line_id for r in corpus.records), dtype=np.int64, count=len(corpus))
    return WeakDataset(line_ids, weak, y, delta_ms=cfg.delta_ms)


def window_grid(corpus: Corpus, deltas: Sequence[int]) -> dict[int, WeakDataset]:
    """One weak dataset per window size, keyed and ordered by ascending delta."""
    if not deltas:
        raise ValueError("at least one delta required")
    return {d: assign_weak_labels(corpus, WindowConfig(int(d))) for d in sorted(set(int(d) for d in deltas))}


def write_weak_dataset(ds: WeakDataset, path: str | Path) -> Path:
    """Write ``(line_id, weak_label, y)`` rows plus a ``.summary.json`` sidecar."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for lid, w, y in zip(ds.line_ids, ds.weak_labels, ds.ground_truth):
            fh.write(json.dumps({"line_id": int(lid), "weak_label": float(w), "y": int(y)}) + "\n")
    sidecar = path.with_suffix(".summary.json")
    sidecar.write_text(json.dumps(ds.summary(), indent=2) + "\n")
    return sidecar


def read_weak_dataset(path: str | Path) -> WeakDataset:
    path = Path(path)
    lids, w, y = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            obj = json.loads(line)
            lids.append(obj["line_id"])
            w.append(obj["weak_label"])
            y.append(obj["y"])
    delta = 0
    sidecar = path.with_suffix(".summary.json")
    if sidecar.exists():
        delta = json.loads(sidecar.read_text())["delta_ms"]
    return WeakDataset(np.array(lids), np.array(w), np.array(y), delta_ms=delta)
