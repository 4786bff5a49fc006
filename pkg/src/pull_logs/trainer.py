"""Iterative PU training.

Each iteration trains a freshly initialised scorer on the current labels,
scores every line, and turns the scores into the next iteration's soft
labels via ``tanh(max(0, score - median(scores)))``. After the last
iteration the smoothed scores are thresholded into final labels.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
import torch

from . import baselines
from .errors import InvalidConfigError, PullError
from .evaluation import evaluate_scores
from .model import (
    AdamState,
    EncoderConfig,
    EncoderModel,
    adam_step,
    batch_loss,
    instantiate,
    save_checkpoint,
    score_arrays,
)
from .objective import balance
from .tokenizer import Vocabulary
from .windowing import WeakDataset

logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 20
_BELOW_ONE = np.nextafter(1.0, 0.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 8
    batch_size: int = 1024
    lr: float = 1e-4
    weight_decay: float = 5e-5
    iterations: int = 3
    threshold: float = 0.5
    seed: int = 0

    def validate(self) -> "TrainConfig":
        for name in ("epochs", "batch_size", "iterations"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.lr <= 0 or self.weight_decay < 0:
            raise InvalidConfigError("lr must be positive and weight_decay non-negative")
        if not 0 < self.threshold < 1:
            raise InvalidConfigError("threshold must lie in (0, 1)")
        return self


@dataclass
class IterationReport:
    iteration: int
    raw_scores: np.ndarray
    median_m: float
    smoothed: np.ndarray
    q_used: float
    metrics: Optional[dict] = None
    seconds: float = 0.0

    def to_json(self) -> dict:
        counts, edges = np.histogram(self.raw_scores, bins=HISTOGRAM_BINS)
        out = {
            "iteration": self.iteration,
            "median": self.median_m,
            "q": self.q_used,
            "n": int(self.raw_scores.size),
            "score_histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
            "smoothed_nonzero": int(np.count_nonzero(self.smoothed)),
            "seconds": round(self.seconds, 3),
        }
        if self.metrics is not None:
            out["metrics"] = self.metrics
        return out


def derive_seed(seed: int, iteration: int) -> int:
    """Stable per-iteration seed, independent of Python's hash randomisation."""
    digest = hashlib.sha256(f"{int(seed)}:{int(iteration)}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


def smooth_scores(raw_scores) -> tuple[np.ndarray, float]:
    """``tanh(max(0, s - median))``; returns ``(smoothed, median)``."""
    s = np.asarray(raw_scores, dtype=np.float64)
    if s.size == 0 or not np.all(np.isfinite(s)):
        raise ValueError("raw scores must be non-empty and finite")
    m = float(np.median(s))
    # tanh rounds to exactly 1.0 in float64 beyond ~19; keep the open upper bound
    return np.minimum(np.tanh(np.maximum(0.0, s - m)), _BELOW_ONE), m


def train_encoder(
    ids: np.ndarray,
    mask: np.ndarray,
    labels: np.ndarray,
    enc_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    vocab_size: int,
    iteration: int = 1,
    line_ids: Optional[np.ndarray] = None,
) -> EncoderModel:
    q = balance(labels).q
    model = instantiate(replace(enc_cfg, seed=derive_seed(enc_cfg.seed, iteration)), vocab_size)
    train_seed = derive_seed(train_cfg.seed, iteration)
    rng = np.random.default_rng(train_seed)
    ids_t = torch.from_numpy(np.ascontiguousarray(ids, dtype=np.int64))
    mask_t = torch.from_numpy(np.ascontiguousarray(mask, dtype=bool))
    y_t = torch.from_numpy(np.asarray(labels, dtype=np.float32))
    lids = np.arange(len(ids)) if line_ids is None else np.asarray(line_ids)
    state = AdamState()
    n = len(ids)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(train_seed)
        for epoch in range(train_cfg.epochs):
            perm = torch.from_numpy(rng.permutation(n))
            total = 0.0
            for b, start in enumerate(range(0, n, train_cfg.batch_size)):
                idx = perm[start : start + train_cfg.batch_size]
                try:
                    loss = batch_loss(model, ids_t[idx], mask_t[idx], y_t[idx], q, True, lids[idx.numpy()])
                except PullError as exc:
                    raise type(exc)(f"iteration {iteration}, epoch {epoch}, batch {b}: {exc}") from exc
                model.zero_grad(set_to_none=True)
                loss.backward()
                grads = {k: p.grad for k, p in model.named_parameters() if p.grad is not None}
                adam_step(model, grads, train_cfg.lr, train_cfg.weight_decay, state)
                total += float(loss.detach()) * len(idx)
            logger.info("iteration %d epoch %d: mean loss %.6f (q=%.5f)", iteration, epoch + 1, total / n, q)
    model.eval()
    return model


def train_one_iteration(
    dataset: WeakDataset,
    labels,
    enc_cfg: EncoderConfig,
    train_cfg: TrainConfig,
    iteration: int = 1,
    vocab_size: Optional[int] = None,
) -> tuple[EncoderModel, np.ndarray]:
    """Train a fresh encoder on ``labels`` and score every line of ``dataset``."""
    if dataset.ids is None:
        raise ValueError("dataset has no encoded inputs; call WeakDataset.with_inputs first")
    if vocab_size is None:
        vocab_size = int(dataset.ids.max()) + 1
    model = train_encoder(dataset.ids, dataset.mask, labels, enc_cfg, train_cfg, vocab_size, iteration, dataset.line_ids)
    scores = score_arrays(model, dataset.ids, dataset.mask)
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError(f"non-finite anomaly scores after iteration {iteration}")
    return model, scores


class Scorer(Protocol):
    """Something that can be trained from scratch on soft labels and score every line."""

    name: str

    def fit_score(self, dataset: WeakDataset, labels: np.ndarray, iteration: int) -> tuple[object, np.ndarray]: ...

    def save(self, artifact: object, path: Path) -> None: ...


@dataclass
class EncoderScorer:
    enc_cfg: EncoderConfig
    train_cfg: TrainConfig
    vocab: Vocabulary
    name: str = "pull"

    def fit_score(self, dataset, labels, iteration):
        return train_one_iteration(dataset, labels, self.enc_cfg, self.train_cfg, iteration, len(self.vocab))

    def save(self, artifact, path):
        save_checkpoint(artifact, self.vocab, path.with_suffix(".pt"))


@dataclass
class RocchioScorer:
    vocab_size: int
    tfidf: bool = False
    name: str = "rocchio"

    def fit_score(self, dataset, labels, iteration):
        model = baselines.fit_arrays(dataset.ids, dataset.mask, labels, self.vocab_size, self.tfidf)
        return model, baselines.score_arrays(model, dataset.ids, dataset.mask)

    def save(self, artifact, path):
        np.savez(path.with_suffix(".npz"), centroid_p=artifact.centroid_p, centroid_u=artifact.centroid_u)


def write_iteration(out_dir: Path, report: IterationReport, line_ids: np.ndarray) -> None:
    k = report.iteration
    (out_dir / f"report_iter_{k}.json").write_text(json.dumps(report.to_json(), indent=2) + "\n")
    with open(out_dir / f"scores_iter_{k}.jsonl", "w", encoding="utf-8") as fh:
        for lid, raw, sm in zip(line_ids, report.raw_scores, report.smoothed):
            fh.write(json.dumps({"line_id": int(lid), "raw": float(raw), "smoothed": float(sm)}) + "\n")


def write_labels(path: Path, line_ids: np.ndarray, labels: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lid, y in zip(line_ids, labels):
            fh.write(json.dumps({"line_id": int(lid), "label": int(y)}) + "\n")


def run_pull(
    dataset: WeakDataset,
    enc_cfg: Optional[EncoderConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    scorer: Optional[Scorer] = None,
    out_dir: Optional[str | Path] = None,
    vocab: Optional[Vocabulary] = None,
) -> tuple[list[IterationReport], np.ndarray]:
    """Run the iterative strategy and return per-iteration reports and final labels.

    ``scorer`` defaults to the attention encoder; pass a
    :class:`RocchioScorer` to run the baseline through the identical
    smoothing and thresholding path. If ``dataset`` carries ground truth,
    each report includes fixed- and best-threshold metrics.
    """
    train_cfg = (train_cfg or TrainConfig()).validate()
    if scorer is None:
        if enc_cfg is None or vocab is None:
            raise ValueError("enc_cfg and vocab are required for the encoder scorer")
        scorer = EncoderScorer(enc_cfg.validate(), train_cfg, vocab)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    has_truth = dataset.ground_truth.size == len(dataset) and len(dataset) > 0

    labels = dataset.weak_labels.astype(np.float64)
    reports: list[IterationReport] = []
    try:
        for k in range(1, train_cfg.iterations + 1):
            q = balance(labels).q
            t0 = time.perf_counter()
            artifact, raw = scorer.fit_score(dataset, labels, k)
            smoothed, median = smooth_scores(raw)
            metrics = evaluate_scores(smoothed, dataset.ground_truth, train_cfg.threshold) if has_truth else None
            report = IterationReport(k, raw, median, smoothed, q, metrics, time.perf_counter() - t0)
            reports.append(report)
            if metrics is not None:
                logger.info(
                    "%s iteration %d: q=%.5f median=%.5f F1(tau)=%.4f F1(best)=%.4f",
                    scorer.name, k, q, median, metrics["fixed"]["f1"], metrics["best"]["f1"],
                )
            if out is not None:
                write_iteration(out, report, dataset.line_ids)
                scorer.save(artifact, out / f"checkpoint_iter_{k}")
            labels = smoothed
    except Exception as exc:
        exc.partial_reports = reports  # type: ignore[attr-defined]
        raise

    final = (reports[-1].smoothed > train_cfg.threshold).astype(np.int8)
    if out is not None:
        write_labels(out / "labels_final.jsonl", dataset.line_ids, final)
    return reports, final
