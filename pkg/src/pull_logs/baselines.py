"""Rocchio baseline: nearest centroid over term-frequency vectors, cosine distance.

Term-frequency vectors are never materialised; dot products against the
centroids are gathered straight from the token-id arrays, which keeps memory
at O(n * s + |V|).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateDatasetError
from .tokenizer import CLS_ID, PAD_ID, TokenSequence


@dataclass
class CentroidModel:
    centroid_p: np.ndarray
    centroid_u: np.ndarray
    idf: Optional[np.ndarray] = None  # set when fitted with tf-idf weighting


def _valid(ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return mask & (ids != PAD_ID) & (ids != CLS_ID)


def _row_norms(ids: np.ndarray, valid: np.ndarray, idf: Optional[np.ndarray]) -> np.ndarray:
    # ||x||^2 = sum over position pairs holding the same token (weighted by idf^2)
    same = (ids[:, :, None] == ids[:, None, :]) & valid[:, :, None] & valid[:, None, :]
    if idf is None:
        return np.sqrt(same.sum(axis=(1, 2)).astype(np.float64))
    w = idf[ids]
    return np.sqrt(np.einsum("nij,ni,nj->n", same.astype(np.float64), w, w))


def _weighted_counts(ids, valid, weights, vocab_size, idf) -> np.ndarray:
    row_w = np.broadcast_to(weights[:, None], ids.shape)[valid]
    c = np.bincount(ids[valid], weights=row_w, minlength=vocab_size).astype(np.float64)
    return c * idf if idf is not None else c


def fit_arrays(ids, mask, labels, vocab_size: int, tfidf: bool = False) -> CentroidModel:
    ids = np.asarray(ids, dtype=np.int64)
    valid = _valid(ids, np.asarray(mask, dtype=bool))
    y = np.asarray(labels, dtype=np.float64)
    w_p, w_u = 1.0 - y, y
    if w_p.sum() <= 0 or w_u.sum() <= 0:
        raise DegenerateDatasetError("Rocchio fit needs positive mass in both P and U")
    idf = None
    if tfidf:
        rows = np.nonzero(valid)[0]
        pairs = np.unique(rows * vocab_size + ids[valid])
        df = np.bincount(pairs % vocab_size, minlength=vocab_size).astype(np.float64)
        idf = np.log((1 + len(ids)) / (1 + df)) + 1
    cp = _weighted_counts(ids, valid, w_p, vocab_size, idf) / w_p.sum()
    cu = _weighted_counts(ids, valid, w_u, vocab_size, idf) / w_u.sum()
    if not cp.any() or not cu.any():
        raise DegenerateDatasetError("a Rocchio centroid is the zero vector")
    return CentroidModel(cp, cu, idf)


def score_arrays(model: CentroidModel, ids, mask, chunk: int = 65_536) -> np.ndarray:
    """``d_P / (d_P + d_U)`` with cosine distances; 0 near the P centroid, 1 near U."""
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=bool)
    return np.concatenate(
        [_score_chunk(model, ids[i : i + chunk], mask[i : i + chunk]) for i in range(0, len(ids), chunk)]
        or [np.empty(0)]
    )


def _score_chunk(model: CentroidModel, ids: np.ndarray, mask: np.ndarray) -> np.ndarray:
    valid = _valid(ids, mask)
    idf = model.idf
    xw = valid * (idf[ids] if idf is not None else 1.0)
    norms = _row_norms(ids, valid, idf)
    out = np.full(len(ids), 0.5)
    nz = norms > 0
    dists = []
    for c in (model.centroid_p, model.centroid_u):
        dot = (xw * c[ids]).sum(axis=1)
        cos = np.zeros(len(ids))
        cos[nz] = dot[nz] / (norms[nz] * np.linalg.norm(c))
        dists.append(np.clip(1.0 - cos, 0.0, 2.0))
    d_p, d_u = dists
    total = d_p + d_u
    ok = nz & (total > 0)
    out[ok] = d_p[ok] / total[ok]
    return out


def _stack(sequences: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([s.ids for s in sequences], dtype=np.int64), np.array([s.mask for s in sequences], dtype=bool))


def fit(sequences: Sequence[TokenSequence], labels, vocab_size: int, tfidf: bool = False) -> CentroidModel:
    ids, mask = _stack(sequences)
    return fit_arrays(ids, mask, labels, vocab_size, tfidf)


def score(model: CentroidModel, sequence: TokenSequence) -> float:
    ids, mask = _stack([sequence])
    return float(score_arrays(model, ids, mask)[0])
