"""Imbalance-aware PU loss on encoder output norms.

Per sample, with anomaly score ``r = ||z||`` and weak label ``y`` in [0, 1]::

    loss = (1 - y) * r**2 + y * q**2 / max(r, eps)

``q = |P| / (|P| + |U|)`` is the share of positive mass in the whole label
vector. Labels may be soft, in which case both terms are active.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DegenerateDatasetError, NumericError

EPS = 1e-6


@dataclass(frozen=True)
class ClassBalance:
    p_mass: float
    u_mass: float

    @property
    def q(self) -> float:
        return self.p_mass / (self.p_mass + self.u_mass)


@dataclass
class BatchLoss:
    value: float
    per_sample: list[float]
    batch_size: int


def balance(labels) -> ClassBalance:
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0:
        raise ValueError("empty label vector")
    if not np.all((y >= 0) & (y <= 1)):
        raise ValueError("labels must lie in [0, 1]")
    u_mass = float(y.sum())
    p_mass = float(y.size - u_mass)
    if u_mass <= 0 or p_mass <= 0:
        raise DegenerateDatasetError(f"degenerate class balance: |P|={p_mass}, |U|={u_mass}")
    return ClassBalance(p_mass, u_mass)


def pu_loss_terms(scores: torch.Tensor, labels: torch.Tensor, q: float, eps: float = EPS) -> torch.Tensor:
    """Differentiable per-sample losses from non-negative scores."""
    labels = labels.to(scores.dtype)
    return (1 - labels) * scores.pow(2) + labels * (q * q) / scores.clamp_min(eps)


def pu_loss_from_outputs(z: torch.Tensor, labels: torch.Tensor, q: float, eps: float = EPS) -> torch.Tensor:
    """Per-sample losses straight from ``(B, d)`` vectors.

    The squared term uses ``sum(z**2)`` so its gradient stays defined at the
    origin, where the gradient of the norm itself is not.
    """
    labels = labels.to(z.dtype)
    sq = z.pow(2).sum(-1)
    r = torch.sqrt(sq.clamp_min(eps * eps))
    return (1 - labels) * sq + labels * (q * q) / r


def pu_loss(scores, labels, q: float, eps: float = EPS) -> BatchLoss:
    s = torch.as_tensor(np.asarray(scores, dtype=np.float64))
    y = torch.as_tensor(np.asarray(labels, dtype=np.float64))
    if s.shape != y.shape or s.ndim != 1 or s.numel() == 0:
        raise ValueError("scores and labels must be equal-length non-empty vectors")
    bad = torch.nonzero(~torch.isfinite(s)).flatten()
    if bad.numel():
        raise NumericError(f"non-finite score at sample {int(bad[0])}")
    if torch.any(s < 0):
        raise ValueError("scores must be non-negative")
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    per = pu_loss_terms(s, y, q, eps)
    return BatchLoss(float(per.mean()), per.tolist(), int(s.numel()))


def loss_minimizer_norm(q: float, y: float) -> float:
    """Stationary norm of ``(1-y) r^2 + y q^2 / r`` for a soft label ``0 < y < 1``."""
    if not 0 < q < 1:
        raise ValueError("q must lie in (0, 1)")
    if not 0 < y < 1:
        raise ValueError("no interior optimum for a hard label")
    return (y * q * q / (2 * (1 - y))) ** (1.0 / 3.0)


def per_sample_loss(r: float, y: float, q: float, eps: float = EPS) -> float:
    return (1 - y) * r * r + y * q * q / max(r, eps)

