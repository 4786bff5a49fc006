"""Transformer encoder that maps a token sequence to its [CLS] output vector.

The anomaly score of a log line is the euclidean norm of that vector.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointError, InvalidConfigError, NumericError, ShapeError
from .objective import pu_loss_from_outputs
from .tokenizer import RESERVED, TokenSequence, Vocabulary

CHECKPOINT_FORMAT = "pull-logs-encoder"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    embed_dim: int = 128
    hidden_dim: int = 256
    n_layers: int = 2
    n_heads: int = 2
    dropout: float = 0.10
    seq_len: int = 12
    seed: int = 0

    def validate(self) -> "EncoderConfig":
        for name in ("embed_dim", "hidden_dim", "n_layers", "n_heads", "seq_len"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        if self.embed_dim % self.n_heads:
            raise InvalidConfigError(
                f"embed_dim={self.embed_dim} is not divisible by n_heads={self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfigError("dropout must lie in [0, 1)")
        return self


def sinusoidal_encoding(seq_len: int, dim: int) -> torch.Tensor:
    pos = torch.arange(seq_len, dtype=torch.float64)[:, None]
    freq = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(seq_len, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return pe.float()


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int, dropout: float):
        super().__init__()
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim, dim)
        self.value = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape

        def heads(t):
            return t.view(b, s, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(self.query(x)), heads(self.key(x)), heads(self.value(x))
        att = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # padded keys get exactly zero weight; position 0 ([CLS]) is never masked
        att = att.masked_fill(~mask[:, None, None, :], float("-inf"))
        att = self.dropout(torch.softmax(att, dim=-1))
        y = (att @ v).transpose(1, 2).reshape(b, s, d)
        return self.out(y)


class EncoderLayer(nn.Module):
    """Pre-norm block: x + Attn(LN(x)), then x + FF(LN(x))."""

    def __init__(self, dim: int, hidden: int, n_heads: int, dropout: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, hidden)
        self.ff2 = nn.Linear(hidden, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask):
        x = x + self.attn(self.norm1(x), mask)
        return x + self.ff2(self.dropout(F.relu(self.ff1(self.norm2(x)))))


class EncoderModel(nn.Module):
    def __init__(self, config: EncoderConfig, vocab_size: int):
        super().__init__()
        self.config = config
        self.vocab_size = vocab_size
        self.embedding = nn.Embedding(vocab_size, config.embed_dim)
        self.embed_scale = math.sqrt(config.embed_dim)
        self.register_buffer("positional", sinusoidal_encoding(config.seq_len, config.embed_dim), persistent=False)
        self.layers = nn.ModuleList(
            EncoderLayer(config.embed_dim, config.hidden_dim, config.n_heads, config.dropout)
            for _ in range(config.n_layers)
        )

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Return the ``(B, s, d)`` per-token representations; row 0 is the [CLS] summary."""
        if ids.ndim != 2 or ids.shape[1] != self.config.seq_len or mask.shape != ids.shape:
            raise ShapeError(f"expected (B, {self.config.seq_len}) ids and mask, got {tuple(ids.shape)}")
        x = self.embedding(ids) * self.embed_scale
        x = x + self.positional.to(x.dtype)
        for layer in self.layers:
            x = layer(x, mask)
        return x

    def cls(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        return self.forward(ids, mask)[:, 0]


@dataclass
class EncoderOutput:
    per_token: np.ndarray
    cls_vector: np.ndarray
    score: float


def instantiate(config: EncoderConfig, vocab_size: int) -> EncoderModel:
    """Fresh model with Xavier-uniform weights and embeddings, zero biases."""
    config.validate()
    if vocab_size < len(RESERVED):
        raise InvalidConfigError(f"vocab_size must be >= {len(RESERVED)}")
    model = EncoderModel(config, vocab_size)
    gen = torch.Generator().manual_seed(int(config.seed))
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif ".norm" in name:
                p.fill_(1.0)
            else:
                nn.init.xavier_uniform_(p, generator=gen)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_digest(model: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in model.state_dict().items():
        h.update(name.encode())
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def batch_tensors(batch: Sequence[TokenSequence], seq_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    if not batch:
        raise ShapeError("empty batch")
    for seq in batch:
        if len(seq.ids) != seq_len or len(seq.mask) != seq_len:
            raise ShapeError(f"line {seq.source_line_id}: length {len(seq.ids)} != seq_len {seq_len}")
    ids = torch.tensor([seq.ids for seq in batch], dtype=torch.long)
    mask = torch.tensor([seq.mask for seq in batch], dtype=torch.bool)
    return ids, mask


def forward(model: EncoderModel, batch: Sequence[TokenSequence], train_mode: bool = False) -> list[EncoderOutput]:
    ids, mask = batch_tensors(batch, model.config.seq_len)
    was_training = model.training
    model.train(train_mode)
    try:
        with torch.set_grad_enabled(train_mode):
            rep = model(ids, mask).detach()
    finally:
        model.train(was_training)
    z = rep[:, 0]
    norms = torch.linalg.vector_norm(z, dim=-1)
    return [
        EncoderOutput(rep[i].numpy().copy(), z[i].numpy().copy(), float(norms[i]))
        for i in range(len(batch))
    ]


@torch.no_grad()
def score_arrays(model: EncoderModel, ids: np.ndarray, mask: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Eval-mode anomaly scores ``||z||`` for every row of the encoded arrays."""
    was_training = model.training
    model.eval()
    out = np.empty(len(ids), dtype=np.float64)
    try:
        for start in range(0, len(ids), batch_size):
            i = torch.from_numpy(np.ascontiguousarray(ids[start : start + batch_size]))
            m = torch.from_numpy(np.ascontiguousarray(mask[start : start + batch_size]))
            out[start : start + len(i)] = torch.linalg.vector_norm(model.cls(i, m), dim=-1).double().numpy()
    finally:
        model.train(was_training)
    return out


def batch_loss(model, ids, mask, labels, q, train_mode=False, line_ids=None) -> torch.Tensor:
    """Mean PU loss of a batch; raises :class:`NumericError` naming the first bad line."""
    if ids.shape[0] == 0:
        raise ShapeError("empty batch")
    model.train(train_mode)
    z = model.cls(ids, mask)
    per = pu_loss_from_outputs(z, labels, q)
    finite = torch.isfinite(per)
    if not bool(finite.all()):
        i = int(torch.nonzero(~finite)[0])
        lid = int(line_ids[i]) if line_ids is not None else i
        raise NumericError(f"non-finite loss for line_id {lid}")
    return per.mean()


def gradients(
    model: EncoderModel,
    batch: Sequence[TokenSequence],
    weak_labels: Sequence[float],
    q: float,
    train_mode: bool = False,
) -> dict[str, torch.Tensor]:
    """Gradient of the mean PU loss with respect to every trainable parameter."""
    ids, mask = batch_tensors(batch, model.config.seq_len)
    dtype = next(model.parameters()).dtype
    labels = torch.as_tensor(np.asarray(weak_labels, dtype=np.float64), dtype=dtype)
    if labels.shape[0] != ids.shape[0]:
        raise ShapeError("one weak label per sequence required")
    model.zero_grad(set_to_none=True)
    loss = batch_loss(model, ids, mask, labels, q, train_mode, [s.source_line_id for s in batch])
    loss.backward()
    return {name: p.grad.detach().clone() for name, p in model.named_parameters() if p.grad is not None}


@dataclass
class AdamState:
    step: int = 0
    exp_avg: dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: dict[str, torch.Tensor] = field(default_factory=dict)


def adam_step(
    model: nn.Module,
    grads: dict[str, torch.Tensor],
    lr: float,
    weight_decay: float,
    state: AdamState,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """One Adam update with decoupled weight decay, applied in place."""
    bad = [name for name, g in grads.items() if not bool(torch.isfinite(g).all())]
    if bad:
        raise NumericError(f"non-finite gradients in {bad} at optimizer step {state.step + 1}")
    b1, b2 = betas
    state.step += 1
    bc1 = 1 - b1**state.step
    bc2_sqrt = math.sqrt(1 - b2**state.step)
    with torch.no_grad():
        for name, p in model.named_parameters():
            g = grads.get(name)
            if g is None:
                continue
            m = state.exp_avg.setdefault(name, torch.zeros_like(p))
            v = state.exp_avg_sq.setdefault(name, torch.zeros_like(p))
            if m.shape != p.shape or g.shape != p.shape:
                raise ShapeError(f"optimizer state for {name} does not match parameter shape")
            p.mul_(1 - lr * weight_decay)
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            p.addcdiv_(m, (v.sqrt() / bc2_sqrt).add_(eps), value=-lr / bc1)
    return state


def save_checkpoint(model: EncoderModel, vocab: Vocabulary, path: str | Path) -> None:
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": asdict(model.config),
            "vocab_size": model.vocab_size,
            "vocab_sha256": vocab.sha256(),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_checkpoint(path: str | Path, vocab: Optional[Vocabulary] = None) -> EncoderModel:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an encoder checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')}")
    if vocab is not None and vocab.sha256() != blob["vocab_sha256"]:
        raise CheckpointError("vocabulary hash does not match the checkpoint")
    model = EncoderModel(EncoderConfig(**blob["config"]), blob["vocab_size"])
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
