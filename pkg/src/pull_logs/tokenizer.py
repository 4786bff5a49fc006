"""Placeholder-normalising log tokenizer and vocabulary."""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidConfigError

PAD, CLS, HEX, NUM, UNK = "[PAD]", "[CLS]", "[HEX]", "[NUM]", "[UNK]"
RESERVED = (PAD, CLS, HEX, NUM, UNK)
PAD_ID, CLS_ID, HEX_ID, NUM_ID, UNK_ID = range(5)

_SPLIT = re.compile(r"[.,:/\s]+")
_HEX_PREFIXED = re.compile(r"0[xX][0-9a-fA-F]+")
_HEX_BARE = re.compile(r"[0-9a-fA-F]{4,}")
_HAS_HEX_LETTER = re.compile(r"[a-fA-F]")


def normalize_fragment(frag: str) -> str:
    if _HEX_PREFIXED.fullmatch(frag) or (_HEX_BARE.fullmatch(frag) and _HAS_HEX_LETTER.search(frag)):
        return HEX
    if frag.isascii() and frag.isdigit() and int(frag) >= 10:
        return NUM
    return frag


def tokenize(content: str) -> list[str]:
    """Split on whitespace and ``.,:/``, replace hex values and numbers >= 10, prefix [CLS].

    >>> tokenize("time.c: Detected 3591.142 MHz.")
    ['[CLS]', 'time', 'c', 'Detected', '[NUM]', '[NUM]', 'MHz']
    """
    return [CLS] + [normalize_fragment(f) for f in _SPLIT.split(content) if f]


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    mask: tuple[bool, ...]
    source_line_id: int = -1

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=lambda: list(RESERVED))
    frozen: bool = False

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"vocabulary must start with the reserved tokens {RESERVED}")
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        if self.frozen:
            raise RuntimeError("vocabulary is frozen")
        self.token_to_id[token] = len(self.tokens)
        self.tokens.append(token)
        return self.token_to_id[token]

    def freeze(self) -> "Vocabulary":
        self.frozen = True
        return self

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def sha256(self) -> str:
        return hashlib.sha256("\n".join(self.tokens).encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens = Path(path).read_text(encoding="utf-8").split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        return cls(tokens, frozen=True)


def build_vocabulary(token_lists: Iterable[Sequence[str]], min_count: int = 1) -> Vocabulary:
    """Frozen vocabulary of every token seen at least ``min_count`` times.

    Ids after the reserved block follow descending frequency, ties broken
    lexicographically, so the result does not depend on stream order.
    """
    counts: Counter[str] = Counter()
    for toks in token_lists:
        counts.update(toks)
    for r in RESERVED:
        counts.pop(r, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept, frozen=True)


def encode(tokens: Sequence[str], vocab: Vocabulary, s: int, line_id: int = -1) -> TokenSequence:
    if s < 1:
        raise InvalidConfigError(f"sequence length must be >= 1, got {s}")
    if not tokens or tokens[0] != CLS:
        raise ValueError("token list must start with [CLS]")
    head = [vocab.lookup(t) for t in tokens[:s]]
    n = len(head)
    return TokenSequence(tuple(head + [PAD_ID] * (s - n)), (True,) * n + (False,) * (s - n), line_id)


def encode_many(contents: Iterable[str], vocab: Vocabulary, s: int) -> tuple[np.ndarray, np.ndarray]:
    """Encode raw messages straight into ``(n, s)`` id and mask arrays."""
    if s < 1:
        raise InvalidConfigError(f"sequence length must be >= 1, got {s}")
    rows = [[vocab.lookup(t) for t in tokenize(c)[:s]] for c in contents]
    ids = np.full((len(rows), s), PAD_ID, dtype=np.int64)
    lengths = np.fromiter((len(r) for r in rows), dtype=np.int64, count=len(rows))
    for i, r in enumerate(rows):
        ids[i, : len(r)] = r
    mask = np.arange(s)[None, :] < lengths[:, None]
    return ids, mask
