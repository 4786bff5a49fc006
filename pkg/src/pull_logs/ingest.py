"""Reading labeled log corpora and generating synthetic ones.

Two on-disk formats are understood:

* ``supercomputer``: the space separated layout of the public BGL, Spirit
  and Thunderbird dumps. Field 1 is the alert label (``-`` for normal),
  field 2 the epoch timestamp in seconds, followed by header fields and the
  free-text message.
* ``jsonl``: one object per line with the keys ``label``, ``ts_ms`` and
  ``content``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import EmptyCorpusError, InvalidSpecError

logger = logging.getLogger(__name__)

FORMATS = ("supercomputer", "jsonl")

# label, epoch seconds, date, node, full time, node, type, component
SUPERCOMPUTER_HEADER_FIELDS = 8


@dataclass(frozen=True, slots=True)
class LogRecord:
    line_id: int
    timestamp_ms: int
    content: str
    ground_truth: Optional[int] = None


@dataclass
class Corpus:
    records: list[LogRecord]
    source: str = field(default="", compare=False)
    skipped: int = field(default=0, compare=False)

    def __len__(self) -> int:
        return len(self.records)

    def timestamps(self) -> np.ndarray:
        return np.fromiter((r.timestamp_ms for r in self.records), dtype=np.int64, count=len(self.records))

    def labels(self) -> np.ndarray:
        """Ground-truth labels as an int8 array; raises if any record is unlabeled."""
        out = np.empty(len(self.records), dtype=np.int8)
        for i, r in enumerate(self.records):
            if r.ground_truth is None:
                raise ValueError(f"record {r.line_id} has no ground-truth label")
            out[i] = r.ground_truth
        return out

    def contents(self) -> list[str]:
        return [r.content for r in self.records]


def _finalize(rows: list[tuple[int, str, Optional[int]]], source: str, skipped: int) -> Corpus:
    if not rows:
        raise EmptyCorpusError(f"no parseable log lines in {source!r} ({skipped} skipped)")
    # sorted() is stable: equal timestamps keep file order
    rows = sorted(rows, key=lambda r: r[0])
    records = [LogRecord(i, ts, content, y) for i, (ts, content, y) in enumerate(rows)]
    return Corpus(records, source=source, skipped=skipped)


def parse_supercomputer_line(line: str) -> Optional[tuple[int, str, int]]:
    """Parse one raw supercomputer log line into ``(ts_ms, content, label)``.

    Returns None for malformed lines.
    """
    parts = line.rstrip("\r\n").split(None, SUPERCOMPUTER_HEADER_FIELDS)
    if len(parts) < 2:
        return None
    label_field, ts_field = parts[0], parts[1]
    if not ts_field.isdigit():
        return None
    if len(parts) > SUPERCOMPUTER_HEADER_FIELDS:
        content = parts[SUPERCOMPUTER_HEADER_FIELDS]
    else:
        content = " ".join(parts[2:])
    return int(ts_field) * 1000, content, 0 if label_field == "-" else 1


def parse_jsonl_line(line: str) -> Optional[tuple[int, str, Optional[int]]]:
    line = line.strip()
    if not line:
        return None
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return None
    if not isinstance(obj, dict):
        return None
    ts, content, label = obj.get("ts_ms"), obj.get("content"), obj.get("label")
    if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0 or not isinstance(content, str):
        return None
    if label is not None and (isinstance(label, bool) or label not in (0, 1)):
        return None
    return ts, content, label


def read_labeled_log(path: str | Path, format: str = "supercomputer") -> Corpus:
    if format not in FORMATS:
        raise ValueError(f"unknown log format {format!r}; expected one of {FORMATS}")
    parse = parse_supercomputer_line if format == "supercomputer" else parse_jsonl_line
    rows: list[tuple[int, str, Optional[int]]] = []
    skipped = 0
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line in fh:
            parsed = parse(line)
            if parsed is None:
                skipped += 1
                continue
            rows.append(parsed)
    if skipped:
        logger.warning("%s: skipped %d malformed lines", path, skipped)
    return _finalize(rows, str(path), skipped)


def write_jsonl(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in corpus.records:
            fh.write(json.dumps({"label": r.ground_truth, "ts_ms": r.timestamp_ms, "content": r.content}))
            fh.write("\n")


def corpus_from_rows(rows: Iterable[tuple[int, str, Optional[int]]], source: str = "memory") -> Corpus:
    """Build a corpus from ``(ts_ms, content, label)`` tuples (sorted stably by time)."""
    return _finalize(list(rows), source, 0)


# --------------------------------------------------------------------------
# synthetic corpora
# --------------------------------------------------------------------------

NORMAL_WORDS = (
    "instruction cache parity corrected session opened closed user root kernel node link ready "
    "generated core files program connection established heartbeat received job started completed "
    "scheduler queue memory allocated buffer flushed daemon reload config sync ntp clock adjusted "
    "packet sent interface up mount nfs ok check passed torus dma write read block service running "
    "idle poll cycle update lease renewed port"
).split()

# "check" and "node" are shared with the normal pool on purpose
ANOMALY_WORDS = (
    "fatal failure panic machine interrupt unrecoverable timeout lost receiver ecc uncorrectable "
    "segfault killed abort exception halt corrupt"
).split()

_FIELD_KINDS = ("{num}", "{hex}", "{small}", "{addr}")


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 7
    n_lines: int = 20_000
    n_normal_templates: int = 30
    n_anomaly_templates: int = 3
    anomaly_rate: float = 0.03
    burst_span_ms: int = 2_000
    mean_rate_per_s: float = 5.0
    # abnormal events per burst (mean) and normal chatter injected per abnormal event
    burst_size: float = 8.0
    burst_chatter: float = 1.0

    def validate(self) -> None:
        if not 0.0 < self.anomaly_rate < 0.5:
            raise InvalidSpecError(
                f"anomaly_rate={self.anomaly_rate} violates the assumption that at least 50% of "
                "the samples are normal (need 0 < anomaly_rate < 0.5)"
            )
        for name in ("n_lines", "n_normal_templates", "n_anomaly_templates", "burst_span_ms"):
            if getattr(self, name) <= 0:
                raise InvalidSpecError(f"{name} must be positive")
        if self.mean_rate_per_s <= 0 or self.burst_size < 1 or self.burst_chatter < 0:
            raise InvalidSpecError("mean_rate_per_s > 0, burst_size >= 1, burst_chatter >= 0 required")
        if self.n_normal_templates > 400 or self.n_anomaly_templates > 100:
            raise InvalidSpecError("too many templates requested for the built-in word pools")


def _make_templates(rng: np.random.Generator, n: int, anomalous: bool) -> list[str]:
    anomaly_only = [w for w in ANOMALY_WORDS if w not in NORMAL_WORDS]
    seen: set[str] = set()
    out: list[str] = []
    while len(out) < n:
        words = list(rng.choice(NORMAL_WORDS, size=int(rng.integers(3, 7)), replace=False))
        if anomalous:
            k = int(rng.integers(1, 3))
            words[:0] = list(rng.choice(anomaly_only, size=k, replace=False))
            rng.shuffle(words)
        for _ in range(int(rng.integers(1, 3))):
            pos = int(rng.integers(0, len(words) + 1))
            words.insert(pos, str(rng.choice(_FIELD_KINDS)))
        # a "component:" prefix so the separator set is exercised
        if rng.random() < 0.5:
            words[0] = words[0] + ":"
        template = " ".join(words)
        if template not in seen:
            seen.add(template)
            out.append(template)
    return out


def _fill(template: str, rng: np.random.Generator) -> str:
    parts = []
    for tok in template.split(" "):
        if tok == "{num}":
            tok = str(int(rng.integers(10, 100_000)))
        elif tok == "{small}":
            tok = str(int(rng.integers(0, 10)))
        elif tok == "{hex}":
            tok = "0x%08x" % int(rng.integers(0, 2**32))
        elif tok == "{addr}":
            tok = "%08x" % int(rng.integers(0, 2**32))
        parts.append(tok)
    return " ".join(parts)


def generate_synthetic(spec: SynthSpec) -> Corpus:
    """Deterministic bursty corpus: abnormal events arrive in bursts surrounded by extra chatter."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    normal_t = _make_templates(rng, spec.n_normal_templates, anomalous=False)
    anomaly_t = _make_templates(rng, spec.n_anomaly_templates, anomalous=True)
    zipf = 1.0 / np.arange(1, len(normal_t) + 1)
    normal_p = zipf / zipf.sum()

    n_abn = max(1, int(round(spec.anomaly_rate * spec.n_lines)))
    n_bursts = max(1, min(n_abn, int(round(n_abn / spec.burst_size))))
    per_burst = 1 + rng.multinomial(n_abn - n_bursts, np.full(n_bursts, 1.0 / n_bursts))
    chatter = np.rint(per_burst * spec.burst_chatter).astype(np.int64)
    n_background = spec.n_lines - n_abn - int(chatter.sum())
    if n_background < 0:
        chatter[:] = 0
        n_background = spec.n_lines - n_abn

    base_ms = 1_117_838_570_000
    duration = max(4 * spec.burst_span_ms, int(math.ceil(n_background / spec.mean_rate_per_s * 1000)))
    half = spec.burst_span_ms // 2

    events: list[tuple[int, int, int]] = []  # (ts offset, template index, label); negative index = anomaly
    bg_ts = np.sort(rng.integers(0, duration, size=n_background))
    bg_tpl = rng.choice(len(normal_t), size=n_background, p=normal_p)
    events.extend((int(t), int(k), 0) for t, k in zip(bg_ts, bg_tpl))

    centers = rng.integers(half, duration - half, size=n_bursts)
    for center, n_a, n_c in zip(centers, per_burst, chatter):
        center = int(center)
        offsets = rng.integers(-half, half + 1, size=int(n_a) - 1)
        kinds = rng.integers(0, len(anomaly_t), size=int(n_a))
        events.append((center, -1 - int(kinds[0]), 1))
        events.extend((center + int(o), -1 - int(k), 1) for o, k in zip(offsets, kinds[1:]))
        c_off = rng.integers(-half, half + 1, size=int(n_c))
        c_tpl = rng.choice(len(normal_t), size=int(n_c), p=normal_p)
        events.extend((center + int(o), int(k), 0) for o, k in zip(c_off, c_tpl))

    rows = []
    for ts, k, y in events:
        template = anomaly_t[-1 - k] if k < 0 else normal_t[k]
        rows.append((base_ms + ts, _fill(template, rng), y))
    return _finalize(rows, f"synthetic:seed={spec.seed}", 0)
